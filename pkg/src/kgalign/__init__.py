"""Toolkit for benchmarking embedding-based entity alignment between two knowledge graphs.

The package covers the full pipeline: carving benchmark datasets out of a pair
of linked source KGs (degree-preserving iterative sampling plus two baseline
samplers), training translational / path / graph-convolutional embeddings under
several seed-interaction modes, turning embeddings into predicted alignment
(greedy, stable matching, maximum-weight matching, optional CSLS rescoring),
and scoring predictions under a 5-fold protocol with rank and set metrics.
"""

__version__ = "0.1.0"
