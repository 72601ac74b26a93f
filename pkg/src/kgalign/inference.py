"""From two embedding tables to predicted alignment.

The pipeline is: similarity_matrix builds a full ranking of every target for
every source (optionally CSLS-rescored), then one of three strategies turns
the rankings into pairs: greedy rank-1 (may be many-to-one), source-proposing
stable matching (1-to-1, no blocking pairs), or maximum-weight matching
(exact assignment up to a size bound, greedy global heuristic above it).

Determinism rule used throughout: similarity ties prefer the
lexicographically smallest target identifier. Targets are therefore kept in
ascending identifier order and every sort on similarities is stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .embedding import VectorTable, normalize_rows
from .errors import ValidationError
from .kg import AlignmentSet

METRICS = ("cosine", "euclidean", "manhattan")


@dataclass(frozen=True)
class SimilarityConfig:
    """Similarity metric choice plus optional CSLS neighborhood rescoring.

    csls_k = 0 turns CSLS off. CSLS is defined on cosine only; asking for it
    on a distance metric is an error rather than a silent generalization.
    """

    metric: str = "cosine"
    csls_k: int = 0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if self.csls_k < 0:
            raise ValidationError("csls_k must be >= 0 (0 disables CSLS)")
        if self.csls_k and self.metric != "cosine":
            raise ValidationError("CSLS is defined for the cosine metric only")


class RankingTable:
    """Per-source descending ranking of all targets, ties broken by target id.

    ``sims`` rows follow ``src_ids``; columns follow ``tgt_ids``, which are
    held in ascending order so that a stable sort on negated similarity
    resolves ties toward the smaller identifier.
    """

    def __init__(self, src_ids, tgt_ids, sims):
        self.src_ids = tuple(src_ids)
        tgt_ids = tuple(tgt_ids)
        sims = np.asarray(sims, dtype=float)
        if sims.shape != (len(self.src_ids), len(tgt_ids)):
            raise ValidationError("similarity matrix shape does not match id lists")
        if len(set(self.src_ids)) != len(self.src_ids) or len(set(tgt_ids)) != len(tgt_ids):
            raise ValidationError("duplicate identifiers in ranking table")
        if not tgt_ids:
            raise ValidationError("ranking table needs at least one target")
        order = np.argsort(np.array(tgt_ids))
        self.tgt_ids = tuple(np.array(tgt_ids)[order])
        self.sims = sims[:, order]
        self._row_of = {s: i for i, s in enumerate(self.src_ids)}
        self._col_of = {t: j for j, t in enumerate(self.tgt_ids)}
        self._order = np.argsort(-self.sims, axis=1, kind="stable")

    def __contains__(self, src):
        return src in self._row_of

    def ranked(self, src, top: int | None = None):
        """Targets of one source, best first, as (target, similarity) pairs."""
        i = self._row_of[src]
        cols = self._order[i] if top is None else self._order[i, :top]
        return [(self.tgt_ids[j], float(self.sims[i, j])) for j in cols]

    def best(self, src):
        tgt, sim = self.ranked(src, top=1)[0]
        return tgt, sim

    def rank_of(self, src, tgt) -> int:
        """1-based rank of ``tgt``; ties count as the worst position among equals."""
        if src not in self._row_of:
            raise ValidationError(f"source {src!r} not in ranking table")
        if tgt not in self._col_of:
            raise ValidationError(f"target {tgt!r} not in ranking table")
        row = self.sims[self._row_of[src]]
        s = row[self._col_of[tgt]]
        return int((row > s).sum() + (row == s).sum())

    def similarity(self, src, tgt) -> float:
        return float(self.sims[self._row_of[src], self._col_of[tgt]])


def _base_similarity(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        return normalize_rows(a) @ normalize_rows(b).T
    if metric == "euclidean":
        aa = (a * a).sum(axis=1)
        bb = (b * b).sum(axis=1)
        d2 = np.maximum(aa[:, None] + bb[None, :] - 2.0 * (a @ b.T), 0.0)
        return -np.sqrt(d2)
    return -np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)


def csls_adjust(cos: np.ndarray, k: int) -> np.ndarray:
    """Rescale a cosine matrix by neighborhood density.

    For each source, psi_t is the mean similarity to its k best targets; for
    each target, psi_s is the mean similarity to its k best sources. The
    adjusted score is 2*cos - psi_t(source) - psi_s(target), which penalizes
    hub targets that are close to everyone.
    """
    if k < 1:
        raise ValidationError("CSLS neighborhood size must be >= 1")
    kt = min(k, cos.shape[1])
    ks = min(k, cos.shape[0])
    top_t = -np.sort(-cos, axis=1)[:, :kt]
    psi_t = top_t.mean(axis=1)
    top_s = -np.sort(-cos, axis=0)[:ks, :]
    psi_s = top_s.mean(axis=0)
    return 2.0 * cos - psi_t[:, None] - psi_s[None, :]


def similarity_matrix(src: VectorTable, tgt: VectorTable, cfg: SimilarityConfig) -> RankingTable:
    """Full source-by-target similarity under the configured metric."""
    if src.dim != tgt.dim:
        raise ValidationError(f"dimension mismatch: {src.dim} vs {tgt.dim}")
    if len(src) == 0 or len(tgt) == 0:
        raise ValidationError("similarity needs non-empty source and target tables")
    sims = _base_similarity(src.vectors, tgt.vectors, cfg.metric)
    if cfg.csls_k:
        sims = csls_adjust(sims, cfg.csls_k)
    return RankingTable(src.ids, tgt.ids, sims)


def source_table(space, src_ids) -> VectorTable:
    """Source-side vectors mapped through the cross-space transform when present."""
    vecs = space.entities.take(src_ids)
    if space.transform is not None:
        vecs = vecs @ space.transform.T
    return VectorTable(src_ids, vecs)


def target_table(space, tgt_ids) -> VectorTable:
    return VectorTable(tgt_ids, space.entities.take(tgt_ids))


# ---------------------------------------------------------------------------
# Alignment strategies


def greedy_align(rt: RankingTable) -> AlignmentSet:
    """Rank-1 target per source; several sources may share a target."""
    if not rt.src_ids:
        raise ValidationError("empty ranking table")
    return AlignmentSet.from_pairs((s, rt.best(s)[0]) for s in rt.src_ids)


def stable_match(rt_src: RankingTable, rt_tgt: RankingTable) -> AlignmentSet:
    """Source-proposing deferred acceptance over both directions' preferences.

    The result is 1-to-1 and admits no blocking pair: no source and target
    prefer each other over their assigned partners. Sources left over when
    the sides are unequal stay unmatched.
    """
    if set(rt_src.src_ids) != set(rt_tgt.tgt_ids) or set(rt_src.tgt_ids) != set(rt_tgt.src_ids):
        raise ValidationError("stable matching needs the same entity sets in both directions")
    pref_pos = {
        t: {s: pos for pos, s in enumerate(tgt for tgt, _ in rt_tgt.ranked(t))}
        for t in rt_tgt.src_ids
    }
    next_choice = {s: 0 for s in rt_src.src_ids}
    ranked_lists = {s: [t for t, _ in rt_src.ranked(s)] for s in rt_src.src_ids}
    engaged_to: dict[str, str] = {}
    free = sorted(rt_src.src_ids, reverse=True)
    while free:
        s = free.pop()
        choices = ranked_lists[s]
        while next_choice[s] < len(choices):
            t = choices[next_choice[s]]
            next_choice[s] += 1
            holder = engaged_to.get(t)
            if holder is None:
                engaged_to[t] = s
                break
            if pref_pos[t][s] < pref_pos[t][holder]:
                engaged_to[t] = s
                free.append(holder)
                free.sort(reverse=True)
                break
    return AlignmentSet.from_pairs(sorted((s, t) for t, s in engaged_to.items()))


def mwgm_align(rt: RankingTable, exact_bound: int = 2000) -> AlignmentSet:
    """Maximum-weight bipartite matching on the similarity matrix.

    Solves the assignment problem exactly while the larger side is within
    ``exact_bound``; beyond that, falls back to the global greedy heuristic
    that repeatedly commits the highest-similarity pair with both ends free.
    """
    n, m = rt.sims.shape
    if max(n, m) <= exact_bound:
        rows, cols = linear_sum_assignment(-rt.sims)
        pairs = [(rt.src_ids[i], rt.tgt_ids[j]) for i, j in zip(rows, cols)]
        return AlignmentSet.from_pairs(sorted(pairs))
    flat = rt.sims.ravel()
    order = np.argsort(-flat, kind="stable")
    used_src = np.zeros(n, dtype=bool)
    used_tgt = np.zeros(m, dtype=bool)
    pairs = []
    want = min(n, m)
    for idx in order:
        i, j = divmod(int(idx), m)
        if used_src[i] or used_tgt[j]:
            continue
        used_src[i] = True
        used_tgt[j] = True
        pairs.append((rt.src_ids[i], rt.tgt_ids[j]))
        if len(pairs) == want:
            break
    return AlignmentSet.from_pairs(sorted(pairs))


def matching_weight(rt: RankingTable, alignment: AlignmentSet) -> float:
    """Total similarity of an alignment under this table (diagnostic helper)."""
    return float(sum(rt.similarity(s, t) for s, t in alignment))


def write_predictions(path, rt: RankingTable, alignment: AlignmentSet) -> None:
    """Write (source, target, similarity) lines, tab-separated, sorted by source."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for s, t in sorted(alignment.as_set()):
            fh.write(f"{s}\t{t}\t{rt.similarity(s, t):.6f}\n")
