"""Joint training over a KG pair: interaction modes, the epoch loop, self-training.

The trainer owns every parameter as a plain numpy array and funnels all
randomness through one seeded generator, so identical configs give
byte-identical embedding tables. Validation Hits@1 is computed internally
with plain cosine and first-best greedy matching; richer inference lives in
the inference module and is applied after training.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .embedding import (
    EmbeddingSpace,
    GcnLayerConfig,
    LossConfig,
    VectorTable,
    batch_energy,
    batch_energy_grad,
    build_char_table,
    gcn_adjacency,
    gcn_backward,
    gcn_forward,
    glorot,
    init_vectors,
    nearest_neighbor_index,
    negative_sample,
    normalize_rows,
    triple_loss,
)
from .errors import ComputationError, ValidationError
from .kg import AlignmentSet, DatasetBundle, KnowledgeGraph

MODELS = ("transe", "path", "gcn")
INTERACTIONS = ("transformation", "calibration", "sharing", "swapping")
OPTIMIZERS = ("adagrad", "sgd")

_ADAGRAD_EPS = 1e-8
_NN_REFRESH_EPOCHS = 10


@dataclass(frozen=True)
class TrainingConfig:
    """Everything the epoch loop needs, in one flat record.

    batch_size is the relation-triple mini-batch size; alignment, path,
    attribute, and literal terms are applied once per epoch as full batches.
    Early stopping watches validation Hits@1 every eval_every epochs and
    halts as soon as the value drops below the previous check.
    """

    model: str = "transe"
    interaction: str = "sharing"
    loss: LossConfig = field(default_factory=LossConfig)
    dim: int = 100
    learning_rate: float = 0.1
    batch_size: int = 5000
    max_epochs: int = 2000
    eval_every: int = 10
    optimizer: str = "adagrad"
    normalize: bool = True
    alignment_weight: float = 1.0
    path_weight: float = 1.0
    attribute_weight: float = 1.0
    use_attributes: bool = False
    use_literals: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}, expected one of {MODELS}")
        if self.interaction not in INTERACTIONS:
            raise ValidationError(
                f"unknown interaction {self.interaction!r}, expected one of {INTERACTIONS}"
            )
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.dim < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValidationError("dim, batch_size and eval_every must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise ValidationError("max_epochs must be >= 0")


@dataclass(frozen=True)
class SelfTrainConfig:
    """Schedule and policy for proposing alignment pairs during training."""

    start_epoch: int = 10
    propose_every: int = 10
    similarity_threshold: float = 0.9
    editing: str = "one-to-one-repair"

    def __post_init__(self):
        if self.start_epoch < 1 or self.propose_every < 1:
            raise ValidationError("start_epoch and propose_every must be positive")
        if not (-1.0 < self.similarity_threshold <= 1.0):
            raise ValidationError("similarity_threshold must lie in (-1, 1]")
        if self.editing not in ("none", "one-to-one-repair"):
            raise ValidationError(f"unknown editing policy {self.editing!r}")


@dataclass
class CheckRecord:
    epoch: int
    loss: float
    val_hits1: float
    augmented_seed: int = 0
    augment_precision: float | None = None


@dataclass
class ProposalRecord:
    epoch: int
    proposed: int
    kept: int
    precision: float
    recall: float
    f1: float


@dataclass
class TrainResult:
    space: EmbeddingSpace
    log: list[CheckRecord]
    best_epoch: int
    stopped_epoch: int
    augmented: AlignmentSet
    proposals: list[ProposalRecord]


def write_training_log(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_hits1", "augmented_seed", "augment_precision"])
        for rec in records:
            prec = "" if rec.augment_precision is None else f"{rec.augment_precision:.6f}"
            writer.writerow([rec.epoch, f"{rec.loss:.6f}", f"{rec.val_hits1:.6f}", rec.augmented_seed, prec])


def read_training_config(path: Path) -> tuple[TrainingConfig, SelfTrainConfig | None]:
    """Parse a JSON config file with one key per TrainingConfig field.

    The "loss" key holds a nested object of LossConfig fields, "self_train"
    an optional nested object of SelfTrainConfig fields. Unknown keys are
    rejected so typos fail loudly instead of silently using a default.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a JSON object")

    def build(cls, data, context):
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError(f"unknown {context} keys: {sorted(unknown)}")
        return cls(**data)

    raw = dict(raw)
    st_raw = raw.pop("self_train", None)
    loss_raw = raw.pop("loss", None)
    kwargs = dict(raw)
    if loss_raw is not None:
        kwargs["loss"] = build(LossConfig, loss_raw, "loss")
    cfg = build(TrainingConfig, kwargs, "training")
    st = build(SelfTrainConfig, st_raw, "self_train") if st_raw is not None else None
    return cfg, st


# ---------------------------------------------------------------------------
# Objective assembly


@dataclass
class Objective:
    """Static description of one training problem after applying the interaction mode.

    Identifiers are canonicalized: with row sharing, each seed target id maps
    onto its source id, so both resolve to one parameter row. ``triples``
    carries a side tag (0 or 1) naming the graph whose entity pool corrupts it.
    """

    canon: dict[str, str]
    ent_ids: tuple[str, ...]
    rel_ids: tuple[str, ...]
    attr_ids: tuple[str, ...]
    side_kgs: tuple[KnowledgeGraph, KnowledgeGraph]
    triples: tuple[tuple[str, str, str, int], ...]
    seed_pairs: tuple[tuple[str, str], ...]
    union_kg: KnowledgeGraph
    literal_values: tuple[str, ...]
    attr_triples: tuple[tuple[str, str, str, int], ...]

    @property
    def aliases(self) -> dict[str, str]:
        return {a: c for a, c in self.canon.items() if a != c}


def _relabel_triples(triples, canon):
    return [(canon.get(h, h), r, canon.get(t, t)) for h, r, t in triples]


def build_objective(bundle: DatasetBundle, cfg: TrainingConfig, fold_index: int = 0) -> Objective:
    """Apply the interaction mode to a dataset and fold, yielding the training problem.

    transformation and calibration keep both entity namespaces and add an
    alignment term over seed pairs (handled by the trainer); sharing merges
    each seed pair into one parameter row before training; swapping augments
    the triple set with copies where seed entities trade places and adds no
    loss term.
    """
    if bundle.folds is None:
        raise ValidationError("dataset has no folds; generate them before training")
    if not 0 <= fold_index < len(bundle.folds):
        raise ValidationError(f"fold index {fold_index} out of range")
    fold = bundle.folds[fold_index]
    seed = sorted(fold.train.as_set())
    if not seed:
        raise ValidationError("empty seed alignment: supervised training needs train links")
    overlap = bundle.kg1.entity_set & bundle.kg2.entity_set
    if overlap:
        raise ValidationError(
            "entity identifiers collide across graphs: " + ", ".join(sorted(overlap)[:5])
        )

    canon = {e: e for e in bundle.kg1.entities}
    canon.update({e: e for e in bundle.kg2.entities})
    if cfg.interaction == "sharing":
        for a, b in seed:
            canon[b] = a

    tr1 = _relabel_triples(bundle.kg1.rel_triples, canon)
    tr2 = _relabel_triples(bundle.kg2.rel_triples, canon)
    if cfg.interaction == "swapping":
        for a, b in seed:
            tr1.extend(
                (b if h == a else h, r, b if t == a else t) for h, r, t in bundle.kg1.rel_triples if a in (h, t)
            )
            tr2.extend(
                (a if h == b else h, r, a if t == b else t) for h, r, t in bundle.kg2.rel_triples if b in (h, t)
            )
    tr1 = list(dict.fromkeys(tr1))
    tr2 = list(dict.fromkeys(tr2))

    side_kgs = (KnowledgeGraph(tr1), KnowledgeGraph(tr2))
    triples = tuple((h, r, t, s) for s, trs in enumerate((tr1, tr2)) for h, r, t in trs)
    ent_ids = tuple(sorted(set(canon.values())))
    rel_ids = tuple(sorted({r for _, r, _, _ in triples}))

    at1 = [(canon.get(e, e), a, v) for e, a, v in bundle.kg1.attr_triples]
    at2 = [(canon.get(e, e), a, v) for e, a, v in bundle.kg2.attr_triples]
    attr_triples = tuple(
        (e, a, v, s) for s, ats in enumerate((at1, at2)) for e, a, v in dict.fromkeys(ats)
    )
    attr_ids = tuple(sorted({a for _, a, _, _ in attr_triples}))
    literal_values = tuple(sorted({v for _, _, v, _ in attr_triples}))

    seed_pairs = tuple((canon[a], canon[b]) for a, b in seed)
    union_kg = KnowledgeGraph(tr1 + tr2, entities=ent_ids)
    return Objective(
        canon=canon,
        ent_ids=ent_ids,
        rel_ids=rel_ids,
        attr_ids=attr_ids,
        side_kgs=side_kgs,
        triples=triples,
        seed_pairs=seed_pairs,
        union_kg=union_kg,
        literal_values=literal_values,
        attr_triples=attr_triples,
    )


# ---------------------------------------------------------------------------
# Parameter state


class _Params:
    """All trainable arrays plus per-array squared-gradient accumulators."""

    def __init__(self, obj: Objective, cfg: TrainingConfig, rng: np.random.Generator):
        d = cfg.dim
        self.ent = init_vectors(rng, len(obj.ent_ids), d)
        self.rel = init_vectors(rng, len(obj.rel_ids), d)
        if cfg.normalize:
            self.ent = normalize_rows(self.ent)
        self.attr = None
        self.char_table = None
        if cfg.use_attributes or cfg.use_literals:
            self.attr = init_vectors(rng, len(obj.attr_ids), d)
        if cfg.use_literals:
            self.char_table = build_char_table(obj.literal_values, d, rng)
        self.transform = np.eye(d) if cfg.interaction == "transformation" else None
        self.gcn_ws = None
        if cfg.model == "gcn":
            self.gcn_ws = [glorot(rng, d, d), glorot(rng, d, d)]
        self._acc = {}

    def arrays(self):
        out = {"ent": self.ent, "rel": self.rel}
        if self.attr is not None:
            out["attr"] = self.attr
        if self.char_table is not None:
            out["char"] = self.char_table.vectors
        if self.transform is not None:
            out["transform"] = self.transform
        if self.gcn_ws is not None:
            out["gcn_w0"] = self.gcn_ws[0]
            out["gcn_w1"] = self.gcn_ws[1]
        return out

    def snapshot(self):
        return {k: v.copy() for k, v in self.arrays().items()}

    def restore(self, snap):
        for k, v in self.arrays().items():
            v[...] = snap[k]

    def step(self, name: str, rows, grad, cfg: TrainingConfig):
        """One optimizer step on param ``name`` restricted to ``rows`` (None = whole array)."""
        target = self.arrays()[name]
        if cfg.optimizer == "sgd":
            update = cfg.learning_rate * grad
        else:
            acc = self._acc.get(name)
            if acc is None:
                acc = self._acc[name] = np.zeros_like(target)
            sl = slice(None) if rows is None else rows
            acc[sl] += grad * grad
            update = cfg.learning_rate * grad / (np.sqrt(acc[sl]) + _ADAGRAD_EPS)
        if rows is None:
            target -= update
        else:
            target[rows] -= update
        if name == "ent" and cfg.normalize:
            sl = slice(None) if rows is None else rows
            target[sl] = normalize_rows(np.atleast_2d(target[sl]))


# ---------------------------------------------------------------------------
# Internal cosine Hits@1 (validation only)


def _greedy_hits1(src_vecs, tgt_vecs, true_cols):
    """Fraction of sources whose best cosine match is the true column.

    Callers pass target columns in ascending identifier order; argmax then
    resolves similarity ties toward the lexicographically smallest target,
    matching the inference module's convention.
    """
    a = normalize_rows(src_vecs)
    b = normalize_rows(tgt_vecs)
    sims = a @ b.T
    best = np.argmax(sims, axis=1)
    return float(np.mean(best == np.asarray(true_cols)))


# ---------------------------------------------------------------------------
# Self-training


def _output_vectors(space: EmbeddingSpace, ids, from_kg1: bool) -> np.ndarray:
    vecs = space.entities.take(ids)
    if from_kg1 and space.transform is not None:
        vecs = vecs @ space.transform.T
    return vecs


def self_train_augment(
    space: EmbeddingSpace,
    bundle: DatasetBundle,
    cfg: SelfTrainConfig,
    fold_index: int = 0,
    prior: AlignmentSet | None = None,
    epoch: int = 0,
):
    """Propose alignment pairs among entities not covered by the training seed.

    A pair is proposed when the two entities are mutual nearest neighbors by
    cosine and their similarity reaches the threshold. Under one-to-one-repair
    editing, a new proposal that shares an endpoint with a previously
    augmented pair keeps whichever has the higher current similarity; original
    seed pairs are never evicted (their endpoints are excluded up front).
    Returns the new augmented set plus a record scoring it against the
    withheld fold links.
    """
    if bundle.folds is None:
        raise ValidationError("dataset has no folds")
    fold = bundle.folds[fold_index]
    prior = prior if prior is not None else AlignmentSet.from_pairs(())
    seed_src = {a for a, _ in fold.train}
    seed_tgt = {b for _, b in fold.train}
    known = set(space.entities.row_of)
    free1 = sorted(e for e in bundle.kg1.entities if e not in seed_src and e in known)
    free2 = sorted(e for e in bundle.kg2.entities if e not in seed_tgt and e in known)
    truth = fold.valid.as_set() | fold.test.as_set()

    def record(kept_pairs, proposed):
        inter = len(kept_pairs & truth)
        prec = inter / len(kept_pairs) if kept_pairs else 0.0
        rec = inter / len(truth) if truth else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return ProposalRecord(epoch, proposed, len(kept_pairs), prec, rec, f1)

    if not free1 or not free2:
        return prior, record(prior.as_set(), 0)

    a = normalize_rows(_output_vectors(space, free1, True))
    b = normalize_rows(_output_vectors(space, free2, False))
    sims = a @ b.T
    best12 = np.argmax(sims, axis=1)
    best21 = np.argmax(sims, axis=0)
    proposals = {}
    for i, j in enumerate(best12):
        if best21[j] == i and sims[i, j] >= cfg.similarity_threshold:
            proposals[(free1[i], free2[j])] = float(sims[i, j])

    if cfg.editing == "none":
        kept = set(prior.as_set()) | set(proposals)
        return AlignmentSet.from_pairs(sorted(kept)), record(kept, len(proposals))

    sim1 = {e: i for i, e in enumerate(free1)}
    sim2 = {e: i for i, e in enumerate(free2)}

    def current_sim(pair):
        if pair in proposals:
            return proposals[pair]
        i, j = sim1.get(pair[0]), sim2.get(pair[1])
        return float(sims[i, j]) if i is not None and j is not None else -np.inf

    kept: dict[str, tuple[str, str]] = {}
    by_tgt: dict[str, tuple[str, str]] = {}
    ranked = sorted(
        set(prior.as_set()) | set(proposals),
        key=lambda p: (-current_sim(p), p),
    )
    for pair in ranked:
        src, tgt = pair
        if src in kept or tgt in by_tgt:
            continue
        kept[src] = pair
        by_tgt[tgt] = pair
    final = set(kept.values())
    return AlignmentSet.from_pairs(sorted(final)), record(final, len(proposals))


# ---------------------------------------------------------------------------
# The training loop


class _Trainer:
    def __init__(self, bundle, cfg, obj: Objective, rng):
        self.bundle = bundle
        self.cfg = cfg
        self.obj = obj
        self.rng = rng
        self.params = _Params(obj, cfg, rng)
        self.ent_row = {e: i for i, e in enumerate(obj.ent_ids)}
        for alias, c in obj.aliases.items():
            self.ent_row[alias] = self.ent_row[c]
        self.rel_row = {r: i for i, r in enumerate(obj.rel_ids)}
        self.attr_row = {a: i for i, a in enumerate(obj.attr_ids)}
        self.true_sets = tuple(set(kg.rel_triples) for kg in obj.side_kgs)
        self.nn_indexes = [None, None]
        self.a_hat = None
        self.gcn_cache = None
        self.z = None
        if cfg.model == "gcn":
            self.a_hat = gcn_adjacency(obj.union_kg, obj.ent_ids)
        if cfg.model == "path":
            self.path_instances = self._enumerate_paths()
        self.counters = Counter()
        self.augmented = AlignmentSet.from_pairs(())

    # -- static structure ---------------------------------------------------

    def _enumerate_paths(self):
        """Two-hop paths closed by a direct triple: rows (r1, r2, r3)."""
        by_head: dict[str, list[tuple[str, str]]] = {}
        direct: dict[tuple[str, str], list[str]] = {}
        for h, r, t, _ in self.obj.triples:
            by_head.setdefault(h, []).append((r, t))
            direct.setdefault((h, t), []).append(r)
        rows = []
        for h, first in sorted(by_head.items()):
            for r1, m in first:
                for r2, t in by_head.get(m, ()):
                    for r3 in direct.get((h, t), ()):
                        rows.append((self.rel_row[r1], self.rel_row[r2], self.rel_row[r3]))
        return np.array(sorted(set(rows)), dtype=int).reshape(-1, 3)

    # -- building blocks ----------------------------------------------------

    def _snapshot_space(self) -> EmbeddingSpace:
        out = self.z if self.cfg.model == "gcn" else self.params.ent
        return EmbeddingSpace(
            entities=VectorTable(self.obj.ent_ids, out, aliases=self.obj.aliases),
            relations=VectorTable(self.obj.rel_ids, self.params.rel),
            transform=self.params.transform,
        )

    def _refresh_nn(self):
        space = EmbeddingSpace(
            entities=VectorTable(self.obj.ent_ids, self.params.ent, aliases=self.obj.aliases),
            relations=VectorTable(self.obj.rel_ids, self.params.rel),
        )
        for s, kg in enumerate(self.obj.side_kgs):
            self.nn_indexes[s] = nearest_neighbor_index(space, kg.entities, self.cfg.loss.truncation)

    def _triple_batches(self):
        perm = self.rng.permutation(len(self.obj.triples))
        for lo in range(0, len(perm), self.cfg.batch_size):
            yield [self.obj.triples[i] for i in perm[lo : lo + self.cfg.batch_size]]

    def _corrupt(self, batch):
        cfg = self.cfg
        negs = []
        for h, r, t, s in batch:
            out = negative_sample(
                (h, r, t),
                self.obj.side_kgs[s],
                cfg.loss,
                self.rng,
                nn_index=self.nn_indexes[s],
                counters=self.counters,
                true_triples=self.true_sets[s],
            )
            negs.extend(out)
        return negs

    def _rows(self, triples):
        h = np.array([self.ent_row[x[0]] for x in triples], dtype=int)
        r = np.array([self.rel_row[x[1]] for x in triples], dtype=int)
        t = np.array([self.ent_row[x[2]] for x in triples], dtype=int)
        return h, r, t

    # -- loss terms ----------------------------------------------------------

    def _transe_batch(self, batch) -> float:
        p = self.params
        cfg = self.cfg
        negs = self._corrupt(batch)
        ph, pr, pt = self._rows(batch)
        nh, nr, nt = self._rows(negs)
        pos_e = batch_energy(p.ent[ph], p.rel[pr], p.ent[pt], cfg.loss.norm)
        neg_e = batch_energy(p.ent[nh], p.rel[nr], p.ent[nt], cfg.loss.norm)
        value, g_pos, g_neg = triple_loss(pos_e, neg_e, cfg.loss)
        ent_g = np.zeros_like(p.ent)
        rel_g = np.zeros_like(p.rel)
        for (hs, rs, ts), coeff in (((ph, pr, pt), g_pos), ((nh, nr, nt), g_neg)):
            base = batch_energy_grad(p.ent[hs], p.rel[rs], p.ent[ts], cfg.loss.norm)
            base = base * coeff[:, None]
            np.add.at(ent_g, hs, base)
            np.add.at(rel_g, rs, base)
            np.add.at(ent_g, ts, -base)
        ent_rows = np.unique(np.concatenate([ph, pt, nh, nt]))
        rel_rows = np.unique(np.concatenate([pr, nr]))
        if ent_rows.size:
            self.params.step("ent", ent_rows, ent_g[ent_rows], cfg)
        if rel_rows.size:
            self.params.step("rel", rel_rows, rel_g[rel_rows], cfg)
        return value

    def _alignment_pairs(self):
        """Pairs entering the per-epoch alignment term, with the term style per pair.

        Seed pairs use the interaction mode's own term (transformation or
        calibration); modes without a term contribute no seed pairs.
        Self-training proposals always get a term: the mode's own one when it
        exists, otherwise the plain distance penalty, since merged rows and
        swapped triples are fixed at build time and cannot absorb new pairs.
        """
        pairs = []
        if self.cfg.interaction in ("transformation", "calibration"):
            pairs.extend(self.obj.seed_pairs)
        canon = self.obj.canon
        pairs.extend((canon.get(a, a), canon.get(b, b)) for a, b in self.augmented)
        return [(self.ent_row[a], self.ent_row[b]) for a, b in pairs if self.ent_row[a] != self.ent_row[b]]

    def _alignment_term(self) -> float:
        pairs = self._alignment_pairs()
        if not pairs:
            return 0.0
        p = self.params
        cfg = self.cfg
        w = cfg.alignment_weight
        ii = np.array([i for i, _ in pairs], dtype=int)
        jj = np.array([j for _, j in pairs], dtype=int)
        e1 = p.ent[ii]
        e2 = p.ent[jj]
        ent_g = np.zeros_like(p.ent)
        if cfg.interaction == "transformation":
            z = e1 @ p.transform.T
            d = z - e2
            value = w * float((d * d).sum())
            np.add.at(ent_g, ii, 2.0 * w * (d @ p.transform))
            np.add.at(ent_g, jj, -2.0 * w * d)
            g_m = 2.0 * w * (d.T @ e1)
            self.params.step("transform", None, g_m, cfg)
        else:
            d = e1 - e2
            nrm = np.sqrt((d * d).sum(axis=1))
            value = w * float(nrm.sum())
            unit = d / np.maximum(nrm, 1e-12)[:, None]
            np.add.at(ent_g, ii, w * unit)
            np.add.at(ent_g, jj, -w * unit)
        rows = np.unique(np.concatenate([ii, jj]))
        self.params.step("ent", rows, ent_g[rows], cfg)
        return value

    def _path_term(self) -> float:
        inst = self.path_instances
        if inst.size == 0:
            return 0.0
        p = self.params
        cfg = self.cfg
        r1, r2, r3 = inst[:, 0], inst[:, 1], inst[:, 2]
        composed = p.rel[r1] + p.rel[r2]
        d = composed - p.rel[r3]
        nrm = np.sqrt((d * d).sum(axis=1))
        value = cfg.path_weight * float(nrm.sum())
        unit = cfg.path_weight * d / np.maximum(nrm, 1e-12)[:, None]
        rel_g = np.zeros_like(p.rel)
        np.add.at(rel_g, r1, unit)
        np.add.at(rel_g, r2, unit)
        np.add.at(rel_g, r3, -unit)
        rows = np.unique(inst.ravel())
        self.params.step("rel", rows, rel_g[rows], cfg)
        return value

    def _attribute_term(self) -> float:
        """Log-likelihood of co-occurring attribute pairs, one negative per positive."""
        pos = self._attr_pairs
        if not pos:
            return 0.0
        p = self.params
        cfg = self.cfg
        w = cfg.attribute_weight
        ii = np.array([i for i, _, _ in pos], dtype=int)
        jj = np.array([j for _, j, _ in pos], dtype=int)
        cnt = np.array([c for _, _, c in pos], dtype=float)
        kk = self.rng.integers(len(self.obj.attr_ids), size=len(pos))
        s_pos = (p.attr[ii] * p.attr[jj]).sum(axis=1)
        s_neg = (p.attr[ii] * p.attr[kk]).sum(axis=1)
        sig_pos = 1.0 / (1.0 + np.exp(-s_pos))
        sig_neg = 1.0 / (1.0 + np.exp(-s_neg))
        value = w * float(-(cnt * np.log(np.maximum(sig_pos, 1e-12))).sum()
                          - np.log(np.maximum(1.0 - sig_neg, 1e-12)).sum())
        attr_g = np.zeros_like(p.attr)
        c_pos = -w * cnt * (1.0 - sig_pos)
        np.add.at(attr_g, ii, c_pos[:, None] * p.attr[jj])
        np.add.at(attr_g, jj, c_pos[:, None] * p.attr[ii])
        c_neg = w * sig_neg
        np.add.at(attr_g, ii, c_neg[:, None] * p.attr[kk])
        np.add.at(attr_g, kk, c_neg[:, None] * p.attr[ii])
        rows = np.unique(np.concatenate([ii, jj, kk]))
        self.params.step("attr", rows, attr_g[rows], cfg)
        return value

    def _literal_term(self) -> float:
        """Translational loss on attribute triples with literals encoded from characters."""
        triples = self.obj.attr_triples
        if not triples:
            return 0.0
        p = self.params
        cfg = self.cfg
        table = p.char_table
        lit_rows = []
        for e, a, v, _ in triples:
            rows = [table.row_of.get(c, 0) for c in v]
            lit_rows.append(rows)
        ei = np.array([self.ent_row[e] for e, _, _, _ in triples], dtype=int)
        ai = np.array([self.attr_row[a] for _, a, _, _ in triples], dtype=int)
        enc = np.zeros((len(triples), cfg.dim))
        for n, rows in enumerate(lit_rows):
            if rows:
                enc[n] = table.vectors[rows].sum(axis=0) / len(rows)
            else:
                self.counters["literal_encode_empty"] += 1
        d = p.ent[ei] + p.attr[ai] - enc
        nrm = np.sqrt((d * d).sum(axis=1))
        value = float(nrm.sum())
        unit = d / np.maximum(nrm, 1e-12)[:, None]
        ent_g = np.zeros_like(p.ent)
        attr_g = np.zeros_like(p.attr)
        char_g = np.zeros_like(table.vectors)
        np.add.at(ent_g, ei, unit)
        np.add.at(attr_g, ai, unit)
        for n, rows in enumerate(lit_rows):
            if rows:
                np.add.at(char_g, rows, -unit[n] / len(rows))
        er = np.unique(ei)
        ar = np.unique(ai)
        self.params.step("ent", er, ent_g[er], cfg)
        self.params.step("attr", ar, attr_g[ar], cfg)
        cr = np.unique([r for rows in lit_rows for r in rows]).astype(int)
        if cr.size:
            self.params.step("char", cr, char_g[cr], cfg)
        return value

    def _gcn_epoch(self) -> float:
        """Margin ranking on seed pairs over propagated features."""
        p = self.params
        cfg = self.cfg
        layers = [GcnLayerConfig(p.gcn_ws[0], "tanh"), GcnLayerConfig(p.gcn_ws[1], "identity")]
        z, cache = gcn_forward(self.a_hat, p.ent, layers, return_cache=True)
        self.z = z
        pairs = [(self.ent_row[a], self.ent_row[b]) for a, b in self.obj.seed_pairs]
        canon = self.obj.canon
        pairs += [
            (self.ent_row[canon.get(a, a)], self.ent_row[canon.get(b, b)]) for a, b in self.augmented
        ]
        if not pairs:
            return 0.0
        k = cfg.loss.negatives_per_positive
        pool1 = np.array(sorted({self.ent_row[e] for e in self.obj.side_kgs[0].entities}), dtype=int)
        pool2 = np.array(sorted({self.ent_row[e] for e in self.obj.side_kgs[1].entities}), dtype=int)
        ii = np.array([i for i, _ in pairs], dtype=int)
        jj = np.array([j for _, j in pairs], dtype=int)
        ni, nj = [], []
        for i, j in pairs:
            for _ in range(k):
                if self.rng.integers(2):
                    ni.append(int(pool1[self.rng.integers(pool1.size)]))
                    nj.append(j)
                else:
                    ni.append(i)
                    nj.append(int(pool2[self.rng.integers(pool2.size)]))
        ni = np.array(ni, dtype=int)
        nj = np.array(nj, dtype=int)
        zero_r = np.zeros((ii.size, z.shape[1]))
        pos_e = batch_energy(z[ii], zero_r, z[jj], "L2")
        neg_e = batch_energy(z[ni], np.zeros((ni.size, z.shape[1])), z[nj], "L2")
        value, g_pos, g_neg = triple_loss(pos_e, neg_e, cfg.loss)
        z_g = np.zeros_like(z)
        base_p = batch_energy_grad(z[ii], zero_r, z[jj], "L2") * g_pos[:, None]
        np.add.at(z_g, ii, base_p)
        np.add.at(z_g, jj, -base_p)
        base_n = batch_energy_grad(z[ni], np.zeros((ni.size, z.shape[1])), z[nj], "L2") * g_neg[:, None]
        np.add.at(z_g, ni, base_n)
        np.add.at(z_g, nj, -base_n)
        grad_h0, grad_ws = gcn_backward(self.a_hat, layers, cache, z_g)
        self.params.step("ent", None, grad_h0, cfg)
        self.params.step("gcn_w0", None, grad_ws[0], cfg)
        self.params.step("gcn_w1", None, grad_ws[1], cfg)
        layers = [GcnLayerConfig(p.gcn_ws[0], "tanh"), GcnLayerConfig(p.gcn_ws[1], "identity")]
        self.z = gcn_forward(self.a_hat, p.ent, layers)
        return value

    # -- validation -----------------------------------------------------------

    def _validation_hits(self, fold) -> float:
        canon = self.obj.canon
        val = sorted(fold.valid.as_set())
        cands = sorted({b for _, b in fold.valid} | {b for _, b in fold.test})
        col_of = {b: c for c, b in enumerate(cands)}
        out = self.z if self.cfg.model == "gcn" else self.params.ent
        row = self.ent_row
        src = np.array([row[canon.get(a, a)] for a, _ in val], dtype=int)
        tgt = np.array([row[canon.get(b, b)] for b in cands], dtype=int)
        src_vecs = out[src]
        if self.params.transform is not None:
            src_vecs = src_vecs @ self.params.transform.T
        return _greedy_hits1(src_vecs, out[tgt], [col_of[b] for _, b in val])


def train(
    bundle: DatasetBundle,
    cfg: TrainingConfig,
    self_train: SelfTrainConfig | None = None,
    fold_index: int = 0,
) -> TrainResult:
    """Run the full optimization loop and return the best checkpoint.

    Checks validation Hits@1 every eval_every epochs; the first drop relative
    to the previous check stops training, and the checkpoint with the highest
    validation score is returned. A non-finite loss aborts with the epoch
    number. With max_epochs=0 the initialization is returned untouched.
    """
    obj = build_objective(bundle, cfg, fold_index)
    fold = bundle.folds[fold_index]
    rng = np.random.default_rng(cfg.rng_seed)
    tr = _Trainer(bundle, cfg, obj, rng)
    if cfg.model == "gcn":
        layers = [
            GcnLayerConfig(tr.params.gcn_ws[0], "tanh"),
            GcnLayerConfig(tr.params.gcn_ws[1], "identity"),
        ]
        tr.z = gcn_forward(tr.a_hat, tr.params.ent, layers)
    if cfg.use_attributes:
        pair_counts: Counter = Counter()
        by_ent: dict[str, list[str]] = {}
        for e, a, _, _ in obj.attr_triples:
            by_ent.setdefault(e, []).append(a)
        for e, attrs in sorted(by_ent.items()):
            uniq = sorted(set(attrs))
            for x in range(len(uniq)):
                for y in range(x + 1, len(uniq)):
                    pair_counts[(tr.attr_row[uniq[x]], tr.attr_row[uniq[y]])] += 1
        tr._attr_pairs = [(i, j, c) for (i, j), c in sorted(pair_counts.items())]
    else:
        tr._attr_pairs = []

    log: list[CheckRecord] = []
    proposals: list[ProposalRecord] = []
    best_snap = tr.params.snapshot()
    best_hits = -1.0
    best_epoch = 0
    prev_hits = None
    last_precision = None
    stopped = 0

    for epoch in range(1, cfg.max_epochs + 1):
        stopped = epoch
        if cfg.loss.sampling == "truncated" and cfg.model != "gcn":
            if (epoch - 1) % _NN_REFRESH_EPOCHS == 0:
                tr._refresh_nn()
        epoch_loss = 0.0
        if cfg.model == "gcn":
            epoch_loss += tr._gcn_epoch()
        else:
            for batch in tr._triple_batches():
                epoch_loss += tr._transe_batch(batch)
            if cfg.model == "path":
                epoch_loss += tr._path_term()
        if cfg.use_attributes:
            epoch_loss += tr._attribute_term()
        if cfg.use_literals:
            epoch_loss += tr._literal_term()
        epoch_loss += tr._alignment_term()
        if not np.isfinite(epoch_loss):
            raise ComputationError(f"training diverged: non-finite loss at epoch {epoch}")

        if (
            self_train is not None
            and epoch >= self_train.start_epoch
            and (epoch - self_train.start_epoch) % self_train.propose_every == 0
        ):
            tr.augmented, rec = self_train_augment(
                tr._snapshot_space(), bundle, self_train, fold_index, tr.augmented, epoch
            )
            proposals.append(rec)
            last_precision = rec.precision

        if epoch % cfg.eval_every == 0:
            hits = tr._validation_hits(fold)
            log.append(CheckRecord(epoch, epoch_loss, hits, len(tr.augmented), last_precision))
            if hits > best_hits:
                best_hits = hits
                best_snap = tr.params.snapshot()
                best_epoch = epoch
            if prev_hits is not None and hits < prev_hits:
                break
            prev_hits = hits

    tr.params.restore(best_snap)
    if cfg.model == "gcn":
        layers = [
            GcnLayerConfig(tr.params.gcn_ws[0], "tanh"),
            GcnLayerConfig(tr.params.gcn_ws[1], "identity"),
        ]
        tr.z = gcn_forward(tr.a_hat, tr.params.ent, layers)

    out_vecs = tr.z if cfg.model == "gcn" else tr.params.ent
    space = EmbeddingSpace(
        entities=VectorTable(obj.ent_ids, out_vecs.copy(), aliases=obj.aliases),
        relations=VectorTable(obj.rel_ids, tr.params.rel.copy()),
        attributes=(
            VectorTable(obj.attr_ids, tr.params.attr.copy()) if tr.params.attr is not None else None
        ),
        chars=(
            VectorTable(tr.params.char_table.ids, tr.params.char_table.vectors.copy())
            if tr.params.char_table is not None
            else None
        ),
        transform=None if tr.params.transform is None else tr.params.transform.copy(),
        normalized=cfg.normalize and cfg.model != "gcn",
    )
    return TrainResult(
        space=space,
        log=log,
        best_epoch=best_epoch if best_epoch else 0,
        stopped_epoch=stopped,
        augmented=tr.augmented,
        proposals=proposals,
    )
