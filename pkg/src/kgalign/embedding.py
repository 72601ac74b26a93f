"""Scoring functions and encoders with hand-written gradients.

Everything here is a pure function of numpy arrays so the training loop stays
in control of parameter updates and determinism. Gradients are analytic; the
test suite checks every one of them against central finite differences.

Sign conventions: ``transe_energy`` is a distance-like energy (lower is
better). Where a probability-style score is needed, the score is the negated
energy, so logistic losses read log(1+exp(energy)) for positives and
log(1+exp(-energy)) for negatives.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

warning_counters: Counter = Counter()


def _as_vec(v, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-d vector")
    return arr


def _check_same_dim(*vecs):
    dims = {v.shape[-1] for v in vecs}
    if len(dims) != 1:
        raise ValidationError(f"dimension mismatch: {sorted(dims)}")


# ---------------------------------------------------------------------------
# Vector tables and the embedding space


class VectorTable:
    """Dense matrix with a stable identifier-to-row mapping.

    ``aliases`` maps extra identifiers onto canonical ones, so two ids can
    share one parameter row (how seed pairs are merged when training with the
    row-sharing interaction mode).
    """

    def __init__(self, ids, vectors, aliases=None):
        self.ids = tuple(str(i) for i in ids)
        self.vectors = np.asarray(vectors, dtype=float)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValidationError("vector table shape does not match id count")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("vector table ids must be unique")
        self.row_of = {e: i for i, e in enumerate(self.ids)}
        self.aliases = dict(sorted(aliases.items())) if aliases else {}
        for alias, canon in self.aliases.items():
            if alias in self.row_of:
                raise ValidationError(f"alias {alias!r} collides with a canonical id")
            if canon not in self.row_of:
                raise ValidationError(f"alias {alias!r} points at unknown id {canon!r}")
            self.row_of[alias] = self.row_of[canon]

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def vector(self, identifier: str) -> np.ndarray:
        return self.vectors[self.row_of[identifier]]

    def take(self, identifiers) -> np.ndarray:
        return self.vectors[[self.row_of[i] for i in identifiers]]


@dataclass
class EmbeddingSpace:
    """All learned tables of one model, plus the optional cross-space transform."""

    entities: VectorTable
    relations: VectorTable
    attributes: VectorTable | None = None
    chars: VectorTable | None = None
    transform: np.ndarray | None = None
    normalized: bool = False

    @property
    def dim(self) -> int:
        return self.entities.dim

    def entity_table(self) -> dict[str, np.ndarray]:
        return {e: self.entities.vectors[i] for i, e in enumerate(self.entities.ids)}

    def check_normalized(self, tol: float = 1e-6) -> None:
        norms = np.linalg.norm(self.entities.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > tol):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ValidationError(f"entity vectors not unit-norm (worst deviation {worst:.2e})")


_TABLE_NAMES = ("entities", "relations", "attributes", "chars")


def save_space(space: EmbeddingSpace, out_dir: Path) -> None:
    """Serialize: per table an id index (TSV) plus row-major float32 little-endian data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"dim": space.dim, "normalized": space.normalized, "dtype": "<f4", "counts": {}}
    aliases = {}
    for name in _TABLE_NAMES:
        table: VectorTable | None = getattr(space, name)
        if table is None:
            continue
        meta["counts"][name] = len(table)
        if table.aliases:
            aliases[name] = table.aliases
        with open(out_dir / f"{name}_index.tsv", "w", encoding="utf-8", newline="") as fh:
            for row, ident in enumerate(table.ids):
                fh.write(f"{ident}\t{row}\n")
        table.vectors.astype("<f4").tofile(out_dir / f"{name}_vectors.bin")
    if aliases:
        meta["aliases"] = aliases
    if space.transform is not None:
        space.transform.astype("<f4").tofile(out_dir / "transform.bin")
        meta["transform"] = True
    with open(out_dir / "embedding_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_space(in_dir: Path) -> EmbeddingSpace:
    in_dir = Path(in_dir)
    meta_path = in_dir / "embedding_meta.json"
    if not meta_path.is_file():
        raise ValidationError(f"not an embedding directory (missing {meta_path})")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    dim = int(meta["dim"])
    tables = {}
    for name in _TABLE_NAMES:
        if name not in meta["counts"]:
            tables[name] = None
            continue
        ids = [None] * meta["counts"][name]
        with open(in_dir / f"{name}_index.tsv", encoding="utf-8") as fh:
            for line in fh:
                ident, row = line.rstrip("\n").split("\t")
                ids[int(row)] = ident
        data = np.fromfile(in_dir / f"{name}_vectors.bin", dtype="<f4")
        tables[name] = VectorTable(
            ids,
            data.reshape(len(ids), dim).astype(float),
            aliases=meta.get("aliases", {}).get(name),
        )
    transform = None
    if meta.get("transform"):
        transform = np.fromfile(in_dir / "transform.bin", dtype="<f4").reshape(dim, dim).astype(float)
    return EmbeddingSpace(
        entities=tables["entities"],
        relations=tables["relations"],
        attributes=tables["attributes"],
        chars=tables["chars"],
        transform=transform,
        normalized=bool(meta.get("normalized", False)),
    )


# ---------------------------------------------------------------------------
# Initialization


def init_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Uniform in [-6/sqrt(d), 6/sqrt(d)], the usual translational-model init."""
    bound = 6.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(n, dim))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.maximum(norms, 1e-12)


# ---------------------------------------------------------------------------
# Translational energy and losses

_EPS_NORM = 1e-12


def batch_energy(h: np.ndarray, r: np.ndarray, t: np.ndarray, norm: str) -> np.ndarray:
    """Row-wise ||h + r - t|| under L1 or L2."""
    d = h + r - t
    if norm == "L1":
        return np.abs(d).sum(axis=-1)
    if norm == "L2":
        return np.sqrt((d * d).sum(axis=-1))
    raise ValidationError(f"unknown norm {norm!r}, expected 'L1' or 'L2'")


def batch_energy_grad(h, r, t, norm):
    """Gradient of the row-wise energy w.r.t. h (also equals d/dr; d/dt is its negation)."""
    d = h + r - t
    if norm == "L1":
        return np.sign(d)
    if norm == "L2":
        nrm = np.sqrt((d * d).sum(axis=-1, keepdims=True))
        return d / np.maximum(nrm, _EPS_NORM)
    raise ValidationError(f"unknown norm {norm!r}, expected 'L1' or 'L2'")


def transe_energy(h, r, t, norm: str = "L2"):
    """Energy ||h + r - t|| of one triple; 0 means t is the exact translation of h by r."""
    h, r, t = _as_vec(h, "h"), _as_vec(r, "r"), _as_vec(t, "t")
    _check_same_dim(h, r, t)
    return float(batch_energy(h, r, t, norm))


def transe_energy_grad(h, r, t, norm: str = "L2"):
    """Energy plus its gradients w.r.t. (h, r, t)."""
    h, r, t = _as_vec(h, "h"), _as_vec(r, "r"), _as_vec(t, "t")
    _check_same_dim(h, r, t)
    g = batch_energy_grad(h, r, t, norm)
    return float(batch_energy(h, r, t, norm)), (g.copy(), g.copy(), -g)


@dataclass(frozen=True)
class LossConfig:
    """Choice of ranking loss plus the negative-sampling policy.

    kind:
        marginal  sum max(0, margin + E(pos) - E(neg)) over pos/neg pairs
        logistic  sum log(1+exp(E(pos))) + sum log(1+exp(-E(neg)))
        limit     sum [E(pos) - pos_limit]+ + balance * sum [neg_limit - E(neg)]+
    sampling: "uniform" or "truncated"; truncated draws replacements from the
    ceil(truncation * n_entities) nearest neighbors of the replaced entity.
    """

    kind: str = "marginal"
    margin: float = 1.5
    pos_limit: float = 0.2
    neg_limit: float = 2.0
    balance: float = 1.0
    negatives_per_positive: int = 5
    sampling: str = "uniform"
    truncation: float = 0.1
    norm: str = "L2"

    def __post_init__(self):
        if self.kind not in ("marginal", "logistic", "limit"):
            raise ValidationError(f"unknown loss kind {self.kind!r}")
        if self.margin <= 0:
            raise ValidationError("margin must be positive")
        if self.pos_limit >= self.neg_limit:
            raise ValidationError("pos_limit must be below neg_limit")
        if self.negatives_per_positive < 1:
            raise ValidationError("negatives_per_positive must be >= 1")
        if self.sampling not in ("uniform", "truncated"):
            raise ValidationError(f"unknown sampling {self.sampling!r}")
        if not (0 < self.truncation <= 1):
            raise ValidationError("truncation must lie in (0, 1]")


def triple_loss(pos_e, neg_e, cfg: LossConfig):
    """Loss value and d(loss)/d(energy) for positive and negative energy arrays.

    ``neg_e`` holds negatives_per_positive rows per positive, grouped so that
    neg_e[i*k:(i+1)*k] belong to positive i (only the marginal kind pairs them).
    """
    pos_e = np.asarray(pos_e, dtype=float)
    neg_e = np.asarray(neg_e, dtype=float)
    k = cfg.negatives_per_positive
    if neg_e.size != pos_e.size * k:
        raise ValidationError(
            f"expected {pos_e.size * k} negatives for {pos_e.size} positives, got {neg_e.size}"
        )
    if cfg.kind == "marginal":
        rep = np.repeat(pos_e, k)
        slack = cfg.margin + rep - neg_e
        active = slack > 0
        value = float(slack[active].sum())
        g_neg = -active.astype(float)
        g_pos = active.astype(float).reshape(pos_e.size, k).sum(axis=1)
        return value, g_pos, g_neg
    if cfg.kind == "logistic":
        value = float(np.logaddexp(0.0, pos_e).sum() + np.logaddexp(0.0, -neg_e).sum())
        g_pos = 1.0 / (1.0 + np.exp(-pos_e))
        g_neg = -1.0 / (1.0 + np.exp(neg_e))
        return value, g_pos, g_neg
    # limit
    pos_slack = pos_e - cfg.pos_limit
    neg_slack = cfg.neg_limit - neg_e
    value = float(pos_slack[pos_slack > 0].sum() + cfg.balance * neg_slack[neg_slack > 0].sum())
    g_pos = (pos_slack > 0).astype(float)
    g_neg = -cfg.balance * (neg_slack > 0).astype(float)
    return value, g_pos, g_neg


def loss(positives, negatives, cfg: LossConfig, space: EmbeddingSpace):
    """Loss over identifier triples, with gradients per involved identifier.

    Returns (value, grads) where grads maps ("entity", id) and ("relation", id)
    to accumulated gradient vectors. Mostly a convenience wrapper over
    ``triple_loss`` for batch arrays; the optimizer-facing path works on row
    indices instead.
    """
    ent, rel = space.entities, space.relations

    def rows(triples):
        hs = ent.take([h for h, _, _ in triples])
        rs = rel.take([r for _, r, _ in triples])
        ts = ent.take([t for _, _, t in triples])
        return hs, rs, ts

    ph, pr, pt = rows(positives)
    nh, nr, nt = rows(negatives)
    pos_e = batch_energy(ph, pr, pt, cfg.norm)
    neg_e = batch_energy(nh, nr, nt, cfg.norm)
    value, g_pos, g_neg = triple_loss(pos_e, neg_e, cfg)
    grads: dict[tuple[str, str], np.ndarray] = {}

    def add(kind, ident, vec):
        key = (kind, ident)
        if key in grads:
            grads[key] = grads[key] + vec
        else:
            grads[key] = vec.copy()

    for triples, (hs, rs, ts), coeff, e in (
        (positives, (ph, pr, pt), g_pos, pos_e),
        (negatives, (nh, nr, nt), g_neg, neg_e),
    ):
        base = batch_energy_grad(*(hs, rs, ts), cfg.norm) * coeff[:, None]
        for i, (h, r, t) in enumerate(triples):
            add("entity", h, base[i])
            add("relation", r, base[i])
            add("entity", t, -base[i])
    return value, grads


# ---------------------------------------------------------------------------
# Negative sampling


def negative_sample(
    triple,
    kg,
    cfg: LossConfig,
    rng: np.random.Generator,
    space: EmbeddingSpace | None = None,
    nn_index: dict[str, tuple[str, ...]] | None = None,
    counters: Counter | None = None,
    true_triples: set | None = None,
):
    """Corrupt one triple into ``cfg.negatives_per_positive`` negatives.

    A fair coin picks head or tail; the replacement is uniform over entities
    (uniform mode) or over the precomputed nearest-neighbor list of the
    replaced entity (truncated mode). Corruptions that exist as true triples
    are rejected; after 100 attempts the possibly-true corruption is kept and
    the "negative_sample_accepted_true" counter is bumped. Callers corrupting
    many triples should pass ``true_triples`` once instead of letting each
    call rebuild it.
    """
    if counters is None:
        counters = warning_counters
    if len(kg.entities) < 2:
        raise ValidationError("need at least 2 entities to corrupt triples")
    h, r, t = triple
    true_set = set(kg.rel_triples) if true_triples is None else true_triples
    if cfg.sampling == "truncated" and nn_index is None:
        if space is None:
            raise ValidationError("truncated sampling needs an embedding space or nn_index")
        nn_index = nearest_neighbor_index(space, kg.entities, cfg.truncation)
    out = []
    for _ in range(cfg.negatives_per_positive):
        cand = None
        for attempt in range(100):
            corrupt_head = bool(rng.integers(2))
            replaced = h if corrupt_head else t
            if cfg.sampling == "uniform":
                pool = kg.entities
            else:
                pool = nn_index[replaced]
            repl = pool[int(rng.integers(len(pool)))]
            cand = (repl, r, t) if corrupt_head else (h, r, repl)
            if cand not in true_set:
                break
        else:
            counters["negative_sample_accepted_true"] += 1
        out.append(cand)
    return out


def nearest_neighbor_index(
    space: EmbeddingSpace, entities, truncation: float
) -> dict[str, tuple[str, ...]]:
    """Top ceil(truncation * n) nearest neighbors per entity, by euclidean distance."""
    ents = list(entities)
    vecs = space.entities.take(ents)
    n = len(ents)
    k = int(np.ceil(truncation * n))
    sq = (vecs * vecs).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (vecs @ vecs.T)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return {e: tuple(ents[j] for j in order[i, :k]) for i, e in enumerate(ents)}


# ---------------------------------------------------------------------------
# Relation-path composition


def path_compose(r1, r2, op: str = "sum"):
    """Combine two relation vectors along a 2-hop path into one vector."""
    r1, r2 = _as_vec(r1, "r1"), _as_vec(r2, "r2")
    _check_same_dim(r1, r2)
    if op == "sum":
        return r1 + r2
    if op == "product":
        return r1 * r2
    raise ValidationError(f"unknown composition {op!r}, expected 'sum' or 'product'")


# ---------------------------------------------------------------------------
# Graph-convolutional propagation


@dataclass
class GcnLayerConfig:
    weight: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        if self.activation not in ("identity", "tanh", "relu"):
            raise ValidationError(f"unknown activation {self.activation!r}")


def _activate(z, kind):
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z, kind):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "tanh":
        th = np.tanh(z)
        return 1.0 - th * th
    return (z > 0).astype(float)


def gcn_adjacency(kg, entity_order) -> np.ndarray:
    """Symmetrically normalized adjacency with self-loops: D^-1/2 (A+I) D^-1/2.

    A is the undirected simple projection restricted to ``entity_order``.
    Dense; the module targets desk-scale graphs.
    """
    idx = {e: i for i, e in enumerate(entity_order)}
    n = len(idx)
    a = np.eye(n)
    adj = kg.undirected_adjacency()
    for e in entity_order:
        i = idx[e]
        for u in adj[e]:
            j = idx.get(u)
            if j is not None:
                a[i, j] = 1.0
                a[j, i] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def gcn_forward(a_hat: np.ndarray, h0: np.ndarray, layers, return_cache: bool = False):
    """Stack of propagation layers: H_next = act(a_hat @ H @ W)."""
    h0 = np.asarray(h0, dtype=float)
    if h0.shape[0] != a_hat.shape[0]:
        raise ValidationError("feature row count does not match adjacency size")
    h = h0
    cache = []
    for layer in layers:
        if h.shape[1] != layer.weight.shape[0]:
            raise ValidationError(
                f"layer expects {layer.weight.shape[0]} input features, got {h.shape[1]}"
            )
        mixed = a_hat @ h
        z = mixed @ layer.weight
        cache.append((h, mixed, z))
        h = _activate(z, layer.activation)
    if return_cache:
        return h, cache
    return h


def gcn_backward(a_hat: np.ndarray, layers, cache, grad_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. H0 and every layer weight."""
    grad_h = np.asarray(grad_out, dtype=float)
    grad_ws = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        h_in, mixed, z = cache[i]
        gz = grad_h * _activate_grad(z, layers[i].activation)
        grad_ws[i] = mixed.T @ gz
        grad_h = a_hat.T @ (gz @ layers[i].weight.T)
    return grad_h, grad_ws


# ---------------------------------------------------------------------------
# Attribute correlation and literal encoding


def attr_correlation_prob(a1, a2):
    """Probability that two attributes describe the same entities: sigmoid(a1 . a2)."""
    a1, a2 = _as_vec(a1, "a1"), _as_vec(a2, "a2")
    _check_same_dim(a1, a2)
    x = float(a1 @ a2)
    # stable sigmoid
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    ex = np.exp(x)
    return ex / (1.0 + ex)


def attr_correlation_grad(a1, a2):
    """Probability plus gradients of it w.r.t. both attribute vectors."""
    a1, a2 = _as_vec(a1, "a1"), _as_vec(a2, "a2")
    p = attr_correlation_prob(a1, a2)
    coeff = p * (1.0 - p)
    return p, (coeff * a2, coeff * a1)


UNKNOWN_CHAR = "<unk>"


def build_char_table(literals, dim: int, rng: np.random.Generator) -> VectorTable:
    """Character vocabulary from training literals plus one shared unknown vector."""
    chars = sorted({c for lit in literals for c in lit})
    ids = [UNKNOWN_CHAR] + chars
    return VectorTable(ids, init_vectors(rng, len(ids), dim))


def literal_encode(value: str, space: EmbeddingSpace, op: str = "sum", counters: Counter | None = None):
    """Bag-of-characters encoding of a literal: sum or mean of its char vectors.

    Order-insensitive by construction (encode("ab") == encode("ba")). Unseen
    characters use the shared unknown vector; the empty string encodes to the
    zero vector and bumps the "literal_encode_empty" counter.
    """
    if counters is None:
        counters = warning_counters
    if space.chars is None:
        raise ValidationError("embedding space has no character table")
    if op not in ("sum", "mean"):
        raise ValidationError(f"unknown composition {op!r}, expected 'sum' or 'mean'")
    table = space.chars
    if value == "":
        counters["literal_encode_empty"] += 1
        return np.zeros(table.dim)
    unk = table.vector(UNKNOWN_CHAR)
    acc = np.zeros(table.dim)
    for c in value:
        acc += table.vectors[table.row_of[c]] if c in table.row_of else unk
    if op == "mean":
        acc /= len(value)
    return acc
