"""Benchmark dataset samplers over a pair of linked KGs.

Three samplers produce (kg1_sample, kg2_sample, alignment) from two source KGs
plus their reference alignment, after first restricting both KGs to the
entities that occur in the alignment:

* ``iterative_degree_sample``  ("ids"): deletes entities round by round until the
  target size, steering each sample's degree distribution toward its source's
  and restarting with a fresh RNG stream if the final Jensen-Shannon check
  fails.
* ``random_alignment_sample``  ("ras"): keeps N alignment pairs chosen uniformly.
* ``pagerank_sample``          ("prs"): keeps N KG1 entities drawn proportionally
  to PageRank, plus their counterparts.

``densify`` implements the preprocessing that repeatedly deletes low-degree
entities until each KG's average degree doubles; run it before
``iterative_degree_sample`` to produce dense dataset variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ComputationError, ValidationError
from .kg import AlignmentSet, KnowledgeGraph, degree_distribution

_NORM_TOL = 1e-6


def js_divergence(q: dict[int, float], p: dict[int, float]) -> float:
    """Jensen-Shannon divergence between two discrete distributions, log base 2.

    Computed as (1/2) * sum_x [ Q(x) log2(Q(x)/M(x)) + P(x) log2(P(x)/M(x)) ]
    with M = (Q+P)/2 over the union of supports; zero-numerator terms
    contribute 0. Base 2 bounds the value by 1 (disjoint supports give 1.0).
    """
    for name, dist in (("q", q), ("p", p)):
        if any(v < 0 for v in dist.values()):
            raise ValidationError(f"distribution {name} has negative mass")
        total = sum(dist.values())
        if abs(total - 1.0) > _NORM_TOL:
            raise ValidationError(f"distribution {name} sums to {total!r}, expected 1")
    acc = 0.0
    for x in set(q) | set(p):
        qx, px = q.get(x, 0.0), p.get(x, 0.0)
        m = 0.5 * (qx + px)
        if qx > 0:
            acc += qx * math.log2(qx / m)
        if px > 0:
            acc += px * math.log2(px / m)
    return 0.5 * acc


def pagerank(
    kg: KnowledgeGraph,
    damping: float = 0.85,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> dict[str, float]:
    """PageRank over the undirected simple projection of the KG.

    Power iteration with uniform teleport; mass of dangling (isolated) nodes is
    spread uniformly. Stops when the L1 change drops below ``tol``; raises
    after ``max_iter`` sweeps without convergence. Scores sum to 1.
    """
    if not kg.entities:
        raise ValidationError("pagerank of an empty graph is undefined")
    ents = kg.entities
    n = len(ents)
    idx = {e: i for i, e in enumerate(ents)}
    adj = kg.undirected_adjacency()
    rows, cols = [], []
    for e in ents:
        i = idx[e]
        for u in adj[e]:
            rows.append(i)
            cols.append(idx[u])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(a.sum(axis=0)).ravel()
    dangling = deg == 0
    inv_deg = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, deg))

    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        spread = a @ (r * inv_deg)
        dangling_mass = r[dangling].sum()
        new_r = (1.0 - damping) / n + damping * (spread + dangling_mass / n)
        if np.abs(new_r - r).sum() < tol:
            r = new_r
            break
        r = new_r
    else:
        raise ComputationError(f"pagerank did not converge within {max_iter} iterations")
    r = r / r.sum()
    return {e: float(r[idx[e]]) for e in ents}


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for ``iterative_degree_sample``.

    ``mu`` is the base number of entities deleted per degree bucket per round:
    small values give the degree-tracking feedback more rounds to act, large
    values finish faster. When None it is derived from the target size (see
    ``default_mu``).
    """

    target_size: int
    mu: float | None = None
    epsilon: float = 0.05
    max_restarts: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.target_size < 1:
            raise ValidationError("target_size must be >= 1")
        if self.mu is not None and self.mu < 1:
            raise ValidationError("mu must be >= 1")
        if not (0 < self.epsilon < 1):
            raise ValidationError("epsilon must lie in (0, 1)")
        if self.max_restarts < 1:
            raise ValidationError("max_restarts must be >= 1")

    @property
    def resolved_mu(self) -> float:
        return default_mu(self.target_size) if self.mu is None else self.mu


def default_mu(target_size: int) -> float:
    """Deletion step size balancing speed against distribution tracking.

    Anchored at 100 for 15K-entity targets and 500 for 100K-entity targets.
    Below 15K it shrinks quadratically with the target size: the deletion
    feedback needs proportionally more correction rounds on small graphs,
    where every entity carries a visible slice of the degree distribution.
    Floor of 1 (one deletion per side per round).
    """
    if target_size <= 15_000:
        return max(1.0, round(100.0 * (target_size / 15_000) ** 2))
    if target_size >= 100_000:
        return 500.0
    frac = (target_size - 15_000) / 85_000
    return round(100.0 + frac * 400.0)


def filter_to_alignment(
    kg1: KnowledgeGraph, kg2: KnowledgeGraph, ref: AlignmentSet
) -> tuple[KnowledgeGraph, KnowledgeGraph, AlignmentSet]:
    """Restrict both KGs to the entities that participate in the reference alignment."""
    ref.require_one_to_one("reference alignment")
    missing = [
        (a, b) for a, b in ref if a not in kg1.entity_set or b not in kg2.entity_set
    ]
    if missing:
        raise ValidationError(f"alignment references unknown entities: {missing[:5]}")
    pairs = AlignmentSet.from_pairs(sorted(ref.pairs))
    return (
        kg1.subgraph(pairs.sources()),
        kg2.subgraph(pairs.targets()),
        pairs,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# How strongly a degree bucket holding more than its source share attracts
# deletions. Deleting an entity also drags its neighbors down the degree
# scale, so the sample distribution drifts left between rounds; the excess
# term must outweigh that drift by a wide margin or hubs erode regardless of
# where the deletions were aimed. 50 was fixed empirically: 20 still leaks
# drift on power-law graphs, 100 buys nothing more.
_EXCESS_GAIN = 50.0


def _apportion(shares: dict[int, float], total: int) -> dict[int, int]:
    """Split ``total`` integer slots across keys proportionally to ``shares``.

    Largest-remainder rule: floor everyone, then hand leftover slots to the
    largest fractional parts (ties to the smaller key, for determinism).
    """
    weight = sum(shares.values())
    if weight <= 0 or total <= 0:
        return {}
    quota = {k: total * v / weight for k, v in shares.items()}
    out = {k: int(math.floor(q)) for k, q in quota.items()}
    leftovers = sorted(quota, key=lambda k: (out[k] - quota[k], k))
    for k in leftovers[: total - sum(out.values())]:
        out[k] += 1
    return {k: c for k, c in out.items() if c > 0}


def _deletion_draws(
    kg: KnowledgeGraph,
    source_dist: dict[int, float],
    mu: float,
    rng: np.random.Generator,
) -> list[str]:
    """One side's deletion plan for a round: at most ``mu`` entities in total.

    Already-isolated entities go first; the source had none, so any isolate is
    pure surplus. The remaining slots are apportioned across degree buckets
    proportionally to P(x) + gain * (P(x) - Q(x)) for buckets above their
    source share (buckets at or below it are left alone), so deletions
    concentrate exactly where the sample outweighs the source. Within a
    bucket, entities are drawn without replacement with probability
    proportional to inverse PageRank, keeping influential entities alive.
    """
    budget = _round_half_up(mu)
    sample_dist = degree_distribution(kg)
    buckets: dict[int, list[str]] = {}
    for e in kg.entities:
        buckets.setdefault(kg.degree_index[e], []).append(e)
    draws: list[str] = []
    if 0 in buckets:
        isolates = sorted(buckets.pop(0))
        if len(isolates) > budget:
            picked = rng.choice(len(isolates), size=budget, replace=False)
            isolates = [isolates[i] for i in sorted(picked)]
        draws.extend(isolates)
        budget -= len(isolates)
    if budget <= 0 or not buckets:
        return draws
    shares = {}
    for x in buckets:
        p = sample_dist.get(x, 0.0)
        q = source_dist.get(x, 0.0)
        shares[x] = p + _EXCESS_GAIN * (p - q) if p > q else 0.0
    if all(v == 0.0 for v in shares.values()):
        # No bucket exceeds its source share; fall back to plain proportions
        # so the round still makes progress toward the target size.
        shares = {x: sample_dist.get(x, 0.0) for x in buckets}
    scores = pagerank(kg)
    for x, count in sorted(_apportion(shares, budget).items()):
        bucket = buckets[x]
        count = min(count, len(bucket))
        weights = np.array([1.0 / scores[e] for e in bucket])
        weights /= weights.sum()
        chosen = rng.choice(len(bucket), size=count, replace=False, p=weights)
        draws.extend(bucket[i] for i in chosen)
    return draws


class _SideState:
    """Live triple-degree bookkeeping for one KG during a deletion round."""

    def __init__(self, kg: KnowledgeGraph):
        self.triples = kg.rel_triples
        self.alive = [True] * len(self.triples)
        self.incidence: dict[str, list[int]] = {e: [] for e in kg.entities}
        for tid, (h, _, t) in enumerate(self.triples):
            self.incidence[h].append(tid)
            if t != h:
                self.incidence[t].append(tid)
        self.degree = dict(kg.degree_index)
        self.gone: set[str] = set()

    def would_isolate(self, entity: str) -> bool:
        """True when removing ``entity`` now would leave some live neighbor with no triples."""
        shared: dict[str, int] = {}
        for tid in self.incidence[entity]:
            if not self.alive[tid]:
                continue
            h, _, t = self.triples[tid]
            other = t if h == entity else h
            if other != entity and other not in self.gone:
                shared[other] = shared.get(other, 0) + 1
        return any(self.degree[u] == c for u, c in shared.items())

    def remove(self, entity: str) -> None:
        self.gone.add(entity)
        for tid in self.incidence[entity]:
            if not self.alive[tid]:
                continue
            self.alive[tid] = False
            h, _, t = self.triples[tid]
            self.degree[h] -= 1
            if t != h:
                self.degree[t] -= 1


def _run_one_extraction(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    pairs: list[tuple[str, str]],
    q1: dict[int, float],
    q2: dict[int, float],
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[KnowledgeGraph, KnowledgeGraph, list[tuple[str, str]], float, float]:
    n_target = cfg.target_size
    mu = cfg.resolved_mu
    live = list(pairs)
    sub1, sub2 = kg1, kg2
    while len(live) > n_target:
        draws1 = _deletion_draws(sub1, q1, mu, rng)
        draws2 = _deletion_draws(sub2, q2, mu, rng)
        state1 = _SideState(sub1)
        state2 = _SideState(sub2)
        pair_of_1 = {a: i for i, (a, _) in enumerate(live)}
        pair_of_2 = {b: i for i, (_, b) in enumerate(live)}
        alive = [True] * len(live)
        budget = len(live) - n_target
        killed = 0

        def kill(i: int) -> None:
            nonlocal killed
            alive[i] = False
            killed += 1
            a, b = live[i]
            state1.remove(a)
            state2.remove(b)

        # Interleave the two sides' draws so that when the budget truncates
        # the final round, both KGs still contribute deletions. A draw whose
        # removal would isolate a live neighbor on either side is skipped;
        # next round's isolate cleanup could repair it, but near the target
        # size there is no budget left for repairs, so not creating isolates
        # beats cleaning them up.
        for k in range(max(len(draws1), len(draws2))):
            for draws, pair_of in ((draws1, pair_of_1), (draws2, pair_of_2)):
                if killed >= budget:
                    break
                if k >= len(draws):
                    continue
                i = pair_of[draws[k]]
                if not alive[i]:
                    continue
                a, b = live[i]
                if state1.would_isolate(a) or state2.would_isolate(b):
                    continue
                kill(i)
            if killed >= budget:
                break
        if killed == 0:
            # Every planned draw was vetoed by the isolate guard. Force the
            # first one through so the extraction cannot stall; the guard
            # resumes next round.
            fallback = draws1[0] if draws1 else draws2[0] if draws2 else None
            if fallback is None:
                kill(0)
            elif fallback in pair_of_1:
                kill(pair_of_1[fallback])
            else:
                kill(pair_of_2[fallback])
        live = [p for p, ok in zip(live, alive) if ok]
        sub1 = kg1.subgraph([a for a, _ in live])
        sub2 = kg2.subgraph([b for _, b in live])
    js1 = js_divergence(q1, degree_distribution(sub1))
    js2 = js_divergence(q2, degree_distribution(sub2))
    return sub1, sub2, live, js1, js2


def iterative_degree_sample(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    ref: AlignmentSet,
    cfg: SamplerConfig,
) -> tuple[KnowledgeGraph, KnowledgeGraph, AlignmentSet]:
    """Degree-distribution-preserving extraction of ``cfg.target_size`` entity pairs.

    Both KGs are first restricted to aligned entities; their degree
    distributions become the targets Q1, Q2. Rounds then delete entities from
    both sides (see ``_deletion_draws``), re-filtering pairs after each round so
    the two samples stay aligned, until exactly N pairs remain. The attempt
    counts only if both final degree distributions stay within ``cfg.epsilon``
    of their sources (Jensen-Shannon, base 2) and neither sample contains an
    isolated entity; otherwise the whole extraction restarts with a fresh RNG
    stream, up to ``cfg.max_restarts`` attempts.
    """
    kg1f, kg2f, pairs = filter_to_alignment(kg1, kg2, ref)
    if len(pairs) <= cfg.target_size:
        raise ValidationError(
            f"need more than {cfg.target_size} aligned pairs, got {len(pairs)}"
        )
    q1 = degree_distribution(kg1f)
    q2 = degree_distribution(kg2f)
    streams = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.max_restarts)
    best = math.inf
    for attempt, stream in enumerate(streams, start=1):
        rng = np.random.default_rng(stream)
        sub1, sub2, live, js1, js2 = _run_one_extraction(
            kg1f, kg2f, list(pairs.pairs), q1, q2, cfg, rng
        )
        best = min(best, max(js1, js2))
        isolates = sum(1 for d in sub1.degree_index.values() if d == 0) + sum(
            1 for d in sub2.degree_index.values() if d == 0
        )
        if js1 <= cfg.epsilon and js2 <= cfg.epsilon and isolates == 0:
            return sub1, sub2, AlignmentSet.from_pairs(sorted(live))
    raise ComputationError(
        f"degree-preserving sampling failed after {cfg.max_restarts} restarts; "
        f"best max-side JS divergence {best:.4f} > epsilon {cfg.epsilon}"
    )


def random_alignment_sample(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    ref: AlignmentSet,
    n: int,
    seed: int = 0,
) -> tuple[KnowledgeGraph, KnowledgeGraph, AlignmentSet]:
    """Keep ``n`` alignment pairs chosen uniformly without replacement."""
    kg1f, kg2f, pairs = filter_to_alignment(kg1, kg2, ref)
    if n < 1 or len(pairs) < n:
        raise ValidationError(f"cannot pick {n} pairs from {len(pairs)}")
    rng = np.random.default_rng(seed)
    chosen_idx = rng.choice(len(pairs), size=n, replace=False)
    chosen = sorted(pairs.pairs[i] for i in chosen_idx)
    sub1 = kg1f.subgraph([a for a, _ in chosen])
    sub2 = kg2f.subgraph([b for _, b in chosen])
    return sub1, sub2, AlignmentSet.from_pairs(chosen)


def pagerank_sample(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    ref: AlignmentSet,
    n: int,
    seed: int = 0,
) -> tuple[KnowledgeGraph, KnowledgeGraph, AlignmentSet]:
    """Keep ``n`` KG1 entities drawn proportionally to PageRank, with counterparts."""
    kg1f, kg2f, pairs = filter_to_alignment(kg1, kg2, ref)
    if n < 1 or len(pairs) < n:
        raise ValidationError(f"cannot pick {n} pairs from {len(pairs)}")
    rng = np.random.default_rng(seed)
    scores = pagerank(kg1f)
    sources = pairs.sources()
    weights = np.array([scores[e] for e in sources])
    weights /= weights.sum()
    chosen_idx = rng.choice(len(sources), size=n, replace=False, p=weights)
    counterpart = pairs.as_dict()
    chosen = sorted((sources[i], counterpart[sources[i]]) for i in chosen_idx)
    sub1 = kg1f.subgraph([a for a, _ in chosen])
    sub2 = kg2f.subgraph([b for _, b in chosen])
    return sub1, sub2, AlignmentSet.from_pairs(chosen)


def densify(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    ref: AlignmentSet,
    seed: int = 0,
    degree_cap: int = 5,
    target_factor: float = 2.0,
) -> tuple[KnowledgeGraph, KnowledgeGraph, AlignmentSet]:
    """Delete uniformly-chosen low-degree entities until both average degrees double.

    One deletion step removes a uniformly chosen entity of degree <=
    ``degree_cap`` from whichever KG is furthest below its target, together
    with its counterpart (the alignment is re-filtered after every deletion).
    Raises when a KG still below target has no low-degree entities left,
    reporting the densification factor actually achieved.
    """
    kg1f, kg2f, pairs = filter_to_alignment(kg1, kg2, ref)
    rng = np.random.default_rng(seed)
    live = list(pairs.pairs)
    sides = []
    for kg, col in ((kg1f, 0), (kg2f, 1)):
        incidence: dict[str, list[int]] = {e: [] for e in kg.entities}
        for tid, (h, _, t) in enumerate(kg.rel_triples):
            incidence[h].append(tid)
            if t != h:
                incidence[t].append(tid)
        sides.append(
            {
                "col": col,
                "triples": kg.rel_triples,
                "alive_triple": [True] * len(kg.rel_triples),
                "incidence": incidence,
                "degree": dict(kg.degree_index),
                "degree_total": sum(kg.degree_index.values()),
            }
        )

    alive = [True] * len(live)
    n_live = len(live)
    if n_live == 0:
        raise ValidationError("empty alignment, nothing to densify")
    start_avg = [s["degree_total"] / n_live for s in sides]
    if min(start_avg) == 0:
        raise ValidationError("cannot densify a KG with average degree 0")

    def ratios():
        return [s["degree_total"] / n_live / start_avg[j] if n_live else 0.0
                for j, s in enumerate(sides)]

    def drop_entity(side, entity):
        for tid in side["incidence"][entity]:
            if not side["alive_triple"][tid]:
                continue
            side["alive_triple"][tid] = False
            h, _, t = side["triples"][tid]
            side["degree"][h] -= 1
            side["degree_total"] -= 1
            if t != h:
                side["degree"][t] -= 1
                side["degree_total"] -= 1

    while True:
        r = ratios()
        lagging = [j for j in range(2) if r[j] < target_factor]
        if not lagging:
            break
        j = min(lagging, key=lambda j: r[j])
        side = sides[j]
        candidates = [
            i for i in range(len(live))
            if alive[i] and side["degree"][live[i][j]] <= degree_cap
        ]
        if not candidates:
            raise ComputationError(
                f"densification target {target_factor}x unreachable: no entities of "
                f"degree <= {degree_cap} left; achieved factor {min(r):.3f}"
            )
        pick = candidates[int(rng.integers(len(candidates)))]
        alive[pick] = False
        n_live -= 1
        for s, e in zip(sides, live[pick]):
            drop_entity(s, e)
        if n_live == 0:
            raise ComputationError(
                "densification deleted every entity; achieved factor 0.000"
            )

    survivors = [p for p, ok in zip(live, alive) if ok]
    sub1 = kg1f.subgraph([a for a, _ in survivors])
    sub2 = kg2f.subgraph([b for _, b in survivors])
    return sub1, sub2, AlignmentSet.from_pairs(sorted(survivors))
