"""Ranking metrics, set metrics, embedding-geometry diagnostics, and 5-fold runs.

Ranks are 1-based and pessimistic: when several targets tie on similarity,
the truth target is charged the worst position among the tied group, so ties
can never inflate Hits. All aggregate statistics across folds use the
population standard deviation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .embedding import normalize_rows
from .errors import ComputationError, ValidationError
from .inference import RankingTable, SimilarityConfig, greedy_align, mwgm_align, similarity_matrix, source_table, stable_match, target_table
from .kg import AlignmentSet, DatasetBundle

DEFAULT_HITS_AT = (1, 5, 10)


@dataclass
class MetricsReport:
    hits: dict[int, float]
    mr: float
    mrr: float
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    fold_index: int | None = None

    def validate(self) -> None:
        ms = sorted(self.hits)
        for a, b in zip(ms, ms[1:]):
            if self.hits[a] > self.hits[b] + 1e-12:
                raise ValidationError("Hits@m must be non-decreasing in m")
        if not (0.0 <= self.mrr <= 1.0) or self.mr < 1.0:
            raise ValidationError("MRR must lie in [0,1] and MR be >= 1")
        if self.hits.get(1) is not None and self.mrr + 1e-12 < self.hits[1]:
            raise ValidationError("MRR can never fall below Hits@1")


@dataclass
class CrossValidationReport:
    per_fold: tuple[MetricsReport, ...]
    hits_mean: dict[int, float] = field(default_factory=dict)
    hits_std: dict[int, float] = field(default_factory=dict)
    mr_mean: float = 0.0
    mr_std: float = 0.0
    mrr_mean: float = 0.0
    mrr_std: float = 0.0


@dataclass
class GeometryReport:
    """How the matched embedding spaces behave geometrically.

    topk_profile holds the mean cosine similarity between each source and its
    rank-r nearest target, r = 1..k. hub_histogram holds the proportions of
    target entities that are the rank-1 neighbor of zero, one, or two-plus
    sources; "2+" mass is where hubness lives.
    """

    topk_profile: dict[int, float]
    hub_histogram: dict[str, float]


def rank_metrics(
    rt: RankingTable, truth: AlignmentSet, ms=DEFAULT_HITS_AT, fold_index: int | None = None
) -> MetricsReport:
    """Hits@m, mean rank, and mean reciprocal rank of the truth targets."""
    missing = [s for s, _ in truth if s not in rt]
    if missing:
        raise ValidationError("truth sources missing from ranking table: " + ", ".join(sorted(missing)[:5]))
    if len(truth) == 0:
        raise ValidationError("empty truth alignment")
    ranks = np.array([rt.rank_of(s, t) for s, t in sorted(truth.as_set())], dtype=float)
    hits = {int(m): float((ranks <= m).mean()) for m in ms}
    report = MetricsReport(
        hits=hits,
        mr=float(ranks.mean()),
        mrr=float((1.0 / ranks).mean()),
        fold_index=fold_index,
    )
    report.validate()
    return report


def set_metrics(pred: AlignmentSet, truth: AlignmentSet) -> tuple[float, float, float]:
    """Precision, recall, F1 over exact pair matches; empty prediction gives zeros."""
    p_set = pred.as_set()
    t_set = truth.as_set()
    if not p_set or not t_set:
        return 0.0, 0.0, 0.0
    inter = len(p_set & t_set)
    precision = inter / len(p_set)
    recall = inter / len(t_set)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def geometry_report(src_vecs, tgt_vecs, k: int = 5) -> GeometryReport:
    """Top-k cosine profile and rank-1 hub histogram of a matched vector pair."""
    a = normalize_rows(np.asarray(src_vecs, dtype=float))
    b = normalize_rows(np.asarray(tgt_vecs, dtype=float))
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValidationError("geometry report needs two matrices of equal dimension")
    sims = a @ b.T
    kk = min(k, sims.shape[1])
    top = -np.sort(-sims, axis=1)[:, :kk]
    profile = {r + 1: float(top[:, r].mean()) for r in range(kk)}
    best = np.argmax(sims, axis=1)
    counts = np.bincount(best, minlength=sims.shape[1])
    n_tgt = sims.shape[1]
    hist = {
        "0": float((counts == 0).sum() / n_tgt),
        "1": float((counts == 1).sum() / n_tgt),
        "2+": float((counts >= 2).sum() / n_tgt),
    }
    return GeometryReport(topk_profile=profile, hub_histogram=hist)


def align_with_strategy(space, src_ids, tgt_ids, sim_cfg: SimilarityConfig, strategy: str, exact_bound: int = 2000):
    """Build rankings for the given entity scope and run one alignment strategy.

    Returns (ranking table, predicted alignment). The stable strategy also
    ranks the reverse direction, reusing the same metric, with the transform
    applied to the source side only.
    """
    src = source_table(space, sorted(src_ids))
    tgt = target_table(space, sorted(tgt_ids))
    rt = similarity_matrix(src, tgt, sim_cfg)
    if strategy == "greedy":
        return rt, greedy_align(rt)
    if strategy == "stable":
        rt_rev = similarity_matrix(tgt, src, sim_cfg)
        return rt, stable_match(rt, rt_rev)
    if strategy == "mwgm":
        return rt, mwgm_align(rt, exact_bound)
    raise ValidationError(f"unknown strategy {strategy!r}, expected greedy, stable, or mwgm")


def cross_validate(
    bundle: DatasetBundle,
    training_cfg,
    sim_cfg: SimilarityConfig,
    strategy: str = "greedy",
    ms=DEFAULT_HITS_AT,
    self_train=None,
) -> CrossValidationReport:
    """Train, align, and score every fold, then aggregate mean and deviation."""
    from .training import train

    if bundle.folds is None or len(bundle.folds) == 0:
        raise ValidationError("dataset has no folds")
    reports = []
    for k, fold in enumerate(bundle.folds):
        try:
            result = train(bundle, training_cfg, self_train=self_train, fold_index=k)
            src_ids = sorted(a for a, _ in fold.test)
            tgt_ids = sorted(b for _, b in fold.test)
            rt, pred = align_with_strategy(result.space, src_ids, tgt_ids, sim_cfg, strategy)
            report = rank_metrics(rt, fold.test, ms=ms, fold_index=k)
            report.precision, report.recall, report.f1 = set_metrics(pred, fold.test)
            reports.append(report)
        except (ValidationError, ComputationError) as exc:
            raise ComputationError(f"fold {k} failed: {exc}") from exc
    agg = CrossValidationReport(per_fold=tuple(reports))
    for m in ms:
        vals = np.array([r.hits[m] for r in reports])
        agg.hits_mean[m] = float(vals.mean())
        agg.hits_std[m] = float(vals.std())
    mrs = np.array([r.mr for r in reports])
    mrrs = np.array([r.mrr for r in reports])
    agg.mr_mean, agg.mr_std = float(mrs.mean()), float(mrs.std())
    agg.mrr_mean, agg.mrr_std = float(mrrs.mean()), float(mrrs.std())
    return agg


def write_results_csv(path, report: CrossValidationReport) -> None:
    """One row per fold plus mean and std rows; hits columns first."""
    ms = sorted(report.per_fold[0].hits) if report.per_fold else []
    header = ["fold"] + [f"hits@{m}" for m in ms] + ["mr", "mrr", "precision", "recall", "f1"]

    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in report.per_fold:
            writer.writerow(
                [r.fold_index]
                + [fmt(r.hits[m]) for m in ms]
                + [fmt(r.mr), fmt(r.mrr), fmt(r.precision), fmt(r.recall), fmt(r.f1)]
            )
        writer.writerow(
            ["mean"] + [fmt(report.hits_mean[m]) for m in ms] + [fmt(report.mr_mean), fmt(report.mrr_mean), "", "", ""]
        )
        writer.writerow(
            ["std"] + [fmt(report.hits_std[m]) for m in ms] + [fmt(report.mr_std), fmt(report.mrr_std), "", "", ""]
        )


def write_geometry_csv(path, geo: GeometryReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "key", "value"])
        for r in sorted(geo.topk_profile):
            writer.writerow(["topk_mean_cosine", r, f"{geo.topk_profile[r]:.6f}"])
        for bucket in ("0", "1", "2+"):
            writer.writerow(["rank1_hub_share", bucket, f"{geo.hub_histogram[bucket]:.6f}"])
