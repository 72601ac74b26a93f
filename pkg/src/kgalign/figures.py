"""Figure rendering for the CLI report paths.

Kept separate from the computation modules on purpose: evaluation and
sampling emit plain data structures and CSV, and only the command-line
reports turn them into PNGs. Everything renders through the Agg backend so
headless runs work.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def degree_cdf_figure(distributions: dict[str, dict[int, float]], path):
    """Cumulative degree curves, one line per labeled distribution."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, dist in distributions.items():
        degrees = sorted(dist)
        cdf = []
        acc = 0.0
        for x in degrees:
            acc += dist[x]
            cdf.append(acc)
        ax.step(degrees, cdf, where="post", label=label)
    ax.set_xlabel("degree")
    ax.set_ylabel("cumulative proportion of entities")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def training_curve_figure(records, path):
    """Loss and validation Hits@1 against the epoch axis."""
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(epochs, [r.loss for r in records], color="tab:blue", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.val_hits1 for r in records], color="tab:red", label="validation Hits@1")
    ax2.set_ylabel("validation Hits@1", color="tab:red")
    ax2.set_ylim(0, 1.05)
    return _save(fig, path)


def fold_metrics_figure(report, path, m: int = 1):
    """Per-fold Hits@m bars with the cross-fold mean drawn through them."""
    folds = [r.fold_index for r in report.per_fold]
    vals = [r.hits[m] for r in report.per_fold]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar([str(f) for f in folds], vals, color="tab:blue", alpha=0.8)
    ax.axhline(report.hits_mean[m], color="tab:red", linestyle="--", label=f"mean {report.hits_mean[m]:.3f}")
    ax.set_xlabel("fold")
    ax.set_ylabel(f"Hits@{m}")
    ax.set_ylim(0, 1.05)
    ax.legend()
    return _save(fig, path)


def geometry_figure(geo, path):
    """Neighbor-similarity profile beside the rank-1 hub histogram."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ranks = sorted(geo.topk_profile)
    ax1.plot(ranks, [geo.topk_profile[r] for r in ranks], marker="o")
    ax1.set_xlabel("neighbor rank")
    ax1.set_ylabel("mean cosine similarity")
    ax1.set_xticks(ranks)
    ax1.grid(alpha=0.3)
    buckets = ["0", "1", "2+"]
    ax2.bar(buckets, [geo.hub_histogram[b] for b in buckets], color="tab:orange", alpha=0.85)
    ax2.set_xlabel("times chosen as rank-1 neighbor")
    ax2.set_ylabel("share of target entities")
    ax2.set_ylim(0, 1.05)
    return _save(fig, path)
