"""Command-line interface.

One executable, six subcommands covering the pipeline stages:

    kgalign sample    carve an aligned benchmark out of two linked source KGs
    kgalign stats     describe a dataset directory
    kgalign train     learn an embedding space on one fold
    kgalign align     predict an alignment from a stored embedding space
    kgalign eval      score predictions, or run the full 5-fold protocol
    kgalign diagnose  profile embedding-space geometry (hubness)

Exit codes: 0 on success, 1 for anything wrong with the invocation or the
inputs (including usage errors), 2 for runtime failures.

Every command that produces files also drops a ``run_manifest.json`` beside
them recording the invocation, the resolved configuration, the seeds, and
SHA-256 digests of inputs and outputs.

Numerical imports happen inside the command handlers, after the thread cap
from ``--threads`` is exported, so BLAS pools are sized before they exist.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .errors import ComputationError, ValidationError

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

OUT_ENV_VAR = "KGALIGN_OUT"


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this toolkit reserves 2
    for runtime failures, so usage problems are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run control")
    g.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
    g.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="force single-threaded, byte-reproducible runs (default on); "
        "--no-deterministic lets --threads take effect",
    )
    g.add_argument(
        "--threads",
        type=int,
        default=1,
        help="thread cap exported to BLAS/OpenMP before numerical imports "
        "(default 1, ignored unless --no-deterministic)",
    )
    g.add_argument(
        "--out",
        type=Path,
        default=None,
        help=f"output directory (default: ${OUT_ENV_VAR} if set, else a "
        "per-command directory under the working directory)",
    )
    g.add_argument(
        "--no-figures",
        action="store_true",
        help="skip PNG rendering; delimited outputs are always written",
    )
    return p


def _resolve_out(args, default_name: str, explicit_only: bool = False) -> Path | None:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env)
    if explicit_only:
        return None
    return Path(default_name)


def _seeds(args) -> dict:
    return {
        "seed": args.seed,
        "deterministic": bool(args.deterministic),
        "threads": 1 if args.deterministic else max(1, args.threads),
    }


def _emit_manifest(out_dir: Path, command: str, argv, config: dict, args, inputs, started: float) -> None:
    from .manifest import MANIFEST_NAME, RunManifest, digest_paths, tree_digests, write_manifest

    outputs = tree_digests(out_dir)
    outputs.pop(MANIFEST_NAME, None)
    man = RunManifest(
        command=command,
        argv=list(argv),
        config=config,
        seeds=_seeds(args),
        inputs=digest_paths(inputs),
        outputs=outputs,
        duration_seconds=round(time.monotonic() - started, 3),
    )
    write_manifest(out_dir, man)


def _fold_of(bundle, fold_arg: int):
    if bundle.folds is None or not bundle.folds:
        raise ValidationError("dataset has no folds/ directory; run `kgalign sample` first")
    if not (1 <= fold_arg <= len(bundle.folds)):
        raise ValidationError(f"--fold must lie in 1..{len(bundle.folds)}, got {fold_arg}")
    return bundle.folds[fold_arg - 1]


# ---------------------------------------------------------------------------
# sample


def _cmd_sample(args, argv) -> int:
    from . import kg as kgm
    from . import sampling

    started = time.monotonic()
    out_dir = _resolve_out(args, "sample_out")
    inputs = [p for p in (args.kg1, args.kg2, args.links, args.attr1, args.attr2) if p]

    rel1 = kgm.read_triples(args.kg1)
    rel2 = kgm.read_triples(args.kg2)
    attr1 = kgm.read_triples(args.attr1, "attr") if args.attr1 else []
    attr2 = kgm.read_triples(args.attr2, "attr") if args.attr2 else []
    links = kgm.read_links(args.links)
    ents1 = {h for h, _, t in rel1} | {t for _, _, t in rel1} | {e for e, _, _ in attr1} | set(links.sources())
    ents2 = {h for h, _, t in rel2} | {t for _, _, t in rel2} | {e for e, _, _ in attr2} | set(links.targets())
    kg1 = kgm.KnowledgeGraph(rel1, attr1, entities=ents1)
    kg2 = kgm.KnowledgeGraph(rel2, attr2, entities=ents2)

    if args.densify:
        kg1, kg2, links = sampling.densify(kg1, kg2, links, seed=args.seed)
        print(f"densified sources: {len(links)} pairs remain, "
              f"avg degrees {kg1.avg_degree:.2f} / {kg2.avg_degree:.2f}")

    resolved_mu = None
    if args.method == "ids":
        cfg = sampling.SamplerConfig(
            target_size=args.size,
            mu=args.mu,
            epsilon=args.epsilon,
            max_restarts=args.max_restarts,
            rng_seed=args.seed,
        )
        resolved_mu = cfg.resolved_mu
        sub1, sub2, pairs = sampling.iterative_degree_sample(kg1, kg2, links, cfg)
    elif args.method == "ras":
        sub1, sub2, pairs = sampling.random_alignment_sample(kg1, kg2, links, args.size, seed=args.seed)
    else:
        sub1, sub2, pairs = sampling.pagerank_sample(kg1, kg2, links, args.size, seed=args.seed)

    folds = None
    if not args.no_folds:
        if len(pairs) >= 10:
            folds = kgm.make_folds(pairs, seed=args.seed)
        else:
            print("note: fewer than 10 pairs, skipping fold generation")
    bundle = kgm.DatasetBundle(kg1=sub1, kg2=sub2, links=pairs, folds=folds)
    kgm.write_dataset(bundle, out_dir)

    src1f, src2f, _ = sampling.filter_to_alignment(kg1, kg2, links)
    q1 = kgm.degree_distribution(src1f)
    q2 = kgm.degree_distribution(src2f)
    for label, sub, q in (("KG1", sub1, q1), ("KG2", sub2, q2)):
        st = kgm.graph_stats(sub, q)
        print(
            f"{label}: {st.n_entities} entities, {st.n_rel_triples} triples, "
            f"avg degree {st.avg_degree:.2f}, isolated {100 * st.isolated_pct:.1f}%, "
            f"JS vs source {st.js_vs_source:.4f}"
        )

    if not args.no_figures:
        from .figures import degree_cdf_figure

        degree_cdf_figure(
            {
                "source KG1": q1,
                "sample KG1": kgm.degree_distribution(sub1),
                "source KG2": q2,
                "sample KG2": kgm.degree_distribution(sub2),
            },
            out_dir / "degree_cdf.png",
        )

    config = {
        "method": args.method,
        "size": args.size,
        "epsilon": args.epsilon,
        "mu": resolved_mu,
        "max_restarts": args.max_restarts,
        "densify": bool(args.densify),
        "folds_written": folds is not None,
    }
    _emit_manifest(out_dir, "sample", argv, config, args, inputs, started)
    print(f"dataset written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# stats


def _cmd_stats(args, argv) -> int:
    import csv

    from . import kg as kgm
    from . import sampling

    started = time.monotonic()
    out_dir = _resolve_out(args, "stats_out")
    bundle = kgm.load_dataset(args.data)

    source_given = [p for p in (args.source_kg1, args.source_kg2, args.source_links) if p]
    if source_given and len(source_given) != 3:
        raise ValidationError("--source-kg1, --source-kg2, and --source-links must be given together")
    q1 = q2 = None
    if source_given:
        rel1 = kgm.read_triples(args.source_kg1)
        rel2 = kgm.read_triples(args.source_kg2)
        slinks = kgm.read_links(args.source_links)
        src1 = kgm.KnowledgeGraph(rel1, entities={h for h, _, t in rel1} | {t for _, _, t in rel1} | set(slinks.sources()))
        src2 = kgm.KnowledgeGraph(rel2, entities={h for h, _, t in rel2} | {t for _, _, t in rel2} | set(slinks.targets()))
        src1f, src2f, _ = sampling.filter_to_alignment(src1, src2, slinks)
        q1 = kgm.degree_distribution(src1f)
        q2 = kgm.degree_distribution(src2f)

    rows = []
    for side, kg, q in (("1", bundle.kg1, q1), ("2", bundle.kg2, q2)):
        st = kgm.graph_stats(kg, q)
        rows.append((side, st))
        line = (
            f"KG{side}: {st.n_entities} entities, {st.n_rel_triples} triples, "
            f"avg degree {st.avg_degree:.2f}, isolated {100 * st.isolated_pct:.1f}%, "
            f"clustering {st.clustering_coef:.4f}"
        )
        if st.js_vs_source is not None:
            line += f", JS vs source {st.js_vs_source:.4f}"
        print(line)
    counts = kgm.dataset_counts(bundle)
    print("records: " + ", ".join(f"{k}={v}" for k, v in counts.items()))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "stats.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["side", "metric", "value"])
        for side, st in rows:
            for field in dataclasses.fields(st):
                value = getattr(st, field.name)
                if value is None:
                    continue
                writer.writerow([side, field.name, value])

    if not args.no_figures:
        from .figures import degree_cdf_figure

        curves = {
            "KG1": kgm.degree_distribution(bundle.kg1),
            "KG2": kgm.degree_distribution(bundle.kg2),
        }
        if q1 is not None:
            curves["source KG1"] = q1
            curves["source KG2"] = q2
        degree_cdf_figure(curves, out_dir / "degree_cdf.png")

    inputs = [args.data] if Path(args.data).is_file() else []
    inputs += source_given
    config = {"data": str(args.data), "source_given": bool(source_given)}
    _emit_manifest(out_dir, "stats", argv, config, args, inputs, started)
    return 0


# ---------------------------------------------------------------------------
# train


def _cmd_train(args, argv) -> int:
    from . import kg as kgm
    from .embedding import save_space
    from .training import TrainingConfig, read_training_config, train, write_training_log

    started = time.monotonic()
    out_dir = _resolve_out(args, "train_out")
    bundle = kgm.load_dataset(args.data)
    _fold_of(bundle, args.fold)

    if args.config:
        cfg, self_cfg = read_training_config(args.config)
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if "rng_seed" not in raw:
            cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    else:
        cfg, self_cfg = TrainingConfig(rng_seed=args.seed), None

    result = train(bundle, cfg, self_train=self_cfg, fold_index=args.fold - 1)

    save_space(result.space, out_dir / "embedding")
    write_training_log(out_dir / "training_log.csv", result.log)
    if not args.no_figures and result.log:
        from .figures import training_curve_figure

        training_curve_figure(result.log, out_dir / "training_curve.png")

    best = next((r for r in result.log if r.epoch == result.best_epoch), None)
    best_hits = best.val_hits1 if best else float("nan")
    print(
        f"stopped at epoch {result.stopped_epoch}, best checkpoint epoch "
        f"{result.best_epoch} (validation Hits@1 {best_hits:.4f})"
    )
    if result.augmented is not None:
        print(f"augmented seed alignment: {len(result.augmented)} pairs")

    config = dataclasses.asdict(cfg)
    config["fold"] = args.fold
    if self_cfg is not None:
        config["self_train"] = dataclasses.asdict(self_cfg)
    inputs = [args.config] if args.config else []
    _emit_manifest(out_dir, "train", argv, config, args, inputs, started)
    print(f"embedding space written to {out_dir / 'embedding'}")
    return 0


# ---------------------------------------------------------------------------
# align


def _cmd_align(args, argv) -> int:
    import csv

    from . import kg as kgm
    from .embedding import load_space
    from .evaluation import align_with_strategy, rank_metrics, set_metrics
    from .inference import SimilarityConfig, matching_weight, write_predictions

    started = time.monotonic()
    out_dir = _resolve_out(args, "align_out")
    bundle = kgm.load_dataset(args.data)
    fold = _fold_of(bundle, args.fold)
    space = load_space(args.embeddings)

    src_ids = sorted(fold.test.sources())
    if args.scope == "test":
        tgt_ids = sorted(fold.test.targets())
    else:
        tgt_ids = list(bundle.kg2.entities)
    sim_cfg = SimilarityConfig(metric=args.metric, csls_k=args.csls)
    rt, pred = align_with_strategy(space, src_ids, tgt_ids, sim_cfg, args.strategy, args.exact_bound)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_predictions(out_dir / "predictions.tsv", rt, pred)

    report = rank_metrics(rt, fold.test)
    precision, recall, f1 = set_metrics(pred, fold.test)
    with open(out_dir / "align_metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for m in sorted(report.hits):
            writer.writerow([f"hits@{m}", f"{report.hits[m]:.6f}"])
        writer.writerow(["mr", f"{report.mr:.6f}"])
        writer.writerow(["mrr", f"{report.mrr:.6f}"])
        writer.writerow(["precision", f"{precision:.6f}"])
        writer.writerow(["recall", f"{recall:.6f}"])
        writer.writerow(["f1", f"{f1:.6f}"])

    hits_txt = ", ".join(f"Hits@{m} {report.hits[m]:.4f}" for m in sorted(report.hits))
    print(f"{hits_txt}, MR {report.mr:.2f}, MRR {report.mrr:.4f} "
          f"({args.scope} candidate pool, {len(tgt_ids)} targets)")
    print(f"predicted {len(pred)} pairs, matching weight {matching_weight(rt, pred):.4f}, f1 {f1:.4f}")

    config = {
        "metric": args.metric,
        "csls": args.csls,
        "strategy": args.strategy,
        "exact_bound": args.exact_bound,
        "scope": args.scope,
        "fold": args.fold,
    }
    _emit_manifest(out_dir, "align", argv, config, args, [], started)
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args, argv) -> int:
    started = time.monotonic()
    if args.pred or args.truth:
        if not (args.pred and args.truth):
            raise ValidationError("--pred and --truth must be given together")
        if args.data or args.config:
            raise ValidationError("--pred/--truth and --data/--config are mutually exclusive")
        return _eval_pred_truth(args, argv, started)
    if not args.data:
        raise ValidationError("eval needs either --pred/--truth or --data")
    return _eval_protocol(args, argv, started)


def _read_prediction_links(path: Path):
    """Prediction files may carry a trailing similarity column; ignore it."""
    from .kg import AlignmentSet

    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip("\r").split("\t")
            if len(parts) < 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected at least 2 tab-separated fields, got {len(parts)}"
                )
            pairs.append((parts[0], parts[1]))
    return AlignmentSet.from_pairs(pairs)


def _eval_pred_truth(args, argv, started: float) -> int:
    import csv

    from . import kg as kgm
    from .evaluation import set_metrics

    pred = _read_prediction_links(args.pred)
    truth = kgm.read_links(args.truth)
    precision, recall, f1 = set_metrics(pred, truth)
    print(f"precision = {round(precision, 6)}")
    print(f"recall = {round(recall, 6)}")
    print(f"f1 = {round(f1, 6)}")

    out_dir = _resolve_out(args, "", explicit_only=True)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "eval_results.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for name, value in (("precision", precision), ("recall", recall), ("f1", f1)):
                writer.writerow([name, f"{value:.6f}"])
        config = {"pred": str(args.pred), "truth": str(args.truth)}
        _emit_manifest(out_dir, "eval", argv, config, args, [args.pred, args.truth], started)
    return 0


def _eval_protocol(args, argv, started: float) -> int:
    from . import kg as kgm
    from .evaluation import cross_validate, write_results_csv
    from .inference import SimilarityConfig
    from .training import TrainingConfig, read_training_config

    out_dir = _resolve_out(args, "eval_out")
    bundle = kgm.load_dataset(args.data)
    if args.config:
        cfg, self_cfg = read_training_config(args.config)
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if "rng_seed" not in raw:
            cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    else:
        cfg, self_cfg = TrainingConfig(rng_seed=args.seed), None
    sim_cfg = SimilarityConfig(metric=args.metric, csls_k=args.csls)

    report = cross_validate(bundle, cfg, sim_cfg, strategy=args.strategy, self_train=self_cfg)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(out_dir / "results.csv", report)
    if not args.no_figures:
        from .figures import fold_metrics_figure

        fold_metrics_figure(report, out_dir / "fold_metrics.png")

    for m in sorted(report.hits_mean):
        print(f"Hits@{m} = {report.hits_mean[m]:.4f} +- {report.hits_std[m]:.4f}")
    print(f"MR = {report.mr_mean:.2f} +- {report.mr_std:.2f}")
    print(f"MRR = {report.mrr_mean:.4f} +- {report.mrr_std:.4f}")

    config = dataclasses.asdict(cfg)
    config.update({"metric": args.metric, "csls": args.csls, "strategy": args.strategy})
    if self_cfg is not None:
        config["self_train"] = dataclasses.asdict(self_cfg)
    inputs = [args.config] if args.config else []
    _emit_manifest(out_dir, "eval", argv, config, args, inputs, started)
    return 0


# ---------------------------------------------------------------------------
# diagnose


def _cmd_diagnose(args, argv) -> int:
    from . import kg as kgm
    from .embedding import load_space
    from .evaluation import geometry_report, write_geometry_csv
    from .inference import source_table, target_table

    started = time.monotonic()
    out_dir = _resolve_out(args, "diagnose_out")
    bundle = kgm.load_dataset(args.data)
    fold = _fold_of(bundle, args.fold)
    space = load_space(args.embeddings)

    src_ids = sorted(fold.test.sources())
    if args.scope == "test":
        tgt_ids = sorted(fold.test.targets())
    else:
        tgt_ids = list(bundle.kg2.entities)
    src = source_table(space, src_ids)
    tgt = target_table(space, tgt_ids)
    geo = geometry_report(src.vectors, tgt.vectors, k=args.k)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_geometry_csv(out_dir / "geometry.csv", geo)
    if not args.no_figures:
        from .figures import geometry_figure

        geometry_figure(geo, out_dir / "geometry.png")

    profile = ", ".join(f"@{r} {geo.topk_profile[r]:.4f}" for r in sorted(geo.topk_profile))
    print(f"mean cosine by neighbor rank: {profile}")
    print(
        "rank-1 hub shares: "
        + ", ".join(f"{b}: {geo.hub_histogram[b]:.3f}" for b in ("0", "1", "2+"))
    )
    if geo.hub_histogram["2+"] > geo.hub_histogram["1"]:
        print("warning: hubs absorb more rank-1 votes than one-to-one matches; consider --csls at alignment time")

    config = {"fold": args.fold, "scope": args.scope, "k": args.k}
    _emit_manifest(out_dir, "diagnose", argv, config, args, [], started)
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    common = _common_options()
    parser = _Parser(
        prog="kgalign",
        description="Benchmarking toolkit for embedding-based entity alignment between knowledge graphs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    ps = sub.add_parser(
        "sample",
        parents=[common],
        help="carve an aligned benchmark sample out of two linked source KGs",
        description="Extract a benchmark dataset (two subgraphs, reference links, 5 folds) "
        "from a pair of source KGs joined by a reference alignment.",
    )
    ps.add_argument("--kg1", type=Path, required=True, help="relation triples of source KG1 (TSV: head, relation, tail)")
    ps.add_argument("--kg2", type=Path, required=True, help="relation triples of source KG2")
    ps.add_argument("--links", type=Path, required=True, help="reference alignment (TSV: kg1 entity, kg2 entity)")
    ps.add_argument("--attr1", type=Path, help="attribute triples of source KG1 (TSV: entity, attribute, literal)")
    ps.add_argument("--attr2", type=Path, help="attribute triples of source KG2")
    ps.add_argument("--method", choices=("ids", "ras", "prs"), default="ids",
                    help="ids: degree-preserving iterative sampling; ras: uniform over links; "
                    "prs: PageRank-proportional (default ids)")
    ps.add_argument("--size", type=int, required=True, help="number of aligned entity pairs to keep")
    ps.add_argument("--epsilon", type=float, default=0.05,
                    help="acceptance threshold on the Jensen-Shannon divergence between sample "
                    "and source degree distributions, per side (ids only, default 0.05)")
    ps.add_argument("--mu", type=float, default=None,
                    help="deletion step size per round (ids only, default derived from --size)")
    ps.add_argument("--max-restarts", type=int, default=5,
                    help="extraction attempts before giving up (ids only, default 5)")
    ps.add_argument("--densify", action="store_true",
                    help="pre-delete low-degree source entities until both average degrees double")
    ps.add_argument("--no-folds", action="store_true", help="skip writing the 5-fold split")
    ps.set_defaults(handler=_cmd_sample)

    pt = sub.add_parser(
        "stats",
        parents=[common],
        help="describe a dataset directory",
        description="Graph statistics per side: sizes, average degree, isolated share, "
        "clustering coefficient, and optionally the degree-distribution divergence "
        "against the source KGs.",
    )
    pt.add_argument("--data", type=Path, required=True, help="dataset directory")
    pt.add_argument("--source-kg1", type=Path, help="relation triples of the original source KG1")
    pt.add_argument("--source-kg2", type=Path, help="relation triples of the original source KG2")
    pt.add_argument("--source-links", type=Path, help="reference alignment of the original sources")
    pt.set_defaults(handler=_cmd_stats)

    pr = sub.add_parser(
        "train",
        parents=[common],
        help="learn an embedding space on one fold",
        description="Train the configured model on one fold's seed alignment and store the "
        "embedding space, the training log, and the training curve.",
    )
    pr.add_argument("--data", type=Path, required=True, help="dataset directory")
    pr.add_argument("--config", type=Path, help="JSON training configuration (defaults used when omitted)")
    pr.add_argument("--fold", type=int, default=1, help="1-based fold number (default 1)")
    pr.set_defaults(handler=_cmd_train)

    pa = sub.add_parser(
        "align",
        parents=[common],
        help="predict an alignment from a stored embedding space",
        description="Rank candidate counterparts for the fold's test entities and extract "
        "a predicted alignment; writes predictions.tsv and align_metrics.csv.",
    )
    pa.add_argument("--embeddings", type=Path, required=True, help="embedding directory written by `kgalign train`")
    pa.add_argument("--data", type=Path, required=True, help="dataset directory")
    pa.add_argument("--fold", type=int, default=1, help="1-based fold number (default 1)")
    pa.add_argument("--metric", choices=("cosine", "euclidean", "manhattan"), default="cosine",
                    help="similarity metric (default cosine)")
    pa.add_argument("--csls", type=int, default=0, metavar="K",
                    help="CSLS neighborhood size; 0 disables the correction (cosine only, default 0)")
    pa.add_argument("--strategy", choices=("greedy", "stable", "mwgm"), default="greedy",
                    help="alignment extraction strategy (default greedy)")
    pa.add_argument("--exact-bound", type=int, default=2000, metavar="N",
                    help="largest side for which mwgm solves the exact assignment problem "
                    "before falling back to the greedy approximation (default 2000)")
    pa.add_argument("--scope", choices=("test", "all"), default="test",
                    help="candidate pool for ranking metrics: the fold's test entities or "
                    "all KG2 entities (default test)")
    pa.set_defaults(handler=_cmd_align)

    pe = sub.add_parser(
        "eval",
        parents=[common],
        help="score predictions, or run the full 5-fold protocol",
        description="Two modes. With --pred/--truth: set-level precision/recall/F1 of a "
        "prediction file against a truth file. With --data (optionally --config): "
        "train, align, and score every fold, reporting mean and deviation.",
    )
    pe.add_argument("--pred", type=Path, help="predicted alignment (TSV: kg1 entity, kg2 entity)")
    pe.add_argument("--truth", type=Path, help="reference alignment to score against")
    pe.add_argument("--data", type=Path, help="dataset directory (protocol mode)")
    pe.add_argument("--config", type=Path, help="JSON training configuration (protocol mode)")
    pe.add_argument("--metric", choices=("cosine", "euclidean", "manhattan"), default="cosine",
                    help="similarity metric (protocol mode, default cosine)")
    pe.add_argument("--csls", type=int, default=0, metavar="K",
                    help="CSLS neighborhood size; 0 disables (protocol mode, default 0)")
    pe.add_argument("--strategy", choices=("greedy", "stable", "mwgm"), default="greedy",
                    help="alignment extraction strategy (protocol mode, default greedy)")
    pe.set_defaults(handler=_cmd_eval)

    pd = sub.add_parser(
        "diagnose",
        parents=[common],
        help="profile embedding-space geometry (hubness)",
        description="Similarity-distribution profiling of a stored embedding space: mean "
        "cosine by neighbor rank plus the rank-1 hub histogram, to detect hubness "
        "before extraction.",
    )
    pd.add_argument("--embeddings", type=Path, required=True, help="embedding directory written by `kgalign train`")
    pd.add_argument("--data", type=Path, required=True, help="dataset directory")
    pd.add_argument("--fold", type=int, default=1, help="1-based fold number (default 1)")
    pd.add_argument("--scope", choices=("test", "all"), default="test",
                    help="target pool to profile against (default test)")
    pd.add_argument("--k", type=int, default=5, help="profile depth: neighbor ranks to average (default 5)")
    pd.set_defaults(handler=_cmd_diagnose)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse handles --help/--version and usage errors by exiting; keep
        # main() returning an int so in-process callers see a plain code
        return int(exc.code or 0)

    threads = 1 if args.deterministic else max(1, args.threads)
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)

    try:
        return args.handler(args, argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
