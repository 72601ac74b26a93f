"""Training-loop tests: objective assembly, config parsing, early stopping,
self-training proposals, and run-to-run determinism."""

import dataclasses
import json

import numpy as np
import pytest

from helpers import bundle_from_pair, isomorphic_pair, power_law_kg, small_bundle
from kgalign.embedding import EmbeddingSpace, LossConfig, VectorTable
from kgalign.errors import ValidationError
from kgalign.kg import AlignmentSet, DatasetBundle, Fold, KnowledgeGraph
from kgalign.training import (
    SelfTrainConfig,
    TrainingConfig,
    build_objective,
    read_training_config,
    self_train_augment,
    train,
    write_training_log,
)


# ---------------------------------------------------------------------------
# Objective assembly


def test_sharing_merges_seed_rows(tiny_bundle):
    cfg = TrainingConfig(interaction="sharing", dim=8)
    obj = build_objective(tiny_bundle, cfg)
    n_seed = len(tiny_bundle.folds[0].train)
    n_all = len(tiny_bundle.kg1.entities) + len(tiny_bundle.kg2.entities)
    assert len(obj.ent_ids) == n_all - n_seed
    for a, b in tiny_bundle.folds[0].train:
        assert obj.canon[b] == a
        assert obj.aliases[b] == a
        assert b not in obj.ent_ids
    # merged rows show up inside relabeled triples
    merged_targets = {b for _, b in tiny_bundle.folds[0].train}
    for h, _, t, _ in obj.triples:
        assert h not in merged_targets and t not in merged_targets


def test_transformation_keeps_namespaces(tiny_bundle):
    obj = build_objective(tiny_bundle, TrainingConfig(interaction="transformation", dim=8))
    n_all = len(tiny_bundle.kg1.entities) + len(tiny_bundle.kg2.entities)
    assert len(obj.ent_ids) == n_all
    assert obj.aliases == {}
    assert obj.seed_pairs == tuple(sorted(tiny_bundle.folds[0].train.as_set()))


def test_swapping_augments_triples(tiny_bundle):
    base = build_objective(tiny_bundle, TrainingConfig(interaction="transformation", dim=8))
    obj = build_objective(tiny_bundle, TrainingConfig(interaction="swapping", dim=8))
    assert set(base.triples) <= set(obj.triples)
    extra = set(obj.triples) - set(base.triples)
    assert extra
    seed = dict(tiny_bundle.folds[0].train)
    swapped_side0 = {t for t in extra if t[3] == 0}
    for h, _, t, _ in swapped_side0:
        assert h in seed.values() or t in seed.values()


def test_objective_rejects_colliding_namespaces():
    kg = power_law_kg(12, 2, "x", seed=0)
    links = AlignmentSet.from_pairs([(e, e) for e in sorted(kg.entities)[:10]])
    from kgalign.kg import make_folds

    bundle = DatasetBundle(kg, kg, links, folds=make_folds(links, 0))
    with pytest.raises(ValidationError, match="collide"):
        build_objective(bundle, TrainingConfig(dim=8))


def test_objective_requires_folds_and_seed(tiny_bundle):
    with pytest.raises(ValidationError, match="folds"):
        build_objective(
            DatasetBundle(tiny_bundle.kg1, tiny_bundle.kg2, tiny_bundle.links),
            TrainingConfig(dim=8),
        )
    empty = Fold(
        train=AlignmentSet.from_pairs(()),
        valid=tiny_bundle.folds[0].valid,
        test=tiny_bundle.folds[0].test,
    )
    hollow = dataclasses.replace(tiny_bundle, folds=(empty,))
    with pytest.raises(ValidationError, match="seed"):
        build_objective(hollow, TrainingConfig(dim=8))
    with pytest.raises(ValidationError, match="fold index"):
        build_objective(tiny_bundle, TrainingConfig(dim=8), fold_index=7)


# ---------------------------------------------------------------------------
# Config files


def test_read_training_config_nested(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps(
            {
                "model": "transe",
                "dim": 32,
                "loss": {"kind": "logistic", "negatives_per_positive": 5},
                "self_train": {"start_epoch": 20, "editing": "none"},
            }
        )
    )
    cfg, st = read_training_config(path)
    assert cfg.dim == 32
    assert cfg.loss.kind == "logistic"
    assert cfg.loss.negatives_per_positive == 5
    assert st.start_epoch == 20 and st.editing == "none"


@pytest.mark.parametrize(
    "payload,match",
    [
        ({"dims": 32}, "training"),
        ({"loss": {"margins": 2.0}}, "loss"),
        ({"self_train": {"when": 5}}, "self_train"),
    ],
)
def test_read_training_config_rejects_unknown_keys(tmp_path, payload, match):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ValidationError, match=match):
        read_training_config(path)


def test_read_training_config_rejects_bad_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError, match="JSON"):
        read_training_config(path)
    path.write_text("[1, 2]")
    with pytest.raises(ValidationError, match="object"):
        read_training_config(path)


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainingConfig(model="rotate")
    with pytest.raises(ValidationError):
        TrainingConfig(interaction="fusion")
    with pytest.raises(ValidationError):
        TrainingConfig(learning_rate=0.0)
    with pytest.raises(ValidationError):
        SelfTrainConfig(similarity_threshold=1.5)
    with pytest.raises(ValidationError):
        SelfTrainConfig(editing="overwrite")


# ---------------------------------------------------------------------------
# The training loop


def _quick_cfg(**overrides):
    base = dict(
        dim=16,
        batch_size=200,
        max_epochs=30,
        eval_every=10,
        learning_rate=0.1,
        loss=LossConfig(negatives_per_positive=2),
        rng_seed=0,
    )
    base.update(overrides)
    return TrainingConfig(**base)


def test_train_learns_isomorphic_toy():
    kg1, kg2, links = isomorphic_pair(power_law_kg(40, 3, "e", seed=5))
    bundle = bundle_from_pair(kg1, kg2, links)
    result = train(bundle, _quick_cfg(max_epochs=60))
    assert result.log, "training produced no evaluation records"
    best = max(rec.val_hits1 for rec in result.log)
    assert best >= 0.5
    by_epoch = {rec.epoch: rec.val_hits1 for rec in result.log}
    assert by_epoch[result.best_epoch] == best


def test_early_stop_halts_on_first_drop(tiny_bundle):
    result = train(tiny_bundle, _quick_cfg(max_epochs=2000))
    hits = [rec.val_hits1 for rec in result.log]
    if result.stopped_epoch < 2000:
        # stopped by the drop rule, not the cap: final check is below its
        # predecessor and no earlier adjacent pair drops
        assert len(hits) >= 2 and hits[-1] < hits[-2]
        for prev, cur in zip(hits[:-2], hits[1:-1]):
            assert cur >= prev
    assert result.best_epoch <= result.stopped_epoch


def test_train_zero_epochs_returns_initialization(tiny_bundle):
    result = train(tiny_bundle, _quick_cfg(max_epochs=0))
    assert result.log == []
    assert result.stopped_epoch == 0
    assert result.space.entities.vectors.shape[1] == 16


def test_train_is_deterministic(tiny_bundle):
    a = train(tiny_bundle, _quick_cfg(max_epochs=20))
    b = train(tiny_bundle, _quick_cfg(max_epochs=20))
    assert a.space.entities.vectors.tobytes() == b.space.entities.vectors.tobytes()
    assert a.space.relations.vectors.tobytes() == b.space.relations.vectors.tobytes()
    assert [r.epoch for r in a.log] == [r.epoch for r in b.log]
    assert [r.loss for r in a.log] == [r.loss for r in b.log]
    c = train(tiny_bundle, _quick_cfg(max_epochs=20, rng_seed=7))
    assert a.space.entities.vectors.tobytes() != c.space.entities.vectors.tobytes()


@pytest.mark.parametrize("interaction", ["transformation", "calibration", "swapping"])
def test_interaction_modes_run(tiny_bundle, interaction):
    result = train(tiny_bundle, _quick_cfg(interaction=interaction, max_epochs=10))
    assert all(np.isfinite(rec.loss) for rec in result.log)
    if interaction == "transformation":
        assert result.space.transform is not None
        assert result.space.transform.shape == (16, 16)
    else:
        assert result.space.transform is None


def test_gcn_model_runs(tiny_bundle):
    cfg = _quick_cfg(model="gcn", max_epochs=10, normalize=False)
    result = train(tiny_bundle, cfg)
    assert all(np.isfinite(rec.loss) for rec in result.log)
    assert result.space.normalized is False


def test_attribute_terms_run():
    kg1, kg2, links = isomorphic_pair(power_law_kg(20, 2, "e", seed=2))
    attrs1 = [(e, "name", e[-3:]) for e in sorted(kg1.entities)]
    attrs2 = [(e, "name", e[-3:]) for e in sorted(kg2.entities)]
    kg1 = KnowledgeGraph(kg1.rel_triples, attr_triples=attrs1)
    kg2 = KnowledgeGraph(kg2.rel_triples, attr_triples=attrs2)
    bundle = bundle_from_pair(kg1, kg2, links)
    cfg = _quick_cfg(max_epochs=10, use_attributes=True, use_literals=True)
    result = train(bundle, cfg)
    assert all(np.isfinite(rec.loss) for rec in result.log)
    assert result.space.attributes is not None
    assert result.space.chars is not None


# ---------------------------------------------------------------------------
# Self-training


def _augment_fixture():
    """Two graphs, two seed pairs, four free entities with crafted vectors."""
    tr1 = [("a1", "r", "a2"), ("a3", "r", "a4"), ("a5", "r", "a6")]
    tr2 = [("b1", "r", "b2"), ("b3", "r", "b4"), ("b5", "r", "b6")]
    kg1 = KnowledgeGraph(tr1)
    kg2 = KnowledgeGraph(tr2)
    links = AlignmentSet.from_pairs([(f"a{i}", f"b{i}") for i in range(1, 7)])
    fold = Fold(
        train=AlignmentSet.from_pairs([("a1", "b1"), ("a2", "b2")]),
        valid=AlignmentSet.from_pairs([("a3", "b3")]),
        test=AlignmentSet.from_pairs([("a4", "b4"), ("a5", "b5"), ("a6", "b6")]),
    )
    return DatasetBundle(kg1, kg2, links, folds=(fold,))


def _space_for(pairs_close, dim=4):
    """Embed a3..a6 and b3..b6 so the listed pairs are near-identical."""
    rng = np.random.default_rng(0)
    ids, rows = [], []
    base = {e: rng.normal(size=dim) for e in ["a3", "a4", "a5", "a6"]}
    for e, v in base.items():
        ids.append(e)
        rows.append(v)
    for a, b in pairs_close.items():
        ids.append(b)
        rows.append(base[a] + 1e-6)
    # seed entities exist too, far from everything
    for e in ["a1", "a2", "b1", "b2"]:
        ids.append(e)
        rows.append(rng.normal(size=dim) + 50)
    return EmbeddingSpace(
        entities=VectorTable(ids, np.array(rows)),
        relations=VectorTable(["r"], np.zeros((1, dim))),
    )


def test_self_train_proposes_mutual_neighbors():
    bundle = _augment_fixture()
    space = _space_for({"a3": "b3", "a4": "b4", "a5": "b5", "a6": "b6"})
    cfg = SelfTrainConfig(similarity_threshold=0.95)
    augmented, rec = self_train_augment(space, bundle, cfg, epoch=10)
    assert augmented.as_set() == {("a3", "b3"), ("a4", "b4"), ("a5", "b5"), ("a6", "b6")}
    assert rec.proposed == 4 and rec.kept == 4
    assert rec.precision == 1.0 and rec.recall == 1.0 and rec.f1 == 1.0


def test_self_train_threshold_blocks_weak_pairs():
    bundle = _augment_fixture()
    # b-vectors aligned with the wrong sources still form mutual pairs, but a
    # threshold above their cosine rejects everything
    space = _space_for({"a3": "b3"})
    dropped_b = {"b4", "b5", "b6"}
    assert dropped_b - set(space.entities.row_of) == dropped_b  # absent from space
    augmented, rec = self_train_augment(space, bundle, SelfTrainConfig(similarity_threshold=1.0), epoch=1)
    assert rec.proposed in (0, 1)  # threshold 1.0 keeps only exact duplicates


def test_self_train_repair_prefers_higher_similarity():
    bundle = _augment_fixture()
    space = _space_for({"a3": "b3", "a4": "b4"})
    cfg = SelfTrainConfig(similarity_threshold=0.9, editing="one-to-one-repair")
    # prior holds a wrong pair sharing endpoint a3; its current similarity is
    # far below the fresh (a3, b3) proposal, so repair evicts it
    prior = AlignmentSet.from_pairs([("a3", "b4")])
    augmented, _ = self_train_augment(space, bundle, cfg, prior=prior, epoch=5)
    assert ("a3", "b3") in augmented.as_set()
    assert ("a3", "b4") not in augmented.as_set()
    assert ("a4", "b4") in augmented.as_set()


def test_self_train_union_editing_keeps_prior():
    bundle = _augment_fixture()
    space = _space_for({"a3": "b3"})
    cfg = SelfTrainConfig(similarity_threshold=0.9, editing="none")
    prior = AlignmentSet.from_pairs([("a4", "b6")])
    augmented, _ = self_train_augment(space, bundle, cfg, prior=prior, epoch=5)
    assert ("a4", "b6") in augmented.as_set()
    assert ("a3", "b3") in augmented.as_set()


def test_train_with_self_training_runs(tiny_bundle):
    st = SelfTrainConfig(start_epoch=10, propose_every=10, similarity_threshold=0.5)
    result = train(tiny_bundle, _quick_cfg(max_epochs=30), self_train=st)
    assert isinstance(result.augmented, AlignmentSet)
    # proposals were at least attempted on schedule
    assert all(p.epoch >= 10 for p in result.proposals)


# ---------------------------------------------------------------------------
# Log files


def test_write_training_log(tmp_path):
    from kgalign.training import CheckRecord

    records = [
        CheckRecord(epoch=10, loss=1.5, val_hits1=0.25),
        CheckRecord(epoch=20, loss=1.2, val_hits1=0.5, augmented_seed=3, augment_precision=0.75),
    ]
    path = tmp_path / "log.csv"
    write_training_log(path, records)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,val_hits1,augmented_seed,augment_precision"
    assert lines[1].startswith("10,") and lines[1].endswith(",0,")
    assert lines[2].split(",")[4] == "0.750000"
