"""Knowledge-graph data model and the on-disk dataset layout.

A dataset directory holds two KGs plus a reference entity alignment:

    rel_triples_1   rel_triples_2    relation triples, one "h<TAB>r<TAB>t" per line
    attr_triples_1  attr_triples_2   attribute triples "e<TAB>a<TAB>literal" (optional)
    ent_links                        reference alignment "e1<TAB>e2"
    folds/<k>/{train_links,valid_links,test_links}   optional 5-fold splits

All files are UTF-8, tab separated, no header, "\n" line endings. Identifiers
may not contain tabs or newlines. Entities that occur only in ent_links are
kept as isolated (degree zero) members of their KG, which is how sampled
datasets with orphaned entities survive a write/load round trip.

Degree of an entity counts the relation triples containing it (head or tail,
multiplicity counted, a self-loop counts once); attribute triples never
contribute to degree.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

REL_FILES = ("rel_triples_1", "rel_triples_2")
ATTR_FILES = ("attr_triples_1", "attr_triples_2")
LINKS_FILE = "ent_links"
FOLD_FILES = ("train_links", "valid_links", "test_links")


def _check_identifier(value: str, context: str) -> None:
    if "\t" in value or "\n" in value or "\r" in value:
        raise ValidationError(f"{context}: identifier {value!r} contains tab or newline")


class KnowledgeGraph:
    """One KG: entities, relations, attributes, and the two kinds of triples.

    Immutable after construction. ``entities`` is a sorted tuple so that every
    iteration over it is deterministic regardless of hash randomization;
    membership tests should use ``entity_set``.
    """

    def __init__(self, rel_triples, attr_triples=(), entities=None):
        rel = tuple(dict.fromkeys((str(h), str(r), str(t)) for h, r, t in rel_triples))
        attr = tuple(dict.fromkeys((str(e), str(a), str(v)) for e, a, v in attr_triples))
        referenced = {h for h, _, t in rel} | {t for _, _, t in rel} | {e for e, _, _ in attr}
        if entities is None:
            ent_set = referenced
        else:
            ent_set = {str(e) for e in entities}
            missing = referenced - ent_set
            if missing:
                raise ValidationError(
                    "triples reference entities outside the entity set: "
                    + ", ".join(sorted(missing)[:5])
                )
        self.rel_triples = rel
        self.attr_triples = attr
        self.entities: tuple[str, ...] = tuple(sorted(ent_set))
        self.entity_set: frozenset[str] = frozenset(ent_set)
        self.relations: tuple[str, ...] = tuple(sorted({r for _, r, _ in rel}))
        self.attributes: tuple[str, ...] = tuple(sorted({a for _, a, _ in attr}))
        counts = Counter()
        for h, _, t in rel:
            counts[h] += 1
            if t != h:
                counts[t] += 1
        self.degree_index: dict[str, int] = {e: counts.get(e, 0) for e in self.entities}
        self._adjacency: dict[str, set[str]] | None = None

    def __repr__(self):
        return (
            f"KnowledgeGraph({len(self.entities)} entities, {len(self.relations)} relations, "
            f"{len(self.rel_triples)} rel triples, {len(self.attr_triples)} attr triples)"
        )

    def degree(self, entity: str) -> int:
        return self.degree_index[entity]

    @property
    def avg_degree(self) -> float:
        if not self.entities:
            return 0.0
        return sum(self.degree_index.values()) / len(self.entities)

    def undirected_adjacency(self) -> dict[str, set[str]]:
        """Neighbor sets of the undirected simple projection (self-loops dropped)."""
        if self._adjacency is None:
            adj: dict[str, set[str]] = {e: set() for e in self.entities}
            for h, _, t in self.rel_triples:
                if h != t:
                    adj[h].add(t)
                    adj[t].add(h)
            self._adjacency = adj
        return self._adjacency

    def subgraph(self, keep) -> "KnowledgeGraph":
        """Restrict to the given entities; triples with any lost endpoint are dropped."""
        keep = frozenset(keep)
        unknown = keep - self.entity_set
        if unknown:
            raise ValidationError("subgraph keeps unknown entities: " + ", ".join(sorted(unknown)[:5]))
        rel = [(h, r, t) for h, r, t in self.rel_triples if h in keep and t in keep]
        attr = [(e, a, v) for e, a, v in self.attr_triples if e in keep]
        return KnowledgeGraph(rel, attr, entities=keep)


@dataclass(frozen=True)
class AlignmentSet:
    """Ordered list of (entity-in-KG1, entity-in-KG2) pairs."""

    pairs: tuple[tuple[str, str], ...]

    @classmethod
    def from_pairs(cls, pairs) -> "AlignmentSet":
        return cls(tuple(dict.fromkeys((str(a), str(b)) for a, b in pairs)))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def sources(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.pairs)

    def targets(self) -> tuple[str, ...]:
        return tuple(b for _, b in self.pairs)

    def as_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.pairs)

    def as_dict(self) -> dict[str, str]:
        return {a: b for a, b in self.pairs}

    def is_one_to_one(self) -> bool:
        left = [a for a, _ in self.pairs]
        right = [b for _, b in self.pairs]
        return len(set(left)) == len(left) and len(set(right)) == len(right)

    def require_one_to_one(self, context: str = "alignment") -> None:
        if not self.is_one_to_one():
            seen, dupes = set(), set()
            for side in (self.sources(), self.targets()):
                seen.clear()
                for e in side:
                    (dupes if e in seen else seen).add(e)
            raise ValidationError(
                f"{context} must be 1-to-1; repeated entities: " + ", ".join(sorted(dupes)[:5])
            )


@dataclass(frozen=True)
class Fold:
    train: AlignmentSet
    valid: AlignmentSet
    test: AlignmentSet


@dataclass
class DatasetBundle:
    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    links: AlignmentSet
    folds: tuple[Fold, ...] | None = None

    def validate(self) -> None:
        self.links.require_one_to_one("ent_links")
        bad = [
            (a, b)
            for a, b in self.links
            if a not in self.kg1.entity_set or b not in self.kg2.entity_set
        ]
        if bad:
            raise ValidationError(f"links reference unknown entities: {bad[:5]}")
        if self.folds is not None:
            whole = self.links.as_set()
            for k, fold in enumerate(self.folds, start=1):
                parts = [fold.train.as_set(), fold.valid.as_set(), fold.test.as_set()]
                union = parts[0] | parts[1] | parts[2]
                dangling = union - whole
                if dangling:
                    raise ValidationError(
                        f"fold {k} contains links outside ent_links: {sorted(dangling)[:5]}"
                    )
                if union != whole or sum(len(p) for p in parts) != len(whole):
                    raise ValidationError(
                        f"fold {k} does not partition ent_links into train/valid/test"
                    )


@dataclass(frozen=True)
class GraphStats:
    n_entities: int
    n_rel_triples: int
    avg_degree: float
    isolated_pct: float
    clustering_coef: float
    js_vs_source: float | None = None


def degree_distribution(kg: KnowledgeGraph) -> dict[int, float]:
    """Proportion of entities per degree; values sum to 1."""
    if not kg.entities:
        raise ValidationError("degree distribution of an empty graph is undefined")
    counts = Counter(kg.degree_index.values())
    n = len(kg.entities)
    return {d: c / n for d, c in sorted(counts.items())}


def _avg_clustering(kg: KnowledgeGraph) -> float:
    # Local clustering on the undirected simple projection; nodes of degree < 2
    # contribute 0, and the mean runs over all nodes.
    if not kg.entities:
        return 0.0
    adj = kg.undirected_adjacency()
    total = 0.0
    for e in kg.entities:
        neigh = adj[e]
        k = len(neigh)
        if k < 2:
            continue
        links = 0
        for u in neigh:
            nu = adj[u]
            # count each neighbor pair once
            for v in neigh:
                if v > u and v in nu:
                    links += 1
        total += 2.0 * links / (k * (k - 1))
    return total / len(kg.entities)


def graph_stats(kg: KnowledgeGraph, source_dist: dict[int, float] | None = None) -> GraphStats:
    if not kg.entities:
        raise ValidationError("cannot compute stats for an empty graph")
    isolated = sum(1 for d in kg.degree_index.values() if d == 0)
    js = None
    if source_dist is not None:
        from .sampling import js_divergence

        js = js_divergence(source_dist, degree_distribution(kg))
    return GraphStats(
        n_entities=len(kg.entities),
        n_rel_triples=len(kg.rel_triples),
        avg_degree=kg.avg_degree,
        isolated_pct=isolated / len(kg.entities),
        clustering_coef=_avg_clustering(kg),
        js_vs_source=js,
    )


def make_folds(links: AlignmentSet, seed: int) -> tuple[Fold, ...]:
    """Shuffle links by seed and split into 5 folds of train 20% / valid 10% / test 70%.

    Fold k trains on the k-th 20% slice; the remaining links are split into
    valid (10% of the total) and test (the rest). Sizes are exact up to the
    +-1 rounding slack of np.array_split.
    """
    n = len(links)
    if n < 10:
        raise ValidationError(f"need at least 10 links to build folds, got {n}")
    base = sorted(links.pairs)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    slices = np.array_split(perm, 5)
    n_valid = int(round(n / 10.0))
    folds = []
    for k in range(5):
        train_idx = set(slices[k].tolist())
        rest = [i for i in perm.tolist() if i not in train_idx]
        valid_idx = rest[:n_valid]
        test_idx = rest[n_valid:]
        folds.append(
            Fold(
                train=AlignmentSet.from_pairs(base[i] for i in sorted(train_idx)),
                valid=AlignmentSet.from_pairs(base[i] for i in sorted(valid_idx)),
                test=AlignmentSet.from_pairs(base[i] for i in sorted(test_idx)),
            )
        )
    return tuple(folds)


# ---------------------------------------------------------------------------
# I/O


def _read_rows(path: Path, n_fields: int, greedy_last: bool = False) -> list[tuple]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line == "":
                raise ValidationError(f"{path}:{lineno}: blank line")
            parts = line.split("\t", n_fields - 1) if greedy_last else line.split("\t")
            if len(parts) != n_fields:
                raise ValidationError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, got {len(parts)}"
                )
            rows.append(tuple(parts))
    return rows


def read_links(path: Path) -> AlignmentSet:
    return AlignmentSet.from_pairs(_read_rows(Path(path), 2))


def write_links(path: Path, links: AlignmentSet) -> None:
    path = Path(path)
    for a, b in links:
        _check_identifier(a, str(path))
        _check_identifier(b, str(path))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for a, b in sorted(links.pairs):
            fh.write(f"{a}\t{b}\n")


def read_triples(path: Path, kind: str = "rel") -> list[tuple[str, str, str]]:
    # Attribute literals may themselves contain tabs; the first two fields are
    # identifiers, everything after the second tab is the literal.
    return _read_rows(Path(path), 3, greedy_last=(kind == "attr"))


def write_triples(path: Path, triples) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for a, b, c in sorted(triples):
            fh.write(f"{a}\t{b}\t{c}\n")


def load_dataset(root: Path) -> DatasetBundle:
    """Load and validate a dataset directory; see the module docstring for the layout."""
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"dataset directory not found: {root}")
    for name in REL_FILES + (LINKS_FILE,):
        if not (root / name).is_file():
            raise ValidationError(f"missing mandatory dataset file: {root / name}")
    rel1 = read_triples(root / REL_FILES[0])
    rel2 = read_triples(root / REL_FILES[1])
    attr1 = read_triples(root / ATTR_FILES[0], "attr") if (root / ATTR_FILES[0]).is_file() else []
    attr2 = read_triples(root / ATTR_FILES[1], "attr") if (root / ATTR_FILES[1]).is_file() else []
    links = read_links(root / LINKS_FILE)

    def referenced(rel, attr):
        return {h for h, _, t in rel} | {t for _, _, t in rel} | {e for e, _, _ in attr}

    kg1 = KnowledgeGraph(rel1, attr1, entities=referenced(rel1, attr1) | set(links.sources()))
    kg2 = KnowledgeGraph(rel2, attr2, entities=referenced(rel2, attr2) | set(links.targets()))

    folds = None
    folds_dir = root / "folds"
    if folds_dir.is_dir():
        fold_names = sorted((p for p in folds_dir.iterdir() if p.is_dir()), key=lambda p: p.name)
        loaded = []
        for fd in fold_names:
            parts = []
            for fname in FOLD_FILES:
                if not (fd / fname).is_file():
                    raise ValidationError(f"missing fold file: {fd / fname}")
                parts.append(read_links(fd / fname))
            loaded.append(Fold(*parts))
        folds = tuple(loaded)

    bundle = DatasetBundle(kg1=kg1, kg2=kg2, links=links, folds=folds)
    bundle.validate()
    return bundle


def write_dataset(bundle: DatasetBundle, root: Path) -> None:
    """Write the canonical layout: files sorted line-wise so writes are reproducible."""
    root = Path(root)
    os.makedirs(root, exist_ok=True)
    for kg, rel_name, attr_name in (
        (bundle.kg1, REL_FILES[0], ATTR_FILES[0]),
        (bundle.kg2, REL_FILES[1], ATTR_FILES[1]),
    ):
        for h, r, t in kg.rel_triples:
            for x in (h, r, t):
                _check_identifier(x, rel_name)
        write_triples(root / rel_name, kg.rel_triples)
        write_triples(root / attr_name, kg.attr_triples)
    write_links(root / LINKS_FILE, bundle.links)
    if bundle.folds is not None:
        for k, fold in enumerate(bundle.folds, start=1):
            fd = root / "folds" / str(k)
            os.makedirs(fd, exist_ok=True)
            write_links(fd / "train_links", fold.train)
            write_links(fd / "valid_links", fold.valid)
            write_links(fd / "test_links", fold.test)


def dataset_counts(bundle: DatasetBundle) -> dict[str, int]:
    """Per-file record counts, reported by the CLI after loading."""
    out = {
        "rel_triples_1": len(bundle.kg1.rel_triples),
        "rel_triples_2": len(bundle.kg2.rel_triples),
        "attr_triples_1": len(bundle.kg1.attr_triples),
        "attr_triples_2": len(bundle.kg2.attr_triples),
        "ent_links": len(bundle.links),
    }
    if bundle.folds:
        out["folds"] = len(bundle.folds)
    return out
