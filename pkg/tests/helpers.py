"""Synthetic graph generators and dataset builders shared across the suite."""

import numpy as np

from kgalign.kg import AlignmentSet, DatasetBundle, KnowledgeGraph, make_folds


def ba_edges(n, m, rng):
    """Preferential-attachment edge list: each new node attaches to m earlier ones."""
    edges = []
    repeated = list(range(m))
    for v in range(m, n):
        chosen = set()
        guard = 0
        while len(chosen) < min(m, v):
            u = int(repeated[rng.integers(len(repeated))]) if repeated else int(rng.integers(v))
            if u != v:
                chosen.add(u)
            guard += 1
            if guard > 1000:
                break
        for u in chosen:
            edges.append((u, v))
        repeated.extend(chosen)
        repeated.extend([v] * m)
    return edges


def power_law_kg(n, m, prefix, seed, n_rel=20):
    """Heavy-tailed KG: preferential-attachment skeleton, random relation labels."""
    rng = np.random.default_rng(seed)
    edges = ba_edges(n, m, rng)
    rels = [f"r{j}" for j in range(n_rel)]
    triples = []
    for u, v in edges:
        r = rels[int(rng.integers(n_rel))]
        if rng.integers(2):
            u, v = v, u
        triples.append((f"{prefix}{u:05d}", r, f"{prefix}{v:05d}"))
    ents = [f"{prefix}{i:05d}" for i in range(n)]
    return KnowledgeGraph(triples, entities=ents)


def relabel(kg, prefix):
    """Rename entities to {prefix}{00000..}; returns the new KG and the name map."""
    names = {e: f"{prefix}{i:05d}" for i, e in enumerate(sorted(kg.entities))}
    triples = [(names[h], r, names[t]) for h, r, t in kg.rel_triples]
    return KnowledgeGraph(triples, entities=names.values()), names


def core_rim_kg(n_core, n_rim, m, prefix, seed):
    """Dense preferential core plus degree-1 rim nodes attached preferentially.

    The rim gives the graph a fat degree-1 bucket, which keeps the instance-
    level noise floor of degree-distribution comparisons low at small sizes
    (a pure preferential-attachment graph this small fluctuates too much).
    """
    core = power_law_kg(n_core, m, "c", seed=seed)
    rng = np.random.default_rng(seed + 1)
    tr = list(core.rel_triples)
    nodes = sorted(core.entities)
    deg = dict(core.degree_index)
    rels = sorted({r for _, r, _ in tr})
    for i in range(n_rim):
        w = np.array([deg[u] for u in nodes], dtype=float)
        w /= w.sum()
        target = nodes[int(rng.choice(len(nodes), p=w))]
        newe = f"rim{i:04d}"
        rel = rels[int(rng.integers(len(rels)))]
        if rng.integers(2):
            tr.append((newe, rel, target))
        else:
            tr.append((target, rel, newe))
        deg[target] += 1
        deg[newe] = 1
        nodes.append(newe)
    out, _ = relabel(KnowledgeGraph(tr), prefix)
    return out


def isomorphic_pair(maker_kg):
    """Two relabeled copies of one KG plus the full identity alignment."""
    kg1, names1 = relabel(maker_kg, "a")
    kg2, names2 = relabel(maker_kg, "b")
    links = AlignmentSet.from_pairs(
        (names1[e], names2[e]) for e in sorted(maker_kg.entities)
    )
    return kg1, kg2, links


def fixed_degree_kg(n, n_edges, seed, n_rel=10, prefix="e"):
    """Uniform random simple graph with exactly n_edges (so avg degree is exact)."""
    rng = np.random.default_rng(seed)
    all_pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    idx = rng.choice(len(all_pairs), size=n_edges, replace=False)
    rels = [f"r{j}" for j in range(n_rel)]
    triples = []
    for k in sorted(idx.tolist()):
        u, v = all_pairs[k]
        r = rels[int(rng.integers(n_rel))]
        if rng.integers(2):
            u, v = v, u
        triples.append((f"{prefix}{u:05d}", r, f"{prefix}{v:05d}"))
    ents = [f"{prefix}{i:05d}" for i in range(n)]
    return KnowledgeGraph(triples, entities=ents)


def bundle_from_pair(kg1, kg2, links, fold_seed=0):
    bundle = DatasetBundle(kg1=kg1, kg2=kg2, links=links, folds=make_folds(links, seed=fold_seed))
    bundle.validate()
    return bundle


def small_bundle(seed=0, n=30, m=2):
    """Cheap isomorphic dataset with folds, for trainer-level tests."""
    kg1, kg2, links = isomorphic_pair(power_law_kg(n, m, "s", seed=seed))
    return bundle_from_pair(kg1, kg2, links, fold_seed=seed)


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def blocking_pairs(sims_src, sims_tgt, src, tgt, matching):
    """Exhaustively list (source, target) pairs that both strictly prefer
    each other over their assigned partners (unmatched counts as worst)."""
    partner_of_src = dict(matching)
    partner_of_tgt = {t: s for s, t in matching}
    si = {s: i for i, s in enumerate(src)}
    tj = {t: j for j, t in enumerate(tgt)}
    found = []
    for s in src:
        for t in tgt:
            if partner_of_src.get(s) == t:
                continue
            ps = partner_of_src.get(s)
            pt = partner_of_tgt.get(t)
            s_prefers = ps is None or sims_src[si[s], tj[t]] > sims_src[si[s], tj[ps]]
            t_prefers = pt is None or sims_tgt[tj[t], si[s]] > sims_tgt[tj[t], si[pt]]
            if s_prefers and t_prefers:
                found.append((s, t))
    return found


def hub_cone_tables(n=20, c=0.35, rho=0.3):
    """Vector tables with one hub target attracting every source.

    Sources sit on a cone around a shared axis u; each target i >= 1 tilts
    off its partner source by correlation rho, while target 0 IS the axis.
    Every source is then closer to target 0 (cos 1/sqrt(1+c^2)) than to its
    own partner (cos (1+c^2*rho)/(1+c^2)), so greedy cosine matching sends
    everyone to the hub while neighborhood-normalized scores do not.
    """
    from kgalign.embedding import VectorTable

    dim = 1 + 2 * n
    u = np.zeros(dim)
    u[0] = 1.0
    scale = np.sqrt(1 + c * c)
    src = np.zeros((n, dim))
    tgt = np.zeros((n, dim))
    for i in range(n):
        v = np.zeros(dim)
        v[1 + i] = 1.0
        w = np.zeros(dim)
        w[1 + n + i] = 1.0
        src[i] = (u + c * v) / scale
        tgt[i] = (u + c * (rho * v + np.sqrt(1 - rho * rho) * w)) / scale
    tgt[0] = u
    ids_s = [f"s{i:02d}" for i in range(n)]
    ids_t = [f"t{i:02d}" for i in range(n)]
    truth = AlignmentSet.from_pairs(zip(ids_s, ids_t))
    return VectorTable(ids_s, src), VectorTable(ids_t, tgt), truth
