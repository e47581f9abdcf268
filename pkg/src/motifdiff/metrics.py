"""Metric battery over generated molecule sets and the chemistry filter pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .molio import (
    MolecularGraph,
    atomic_mass,
    canonical_hash,
    check_validity,
    _h64,
)

FINGERPRINT_BITS = 2048
FINGERPRINT_RADIUS = 2
ANGLE_BIN_DEG = 2.0
DIHEDRAL_BIN_DEG = 5.0
KL_SMOOTHING = 1e-6
MAX_PATTERN_ATOMS = 12

WILDCARD = "*"


# ---------------------------------------------------------------------------
# Fingerprints and similarity


@dataclass(frozen=True)
class BitFingerprint:
    """Hashed circular-substructure fingerprint (set bits of a fixed width)."""

    bits: frozenset
    width: int = FINGERPRINT_BITS


def morgan_fingerprint(mol: MolecularGraph, radius: int = FINGERPRINT_RADIUS,
                       width: int = FINGERPRINT_BITS) -> BitFingerprint:
    adj = mol.neighbors()
    inv = [
        _h64("env0", el, len(adj[i]), round(sum(o for _, o in adj[i]) * 2))
        for i, el in enumerate(mol.elements)
    ]
    bits = {v % width for v in inv}
    for _ in range(radius):
        inv = [
            _h64(inv[i], tuple(sorted((order, inv[j]) for j, order in adj[i])))
            for i in range(mol.num_atoms)
        ]
        bits.update(v % width for v in inv)
    return BitFingerprint(frozenset(bits), width)


def tanimoto(a: BitFingerprint, b: BitFingerprint) -> float:
    if a.width != b.width:
        raise ValueError("fingerprint widths differ")
    union = a.bits | b.bits
    if not union:
        return 1.0
    return len(a.bits & b.bits) / len(union)


# ---------------------------------------------------------------------------
# Geometry metrics


def rmsd(conf_a, conf_b) -> float:
    """Raw (unaligned) root-mean-square deviation of index-matched atoms."""
    a = np.asarray(conf_a, dtype=float).reshape(-1, 3)
    b = np.asarray(conf_b, dtype=float).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError(f"conformation shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum(axis=1).mean()))


def npr_descriptors(mol: MolecularGraph) -> tuple:
    """Normalized principal moments of inertia (unit masses): (I1/I3, I2/I3)."""
    if mol.num_atoms < 3:
        raise ValueError("need at least 3 atoms")
    x = mol.coords - mol.coords.mean(axis=0)
    r2 = (x ** 2).sum(axis=1)
    inertia = np.eye(3) * r2.sum() - x.T @ x
    eig = np.sort(np.linalg.eigvalsh(inertia))
    eig = np.clip(eig, 0.0, None)
    if eig[2] <= 0:
        raise ValueError("degenerate (single-point) geometry")
    return float(eig[0] / eig[2]), float(eig[1] / eig[2])


# ---------------------------------------------------------------------------
# Angle / dihedral distribution divergence


def _parse_pattern(pattern: str):
    """'CC=O' -> elements [C, C, O] and bond orders [None, 2.0] (None = any)."""
    atoms, orders = [], []
    i = 0
    pending = None
    while i < len(pattern):
        c = pattern[i]
        if c == "=":
            pending = 2.0
            i += 1
            continue
        if c == "#":
            pending = 3.0
            i += 1
            continue
        if not c.isalpha():
            raise ValueError(f"bad pattern character {c!r} in {pattern!r}")
        symbol = c
        if i + 1 < len(pattern) and pattern[i + 1].islower():
            symbol += pattern[i + 1]
            i += 1
        if atoms:
            orders.append(pending)
        pending = None
        atoms.append(symbol)
        i += 1
    if len(atoms) < 3:
        raise ValueError(f"pattern {pattern!r} needs at least 3 atoms")
    return atoms, orders


def _match_paths(mol: MolecularGraph, elements, orders):
    adj = mol.neighbors()
    length = len(elements)
    found = set()

    def extend(path):
        pos = len(path)
        if pos == length:
            key = path if path[0] <= path[-1] else path[::-1]
            found.add(key)
            return
        want_el = elements[pos]
        want_order = orders[pos - 1]
        for j, order in adj[path[-1]]:
            if j in path:
                continue
            if mol.elements[j] != want_el:
                continue
            if want_order is not None and order != want_order:
                continue
            extend(path + (j,))

    for start in range(mol.num_atoms):
        if mol.elements[start] == elements[0]:
            extend((start,))
    return sorted(found)


def _angle_deg(a, b, c) -> float:
    u, v = a - b, c - b
    cosang = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.degrees(math.acos(np.clip(cosang, -1.0, 1.0)))


def _dihedral_deg(a, b, c, d) -> float:
    b1, b2, b3 = b - a, c - b, d - c
    n1, n2 = np.cross(b1, b2), np.cross(b2, b3)
    m1 = np.cross(n1, b2 / np.linalg.norm(b2))
    return math.degrees(math.atan2(np.dot(m1, n2), np.dot(n1, n2)))


def pattern_values(mols, pattern: str):
    elements, orders = _parse_pattern(pattern)
    values = []
    for mol in mols:
        for path in _match_paths(mol, elements, orders):
            pts = [mol.coords[i] for i in path]
            if len(path) == 3:
                values.append(_angle_deg(*pts))
            elif len(path) == 4:
                values.append(_dihedral_deg(*pts))
    return values, len(elements)


def _histogram_kl(ref_values, gen_values, lo, hi, width) -> float:
    edges = np.arange(lo, hi + width / 2, width)
    p, _ = np.histogram(ref_values, bins=edges)
    q, _ = np.histogram(gen_values, bins=edges)
    p = p.astype(float) + KL_SMOOTHING
    q = q.astype(float) + KL_SMOOTHING
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def angle_kl(reference, generated, patterns) -> tuple:
    """KL(reference || generated) per geometry pattern.

    3-atom patterns compare bond-angle histograms (2 deg bins on [0, 180]),
    4-atom patterns dihedral histograms (5 deg bins on [-180, 180]).
    Patterns unmatched in either set are returned in the omitted list.
    """
    if not reference or not generated:
        raise ValueError("both molecule sets must be nonempty")
    kl, omitted = {}, []
    for pattern in patterns:
        ref_vals, size = pattern_values(reference, pattern)
        gen_vals, _ = pattern_values(generated, pattern)
        if not ref_vals or not gen_vals:
            omitted.append(pattern)
            continue
        if size == 3:
            kl[pattern] = _histogram_kl(ref_vals, gen_vals, 0.0, 180.0, ANGLE_BIN_DEG)
        else:
            kl[pattern] = _histogram_kl(ref_vals, gen_vals, -180.0, 180.0, DIHEDRAL_BIN_DEG)
    return kl, omitted


# ---------------------------------------------------------------------------
# Scaffolds and set-level metrics


def scaffold(mol: MolecularGraph) -> MolecularGraph:
    """Ring systems plus linkers: terminal acyclic atoms stripped to a fixpoint."""
    keep = set(range(mol.num_atoms))
    bonds = {(i, j): o for i, j, o in mol.bonds}
    while True:
        degree = {a: 0 for a in keep}
        for (i, j) in bonds:
            degree[i] += 1
            degree[j] += 1
        terminal = {a for a in keep if degree[a] <= 1}
        if not terminal:
            break
        keep -= terminal
        bonds = {
            (i, j): o for (i, j), o in bonds.items()
            if i in keep and j in keep
        }
        if not keep:
            break
    members = sorted(keep)
    remap = {a: i for i, a in enumerate(members)}
    return MolecularGraph(
        [mol.elements[a] for a in members],
        mol.coords[members] if members else np.zeros((0, 3)),
        [(remap[i], remap[j], o) for (i, j), o in bonds.items()],
        name=mol.name,
    )


def scaffold_hash(mol: MolecularGraph) -> int:
    return canonical_hash(scaffold(mol))


def set_metrics(generated, train_hashes=frozenset(), test_hashes=frozenset()) -> dict:
    """Validity, uniqueness, diversity and scaffold novelty of a sample set.

    Reference hash sets contain scaffold hashes; all metrics are None when
    the generated set is empty (or has no valid members, where undefined).
    """
    if not generated:
        return {"validity": None, "uniqueness": None, "diversity": None,
                "novelty": None, "counts": {"generated": 0, "valid": 0}}
    valid = [m for m in generated if check_validity(m)[0]]
    validity = len(valid) / len(generated)
    counts = {"generated": len(generated), "valid": len(valid)}
    if not valid:
        return {"validity": validity, "uniqueness": None, "diversity": None,
                "novelty": None, "counts": counts}

    by_hash = {}
    for m in valid:
        by_hash.setdefault(canonical_hash(m), m)
    unique = list(by_hash.values())
    uniqueness = len(unique) / len(valid)

    diversity = None
    if len(unique) >= 2:
        fps = [morgan_fingerprint(m) for m in unique]
        dists = [
            1.0 - tanimoto(fps[i], fps[j])
            for i in range(len(fps)) for j in range(i + 1, len(fps))
        ]
        diversity = float(np.mean(dists))
    elif len(valid) >= 2:
        diversity = 0.0  # several copies of one structure

    scaffolds = {scaffold_hash(m) for m in unique}
    reference = set(train_hashes) | set(test_hashes)
    novelty = sum(1 for s in scaffolds if s not in reference) / len(scaffolds)
    counts["unique"] = len(unique)
    counts["scaffolds"] = len(scaffolds)
    return {"validity": validity, "uniqueness": uniqueness,
            "diversity": diversity, "novelty": novelty, "counts": counts}


# ---------------------------------------------------------------------------
# Filter pipeline


@dataclass(frozen=True)
class FilterRule:
    name: str
    kind: str  # substructure | property-range | similarity-floor
    payload: dict = field(default_factory=dict)


def _to_nx(mol: MolecularGraph) -> nx.Graph:
    g = nx.Graph()
    for i, el in enumerate(mol.elements):
        g.add_node(i, element=el)
    for i, j, order in mol.bonds:
        g.add_edge(i, j, order=order)
    return g


def _pattern_graph(payload) -> nx.Graph:
    g = nx.Graph()
    atoms = payload["atoms"]
    if len(atoms) > MAX_PATTERN_ATOMS:
        raise ValueError(f"pattern exceeds {MAX_PATTERN_ATOMS} atoms")
    for i, el in enumerate(atoms):
        g.add_node(i, element=el)
    for bond in payload["bonds"]:
        i, j = bond[0], bond[1]
        order = bond[2] if len(bond) > 2 else 0  # 0 = any order
        g.add_edge(i, j, order=float(order))
    return g


def _has_substructure(mol_graph: nx.Graph, pattern: nx.Graph) -> bool:
    def node_match(m, p):
        return p["element"] == WILDCARD or m["element"] == p["element"]

    def edge_match(m, p):
        return p["order"] == 0 or m["order"] == p["order"]

    matcher = nx.algorithms.isomorphism.GraphMatcher(
        mol_graph, pattern, node_match=node_match, edge_match=edge_match)
    return matcher.subgraph_is_monomorphic()


def ring_count(mol: MolecularGraph) -> int:
    g = _to_nx(mol)
    return len(nx.cycle_basis(g))


def max_ring_size(mol: MolecularGraph) -> int:
    cycles = nx.cycle_basis(_to_nx(mol))
    return max((len(c) for c in cycles), default=0)


def _property_value(mol: MolecularGraph, name: str) -> float:
    if name == "mw":
        return mol.molecular_weight()
    if name == "heavy_atoms":
        return mol.num_atoms
    if name == "rings":
        return ring_count(mol)
    if name == "max_ring_size":
        return max_ring_size(mol)
    raise ValueError(f"unknown property {name!r}")


def filter_pipeline(mols, rules) -> tuple:
    """Apply ordered filter rules; returns (passed, [(mol, reason), ...])."""
    compiled = []
    for rule in rules:
        if rule.kind == "substructure":
            compiled.append((rule, _pattern_graph(rule.payload)))
        elif rule.kind == "similarity-floor":
            refs = [morgan_fingerprint(m) for m in rule.payload["references"]]
            compiled.append((rule, refs))
        elif rule.kind == "property-range":
            compiled.append((rule, None))
        else:
            raise ValueError(f"unknown rule kind {rule.kind!r}")

    passed, rejected = [], []
    for mol in mols:
        reason = None
        g = None
        fp = None
        for rule, aux in compiled:
            if rule.kind == "substructure":
                if g is None:
                    g = _to_nx(mol)
                if _has_substructure(g, aux):
                    reason = rule.name
                    break
            elif rule.kind == "property-range":
                value = _property_value(mol, rule.payload["property"])
                lo = rule.payload.get("min", -math.inf)
                hi = rule.payload.get("max", math.inf)
                if value < lo:
                    reason = f"{rule.name}: {rule.payload['property']} {value:g} below range"
                    break
                if value > hi:
                    reason = f"{rule.name}: {rule.payload['property']} {value:g} above range"
                    break
            else:
                if fp is None:
                    fp = morgan_fingerprint(mol)
                best = max((tanimoto(fp, r) for r in aux), default=0.0)
                if best < rule.payload["floor"]:
                    reason = f"{rule.name}: max similarity {best:.3f} below floor"
                    break
        if reason is None:
            passed.append(mol)
        else:
            rejected.append((mol, reason))
    return passed, rejected


def default_rules() -> list:
    """Small curated stand-in for external structural-alert catalogs."""
    return [
        FilterRule("three-membered-ring", "substructure", {
            "atoms": [WILDCARD, WILDCARD, WILDCARD],
            "bonds": [[0, 1], [1, 2], [0, 2]],
        }),
        FilterRule("peroxide", "substructure", {
            "atoms": ["O", "O"],
            "bonds": [[0, 1, 1]],
        }),
        FilterRule("azo", "substructure", {
            "atoms": ["N", "N"],
            "bonds": [[0, 1, 2]],
        }),
        FilterRule("macrocycle", "property-range", {
            "property": "max_ring_size", "max": 7,
        }),
    ]
