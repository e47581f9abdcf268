"""Similarity, geometry and set-level evaluation metrics."""

import math

import numpy as np
import pytest

from conftest import (
    all_fixture_molecules,
    butane,
    cyclobutane,
    ethanol,
    from_cloud,
    hexane_ring,
    toluene_like,
)
from motifdiff.molio import MolecularGraph
from motifdiff.metrics import (
    BitFingerprint,
    FilterRule,
    angle_kl,
    default_rules,
    filter_pipeline,
    morgan_fingerprint,
    npr_descriptors,
    pattern_values,
    rmsd,
    scaffold,
    scaffold_hash,
    set_metrics,
    tanimoto,
)


# ---------------------------------------------------------------------------
# Fingerprints and similarity


def test_morgan_fingerprint_permutation_invariant():
    mol = butane()
    perm = [2, 0, 3, 1]
    inverse = {old: new for new, old in enumerate(perm)}
    relabeled = MolecularGraph(
        [mol.elements[p] for p in perm], mol.coords[perm],
        [(inverse[i], inverse[j], o) for i, j, o in mol.bonds])
    assert morgan_fingerprint(mol).bits == morgan_fingerprint(relabeled).bits


def test_tanimoto_identity_and_bounds():
    fps = [morgan_fingerprint(m) for m in all_fixture_molecules()]
    for fp in fps:
        assert tanimoto(fp, fp) == 1.0
    for a in fps:
        for b in fps:
            assert 0.0 <= tanimoto(a, b) <= 1.0


def test_tanimoto_known_overlap():
    a = BitFingerprint(frozenset({1, 2, 3}))
    b = BitFingerprint(frozenset({2, 3, 4, 5}))
    assert tanimoto(a, b) == pytest.approx(2 / 5)
    assert tanimoto(BitFingerprint(frozenset()), BitFingerprint(frozenset())) == 1.0


def test_similar_molecules_score_higher():
    bu, ring = morgan_fingerprint(butane()), morgan_fingerprint(hexane_ring())
    et = morgan_fingerprint(ethanol())
    assert tanimoto(bu, et) > tanimoto(bu, ring) or tanimoto(bu, et) == 0.0


# ---------------------------------------------------------------------------
# Geometry


def test_rmsd_translation_exact(rng):
    coords = rng.uniform(-5, 5, (8, 3))
    shift = np.array([1.0, -2.0, 3.0])
    assert rmsd(coords, coords + shift) == pytest.approx(np.linalg.norm(shift),
                                                         abs=1e-12)
    assert rmsd(coords, coords) == 0.0


def test_rmsd_shape_mismatch():
    with pytest.raises(ValueError):
        rmsd(np.zeros((3, 3)), np.zeros((4, 3)))


def test_npr_linear_fixture():
    mol = from_cloud(["C"] * 4,
                     [[0, 0, 0], [1.5, 0, 0], [3.0, 0, 0], [4.5, 0, 0]])
    i1, i2 = npr_descriptors(mol)
    assert i1 == pytest.approx(0.0, abs=1e-9)
    assert i2 == pytest.approx(1.0, abs=1e-9)


def test_npr_equilateral_triangle_fixture():
    mol = MolecularGraph(
        ["C"] * 3,
        [[0, 0, 0], [1.5, 0, 0], [0.75, 1.5 * math.sqrt(3) / 2, 0]], [])
    i1, i2 = npr_descriptors(mol)
    assert i1 == pytest.approx(0.5, abs=1e-9)
    assert i2 == pytest.approx(0.5, abs=1e-9)


def test_npr_tetrahedron_fixture():
    verts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    mol = MolecularGraph(["C"] * 4, verts, [])
    i1, i2 = npr_descriptors(mol)
    assert i1 == pytest.approx(1.0, abs=1e-9)
    assert i2 == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Pattern matching and angle KL


def test_pattern_values_angle():
    values, size = pattern_values([ethanol()], "CCO")
    assert size == 3
    assert len(values) == 1
    a, b, c = ethanol().coords
    cos = np.dot(a - b, c - b) / (np.linalg.norm(a - b) * np.linalg.norm(c - b))
    assert values[0] == pytest.approx(math.degrees(math.acos(cos)), abs=1e-9)


def test_pattern_values_dihedral():
    values, size = pattern_values([butane()], "CCCC")
    assert size == 4
    assert len(values) == 1
    assert values[0] == pytest.approx(180.0, abs=1e-6)  # planar zig-zag


def test_pattern_no_duplicate_reversed_paths():
    values, _ = pattern_values([butane()], "CCC")
    assert len(values) == 2  # angles at the two inner carbons only


def test_angle_kl_self_comparison_near_zero():
    mols = all_fixture_molecules()
    kl, omitted = angle_kl(mols, mols, ("CCC", "CCO", "CCCC", "CC=O"))
    assert kl and all(v <= 1e-9 for v in kl.values())
    for pattern in omitted:
        assert pattern_values(mols, pattern)[0] == []


def test_angle_kl_reports_unmatched_patterns():
    kl, omitted = angle_kl([butane()], [butane()], ("CCC", "NNN"))
    assert "NNN" in omitted and "CCC" in kl


def test_angle_kl_rejects_empty_sets():
    with pytest.raises(ValueError):
        angle_kl([], [butane()], ("CCC",))


# ---------------------------------------------------------------------------
# Scaffolds and set metrics


def test_scaffold_strips_to_ring():
    scaf = scaffold(toluene_like())
    assert scaf.num_atoms == 6
    assert scaffold_hash(toluene_like()) == scaffold_hash(hexane_ring())


def test_scaffold_of_acyclic_molecule_is_empty():
    assert scaffold(butane()).num_atoms == 0


def test_set_metrics_self_novelty_zero():
    mols = all_fixture_molecules()
    hashes = {scaffold_hash(m) for m in mols}
    report = set_metrics(mols, hashes, set())
    assert report["validity"] == 1.0
    assert report["uniqueness"] == 1.0
    assert report["novelty"] == 0.0
    assert 0.0 <= report["diversity"] <= 1.0


def test_set_metrics_empty_and_degenerate():
    empty = set_metrics([])
    assert empty["validity"] is None
    broken = MolecularGraph(["C", "C"], [[0, 0, 0], [0.1, 0, 0]], [(0, 1, 1)])
    report = set_metrics([broken])
    assert report["validity"] == 0.0 and report["uniqueness"] is None


# ---------------------------------------------------------------------------
# Filter pipeline


def test_three_ring_rule_rejects_cyclopropane():
    side = 1.5
    cyclopropane = from_cloud(
        ["C"] * 3,
        [[0, 0, 0], [side, 0, 0], [side / 2, side * math.sqrt(3) / 2, 0]])
    passed, rejected = filter_pipeline([cyclopropane, butane()], default_rules())
    assert butane() .elements  # butane survives
    assert len(passed) == 1 and passed[0].name == "butane"
    assert rejected[0][1] == "three-membered-ring"


def test_property_range_rule():
    rule = FilterRule("size", "property-range",
                      {"property": "heavy_atoms", "min": 4, "max": 10})
    passed, rejected = filter_pipeline([butane(), ethanol()], [rule])
    assert [m.name for m in passed] == ["butane"]
    assert "below range" in rejected[0][1]


def test_similarity_floor_rule():
    rule = FilterRule("known-like", "similarity-floor",
                      {"references": [butane()], "floor": 0.9})
    passed, rejected = filter_pipeline([butane(), hexane_ring()], [rule])
    assert [m.name for m in passed] == ["butane"]
    assert "below floor" in rejected[0][1]


def test_substructure_wildcards_and_order():
    peroxide = from_cloud(["C", "O", "O", "C"],
                          [[0, 0, 0], [1.4, 0, 0], [1.9, 1.35, 0], [3.3, 1.35, 0]])
    passed, rejected = filter_pipeline([peroxide], default_rules())
    assert not passed and "peroxide" in rejected[0][1]


def test_unknown_rule_kind_rejected():
    with pytest.raises(ValueError):
        filter_pipeline([butane()], [FilterRule("x", "nonsense", {})])
