"""Persistence computation against a full boundary-matrix reduction oracle."""

import math
from itertools import combinations

import numpy as np
import pytest

from conftest import random_rotation
from motifdiff.topo import (
    FINGERPRINT_DIM,
    Bar,
    EntropyUndefinedError,
    NormalizationSingularError,
    PersistenceDiagram,
    TopologyError,
    diagram_to_csv,
    fingerprint,
    persistence_entropy,
    rips_persistence,
)


def brute_force_persistence(points, max_filtration):
    """Textbook reduction of the full boundary matrix (dims 0-2) over GF(2)."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    dist = np.sqrt(((points[:, None] - points[None]) ** 2).sum(-1))

    def filt(simplex):
        if len(simplex) == 1:
            return 0.0
        return max(dist[a][b] for a, b in combinations(simplex, 2))

    simplices = []
    for d in range(3):
        for s in combinations(range(n), d + 1):
            f = filt(s)
            if f <= max_filtration:
                simplices.append((f, d, s))
    simplices.sort(key=lambda x: (x[0], x[1], x[2]))
    index = {s: i for i, (_, _, s) in enumerate(simplices)}

    columns = []
    for _, d, s in simplices:
        col = set()
        if d > 0:
            for face in combinations(s, d):
                col.add(index[face])
        columns.append(col)

    low_to_col = {}
    pairs = []
    for j, col in enumerate(columns):
        while col:
            low = max(col)
            if low in low_to_col:
                col ^= columns[low_to_col[low]]
            else:
                break
        columns[j] = col
        if col:
            low = max(col)
            low_to_col[low] = j
            pairs.append((low, j))

    paired = {i for p in pairs for i in p}
    bars = {0: [], 1: []}
    for killed, killer in pairs:
        f_birth, d, _ = simplices[killed]
        f_death = simplices[killer][0]
        if d <= 1 and f_death > f_birth:
            bars[d].append(Bar(f_birth, f_death))
    for i, (f, d, _) in enumerate(simplices):
        if i not in paired and d <= 1:
            # Mirror the library's truncation rule for essential classes.
            if d == 0 or f < max_filtration:
                bars[d].append(Bar(f, max_filtration, essential=True))
    return bars


def as_multiset(bars):
    return sorted((round(b.birth, 9), round(b.death, 9), b.essential)
                  for b in bars)


# ---------------------------------------------------------------------------
# Oracle comparison


def test_matches_brute_force_on_random_point_sets():
    rng = np.random.default_rng(42)
    for trial in range(50):
        n = int(rng.integers(2, 8))
        points = rng.uniform(-2, 2, (n, 3))
        if rng.random() < 0.4:
            points[:, 2] = 0.0  # planar sets produce more 1-cycles
        diameter = np.sqrt(((points[:, None] - points[None]) ** 2).sum(-1)).max()
        max_filt = float(diameter) * 1.05
        diagram = rips_persistence(points, max_filt)
        oracle = brute_force_persistence(points, max_filt)
        for dim in (0, 1):
            assert as_multiset(diagram.all_bars(dim)) == as_multiset(oracle[dim]), \
                f"trial {trial} dim {dim}"


def test_collinear_fixture():
    points = [[0, 0, 0], [1, 0, 0], [3, 0, 0]]
    diagram = rips_persistence(points, 10.0)
    assert as_multiset(diagram.finite(0)) == [(0.0, 1.0, False), (0.0, 2.0, False)]
    essential = [b for b in diagram.all_bars(0) if b.essential]
    assert len(essential) == 1 and essential[0].death == 10.0
    assert diagram.finite(1) == []


def test_unit_square_fixture():
    points = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    diagram = rips_persistence(points, 2.0)
    h1 = diagram.finite(1)
    assert len(h1) == 1
    assert h1[0].birth == pytest.approx(1.0, abs=1e-12)
    assert h1[0].death == pytest.approx(math.sqrt(2), abs=1e-12)
    assert len(diagram.finite(0)) == 3


def test_zero_persistence_bars_dropped():
    points = [[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]]
    diagram = rips_persistence(points, 2.0)
    # The triangle fills the cycle the instant its last edge appears.
    assert all(b.persistence > 0 for b in diagram.finite(1))


def test_input_guards():
    with pytest.raises(TopologyError):
        rips_persistence(np.zeros((0, 3)), 1.0)
    with pytest.raises(TopologyError):
        rips_persistence(np.zeros((2, 3)), 0.0)
    with pytest.raises(TopologyError):
        rips_persistence(np.zeros((2, 3)), 1.0, max_dim=2)
    with pytest.raises(TopologyError, match="guard"):
        rips_persistence(np.zeros((1001, 3)), 1.0)


# ---------------------------------------------------------------------------
# Entropy


def diagram_of(persistences):
    bars = tuple(Bar(0.0, p) for p in persistences)
    return PersistenceDiagram({0: bars}, 100.0)


def test_entropy_fixture_one_two():
    e, e_norm = persistence_entropy(diagram_of([1.0, 2.0]), 0)
    expected = -(1 / 3) * math.log2(1 / 3) - (2 / 3) * math.log2(2 / 3)
    assert e == pytest.approx(expected, abs=1e-12)
    assert e == pytest.approx(0.9183, abs=1e-4)
    assert e_norm == pytest.approx(expected / math.log2(3), abs=1e-12)
    assert e_norm == pytest.approx(0.5794, abs=1e-4)


def test_entropy_fixture_equal_bars():
    e, e_norm = persistence_entropy(diagram_of([1.0, 1.0]), 0)
    assert e == pytest.approx(1.0, abs=1e-12)
    assert e_norm == pytest.approx(1.0, abs=1e-12)


def test_entropy_single_bar_is_zero():
    e, e_norm = persistence_entropy(diagram_of([2.0]), 0)
    assert e == 0.0 and e_norm == 0.0


def test_entropy_error_cases():
    with pytest.raises(EntropyUndefinedError):
        persistence_entropy(diagram_of([]), 0)
    with pytest.raises(EntropyUndefinedError):
        persistence_entropy(diagram_of([1.0]), 1)  # no bars in that dim
    with pytest.raises(NormalizationSingularError):
        persistence_entropy(diagram_of([1.0]), 0)  # total persistence 1
    with pytest.raises(NormalizationSingularError):
        persistence_entropy(diagram_of([0.5, 0.5]), 0)


# ---------------------------------------------------------------------------
# Fingerprint


def test_fingerprint_collinear_fixture():
    fp = fingerprint([[0, 0, 0], [1, 0, 0], [3, 0, 0]])
    assert fp.shape == (FINGERPRINT_DIM,)
    assert fp[0] == pytest.approx(0.5794, abs=1e-4)  # H0 normalized entropy
    assert fp[1] == pytest.approx(3.0)               # total persistence
    assert fp[2] == pytest.approx(2.0)               # max persistence
    assert fp[3] == 2.0                              # finite-bar count
    assert np.all(fp[4:] == 0.0)                     # no finite H1 bars


def test_fingerprint_isometry_invariant(rng):
    points = rng.uniform(-3, 3, (12, 3))
    fp = fingerprint(points)
    for _ in range(5):
        moved = points @ random_rotation(rng).T + rng.standard_normal(3)
        assert np.allclose(fingerprint(moved), fp, atol=1e-8)


def test_fingerprint_stable_under_small_perturbation(rng):
    points = rng.uniform(-3, 3, (10, 3))
    fp = fingerprint(points, max_filtration=10.0)
    jittered = points + 1e-7 * rng.standard_normal(points.shape)
    assert np.allclose(fingerprint(jittered, max_filtration=10.0), fp, atol=1e-4)


def test_fingerprint_needs_two_points():
    with pytest.raises(TopologyError):
        fingerprint([[0, 0, 0]])


def test_diagram_csv_layout():
    diagram = rips_persistence([[0, 0, 0], [1, 0, 0]], 5.0)
    csv = diagram_to_csv(diagram)
    lines = csv.strip().splitlines()
    assert lines[0] == "dim,birth,death,essential"
    assert lines[1] == "0,0,1,0"
