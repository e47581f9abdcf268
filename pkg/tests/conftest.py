"""Shared synthetic fixtures: small idealized molecules and pockets."""

import numpy as np
import pytest

from motifdiff.molio import (
    MolecularGraph,
    PocketCloud,
    infer_bonds,
    residue_feature,
)


def from_cloud(elements, coords, name=""):
    coords = np.asarray(coords, dtype=float)
    return MolecularGraph(elements, coords, infer_bonds(coords, elements), name)


def butane():
    return from_cloud(
        ["C", "C", "C", "C"],
        [[0, 0, 0], [1.54, 0, 0], [2.05, 1.45, 0], [3.59, 1.45, 0]],
        "butane")


def ethanol():
    return from_cloud(
        ["C", "C", "O"],
        [[0, 0, 0], [1.54, 0, 0], [2.0, 1.35, 0]],
        "ethanol")


def cyclobutane():
    return from_cloud(
        ["C", "C", "C", "C"],
        [[0, 0, 0], [1.55, 0, 0], [1.55, 1.55, 0], [0, 1.55, 0]],
        "cyclobutane")


def hexane_ring():
    angles = np.arange(6) * np.pi / 3
    coords = np.stack([1.54 * np.cos(angles), 1.54 * np.sin(angles),
                       np.zeros(6)], axis=1)
    return from_cloud(["C"] * 6, coords, "hexane_ring")


def acetone():
    return from_cloud(
        ["C", "C", "O", "C"],
        [[0, 0, 0], [1.50, 0, 0], [1.95, 1.134, 0], [2.04, -1.34, 0]],
        "acetone")


def toluene_like():
    """Six-ring with one methyl substituent (all carbon)."""
    ring = hexane_ring()
    coords = np.vstack([ring.coords, [3.08, 0, 0]])
    return from_cloud(["C"] * 7, coords, "toluene_like")


def all_fixture_molecules():
    return [butane(), ethanol(), cyclobutane(), hexane_ring(), acetone()]


POCKET_RESIDUES = ("ALA", "GLY", "SER", "LEU", "CYS", "HIS", "ASP", "TYR")
POCKET_ELEMENTS = ("C", "N", "O", "C", "S", "N", "O", "C")


def synthetic_pocket(seed=0, n_atoms=8, radius=10.0, center=(0.0, 0.0, 0.0)):
    """Ring of protein atoms around ``center`` with a seeded jitter."""
    rng = np.random.default_rng(seed)
    angles = np.arange(n_atoms) * 2 * np.pi / n_atoms
    coords = np.stack([
        5.0 * np.cos(angles), 5.0 * np.sin(angles),
        rng.uniform(-1.5, 1.5, n_atoms)], axis=1) + np.asarray(center, float)
    elements = [POCKET_ELEMENTS[i % len(POCKET_ELEMENTS)] for i in range(n_atoms)]
    residues = [POCKET_RESIDUES[(i + seed) % len(POCKET_RESIDUES)]
                for i in range(n_atoms)]
    features = np.stack([residue_feature(e, r)
                         for e, r in zip(elements, residues)])
    return PocketCloud(elements, coords, features, residues, radius)


def training_pairs():
    """Five fixed ligand-pocket pairs, each pocket centered on its ligand."""
    pairs = []
    for i, mol in enumerate(all_fixture_molecules()):
        pocket = synthetic_pocket(seed=i, center=mol.coords.mean(axis=0))
        pairs.append((mol, pocket))
    return pairs


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
