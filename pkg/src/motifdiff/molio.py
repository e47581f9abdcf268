"""Molecular data model, SDF/PDB ingestion, bond perception and validity checks."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

# Supported element alphabet; the last slot absorbs everything else.
ELEMENTS = ("C", "N", "O", "F", "P", "S", "Cl", "Br", "I", "other")
NUM_ELEMENT_TYPES = len(ELEMENTS)

# Covalent radii in Angstrom (Cordero et al. 2008, single-bond values).
COVALENT_RADII = {
    "H": 0.31, "C": 0.76, "N": 0.71, "O": 0.66, "F": 0.57,
    "P": 1.07, "S": 1.05, "Cl": 1.02, "Br": 1.20, "I": 1.39,
    "B": 0.84, "Si": 1.11, "Se": 1.20,
}
DEFAULT_COVALENT_RADIUS = 1.50
BOND_TOLERANCE = 0.4          # Angstrom slack on the radius-sum cutoff
DOUBLE_BOND_FACTOR = 0.87     # fraction of the single-bond length
TRIPLE_BOND_FACTOR = 0.78
CLASH_DISTANCE = 0.5          # atoms closer than this invalidate a molecule

# Allowed total bond-order sums.  Heavy atoms only; unfilled valence is
# treated as implicit hydrogen, so only exceeding the maximum is an error.
VALENCES = {
    "C": (4,), "N": (3,), "O": (2,), "F": (1,),
    "P": (3, 5), "S": (2, 4, 6), "Cl": (1,), "Br": (1,), "I": (1,),
}

ATOMIC_MASSES = {
    "H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998,
    "P": 30.974, "S": 32.06, "Cl": 35.45, "Br": 79.904, "I": 126.904,
    "B": 10.81, "Si": 28.085, "Se": 78.971,
}

AROMATIC_ORDER = 1.5

AMINO_ACIDS = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
POCKET_FEATURE_DIM = NUM_ELEMENT_TYPES + len(AMINO_ACIDS) + 1


class MoleculeError(ValueError):
    """Raised for malformed molecular inputs."""


class SdfRecordError(MoleculeError):
    def __init__(self, record_index: int, message: str):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


class PocketError(MoleculeError):
    """Raised when pocket extraction fails."""


def element_index(symbol: str) -> int:
    try:
        return ELEMENTS.index(symbol)
    except ValueError:
        return NUM_ELEMENT_TYPES - 1


def element_onehot(symbol: str) -> np.ndarray:
    v = np.zeros(NUM_ELEMENT_TYPES)
    v[element_index(symbol)] = 1.0
    return v


def covalent_radius(symbol: str) -> float:
    return COVALENT_RADII.get(symbol, DEFAULT_COVALENT_RADIUS)


def atomic_mass(symbol: str) -> float:
    return ATOMIC_MASSES.get(symbol, 0.0)


@dataclass(frozen=True)
class MolecularGraph:
    """A ligand: element symbols, 3D coordinates (Angstrom) and typed bonds.

    Bonds are (i, j, order) with i < j, order in {1, 2, 3, 1.5}; 1.5 encodes
    aromatic for valence arithmetic.
    """

    elements: tuple
    coords: np.ndarray
    bonds: tuple
    name: str = ""

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "elements", tuple(self.elements))
        n = len(self.elements)
        if coords.shape[0] != n:
            raise MoleculeError(f"{coords.shape[0]} coordinates for {n} atoms")
        if not np.isfinite(coords).all():
            raise MoleculeError("non-finite coordinates")
        seen = set()
        bonds = []
        for (i, j, order) in self.bonds:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise MoleculeError(f"bad bond endpoints ({i}, {j})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise MoleculeError(f"duplicate bond {key}")
            seen.add(key)
            bonds.append((key[0], key[1], float(order)))
        object.__setattr__(self, "bonds", tuple(bonds))

    @property
    def num_atoms(self) -> int:
        return len(self.elements)

    def type_onehots(self) -> np.ndarray:
        """(n, V) one-hot atom types over the supported alphabet."""
        out = np.zeros((self.num_atoms, NUM_ELEMENT_TYPES))
        for i, el in enumerate(self.elements):
            out[i, element_index(el)] = 1.0
        return out

    def neighbors(self) -> list:
        adj = [[] for _ in range(self.num_atoms)]
        for i, j, order in self.bonds:
            adj[i].append((j, order))
            adj[j].append((i, order))
        return adj

    def molecular_weight(self) -> float:
        """Heavy-atom mass plus implicit hydrogens filling unused valence."""
        adj = self.neighbors()
        mw = 0.0
        for i, el in enumerate(self.elements):
            mw += atomic_mass(el)
            allowed = VALENCES.get(el)
            if allowed:
                used = sum(order for _, order in adj[i])
                free = max(allowed) - used
                if free > 0:
                    mw += round(free) * ATOMIC_MASSES["H"]
        return mw


@dataclass(frozen=True)
class PocketCloud:
    """Protein atoms near a ligand site: the generation condition.

    ``features`` rows are element one-hot (V) followed by residue-type
    one-hot (20 amino acids + other).  ``context`` optionally carries the
    full-chain atoms retained at extraction time.
    """

    elements: tuple
    coords: np.ndarray
    features: np.ndarray
    residues: tuple
    radius: float
    context: tuple = field(default_factory=tuple)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "residues", tuple(self.residues))
        if coords.shape[0] == 0:
            raise PocketError("empty pocket")
        if self.features.shape != (coords.shape[0], POCKET_FEATURE_DIM):
            raise PocketError(
                f"feature shape {self.features.shape} != "
                f"({coords.shape[0]}, {POCKET_FEATURE_DIM})")

    @property
    def num_atoms(self) -> int:
        return self.coords.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.coords.mean(axis=0)


def residue_feature(element: str, residue: str) -> np.ndarray:
    v = np.zeros(POCKET_FEATURE_DIM)
    v[element_index(element)] = 1.0
    try:
        r = AMINO_ACIDS.index(residue.upper())
    except ValueError:
        r = len(AMINO_ACIDS)
    v[NUM_ELEMENT_TYPES + r] = 1.0
    return v


# ---------------------------------------------------------------------------
# SDF / MOL V2000


def _as_text(data) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def parse_sdf(data) -> tuple:
    """Parse MDL SDF/MOL V2000 text into molecules.

    Returns (molecules, errors); a malformed record yields an SdfRecordError
    in ``errors`` and does not abort the remaining records.
    """
    text = _as_text(data)
    if not text.strip():
        return [], []
    records = []
    current = []
    for line in text.splitlines():
        if line.strip() == "$$$$":
            records.append(current)
            current = []
        else:
            current.append(line)
    if any(l.strip() for l in current):
        records.append(current)

    mols, errors = [], []
    for idx, lines in enumerate(records):
        try:
            mols.append(_parse_record(lines, idx))
        except SdfRecordError as exc:
            errors.append(exc)
        except (MoleculeError, ValueError, IndexError) as exc:
            errors.append(SdfRecordError(idx, str(exc)))
    return mols, errors


def _parse_record(lines, idx: int) -> MolecularGraph:
    if len(lines) < 4:
        raise SdfRecordError(idx, "truncated record header")
    name = lines[0].strip()
    counts = lines[3]
    if "V3000" in counts:
        raise SdfRecordError(idx, "V3000 records are not supported")
    try:
        n_atoms = int(counts[0:3])
        n_bonds = int(counts[3:6])
    except ValueError:
        raise SdfRecordError(idx, f"malformed counts line: {counts!r}")
    if n_atoms < 0 or n_bonds < 0 or len(lines) < 4 + n_atoms + n_bonds:
        raise SdfRecordError(idx, "counts exceed record size")

    elements, coords = [], []
    for a in range(n_atoms):
        line = lines[4 + a]
        try:
            x = float(line[0:10])
            y = float(line[10:20])
            z = float(line[20:30])
        except ValueError:
            raise SdfRecordError(idx, f"malformed coordinates on atom {a + 1}")
        symbol = line[31:34].strip()
        if not symbol or not symbol[0].isalpha():
            raise SdfRecordError(idx, f"unknown element {symbol!r} on atom {a + 1}")
        elements.append(symbol)
        coords.append((x, y, z))

    bonds = []
    for b in range(n_bonds):
        line = lines[4 + n_atoms + b]
        try:
            i = int(line[0:3])
            j = int(line[3:6])
            t = int(line[6:9])
        except ValueError:
            raise SdfRecordError(idx, f"malformed bond line {b + 1}")
        if not (1 <= i <= n_atoms and 1 <= j <= n_atoms):
            raise SdfRecordError(idx, "bond index out of range")
        order = AROMATIC_ORDER if t == 4 else float(t)
        bonds.append((i - 1, j - 1, order))

    return MolecularGraph(elements, np.array(coords).reshape(-1, 3), bonds, name)


def emit_sdf(mols, properties=None) -> str:
    """Serialize molecules as V2000 SDF text (fixed-width columns).

    ``properties`` optionally gives one dict of data fields per record.
    """
    out = []
    for rec, mol in enumerate(mols):
        out.append(mol.name)
        out.append("  motifdiff")
        out.append("")
        out.append(f"{mol.num_atoms:3d}{len(mol.bonds):3d}  0  0  0  0  0  0  0  0999 V2000")
        for el, (x, y, z) in zip(mol.elements, mol.coords):
            out.append(f"{x:10.4f}{y:10.4f}{z:10.4f} {el:<3s} 0  0  0  0  0  0  0  0  0  0  0  0")
        for i, j, order in mol.bonds:
            t = 4 if order == AROMATIC_ORDER else int(order)
            out.append(f"{i + 1:3d}{j + 1:3d}{t:3d}  0  0  0  0")
        out.append("M  END")
        if properties and rec < len(properties):
            for key, value in properties[rec].items():
                out.append(f">  <{key}>")
                out.append(str(value))
                out.append("")
        out.append("$$$$")
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# PDB pocket extraction


def parse_pocket_pdb(data, ligand_center, radius: float) -> PocketCloud:
    """Extract protein atoms within ``radius`` of ``ligand_center``.

    Coordinates come from columns 31-54, the element from columns 77-78
    (falling back to the atom-name field).  The full chain is retained as
    context; the in-radius selection forms the pocket.
    """
    if radius <= 0:
        raise PocketError("radius must be positive")
    center = np.asarray(ligand_center, dtype=float).reshape(3)
    text = _as_text(data)
    chain = []
    saw_atom_record = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not (line.startswith("ATOM") or line.startswith("HETATM")):
            continue
        saw_atom_record = True
        try:
            x = float(line[30:38])
            y = float(line[38:46])
            z = float(line[46:54])
        except ValueError:
            raise PocketError(f"line {lineno}: unparseable coordinates")
        element = line[76:78].strip() if len(line) >= 78 else ""
        if not element:
            name = line[12:16].strip()
            element = "".join(c for c in name if c.isalpha())[:1]
        element = element.capitalize()
        residue = line[17:20].strip()
        chain.append((element, residue, (x, y, z)))
    if not saw_atom_record:
        raise PocketError("no ATOM/HETATM records in input")

    selected = [
        (el, res, xyz) for el, res, xyz in chain
        if np.linalg.norm(np.asarray(xyz) - center) <= radius
    ]
    if not selected:
        raise PocketError(f"no atoms within {radius} A of the ligand center")

    elements = [el for el, _, _ in selected]
    residues = [res for _, res, _ in selected]
    coords = np.array([xyz for _, _, xyz in selected])
    features = np.stack([residue_feature(el, res) for el, res, _ in selected])
    return PocketCloud(elements, coords, features, residues, radius, context=tuple(chain))


# ---------------------------------------------------------------------------
# Bond perception


def infer_bonds(coords, elements) -> list:
    """Distance-based bond perception over a bare atom cloud.

    A bond exists when dist <= r_i + r_j + 0.4 A.  A promotion pass upgrades
    to double/triple where the distance falls below 0.87x / 0.78x of the
    radius sum and both valences permit.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 3)
    n = coords.shape[0]
    radii = np.array([covalent_radius(el) for el in elements])
    if n < 2:
        return []
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))

    bonds = {}
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] <= radii[i] + radii[j] + BOND_TOLERANCE:
                bonds[(i, j)] = 1.0

    used = np.zeros(n)
    for (i, j), order in bonds.items():
        used[i] += order
        used[j] += order

    def max_valence(el):
        allowed = VALENCES.get(el)
        return max(allowed) if allowed else float("inf")

    # Promote shortest bonds first so the tightest contacts claim valence.
    for (i, j) in sorted(bonds, key=lambda b: dist[b]):
        single = radii[i] + radii[j]
        target = 1.0
        if dist[i, j] < TRIPLE_BOND_FACTOR * single:
            target = 3.0
        elif dist[i, j] < DOUBLE_BOND_FACTOR * single:
            target = 2.0
        extra = target - bonds[(i, j)]
        if extra > 0 and (
            used[i] + extra <= max_valence(elements[i])
            and used[j] + extra <= max_valence(elements[j])
        ):
            bonds[(i, j)] = target
            used[i] += extra
            used[j] += extra
    return [(i, j, order) for (i, j), order in sorted(bonds.items())]


# ---------------------------------------------------------------------------
# Validity


def check_validity(mol: MolecularGraph) -> tuple:
    """(is_valid, violations): connectivity, valence ceiling, atom clashes."""
    violations = []
    n = mol.num_atoms
    if n == 0:
        return False, ["empty molecule"]

    adj = mol.neighbors()
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j, _ in adj[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    if len(seen) < n:
        violations.append("disconnected")

    for i, el in enumerate(mol.elements):
        allowed = VALENCES.get(el)
        if allowed is None:
            continue
        total = sum(order for _, order in adj[i])
        if total > max(allowed) + 1e-9:
            violations.append(f"valence {total:g} > {max(allowed)} for {el}")

    if n >= 2:
        diff = mol.coords[:, None, :] - mol.coords[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        iu = np.triu_indices(n, k=1)
        dmin = dist[iu].min()
        if dmin < CLASH_DISTANCE:
            violations.append(f"atom clash at {dmin:.3f} A")

    return not violations, violations


# ---------------------------------------------------------------------------
# Canonical hashing


def _h64(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def canonical_hash(mol: MolecularGraph) -> int:
    """Isomorphism-invariant 64-bit digest via neighborhood refinement.

    Labels start from element symbols and are iteratively refined with
    sorted (bond order, neighbor label) multisets; the digest hashes the
    stable label multiset together with canonical edge signatures.
    """
    n = mol.num_atoms
    adj = mol.neighbors()
    labels = [_h64("atom", el) for el in mol.elements]
    # n rounds suffice for the partition to stabilize on any n-atom graph.
    for _ in range(n):
        labels = [
            _h64(labels[i], tuple(sorted((order, labels[j]) for j, order in adj[i])))
            for i in range(n)
        ]
    edge_sigs = sorted(
        (order, min(labels[i], labels[j]), max(labels[i], labels[j]))
        for i, j, order in mol.bonds
    )
    return _h64(tuple(sorted(labels)), tuple(edge_sigs))
