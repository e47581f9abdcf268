"""Motif decomposition, vocabulary construction and the motif-view of a ligand."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .molio import MolecularGraph, canonical_hash, emit_sdf, parse_sdf

#: Sentinel vocabulary ID for fragments missing from the vocabulary.  In
#: one-hot space it occupies the reserved index W, so ID vectors live in
#: R^{W+1}.
OUT_OF_VOCAB = -1

VOCAB_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Motif:
    """One fragment: member atom indices, centroid and vocabulary identity."""

    members: tuple
    centroid: np.ndarray
    digest: int
    vocab_id: int = OUT_OF_VOCAB

    def onehot(self, vocab_size: int) -> np.ndarray:
        v = np.zeros(vocab_size + 1)
        v[self.vocab_id if self.vocab_id != OUT_OF_VOCAB else vocab_size] = 1.0
        return v


@dataclass(frozen=True)
class MotifView:
    """Partition of a molecule's atoms into motifs plus the cut-bond edges."""

    motifs: tuple
    edges: tuple  # (motif_i, motif_j) for every molecular bond crossing the partition

    @property
    def num_motifs(self) -> int:
        return len(self.motifs)

    def centroids(self) -> np.ndarray:
        return np.stack([m.centroid for m in self.motifs])

    def atom_to_motif(self) -> dict:
        return {a: mi for mi, m in enumerate(self.motifs) for a in m.members}


@dataclass(frozen=True)
class VocabEntry:
    digest: int
    exemplar: MolecularGraph
    count: int


class MotifVocabulary:
    """Ordered motif entries; an entry's index is its motif ID."""

    def __init__(self, entries, min_frequency: int = 1):
        self.entries = tuple(entries)
        self.min_frequency = min_frequency
        self._index = {e.digest: i for i, e in enumerate(self.entries)}
        if len(self._index) != len(self.entries):
            raise ValueError("duplicate motif digests in vocabulary")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def size(self) -> int:
        return len(self.entries)

    def lookup(self, digest: int) -> int:
        return self._index.get(digest, OUT_OF_VOCAB)

    def to_json(self) -> str:
        return json.dumps({
            "version": VOCAB_FORMAT_VERSION,
            "min_frequency": self.min_frequency,
            "entries": [
                {
                    "digest": f"{e.digest:016x}",
                    "count": e.count,
                    "sdf": emit_sdf([e.exemplar]),
                }
                for e in self.entries
            ],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MotifVocabulary":
        data = json.loads(text)
        if data.get("version") != VOCAB_FORMAT_VERSION:
            raise ValueError(f"unsupported vocabulary version {data.get('version')!r}")
        entries = []
        for item in data["entries"]:
            mols, errs = parse_sdf(item["sdf"])
            if errs or len(mols) != 1:
                raise ValueError("bad exemplar SDF in vocabulary entry")
            entries.append(VocabEntry(int(item["digest"], 16), mols[0], item["count"]))
        return cls(entries, data.get("min_frequency", 1))


def _ring_info(mol: MolecularGraph):
    """Ring bonds and fused ring-system membership per atom.

    A bond is a ring bond iff removing it leaves its endpoints connected;
    ring systems are components of the ring-bond subgraph.
    """
    n = mol.num_atoms
    adj = mol.neighbors()

    def connected_without(i, j):
        seen = {i}
        stack = [i]
        while stack:
            a = stack.pop()
            for b, _ in adj[a]:
                if (a, b) in ((i, j), (j, i)):
                    continue
                if b == j:
                    return True
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        return False

    ring_bonds = {
        (i, j) for i, j, _ in mol.bonds if connected_without(i, j)
    }
    system = list(range(n))

    def find(a):
        while system[a] != a:
            system[a] = system[system[a]]
            a = system[a]
        return a

    for i, j in ring_bonds:
        system[find(i)] = find(j)
    ring_atoms = {a for b in ring_bonds for a in b}
    system_of = {a: find(a) for a in ring_atoms}
    return ring_bonds, ring_atoms, system_of


def fragment_subgraph(mol: MolecularGraph, members) -> MolecularGraph:
    """Reindexed induced subgraph over ``members`` (sorted order)."""
    members = sorted(members)
    remap = {a: i for i, a in enumerate(members)}
    bonds = [
        (remap[i], remap[j], order)
        for i, j, order in mol.bonds
        if i in remap and j in remap
    ]
    return MolecularGraph(
        [mol.elements[a] for a in members],
        mol.coords[members],
        bonds,
    )


def decompose(mol: MolecularGraph) -> MotifView:
    """Partition a molecule into motifs.

    Rules: (a) every fused ring system is one fragment; (b) an acyclic bond
    between two non-ring atoms is cut when both sides retain >= 2 heavy
    atoms; remaining connected components are the fragments.  Every cut bond
    becomes an inter-motif edge.
    """
    n = mol.num_atoms
    ring_bonds, ring_atoms, system_of = _ring_info(mol)
    adj = mol.neighbors()

    def side_size(start, banned_bond):
        seen = {start}
        stack = [start]
        while stack:
            a = stack.pop()
            for b, _ in adj[a]:
                if (a, b) in (banned_bond, banned_bond[::-1]):
                    continue
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        return len(seen)

    cuts = set()
    for i, j, _ in mol.bonds:
        if (i, j) in ring_bonds:
            continue
        i_ring, j_ring = i in ring_atoms, j in ring_atoms
        if i_ring or j_ring:
            # Bond leaves a ring system (or links two systems): always a cut.
            if not (i_ring and j_ring and system_of[i] == system_of[j]):
                cuts.add((i, j))
        else:
            if side_size(i, (i, j)) >= 2 and side_size(j, (i, j)) >= 2:
                cuts.add((i, j))

    # Components after removing cut bonds.
    comp = [-1] * n
    n_comp = 0
    for start in range(n):
        if comp[start] != -1:
            continue
        comp[start] = n_comp
        stack = [start]
        while stack:
            a = stack.pop()
            for b, _ in adj[a]:
                if (a, b) in cuts or (b, a) in cuts:
                    continue
                if comp[b] == -1:
                    comp[b] = n_comp
                    stack.append(b)
        n_comp += 1

    motifs = []
    for c in range(n_comp):
        members = tuple(a for a in range(n) if comp[a] == c)
        sub = fragment_subgraph(mol, members)
        motifs.append(Motif(
            members=members,
            centroid=mol.coords[list(members)].mean(axis=0),
            digest=canonical_hash(sub),
        ))
    edges = tuple(sorted({
        (min(comp[i], comp[j]), max(comp[i], comp[j])) for i, j in cuts
    }))
    return MotifView(tuple(motifs), edges)


def build_vocabulary(mols, min_frequency: int = 1) -> MotifVocabulary:
    """Decompose a corpus and keep fragments seen >= min_frequency times."""
    if not mols:
        raise ValueError("empty corpus")
    counts = {}
    exemplars = {}
    for mol in mols:
        view = decompose(mol)
        for m in view.motifs:
            counts[m.digest] = counts.get(m.digest, 0) + 1
            if m.digest not in exemplars:
                exemplars[m.digest] = fragment_subgraph(mol, m.members)
    entries = [
        VocabEntry(digest, exemplars[digest], count)
        for digest, count in counts.items()
        if count >= min_frequency
    ]
    entries.sort(key=lambda e: (-e.count, e.digest))
    return MotifVocabulary(entries, min_frequency)


def assign_ids(view: MotifView, vocab: MotifVocabulary) -> MotifView:
    """Look up each motif's digest; misses get the OUT_OF_VOCAB sentinel."""
    motifs = tuple(replace(m, vocab_id=vocab.lookup(m.digest)) for m in view.motifs)
    return MotifView(motifs, view.edges)
