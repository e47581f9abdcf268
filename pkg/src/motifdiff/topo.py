"""Vietoris-Rips persistence, persistence entropy and topological fingerprints."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

MAX_POINTS = 1000
FINGERPRINT_DIM = 8  # [E_norm, total, max, count] per homology dimension 0 and 1


class TopologyError(ValueError):
    pass


class EntropyUndefinedError(TopologyError):
    """No finite-persistence bars in the requested dimension."""


class NormalizationSingularError(TopologyError):
    """Total persistence is 1, so log2-normalization divides by zero."""


@dataclass(frozen=True)
class Bar:
    birth: float
    death: float
    essential: bool = False

    @property
    def persistence(self) -> float:
        return self.death - self.birth


@dataclass(frozen=True)
class PersistenceDiagram:
    """Birth-death pairs per homology dimension (0: components, 1: cycles).

    Essential classes are truncated at ``max_filtration`` and flagged.
    """

    bars: dict  # dim -> tuple of Bar
    max_filtration: float

    def finite(self, dim: int) -> list:
        return [b for b in self.bars.get(dim, ()) if not b.essential]

    def all_bars(self, dim: int) -> tuple:
        return self.bars.get(dim, ())


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def rips_persistence(points, max_filtration: float, max_dim: int = 1) -> PersistenceDiagram:
    """Persistence of the Vietoris-Rips filtration on Euclidean distance.

    H0 is computed with union-find over distance-sorted edges, H1 by column
    reduction of the triangle boundary matrix; both agree with full
    boundary-matrix reduction.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = points.shape[0]
    if n < 1:
        raise TopologyError("need at least one point")
    if n > MAX_POINTS:
        raise TopologyError(f"{n} points exceeds the {MAX_POINTS}-point guard")
    if max_filtration <= 0:
        raise TopologyError("max_filtration must be positive")
    if max_dim not in (0, 1):
        raise TopologyError("max_dim must be 0 or 1")

    dist = _pairwise_distances(points)
    edges = sorted(
        ((dist[i, j], i, j) for i in range(n) for j in range(i + 1, n)
         if dist[i, j] <= max_filtration),
        key=lambda e: (e[0], e[1], e[2]),
    )

    # --- H0: union-find; the younger component dies when an edge merges two.
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    h0 = []
    negative = [False] * len(edges)
    for idx, (d, i, j) in enumerate(edges):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
            negative[idx] = True
            h0.append(Bar(0.0, d))
    n_components = len({find(a) for a in range(n)})
    h0.extend(Bar(0.0, max_filtration, essential=True) for _ in range(n_components))
    bars = {0: tuple(h0)}

    # --- H1: reduce triangle columns against cycle-creating edges.
    if max_dim >= 1:
        edge_index = {(i, j): idx for idx, (_, i, j) in enumerate(edges)}
        triangles = sorted(
            ((max(dist[a, b], dist[a, c], dist[b, c]), a, b, c)
             for a, b, c in combinations(range(n), 3)
             if max(dist[a, b], dist[a, c], dist[b, c]) <= max_filtration),
            key=lambda t: (t[0], t[1], t[2], t[3]),
        )
        paired = {}      # low edge index -> reduced column (bitmask)
        killed = set()   # edge indices whose cycle class has died
        h1 = []
        for filt, a, b, c in triangles:
            col = (1 << edge_index[(a, b)]) | (1 << edge_index[(a, c)]) | (1 << edge_index[(b, c)])
            while col:
                low = col.bit_length() - 1
                if low in paired:
                    col ^= paired[low]
                else:
                    break
            if col:
                low = col.bit_length() - 1
                paired[low] = col
                killed.add(low)
                birth = edges[low][0]
                if filt > birth:
                    h1.append(Bar(birth, filt))
        for idx, (d, _, _) in enumerate(edges):
            if not negative[idx] and idx not in killed and d < max_filtration:
                h1.append(Bar(d, max_filtration, essential=True))
        h1.sort(key=lambda b: (b.birth, b.death))
        bars[1] = tuple(h1)
    return PersistenceDiagram(bars, max_filtration)


def persistence_entropy(diagram: PersistenceDiagram, dim: int) -> tuple:
    """(E, E_norm) over the finite bars of one dimension.

    E is the Shannon entropy of normalized bar persistences and E_norm
    divides by log2 of the total persistence.
    """
    pers = [b.persistence for b in diagram.finite(dim)]
    if not pers:
        raise EntropyUndefinedError(f"no finite bars in dimension {dim}")
    total = sum(pers)
    entropy = -sum(
        (p / total) * math.log2(p / total) for p in pers if p > 0
    )
    log_total = math.log2(total)
    if log_total == 0.0:
        raise NormalizationSingularError("total persistence is 1")
    return entropy, entropy / log_total


def fingerprint(points, max_filtration: float | None = None) -> np.ndarray:
    """Fixed-length topological fingerprint of a point cloud.

    Per homology dimension 0 and 1: [normalized entropy, total persistence,
    max persistence, finite-bar count].  Dimensions without finite bars (and
    entropy singularities) contribute zeros.  The default filtration ceiling
    is the cloud diameter, keeping the vector isometry-invariant.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] < 2:
        raise TopologyError("need at least two points")
    if max_filtration is None:
        max_filtration = float(_pairwise_distances(points).max())
        if max_filtration <= 0:
            max_filtration = 1.0
    diagram = rips_persistence(points, max_filtration, max_dim=1)
    out = np.zeros(FINGERPRINT_DIM)
    for block, dim in enumerate((0, 1)):
        finite = diagram.finite(dim)
        pers = [b.persistence for b in finite]
        if not pers:
            continue
        try:
            _, e_norm = persistence_entropy(diagram, dim)
        except TopologyError:
            e_norm = 0.0
        base = 4 * block
        out[base] = e_norm
        out[base + 1] = sum(pers)
        out[base + 2] = max(pers)
        out[base + 3] = len(pers)
    return out


def diagram_to_csv(diagram: PersistenceDiagram) -> str:
    lines = ["dim,birth,death,essential"]
    for dim in sorted(diagram.bars):
        for b in diagram.all_bars(dim):
            lines.append(f"{dim},{b.birth:.9g},{b.death:.9g},{int(b.essential)}")
    return "\n".join(lines) + "\n"
