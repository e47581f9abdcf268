"""Hierarchical equivariant denoiser over ligand atoms, motifs and pocket atoms."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .molio import NUM_ELEMENT_TYPES, POCKET_FEATURE_DIM
from .topo import FINGERPRINT_DIM

# Node kinds.
LIGAND_ATOM, MOTIF, POCKET_ATOM, PROTEIN_ATOM = 0, 1, 2, 3
NUM_KINDS = 4
# Edge types: 16 ordered kind pairs plus two dedicated cross-view types.
EDGE_ATOM_TO_MOTIF = NUM_KINDS * NUM_KINDS
EDGE_MOTIF_TO_ATOM = EDGE_ATOM_TO_MOTIF + 1
NUM_EDGE_TYPES = EDGE_MOTIF_TO_ATOM + 1

TIME_EMBED_DIM = 16

CHECKPOINT_MAGIC = b"MDFF"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite intermediate during a forward pass."""


@dataclass
class HeteroGraph:
    """k-NN graph over all nodes plus unconditional cross-view edges.

    ``receivers[e]`` aggregates the message along edge e from ``senders[e]``.
    Pocket/protein coordinates are never updated (``mutable`` false).
    """

    kinds: torch.Tensor       # (n,) long
    coords: torch.Tensor      # (n, 3)
    mutable: torch.Tensor     # (n,) bool
    receivers: torch.Tensor   # (E,) long
    senders: torch.Tensor     # (E,) long
    edge_types: torch.Tensor  # (E,) long
    ligand_index: torch.Tensor
    motif_index: torch.Tensor
    pocket_index: torch.Tensor
    k_clamped: bool = False

    @property
    def num_nodes(self) -> int:
        return self.kinds.shape[0]


def build_graph(ligand_coords, motif_coords, pocket_coords, atom_to_motif, k: int,
                dtype=torch.float64) -> HeteroGraph:
    """Assemble the heterogeneous graph for one denoising step.

    Every node gets directed edges from its k nearest neighbors (ties broken
    by lower index); each ligand atom additionally links to its containing
    motif and vice versa.  k is clamped to n-1 with a warning flag.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    parts, kinds = [], []
    for coords, kind in ((ligand_coords, LIGAND_ATOM), (motif_coords, MOTIF),
                         (pocket_coords, POCKET_ATOM)):
        arr = torch.as_tensor(np.asarray(coords, dtype=float).reshape(-1, 3), dtype=dtype)
        parts.append(arr)
        kinds.extend([kind] * arr.shape[0])
    coords = torch.cat(parts, dim=0)
    n = coords.shape[0]
    if n < 2:
        raise ValueError("need at least 2 nodes")
    kinds = torch.tensor(kinds, dtype=torch.long)
    n_lig, n_mot = parts[0].shape[0], parts[1].shape[0]
    ligand_index = torch.arange(0, n_lig)
    motif_index = torch.arange(n_lig, n_lig + n_mot)
    pocket_index = torch.arange(n_lig + n_mot, n)

    clamped = False
    if k >= n:
        k = n - 1
        clamped = True

    dist = torch.cdist(coords, coords)
    dist.fill_diagonal_(float("inf"))
    # Stable tie-break on lower sender index: add an index-proportional
    # epsilon far below any coordinate resolution.
    order = torch.argsort(dist + torch.arange(n, dtype=dtype) * 1e-12, dim=1, stable=True)
    nearest = order[:, :k]

    receivers = torch.arange(n).repeat_interleave(k)
    senders = nearest.reshape(-1)
    edge_types = kinds[receivers] * NUM_KINDS + kinds[senders]

    extra_r, extra_s, extra_t = [], [], []
    for atom, motif in atom_to_motif.items():
        a, m = int(atom), n_lig + int(motif)
        extra_r.append(m)
        extra_s.append(a)
        extra_t.append(EDGE_ATOM_TO_MOTIF)
        extra_r.append(a)
        extra_s.append(m)
        extra_t.append(EDGE_MOTIF_TO_ATOM)
    if extra_r:
        receivers = torch.cat([receivers, torch.tensor(extra_r)])
        senders = torch.cat([senders, torch.tensor(extra_s)])
        edge_types = torch.cat([edge_types, torch.tensor(extra_t)])

    mutable = kinds < POCKET_ATOM
    return HeteroGraph(kinds, coords, mutable, receivers, senders, edge_types,
                       ligand_index, motif_index, pocket_index, clamped)


@dataclass
class DenoiserOutput:
    coords: torch.Tensor        # (n, 3) updated coordinates (immutable rows unchanged)
    atom_logits: torch.Tensor   # (n_ligand, V)
    motif_logits: torch.Tensor  # (n_motif, W + 1)


def time_embedding(t: float, horizon: int, dtype=torch.float64) -> torch.Tensor:
    half = TIME_EMBED_DIM // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype) / half
    )
    angles = (t / horizon) * 1000.0 * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)])


def _mlp(sizes, zero_last=False):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers.append(nn.Linear(a, b))
        layers.append(nn.SiLU())
    layers = layers[:-1]
    if zero_last:
        nn.init.zeros_(layers[-1].weight)
        nn.init.zeros_(layers[-1].bias)
    return nn.Sequential(*layers)


class Denoiser(nn.Module):
    """Reverse network: message passing with equivariant coordinate updates.

    Coordinate updates use the standard equivariant form
    dx_i = sum_j (x_i - x_j) / (d_ij + 1) * s_ij with s_ij a scalar network
    of invariant inputs, so rigid motions of the input rigidly move the
    output while logits stay invariant.
    """

    def __init__(self, hidden_dim: int = 64, num_layers: int = 4,
                 vocab_size: int = 0, horizon: int = 1000,
                 num_atom_types: int = NUM_ELEMENT_TYPES,
                 pocket_feature_dim: int = POCKET_FEATURE_DIM):
        super().__init__()
        if num_layers < 1:
            raise ValueError("need at least one layer")
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.vocab_size = vocab_size
        self.horizon = horizon
        self.num_atom_types = num_atom_types
        self.pocket_feature_dim = pocket_feature_dim

        h = hidden_dim
        self.atom_embed = nn.Linear(num_atom_types, h)
        self.motif_embed = nn.Linear(vocab_size + 1, h)
        self.pocket_embed = nn.Linear(pocket_feature_dim, h)
        self.kind_embed = nn.Embedding(NUM_KINDS, h)
        self.fp_proj = nn.Linear(FINGERPRINT_DIM, h)
        self.null_condition = nn.Parameter(torch.zeros(h))

        mes_in = 2 * h + NUM_EDGE_TYPES + TIME_EMBED_DIM + 1
        self.message_nets = nn.ModuleList(
            [_mlp([mes_in, h, h]) for _ in range(num_layers)])
        self.feature_nets = nn.ModuleList(
            [_mlp([2 * h, h, h]) for _ in range(num_layers)])
        self.coord_nets = nn.ModuleList(
            [_mlp([h, h, 1], zero_last=True) for _ in range(num_layers)])
        self.atom_head = _mlp([h, h, num_atom_types])
        self.motif_head = _mlp([h, h, vocab_size + 1])
        self.double()

    def initial_embeddings(self, graph: HeteroGraph, atom_types, motif_ids,
                           pocket_features, ligand_fp, pocket_fp,
                           conditioned: bool) -> torch.Tensor:
        h = torch.zeros(graph.num_nodes, self.hidden_dim, dtype=torch.float64)
        h[graph.ligand_index] = self.atom_embed(atom_types)
        if graph.motif_index.numel():
            h[graph.motif_index] = self.motif_embed(motif_ids)
        if graph.pocket_index.numel():
            if conditioned:
                h[graph.pocket_index] = self.pocket_embed(pocket_features)
            else:
                h[graph.pocket_index] = self.null_condition.expand(
                    graph.pocket_index.numel(), -1)
        h = h + self.kind_embed(graph.kinds)
        fp_l = self.fp_proj(torch.as_tensor(ligand_fp, dtype=torch.float64))
        fp_p = self.fp_proj(torch.as_tensor(pocket_fp, dtype=torch.float64))
        entity_fp = torch.where(
            (graph.kinds < POCKET_ATOM).unsqueeze(1), fp_l, fp_p)
        return h + entity_fp

    def forward(self, graph: HeteroGraph, atom_types, motif_ids,
                pocket_features, t: int, ligand_fp, pocket_fp,
                conditioned: bool = True) -> DenoiserOutput:
        atom_types = torch.as_tensor(atom_types, dtype=torch.float64)
        motif_ids = torch.as_tensor(motif_ids, dtype=torch.float64)
        if pocket_features is not None:
            pocket_features = torch.as_tensor(pocket_features, dtype=torch.float64)
        h = self.initial_embeddings(graph, atom_types, motif_ids,
                                    pocket_features, ligand_fp, pocket_fp,
                                    conditioned)
        x = graph.coords.clone()
        recv, send = graph.receivers, graph.senders
        e_onehot = torch.zeros(recv.shape[0], NUM_EDGE_TYPES, dtype=torch.float64)
        e_onehot[torch.arange(recv.shape[0]), graph.edge_types] = 1.0
        t_emb = time_embedding(t, self.horizon).expand(recv.shape[0], -1)
        mut = graph.mutable.unsqueeze(1)

        for layer in range(self.num_layers):
            rel = x[recv] - x[send]
            dist = rel.norm(dim=1, keepdim=True)
            mes = self.message_nets[layer](
                torch.cat([h[recv], h[send], e_onehot, t_emb, dist], dim=1))
            agg = torch.zeros_like(h).index_add_(0, recv, mes)
            h = h + self.feature_nets[layer](torch.cat([h, agg], dim=1))
            scalars = self.coord_nets[layer](mes)
            delta = torch.zeros_like(x).index_add_(
                0, recv, rel / (dist + 1.0) * scalars)
            x = torch.where(mut, x + delta, x)
            if not (torch.isfinite(h).all() and torch.isfinite(x).all()):
                raise NumericError(f"non-finite values after layer {layer}")

        atom_logits = self.atom_head(h[graph.ligand_index])
        motif_logits = self.motif_head(h[graph.motif_index])
        if not (torch.isfinite(atom_logits).all() and torch.isfinite(motif_logits).all()):
            raise NumericError("non-finite head outputs")
        return DenoiserOutput(x, atom_logits, motif_logits)


# ---------------------------------------------------------------------------
# Versioned binary checkpoint


def save_checkpoint(path, model: Denoiser, horizon: int | None = None) -> None:
    """Header (magic, version, H, L, V, W, T) then f32 little-endian blobs
    in sorted state-dict order."""
    horizon = model.horizon if horizon is None else horizon
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(
            "<6I", CHECKPOINT_VERSION, model.hidden_dim, model.num_layers,
            model.num_atom_types, model.vocab_size, horizon))
        state = model.state_dict()
        for name in sorted(state):
            blob = state[name].detach().cpu().numpy().astype("<f4")
            fh.write(blob.tobytes())


def load_checkpoint(path) -> Denoiser:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a denoiser checkpoint")
        version, hidden, layers, v, w, horizon = struct.unpack("<6I", fh.read(24))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = Denoiser(hidden_dim=hidden, num_layers=layers, vocab_size=w,
                         horizon=horizon, num_atom_types=v)
        state = model.state_dict()
        new_state = {}
        for name in sorted(state):
            shape = state[name].shape
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(4 * count)
            if len(blob) != 4 * count:
                raise ValueError("truncated checkpoint")
            arr = np.frombuffer(blob, dtype="<f4").reshape(shape)
            new_state[name] = torch.tensor(arr.astype(np.float64))
        trailing = fh.read(1)
        if trailing:
            raise ValueError("trailing bytes in checkpoint")
    model.load_state_dict(new_state)
    return model
