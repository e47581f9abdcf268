"""Graph construction, equivariance properties and gradient correctness."""

import numpy as np
import pytest
import torch

from conftest import random_rotation, synthetic_pocket, training_pairs
from motifdiff.denoiser import (
    EDGE_ATOM_TO_MOTIF,
    EDGE_MOTIF_TO_ATOM,
    Denoiser,
    NumericError,
    build_graph,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
)
from motifdiff.diffusion import TrainConfig, batch_loss, make_schedule, prepare_pair
from motifdiff.motifs import build_vocabulary
from motifdiff.topo import FINGERPRINT_DIM


def small_setup(seed=0, n_atoms=4, n_motifs=2, n_pocket=5, hidden=16, layers=2,
                vocab=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, (n_atoms, 3))
    c = rng.uniform(-2, 2, (n_motifs, 3))
    p = rng.uniform(-4, 4, (n_pocket, 3))
    a2m = {i: i % n_motifs for i in range(n_atoms)}
    v = np.eye(10)[rng.integers(0, 10, n_atoms)]
    w = np.eye(vocab + 1)[rng.integers(0, vocab + 1, n_motifs)]
    feats = np.zeros((n_pocket, 31))
    feats[np.arange(n_pocket), rng.integers(0, 10, n_pocket)] = 1.0
    feats[np.arange(n_pocket), 10 + rng.integers(0, 21, n_pocket)] = 1.0
    fp_l = rng.uniform(0, 2, FINGERPRINT_DIM)
    fp_p = rng.uniform(0, 2, FINGERPRINT_DIM)
    torch.manual_seed(seed)
    model = Denoiser(hidden_dim=hidden, num_layers=layers, vocab_size=vocab,
                     horizon=50)
    return model, (x, c, p, a2m, v, w, feats, fp_l, fp_p)


def run(model, data, t=7, conditioned=True, k=4):
    x, c, p, a2m, v, w, feats, fp_l, fp_p = data
    graph = build_graph(x, c, p, a2m, k)
    with torch.no_grad():
        return graph, model(graph, v, w, feats, t, fp_l, fp_p, conditioned)


# ---------------------------------------------------------------------------
# Graph construction


def test_build_graph_layout_and_cross_edges():
    _, data = small_setup()
    x, c, p, a2m = data[:4]
    graph = build_graph(x, c, p, a2m, 3)
    n = len(x) + len(c) + len(p)
    assert graph.num_nodes == n
    assert graph.receivers.shape == graph.senders.shape == graph.edge_types.shape
    # Each node emits k incoming edges plus two per atom-motif membership.
    assert graph.receivers.shape[0] == n * 3 + 2 * len(a2m)
    assert (graph.edge_types == EDGE_ATOM_TO_MOTIF).sum() == len(a2m)
    assert (graph.edge_types == EDGE_MOTIF_TO_ATOM).sum() == len(a2m)
    assert not graph.mutable[graph.pocket_index].any()
    assert graph.mutable[graph.ligand_index].all()
    assert not graph.k_clamped


def test_build_graph_clamps_k():
    graph = build_graph(np.zeros((1, 3)), np.ones((1, 3)) , np.zeros((0, 3)),
                        {0: 0}, 8)
    assert graph.k_clamped


def test_build_graph_rejects_bad_k():
    with pytest.raises(ValueError):
        build_graph(np.zeros((2, 3)), np.zeros((0, 3)), np.zeros((0, 3)), {}, 0)


def test_time_embedding_shape_and_variation():
    a = time_embedding(1, 100)
    b = time_embedding(99, 100)
    assert a.shape == b.shape == (16,)
    assert not torch.allclose(a, b)


# ---------------------------------------------------------------------------
# Structural properties of the forward pass


def test_zero_initialized_coordinate_update_is_identity():
    model, data = small_setup()
    graph, out = run(model, data)
    # Coordinate nets start at zero, so untrained coords pass through.
    assert torch.allclose(out.coords, graph.coords, atol=0)


def test_pocket_rows_never_move():
    model, data = small_setup()
    for p in model.parameters():
        p.data.add_(0.05 * torch.randn_like(p))
    graph, out = run(model, data)
    assert torch.allclose(out.coords[graph.pocket_index],
                          graph.coords[graph.pocket_index], atol=0)


def test_rigid_motion_equivariance():
    model, data = small_setup()
    for p in model.parameters():
        p.data.add_(0.05 * torch.randn_like(p))
    x, c, p_, a2m, v, w, feats, fp_l, fp_p = data
    _, out = run(model, data)
    rng = np.random.default_rng(3)
    for _ in range(10):
        R = random_rotation(rng)
        t = rng.uniform(-5, 5, 3)
        moved = (x @ R.T + t, c @ R.T + t, p_ @ R.T + t, a2m, v, w, feats,
                 fp_l, fp_p)
        _, out_m = run(model, moved)
        expected = out.coords.numpy() @ R.T + t
        assert np.allclose(out_m.coords.numpy(), expected, rtol=1e-5, atol=1e-8)
        assert torch.allclose(out_m.atom_logits, out.atom_logits, rtol=1e-9, atol=1e-9)
        assert torch.allclose(out_m.motif_logits, out.motif_logits, rtol=1e-9, atol=1e-9)


def test_ligand_permutation_equivariance():
    model, data = small_setup(n_atoms=5)
    for p in model.parameters():
        p.data.add_(0.05 * torch.randn_like(p))
    x, c, p_, a2m, v, w, feats, fp_l, fp_p = data
    _, out = run(model, data)
    perm = np.array([3, 0, 4, 1, 2])
    permuted = (x[perm], c, p_, {i: a2m[int(perm[i])] for i in range(len(perm))},
                v[perm], w, feats, fp_l, fp_p)
    _, out_p = run(model, permuted)
    assert np.allclose(out_p.coords[:5].numpy(), out.coords[perm].numpy(),
                       atol=1e-10)
    assert np.allclose(out_p.atom_logits.numpy(), out.atom_logits[perm].numpy(),
                       atol=1e-10)


def test_conditioning_changes_output():
    model, data = small_setup()
    _, cond = run(model, data, conditioned=True)
    _, uncond = run(model, data, conditioned=False)
    assert not torch.allclose(cond.atom_logits, uncond.atom_logits)


def test_nonfinite_inputs_raise():
    model, data = small_setup()
    x = data[0].copy()
    x[0, 0] = 1e300
    bad = (x,) + data[1:]
    with pytest.raises((NumericError, RuntimeError)):
        run(model, bad)


# ---------------------------------------------------------------------------
# Gradients vs central finite differences


def test_gradients_match_finite_differences():
    pairs = training_pairs()[:1]
    vocab = build_vocabulary([m for m, _ in pairs])
    config = TrainConfig(T=20, hidden_dim=8, num_layers=2, k_neighbors=4,
                         steps=1, seed=0)
    schedule = config.make_schedule()
    torch.manual_seed(1)
    model = Denoiser(hidden_dim=8, num_layers=2, vocab_size=vocab.size, horizon=20)
    for p in model.parameters():
        p.data.add_(0.02 * torch.randn_like(p))
    prepared = [prepare_pair(m, pk, vocab) for m, pk in pairs]

    def loss_value():
        total, _ = batch_loss(prepared, model, schedule, config,
                              np.random.default_rng(7))
        return total

    model.zero_grad()
    loss_value().backward()

    h = 1e-4
    rng = np.random.default_rng(5)
    checked = 0
    for name, param in model.named_parameters():
        grad = param.grad
        if grad is None or grad.abs().max() == 0:
            continue
        flat = param.data.view(-1)
        idx = int(rng.integers(0, flat.numel()))
        original = flat[idx].item()
        flat[idx] = original + h
        up = float(loss_value().detach())
        flat[idx] = original - h
        down = float(loss_value().detach())
        flat[idx] = original
        numeric = (up - down) / (2 * h)
        analytic = grad.view(-1)[idx].item()
        denom = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / denom < 1e-4, name
        checked += 1
    assert checked >= 10  # every trainable parameter class exercised


# ---------------------------------------------------------------------------
# Checkpoints


def test_checkpoint_round_trip(tmp_path):
    model, data = small_setup(seed=2)
    for p in model.parameters():
        p.data.add_(0.05 * torch.randn_like(p))
    path = tmp_path / "model.bin"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    assert loaded.hidden_dim == model.hidden_dim
    assert loaded.vocab_size == model.vocab_size
    state, lstate = model.state_dict(), loaded.state_dict()
    for name in state:
        assert torch.allclose(lstate[name], state[name], atol=1e-6), name
    _, out = run(model, data)
    _, out_l = run(loaded, data)
    assert torch.allclose(out.coords, out_l.coords, atol=1e-4)


def test_checkpoint_save_is_deterministic(tmp_path):
    model, _ = small_setup(seed=2)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(a, model)
    save_checkpoint(b, model)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(ValueError, match="not a denoiser checkpoint"):
        load_checkpoint(bad)


def test_checkpoint_rejects_truncation(tmp_path):
    model, _ = small_setup()
    path = tmp_path / "model.bin"
    save_checkpoint(path, model)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(data + b"\0\0")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(path)
