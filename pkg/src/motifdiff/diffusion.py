"""Twin diffusion chains (coordinates + categories), guidance, training and sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .denoiser import Denoiser, build_graph
from .molio import ELEMENTS, MolecularGraph, NUM_ELEMENT_TYPES, check_validity, infer_bonds
from .motifs import MotifVocabulary, MotifView, assign_ids, decompose
from .topo import fingerprint

LOGIT_FLOOR = 1e-12

#: Element symbols used when decoding sampled type indices ("other" -> X).
DECODE_ELEMENTS = tuple(el if el != "other" else "X" for el in ELEMENTS)


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule tables; index t runs over [1, T]."""

    betas: np.ndarray  # (T,)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        object.__setattr__(self, "betas", betas)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("need at least one beta")
        if not ((betas > 0) & (betas < 1)).all():
            raise ScheduleError("betas must lie strictly in (0, 1)")
        if (np.diff(betas) < -1e-12).any():
            raise ScheduleError("betas must be non-decreasing")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if (np.diff(alpha_bars) >= 0).any():
            raise ScheduleError("alpha-bar must be strictly decreasing")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def num_steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def posterior_beta(self, t: int) -> float:
        return (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)

    def sigma(self, t: int) -> float:
        # Reverse-transition noise scale, fixed to sqrt(beta_t).
        return float(np.sqrt(self.beta(t)))


def make_schedule(T: int, kind: str = "linear", beta_1: float = 1e-4,
                  beta_T: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise ScheduleError("T must be >= 1")
    if kind == "linear":
        betas = np.linspace(beta_1, beta_T, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1)
        f = np.cos((steps / T + s) / (1 + s) * np.pi / 2) ** 2
        alpha_bars = f / f[0]
        betas = np.clip(1.0 - alpha_bars[1:] / alpha_bars[:-1], 1e-8, 0.999)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(betas)


# ---------------------------------------------------------------------------
# Continuous chain


def q_sample_pos(x0, t: int, eps, schedule: DiffusionSchedule):
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_pos(x_t, x0, t: int, schedule: DiffusionSchedule):
    """Mean and variance of q(x_{t-1} | x_t, x_0)."""
    ab_prev = schedule.alpha_bar(t - 1)
    ab = schedule.alpha_bar(t)
    beta = schedule.beta(t)
    alpha = schedule.alpha(t)
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    ct = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * x0 + ct * x_t, schedule.posterior_beta(t)


def pos_loss_weight(t: int, schedule: DiffusionSchedule, simple: bool = False) -> float:
    if simple:
        return 1.0
    beta = schedule.beta(t)
    sigma2 = beta  # sigma_t^2 = beta_t
    return beta ** 2 / (2.0 * sigma2 * schedule.alpha(t) * (1.0 - schedule.alpha_bar(t)))


def loss_pos(eps, eps_hat, t: int, schedule: DiffusionSchedule, simple: bool = False):
    return pos_loss_weight(t, schedule, simple) * ((eps - eps_hat) ** 2).mean()


# ---------------------------------------------------------------------------
# Categorical chain


def q_type_probs(v0, t: int, schedule: DiffusionSchedule):
    ab = schedule.alpha_bar(t)
    k = np.asarray(v0).shape[-1]
    return ab * np.asarray(v0, dtype=float) + (1.0 - ab) / k


def q_sample_type(v0, t: int, rng: np.random.Generator,
                  schedule: DiffusionSchedule) -> np.ndarray:
    """Sample v_t one-hot from the uniform-transition marginal."""
    probs = q_type_probs(v0, t, schedule)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    flat = probs.reshape(-1, probs.shape[-1])
    k = flat.shape[-1]
    out = np.zeros_like(flat)
    for row in range(flat.shape[0]):
        out[row, rng.choice(k, p=flat[row])] = 1.0
    return out.reshape(probs.shape)


def posterior_type(v_t, v0, t: int, schedule: DiffusionSchedule):
    """Q(v_t, v_0) on the simplex; v0 may be one-hot or a distribution."""
    v_t = np.asarray(v_t, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    k = v_t.shape[-1]
    alpha = schedule.alpha(t)
    ab_prev = schedule.alpha_bar(t - 1)
    g = (alpha * v_t + (1.0 - alpha) / k) * (ab_prev * v0 + (1.0 - ab_prev) / k)
    return g / g.sum(axis=-1, keepdims=True)


def _posterior_type_torch(v_t: torch.Tensor, v0: torch.Tensor, t: int,
                          schedule: DiffusionSchedule) -> torch.Tensor:
    k = v_t.shape[-1]
    alpha = schedule.alpha(t)
    ab_prev = schedule.alpha_bar(t - 1)
    g = (alpha * v_t + (1.0 - alpha) / k) * (ab_prev * v0 + (1.0 - ab_prev) / k)
    return g / g.sum(dim=-1, keepdim=True)


def loss_type(q_true, q_pred):
    """KL(q_true || q_pred) with 0 log 0 := 0 and a floored denominator."""
    q_true = np.asarray(q_true, dtype=float)
    q_pred = np.maximum(np.asarray(q_pred, dtype=float), LOGIT_FLOOR)
    safe = np.maximum(q_true, LOGIT_FLOOR)
    terms = np.where(q_true > 0, q_true * np.log(safe / q_pred), 0.0)
    return terms.sum(axis=-1)


def _loss_type_torch(q_true: torch.Tensor, q_pred: torch.Tensor) -> torch.Tensor:
    q_pred = q_pred.clamp_min(LOGIT_FLOOR)
    safe = q_true.clamp_min(LOGIT_FLOOR)
    terms = torch.where(q_true > 0, q_true * torch.log(safe / q_pred),
                        torch.zeros_like(q_true))
    return terms.sum(dim=-1)


# ---------------------------------------------------------------------------
# Classifier-free guidance


def cfg_combine(cond, uncond, scale: float):
    return uncond + scale * (cond - uncond)


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class TrainConfig:
    hidden_dim: int = 64
    num_layers: int = 4
    k_neighbors: int = 8
    T: int = 1000
    schedule_kind: str = "linear"
    beta_1: float = 1e-4
    beta_T: float = 0.02
    lambda_type: float = 1.0       # weight of the atom-type loss
    lambda_motif: float = 1.0      # weight of the motif-id loss
    p_uncond: float = 0.1
    guidance_scale: float = 2.0
    gamma: float = 0.5             # atom-motif consistency blend; 0 disables
    learning_rate: float = 1e-3
    steps: int = 1000
    seed: int = 0
    optimizer: str = "sgd"         # plain momentum-free descent by default
    simple_loss: bool = True
    init_scale: float = 1.0
    min_frequency: int = 1
    checkpoint_every: int = 500
    grad_clip: float = 100.0
    sample_temperature: float = 1.0  # scales the noise injected while sampling
    coord_scale: float = 1.0  # coordinate units per angstrom inside the model
    corrector_steps: int = 0       # Langevin corrector passes per reverse step
    corrector_snr: float = 0.1     # corrector step-size signal-to-noise ratio
    deterministic_steps: int = 1   # final reverse steps sampled without noise

    def validate(self):
        if self.lambda_type < 0 or self.lambda_motif < 0:
            raise ValueError("loss weights must be nonnegative")
        if not (0 <= self.p_uncond < 1):
            raise ValueError("p_uncond must lie in [0, 1)")
        if self.guidance_scale < 0:
            raise ValueError("guidance scale must be nonnegative")
        if not (0 <= self.gamma <= 1):
            raise ValueError("gamma must lie in [0, 1]")
        if self.T < 1 or self.steps < 0 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError("bad model/loop sizes")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule_kind not in ("linear", "cosine"):
            raise ValueError(f"unknown schedule kind {self.schedule_kind!r}")
        if self.learning_rate <= 0 or self.init_scale <= 0:
            raise ValueError("learning rate and init scale must be positive")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if not (0 < self.sample_temperature <= 1):
            raise ValueError("sample_temperature must lie in (0, 1]")
        if self.coord_scale <= 0:
            raise ValueError("coord_scale must be positive")
        if self.corrector_steps < 0 or self.corrector_snr <= 0:
            raise ValueError("corrector settings must be nonnegative / positive")
        if self.deterministic_steps < 1:
            raise ValueError("deterministic_steps must be at least 1")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, value in data.items():
            expected = cls.__dataclass_fields__[key].type
            if expected in ("int", int) and not isinstance(value, int):
                raise ValueError(f"config key {key!r} must be an integer")
        return cls(**data).validate()

    def make_schedule(self) -> DiffusionSchedule:
        return make_schedule(self.T, self.schedule_kind, self.beta_1, self.beta_T)


# ---------------------------------------------------------------------------
# Training


@dataclass
class PreparedPair:
    """A ligand-pocket pair readied for training (pocket-centered frame)."""

    atom_coords: np.ndarray     # (n, 3) ligand coords minus pocket center
    atom_types: np.ndarray      # (n, V) one-hot
    motif_coords: np.ndarray    # (m, 3) centroids minus pocket center
    motif_ids: np.ndarray       # (m, W+1) one-hot
    atom_to_motif: dict
    pocket_coords: np.ndarray   # (p, 3) minus center
    pocket_features: np.ndarray
    pocket_center: np.ndarray
    ligand_fp: np.ndarray
    pocket_fp: np.ndarray
    name: str = ""


def prepare_pair(mol: MolecularGraph, pocket, vocab: MotifVocabulary,
                 coord_scale: float = 1.0) -> PreparedPair:
    """Precompute the training-ready view of a ligand-pocket pair.

    ``coord_scale`` stretches all coordinates relative to the unit-variance
    diffusion noise; larger molecules-per-noise make fine geometry easier to
    resolve and the sampler divides the scale back out.
    """
    view = assign_ids(decompose(mol), vocab)
    center = pocket.center
    w = vocab.size
    return PreparedPair(
        atom_coords=(mol.coords - center) * coord_scale,
        atom_types=mol.type_onehots(),
        motif_coords=(view.centroids() - center) * coord_scale,
        motif_ids=np.stack([m.onehot(w) for m in view.motifs]),
        atom_to_motif=view.atom_to_motif(),
        pocket_coords=(pocket.coords - center) * coord_scale,
        pocket_features=pocket.features,
        pocket_center=np.asarray(center),
        ligand_fp=fingerprint(mol.coords),
        pocket_fp=fingerprint(pocket.coords),
        name=mol.name,
    )


def _pair_losses(pair: PreparedPair, model: Denoiser, schedule: DiffusionSchedule,
                 config: TrainConfig, rng: np.random.Generator):
    t = int(rng.integers(1, schedule.num_steps + 1))
    eps_a = rng.standard_normal(pair.atom_coords.shape)
    eps_m = rng.standard_normal(pair.motif_coords.shape)
    x_t = q_sample_pos(pair.atom_coords, t, eps_a, schedule)
    c_t = q_sample_pos(pair.motif_coords, t, eps_m, schedule)
    v_t = q_sample_type(pair.atom_types, t, rng, schedule)
    w_t = q_sample_type(pair.motif_ids, t, rng, schedule)
    conditioned = bool(rng.random() >= config.p_uncond)

    graph = build_graph(x_t, c_t, pair.pocket_coords, pair.atom_to_motif,
                        config.k_neighbors)
    out = model(graph, v_t, w_t, pair.pocket_features, t,
                pair.ligand_fp, pair.pocket_fp, conditioned)

    ab = schedule.alpha_bar(t)
    sqrt_ab, sqrt_1ab = np.sqrt(ab), np.sqrt(1.0 - ab)

    def noise_loss(x_noisy, x0_hat, eps):
        eps_hat = (torch.as_tensor(x_noisy) - sqrt_ab * x0_hat) / sqrt_1ab
        err = eps_hat - torch.as_tensor(eps)
        return pos_loss_weight(t, schedule, config.simple_loss) * (err ** 2).mean()

    l_a_pos = noise_loss(x_t, out.coords[graph.ligand_index], eps_a)
    l_m_pos = noise_loss(c_t, out.coords[graph.motif_index], eps_m)

    def type_loss(v_noisy, v0, logits):
        q_true = torch.as_tensor(posterior_type(v_noisy, v0, t, schedule))
        q_pred = _posterior_type_torch(
            torch.as_tensor(v_noisy, dtype=torch.float64),
            torch.softmax(logits, dim=-1), t, schedule)
        return _loss_type_torch(q_true, q_pred).mean()

    l_a_type = type_loss(v_t, pair.atom_types, out.atom_logits)
    l_m_id = type_loss(w_t, pair.motif_ids, out.motif_logits)
    return l_a_pos, l_a_type, l_m_pos, l_m_id


def batch_loss(pairs, model: Denoiser, schedule: DiffusionSchedule,
               config: TrainConfig, rng: np.random.Generator):
    """Total joint loss and its breakdown, averaged over a batch."""
    parts = torch.zeros(4, dtype=torch.float64)
    total = torch.zeros((), dtype=torch.float64)
    for pair in pairs:
        l_a_pos, l_a_type, l_m_pos, l_m_id = _pair_losses(
            pair, model, schedule, config, rng)
        total = total + (l_a_pos + config.lambda_type * l_a_type
                         + l_m_pos + config.lambda_motif * l_m_id)
        parts = parts + torch.stack([l_a_pos, l_a_type, l_m_pos, l_m_id]).detach()
    n = len(pairs)
    total = total / n
    parts = parts / n
    breakdown = {
        "L_a_pos": float(parts[0]), "L_a_type": float(parts[1]),
        "L_m_pos": float(parts[2]), "L_m_id": float(parts[3]),
        "total": float(total.detach()),
    }
    return total, breakdown


def make_optimizer(model: Denoiser, config: TrainConfig):
    if config.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    return torch.optim.SGD(model.parameters(), lr=config.learning_rate)


def train_step(pairs, model: Denoiser, schedule: DiffusionSchedule,
               config: TrainConfig, rng: np.random.Generator, optimizer) -> dict:
    optimizer.zero_grad()
    total, breakdown = batch_loss(pairs, model, schedule, config, rng)
    total.backward()
    # Rare large-noise draws produce outlier gradients; cap them so deep
    # coordinate-update stacks cannot blow up.
    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    return breakdown


def evaluate_loss(pairs, model: Denoiser, schedule: DiffusionSchedule,
                  config: TrainConfig, eval_seed: int = 12345,
                  repeats: int = 8) -> float:
    """Joint loss on frozen noise draws, for comparable before/after numbers."""
    rng = np.random.default_rng(eval_seed)
    total = 0.0
    with torch.no_grad():
        for _ in range(repeats):
            _, breakdown = batch_loss(pairs, model, schedule, config, rng)
            total += breakdown["total"]
    return total / repeats


class WeightAverage:
    """Exponential moving average of model weights.

    Averaged weights smooth out optimizer noise and usually evaluate and
    sample better than the final raw iterate.  Feed ``update`` from a
    training callback, then ``apply_to`` a model before evaluation.
    """

    def __init__(self, decay: float):
        if not (0 <= decay < 1):
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.shadow = None

    def update(self, model: Denoiser):
        with torch.no_grad():
            if self.shadow is None:
                self.shadow = {name: p.detach().clone()
                               for name, p in model.named_parameters()}
                return
            for name, p in model.named_parameters():
                self.shadow[name].mul_(self.decay).add_(p.detach(),
                                                        alpha=1 - self.decay)

    def apply_to(self, model: Denoiser):
        if self.shadow is None:
            raise ValueError("no updates recorded")
        with torch.no_grad():
            for name, p in model.named_parameters():
                p.copy_(self.shadow[name])


def train(pairs, model: Denoiser, schedule: DiffusionSchedule, config: TrainConfig,
          callback=None) -> list:
    """Run the training loop; returns the per-step loss breakdown history."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(model, config)
    history = []
    for step in range(config.steps):
        breakdown = train_step(pairs, model, schedule, config, rng, optimizer)
        breakdown["step"] = step
        history.append(breakdown)
        if callback is not None:
            callback(step, breakdown)
    return history


# ---------------------------------------------------------------------------
# Sampling


@dataclass
class SampleResult:
    molecule: MolecularGraph
    motif_ids: np.ndarray        # final motif-ID indices (vocab row or W = OOV)
    motif_coords: np.ndarray     # final centroids (absolute frame)
    valid: bool
    violations: list
    snapshots: list = field(default_factory=list)  # (t, MolecularGraph)


def _nearest_centroid_assignment(x: np.ndarray, c: np.ndarray) -> dict:
    d = np.linalg.norm(x[:, None, :] - c[None, :, :], axis=-1)
    return {i: int(np.argmin(d[i])) for i in range(x.shape[0])}


def _sample_categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros_like(probs)
    for row in range(probs.shape[0]):
        p = np.maximum(probs[row], 0)
        p = p / p.sum()
        out[row, rng.choice(probs.shape[1], p=p)] = 1.0
    return out


def _decode_molecule(v: np.ndarray, coords: np.ndarray, name: str) -> MolecularGraph:
    elements = [DECODE_ELEMENTS[i] for i in np.argmax(v, axis=-1)]
    bonds = infer_bonds(coords, elements)
    return MolecularGraph(elements, coords, bonds, name)


def sample(pocket, n_atoms: int, n_motifs: int, model: Denoiser,
           schedule: DiffusionSchedule, config: TrainConfig,
           rng: np.random.Generator, snapshots=(), name: str = "sample",
           _disable_consistency: bool = False) -> SampleResult:
    """Joint reverse chain over atoms and motifs with CFG and the
    atom-motif consistency projection."""
    center = pocket.center
    scale_back = 1.0 / config.coord_scale
    pocket_coords = (pocket.coords - center) * config.coord_scale
    pocket_fp = fingerprint(pocket.coords)
    w1 = model.vocab_size + 1
    v_dim = model.num_atom_types
    snapshots = set(snapshots)
    scale = config.guidance_scale

    x = rng.standard_normal((n_atoms, 3)) * config.init_scale
    c = rng.standard_normal((n_motifs, 3)) * config.init_scale
    v = _sample_categorical_rows(np.full((n_atoms, v_dim), 1.0 / v_dim), rng)
    w = _sample_categorical_rows(np.full((n_motifs, w1), 1.0 / w1), rng)
    taken = []

    def predict(x, c, v, w, t):
        """Guided model outputs at level t: (x0_hat, c0_hat, atom/motif logits)."""
        assignment = _nearest_centroid_assignment(x, c)
        ligand_fp = fingerprint(x * scale_back) if n_atoms >= 2 else np.zeros(8)
        graph = build_graph(x, c, pocket_coords, assignment, config.k_neighbors)
        out_c = model(graph, v, w, pocket.features, t, ligand_fp, pocket_fp, True)
        if scale == 1.0:
            coords_hat = out_c.coords
            atom_logits = out_c.atom_logits
            motif_logits = out_c.motif_logits
        else:
            out_u = model(graph, v, w, pocket.features, t, ligand_fp, pocket_fp, False)
            ab = schedule.alpha_bar(t)
            sq_ab, sq_1ab = np.sqrt(ab), np.sqrt(1.0 - ab)

            def guided_coords(cond, uncond):
                eps_c = (graph.coords - sq_ab * cond) / sq_1ab
                eps_u = (graph.coords - sq_ab * uncond) / sq_1ab
                eps = cfg_combine(eps_c, eps_u, scale)
                return (graph.coords - sq_1ab * eps) / sq_ab

            coords_hat = guided_coords(out_c.coords, out_u.coords)
            atom_logits = cfg_combine(out_c.atom_logits, out_u.atom_logits, scale)
            motif_logits = cfg_combine(out_c.motif_logits, out_u.motif_logits, scale)
        return (coords_hat[graph.ligand_index].numpy(),
                coords_hat[graph.motif_index].numpy(),
                atom_logits, motif_logits)

    def langevin_correct(x, c, v, w, t):
        """Score-based corrector: small Langevin moves toward the data
        manifold at noise level t, with step size set by a signal-to-noise
        ratio rule."""
        for _ in range(config.corrector_steps):
            x0_hat, c0_hat, _, _ = predict(x, c, v, w, t)
            ab = schedule.alpha_bar(t)
            new = []
            for arr, hat in ((x, x0_hat), (c, c0_hat)):
                eps_hat = (arr - np.sqrt(ab) * hat) / np.sqrt(1.0 - ab)
                score = -eps_hat / np.sqrt(1.0 - ab)
                z = rng.standard_normal(arr.shape)
                power = (score ** 2).mean()
                step = 2.0 * config.corrector_snr ** 2 * (z ** 2).mean() \
                    / max(power, 1e-12)
                new.append(arr + step * score
                           + np.sqrt(2.0 * step) * config.sample_temperature * z)
            x, c = new
        return x, c

    with torch.no_grad():
        for t in range(schedule.num_steps, 0, -1):
            x0_hat, c0_hat, atom_logits, motif_logits = predict(x, c, v, w, t)
            mu_x, _ = posterior_pos(x, x0_hat, t, schedule)
            mu_c, _ = posterior_pos(c, c0_hat, t, schedule)
            if t > config.deterministic_steps:
                sigma = config.sample_temperature * schedule.sigma(t)
                x = mu_x + sigma * rng.standard_normal(mu_x.shape)
                c = mu_c + sigma * rng.standard_normal(mu_c.shape)
            else:
                # Late-chain mean-only updates: the final geometry converges
                # to the model's clean-structure prediction instead of
                # carrying the last injected noise into the decoded molecule.
                x, c = mu_x, mu_c

            v0_hat = torch.softmax(atom_logits, dim=-1).numpy()
            w0_hat = torch.softmax(motif_logits, dim=-1).numpy()
            if t > 1:
                v = _sample_categorical_rows(posterior_type(v, v0_hat, t, schedule), rng)
                w = _sample_categorical_rows(posterior_type(w, w0_hat, t, schedule), rng)
            else:
                v = np.eye(v_dim)[np.argmax(v0_hat, axis=-1)]
                w = np.eye(w1)[np.argmax(w0_hat, axis=-1)]

            if config.corrector_steps and t > 1:
                x, c = langevin_correct(x, c, v, w, t - 1)

            if config.gamma > 0 and not _disable_consistency:
                x, c = _consistency_projection(x, c, config.gamma)

            if t in snapshots:
                taken.append((t, _decode_molecule(v, x * scale_back + center,
                                                  f"{name}_t{t}")))

    mol = _decode_molecule(v, x * scale_back + center, name)
    valid, violations = check_validity(mol)
    return SampleResult(mol, np.argmax(w, axis=-1), c * scale_back + center,
                        valid, violations, taken)


def _consistency_projection(x: np.ndarray, c: np.ndarray, gamma: float):
    """Blend motif centroids with their atom-cluster means and rigidly shift
    the cluster so both views agree on the centroid."""
    assignment = _nearest_centroid_assignment(x, c)
    x = x.copy()
    c = c.copy()
    for m in range(c.shape[0]):
        members = [a for a, mm in assignment.items() if mm == m]
        if not members:
            continue
        cluster_mean = x[members].mean(axis=0)
        residual = c[m] - cluster_mean
        c[m] = cluster_mean + (1.0 - gamma) * residual
        x[members] += (1.0 - gamma) * residual
    return x, c


def corpus_size_histogram(pairs) -> list:
    """(n_atoms, n_motifs) pairs observed in a training corpus."""
    return [(p.atom_coords.shape[0], p.motif_coords.shape[0]) for p in pairs]


def draw_sizes(histogram, rng: np.random.Generator):
    idx = int(rng.integers(0, len(histogram)))
    return histogram[idx]
