"""Scikit-learn style front door: fit on ligand-pocket pairs, sample new ligands."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .denoiser import Denoiser
from .diffusion import (
    TrainConfig,
    corpus_size_histogram,
    draw_sizes,
    prepare_pair,
    sample as run_chain,
    train as run_training,
)
from .motifs import build_vocabulary


class PocketMoleculeGenerator(BaseEstimator):
    """Pocket-conditioned hierarchical diffusion generator.

    ``fit(X)`` takes a list of (MolecularGraph, PocketCloud) pairs, builds
    the motif vocabulary and trains the denoiser; ``sample(pocket, n)``
    draws new molecules for a pocket.  Hyperparameters mirror TrainConfig
    and compose with sklearn's get_params/set_params/clone machinery.
    """

    def __init__(self, hidden_dim=64, num_layers=4, k_neighbors=8, T=1000,
                 schedule_kind="linear", beta_1=1e-4, beta_T=0.02,
                 lambda_type=1.0, lambda_motif=1.0, p_uncond=0.1,
                 guidance_scale=2.0, gamma=0.5, learning_rate=1e-3,
                 steps=1000, seed=0, optimizer="sgd", simple_loss=True,
                 init_scale=1.0, min_frequency=1, grad_clip=100.0,
                 sample_temperature=1.0, coord_scale=1.0, corrector_steps=0,
                 corrector_snr=0.1, deterministic_steps=1):
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.k_neighbors = k_neighbors
        self.T = T
        self.schedule_kind = schedule_kind
        self.beta_1 = beta_1
        self.beta_T = beta_T
        self.lambda_type = lambda_type
        self.lambda_motif = lambda_motif
        self.p_uncond = p_uncond
        self.guidance_scale = guidance_scale
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.steps = steps
        self.seed = seed
        self.optimizer = optimizer
        self.simple_loss = simple_loss
        self.init_scale = init_scale
        self.min_frequency = min_frequency
        self.grad_clip = grad_clip
        self.sample_temperature = sample_temperature
        self.coord_scale = coord_scale
        self.corrector_steps = corrector_steps
        self.corrector_snr = corrector_snr
        self.deterministic_steps = deterministic_steps

    def _config(self) -> TrainConfig:
        fields = TrainConfig.__dataclass_fields__
        values = {name: getattr(self, name) for name in fields
                  if hasattr(self, name)}
        return TrainConfig(**values).validate()

    def fit(self, X, y=None):
        if not X:
            raise ValueError("need at least one (molecule, pocket) pair")
        config = self._config()
        self.config_ = config
        self.vocab_ = build_vocabulary([mol for mol, _ in X], config.min_frequency)
        self.schedule_ = config.make_schedule()
        torch.manual_seed(config.seed)
        self.model_ = Denoiser(
            hidden_dim=config.hidden_dim, num_layers=config.num_layers,
            vocab_size=self.vocab_.size, horizon=config.T)
        pairs = [prepare_pair(mol, pocket, self.vocab_, config.coord_scale)
                 for mol, pocket in X]
        self.pairs_ = pairs
        self.size_histogram_ = corpus_size_histogram(pairs)
        self.history_ = run_training(pairs, self.model_, self.schedule_, config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before sampling")

    def sample(self, pocket, n_molecules=1, n_atoms=None, n_motifs=None,
               snapshots=(), seed=None):
        """Draw molecules for a pocket; returns a list of SampleResult."""
        self._check_fitted()
        master = self.seed if seed is None else seed
        results = []
        for chain in range(n_molecules):
            rng = np.random.default_rng(master + chain)
            na, nm = n_atoms, n_motifs
            if na is None or nm is None:
                drawn = draw_sizes(self.size_histogram_, rng)
                na = na if na is not None else drawn[0]
                nm = nm if nm is not None else drawn[1]
            results.append(run_chain(
                pocket, na, nm, self.model_, self.schedule_, self.config_,
                rng, snapshots=snapshots, name=f"sample_{chain}"))
        return results
