"""Pocket-conditioned hierarchical diffusion for 3D molecule generation."""

__version__ = "0.1.0"

from .molio import MolecularGraph, PocketCloud  # noqa: F401
from .motifs import MotifView, MotifVocabulary  # noqa: F401
from .diffusion import DiffusionSchedule, TrainConfig  # noqa: F401
from .estimator import PocketMoleculeGenerator  # noqa: F401
