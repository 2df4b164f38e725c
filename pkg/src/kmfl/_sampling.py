"""Seeded samplers for agent states and controls.

Each sample draws from its own generator seeded by ``(master seed, *indices)``
so results do not depend on how samples are distributed over workers.
"""

from __future__ import annotations

import numpy as np

from .kernels import StateBox

#: Fraction of sampled states that place all agents in a small ball.
CLUSTERED_FRACTION = 0.2
#: Cluster radius as a fraction of the box width, per axis.
CLUSTER_RADIUS = 0.05


def stream(seed: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, indices)])


def sample_state(rng: np.random.Generator, box: StateBox, m: int) -> np.ndarray:
    """``m`` agents, uniform on the box or (with probability 0.2) clustered."""
    lower, widths = np.asarray(box.lower), box.widths
    if rng.random() < CLUSTERED_FRACTION:
        center = lower + rng.random(box.dim) * widths
        offsets = (rng.random((m, box.dim)) * 2.0 - 1.0) * CLUSTER_RADIUS * widths
        return box.clip(center + offsets)
    return lower + rng.random((m, box.dim)) * widths


def perturb_state(rng: np.random.Generator, box: StateBox, x: np.ndarray, scale: float = 0.05) -> np.ndarray:
    return box.clip(x + rng.normal(size=x.shape) * scale * box.widths)


def sample_control(rng: np.random.Generator, u_max: float, p: int) -> np.ndarray:
    return (rng.random(p) * 2.0 - 1.0) * u_max
