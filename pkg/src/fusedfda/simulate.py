"""Synthetic functional clustering scenarios with known truth.

Curves are cubic B-spline functions with 30 evenly spaced coefficients on
``[0, 1]``; coefficients are Gaussian around a cluster-specific mean with
covariance ``sigma_c^2 I``, and each curve is observed with Gaussian noise on
an even grid.

Randomness comes from NumPy's PCG64 bit generator seeded with the integer
``seed``; replicate seeds are derived from a master seed by
:class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .basis import BSplineBasis, design_matrix, make_basis, step_knots
from .data import Curve, Dataset, GroundTruth
from .ecm import fused_regions

__all__ = [
    "ScenarioSpec",
    "SIGMA_E_GRID",
    "scenario_basis",
    "scenario_means",
    "generate",
    "replicate_seeds",
]

SIGMA_E_GRID = (1.0, 1.5, 2.0, 2.5, 3.0)
N_COEF = 30

# (value, number of coefficients) runs per cluster; the remainder is zero.
_BLOCKS = {
    "I": [[(1.5, 5)], [(-1.5, 5)]],
    "II": [[(3.0, 5), (1.5, 5)], [(0.0, 5), (1.5, 5)], [(0.0, 5), (-1.5, 5)]],
    "III": [
        [(1.5, 5), (3.0, 5), (1.5, 5)],
        [(1.5, 5), (0.0, 5), (1.5, 5)],
        [(-1.5, 5), (0.0, 5), (-1.5, 5)],
        [(-1.5, 5), (-3.0, 5), (-1.5, 5)],
    ],
}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    sigma_e: float
    n_per_cluster: int = 200
    n_points: int = 50
    sigma_c: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in _BLOCKS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of I, II, III")
        if self.sigma_e < 0 or self.sigma_c < 0:
            raise ValueError("standard deviations must be nonnegative")
        if self.n_per_cluster < 1 or self.n_points < 1:
            raise ValueError("counts must be positive")


def scenario_basis() -> BSplineBasis:
    """Cubic B-splines with 30 coefficients on [0, 1]."""
    return make_basis(4, N_COEF - 4, (0.0, 1.0))


def scenario_means(scenario: str) -> np.ndarray:
    """True cluster mean coefficients, shape (G_true, 30)."""
    if scenario not in _BLOCKS:
        raise ValueError(f"unknown scenario {scenario!r}")
    rows = []
    for blocks in _BLOCKS[scenario]:
        row = np.concatenate([np.full(n, v) for v, n in blocks])
        rows.append(np.concatenate([row, np.zeros(N_COEF - row.size)]))
    return np.array(rows)


def generate(spec: ScenarioSpec) -> Tuple[Dataset, GroundTruth]:
    """Simulate one dataset and its ground truth."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    basis = scenario_basis()
    means = scenario_means(spec.scenario)
    G = means.shape[0]
    t = np.linspace(0.0, 1.0, spec.n_points)
    S = design_matrix(basis, t)

    labels = np.repeat(np.arange(1, G + 1), spec.n_per_cluster)
    N = labels.size
    eta = means[labels - 1] + spec.sigma_c * rng.standard_normal((N, N_COEF))
    Y = eta @ S.T + spec.sigma_e * rng.standard_normal((N, spec.n_points))

    width = len(str(N))
    curves = tuple(Curve(f"c{i + 1:0{width}d}", t, Y[i]) for i in range(N))
    truth = GroundTruth(
        true_mean_coefficients=means,
        true_labels=labels,
        noninformative_intervals=fused_regions(means, step_knots(basis), 0.0),
        curve_coefficients=eta,
    )
    return Dataset((0.0, 1.0), curves, labels), truth


def replicate_seeds(master_seed: int, n: int) -> List[int]:
    """Independent 32-bit seeds for ``n`` replicates, derived deterministically from ``master_seed``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]
