"""Functional Gaussian mixture with a shared diagonal random-effect covariance.

Given cluster ``g``, a curve sampled at ``t_i1..t_in`` is modelled as

    Y_i = S_i (mu_g + gamma_i) + eps_i,  gamma_i ~ N(0, diag(gamma_diag)),
    eps_i ~ N(0, noise_var I),

so marginally ``Y_i ~ N(S_i mu_g, Sigma_i)`` with
``Sigma_i = S_i diag(gamma_diag) S_i^T + noise_var I``.

Curves that share a sampling grid share ``S_i`` and ``Sigma_i``; the work is
organised per grid so that each covariance is factorised once per parameter
value. All densities are handled on the log scale.

Cluster labels returned to callers are 1-based; component indices used to
address rows of ``means`` are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .basis import BSplineBasis, design_matrix
from .data import Curve, Dataset, group_by_grid

__all__ = [
    "ModelParams",
    "DesignData",
    "EStepQuantities",
    "log_component_density",
    "log_component_densities",
    "posteriors",
    "random_effect_moments",
    "classify",
    "e_step",
    "log_likelihood",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ModelParams:
    """Mixture parameters ``{pi_g, mu_g, diag(sigma_j^2), sigma_e^2}``."""

    mixing: np.ndarray
    means: np.ndarray
    gamma_diag: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.mixing = np.asarray(self.mixing, dtype=float).ravel()
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.gamma_diag = np.asarray(self.gamma_diag, dtype=float).ravel()
        self.noise_var = float(self.noise_var)
        G, q = self.means.shape
        if self.mixing.shape != (G,):
            raise ValueError(f"mixing has shape {self.mixing.shape}, expected ({G},)")
        if self.gamma_diag.shape != (q,):
            raise ValueError(f"gamma_diag has shape {self.gamma_diag.shape}, expected ({q},)")
        if np.any(self.mixing < 0) or abs(self.mixing.sum() - 1.0) > 1e-10:
            raise ValueError("mixing proportions must be nonnegative and sum to 1")
        if np.any(self.gamma_diag < 0):
            raise ValueError("random-effect variances must be nonnegative")
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("cluster means must be finite")

    @property
    def n_clusters(self) -> int:
        return self.means.shape[0]

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.mixing.copy(), self.means.copy(), self.gamma_diag.copy(), self.noise_var)

    def permuted(self, order) -> "ModelParams":
        """Parameters with components reordered so that new component ``g`` is old ``order[g]``."""
        order = np.asarray(order, dtype=int)
        return ModelParams(self.mixing[order], self.means[order], self.gamma_diag.copy(), self.noise_var)

    def to_dict(self) -> dict:
        return {
            "mixing": self.mixing.tolist(),
            "means": self.means.tolist(),
            "gamma_diag": self.gamma_diag.tolist(),
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(d["mixing"], d["means"], d["gamma_diag"], d["noise_var"])


@dataclass
class _GridGroup:
    index: np.ndarray  # curve positions in the dataset
    S: np.ndarray  # (n, q)
    Y: np.ndarray  # (m, n)
    StS: np.ndarray  # (q, q)
    SY: np.ndarray  # (m, q) rows S^T Y_i
    yy: np.ndarray  # (m,) squared norms of Y_i

    @property
    def n(self) -> int:
        return self.S.shape[0]


class DesignData:
    """Curves bucketed by sampling grid, with their basis matrices and sufficient statistics.

    ``method`` picks how ``Sigma_i`` is handled: ``"direct"`` factorises the
    ``n x n`` matrix, ``"woodbury"`` works with a ``q x q`` matrix through the
    Woodbury identity, and ``"auto"`` uses the latter on grids with more
    points than basis functions.
    """

    def __init__(self, dataset: Dataset, basis: BSplineBasis, method: str = "auto"):
        if method not in ("auto", "direct", "woodbury"):
            raise ValueError(f"unknown method {method!r}")
        lo, hi = basis.domain
        if dataset.domain[0] < lo or dataset.domain[1] > hi:
            raise ValueError(f"dataset domain {dataset.domain} exceeds basis domain {basis.domain}")
        self.basis = basis
        self.method = method
        self.n_curves = dataset.n_curves
        self.q = basis.dimension
        self.n_points = np.array([len(c) for c in dataset.curves])
        self.total_points = int(self.n_points.sum())
        self.groups: List[_GridGroup] = []
        self.group_of = np.empty(self.n_curves, dtype=int)
        for k, idx in enumerate(group_by_grid(dataset.curves).values()):
            idx = np.asarray(idx)
            S = design_matrix(basis, dataset.curves[idx[0]].timepoints)
            Y = np.stack([dataset.curves[i].values for i in idx])
            self.groups.append(_GridGroup(idx, S, Y, S.T @ S, Y @ S, np.einsum("ij,ij->i", Y, Y)))
            self.group_of[idx] = k

    def use_woodbury(self, grp: _GridGroup) -> bool:
        if self.method == "auto":
            return grp.n > self.q
        return self.method == "woodbury"

    @classmethod
    def ensure(cls, data, basis: Optional[BSplineBasis] = None) -> "DesignData":
        if isinstance(data, DesignData):
            return data
        return cls(data, basis)


@dataclass
class EStepQuantities:
    """Posterior memberships and conditional moments of the random effects.

    ``gamma_mean[i, g]`` is ``E[gamma_i | Y_i, Z_ig = 1]``. The conditional
    covariance does not depend on ``g`` and is shared by all curves on the
    same grid; ``cov_groups[group_of[i]]`` is the covariance for curve ``i``.
    """

    log_dens: np.ndarray  # (N, G) component log-densities
    posteriors: np.ndarray  # (N, G)
    gamma_mean: np.ndarray  # (N, G, q)
    cov_groups: List[np.ndarray]
    group_of: np.ndarray
    curve_loglik: np.ndarray  # (N,) log sum_g pi_g psi_ig

    @property
    def gamma_cov(self) -> np.ndarray:
        """Per-curve conditional covariances, shape (N, q, q)."""
        return np.stack([self.cov_groups[k] for k in self.group_of])

    @property
    def loglik(self) -> float:
        return float(self.curve_loglik.sum())


def _pass_direct(grp: _GridGroup, params: ModelParams, moments: bool):
    n = grp.n
    m, G = grp.Y.shape[0], params.n_clusters
    SG = grp.S * params.gamma_diag
    Sigma = SG @ grp.S.T
    Sigma[np.diag_indices(n)] += params.noise_var
    L = np.linalg.cholesky(Sigma)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    R = grp.Y[:, None, :] - (params.means @ grp.S.T)[None, :, :]
    Z = solve_triangular(L, R.reshape(m * G, n).T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", Z, Z).reshape(m, G)
    log_dens = -0.5 * (n * _LOG_2PI + logdet + quad)
    if not moments:
        return log_dens, None, None
    SinvR = solve_triangular(L.T, Z, lower=False, check_finite=False)
    gmean = (SG.T @ SinvR).T.reshape(m, G, -1)
    V = solve_triangular(L, SG, lower=True, check_finite=False)
    cov = np.diag(params.gamma_diag) - V.T @ V
    return log_dens, gmean, 0.5 * (cov + cov.T)


def _pass_woodbury(grp: _GridGroup, params: ModelParams, moments: bool):
    # With D = diag(sqrt(gamma_diag)) and M = s2 I + D S^T S D (q x q):
    #   r^T Sigma^-1 r = (r^T r - u^T M^-1 u) / s2,  u = D S^T r
    #   log det Sigma  = (n - q) log s2 + log det M
    #   E[gamma | Y]   = D M^-1 u,   Cov[gamma | Y] = s2 D M^-1 D
    n, q = grp.S.shape
    m, G = grp.Y.shape[0], params.n_clusters
    s2 = params.noise_var
    d = np.sqrt(params.gamma_diag)
    M = d[:, None] * grp.StS * d[None, :]
    M[np.diag_indices(q)] += s2
    L = np.linalg.cholesky(M)
    logdet = (n - q) * np.log(s2) + 2.0 * np.log(np.diag(L)).sum()
    StSmu = params.means @ grp.StS  # (G, q)
    Str = grp.SY[:, None, :] - StSmu[None, :, :]  # (m, G, q)
    rr = grp.yy[:, None] - 2.0 * grp.SY @ params.means.T + np.einsum("gq,gq->g", params.means, StSmu)[None, :]
    # q is small: one explicit triangular inverse beats repeated triangular solves
    Linv = solve_triangular(L, np.eye(q), lower=True, check_finite=False)
    V = Linv @ (Str * d).reshape(m * G, q).T
    quad = (rr - np.einsum("ij,ij->j", V, V).reshape(m, G)) / s2
    log_dens = -0.5 * (n * _LOG_2PI + logdet + quad)
    if not moments:
        return log_dens, None, None
    gmean = (d[:, None] * (Linv.T @ V)).T.reshape(m, G, q)
    Linv_d = Linv * d
    cov = s2 * (Linv_d.T @ Linv_d)
    return log_dens, gmean, 0.5 * (cov + cov.T)


def _group_pass(data: "DesignData", grp: _GridGroup, params: ModelParams, moments: bool):
    if data.use_woodbury(grp):
        return _pass_woodbury(grp, params, moments)
    return _pass_direct(grp, params, moments)


def log_component_densities(data, params: ModelParams, basis: Optional[BSplineBasis] = None) -> np.ndarray:
    """Matrix of ``log psi(Y_i; S_i mu_g, Sigma_i)``, shape (N, G)."""
    data = DesignData.ensure(data, basis)
    out = np.empty((data.n_curves, params.n_clusters))
    for grp in data.groups:
        out[grp.index] = _group_pass(data, grp, params, moments=False)[0]
    return out


def _row_logsumexp(a: np.ndarray) -> np.ndarray:
    mx = a.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=1, keepdims=True)))[:, 0]


def _posteriors_from_log(log_dens: np.ndarray, mixing: np.ndarray):
    with np.errstate(divide="ignore"):
        scores = log_dens + np.log(mixing)
    row = _row_logsumexp(scores)
    return np.exp(scores - row[:, None]), row


def e_step(data, params: ModelParams, basis: Optional[BSplineBasis] = None) -> EStepQuantities:
    """Posterior memberships, random-effect conditional moments and mixture log-likelihood."""
    data = DesignData.ensure(data, basis)
    N, G, q = data.n_curves, params.n_clusters, data.q
    log_dens = np.empty((N, G))
    gmean = np.empty((N, G, q))
    covs = []
    for grp in data.groups:
        ld, gm, cov = _group_pass(data, grp, params, moments=True)
        log_dens[grp.index] = ld
        gmean[grp.index] = gm
        covs.append(cov)
    post, row = _posteriors_from_log(log_dens, params.mixing)
    return EStepQuantities(log_dens, post, gmean, covs, data.group_of.copy(), row)


def log_likelihood(data, params: ModelParams, basis: Optional[BSplineBasis] = None, per_curve: bool = False):
    """Mixture log-likelihood ``sum_i log sum_g pi_g psi(Y_i; S_i mu_g, Sigma_i)``."""
    ld = log_component_densities(data, params, basis)
    with np.errstate(divide="ignore"):
        row = _row_logsumexp(ld + np.log(params.mixing))
    return row if per_curve else float(row.sum())


def _single(curve: Curve, basis: BSplineBasis) -> DesignData:
    return DesignData(Dataset(basis.domain, (curve,)), basis)


def log_component_density(curve: Curve, g: int, params: ModelParams, basis: BSplineBasis) -> float:
    """Log Gaussian density of one curve under component ``g`` (0-based)."""
    if not 0 <= g < params.n_clusters:
        raise IndexError(f"component {g} out of range for G={params.n_clusters}")
    return float(log_component_densities(_single(curve, basis), params)[0, g])


def posteriors(dataset: Dataset, params: ModelParams, basis: BSplineBasis) -> np.ndarray:
    """Posterior membership probabilities, shape (N, G); rows sum to 1."""
    ld = log_component_densities(DesignData(dataset, basis), params)
    return _posteriors_from_log(ld, params.mixing)[0]


def random_effect_moments(curve: Curve, params: ModelParams, basis: BSplineBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Conditional mean of the random effect for each component (G, q) and the shared covariance (q, q)."""
    data = _single(curve, basis)
    _, gm, cov = _group_pass(data, data.groups[0], params, moments=True)
    return gm[0], cov


def classify(curve: Curve, params: ModelParams, basis: BSplineBasis) -> int:
    """Most probable cluster (1-based); ties go to the lowest index."""
    ld = log_component_densities(_single(curve, basis), params)[0]
    with np.errstate(divide="ignore"):
        scores = ld + np.log(params.mixing)
    return int(np.argmax(scores)) + 1
