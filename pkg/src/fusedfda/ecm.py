"""Penalised maximum likelihood for the functional mixture via ECM.

The objective is the mixture log-likelihood minus two penalties on the
cluster means:

* a pairwise fusion penalty ``lambda_fuse * sum_{g<h} sum_j w_ghj |mu_gj - mu_hj|``
  with adaptive weights ``w_ghj = gap_j / |mu~_gj - mu~_hj|`` built once from
  the initial means, where ``gap_j`` is the width of the step-knot interval of
  coefficient ``j``;
* a roughness penalty ``lambda_smooth * sum_g mu_g^T W mu_g``.

Each ECM sweep runs the E-step and then four conditional maximisations
(mixing proportions, random-effect variances, noise variance, means). The
mean step is a non-smooth convex problem solved by local quadratic
approximation (LQA); each LQA iterate solves one SPD system of size ``G q``.
Fusion is made exact only after convergence by snapping coefficient
differences below ``fuse_threshold``.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans

from .basis import BSplineBasis, StepKnots, roughness_matrix, step_knots
from .data import Dataset
from .mixture import DesignData, EStepQuantities, ModelParams, e_step, log_likelihood

__all__ = [
    "FitConfig",
    "AdaptiveWeights",
    "FitResult",
    "LQAInfo",
    "initialize",
    "smooth_coefficients",
    "adaptive_weights",
    "update_mixing",
    "update_gamma_diag",
    "update_noise_var",
    "update_means_lqa",
    "mean_step_objective",
    "penalized_loglik",
    "fusion_penalty",
    "snap_fused",
    "fused_regions",
    "default_fuse_threshold",
    "fit",
]

NOISE_VAR_FLOOR = 1e-10
_JITTER = 1e-8

Intervals = List[Tuple[float, float]]
PairIntervals = Dict[Tuple[int, int], Intervals]


@dataclass
class FitConfig:
    """Hyperparameters and numerical controls for :func:`fit`.

    ``fuse_threshold=None`` selects ``1e-3 * max(1, median |initial means|)``.
    ``init_smoothing`` scales the ridge penalty of the per-curve smoothing
    fits used for initialisation, relative to ``trace(S^T S) / trace(W)``;
    ``None`` chooses it by generalised cross-validation.
    """

    n_clusters: int = 2
    lambda_fuse: float = 0.0
    lambda_smooth: float = 0.0
    deriv_order: int = 2
    max_ecm_iters: int = 200
    ecm_tol: float = 1e-6
    max_lqa_iters: int = 50
    lqa_tol: float = 1e-6
    lqa_floor: float = 1e-6
    fuse_threshold: Optional[float] = None
    weight_floor: float = 1e-8
    init_smoothing: Optional[float] = 1.0
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if int(self.n_clusters) < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.lambda_fuse < 0 or self.lambda_smooth < 0:
            raise ValueError("penalty weights must be nonnegative")
        for name in ("ecm_tol", "lqa_tol", "lqa_floor", "weight_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.init_smoothing is not None and not self.init_smoothing >= 0:
            raise ValueError("init_smoothing must be nonnegative")
        if self.fuse_threshold is not None and not self.fuse_threshold > 0:
            raise ValueError("fuse_threshold must be positive")
        if self.max_ecm_iters < 1 or self.max_lqa_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        self.n_clusters = int(self.n_clusters)

    def replace(self, **changes) -> "FitConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown FitConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdaptiveWeights:
    """Fusion weights for each unordered pair ``pairs[p] = (g, h)``, ``g < h``; ``weights[p]`` has length q."""

    pairs: List[Tuple[int, int]]
    weights: np.ndarray

    def for_pair(self, g: int, h: int) -> np.ndarray:
        return self.weights[self.pairs.index((min(g, h), max(g, h)))]


@dataclass
class LQAInfo:
    n_iter: int
    converged: bool
    surrogate: List[float]  # majoriser value at each iterate's minimiser
    objective: List[float]  # mean-step objective, starting point first
    jitter: bool = False


@dataclass
class FitResult:
    """Output of :func:`fit`. ``labels`` are 1-based; ``fused_pairs`` keys are 0-based pairs."""

    params: ModelParams
    posteriors: np.ndarray
    labels: np.ndarray
    objective_trace: np.ndarray
    fused_pairs: PairIntervals
    converged: bool
    n_iters: int
    config: FitConfig
    basis: BSplineBasis
    fuse_threshold: float
    unsnapped_means: np.ndarray = field(repr=False, default=None)
    weights: Optional[AdaptiveWeights] = field(repr=False, default=None)

    @property
    def n_clusters(self) -> int:
        return self.params.n_clusters

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "labels": self.labels.tolist(),
            "posteriors": self.posteriors.tolist(),
            "objective_trace": self.objective_trace.tolist(),
            "fused_pairs": [[g + 1, h + 1, [list(iv) for iv in ivs]] for (g, h), ivs in sorted(self.fused_pairs.items())],
            "converged": self.converged,
            "n_iters": self.n_iters,
            "fuse_threshold": self.fuse_threshold,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "basis": self.basis.to_dict(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        fused = {(int(g) - 1, int(h) - 1): [tuple(map(float, iv)) for iv in ivs] for g, h, ivs in d["fused_pairs"]}
        return cls(
            params=ModelParams.from_dict(d["params"]),
            posteriors=np.asarray(d["posteriors"], dtype=float),
            labels=np.asarray(d["labels"], dtype=int),
            objective_trace=np.asarray(d["objective_trace"], dtype=float),
            fused_pairs=fused,
            converged=bool(d["converged"]),
            n_iters=int(d["n_iters"]),
            config=FitConfig.from_dict(d["config"]),
            basis=BSplineBasis.from_dict(d["basis"]),
            fuse_threshold=float(d["fuse_threshold"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# initialisation and weights


GCV_GRID = 10.0 ** np.arange(-4.0, 4.01, 0.5)


def _smooth_fit(grp, W, rho):
    A = grp.StS + rho * W
    A[np.diag_indices_from(A)] += _JITTER * max(np.trace(grp.StS) / grp.StS.shape[0], 1.0)
    coef = np.linalg.solve(A, grp.SY.T).T
    sse = float(np.sum(grp.yy) - 2.0 * np.sum(coef * grp.SY) + np.sum((coef @ grp.StS) * coef))
    df = float(np.trace(np.linalg.solve(A, grp.StS)))
    return coef, max(sse, 0.0), df


def smooth_coefficients(data: DesignData, W: np.ndarray, init_smoothing: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """Penalised least-squares coefficients for every curve and the mean squared residual.

    Each curve gets penalty ``rho W`` with ``rho = s * trace(S^T S) / trace(W)``
    for its grid. ``s = init_smoothing`` when given; otherwise ``s`` minimises
    the pooled generalised cross-validation score
    ``n_total * SSE / (n_total - sum_i df_i)^2`` over :data:`GCV_GRID`.
    """
    trW = np.trace(W)

    def solve(s):
        C = np.empty((data.n_curves, data.q))
        sse = dof = 0.0
        for grp in data.groups:
            rho = s * np.trace(grp.StS) / trW if trW > 0 else 0.0
            coef, e, df = _smooth_fit(grp, W, rho)
            C[grp.index] = coef
            sse += e
            dof += df * grp.index.size
        return C, sse, dof

    n = data.total_points
    if init_smoothing is None:
        best = None
        for s in GCV_GRID:
            C, sse, dof = solve(s)
            score = n * sse / max(n - dof, 1e-12) ** 2
            if best is None or score < best[0]:
                best = (score, C, sse)
        _, C, sse = best
    else:
        C, sse, _ = solve(init_smoothing)
    return C, sse / n


def initialize(
    dataset,
    basis: BSplineBasis,
    G: int,
    seed: int = 0,
    *,
    init_smoothing: Optional[float] = 1.0,
    restarts: int = 10,
    deriv_order: int = 2,
) -> Tuple[ModelParams, np.ndarray]:
    """Starting parameters from k-means on smoothed per-curve coefficients.

    Returns the parameters and the initial cluster means; the latter also
    define the adaptive fusion weights.
    """
    data = DesignData.ensure(dataset, basis)
    N = data.n_curves
    if G < 1:
        raise ValueError("G must be >= 1")
    W = roughness_matrix(data.basis, min(deriv_order, data.basis.order - 1))
    C, resid = smooth_coefficients(data, W, init_smoothing)
    if np.unique(C, axis=0).shape[0] < G:
        raise ValueError(f"fewer than G={G} distinct curves")
    if G == 1:
        labels = np.zeros(N, dtype=int)
        centers = C.mean(axis=0, keepdims=True)
    else:
        km = KMeans(n_clusters=G, n_init=restarts, random_state=seed).fit(C)
        labels = km.labels_
        centers = np.stack([C[labels == g].mean(axis=0) for g in range(G)])
    shares = np.bincount(labels, minlength=G) / N
    shares = np.maximum(shares, 1.0 / (10 * N))
    shares /= shares.sum()
    gamma = np.mean((C - centers[labels]) ** 2, axis=0)
    params = ModelParams(shares, centers, gamma, max(resid, NOISE_VAR_FLOOR))
    return params, centers.copy()


def _pairs(G: int) -> List[Tuple[int, int]]:
    return list(combinations(range(G), 2))


def adaptive_weights(initial_means: np.ndarray, knots: StepKnots, eps_w: float = 1e-8) -> AdaptiveWeights:
    """``w_ghj = gap_j / max(|mu~_gj - mu~_hj|, eps_w)`` for every pair ``g < h``."""
    mu = np.atleast_2d(np.asarray(initial_means, dtype=float))
    if not np.all(np.isfinite(mu)):
        raise ValueError("initial means must be finite")
    if mu.shape[1] != knots.gaps.size:
        raise ValueError("initial means and step knots disagree on the basis dimension")
    pairs = _pairs(mu.shape[0])
    if not pairs:
        return AdaptiveWeights(pairs, np.zeros((0, mu.shape[1])))
    diffs = np.abs(np.stack([mu[g] - mu[h] for g, h in pairs]))
    return AdaptiveWeights(pairs, knots.gaps / np.maximum(diffs, eps_w))


# --------------------------------------------------------------------------
# objective


def fusion_penalty(means: np.ndarray, weights: AdaptiveWeights) -> float:
    """``sum_{g<h} sum_j w_ghj |mu_gj - mu_hj|`` (without the lambda factor)."""
    total = 0.0
    for p, (g, h) in enumerate(weights.pairs):
        total += float(weights.weights[p] @ np.abs(means[g] - means[h]))
    return total


def _penalty(means, weights, W, config) -> float:
    pen = 0.0
    if config.lambda_fuse:
        pen += config.lambda_fuse * fusion_penalty(means, weights)
    if config.lambda_smooth:
        pen += config.lambda_smooth * float(np.sum((means @ W) * means))
    return pen


def penalized_loglik(dataset, params: ModelParams, weights: AdaptiveWeights, W: np.ndarray, config: FitConfig, basis=None) -> float:
    """Mixture log-likelihood minus the fusion and roughness penalties."""
    return log_likelihood(dataset, params, basis) - _penalty(params.means, weights, W, config)


# --------------------------------------------------------------------------
# CM steps


def update_mixing(posteriors: np.ndarray) -> np.ndarray:
    """Column means of the posterior matrix."""
    pi = np.asarray(posteriors, dtype=float).mean(axis=0)
    return pi / pi.sum()


def update_gamma_diag(estep: EStepQuantities, posteriors: np.ndarray) -> np.ndarray:
    """``(1/N) sum_i sum_g p_ig (E[gamma_ig]_j^2 + Cov_i[j, j])``."""
    N = posteriors.shape[0]
    second = np.einsum("ig,igj->j", posteriors, estep.gamma_mean**2)
    counts = np.bincount(estep.group_of, weights=posteriors.sum(axis=1), minlength=len(estep.cov_groups))
    for k, cov in enumerate(estep.cov_groups):
        second += counts[k] * np.diag(cov)
    return np.maximum(second / N, 0.0)


def update_noise_var(dataset, params: ModelParams, estep: EStepQuantities, posteriors: np.ndarray, basis=None) -> float:
    """Expected squared residual per observed point, given the current means."""
    data = DesignData.ensure(dataset, basis)
    total = 0.0
    for k, grp in enumerate(data.groups):
        p = posteriors[grp.index]  # (m, G)
        c = params.means[None, :, :] + estep.gamma_mean[grp.index]  # (m, G, q)
        # ||Y - S c||^2 = Y^T Y - 2 c^T S^T Y + c^T S^T S c
        r2 = grp.yy[:, None] - 2.0 * np.sum(c * grp.SY[:, None, :], axis=2) + np.sum((c @ grp.StS) * c, axis=2)
        total += float(np.sum(p * r2))
        total += float(p.sum()) * float(np.sum(grp.StS * estep.cov_groups[k]))
    return max(total / data.total_points, NOISE_VAR_FLOOR)


def _mean_step_terms(data: DesignData, posteriors: np.ndarray, estep: EStepQuantities, noise_var: float):
    """Blocks ``A_g``, vectors ``b_g`` and constant of the quadratic data term.

    The data term equals ``0.5 mu_g^T A_g mu_g - b_g^T mu_g + const`` summed over g.
    """
    G, q = posteriors.shape[1], data.q
    A = np.zeros((G, q, q))
    b = np.zeros((G, q))
    const = 0.0
    for grp in data.groups:
        p = posteriors[grp.index]  # (m, G)
        gm = estep.gamma_mean[grp.index]  # (m, G, q)
        A += p.sum(axis=0)[:, None, None] * grp.StS
        pg = p[:, :, None] * gm
        b += p.T @ grp.SY - pg.sum(axis=0) @ grp.StS
        # ||Y - S gamma||^2 expanded as in update_noise_var
        r2 = grp.yy[:, None] - 2.0 * np.sum(gm * grp.SY[:, None, :], axis=2) + np.sum((gm @ grp.StS) * gm, axis=2)
        const += float(np.sum(p * r2))
    return A / noise_var, b / noise_var, 0.5 * const / noise_var


def _objective(mu, A, b, const, W, weights, config) -> float:
    quad = 0.5 * float(np.sum(np.matmul(A, mu[:, :, None])[:, :, 0] * mu)) - float(np.sum(b * mu)) + const
    return quad + _penalty(mu, weights, W, config)


def mean_step_objective(
    dataset,
    posteriors: np.ndarray,
    estep: EStepQuantities,
    means: np.ndarray,
    weights: AdaptiveWeights,
    W: np.ndarray,
    config: FitConfig,
    noise_var: float,
    basis=None,
) -> float:
    """Value of the penalised weighted least-squares criterion minimised by the mean step."""
    data = DesignData.ensure(dataset, basis)
    A, b, const = _mean_step_terms(data, posteriors, estep, noise_var)
    return _objective(np.asarray(means, dtype=float), A, b, const, W, weights, config)


def _fusion_index(pairs, q):
    a = np.array([g for g, _ in pairs], dtype=int)
    h = np.array([h for _, h in pairs], dtype=int)
    j = np.arange(q)
    ia = (a[:, None] * q + j).ravel()
    ib = (h[:, None] * q + j).ravel()
    return a, h, ia, ib


def _lqa(A, b, const, W, weights, config, start) -> Tuple[np.ndarray, LQAInfo]:
    G, q = b.shape
    lam_l, lam_s, floor = config.lambda_fuse, config.lambda_smooth, config.lqa_floor
    H0 = np.zeros((G * q, G * q))
    for g in range(G):
        H0[g * q : (g + 1) * q, g * q : (g + 1) * q] = A[g] + 2.0 * lam_s * W
    rhs = b.ravel()
    fuse = lam_l > 0 and len(weights.pairs) > 0
    if fuse:
        ga, gb, ia, ib = _fusion_index(weights.pairs, q)
        both = np.concatenate((ia, ib))
        lw = lam_l * weights.weights.ravel()
    diag = np.diag_indices(G * q)

    mu = np.array(start, dtype=float)
    f_best = _objective(mu, A, b, const, W, weights, config)
    mu_best = mu.copy()
    info = LQAInfo(0, False, [], [f_best])
    for s in range(config.max_lqa_iters):
        H = H0.copy()
        if fuse:
            d = np.maximum(np.abs(mu[ga] - mu[gb]).ravel(), floor)
            c = lw / d
            # each (ia, ib) position occurs once, so plain fancy indexing is safe off the diagonal
            H[ia, ib] -= c
            H[ib, ia] -= c
            H[diag] += np.bincount(both, weights=np.concatenate((c, c)), minlength=G * q)
        try:
            new = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            H[diag] += _JITTER
            info.jitter = True
            warnings.warn("mean-step system is singular; added diagonal jitter", RuntimeWarning, stacklevel=3)
            new = np.linalg.solve(H, rhs)
        new = new.reshape(G, q)
        sur = 0.5 * float(np.sum(np.matmul(A, new[:, :, None])[:, :, 0] * new)) - float(np.sum(b * new)) + const
        sur += lam_s * float(np.sum((new @ W) * new))
        if fuse:
            dn = (new[ga] - new[gb]).ravel()
            sur += float(np.sum(lw * (dn**2 / (2.0 * d) + d / 2.0)))
        info.surrogate.append(sur)
        f_new = _objective(new, A, b, const, W, weights, config)
        info.objective.append(f_new)
        if f_new < f_best:
            f_best, mu_best = f_new, new
        change = float(np.max(np.abs(new - mu)))
        mu = new
        info.n_iter = s + 1
        if change < config.lqa_tol:
            info.converged = True
            break
    return mu_best, info


def update_means_lqa(
    dataset,
    posteriors: np.ndarray,
    estep: EStepQuantities,
    current_means: np.ndarray,
    weights: AdaptiveWeights,
    W: np.ndarray,
    config: FitConfig,
    noise_var: float,
    basis=None,
    return_info: bool = False,
):
    """Minimise the penalised mean-step criterion by local quadratic approximation.

    The absolute differences are majorised at the current iterate by
    ``x^2 / (2 max(|x0|, lqa_floor)) + max(|x0|, lqa_floor) / 2``. The
    returned means are the best iterate found (the start included), so the
    criterion never increases.
    """
    data = DesignData.ensure(dataset, basis)
    A, b, const = _mean_step_terms(data, posteriors, estep, noise_var)
    mu, info = _lqa(A, b, const, W, weights, config, current_means)
    return (mu, info) if return_info else mu


# --------------------------------------------------------------------------
# fusion post-processing


def snap_fused(means: np.ndarray, threshold: float) -> np.ndarray:
    """Replace, per coordinate, every group of transitively close means by the group average."""
    mu = np.array(means, dtype=float)
    G, q = mu.shape
    for j in range(q):
        parent = list(range(G))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for g, h in combinations(range(G), 2):
            if abs(mu[g, j] - mu[h, j]) <= threshold:
                parent[find(g)] = find(h)
        roots = np.array([find(g) for g in range(G)])
        for r in np.unique(roots):
            members = roots == r
            if members.sum() > 1:
                mu[members, j] = mu[members, j].mean()
    return mu


def merge_intervals(intervals: Sequence[Tuple[float, float]]) -> Intervals:
    """Sorted union of closed intervals; touching intervals are joined and empty ones dropped."""
    out: Intervals = []
    for lo, hi in sorted((float(a), float(b)) for a, b in intervals if b > a):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def fused_regions(params, knots: StepKnots, eps_fuse: float) -> PairIntervals:
    """Per pair, union of ``[tau_j, tau_{j+1}]`` over coefficients whose means differ by at most ``eps_fuse``."""
    means = params.means if isinstance(params, ModelParams) else np.atleast_2d(params)
    out: PairIntervals = {}
    for g, h in _pairs(means.shape[0]):
        idx = np.flatnonzero(np.abs(means[g] - means[h]) <= eps_fuse)
        out[(g, h)] = merge_intervals([(knots.tau[j], knots.tau[j + 1]) for j in idx])
    return out


def default_fuse_threshold(initial_means: np.ndarray) -> float:
    return 1e-3 * max(1.0, float(np.median(np.abs(initial_means))))


# --------------------------------------------------------------------------
# driver


def fit(
    dataset,
    basis: BSplineBasis,
    config: FitConfig,
    *,
    init: Optional[Tuple[ModelParams, np.ndarray]] = None,
    weights: Optional[AdaptiveWeights] = None,
) -> FitResult:
    """Fit the penalised mixture by ECM.

    Parameters
    ----------
    dataset : Dataset or DesignData
        Curves to cluster.
    basis : BSplineBasis
        Basis for cluster means and random effects.
    config : FitConfig
        Penalties, tolerances and seed.
    init : tuple, optional
        ``(params, initial_means)`` as returned by :func:`initialize`; computed
        from ``config.seed`` when omitted.
    weights : AdaptiveWeights, optional
        Override for the fusion weights derived from the initial means.
    """
    data = DesignData.ensure(dataset, basis)
    G = config.n_clusters
    if data.n_curves < G:
        raise ValueError(f"need at least G={G} curves, got {data.n_curves}")
    W = roughness_matrix(basis, config.deriv_order)
    knots = step_knots(basis)
    if init is None:
        init = initialize(
            data,
            basis,
            G,
            config.seed,
            init_smoothing=config.init_smoothing,
            restarts=config.kmeans_restarts,
            deriv_order=config.deriv_order,
        )
    params, mu_tilde = init
    params = params.copy()
    if params.n_clusters != G:
        raise ValueError("initial parameters disagree with config.n_clusters")
    if weights is None:
        weights = adaptive_weights(mu_tilde, knots, config.weight_floor)
    eps_fuse = config.fuse_threshold if config.fuse_threshold is not None else default_fuse_threshold(mu_tilde)

    estep = e_step(data, params)
    obj = estep.loglik - _penalty(params.means, weights, W, config)
    trace = [obj]
    converged = False
    n_iters = 0
    for it in range(config.max_ecm_iters):
        post = estep.posteriors
        mixing = update_mixing(post)
        gamma = update_gamma_diag(estep, post)
        noise = update_noise_var(data, params, estep, post)
        means = update_means_lqa(data, post, estep, params.means, weights, W, config, noise_var=noise)
        params = ModelParams(mixing, means, gamma, noise)
        estep = e_step(data, params)
        new_obj = estep.loglik - _penalty(params.means, weights, W, config)
        trace.append(new_obj)
        n_iters = it + 1
        if abs(new_obj - obj) <= config.ecm_tol * abs(obj):
            converged = True
            break
        obj = new_obj

    unsnapped = params.means.copy()
    final = ModelParams(params.mixing, snap_fused(unsnapped, eps_fuse), params.gamma_diag, params.noise_var)
    final_estep = e_step(data, final)
    post = final_estep.posteriors
    labels = np.argmax(post, axis=1) + 1
    return FitResult(
        params=final,
        posteriors=post,
        labels=labels,
        objective_trace=np.asarray(trace),
        fused_pairs=fused_regions(final, knots, eps_fuse),
        converged=converged,
        n_iters=n_iters,
        config=config,
        basis=basis,
        fuse_threshold=eps_fuse,
        unsnapped_means=unsnapped,
        weights=weights,
    )
