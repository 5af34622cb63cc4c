"""Monte Carlo replicates: simulate, cross-validate, refit and score."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import GroundTruth
from .ecm import FitConfig, FitResult, fit
from .metrics import adjusted_rand, mean_rmse, noninformative_fraction
from .selection import Cell, CVScore, SelectionGrid, SelectionResult, apply_rule, cv_table
from .simulate import ScenarioSpec, generate, replicate_seeds, scenario_basis

__all__ = ["DEFAULT_LAMBDA_S", "DEFAULT_LAMBDA_L", "ReplicateResult", "evaluate_fit", "run_replicate", "run_study", "summarize"]

DEFAULT_LAMBDA_S = (1e-5, 1e-4, 1e-3, 1e-2)
DEFAULT_LAMBDA_L = (0.0, 1.0, 10.0, 100.0, 1000.0)


@dataclass
class ReplicateResult:
    seed: int
    G_selected: int
    lambda_s: float
    lambda_l: float
    aRand: float
    rmse: float
    noninf_fraction: float


def evaluate_fit(result: FitResult, truth: GroundTruth) -> Dict[str, float]:
    """aRand, mean RMSE (NaN when the number of clusters differs) and noninformative fraction."""
    basis = result.basis
    means = result.params.means
    rmse = (
        mean_rmse(truth.true_mean_coefficients, means, basis)
        if means.shape == truth.true_mean_coefficients.shape
        else math.nan
    )
    return {
        "aRand": adjusted_rand(result.labels, truth.true_labels),
        "rmse": rmse,
        "noninf_fraction": noninformative_fraction(result.fused_pairs, truth, means, basis),
        "G_selected": result.n_clusters,
    }


def run_replicate(
    spec: ScenarioSpec,
    grid: SelectionGrid,
    base_config: Optional[FitConfig] = None,
    table: Optional[Dict[Cell, CVScore]] = None,
) -> ReplicateResult:
    """One replicate at ``spec.seed``. A precomputed CV ``table`` may be restricted to a sub-grid."""
    dataset, truth = generate(spec)
    basis = scenario_basis()
    base = (base_config or FitConfig()).replace(seed=spec.seed)
    if table is None:
        table = cv_table(dataset, basis, grid, base)
    wanted = set(grid.cells())
    sel: SelectionResult = apply_rule({c: s for c, s in table.items() if c in wanted}, grid.m1, grid.m2, grid.m3)
    result = fit(dataset, basis, sel.config(base))
    scores = evaluate_fit(result, truth)
    G, ls, ll = sel.chosen
    return ReplicateResult(spec.seed, G, ls, ll, scores["aRand"], scores["rmse"], scores["noninf_fraction"])


def run_study(
    scenario: str,
    sigma_e: float,
    n_replicates: int,
    master_seed: int,
    grid: SelectionGrid,
    base_config: Optional[FitConfig] = None,
    n_per_cluster: int = 200,
    n_points: int = 50,
) -> List[ReplicateResult]:
    """Replicates with seeds derived from ``master_seed``; each uses its own seed for folds and initialisation."""
    out = []
    for seed in replicate_seeds(master_seed, n_replicates):
        spec = ScenarioSpec(scenario, sigma_e, n_per_cluster=n_per_cluster, n_points=n_points, seed=seed)
        out.append(run_replicate(spec, _with_seed(grid, seed), base_config))
    return out


def _with_seed(grid: SelectionGrid, seed: int) -> SelectionGrid:
    d = grid.to_dict()
    d["seed"] = seed
    return SelectionGrid.from_dict(d)


def summarize(rows: Sequence[ReplicateResult]) -> Dict[str, float]:
    """Replicate means; RMSE averages only replicates where it is defined."""
    arr = {k: np.array([getattr(r, k) for r in rows], dtype=float) for k in ("aRand", "rmse", "noninf_fraction", "G_selected")}
    rmse = arr["rmse"][~np.isnan(arr["rmse"])]
    return {
        "replicates": len(rows),
        "aRand": float(arr["aRand"].mean()),
        "rmse": float(rmse.mean()) if rmse.size else math.nan,
        "noninf_fraction": float(arr["noninf_fraction"].mean()),
        "G_selected_mean": float(arr["G_selected"].mean()),
    }


def as_row(r: ReplicateResult) -> dict:
    return asdict(r)
