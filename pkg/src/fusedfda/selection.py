"""K-fold cross-validation and staged m-standard-error model selection.

A held-out fold is scored by the sum of its curves' mixture log-densities
under the model fitted to the remaining folds; the CV score of a grid cell is
the average over folds. Selection then proceeds in three stages, each taking
the most parsimonious value whose score is within ``m`` standard errors of the
stage's best:

1. for every ``(lambda_s, lambda_l)`` pick the smallest ``G`` (tolerance ``m1``),
   then fix ``G`` to the lower median of those choices;
2. for every ``lambda_l`` pick the largest ``lambda_s`` (tolerance ``m2``);
3. pick the largest ``lambda_l`` (tolerance ``m3``).
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .basis import BSplineBasis
from .data import Dataset
from .ecm import FitConfig, fit, initialize
from .mixture import DesignData, log_likelihood

__all__ = [
    "CVScore",
    "SelectionGrid",
    "SelectionResult",
    "make_folds",
    "cv_score",
    "cv_table",
    "apply_rule",
    "select_model",
    "write_cv_table",
    "read_cv_table",
]

Cell = Tuple[int, float, float]  # (G, lambda_s, lambda_l)


@dataclass(frozen=True)
class CVScore:
    mean: float
    stderr: float
    fold_scores: Tuple[float, ...]

    @classmethod
    def from_folds(cls, scores: Sequence[float]) -> "CVScore":
        s = np.asarray(scores, dtype=float)
        se = float(np.std(s, ddof=1) / np.sqrt(s.size)) if s.size > 1 else 0.0
        return cls(float(s.mean()), se, tuple(float(v) for v in s))


@dataclass(frozen=True)
class SelectionGrid:
    """Hyper-parameter grid and rule tolerances. Value lists must be ascending."""

    g_values: Tuple[int, ...]
    lambda_s_values: Tuple[float, ...]
    lambda_l_values: Tuple[float, ...]
    k_folds: int = 5
    m1: float = 0.5
    m2: float = 0.0
    m3: float = 0.5
    seed: int = 0

    def __post_init__(self):
        g = tuple(int(v) for v in self.g_values)
        ls = tuple(float(v) for v in self.lambda_s_values)
        ll = tuple(float(v) for v in self.lambda_l_values)
        for name, vals in (("g_values", g), ("lambda_s_values", ls), ("lambda_l_values", ll)):
            if not vals:
                raise ValueError(f"{name} must be nonempty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        if g[0] < 1:
            raise ValueError("G values must be >= 1")
        if ls[0] < 0 or ll[0] < 0:
            raise ValueError("penalty values must be nonnegative")
        if self.k_folds < 2:
            raise ValueError("need at least 2 folds")
        if min(self.m1, self.m2, self.m3) < 0:
            raise ValueError("m1, m2, m3 must be nonnegative")
        object.__setattr__(self, "g_values", g)
        object.__setattr__(self, "lambda_s_values", ls)
        object.__setattr__(self, "lambda_l_values", ll)

    def cells(self) -> List[Cell]:
        return [(G, ls, ll) for G in self.g_values for ls in self.lambda_s_values for ll in self.lambda_l_values]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("g_values", "lambda_s_values", "lambda_l_values"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionGrid":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown grid fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SelectionResult:
    """CV scores per grid cell and the outcome of each selection stage."""

    cv_table: Dict[Cell, CVScore]
    chosen: Cell
    stage1: Dict[Tuple[float, float], int]  # (lambda_s, lambda_l) -> G
    chosen_g: int
    stage2: Dict[float, float]  # lambda_l -> lambda_s at chosen_g
    chosen_lambda_l: float
    m: Tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))

    def config(self, base: FitConfig) -> FitConfig:
        G, ls, ll = self.chosen
        return base.replace(n_clusters=G, lambda_smooth=ls, lambda_fuse=ll)

    def to_dict(self) -> dict:
        G, ls, ll = self.chosen
        return {
            "chosen": {"n_clusters": G, "lambda_smooth": ls, "lambda_fuse": ll},
            "cv_mean": self.cv_table[self.chosen].mean,
            "cv_se": self.cv_table[self.chosen].stderr,
            "m1": self.m[0],
            "m2": self.m[1],
            "m3": self.m[2],
            "stage1": [[ls_, ll_, g] for (ls_, ll_), g in sorted(self.stage1.items())],
            "stage2": [[ll_, ls_] for ll_, ls_ in sorted(self.stage2.items())],
        }


def make_folds(n: int, k: int, seed: int = 0) -> List[np.ndarray]:
    """Split ``range(n)`` into ``k`` shuffled folds whose sizes differ by at most one."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k_folds <= N, got k={k}, N={n}")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


class _FoldData:
    """Train/test design data per fold, plus initialisations shared across penalty values."""

    def __init__(self, dataset: Dataset, basis: BSplineBasis, folds: Sequence[np.ndarray]):
        n = dataset.n_curves
        self.basis = basis
        self.train: List[DesignData] = []
        self.test: List[DesignData] = []
        for f in folds:
            mask = np.ones(n, dtype=bool)
            mask[f] = False
            self.train.append(DesignData(dataset.subset(np.flatnonzero(mask)), basis))
            self.test.append(DesignData(dataset.subset(f), basis))
        self._inits: Dict[tuple, tuple] = {}

    def init(self, k: int, config: FitConfig):
        key = (k, config.n_clusters, config.seed, config.init_smoothing, config.kmeans_restarts, config.deriv_order)
        if key not in self._inits:
            self._inits[key] = initialize(
                self.train[k],
                self.basis,
                config.n_clusters,
                config.seed,
                init_smoothing=config.init_smoothing,
                restarts=config.kmeans_restarts,
                deriv_order=config.deriv_order,
            )
        return self._inits[key]

    def score(self, config: FitConfig) -> CVScore:
        scores = []
        for k, (train, test) in enumerate(zip(self.train, self.test)):
            if train.n_curves < config.n_clusters:
                raise ValueError(f"fold {k + 1}: {train.n_curves} training curves cannot support G={config.n_clusters}")
            res = fit(train, self.basis, config, init=self.init(k, config))
            scores.append(float(log_likelihood(test, res.params)))
        return CVScore.from_folds(scores)


def cv_score(dataset: Dataset, basis: BSplineBasis, config: FitConfig, k_folds: int = 5, seed: int = 0) -> CVScore:
    """K-fold CV score of one configuration: mean held-out log-likelihood per fold and its standard error."""
    folds = make_folds(dataset.n_curves, k_folds, seed)
    return _FoldData(dataset, basis, folds).score(config)


def cv_table(
    dataset: Dataset,
    basis: BSplineBasis,
    grid: SelectionGrid,
    base_config: FitConfig,
    progress: Optional[Callable[[Cell, CVScore], None]] = None,
) -> Dict[Cell, CVScore]:
    """CV scores for every cell of ``grid``; all cells share folds and per-fold initialisations."""
    folds = make_folds(dataset.n_curves, grid.k_folds, grid.seed)
    fd = _FoldData(dataset, basis, folds)
    table: Dict[Cell, CVScore] = {}
    for cell in grid.cells():
        G, ls, ll = cell
        table[cell] = fd.score(base_config.replace(n_clusters=G, lambda_smooth=ls, lambda_fuse=ll))
        if progress is not None:
            progress(cell, table[cell])
    return table


def _within(candidates: Sequence, scores: Sequence[CVScore], m: float, prefer_largest: bool):
    means = np.array([s.mean for s in scores])
    best = int(np.argmax(means))
    cutoff = means[best] - m * scores[best].stderr
    ok = [i for i in range(len(candidates)) if means[i] >= cutoff]
    return candidates[ok[-1] if prefer_largest else ok[0]]


def apply_rule(table: Dict[Cell, CVScore], m1: float, m2: float, m3: float) -> SelectionResult:
    """Run the three selection stages on a complete CV table."""
    g_vals = sorted({c[0] for c in table})
    ls_vals = sorted({c[1] for c in table})
    ll_vals = sorted({c[2] for c in table})
    missing = [(G, ls, ll) for G in g_vals for ls in ls_vals for ll in ll_vals if (G, ls, ll) not in table]
    if missing:
        raise ValueError(f"CV table is not a full grid; missing {missing[:3]}")

    stage1 = {
        (ls, ll): _within(g_vals, [table[(G, ls, ll)] for G in g_vals], m1, prefer_largest=False)
        for ls in ls_vals
        for ll in ll_vals
    }
    # lower median keeps the rule monotone in m1
    picks = sorted(stage1.values())
    G = picks[(len(picks) - 1) // 2]

    stage2 = {ll: _within(ls_vals, [table[(G, ls, ll)] for ls in ls_vals], m2, prefer_largest=True) for ll in ll_vals}
    ll = _within(ll_vals, [table[(G, stage2[v], v)] for v in ll_vals], m3, prefer_largest=True)
    return SelectionResult(
        cv_table=dict(table),
        chosen=(G, stage2[ll], ll),
        stage1=stage1,
        chosen_g=G,
        stage2=stage2,
        chosen_lambda_l=ll,
        m=(m1, m2, m3),
    )


def select_model(
    dataset: Dataset,
    basis: BSplineBasis,
    grid: SelectionGrid,
    base_config: FitConfig,
    progress: Optional[Callable[[Cell, CVScore], None]] = None,
) -> SelectionResult:
    """Cross-validate every grid cell and apply the staged rule."""
    table = cv_table(dataset, basis, grid, base_config, progress)
    return apply_rule(table, grid.m1, grid.m2, grid.m3)


def write_cv_table(table: Dict[Cell, CVScore], dst: Union[str, os.PathLike, TextIO]) -> None:
    """CSV with columns ``G,lambda_s,lambda_l,cv_mean,cv_se,fold_1..fold_K``."""
    k = max(len(s.fold_scores) for s in table.values())
    header = ["G", "lambda_s", "lambda_l", "cv_mean", "cv_se"] + [f"fold_{i + 1}" for i in range(k)]
    rows = [",".join(header)]
    for (G, ls, ll), s in sorted(table.items()):
        vals = [str(G), repr(ls), repr(ll), repr(s.mean), repr(s.stderr)] + [repr(v) for v in s.fold_scores]
        rows.append(",".join(vals))
    text = "\n".join(rows) + "\n"
    if hasattr(dst, "write"):
        dst.write(text)
    else:
        with open(dst, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def read_cv_table(src: Union[str, os.PathLike, TextIO]) -> Dict[Cell, CVScore]:
    fh = src if hasattr(src, "read") else open(src, encoding="utf-8", newline="")
    try:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:5] != ["G", "lambda_s", "lambda_l", "cv_mean", "cv_se"]:
            raise ValueError("not a CV table")
        table = {}
        for row in reader:
            if not row:
                continue
            cell = (int(row[0]), float(row[1]), float(row[2]))
            table[cell] = CVScore(float(row[3]), float(row[4]), tuple(float(v) for v in row[5:]))
        return table
    finally:
        if fh is not src:
            fh.close()
