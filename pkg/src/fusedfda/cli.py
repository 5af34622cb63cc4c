"""Command-line interface.

Subcommands::

    simulate   generate a scenario dataset and its ground truth
    fit        fit the penalised mixture with fixed hyper-parameters
    cv         cross-validate a grid, pick a model, optionally refit it
    classify   assign new curves to the clusters of a fitted model
    evaluate   score a fitted model against simulation truth
    study      Monte Carlo replicates of simulate -> cv -> fit -> evaluate

Exit status is 0 on success, 1 on runtime errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .basis import BSplineBasis, design_matrix, make_basis
from .data import Dataset, GroundTruth, read_dataset, rescale_to_unit, write_dataset
from .ecm import FitConfig, FitResult, fit
from .mixture import DesignData, log_component_densities
from .selection import SelectionGrid, apply_rule, cv_table, write_cv_table
from .simulate import ScenarioSpec, generate
from .study import DEFAULT_LAMBDA_L, DEFAULT_LAMBDA_S, as_row, evaluate_fit, run_study, summarize

MEANS_GRID_POINTS = 200


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# shared pieces


def _add_basis_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q", type=int, default=30, help="number of basis functions (default 30)")
    p.add_argument("--order", type=int, default=4, help="spline order, 4 = cubic (default 4)")
    p.add_argument("--rescale", action="store_true", help="map the observed time range onto [0, 1] before fitting")


def _add_fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with FitConfig fields; explicit flags take precedence")
    p.add_argument("--seed", type=int, default=None, help="seed for initialisation (default 0)")
    p.add_argument("--max-iter", type=int, default=None, dest="max_ecm_iters", help="maximum ECM sweeps")
    p.add_argument("--tol", type=float, default=None, dest="ecm_tol", help="relative objective tolerance")


def _basis_for(ds: Dataset, q: int, order: int) -> BSplineBasis:
    if q < order:
        raise ValueError(f"--q must be at least --order ({order})")
    return make_basis(order, q - order, ds.domain)


def _base_config(args, **overrides) -> FitConfig:
    cfg = FitConfig()
    if getattr(args, "config", None):
        cfg = FitConfig.from_dict({**cfg.to_dict(), **_load_json(args.config)})
    flags = {k: getattr(args, k, None) for k in ("seed", "max_ecm_iters", "ecm_tol")}
    flags.update(overrides)
    return cfg.replace(**{k: v for k, v in flags.items() if v is not None})


def _fit_outputs(result: FitResult, out: Path, input_domain) -> None:
    doc = result.to_dict()
    doc["input_domain"] = list(input_domain)
    _write_text(out / "fit.json", json.dumps(doc, indent=1) + "\n")
    lo, hi = result.basis.domain
    t = np.linspace(lo, hi, MEANS_GRID_POINTS)
    mu = design_matrix(result.basis, t) @ result.params.means.T
    rows = [(g + 1, t[i], mu[i, g]) for g in range(result.n_clusters) for i in range(t.size)]
    _write_csv(out / "means.csv", ["cluster", "t", "mu"], rows)
    fused = [(g + 1, h + 1, lo_, hi_) for (g, h), ivs in sorted(result.fused_pairs.items()) for lo_, hi_ in ivs]
    _write_csv(out / "fused.csv", ["g", "g2", "lo", "hi"], fused)
    if not result.converged:
        warnings.warn(f"ECM did not converge in {result.n_iters} sweeps", RuntimeWarning, stacklevel=2)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(
        args.scenario,
        args.sigma_e,
        n_per_cluster=args.n_per_cluster,
        n_points=args.n_points,
        sigma_c=args.sigma_c,
        seed=args.seed,
    )
    dataset, truth = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out / "data.csv")
    doc = {"scenario": spec.scenario, "sigma_e": spec.sigma_e, "sigma_c": spec.sigma_c, "seed": spec.seed}
    doc.update(truth.to_dict())
    _write_text(out / "truth.json", json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_fit(args) -> int:
    raw = read_dataset(args.data)
    ds = rescale_to_unit(raw) if args.rescale else raw
    basis = _basis_for(ds, args.q, args.order)
    overrides = {"n_clusters": args.g, "lambda_fuse": args.lambda_l, "lambda_smooth": args.lambda_s}
    config = _base_config(args, **overrides)
    result = fit(ds, basis, config)
    _fit_outputs(result, Path(args.out), raw.domain)
    return 0


def cmd_cv(args) -> int:
    raw = read_dataset(args.data)
    ds = rescale_to_unit(raw) if args.rescale else raw
    basis = _basis_for(ds, args.q, args.order)
    grid = SelectionGrid(
        tuple(sorted(set(args.g))),
        tuple(sorted(set(args.lambda_s))),
        tuple(sorted(set(args.lambda_l))),
        k_folds=args.k,
        m1=args.m1,
        m2=args.m2,
        m3=args.m3,
        seed=args.cv_seed if args.cv_seed is not None else (args.seed or 0),
    )
    base = _base_config(args)

    def progress(cell, score):
        if args.verbose:
            print(f"G={cell[0]} lambda_s={cell[1]:g} lambda_l={cell[2]:g} cv={score.mean:.4f} se={score.stderr:.4f}", file=sys.stderr)

    table = cv_table(ds, basis, grid, base, progress)
    sel = apply_rule(table, grid.m1, grid.m2, grid.m3)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cv_table(table, out / "cv_table.csv")
    doc = sel.to_dict()
    doc["grid"] = grid.to_dict()
    doc["config"] = sel.config(base).to_dict()
    _write_text(out / "chosen.json", json.dumps(doc, indent=1) + "\n")
    if args.refit:
        _fit_outputs(fit(ds, basis, sel.config(base)), out, raw.domain)
    return 0


def _load_model(path: str):
    doc = _load_json(path)
    return FitResult.from_dict(doc), doc.get("input_domain")


def cmd_classify(args) -> int:
    model, input_domain = _load_model(args.model)
    basis = model.basis
    if input_domain is not None and tuple(input_domain) != basis.domain:
        # the model was fitted on rescaled time; map new curves the same way
        raw = read_dataset(args.data, domain=tuple(input_domain))
        ds = rescale_to_unit(raw)
    else:
        ds = read_dataset(args.data, domain=basis.domain)
    data = DesignData(ds, basis)
    scores = log_component_densities(data, model.params)
    with np.errstate(divide="ignore"):
        scores = scores + np.log(model.params.mixing)
    scores -= scores.max(axis=1, keepdims=True)
    post = np.exp(scores)
    post /= post.sum(axis=1, keepdims=True)
    labels = np.argmax(scores, axis=1) + 1
    G = model.n_clusters
    rows = [(c.id, int(labels[i]), *post[i]) for i, c in enumerate(ds.curves)]
    header = ["curve_id", "label"] + [f"posterior_{g + 1}" for g in range(G)]
    if args.out:
        _write_csv(Path(args.out), header, rows)
    else:
        w = sys.stdout
        w.write(",".join(header) + "\n")
        for r in rows:
            w.write(",".join([r[0], str(r[1])] + [_fmt(v) for v in r[2:]]) + "\n")
    return 0


def _truth_from_json(path: str) -> GroundTruth:
    return GroundTruth.from_dict(_load_json(path))


def cmd_evaluate(args) -> int:
    model, _ = _load_model(args.model)
    truth = _truth_from_json(args.truth)
    if truth.true_labels.size != model.labels.size:
        raise ValueError("truth and model describe different numbers of curves")
    m = evaluate_fit(model, truth)
    row = [m["aRand"], m["rmse"], m["noninf_fraction"], int(m["G_selected"])]
    header = ["aRand", "rmse", "noninf_fraction", "G_selected"]
    if args.out:
        _write_csv(Path(args.out), header, [row])
    else:
        sys.stdout.write(",".join(header) + "\n" + ",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return 0


def cmd_study(args) -> int:
    grid = SelectionGrid(
        tuple(sorted(set(args.g))),
        tuple(sorted(set(args.lambda_s))),
        tuple(sorted(set(args.lambda_l))),
        k_folds=args.k,
        m1=args.m1,
        m2=args.m2,
        m3=args.m3,
    )
    rows = []
    out = Path(args.out)
    for sigma in args.sigma_e:
        reps = run_study(
            args.scenario,
            sigma,
            args.replicates,
            args.seed,
            grid,
            n_per_cluster=args.n_per_cluster,
            n_points=args.n_points,
        )
        for r in reps:
            rows.append({"sigma_e": sigma, **as_row(r)})
            if args.verbose:
                print(f"sigma_e={sigma:g} seed={r.seed} G={r.G_selected} aRand={r.aRand:.4f} fraction={r.noninf_fraction:.4f}", file=sys.stderr)
        s = summarize(reps)
        print(f"scenario {args.scenario} sigma_e={sigma:g}: aRand={s['aRand']:.4f} rmse={s['rmse']:.4f} fraction={s['noninf_fraction']:.4f} G={s['G_selected_mean']:.2f}")
    keys = ["sigma_e", "seed", "G_selected", "lambda_s", "lambda_l", "aRand", "rmse", "noninf_fraction"]
    _write_csv(out / "replicates.csv", keys, [[r[k] for k in keys] for r in rows])
    summary = []
    for sigma in args.sigma_e:
        sub = [r for r in rows if r["sigma_e"] == sigma]
        vals = {k: np.array([r[k] for r in sub], dtype=float) for k in ("aRand", "rmse", "noninf_fraction", "G_selected")}
        rm = vals["rmse"][~np.isnan(vals["rmse"])]
        summary.append(
            [sigma, len(sub), vals["aRand"].mean(), rm.mean() if rm.size else math.nan, vals["noninf_fraction"].mean(), vals["G_selected"].mean()]
        )
    _write_csv(out / "summary.csv", ["sigma_e", "replicates", "aRand", "rmse", "noninf_fraction", "G_selected"], summary)
    return 0


# --------------------------------------------------------------------------
# parser


def _grid_args(p: argparse.ArgumentParser, default_g: str) -> None:
    p.add_argument("--g", type=_ints, default=_ints(default_g), help=f"cluster counts (default {default_g})")
    p.add_argument("--lambda-l", type=_floats, default=list(DEFAULT_LAMBDA_L), help="fusion penalties")
    p.add_argument("--lambda-s", type=_floats, default=list(DEFAULT_LAMBDA_S), help="smoothness penalties")
    p.add_argument("--k", type=int, default=5, help="number of CV folds (default 5)")
    p.add_argument("--m1", type=float, default=0.5, help="tolerance for choosing G (default 0.5)")
    p.add_argument("--m2", type=float, default=0.0, help="tolerance for choosing lambda_s (default 0)")
    p.add_argument("--m3", type=float, default=0.5, help="tolerance for choosing lambda_l (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusedfda", description="Sparse and smooth clustering of functional data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scenario dataset")
    p.add_argument("--scenario", required=True, choices=["I", "II", "III"])
    p.add_argument("--sigma-e", type=float, required=True, help="measurement noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-cluster", type=int, default=200)
    p.add_argument("--n-points", type=int, default=50)
    p.add_argument("--sigma-c", type=float, default=0.5)
    p.add_argument("--out", default=".", help="output directory for data.csv and truth.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit with fixed hyper-parameters")
    p.add_argument("data", help="long CSV with columns curve_id,t,y[,label]")
    p.add_argument("--g", type=int, default=None, help="number of clusters")
    p.add_argument("--lambda-l", type=float, default=None, help="fusion penalty")
    p.add_argument("--lambda-s", type=float, default=None, help="smoothness penalty")
    _add_basis_args(p)
    _add_fit_args(p)
    p.add_argument("--out", default=".", help="output directory for fit.json, means.csv, fused.csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validated model selection")
    p.add_argument("data")
    _grid_args(p, "1,2,3")
    p.add_argument("--cv-seed", type=int, default=None, help="seed for fold assignment (default: --seed)")
    p.add_argument("--refit", action="store_true", help="also fit the chosen model and write its outputs")
    p.add_argument("--verbose", "-v", action="store_true")
    _add_basis_args(p)
    _add_fit_args(p)
    p.add_argument("--out", default=".", help="output directory for cv_table.csv and chosen.json")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("classify", help="classify curves with a fitted model")
    p.add_argument("data", help="long CSV of curves to classify")
    p.add_argument("--model", required=True, help="fit.json written by fit or cv --refit")
    p.add_argument("--out", help="output CSV (default: standard output)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score a fit against ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True, help="truth.json written by simulate")
    p.add_argument("--out", help="output CSV (default: standard output)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="Monte Carlo replicates")
    p.add_argument("--scenario", required=True, choices=["I", "II", "III"])
    p.add_argument("--sigma-e", type=_floats, default=[1.0], help="comma-separated noise levels")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="master seed for replicate seeds")
    p.add_argument("--n-per-cluster", type=int, default=200)
    p.add_argument("--n-points", type=int, default=50)
    _grid_args(p, "1,2,3")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--out", default=".", help="output directory for replicates.csv and summary.csv")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return int(args.func(args))
    except (ValueError, OSError, KeyError, json.JSONDecodeError, np.linalg.LinAlgError) as exc:
        print(f"fusedfda {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
