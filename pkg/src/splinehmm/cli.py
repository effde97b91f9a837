"""Command-line front end.

Subcommands: ``fit``, ``diagnose``, ``bootstrap``, ``select-states``,
``paramscan`` and ``simstudy``.  Every command is deterministic given its
inputs, config and ``--seed``; numeric output files carry 17 significant
digits, so they parse back losslessly.

Exit codes: 0 on success, 1 for usage or config errors, 2 for numerical
failures (no converged fit, degenerate chains, zero likelihood).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .basis import basis_for_data
from .densities import SplineDensity
from .estimation import FitConfig, FitError, PenaltySpec, fit
from .hmm import (
    marginal_density,
    model_acf,
    sample_acf,
    stationary_distribution,
    viterbi,
)
from .inference import bootstrap, density_band, jarque_bera, pseudo_residuals, tpm_intervals
from .io import (
    ConfigError,
    ingest,
    load_config,
    load_model,
    save_model,
    validate_config,
    write_csv,
    write_json,
)
from .selection import SmoothingGrid, make_partitions, parametric_scan, select_num_states, select_smoothing
from .simulation import SimScenario, run_study


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this front end reserves
    2 for numerical failures, so usage problems exit with 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_DATA_SCHEMA = {
    "data": str,
    "column": (str, int),
    "transform": str,
    "delimiter": str,
}


def _add_data_options(cmd):
    cmd.add_argument("--data", help="input CSV file")
    cmd.add_argument("--column", help="1-based column index or header name")
    cmd.add_argument("--transform", choices=["none", "log-absolute"], default=None)
    cmd.add_argument("--delimiter", default=None)


def _load_series(opts):
    if opts.get("data") is None:
        raise ConfigError("no input data file given (use --data or the config file)")
    ds = ingest(
        opts["data"],
        column=opts.get("column"),
        transform=opts.get("transform") or "none",
        delimiter=opts.get("delimiter") or ",",
    )
    return ds


def _merged_options(args, schema) -> dict:
    """Config file values overridden by explicitly given CLI flags."""
    opts = {}
    if getattr(args, "config", None):
        doc = load_config(args.config)
        validate_config(doc, schema)
        opts.update(doc)
    for key in schema:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            opts[key] = value
    return opts


def _parse_float_list(text, name):
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name}: {text!r}") from exc


def _parse_int_list(text, name):
    out = []
    for piece in str(text).split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "-" in piece[1:]:
            lo, hi = piece.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(piece))
    if not out:
        raise ConfigError(f"empty list for {name}")
    return out


def _grid_from_option(value, n_states) -> SmoothingGrid:
    if isinstance(value, str):
        return SmoothingGrid.shared(_parse_float_list(value, "grid"), n_states)
    if isinstance(value, list) and value and isinstance(value[0], list):
        if len(value) != n_states:
            raise ConfigError(f"grid has {len(value)} per-state lists; expected {n_states}")
        return SmoothingGrid(candidates=tuple(tuple(float(v) for v in c) for c in value))
    return SmoothingGrid.shared([float(v) for v in value], n_states)


_DEFAULT_GRID = [256.0, 512.0, 1024.0, 2048.0, 4096.0, 8192.0, 16384.0]


# --- fit ---------------------------------------------------------------------

_FIT_SCHEMA = {
    **_DATA_SCHEMA,
    "states": int,
    "emissions": (str, list),
    "basis_k": int,
    "lam": (str, list, int, float),
    "penalty_order": int,
    "grid": (str, list),
    "partitions": int,
    "calib_fraction": (int, float),
    "extend_grid": bool,
    "restarts": int,
    "seed": int,
    "threads": int,
    "out": str,
    "report": str,
}

_FIT_DEFAULTS = {
    "emissions": "spline",
    "basis_k": 15,
    "lam": "0",
    "penalty_order": 2,
    "grid": _DEFAULT_GRID,
    "partitions": 10,
    "calib_fraction": 0.9,
    "extend_grid": False,
    "restarts": 10,
    "seed": 0,
    "threads": 1,
}


def _cmd_fit(args) -> int:
    opts = {**_FIT_DEFAULTS, **_merged_options(args, _FIT_SCHEMA)}
    if "states" not in opts:
        raise ConfigError("number of states not given (--states)")
    if "out" not in opts:
        raise ConfigError("no output model path given (--out)")
    ds = _load_series(opts)
    n = int(opts["states"])
    emissions = opts["emissions"]
    if isinstance(emissions, list):
        emissions = tuple(emissions)
    elif "," in emissions:
        emissions = tuple(e.strip() for e in emissions.split(","))
    basis = None
    if emissions == "spline" or (isinstance(emissions, tuple) and "spline" in emissions):
        basis = basis_for_data(ds.values, int(opts["basis_k"]))

    cv_report = None
    lam_opt = opts["lam"]
    run_cv = isinstance(lam_opt, str) and lam_opt.strip().lower() == "cv"
    base_config = FitConfig(
        n_states=n, emissions=emissions, basis=basis,
        restarts=int(opts["restarts"]), seed=int(opts["seed"]),
    )
    warm = []
    if run_cv:
        grid = _grid_from_option(opts["grid"], n)
        partitions = make_partitions(
            ds.values.size, int(opts["partitions"]), float(opts["calib_fraction"]),
            np.random.default_rng(int(opts["seed"])),
        )
        cv_report = select_smoothing(
            ds.values, grid, partitions, base_config,
            extend=bool(opts["extend_grid"]), workers=int(opts["threads"]),
        )
        lam = cv_report.selected
        warm = [v for v in cv_report.selected_cell.params if v is not None][:1]
    elif isinstance(lam_opt, str):
        lam = tuple(_parse_float_list(lam_opt, "lam"))
    else:
        lam = tuple(float(v) for v in np.atleast_1d(lam_opt))
    if len(lam) == 1:
        lam = lam * n

    config = FitConfig(
        n_states=n, emissions=emissions, basis=basis,
        penalty=PenaltySpec(lam=lam, order=int(opts["penalty_order"])),
        restarts=int(opts["restarts"]), seed=int(opts["seed"]),
    )
    result = fit(ds.values, config, extra_starts=warm)

    fit_info = {
        "loglik": result.loglik,
        "penalized_loglik": result.penalized_loglik,
        "restarts": len(result.restarts),
        "winning_restart": result.restart_index,
        "iterations": result.n_iter,
        "seed": int(opts["seed"]),
        "degenerate_states": list(result.degenerate_states),
        "source": ds.source,
    }
    save_model(opts["out"], result.model, lam=result.lam,
               penalty_order=result.penalty_order, fit_info=fit_info)

    report = {
        "tpm": result.model.gamma.tolist(),
        "stationary_distribution": result.model.delta.tolist(),
        "lam": list(result.lam),
        "loglik": result.loglik,
        "penalized_loglik": result.penalized_loglik,
        "degenerate_states": list(result.degenerate_states),
        "restart_scores": [r.penalized_loglik for r in result.restarts],
    }
    if cv_report is not None:
        report["cv"] = {
            "trajectory": [list(t) for t in cv_report.trajectory],
            "diagonal": [list(t) for t in cv_report.diagonal],
            "selected": list(cv_report.selected),
            "mean_scores": {
                ",".join(format(v, ".17g") for v in lam_key): cell.mean_score
                for lam_key, cell in cv_report.cells.items()
            },
            "n_fits": cv_report.n_fits,
            "cache_hits": cv_report.cache_hits,
            "extensions": [list(e) for e in cv_report.extensions],
        }
    if opts.get("report"):
        write_json(opts["report"], report)

    print(f"fitted {n}-state model  loglik={result.loglik:.6f}  "
          f"penalized={result.penalized_loglik:.6f}")
    print(f"lam = {tuple(result.lam)}")
    print("transition matrix:")
    for row in result.model.gamma:
        print("  " + "  ".join(f"{v:.4f}" for v in row))
    print("stationary distribution: " + "  ".join(f"{v:.4f}" for v in result.model.delta))
    if result.degenerate_states:
        print(f"warning: states with no decoded observations: {result.degenerate_states}")
    print(f"model written to {opts['out']}")
    return 0


# --- diagnose ---------------------------------------------------------------

_DIAGNOSE_SCHEMA = {
    **_DATA_SCHEMA,
    "model": str,
    "out_dir": str,
    "max_lag": int,
    "grid_points": int,
}

_DIAGNOSE_DEFAULTS = {"max_lag": 30, "grid_points": 512}


def _density_grid(model, n_points):
    los, his = [], []
    for d in model.emissions:
        lo, hi = d.effective_support()
        los.append(lo)
        his.append(hi)
    return np.linspace(min(los), max(his), n_points)


def _cmd_diagnose(args) -> int:
    opts = {**_DIAGNOSE_DEFAULTS, **_merged_options(args, _DIAGNOSE_SCHEMA)}
    if "model" not in opts:
        raise ConfigError("no model file given (--model)")
    if "out_dir" not in opts:
        raise ConfigError("no output directory given (--out-dir)")
    ds = _load_series(opts)
    model, _ = load_model(opts["model"])
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    res = pseudo_residuals(model, ds.values)
    jb = jarque_bera(res.residuals)
    write_csv(
        out / "residuals.csv",
        ["time", "observation", "forecast_cdf", "residual"],
        [
            (int(t) + 1, ds.values[t], u, r)
            for t, u, r in zip(res.time_index, res.uniforms, res.residuals)
        ],
    )

    path = viterbi(model, ds.values)
    write_csv(out / "viterbi.csv", ["time", "state"],
              [(t + 1, int(s) + 1) for t, s in enumerate(path)])

    max_lag = int(opts["max_lag"])
    rho_model = model_acf(model, max_lag)
    rho_sample = sample_acf(ds.values, max_lag)
    write_csv(out / "acf.csv", ["lag", "sample", "model"],
              [(k, rho_sample[k], rho_model[k]) for k in range(max_lag + 1)])

    xs = _density_grid(model, int(opts["grid_points"]))
    write_csv(out / "marginal.csv", ["x", "density"],
              [(x, m) for x, m in zip(xs, marginal_density(model, xs))])

    delta = stationary_distribution(model.gamma)
    cols = np.column_stack([w * np.asarray(d.pdf(xs)) for w, d in zip(delta, model.emissions)])
    write_csv(
        out / "state_densities.csv",
        ["x"] + [f"state_{i + 1}" for i in range(model.n_states)],
        [tuple([x] + list(row)) for x, row in zip(xs, cols)],
    )

    occupancy = [float(np.mean(path == i)) for i in range(model.n_states)]
    write_json(out / "summary.json", {
        "jarque_bera_statistic": jb.statistic,
        "jarque_bera_pvalue": jb.pvalue,
        "n_observations": int(ds.values.size),
        "n_missing": ds.n_missing,
        "state_occupancy": occupancy,
    })
    print(f"Jarque-Bera: statistic={jb.statistic:.4f}  p-value={jb.pvalue:.4f}")
    print(f"decoded state occupancy: {' '.join(f'{v:.3f}' for v in occupancy)}")
    print(f"diagnostics written to {out}")
    return 0


# --- bootstrap ----------------------------------------------------------------

_BOOTSTRAP_SCHEMA = {
    **_DATA_SCHEMA,
    "model": str,
    "out_dir": str,
    "replicates": int,
    "level": (int, float),
    "restarts": int,
    "grid_points": int,
    "seed": int,
    "threads": int,
}

_BOOTSTRAP_DEFAULTS = {
    "level": 0.95, "restarts": 1, "grid_points": 512, "seed": 0, "threads": 1,
}


def _cmd_bootstrap(args) -> int:
    opts = {**_BOOTSTRAP_DEFAULTS, **_merged_options(args, _BOOTSTRAP_SCHEMA)}
    for key in ("model", "out_dir", "replicates"):
        if key not in opts:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    level = float(opts["level"])
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie strictly between 0 and 1")
    if int(opts["replicates"]) < 1:
        raise ConfigError("need at least one bootstrap replicate")
    ds = _load_series(opts)
    model, meta = load_model(opts["model"])

    families = []
    basis = None
    for d in model.emissions:
        if isinstance(d, SplineDensity):
            families.append("spline")
            basis = d.basis
        else:
            from .estimation import family_for_density

            families.append(family_for_density(d))
    lam = tuple(meta["lam"]) if meta.get("lam") else 0.0
    config = FitConfig(
        n_states=model.n_states, emissions=tuple(families), basis=basis,
        penalty=PenaltySpec(lam=lam, order=int(meta.get("penalty_order", 2))),
        restarts=int(opts["restarts"]), seed=int(opts["seed"]),
    )
    ensemble = bootstrap(
        model, ds.values.size, int(opts["replicates"]), config,
        seed=int(opts["seed"]), workers=int(opts["threads"]),
    )
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    intervals = tpm_intervals(ensemble, level)
    write_csv(
        out / "tpm_intervals.csv",
        ["row", "col", "estimate", "lower", "upper"],
        [
            (i + 1, j + 1, model.gamma[i, j], intervals[i, j, 0], intervals[i, j, 1])
            for i in range(model.n_states)
            for j in range(model.n_states)
        ],
    )

    xs = _density_grid(model, int(opts["grid_points"]))
    inflations = []
    for i in range(model.n_states):
        pw = density_band(ensemble, i, xs, level, "pointwise")
        sim = density_band(ensemble, i, xs, level, "simultaneous")
        write_csv(out / f"band_state{i + 1}_pointwise.csv", ["x", "lower", "upper"],
                  zip(xs, pw.lower, pw.upper))
        write_csv(out / f"band_state{i + 1}_simultaneous.csv", ["x", "lower", "upper"],
                  zip(xs, sim.lower, sim.upper))
        inflations.append(sim.inflation)

    write_json(out / "summary.json", {
        "level": level,
        "replicates": int(opts["replicates"]),
        "n_converged": ensemble.n_converged,
        "n_failed": ensemble.n_failed,
        "inflation_factors": inflations,
        "seed": int(opts["seed"]),
    })
    print(f"bootstrap: {ensemble.n_converged}/{opts['replicates']} replicates converged")
    print(f"simultaneous-band inflation factors: {' '.join(f'{c:.3f}' for c in inflations)}")
    print(f"results written to {out}")
    return 0


# --- select-states -------------------------------------------------------------

_SELECT_SCHEMA = {
    **_DATA_SCHEMA,
    "candidates": (str, list),
    "basis_k": int,
    "grid": (str, list),
    "partitions": int,
    "calib_fraction": (int, float),
    "restarts": int,
    "seed": int,
    "threads": int,
    "out": str,
}

_SELECT_DEFAULTS = {
    "basis_k": 15, "grid": _DEFAULT_GRID, "partitions": 10,
    "calib_fraction": 0.9, "restarts": 1, "seed": 0, "threads": 1,
}


def _cmd_select_states(args) -> int:
    opts = {**_SELECT_DEFAULTS, **_merged_options(args, _SELECT_SCHEMA)}
    if "candidates" not in opts:
        raise ConfigError("no candidate state counts given (--candidates)")
    ds = _load_series(opts)
    cands = opts["candidates"]
    cands = _parse_int_list(cands, "candidates") if isinstance(cands, str) else [int(v) for v in cands]
    basis = basis_for_data(ds.values, int(opts["basis_k"]))
    partitions = make_partitions(
        ds.values.size, int(opts["partitions"]), float(opts["calib_fraction"]),
        np.random.default_rng(int(opts["seed"])),
    )
    grid_values = (
        _parse_float_list(opts["grid"], "grid") if isinstance(opts["grid"], str) else
        [float(v) for v in opts["grid"]]
    )

    def make_config(n):
        return FitConfig(
            n_states=n, emissions="spline", basis=basis,
            restarts=int(opts["restarts"]), seed=int(opts["seed"]),
        )

    sel = select_num_states(
        ds.values, cands, grid_values, partitions, make_config, workers=int(opts["threads"])
    )
    ranking = sorted(sel.mean_scores.items(), key=lambda kv: -kv[1])
    payload = {
        "candidates": cands,
        "chosen": sel.chosen,
        "mean_scores": {str(n): s for n, s in sel.mean_scores.items()},
        "selected_lam": {str(n): list(r.selected) for n, r in sel.reports.items()},
    }
    if opts.get("out"):
        write_json(opts["out"], payload)
    print("state-count ranking (mean validation log-likelihood, best first):")
    for n, score in ranking:
        marker = " <- chosen" if n == sel.chosen else ""
        print(f"  N={n}: {score:.4f}{marker}")
    return 0


# --- paramscan -----------------------------------------------------------------

_PARAMSCAN_SCHEMA = {
    **_DATA_SCHEMA,
    "states": str,
    "restarts": int,
    "seed": int,
    "out": str,
}

_PARAMSCAN_DEFAULTS = {"restarts": 10, "seed": 0}


def _cmd_paramscan(args) -> int:
    opts = {**_PARAMSCAN_DEFAULTS, **_merged_options(args, _PARAMSCAN_SCHEMA)}
    if "states" not in opts:
        raise ConfigError("no state counts given (--states, e.g. 3-10)")
    ds = _load_series(opts)
    rows = parametric_scan(
        ds.values, _parse_int_list(opts["states"], "states"),
        restarts=int(opts["restarts"]), seed=int(opts["seed"]),
    )
    print(f"{'N':>3} {'p':>4} {'logL':>12} {'AIC':>12} {'BIC':>12} {'JB p':>8}")
    for r in rows:
        print(f"{r.n_states:>3} {r.n_params:>4} {r.loglik:>12.2f} "
              f"{r.aic:>12.2f} {r.bic:>12.2f} {r.jb_pvalue:>8.3f}")
    if opts.get("out"):
        write_csv(
            opts["out"],
            ["n_states", "n_params", "loglik", "aic", "bic", "jb_statistic", "jb_pvalue"],
            [
                (r.n_states, r.n_params, r.loglik, r.aic, r.bic, r.jb_statistic, r.jb_pvalue)
                for r in rows
            ],
        )
        print(f"table written to {opts['out']}")
    return 0


# --- simstudy ------------------------------------------------------------------

_SIMSTUDY_SCHEMA = {
    "runs": int,
    "t_len": int,
    "basis_k": int,
    "persistence": (int, float),
    "state2_shift": (int, float),
    "grid_values": [int, float],
    "n_partitions": int,
    "calib_fraction": (int, float),
    "bootstrap_reps": int,
    "level": (int, float),
    "state_candidates": [int],
    "seed": int,
    "restarts_final": int,
    "restarts_cv": int,
    "restarts_bootstrap": int,
    "out_dir": str,
    "threads": int,
}

_SIMSTUDY_DEFAULTS = {"runs": 2, "seed": 0, "threads": 1}


def _cmd_simstudy(args) -> int:
    opts = dict(_SIMSTUDY_DEFAULTS)
    if getattr(args, "scenario", None):
        doc = load_config(args.scenario)
        validate_config(doc, _SIMSTUDY_SCHEMA)
        opts.update(doc)
    for key in ("runs", "seed", "threads", "out_dir"):
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    if "out_dir" not in opts:
        raise ConfigError("no output directory given (--out-dir)")
    threads = int(opts.pop("threads"))
    out = Path(opts.pop("out_dir"))
    scenario_kwargs = {
        k: (tuple(v) if isinstance(v, list) else v) for k, v in opts.items()
    }
    scenario = SimScenario(**scenario_kwargs)
    report = run_study(scenario, workers=threads)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.to_dict())
    (out / "report.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    print(f"reports written to {out}")
    return 0


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splinehmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", parents=[], help="fit a model by maximum penalized likelihood")
    _add_data_options(p_fit)
    p_fit.add_argument("--states", type=int)
    p_fit.add_argument("--emissions")
    p_fit.add_argument("--basis-k", type=int)
    p_fit.add_argument("--lam", help="comma-separated smoothing values, or 'cv'")
    p_fit.add_argument("--penalty-order", type=int)
    p_fit.add_argument("--grid", help="comma-separated candidate smoothing values")
    p_fit.add_argument("--partitions", type=int)
    p_fit.add_argument("--calib-fraction", type=float)
    p_fit.add_argument("--extend-grid", action="store_const", const=True, default=None)
    p_fit.add_argument("--restarts", type=int)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--threads", type=int)
    p_fit.add_argument("--config")
    p_fit.add_argument("--out")
    p_fit.add_argument("--report")
    p_fit.set_defaults(func=_cmd_fit)

    p_diag = sub.add_parser("diagnose", help="pseudo-residuals, decoding, ACF and density curves")
    _add_data_options(p_diag)
    p_diag.add_argument("--model")
    p_diag.add_argument("--out-dir")
    p_diag.add_argument("--max-lag", type=int)
    p_diag.add_argument("--grid-points", type=int)
    p_diag.add_argument("--config")
    p_diag.set_defaults(func=_cmd_diagnose)

    p_boot = sub.add_parser("bootstrap", help="parametric bootstrap intervals and density bands")
    _add_data_options(p_boot)
    p_boot.add_argument("--model")
    p_boot.add_argument("--out-dir")
    p_boot.add_argument("--replicates", "-B", type=int, dest="replicates")
    p_boot.add_argument("--level", type=float)
    p_boot.add_argument("--restarts", type=int)
    p_boot.add_argument("--grid-points", type=int)
    p_boot.add_argument("--seed", type=int)
    p_boot.add_argument("--threads", type=int)
    p_boot.add_argument("--config")
    p_boot.set_defaults(func=_cmd_bootstrap)

    p_sel = sub.add_parser("select-states", help="choose the state count by cross-validation")
    _add_data_options(p_sel)
    p_sel.add_argument("--candidates")
    p_sel.add_argument("--basis-k", type=int)
    p_sel.add_argument("--grid")
    p_sel.add_argument("--partitions", type=int)
    p_sel.add_argument("--calib-fraction", type=float)
    p_sel.add_argument("--restarts", type=int)
    p_sel.add_argument("--seed", type=int)
    p_sel.add_argument("--threads", type=int)
    p_sel.add_argument("--config")
    p_sel.add_argument("--out")
    p_sel.set_defaults(func=_cmd_select_states)

    p_scan = sub.add_parser("paramscan", help="normal-emission fits with AIC/BIC across state counts")
    _add_data_options(p_scan)
    p_scan.add_argument("--states", help="state counts, e.g. '3-10' or '1,2,3'")
    p_scan.add_argument("--restarts", type=int)
    p_scan.add_argument("--seed", type=int)
    p_scan.add_argument("--config")
    p_scan.add_argument("--out")
    p_scan.set_defaults(func=_cmd_paramscan)

    p_sim = sub.add_parser("simstudy", help="run the two-state simulation study")
    p_sim.add_argument("--scenario", help="scenario JSON file")
    p_sim.add_argument("--runs", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--threads", type=int)
    p_sim.add_argument("--out-dir")
    p_sim.set_defaults(func=_cmd_simstudy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
