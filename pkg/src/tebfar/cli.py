"""Command-line interface: ``tebfar <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Worker counts default to ``$TEBFAR_JOBS`` (or 1); ``--jobs`` overrides.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import align, bench, dataio, gibbs, klopt, select
from .errors import ConfigError, DataError, DimensionMismatch, EmptyInput, NotPositiveDefinite, \
    RankDeficient, SamplerError
from .model import FactorModel, implied_covariance
from .simulate import SCENARIOS, motivating_model, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid_arg(text):
    try:
        return select.SigmaGrid.parse(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _sampler_flags(p, iters=5000, burnin=2500, thin=5):
    p.add_argument("--iters", type=int, default=iters, help="Gibbs sweeps per chain")
    p.add_argument("--burnin", type=int, default=burnin)
    p.add_argument("--thin", type=int, default=thin)
    p.add_argument("--kmax", type=int, default=None,
                   help="factor truncation (default min(p+1, floor(5 + 2 ln(p+1))))")


def _cv_flags(p):
    p.add_argument("--grid", type=_grid_arg, default=None, metavar="LO:HI:N",
                   help="sigma_y2 grid (default 0.01:1:100)")
    p.add_argument("--cv-iters", type=int, default=select.CV_ITERATIONS)
    p.add_argument("--cv-burnin", type=int, default=select.CV_BURN_IN)
    p.add_argument("--cv-thin", type=int, default=select.CV_THIN)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default $TEBFAR_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tebfar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a scenario replicate",
                       description="Write train.csv, test.csv (columns x1..xp, y) and truth.json.")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--ntrain", type=int, required=True)
    p.add_argument("--ntest", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser(
        "fit", help="fit a TEB-FAR or JBFM chain",
        description="Standardize the data, then run one chain. In tebfar mode give either a "
                    "fixed --sigma-y2 or --cv K to select it by K-fold CV (writes cv_curve.csv "
                    "with columns sigma_y2, mean_cv_mse). Output is a draws directory: "
                    "manifest.json plus draws.csv.")
    p.add_argument("--data", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--mode", choices=gibbs.MODES, default="tebfar")
    p.add_argument("--sigma-y2", type=float, default=None)
    p.add_argument("--cv", type=int, default=None, metavar="K")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="draws directory")
    _sampler_flags(p)
    _cv_flags(p)

    p = sub.add_parser("predict", help="predict the response for new rows",
                       description="Write row_index, y_hat (original response scale).")
    p.add_argument("--model", required=True, help="draws directory from `fit`")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-mse", help="score predictions against observed responses",
                       description="Prints the MSE; rows are matched on row_index.")
    p.add_argument("--pred", required=True, help="predictions CSV (row_index, y_hat)")
    p.add_argument("--truth", required=True, help="CSV holding the observed response")
    p.add_argument("--outcome", required=True, help="response column in --truth")
    p.add_argument("--out", default=None, help="optional JSON file for the score")

    p = sub.add_parser(
        "kl-scan", help="constrained KL-optimal fits over a sigma_y2 grid",
        description="Columns: sigma_y2, kl, dist_col_1.. (squared sign-aligned distance of the "
                    "fitted loadings to each reference column), ell_joint, ell_x, ell_y_given_x "
                    "(per-observation expected log-likelihoods).")
    p.add_argument("--model", default=None,
                   help="FactorModel JSON (default: the built-in 2-factor motivating model)")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--grid", default=None, metavar="LO:HI:N",
                   help="default 0.005:1.2:240")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser(
        "align", help="aligned posterior summary of the loadings",
        description="Columns: row, column, mean, lower, upper (95%% equal-tailed), display "
                    "(mean, or 0 where the interval covers 0).")
    p.add_argument("--model", required=True, help="draws directory from `fit`")
    p.add_argument("--reference", default=None,
                   help="FactorModel JSON (e.g. truth.json); default: rotated first draw")
    p.add_argument("--no-rotate", action="store_true", help="skip the varimax step")
    p.add_argument("--out", required=True)

    p = sub.add_parser(
        "bench", help="method x ntrain x seed benchmark",
        description="Writes results.csv (method, ntrain, seed, mse) and summary.csv (rows "
                    "ntrain, one column of mean MSE per method).")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=SCENARIOS)
    src.add_argument("--data", help="prepared CSV, split at random per seed")
    p.add_argument("--outcome", default=None, help="response column of --data")
    p.add_argument("--methods", default=",".join(bench.METHODS))
    p.add_argument("--ntrain", type=_int_list, required=True, help="comma-separated sizes")
    p.add_argument("--ntest", type=int, default=10000, help="test rows for --scenario")
    p.add_argument("--seed", type=int, required=True, help="first replicate seed")
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--cv", type=int, default=10, metavar="K")
    p.add_argument("--out", required=True, help="output directory")
    _sampler_flags(p)
    _cv_flags(p)
    return parser


# Subcommand implementations -------------------------------------------------

def _cmd_simulate(a):
    sim = simulate(a.scenario, a.ntrain, a.ntest, a.seed)
    os.makedirs(a.out, exist_ok=True)
    dataio.write_csv(os.path.join(a.out, "train.csv"), sim.train)
    dataio.write_csv(os.path.join(a.out, "test.csv"), sim.test)
    sim.write_truth(os.path.join(a.out, "truth.json"))
    print(f"wrote {a.ntrain} training and {a.ntest} test rows to {a.out}")


def _cv_config(a, seed):
    return select.cv_cell_config(iterations=a.cv_iters, burn_in=a.cv_burnin, thin=a.cv_thin,
                                 k_max=a.kmax, seed=seed)


def _cmd_fit(a):
    if a.mode == "tebfar" and (a.sigma_y2 is None) == (a.cv is None):
        raise UsageError("tebfar mode needs exactly one of --sigma-y2 or --cv")
    if a.mode == "jbfm" and (a.sigma_y2 is not None or a.cv is not None):
        raise UsageError("jbfm mode samples sigma_y2; --sigma-y2 and --cv are not allowed")
    raw = dataio.load_csv(a.data, a.outcome)
    data = dataio.standardize(raw)
    base = dict(iterations=a.iters, burn_in=a.burnin, thin=a.thin, k_max=a.kmax, seed=a.seed)
    extra = {"columns": list(raw.columns), "outcome": a.outcome,
             "standardization": data.params.to_dict(), "source": os.path.abspath(a.data)}
    if a.mode == "jbfm":
        draws = gibbs.run_chain(data.X, data.y, gibbs.SamplerConfig(mode="jbfm", **base))
    elif a.cv is None:
        draws = gibbs.run_chain(data.X, data.y, gibbs.SamplerConfig(sigma_y2=a.sigma_y2, **base))
    else:
        grid = a.grid if a.grid is not None else select.SigmaGrid.linspace()
        plan = select.CvPlan(a.cv, select.derive_seed(a.seed, 0))
        fit = select.fit_tebfar(data, grid, plan, _cv_config(a, a.seed),
                                gibbs.SamplerConfig(sigma_y2=1.0, **base), jobs=a.jobs)
        draws = fit.draws
        extra.update(sigma_hat=fit.sigma_hat, cv_folds=a.cv, cv_curve="cv_curve.csv")
        os.makedirs(a.out, exist_ok=True)
        select.write_curve(os.path.join(a.out, "cv_curve.csv"), grid, fit.curve)
        print(f"selected sigma_y2 = {fit.sigma_hat!r}")
    gibbs.save_draws(a.out, draws, extra)
    print(f"wrote {len(draws)} draws to {a.out}")


def _read_manifest(directory):
    with open(os.path.join(directory, gibbs.MANIFEST_NAME)) as fh:
        return json.load(fh)


def _cmd_predict(a):
    manifest = _read_manifest(a.model)
    if "standardization" not in manifest:
        raise DataError(f"{a.model} has no standardization record; refit with `tebfar fit`")
    params = dataio.Standardization.from_dict(manifest["standardization"])
    draws = gibbs.load_draws(a.model)
    _, X, rows = dataio.load_table(a.data, manifest["columns"])
    Xs = (X - params.x_mean) / params.x_sd
    y_hat = dataio.unstandardize_predictions(params, select.predict(draws, Xs))
    dataio.write_predictions(a.out, y_hat, rows)
    print(f"wrote {len(y_hat)} predictions to {a.out}")


def _cmd_eval_mse(a):
    _, pred, _ = dataio.load_table(a.pred, ["row_index", "y_hat"])
    names, truth, rows = dataio.load_table(a.truth, None)
    if a.outcome not in names:
        raise DataError(f"column {a.outcome!r} not in {a.truth}")
    if "row_index" in names:
        rows = truth[:, names.index("row_index")].astype(int)
    observed = dict(zip(rows.tolist(), truth[:, names.index(a.outcome)]))
    try:
        actual = np.array([observed[int(i)] for i in pred[:, 0]])
    except KeyError as exc:
        raise DataError(f"prediction row {exc.args[0]} has no observed response") from None
    score = select.mse(pred[:, 1], actual)
    print(repr(score))
    if a.out:
        with open(a.out, "w") as fh:
            json.dump({"mse": score, "n": int(len(actual))}, fh, indent=2)


def _cmd_kl_scan(a):
    if a.model is None:
        model = motivating_model()
    else:
        with open(a.model) as fh:
            d = json.load(fh)
        model = FactorModel.from_dict(d.get("model", d))
    if a.grid is None:
        grid = klopt.default_grid()
    else:
        try:
            lo, hi, n = a.grid.split(":")
            grid = np.round(np.linspace(float(lo), float(hi), int(n)), 12)
        except ValueError:
            raise UsageError(f"bad grid spec {a.grid!r}") from None
    result = klopt.scan_sigma_grid(implied_covariance(model), model.loadings, k=a.k, grid=grid,
                                   n_restarts=a.restarts, seed=a.seed)
    result.to_csv(a.out)
    print(f"wrote {len(result)} scan points to {a.out}")


def _cmd_align(a):
    manifest = _read_manifest(a.model)
    draws = gibbs.load_draws(a.model)
    if len(draws) == 0:
        raise EmptyInput("no draws to align")
    if a.reference is None:
        ref = draws.loadings[0]
        if not a.no_rotate:
            ref = align.varimax(ref)[0]
    else:
        with open(a.reference) as fh:
            d = json.load(fh)
        ref = FactorModel.from_dict(d.get("model", d)).loadings
        if ref.shape[0] != draws.loadings.shape[1]:
            raise DimensionMismatch("reference and draws have different row counts")
        k = draws.loadings.shape[2]
        if ref.shape[1] < k:
            ref = np.column_stack([ref, np.zeros((ref.shape[0], k - ref.shape[1]))])
        elif ref.shape[1] > k:
            raise DimensionMismatch(f"reference has {ref.shape[1]} columns, draws have {k}")
    summary = align.summarize_aligned(draws, ref, rotate=not a.no_rotate)
    names = manifest.get("columns", [f"x{j + 1}" for j in range(draws.p)])
    summary.to_csv(a.out, list(names) + [manifest.get("outcome", "y")])
    print(f"wrote aligned summary to {a.out}")


def _cmd_bench(a):
    methods = [m.strip() for m in a.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in bench.METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown methods {unknown}; choose from {', '.join(bench.METHODS)}")
    if a.n_seeds < 1:
        raise UsageError("--n-seeds must be >= 1")
    if a.scenario is not None:
        source = bench.ScenarioSource(a.scenario, a.ntest)
    else:
        if a.outcome is None:
            raise UsageError("--data needs --outcome")
        source = bench.SplitSource(dataio.load_csv(a.data, a.outcome))
    protocol = bench.BenchProtocol(
        grid=a.grid if a.grid is not None else select.SigmaGrid.linspace(), cv_folds=a.cv,
        cv_iterations=a.cv_iters, cv_burn_in=a.cv_burnin, cv_thin=a.cv_thin,
        iterations=a.iters, burn_in=a.burnin, thin=a.thin, k_max=a.kmax)
    seeds = list(range(a.seed, a.seed + a.n_seeds))
    rows = bench.run_bench(methods, a.ntrain, seeds, source, protocol, jobs=a.jobs)
    os.makedirs(a.out, exist_ok=True)
    dataio.write_results(os.path.join(a.out, "results.csv"), rows)
    bench.write_pivot(os.path.join(a.out, "summary.csv"), rows)
    ntrains, names, table = bench.pivot_means(rows)
    print("ntrain," + ",".join(names))
    for n, vals in zip(ntrains, table):
        print(f"{n}," + ",".join(f"{v:.4f}" for v in vals))


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "predict": _cmd_predict,
            "eval-mse": _cmd_eval_mse, "kl-scan": _cmd_kl_scan, "align": _cmd_align,
            "bench": _cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"tebfar {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SamplerError, NotPositiveDefinite, RankDeficient, np.linalg.LinAlgError) as exc:
        print(f"tebfar {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DimensionMismatch, EmptyInput, OSError, ValueError, KeyError) as exc:
        print(f"tebfar {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
