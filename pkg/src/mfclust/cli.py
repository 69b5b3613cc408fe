"""Command line pipeline: transform, fit, simulate, and benchmark.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
A JSON config file can predefine any long option (underscored keys);
explicit flags win. MFCLUST_JOBS sets the default worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from mfclust.basis import build_basis
from mfclust.dataio import (
    DataFormatError,
    ModelBundle,
    read_assignments,
    read_long_csv,
    read_model,
    read_scores_csv,
    write_assignments,
    write_benchmark_rows,
    write_cluster_means,
    write_long_csv,
    write_model,
    write_scores_csv,
    write_truth,
)
from mfclust.em import NumericalError, PENALTY_KINDS
from mfclust.fpca import fit_fpca, standardize
from mfclust.select import (
    DEFAULT_GAMMA_VALUES,
    DEFAULT_LAMBDA_MULTIPLIERS,
    DEFAULT_M_VALUES,
    SearchGrid,
    SelectionReport,
    model_search,
    row_sort_key,
)
from mfclust.simbench import (
    DEFAULT_KINDS,
    SCENARIOS,
    ReplicateRecord,
    default_design,
    generate_dataset,
    run_scenario,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_jobs() -> int:
    env = os.environ.get("MFCLUST_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"MFCLUST_JOBS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _kind_list(text: str) -> tuple[str, ...]:
    kinds = tuple(k.strip() for k in str(text).split(","))
    for k in kinds:
        if k not in PENALTY_KINDS:
            raise UsageError(f"unknown penalty kind {k!r}; choose from {PENALTY_KINDS}")
    return kinds


def build_parser(config: dict | None = None) -> _Parser:
    parser = _Parser(prog="mfclust", description=__doc__)
    parser.add_argument("--config", help="JSON file of option defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []

    def add_command(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        subparsers.append(p)
        return p

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=None, help="parallel workers")
    common.add_argument("--tol", type=float, default=1e-4)
    common.add_argument("--max-iter", type=int, default=500)

    basis_opts = argparse.ArgumentParser(add_help=False)
    basis_opts.add_argument("--n-basis", type=int, default=12)
    basis_opts.add_argument("--order", type=int, default=3)

    qc_opts = argparse.ArgumentParser(add_help=False)
    qc_opts.add_argument("--qc", type=int, default=None, help="components per sensor")
    qc_opts.add_argument("--alpha", type=float, default=None,
                         help="sensor share for the component rule (default 0.8)")
    qc_opts.add_argument("--beta", type=float, default=None,
                         help="variance share for the component rule (default 0.8)")

    p = add_command("transform", parents=[common, basis_opts, qc_opts],
                    help="reduce curves to per-sensor component scores")
    p.add_argument("--input", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--model", required=True)

    p = add_command("fit", parents=[common, basis_opts, qc_opts],
                    help="cluster scores with penalized mixtures")
    p.add_argument("--input", help="raw long CSV (transformed on the fly)")
    p.add_argument("--scores", help="score CSV from the transform step")
    p.add_argument("--report", required=True, help="output model JSON")
    p.add_argument("--assignments", required=True, help="output assignments CSV")
    p.add_argument("--removed", required=True, help="output removed-sensor list")
    p.add_argument("--cluster-means", help="tidy CSV of per-cluster mean curves (needs --input)")
    p.add_argument("--penalty", type=_kind_list, default=("group",))
    p.add_argument("--m-grid", type=_int_list, default=DEFAULT_M_VALUES)
    p.add_argument("--gamma-grid", type=_float_list, default=DEFAULT_GAMMA_VALUES)
    p.add_argument("--lambda-multipliers", type=_float_list, default=DEFAULT_LAMBDA_MULTIPLIERS)

    p = add_command("simulate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p-signal", type=int, default=2)
    p.add_argument("--p-noise", type=int, default=16)
    p.add_argument("--delta", type=float, default=1.5)
    p.add_argument("--output", required=True)
    p.add_argument("--truth", required=True)

    p = add_command("benchmark", parents=[common], help="run a factor sweep")
    p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--kinds", type=_kind_list, default=DEFAULT_KINDS)
    p.add_argument("--levels", type=_float_list, default=None)
    p.add_argument("--qc", type=int, default=3)
    p.add_argument("--m-grid", type=_int_list, default=DEFAULT_M_VALUES)
    p.add_argument("--gamma-grid", type=_float_list, default=DEFAULT_GAMMA_VALUES)
    p.add_argument("--lambda-multipliers", type=_float_list, default=DEFAULT_LAMBDA_MULTIPLIERS)
    p.add_argument("--output", required=True, help="aggregate rows CSV")
    p.add_argument("--replicates", required=True, help="per-replicate CSV")

    if config:
        # subcommands parse into a fresh namespace, so defaults must be
        # planted on every subparser, not just the root
        parser.set_defaults(**config)
        for sp in subparsers:
            sp.set_defaults(**config)
    return parser


def _as_int_tuple(value) -> tuple[int, ...]:
    return _int_list(value) if isinstance(value, str) else tuple(int(v) for v in value)


def _as_float_tuple(value) -> tuple[float, ...]:
    return _float_list(value) if isinstance(value, str) else tuple(float(v) for v in value)


def _as_kinds(value) -> tuple[str, ...]:
    return _kind_list(value if isinstance(value, str) else ",".join(value))


def _grid_from(args) -> SearchGrid:
    return SearchGrid(
        m_values=_as_int_tuple(args.m_grid),
        gamma_values=_as_float_tuple(args.gamma_grid),
        lambda_multipliers=_as_float_tuple(args.lambda_multipliers),
    )


def _qc_rule(args):
    if args.qc is not None and (args.alpha is not None or args.beta is not None):
        raise UsageError("give either --qc or the --alpha/--beta rule, not both")
    return args.qc


def _transform_pipeline(args):
    raw = read_long_csv(args.input)
    data, stats = standardize(raw)
    basis = build_basis(float(data.times[0]), float(data.times[-1]), args.n_basis, args.order)
    models, B = fit_fpca(
        data,
        basis,
        q_c=_qc_rule(args),
        alpha=0.8 if args.alpha is None else args.alpha,
        beta=0.8 if args.beta is None else args.beta,
        standardization=stats,
    )
    return raw, data, models, B


def _print_variance_table(models):
    q_c = models[0].q_c
    header = "sensor      " + "  ".join(f"pc{l + 1:>2}" for l in range(q_c))
    print(header)
    for m in models:
        cells = "  ".join(f"{v:.2f}" for v in m.variance_explained)
        print(f"{m.sensor:<12}{cells}")


def cmd_transform(args) -> int:
    raw, data, models, B = _transform_pipeline(args)
    write_scores_csv(B, args.scores, obs_ids=raw.obs_ids)
    write_model(ModelBundle(fpca_models=models, q_c=B.q_c), args.model)
    read_scores_csv(args.scores)  # validate by reread
    read_model(args.model)
    print(f"n={data.n} sensors={data.p} components={B.q_c} (q={B.q})")
    _print_variance_table(models)
    return 0


def cmd_fit(args) -> int:
    if bool(args.input) == bool(args.scores):
        raise UsageError("give exactly one of --input or --scores")
    if args.cluster_means and not args.input:
        raise UsageError("--cluster-means needs raw curves (--input)")
    models = None
    obs_ids = None
    if args.input:
        raw, _, models, B = _transform_pipeline(args)
        obs_ids = raw.obs_ids
    else:
        B, obs_ids = read_scores_csv(args.scores)

    grid = _grid_from(args)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    penalty_kinds = _as_kinds(args.penalty)
    reports: list[SelectionReport] = []
    for kind in penalty_kinds:
        reports.append(
            model_search(B, grid, kind, seed=args.seed, tol=args.tol,
                         max_iter=args.max_iter, n_jobs=jobs)
        )

    kind_rank = {k: i for i, k in enumerate(penalty_kinds)}
    best = min(
        (r for r in reports if r.best_fit is not None),
        key=lambda r: (row_sort_key(r.best_row), kind_rank[r.kind]),
    )
    merged = SelectionReport(
        kind=best.kind,
        rows=[row for r in reports for row in r.rows],
        best_fit=best.best_fit,
        chosen=best.chosen,
        reference_means=best.reference_means,
        failures=[f for r in reports for f in r.failures],
    )
    write_model(ModelBundle.from_report(merged, fpca_models=models, q_c=B.q_c), args.report)
    write_assignments(best.best_fit, args.assignments, obs_ids=obs_ids)
    removed = sorted(best.best_fit.removed_sensors)
    with open(args.removed, "w") as fh:
        fh.writelines(name + "\n" for name in removed)
    if args.cluster_means:
        write_cluster_means(models, best.best_fit.params, B.q_c, args.cluster_means)
    read_model(args.report)  # validate by reread
    read_assignments(args.assignments)
    m, lam, gamma, kind = merged.chosen
    print(f"chosen: kind={kind} m={m} lambda={lam:.4g} gamma={gamma:g}")
    print(f"removed {len(removed)} of {B.p} sensors: {', '.join(removed) if removed else '(none)'}")
    return 0


def cmd_simulate(args) -> int:
    design = default_design(
        n=args.n, p_signal=args.p_signal, p_noise=args.p_noise, delta=args.delta, seed=args.seed
    )
    data = generate_dataset(design)
    write_long_csv(data, args.output)
    write_truth(design, data, args.truth)
    read_long_csv(args.output)  # validate by reread
    with open(args.truth) as fh:
        json.load(fh)
    print(
        f"simulated n={design.n} sensors={design.p} "
        f"(signal={design.p_signal}, noise={design.p_noise}) delta={design.delta} "
        f"seed={design.seed}"
    )
    return 0


def cmd_benchmark(args) -> int:
    grid = _grid_from(args)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    kinds = _as_kinds(args.kinds)
    levels = args.levels
    if levels is not None:
        levels = _as_float_tuple(levels)
        if args.scenario in ("sample-size", "noise-ratio"):
            levels = tuple(int(v) for v in levels)

    # replicate rows are flushed as they finish, so an interrupted run
    # still leaves a valid partial CSV
    rep_fields = list(ReplicateRecord.__dataclass_fields__)
    with open(args.replicates, "w", newline="") as rep_fh:
        rep_writer = csv.writer(rep_fh)
        rep_writer.writerow(rep_fields)
        rep_fh.flush()

        def stream(record):
            rep_writer.writerow([getattr(record, f) for f in rep_fields])
            rep_fh.flush()

        rows, records = run_scenario(
            args.scenario,
            reps=args.reps,
            kinds=args.kinds,
            seed=args.seed,
            levels=levels,
            q_c=args.qc,
            grid=grid,
            tol=args.tol,
            max_iter=args.max_iter,
            n_jobs=jobs,
            on_record=stream,
        )
    write_benchmark_rows(rows, args.output)
    with open(args.output, newline="") as fh:  # validate by reread
        if csv.DictReader(fh).fieldnames is None:
            raise DataFormatError("benchmark output has no header")
    with open(args.replicates, newline="") as fh:
        if csv.DictReader(fh).fieldnames is None:
            raise DataFormatError("replicate output has no header")

    print(f"{'level':>8}  {'penalty':<12} {'MAE(m)':>7} {'vars rm':>8} {'rm ok':>6} {'rm bad':>7} {'ARI med':>8}")
    for row in rows:
        print(
            f"{row.level:>8g}  {row.kind:<12} {row.mae_m:>7.2f} "
            f"{row.mean_variables_removed:>8.2f} {row.mean_removed_correctly:>6.2f} "
            f"{row.mean_removed_falsely:>7.2f} {row.ari_median:>8.2f}"
        )
    return 0


_COMMANDS = {
    "transform": cmd_transform,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
}


def _peek_config(argv) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a file path")
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        config_path = _peek_config(argv)
        config = None
        if config_path:
            # config values use natural JSON types (lists, numbers, strings)
            with open(config_path) as fh:
                config = json.load(fh)
        parser = build_parser(config)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
