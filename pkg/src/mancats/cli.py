"""Command-line interface: ``mancats test``, ``mancats simulate``, ``mancats power``.

Exit status is 0 on success, 2 for problems with the input data or
configuration and 3 for numerical failures such as Wilks' Lambda on
singular data.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .bootstrap import THREADS_ENV, BootstrapConfig, Scheme, bootstrap_test, bootstrap_test_result
from .config import (
    SCHEMA_VERSION,
    load_scenario,
    simulation_document,
    write_json,
    write_report_csv,
)
from .covariance import HcFlavor, sandwich_sigma
from .errors import (
    DataError,
    InvalidDataset,
    InvalidHypothesis,
    MancovaError,
    MissingColumn,
    NonNumericCell,
    NumericalError,
)
from .hypothesis import one_way_projector, projector_from_contrast
from .ingest import dataset_from_records, group_residual_covariances, read_matrix, read_records, rohwer_path
from .model import build_design, fit_ols
from .simulation import get_preset, power_deltas, preset_names, run_power_experiment, run_size_experiment
from .statistics import wald_statistic, wilks_lambda

log = logging.getLogger("mancats")

EXIT_OK, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3
METHOD_CHOICES = ("wilks", "wald", "mancats-wild", "mancats-parametric")
BUILTIN_PREFIX = "builtin:"


def _split(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _resolve_columns(header, rows, specs):
    """Materialize ``a+b`` column specs as summed columns appended to the table."""
    header, rows = list(header), [(n, list(r)) for n, r in rows]
    for spec in specs:
        if spec in header or "+" not in spec:
            continue
        parts = [s.strip() for s in spec.split("+")]
        missing = [s for s in parts if s not in header]
        if missing:
            raise MissingColumn(f"column(s) not found: {', '.join(missing)}")
        idx = [header.index(s) for s in parts]
        for line, r in rows:
            total = 0.0
            for k, name in zip(idx, parts):
                cell = r[k].strip() if k < len(r) else ""
                try:
                    total += float(cell)
                except ValueError:
                    raise NonNumericCell(line, name, cell) from None
            r.extend([""] * (len(header) - len(r)))
            r.append(repr(total))
        header.append(spec)
    return header, rows


def load_request_dataset(args):
    """Dataset described by ``--input``, ``--group``, ``--outcomes``, ``--covariates``."""
    outcomes, covariates = _split(args.outcomes), _split(args.covariates)
    if args.input == BUILTIN_PREFIX + "rohwer":
        path = str(rohwer_path())
    elif args.input.startswith(BUILTIN_PREFIX):
        raise InvalidDataset(f"unknown built-in dataset {args.input!r}")
    else:
        path = args.input
    try:
        header, rows = read_records(path)
    except OSError as exc:
        raise InvalidDataset(f"cannot read {path}: {exc}") from None
    header, rows = _resolve_columns(header, rows, outcomes + covariates)
    return dataset_from_records(header, rows, args.group, outcomes, covariates)


def _projector(spec, dataset):
    if spec == "one-way":
        return one_way_projector(dataset.a, dataset.p)
    try:
        h = read_matrix(spec)
    except OSError as exc:
        raise InvalidHypothesis(f"cannot read hypothesis matrix {spec}: {exc}") from None
    if h.shape[1] != dataset.a * dataset.p:
        raise InvalidHypothesis(f"hypothesis matrix has {h.shape[1]} columns, expected a*p = {dataset.a * dataset.p}")
    return projector_from_contrast(h)


def _run_method(method, dataset, design, fit, projector, args):
    if method == "wilks":
        return wilks_lambda(dataset, fit)
    if method == "wald":
        return wald_statistic(fit.mu_hat, sandwich_sigma(fit, flavor=args.flavor), projector)
    scheme = Scheme.WILD if method == "mancats-wild" else Scheme.PARAMETRIC
    cfg = BootstrapConfig(scheme=scheme, n_boot=args.n_boot, seed=args.seed, flavor=args.flavor)
    res = bootstrap_test_result(bootstrap_test(dataset, design, projector, cfg))
    res.method = method
    return res


def cmd_test(args):
    methods = METHOD_CHOICES if args.method == ["all"] else args.method
    if "wilks" in methods and args.hypothesis != "one-way":
        raise InvalidHypothesis("Wilks' Lambda only tests the one-way hypothesis")
    dataset = load_request_dataset(args)
    projector = _projector(args.hypothesis, dataset)
    design = build_design(dataset)
    fit = fit_ols(dataset, design)
    covs = group_residual_covariances(dataset)
    for label, s in zip(dataset.labels, covs):
        log.info("residual covariance of group %s:\n%s", label, np.array2string(s, precision=2))

    results, status = [], EXIT_OK
    for method in methods:
        try:
            res = _run_method(method, dataset, design, fit, projector, args).to_dict()
            res["reject"] = None if res["p_value"] is None else bool(res["p_value"] <= args.alpha)
        except NumericalError as exc:
            res = {"method": method, "error": type(exc).__name__, "message": str(exc)}
            status = EXIT_NUMERICAL
        res["f"] = projector.rank
        results.append(res)

    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "test",
        "input": args.input,
        "seed": args.seed,
        "alpha": args.alpha,
        "n_boot": args.n_boot,
        "flavor": args.flavor,
        "hypothesis": args.hypothesis,
        "data": {
            "groups": [str(g) for g in dataset.labels],
            "group_sizes": list(dataset.group_sizes),
            "outcomes": _split(args.outcomes),
            "covariates": _split(args.covariates),
        },
        "group_residual_covariances": {str(g): s.tolist() for g, s in zip(dataset.labels, covs)},
        "results": results,
    }
    _emit(doc, args.out)
    for res in results:
        if "error" in res:
            print(f"mancats: {res['method']}: {res['error']}: {res['message']}", file=sys.stderr)
    return status


def _emit(doc, out):
    text = json.dumps(doc, indent=2)
    print(text)
    if out:
        write_json(doc, out)


def _scenario(args):
    if args.config:
        return load_scenario(args.config, args.profile)
    if not args.preset:
        raise InvalidDataset("give a scenario with --config or --preset")
    return get_preset(args.preset, args.profile or "desk"), None


def _override(config, args):
    kw = {k: v for k, v in (("n_sim", args.n_sim), ("n_boot", args.n_boot), ("seed", args.seed)) if v is not None}
    return replace(config, **kw) if kw else config


def _write_rows(doc, rows, out):
    if out and out.endswith(".csv"):
        write_report_csv(rows, out)
        print(json.dumps(doc, indent=2))
    else:
        _emit(doc, out)


def _progress(done, total):
    print(f"\r{done}/{total} datasets", end="" if done < total else "\n", file=sys.stderr)


def cmd_simulate(args):
    if args.list_presets:
        print("\n".join(preset_names()))
        return EXIT_OK
    config, _ = _scenario(args)
    config = _override(config, args)
    report = run_size_experiment(config, workers=args.workers, progress=None if args.quiet else _progress)
    rows = report.rows()
    _write_rows(simulation_document("simulate", config, rows), rows, args.out)
    return EXIT_OK


def cmd_power(args):
    config, deltas = _scenario(args)
    config = _override(config, args)
    if args.deltas:
        deltas = [float(d) for d in _split(args.deltas)]
    if deltas is None:
        deltas = list(power_deltas(config.name))
    reports = run_power_experiment(config, deltas, workers=args.workers)
    rows = [row for rep in reports for row in rep.rows()]
    _write_rows(simulation_document("power", config, rows, deltas), rows, args.out)
    return EXIT_OK


def _method_list(text):
    methods = _split(text)
    if methods == ["all"]:
        return methods
    for m in methods:
        if m not in METHOD_CHOICES:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}; choose from {', '.join(METHOD_CHOICES)} or all")
    if not methods:
        raise argparse.ArgumentTypeError("no method given")
    return methods


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mancats",
        description="Heteroskedasticity-robust MANCOVA: Wald-type test, bootstrap MANCATS and Wilks' Lambda.",
        epilog=f"Set {THREADS_ENV} to the number of threads used for bootstrap blocks and simulation workers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress and fitted residual covariances")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", parents=[common], help="test equality of covariate-adjusted group means")
    t.add_argument("--input", required=True, help="CSV file with header, or builtin:rohwer")
    t.add_argument("--group", required=True, help="name of the group column")
    t.add_argument("--outcomes", required=True, help="comma-separated outcome columns; a+b sums columns")
    t.add_argument("--covariates", default="", help="comma-separated covariate columns; a+b sums columns")
    t.add_argument("--hypothesis", default="one-way", help="'one-way' or a CSV file holding a contrast matrix H")
    t.add_argument("--method", type=_method_list, default=["mancats-parametric"],
                   help=f"comma-separated subset of {', '.join(METHOD_CHOICES)}, or all")
    t.add_argument("--flavor", choices=[f.value for f in HcFlavor], default="HC4")
    t.add_argument("--n-boot", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--out", help="also write the JSON report to this file")
    t.set_defaults(func=cmd_test)

    for name, func, help_text in (
        ("simulate", cmd_simulate, "empirical type I error rates of a scenario"),
        ("power", cmd_power, "rejection rates under a grid of mean shifts"),
    ):
        s = sub.add_parser(name, parents=[common], help=help_text)
        s.add_argument("--config", help="YAML or JSON scenario file")
        s.add_argument("--preset", help="named scenario, see 'simulate --list-presets'")
        s.add_argument("--profile", choices=["smoke", "desk", "full"], help="replication counts")
        s.add_argument("--n-sim", type=int)
        s.add_argument("--n-boot", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int, help=f"worker processes (default from {THREADS_ENV})")
        s.add_argument("--out", help="report file; .csv writes CSV rows, anything else JSON")
        s.add_argument("--quiet", action="store_true")
        if name == "simulate":
            s.add_argument("--list-presets", action="store_true")
        else:
            s.add_argument("--deltas", help="comma-separated shifts of the last group mean")
        s.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "test" and (args.n_boot < 1 or not 0 < args.alpha <= 1):
            raise InvalidDataset("--n-boot must be positive and --alpha in (0, 1]")
        return args.func(args)
    except DataError as exc:
        print(f"mancats: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"mancats: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MancovaError as exc:  # pragma: no cover - every error belongs to a family
        print(f"mancats: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
