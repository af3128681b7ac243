"""Command-line front end.

JSON goes to stdout, logs go to stderr, so output can be piped.  Exit
codes: 0 on success, 2 on validation errors (including bad flags), 3 on
numeric degeneracy (non-strict risk decrease or a degenerate design).
All randomness flows from --seed; when a command needs a seed and none is
given, one is generated and echoed in the output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .errors import DegeneracyError, ValidationError
from .nested_models import (
    NestedIndexSets,
    NestedModelSequence,
    fit_nested,
    orthonormalize,
    stepwise_deletion_order,
)
from .serialize import stable_json
from .simulation import EstimatorSpec, estimate_df, make_scenario, monte_carlo, risk_gap_experiment
from .stacking import (
    best_single,
    gamma_sequence,
    l0_stack_weights,
    qagg_weights,
    randomized_ensemble,
    stack_weights,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isostack",
        description="Stacking weights for nested regressions and a Monte Carlo risk harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    w = sub.add_parser("weights", help="compute stacking weights from sequence statistics")
    w.add_argument("--input", required=True, help="path to a sequence JSON file")
    w.add_argument("--method", default="penalized",
                   choices=["penalized", "l0", "qagg", "ensemble"])
    w.add_argument("--tau", type=float, default=1.0)
    w.add_argument("--lambda", dest="lam", type=float, default=2.0)
    w.add_argument("--eta", type=float, default=0.5)
    w.add_argument("--m", type=int, default=None, help="ensemble subset size parameter")
    w.add_argument("--B", type=int, default=1000, help="ensemble replications")
    w.add_argument("--mode", default="auto", choices=["auto", "exact", "sample"])
    w.add_argument("--seed", type=int, default=None)

    f = sub.add_parser("fit", help="fit a nested family from design/response CSVs")
    f.add_argument("--design", help="headerless CSV of the design matrix")
    f.add_argument("--response", help="headerless CSV of the response vector")
    f.add_argument("--data", help="single CSV with the response as last column")
    f.add_argument("--sigma2", type=float, default=None)
    f.add_argument("--nested-from", dest="nested_from", default="order",
                   choices=["order", "stepwise"])
    f.add_argument("--tau", type=float, default=1.0)
    f.add_argument("--lambda", dest="lam", type=float, default=2.0)
    f.add_argument("--output", help="also write the sequence JSON to this path")

    for name, help_text in [
        ("simulate", "Monte Carlo risk estimates for a set of estimators"),
        ("riskgap", "paired best-vs-stacked risk gap with the plug-in lower bound"),
        ("df", "Monte Carlo degrees of freedom for one estimator"),
    ]:
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True, help="path to a JSON config")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--reps", type=int, required=True)
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--format", default="json", choices=["json", "csv"])
        s.add_argument("--output", help="write output to this path instead of stdout")

    e = sub.add_parser("ensemble", help="randomized-ensemble coefficients from sequence statistics")
    e.add_argument("--input", required=True)
    e.add_argument("--m", type=int, required=True)
    e.add_argument("--B", type=int, default=1000)
    e.add_argument("--lambda", dest="lam", type=float, default=2.0)
    e.add_argument("--mode", default="auto", choices=["auto", "exact", "sample"])
    e.add_argument("--seed", type=int, default=None)
    return parser


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read JSON from {path}: {exc}") from exc


def _load_sequence(path: str) -> NestedModelSequence:
    return NestedModelSequence.from_dict(_load_json(path))


def _ensure_seed(seed: int | None) -> int:
    if seed is None:
        seed = int.from_bytes(os.urandom(4), "big")
    if seed < 0:
        raise ValidationError("seed must be nonnegative")
    return seed


def _weights_payload(seq: NestedModelSequence, weights, lam: float, params: dict) -> dict:
    gamma = gamma_sequence(seq)
    selection = best_single(seq, lam)
    payload = weights.to_dict()
    payload["gamma"] = list(gamma.gamma)
    payload["m_hat"] = selection.m_hat
    payload["params"] = params
    return payload


def _cmd_weights(args, out) -> int:
    seq = _load_sequence(args.input)
    if args.method == "penalized":
        weights = stack_weights(seq, args.tau, args.lam)
        payload = _weights_payload(seq, weights, args.lam,
                                   {"tau": args.tau, "lambda": args.lam})
    elif args.method == "l0":
        weights = l0_stack_weights(seq)
        payload = _weights_payload(seq, weights, 2.0, {"lambda": 2.0})
    elif args.method == "qagg":
        weights = qagg_weights(seq, args.eta)
        payload = _weights_payload(seq, weights, args.lam,
                                   {"eta": args.eta, "lambda": args.lam})
    else:
        m = args.m if args.m is not None else seq.count + 1
        seed = _ensure_seed(args.seed)
        result = randomized_ensemble(seq, m, args.B, args.lam, seed=seed, mode=args.mode)
        payload = _weights_payload(seq, result.weights, args.lam,
                                   {"m": m, "B": args.B, "lambda": args.lam,
                                    "mode": args.mode})
        payload["coefficients"] = list(result.coefficients)
        payload["exact"] = result.exact
        payload["seed"] = seed
    out.write(stable_json(payload) + "\n")
    return 0


def _cmd_fit(args, out) -> int:
    if args.sigma2 is None:
        raise ValidationError(
            "missing --sigma2: the noise variance is assumed known a priori "
            "and must be supplied"
        )
    if args.data:
        table = np.loadtxt(args.data, delimiter=",", ndmin=2)
        if table.shape[1] < 2:
            raise ValidationError("--data needs at least one feature column plus the response")
        design, y = table[:, :-1], table[:, -1]
    elif args.design and args.response:
        design = np.loadtxt(args.design, delimiter=",", ndmin=2)
        y = np.loadtxt(args.response, delimiter=",").reshape(-1)
    else:
        raise ValidationError("provide either --data or both --design and --response")

    if args.nested_from == "stepwise":
        order_sets = stepwise_deletion_order(design, y)
        # re-orthonormalize columns in reverse deletion order so that the
        # k-th nested model spans exactly the k surviving variables
        variable_order = [order_sets.sets[0][0]]
        for k in range(1, order_sets.count):
            variable_order.extend(order_sets.increments(k))
        basis = orthonormalize(design[:, variable_order])
    else:
        basis = orthonormalize(design)
    sets = NestedIndexSets.sequential(range(1, basis.size + 1))
    seq = fit_nested(basis, y, sets, args.sigma2)
    weights = stack_weights(seq, args.tau, args.lam)
    payload = {
        "sequence": seq.to_dict(),
        "weights": _weights_payload(seq, weights, args.lam,
                                    {"tau": args.tau, "lambda": args.lam,
                                     "nested_from": args.nested_from}),
    }
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(stable_json(seq.to_dict()) + "\n")
    out.write(stable_json(payload) + "\n")
    return 0


def _emit_report(report, args, out) -> int:
    if args.format == "csv":
        text = report.to_csv()
    else:
        text = stable_json(report.to_dict()) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        out.write(text)
    return 0


def _cmd_simulate(args, out) -> int:
    config = _load_json(args.config)
    seed = _ensure_seed(args.seed)
    scenario = make_scenario(config.get("scenario", config))
    estimators = [EstimatorSpec.from_config(e) for e in config.get("estimators", [])]
    if not estimators:
        raise ValidationError("config needs a nonempty 'estimators' list")
    report = monte_carlo(scenario, estimators, args.reps, seed, jobs=args.jobs)
    return _emit_report(report, args, out)


def _cmd_riskgap(args, out) -> int:
    config = _load_json(args.config)
    seed = _ensure_seed(args.seed)
    report = risk_gap_experiment(config, args.reps, seed, jobs=args.jobs)
    return _emit_report(report, args, out)


def _cmd_df(args, out) -> int:
    config = _load_json(args.config)
    seed = _ensure_seed(args.seed)
    scenario = make_scenario(config.get("scenario", config))
    estimator = config.get("estimator")
    if estimator is None:
        raise ValidationError("config needs an 'estimator' entry")
    result = estimate_df(scenario, estimator, args.reps, seed, jobs=args.jobs)
    payload = result.to_dict()
    if args.format == "csv":
        keys = list(payload)
        text = ",".join(keys) + "\n" + ",".join(str(payload[k]) for k in keys) + "\n"
        if args.output:
            with open(args.output, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            out.write(text)
        return 0
    text = stable_json(payload) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        out.write(text)
    return 0


def _cmd_ensemble(args, out) -> int:
    seq = _load_sequence(args.input)
    seed = _ensure_seed(args.seed)
    result = randomized_ensemble(seq, args.m, args.B, args.lam, seed=seed, mode=args.mode)
    payload = result.weights.to_dict()
    payload["coefficients"] = list(result.coefficients)
    payload["coefficient_se"] = (
        None if result.coefficient_se is None else list(result.coefficient_se)
    )
    payload["exact"] = result.exact
    payload["draws"] = result.draws
    payload["subsets_total"] = result.subsets_total
    payload["seed"] = seed
    payload["params"] = {"m": args.m, "B": args.B, "lambda": args.lam, "mode": args.mode}
    out.write(stable_json(payload) + "\n")
    return 0


_COMMANDS = {
    "weights": _cmd_weights,
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "riskgap": _cmd_riskgap,
    "df": _cmd_df,
    "ensemble": _cmd_ensemble,
}


def run(argv=None, out=None) -> int:
    """Parse argv and dispatch; returns the process exit code."""
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING)
    out = out if out is not None else sys.stdout
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args, out)
    except DegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
