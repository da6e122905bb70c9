"""Command-line entry point.

Every leaf command accepts ``--config FILE.json`` holding the same keys as
its flags (dashes or underscores); explicit flags win over the file, unknown
keys are rejected, and the effective configuration is echoed into each
output's metadata.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _dist_version
from pathlib import Path

import numpy as np

from .aggregate import EmConfig, dawid_skene_em, iwmv, majority_vote, map_aggregate
from .certify import (
    SIGMA_NOTE,
    check_estimated,
    check_one_coin,
    check_two_coin,
    check_two_groups,
    sigma_bound,
)
from .core import ClassPrior, TransitionMatrix, accuracy_against_gold
from .errors import CrowdCertError
from .estimate import EstimatedParams, estimate_params, recover_prior
from .exact import BinaryNoiseParams, brute_force_oracle, mv_diag, omap_diag, success_probability
from .io import (
    dumps_json,
    fmt6,
    read_annotations,
    read_annotations_with_gold,
    read_labels,
    read_matrix,
    sweep_json,
    write_annotations,
    write_gold,
    write_json,
    write_result,
    write_sweep_csv,
)
from .simulate import SweepMode, SweepSpec, gen_fixed, gen_perturbed, gen_two_groups, group_matrices, sweep

log = logging.getLogger("crowdcert")

INTERNAL = {"help", "config", "func", "_required", "_paths", "_parser", "verbose"}


class UsageError(Exception):
    pass


def parse_floats(text: str) -> list[float]:
    """``a,b,c`` or ``open:lo:hi:n`` (n equally spaced points strictly inside (lo, hi))."""
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    text = str(text).strip()
    if text.startswith("open:"):
        lo, hi, n = text[5:].split(":")
        return np.linspace(float(lo), float(hi), int(n) + 2)[1:-1].tolist()
    return [float(x) for x in text.split(",") if x.strip()]


def parse_ints(text) -> list[int]:
    """``1,3,5`` or ``odd:lo:hi`` (odd integers in [lo, hi])."""
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    text = str(text).strip()
    if text.startswith("odd:"):
        lo, hi = (int(x) for x in text[4:].split(":"))
        return [h for h in range(lo, hi + 1) if h % 2 == 1]
    return [int(x) for x in text.split(",") if x.strip()]


def _version() -> str:
    try:
        return _dist_version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _leaf(sub, name, help, func, required=(), paths=()):
    p = sub.add_parser(name, help=help)
    p.add_argument("--config", help="JSON file with default values for this command's options")
    p.set_defaults(func=func, _required=tuple(required), _paths=tuple(paths), _parser=p)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdcert", description="Majority-vote optimality toolkit")
    parser.add_argument("--version", action="version", version=_version())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = _leaf(sub, "aggregate", "aggregate an annotation CSV", cmd_aggregate,
              required=("annotations", "out"), paths=("annotations", "gold", "t_matrix", "out", "meta"))
    p.add_argument("--method", choices=("mv", "map", "ds", "iwmv"), default="mv")
    p.add_argument("--annotations")
    p.add_argument("--gold")
    p.add_argument("--t-matrix", dest="t_matrix")
    p.add_argument("--prior")
    p.add_argument("--max-iters", dest="max_iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--meta", help="metadata JSON path (default: OUT.meta.json)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    cert = sub.add_parser("certify", help="run an optimality check").add_subparsers(dest="check", required=True)
    p = _leaf(cert, "one-coin", "symmetric flip model", cmd_certify_one_coin,
              required=("rho", "nu0"), paths=("out",))
    p.add_argument("--rho", type=float)
    p.add_argument("--nu0", type=float)
    p.add_argument("--out")
    p = _leaf(cert, "two-coin", "shared two-parameter model", cmd_certify_two_coin,
              required=("t00", "t11", "nu0", "h"), paths=("out",))
    _binary_args(p)
    p.add_argument("--out")
    p = _leaf(cert, "estimated", "certificate from estimated parameters", cmd_certify_estimated,
              required=("epsilon", "gamma", "eta", "xi"),
              paths=("annotations", "anchors", "t_hat", "out"))
    p.add_argument("--annotations")
    p.add_argument("--anchors", help="CSV task_id,label of anchor tasks")
    p.add_argument("--t-hat", dest="t_hat", help="matrix CSV of an externally estimated T")
    p.add_argument("--nu-noisy", dest="nu_noisy", help="noisy label frequencies for --t-hat")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--h", type=int, help="annotators per task (default: most common count)")
    p.add_argument("--n", type=int, help="sample count in the confidence term (default: number of tasks)")
    p.add_argument("--out")
    p = _leaf(cert, "two-groups", "two annotator groups with equal odds product", cmd_certify_two_groups,
              required=("h", "size_a", "ta00", "ta11", "tb00", "tb11", "nu0"), paths=("out",))
    p.add_argument("--h", type=int)
    p.add_argument("--size-a", dest="size_a", type=int)
    _group_args(p)
    p.add_argument("--nu0", type=float)
    p.add_argument("--out")
    p = _leaf(cert, "sigma-bound", "perturbation half-width keeping MV and oMAP equal",
              cmd_certify_sigma, required=("t00", "t11", "nu0", "h"), paths=("out",))
    _binary_args(p)
    p.add_argument("--out")

    sim = sub.add_parser("simulate", help="generate a synthetic dataset").add_subparsers(dest="generator", required=True)
    p = _leaf(sim, "fixed", "one shared T", cmd_simulate, required=("n", "nu0", "t00", "t11", "h", "out_dir"),
              paths=("out_dir",))
    _binary_args(p)
    _sim_args(p)
    p = _leaf(sim, "perturbed", "uniformly perturbed T per annotator", cmd_simulate,
              required=("n", "nu0", "t00", "t11", "h", "out_dir"), paths=("out_dir",))
    _binary_args(p)
    p.add_argument("--sigma", type=float)
    p.add_argument("--sigma-fraction", dest="sigma_fraction", type=float,
                   help="sigma as a fraction of the MV/oMAP-preserving bound")
    _sim_args(p)
    p = _leaf(sim, "two-groups", "two annotator groups", cmd_simulate,
              required=("n", "nu0", "size_a", "size_b", "ta00", "ta11", "tb00", "tb11", "out_dir"),
              paths=("out_dir",))
    p.add_argument("--nu0", type=float)
    p.add_argument("--size-a", dest="size_a", type=int)
    p.add_argument("--size-b", dest="size_b", type=int)
    _group_args(p)
    _sim_args(p)

    p = _leaf(sub, "sweep", "evaluate a (nu0, T00, T11, H) grid", cmd_sweep,
              required=("nu0", "t00", "out"), paths=("out",))
    p.add_argument("--nu0", help="values: a,b,c or open:lo:hi:n")
    p.add_argument("--t00")
    p.add_argument("--t11", help="ignored with --one-coin")
    p.add_argument("--h", default="3", help="values: 1,3,5 or odd:lo:hi")
    p.add_argument("--mode", choices=[m.value for m in SweepMode], default="ANALYTIC")
    p.add_argument("--n-samples", dest="n_samples", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--one-coin", dest="one_coin", action="store_true", default=False)
    p.add_argument("--estimate", action="store_true", default=False)
    p.add_argument("--anchor-fraction", dest="anchor_fraction", type=float, default=0.1)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = _leaf(sub, "oracle-check", "compare closed forms with exhaustive enumeration", cmd_oracle_check,
              required=("t00", "t11", "nu0", "h"), paths=("out",))
    _binary_args(p)
    p.add_argument("--out")
    return parser


def _binary_args(p):
    p.add_argument("--t00", type=float)
    p.add_argument("--t11", type=float)
    p.add_argument("--nu0", type=float)
    p.add_argument("--h", type=int)


def _group_args(p):
    for g in ("a", "b"):
        for c in ("00", "11"):
            p.add_argument(f"--t{g}{c}", dest=f"t{g}{c}", type=float, help=f"diagonal {c} of T_{g.upper()}")


def _sim_args(p):
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir")


def _option_dests(parser) -> set:
    return {a.dest for a in parser._actions} - INTERNAL


def resolve_args(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    ns = parser.parse_args(argv)
    leaf = ns._parser
    if ns.config:
        try:
            cfg = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - _option_dests(leaf))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        leaf.set_defaults(**cfg)
        ns = parser.parse_args(argv)
    missing = [k for k in ns._required if getattr(ns, k) is None]
    if missing:
        raise UsageError("missing required options: " + ", ".join("--" + k.replace("_", "-") for k in missing))
    for k in ns._paths:
        v = getattr(ns, k)
        if v is not None:
            setattr(ns, k, str(Path(v).expanduser().resolve()))
    return ns


def effective_config(ns) -> dict:
    cfg = {k: getattr(ns, k) for k in sorted(_option_dests(ns._parser))}
    cfg["command"] = " ".join(x for x in (ns.command, getattr(ns, "check", None),
                                           getattr(ns, "generator", None)) if x)
    return cfg


def _emit(payload: dict, out, summary: str):
    if out:
        write_json(payload, out)
        print(summary)
    else:
        sys.stdout.write(dumps_json(payload))


def _parse_prior(text, C) -> ClassPrior:
    vals = parse_floats(text)
    if len(vals) == 1 and C == 2:
        vals = [vals[0], 1.0 - vals[0]]
    return ClassPrior(np.array(vals))


def cmd_aggregate(ns) -> int:
    data = read_annotations_with_gold(ns.annotations, ns.gold)
    cfg = EmConfig(max_iters=ns.max_iters, tol=ns.tol, seed=ns.seed)
    extra = {}
    if ns.method == "mv":
        res = majority_vote(data)
    elif ns.method == "map":
        if ns.t_matrix is None or ns.prior is None:
            raise UsageError("--method map needs --t-matrix and --prior")
        res = map_aggregate(data, read_matrix(ns.t_matrix), _parse_prior(ns.prior, data.num_classes))
    elif ns.method == "ds":
        mats, prior, res = dawid_skene_em(data, cfg)
        extra = {"prior": prior.probs.tolist(),
                 "annotator_matrices": {str(a): m.entries.tolist() for a, m in mats.items()}}
    else:
        res = iwmv(data, cfg)
    out = Path(ns.out)
    if ns.format == "csv":
        write_result(res, out, data.class_names)
    else:
        names = data.class_names
        write_json({str(t): (names[c] if names else int(c)) for t, c in zip(res.task_ids, res.labels)}, out)
    meta = {"method": res.method_name, "n_tasks": len(res.task_ids), "metadata": res.metadata,
            "n_ties": int(np.sum(res.ties)), "config": effective_config(ns), **extra}
    if data.class_names:
        meta["class_names"] = list(data.class_names)
    summary = f"{res.method_name}: {len(res.task_ids)} tasks"
    if data.gold is not None and np.all(data.gold >= 0):
        acc = accuracy_against_gold(res, data.gold)
        meta["accuracy"] = acc
        summary += f", accuracy {fmt6(acc)}"
    elif data.gold is not None:
        covered = data.gold >= 0
        acc = float(np.mean(res.labels[covered] == data.gold[covered]))
        meta["accuracy"] = acc
        meta["accuracy_tasks"] = int(covered.sum())
        summary += f", accuracy {fmt6(acc)} on {int(covered.sum())} gold tasks"
    write_json(meta, ns.meta or str(out) + ".meta.json")
    print(summary)
    return 0


def _certificate_payload(cert, ns, **extra) -> dict:
    return {"certificate": cert.to_dict(), "config": effective_config(ns), **extra}


def _cert_summary(cert) -> str:
    return (f"{cert.verdict.value}: f={fmt6(cert.f_bound)} g={fmt6(cert.g_value)} h={fmt6(cert.h_bound)}"
            + ("" if cert.psi is None else f" psi={fmt6(cert.psi)} chi={fmt6(cert.chi)}"
               f" confidence={fmt6(cert.confidence)}"))


def cmd_certify_one_coin(ns) -> int:
    cert = check_one_coin(ns.rho, ns.nu0)
    _emit(_certificate_payload(cert, ns), ns.out, _cert_summary(cert))
    return 0


def cmd_certify_two_coin(ns) -> int:
    cert = check_two_coin((ns.h, ns.t00, ns.t11, ns.nu0))
    _emit(_certificate_payload(cert, ns), ns.out, _cert_summary(cert))
    return 0


def cmd_certify_estimated(ns) -> int:
    if ns.t_hat is not None:
        if ns.nu_noisy is None or ns.h is None or ns.n is None:
            raise UsageError("--t-hat needs --nu-noisy, --h and --n")
        t_hat = read_matrix(ns.t_hat)
        nu_noisy = np.array(parse_floats(ns.nu_noisy))
        nu, report = recover_prior(t_hat, nu_noisy)
        est = EstimatedParams(t_hat, nu_noisy, nu, ns.epsilon, ns.gamma, report)
        H, N = ns.h, ns.n
    else:
        if ns.annotations is None or ns.anchors is None:
            raise UsageError("need --annotations with --anchors, or --t-hat")
        data = read_annotations(ns.annotations)
        est = estimate_params(data, read_labels(ns.anchors, data), ns.epsilon, ns.gamma)
        counts = data.annotations_per_task()
        H = ns.h if ns.h is not None else int(np.bincount(counts).argmax())
        N = ns.n if ns.n is not None else data.n_tasks
    cert = check_estimated(est, H, ns.eta, ns.xi, N)
    payload = _certificate_payload(cert, ns, estimate={
        "t_hat": est.t_hat.entries.tolist(), "nu_noisy_hat": est.nu_noisy_hat.tolist(),
        "nu_tilde": est.nu_tilde.tolist(), "lambda_min": est.report.lambda_min if est.report else None,
        "condition_notes": list(est.report.notes) if est.report else [], "H": H, "N": N})
    _emit(payload, ns.out, _cert_summary(cert))
    return 0


def cmd_certify_two_groups(ns) -> int:
    cert = check_two_groups(ns.h, ns.size_a, TransitionMatrix.from_diag(ns.ta00, ns.ta11),
                            TransitionMatrix.from_diag(ns.tb00, ns.tb11), ClassPrior.binary(ns.nu0))
    _emit(_certificate_payload(cert, ns), ns.out, _cert_summary(cert))
    return 0


def cmd_certify_sigma(ns) -> int:
    params = BinaryNoiseParams(ns.h, ns.t00, ns.t11, ns.nu0)
    cert = check_two_coin(params)
    bounds = [sigma_bound(params, c) for c in (0, 1)]
    payload = {"sigma_bound": {"class_0": bounds[0], "class_1": bounds[1], "both": min(bounds)},
               "two_coin_verdict": cert.verdict.value, "notes": [SIGMA_NOTE],
               "config": effective_config(ns)}
    _emit(payload, ns.out, f"sigma bound {fmt6(min(bounds))} (two-coin verdict {cert.verdict.value})")
    return 0


def cmd_simulate(ns) -> int:
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prior = ClassPrior.binary(ns.nu0)
    params = {"config": effective_config(ns), "prior": prior.probs.tolist()}
    if ns.generator == "fixed":
        t = TransitionMatrix.from_diag(ns.t00, ns.t11)
        data = gen_fixed(ns.n, prior, t, ns.h, ns.seed)
        mats = [t] * ns.h
    elif ns.generator == "perturbed":
        t = TransitionMatrix.from_diag(ns.t00, ns.t11)
        if (ns.sigma is None) == (ns.sigma_fraction is None):
            raise UsageError("give exactly one of --sigma and --sigma-fraction")
        sigma = ns.sigma
        if sigma is None:
            bp = BinaryNoiseParams(ns.h, ns.t00, ns.t11, ns.nu0)
            sigma = ns.sigma_fraction * min(sigma_bound(bp, 0), sigma_bound(bp, 1))
            params["sigma_note"] = SIGMA_NOTE
        params["sigma"] = sigma
        data, mats = gen_perturbed(ns.n, prior, t, ns.h, sigma, ns.seed)
    else:
        ta = TransitionMatrix.from_diag(ns.ta00, ns.ta11)
        tb = TransitionMatrix.from_diag(ns.tb00, ns.tb11)
        data = gen_two_groups(ns.n, prior, ta, tb, ns.size_a, ns.size_b, ns.seed)
        mats = group_matrices(ta, tb, ns.size_a, ns.size_b)
    params["annotator_matrices"] = {str(a): m.entries.tolist() for a, m in zip(data.annotator_ids, mats)}
    write_annotations(data, out / "annotations.csv")
    write_gold(data, out / "gold.csv")
    write_json(params, out / "params.json")
    print(f"wrote {data.n_tasks} tasks x {data.n_annotators} annotators to {out}")
    return 0


def cmd_sweep(ns) -> int:
    if not ns.one_coin and ns.t11 is None:
        raise UsageError("--t11 is required unless --one-coin is given")
    spec = SweepSpec(
        nu0_values=parse_floats(ns.nu0), t00_values=parse_floats(ns.t00),
        t11_values=parse_floats(ns.t11) if ns.t11 is not None and not ns.one_coin else (),
        h_values=parse_ints(ns.h), mode=SweepMode(ns.mode), n_samples=ns.n_samples, seed=ns.seed,
        one_coin=ns.one_coin, estimate=ns.estimate, anchor_fraction=ns.anchor_fraction)
    grid = sweep(spec, workers=ns.workers)
    if ns.format == "csv":
        write_sweep_csv(grid, ns.out)
    else:
        write_json(sweep_json(grid), ns.out)
    meta = {"spec": spec.as_dict(), "n_cells": len(grid), "n_errors": grid.n_errors,
            "n_degenerate": sum(c.degenerate for c in grid), "config": effective_config(ns)}
    write_json(meta, ns.out + ".meta.json")
    print(f"{len(grid)} cells, {grid.n_errors} with errors -> {ns.out}")
    return 1 if grid.n_errors else 0


def cmd_oracle_check(ns) -> int:
    params = BinaryNoiseParams(ns.h, ns.t00, ns.t11, ns.nu0)
    oracle = brute_force_oracle(params)
    mv = (mv_diag(params.H, params.t00), mv_diag(params.H, params.t11))
    payload = {"brute_force": {"p_mv": oracle.p_mv, "p_map": oracle.p_map,
                               "map_is_best_rule": oracle.map_is_best_rule,
                               "mv_diag": list(oracle.mv_diag), "map_diag": list(oracle.map_diag)},
               "closed_form": {"mv_diag": list(mv), "p_mv": success_probability(*mv, params.nu0)},
               "config": effective_config(ns)}
    diffs = [abs(a - b) for a, b in zip(mv, oracle.mv_diag)]
    try:
        mp = (omap_diag(params, 0), omap_diag(params, 1))
        payload["closed_form"].update(map_diag=list(mp), p_map=success_probability(*mp, params.nu0))
        diffs += [abs(a - b) for a, b in zip(mp, oracle.map_diag)]
    except CrowdCertError as exc:
        payload["closed_form"]["map_error"] = str(exc)
    payload["max_abs_diff"] = max(diffs)
    payload["agree"] = max(diffs) <= 1e-12
    _emit(payload, ns.out, f"max |closed form - enumeration| = {max(diffs):.3g}")
    return 0 if payload["agree"] else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = resolve_args(parser, argv)
    except UsageError as exc:
        parser.error(str(exc))
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except UsageError as exc:
        print(f"crowdcert: error: {exc}", file=sys.stderr)
        return 2
    except (CrowdCertError, OSError, ValueError) as exc:
        print(f"crowdcert: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
