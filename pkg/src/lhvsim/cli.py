"""Command-line front end.

Exit codes: 0 success, 1 configuration or usage error, 2 contract violation
or failed locality audit, 3 insufficient data.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import (
    accuracy_success_sweep,
    ch_efficiency_bound,
    chsh_experiment,
    efficiency_margin,
    estimate_joint,
    modest_variant_check,
    success_probability,
    variant2_contract_check,
)
from .config import ConfigError, ScenarioConfig, load_config, parse_direction
from .engine import iter_batches, locality_audit, run_experiment, write_trials_csv
from .errors import LhvsimError
from .target_law import chsh, singlet_correlation, singlet_law

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_DATA = 0, 1, 2, 3

SWEEP_HEADER = ("k", "success", "success_err", "accuracy_max", "bound")


def _dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _provenance(cfg: ScenarioConfig, command: str) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "trials": cfg.trials,
        "tolerance": cfg.tolerance,
    }


def cmd_simulate(cfg: ScenarioConfig, workers: int = 1, csv_path: str | None = None) -> tuple[dict, int]:
    model = cfg.build_model()
    selection = cfg.build_selection(model)
    a, b = cfg.pair()
    tally = run_experiment(model, a, b, cfg.trials, cfg.seed, selection, workers=workers)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            write_trials_csv(iter_batches(model, a, b, cfg.trials, cfg.seed), selection, fh)
    p, p_err = success_probability(tally)
    est = estimate_joint(tally)
    target = singlet_law(a, b)
    report = {
        "provenance": _provenance(cfg, "simulate"),
        "model": model.name,
        "selection": selection.to_dict(),
        "settings": {"a": a.as_list(), "b": b.as_list(), "dot": a.dot(b)},
        "tally": tally.to_dict(),
        "success": {"estimate": p, "stderr": p_err, "n": tally.n_total},
        "conditional_law": {"p": list(est.p), "stderr": list(est.stderr), "n": est.n_accepted},
        "correlation": {"estimate": est.correlation(), "stderr": est.correlation_stderr(), "n": est.n_accepted},
        "variation_distance": {
            "estimate": est.distance_to(target),
            "stderr": est.distance_stderr(),
            "n": est.n_accepted,
        },
        "target": {"p": list(target.as_tuple()), "correlation": singlet_correlation(a, b)},
    }
    return report, EXIT_OK


def cmd_chsh(cfg: ScenarioConfig, workers: int = 1) -> tuple[dict, int]:
    model = cfg.build_model()
    selection = cfg.build_selection(model)
    quad = cfg.quad()
    rep = chsh_experiment(model, quad, cfg.trials, cfg.seed, selection, workers=workers)
    target = chsh(*(singlet_correlation(x, y) for x, y in quad.pairs()))
    report = {
        "provenance": _provenance(cfg, "chsh"),
        "chsh": rep.to_dict(),
        "target_value": target,
        "local_bound": 2.0,
        "excess_over_local_bound_sigmas": (rep.value - 2.0) / rep.combined_stderr if rep.combined_stderr else None,
    }
    return report, EXIT_OK


def cmd_contract(cfg: ScenarioConfig, workers: int = 1) -> tuple[dict, int]:
    model = cfg.build_model()
    kind = cfg.contract.get("kind", "variant2")
    tol = float(cfg.tolerance.get("contract", 0.01))
    check = {"variant2": variant2_contract_check, "modest": modest_variant_check}.get(kind)
    if check is None:
        raise ConfigError(f"unknown contract kind {kind!r}")
    rep = check(model, cfg.trials, cfg.seed, tol, settings=cfg.pairs(), workers=workers)
    etas = [e for e in (rep.eta_a, rep.eta_b) if e is not None]
    report = {
        "provenance": _provenance(cfg, "contract"),
        "contract": rep.to_dict(),
        "efficiency_bound": {
            "bound": ch_efficiency_bound(),
            "symmetric_rate": min(etas) if etas else None,
            "reference_eta": efficiency_margin(2.0 / 3.0),
        },
    }
    return report, EXIT_OK if rep.passed else EXIT_CONTRACT


def sweep_csv(curve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for pt in curve:
        writer.writerow([pt.k, repr(pt.success), repr(pt.success_err), repr(pt.accuracy_max), repr(pt.theory)])
    return buf.getvalue()


def cmd_sweep(cfg: ScenarioConfig, workers: int = 1, csv_path: str | None = None) -> tuple[dict, int]:
    ks = cfg.sweep.get("ks", [])
    if not ks:
        raise ConfigError("sweep.ks must list at least one k")
    curve = accuracy_success_sweep(
        [int(k) for k in ks],
        cfg.trials,
        cfg.seed,
        int(cfg.sweep.get("sample", 10)),
        at_representatives=bool(cfg.sweep.get("at_representatives", False)),
        workers=workers,
    )
    text = sweep_csv(curve)
    if csv_path:
        Path(csv_path).write_text(text)
    report = {
        "provenance": _provenance(cfg, "sweep"),
        "curve": [vars(pt) for pt in curve],
        "accuracy_note": "accuracy_max is the largest distance observed on the sampled setting pairs",
    }
    return report, EXIT_OK


def cmd_audit_locality(cfg: ScenarioConfig, workers: int = 1) -> tuple[dict, int]:
    model = cfg.build_model()
    aud = cfg.audit
    if model.domain is not None:
        sa, sb = model.domain
        if len(sa) < 2 or len(sb) < 2:
            raise ConfigError("finite-domain audit needs two settings per side")
        a, b1, b2 = sa[0], sb[0], sb[1]
        a1, a2, b = sa[0], sa[1], sb[0]
    else:
        a = parse_direction(aud.get("a", {"angle": 0}))
        b1 = parse_direction(aud.get("b1", {"angle": 45}))
        b2 = parse_direction(aud.get("b2", {"angle": 225}))
        a1, a2, b = b1, b2, a
    ok = locality_audit(model, cfg.trials, cfg.seed, a, b1, b2, a1=a1, a2=a2, b=b)
    report = {
        "provenance": _provenance(cfg, "audit-locality"),
        "model": model.name,
        "n": cfg.trials,
        "station_a_settings": [a.as_list()],
        "station_b_settings": [b1.as_list(), b2.as_list()],
        "passed": ok,
    }
    return report, EXIT_OK if ok else EXIT_CONTRACT


COMMANDS = {
    "simulate": cmd_simulate,
    "chsh": cmd_chsh,
    "contract": cmd_contract,
    "sweep": cmd_sweep,
    "audit-locality": cmd_audit_locality,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lhvsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lhvsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--workers", type=int, default=1, help="worker threads; never changes output")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.add_argument("--csv", help="trial dump (simulate) or curve (sweep)")
        p.add_argument("--manifest", help="also write a run manifest with timing")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    started = time.perf_counter()
    try:
        cfg = load_config(args.config, {"seed": args.seed, "trials": args.trials})
        kwargs = {"workers": max(1, args.workers)}
        if args.command in ("simulate", "sweep"):
            kwargs["csv_path"] = args.csv or cfg.output.get("csv")
        report, code = COMMANDS[args.command](cfg, **kwargs)
    except LhvsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    text = _dumps(report)
    out = args.out or cfg.output.get("report")
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.manifest:
        manifest = {
            "version": __version__,
            "config": cfg.echo(),
            "wall_clock_seconds": time.perf_counter() - started,
            "results": {args.command: {"exit_code": code, "report": report}},
        }
        Path(args.manifest).write_text(_dumps(manifest))
    return code


if __name__ == "__main__":
    sys.exit(main())
