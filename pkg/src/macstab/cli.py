"""Command line entry point.

Commands: regions (analytical verdicts for a rate vector), simulate
(seeded slot simulation with replications), figure-equal (threshold versus
K sweep for the single-class equal-power case), validate (theory versus
simulation around the computed threshold), sweep (theory-only scan along a
rate ray).  All outputs are flat CSV/JSON files; reruns with the same
config and seed are byte-identical.

Exit codes: 0 success, 2 invalid configuration, 3 schedule-capacity cap
exceeded.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis as ana
from . import sim
from .config import ConfigError, ExperimentConfig, build_experiment, load_config
from .model import CapacityError, SystemParams
from .regions import (
    RateVector,
    equal_power_threshold,
    inner_scaling,
    large_k_threshold,
    region_membership,
    region_verdict,
    transient_scaling,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3


def _num(x):
    """JSON-safe number: None for missing or non-finite values."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(path)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    print(path)


def _measure_json(measure) -> list[dict]:
    return [
        {"schedule": list(s.counts), "prob": p} for s, p in measure.support
    ]


def _params_json(params: SystemParams) -> dict:
    return {
        "rho": params.rho,
        "bandwidth_w": params.bandwidth_w,
        "noise_n0": params.noise_n0,
        "k_max": params.k_max,
        "powers": list(params.powers),
        "service_classes": [
            {"error_prob": sc.error_prob, "alphabet_size": sc.alphabet_size}
            for sc in params.service_classes
        ],
        "snr": [params.snr(j) for j in range(params.num_power)],
        "service_requirements": list(params.service_requirements()),
    }


def cmd_regions(exp: ExperimentConfig, out: Path) -> int:
    exp.require("params", "rate")
    params, rate = exp.params, exp.rate
    verdict = region_verdict(params, rate, cap=exp.schedule_cap)
    report = {
        "params": _params_json(params),
        "rate": {"ea": list(rate.ea), "total_msgs_per_slot": rate.total},
        "classification": verdict.classification,
        "witness": verdict.witness(),
        "inner": {
            "certified": verdict.inner.certified,
            "via": verdict.inner.via,
            "count_lhs": verdict.inner.count_lhs,
            "count_rhs": verdict.inner.count_rhs,
            "work_lhs": verdict.inner.work_lhs,
            "work_rhs": verdict.inner.work_rhs,
        },
        "outer": {
            "certified": verdict.outer.certified,
            "witness_subset": (
                None
                if verdict.outer.witness_subset is None
                else [j + 1 for j in verdict.outer.witness_subset]
            ),
            "lhs": verdict.outer.lhs,
            "rhs": verdict.outer.rhs,
            "margin": verdict.outer.margin,
        },
        "thresholds": {
            "inner_scaling": _num(inner_scaling(params, rate)) if rate.total else None,
            "transient_scaling": (
                _num(transient_scaling(params, rate, cap=exp.schedule_cap))
                if rate.total
                else None
            ),
            "large_k_workload_nats_per_slot": large_k_threshold(params),
        },
    }
    if params.num_power == 1:
        eq = equal_power_threshold(params)
        report["thresholds"]["equal_power"] = {
            "k_quantum_nats_per_slot": eq.k_quantum,
            "min_quantum_nats": eq.min_quantum,
            "weights_nats": list(eq.weights),
            "scalar_msgs_per_slot": eq.scalar,
        }
    if exp.membership and rate.total > 0:
        membership = {}
        for mode in ("inner_policy", "outer_measure"):
            res = region_membership(params, rate, mode=mode, cap=exp.schedule_cap)
            membership[mode] = {
                "t_star": res.t_star,
                "inside": res.inside,
                "on_boundary": res.on_boundary,
                "measure": _measure_json(res.measure),
            }
        report["membership"] = membership
    _write_json(out / "regions.json", report)
    return EXIT_OK


def _sim_config(exp: ExperimentConfig, arrivals=None, seed=None) -> sim.RunConfig:
    try:
        return sim.RunConfig(
            params=exp.params,
            arrivals=arrivals if arrivals is not None else exp.arrivals,
            policy=exp.policy,
            horizon=exp.horizon,
            seed=exp.seed if seed is None else seed,
            quantum_mode=exp.quantum_mode,
        )
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc


def cmd_simulate(exp: ExperimentConfig, out: Path) -> int:
    exp.require("params", "arrivals", "policy", "horizon")
    cfg = _sim_config(exp)
    results = sim.run_replications(cfg, exp.replications)
    summaries = []
    for i, res in enumerate(results):
        path = out / f"trace_rep{i:03d}.csv"
        with open(path, "w") as fh:
            res.trace.to_csv(fh)
        print(path)
        summaries.append(ana.summarize_run(res, **exp.analysis))
    verdicts = [s["verdict"]["verdict"] if s["verdict"] else None for s in summaries]
    aggregate = {
        "replications": exp.replications,
        "mean_time_avg_n": sum(s["time_avg_n"] for s in summaries) / len(summaries),
        "total_departures": sum(s["departures"] for s in summaries),
        "verdict_counts": {
            v: verdicts.count(v) for v in ("stable", "unstable", "inconclusive")
        },
    }
    _write_json(
        out / "summary.json",
        {
            "seed": exp.seed,
            "horizon": exp.horizon,
            "quantum_mode": exp.quantum_mode,
            "per_replication": summaries,
            "aggregate": aggregate,
        },
    )
    return EXIT_OK


def cmd_figure_equal(exp: ExperimentConfig, out: Path) -> int:
    exp.require("params")
    if exp.figure is None:
        raise ConfigError(["figure: required for this command"])
    params = exp.params
    if params.num_service != 1:
        raise ConfigError(["system.service_classes: figure-equal needs exactly one class"])
    gammas = exp.figure.get("gammas")
    ks = exp.figure.get("k_values")
    if not isinstance(gammas, list) or not gammas:
        raise ConfigError(["figure.gammas: expected a non-empty list of SNR values"])
    if not isinstance(ks, list) or not all(isinstance(k, int) and k >= 1 for k in ks):
        raise ConfigError(["figure.k_values: expected a list of integers >= 1"])
    ln_m = math.log(params.service_classes[0].alphabet_size)
    w = params.bandwidth_w
    rows = []
    for gamma in gammas:
        if not isinstance(gamma, (int, float)) or gamma <= 0:
            raise ConfigError([f"figure.gammas: SNR must be > 0, got {gamma!r}"])
        for k in ks:
            p = SystemParams(
                rho=params.rho,
                bandwidth_w=params.bandwidth_w,
                noise_n0=params.noise_n0,
                k_max=k,
                powers=(float(gamma) * params.noise_power,),
                service_classes=params.service_classes,
            )
            thr = equal_power_threshold(p).scalar
            rows.append([float(gamma), k, thr, thr * ln_m * w])
    _write_csv(
        out / "figure_equal.csv",
        ["gamma", "k", "threshold_msgs_per_slot", "threshold_nats_per_sec"],
        rows,
    )
    return EXIT_OK


def _majority(verdicts: list[str]) -> str:
    counts = {v: verdicts.count(v) for v in ("stable", "unstable", "inconclusive")}
    best = max(counts.values())
    winners = [v for v, c in counts.items() if c == best]
    return winners[0] if len(winners) == 1 else "inconclusive"


def _agreement(theory: str, simulated: str) -> str:
    if theory == "inner_stable":
        if simulated == "stable":
            return "agree"
        return "compatible" if simulated == "inconclusive" else "disagree"
    if theory == "outer_transient":
        if simulated == "unstable":
            return "agree"
        return "compatible" if simulated == "inconclusive" else "disagree"
    return "compatible"


def cmd_validate(exp: ExperimentConfig, out: Path) -> int:
    exp.require("params", "rate", "horizon")
    if exp.validate is None or "multipliers" not in exp.validate:
        raise ConfigError(["validate.multipliers: required for this command"])
    multipliers = exp.validate["multipliers"]
    if not isinstance(multipliers, list) or not all(
        isinstance(m, (int, float)) and m >= 0 for m in multipliers
    ):
        raise ConfigError(["validate.multipliers: expected a list of numbers >= 0"])
    kind = exp.validate.get("arrival_kind", "bernoulli")
    if kind not in ("bernoulli", "poisson"):
        raise ConfigError(["validate.arrival_kind: expected 'bernoulli' or 'poisson'"])
    params, rate = exp.params, exp.rate
    if rate.total == 0:
        raise ConfigError(["rate.ea: must be non-zero for validate"])
    t_in = inner_scaling(params, rate)
    base = rate.scaled(t_in)

    # Verdicts never reject the configured horizon; rigor is the horizon.
    opts = dict(exp.analysis)
    opts["min_slots"] = min(opts["min_slots"], exp.horizon)

    seeds = np.random.SeedSequence(exp.seed).spawn(len(multipliers))
    rows = []
    detail = []
    for m, seed in zip(multipliers, seeds):
        r_m = base.scaled(float(m))
        theory = region_verdict(params, r_m, cap=exp.schedule_cap).classification
        specs = []
        for ea in r_m.ea:
            if kind == "bernoulli":
                if ea > 1.0:
                    raise ConfigError(
                        [f"validate: bernoulli arrivals need mean <= 1, got {ea}; use poisson"]
                    )
                specs.append(sim.Bernoulli(ea))
            else:
                specs.append(sim.Poisson(ea))
        model = sim.ArrivalModel(tuple(specs))
        cfg = _sim_config(exp, arrivals=model, seed=seed)
        results = sim.run_replications(cfg, exp.replications)
        verdicts = [
            ana.stability_verdict(res.trace, r_m.total, **opts).verdict
            for res in results
        ]
        simulated = _majority(verdicts)
        rows.append([float(m), r_m.total, theory, simulated, _agreement(theory, simulated)])
        detail.append(
            {
                "multiplier": float(m),
                "rate_total_msgs_per_slot": r_m.total,
                "theory": theory,
                "simulation": simulated,
                "agreement": _agreement(theory, simulated),
                "replication_verdicts": verdicts,
            }
        )
    _write_csv(
        out / "validate.csv",
        ["multiplier", "rate_total_msgs_per_slot", "theory", "simulation", "agreement"],
        rows,
    )
    _write_json(
        out / "validate.json",
        {
            "seed": exp.seed,
            "horizon": exp.horizon,
            "replications": exp.replications,
            "threshold_scaling": _num(t_in),
            "threshold_rate_msgs_per_slot": base.total,
            "rows": detail,
        },
    )
    return EXIT_OK


def cmd_sweep(exp: ExperimentConfig, out: Path) -> int:
    exp.require("params", "rate")
    if exp.sweep is None or "multipliers" not in exp.sweep:
        raise ConfigError(["sweep.multipliers: required for this command"])
    multipliers = exp.sweep["multipliers"]
    if not isinstance(multipliers, list) or not all(
        isinstance(m, (int, float)) and m >= 0 for m in multipliers
    ):
        raise ConfigError(["sweep.multipliers: expected a list of numbers >= 0"])
    params, rate = exp.params, exp.rate
    t_star_inner = t_star_outer = None
    if exp.membership and rate.total > 0:
        t_star_inner = region_membership(
            params, rate, "inner_policy", cap=exp.schedule_cap
        ).t_star
        t_star_outer = region_membership(
            params, rate, "outer_measure", cap=exp.schedule_cap
        ).t_star
    rows = []
    for m in multipliers:
        r_m = rate.scaled(float(m))
        if r_m.total > 0:
            v = region_verdict(params, r_m, cap=exp.schedule_cap)
            cls = v.classification
            count_lhs, work_lhs = v.inner.count_lhs, v.inner.work_lhs
            outer_lhs, outer_rhs = v.outer.lhs, v.outer.rhs
        else:
            cls, count_lhs, work_lhs, outer_lhs, outer_rhs = "inner_stable", 0.0, None, None, None
        # membership scales inversely with the ray multiplier
        ti = (t_star_inner / m) if (t_star_inner is not None and m > 0) else None
        to = (t_star_outer / m) if (t_star_outer is not None and m > 0) else None
        rows.append([float(m), r_m.total, cls, count_lhs, work_lhs, outer_lhs, outer_rhs, ti, to])
    _write_csv(
        out / "sweep.csv",
        [
            "multiplier",
            "rate_total_msgs_per_slot",
            "classification",
            "count_lhs",
            "work_lhs",
            "outer_lhs",
            "outer_rhs",
            "t_star_inner",
            "t_star_outer",
        ],
        rows,
    )
    return EXIT_OK


_COMMANDS = {
    "regions": cmd_regions,
    "simulate": cmd_simulate,
    "figure-equal": cmd_figure_equal,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="macstab",
        description="Stability regions and slot simulation for scheduled multiaccess channels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--replications", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument(
            "--quantum-mode", choices=("actual", "nominal"), default=None, dest="quantum_mode"
        )
    args = parser.parse_args(argv)

    try:
        doc = load_config(args.config)
        exp = build_experiment(
            doc,
            overrides={
                "seed": args.seed,
                "replications": args.replications,
                "horizon": args.horizon,
                "quantum_mode": args.quantum_mode,
            },
        )
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](exp, out)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error: {issue}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY


if __name__ == "__main__":
    sys.exit(main())
