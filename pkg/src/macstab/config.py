"""Experiment configuration: a single JSON document, validated up front.

Class labels in config files are 1-based pairs [l, j] to match the report
and CSV column conventions; schedules are flat row-major count lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .model import DEFAULT_SCHEDULE_CAP, Schedule, ServiceClass, SystemParams
from .regions import RateVector, ScheduleMeasure
from .sim import (
    ArrivalModel,
    Bernoulli,
    DeterministicBatch,
    Empirical,
    NonIdling,
    Poisson,
    StateIndependent,
)

ANALYSIS_DEFAULTS = {
    "eps": 0.05,
    "ci_level": 0.95,
    "stable_ci_level": 0.99,
    "window_fraction": 0.5,
    "backlog_bound": 10_000.0,
    "min_slots": 200_000,
    "n_batches": 20,
}


class ConfigError(ValueError):
    """Validation failure with one message per offending field path."""

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class _Issues:
    def __init__(self):
        self.items: list[str] = []

    def add(self, path: str, message: str):
        self.items.append(f"{path}: {message}")

    def raise_if_any(self):
        if self.items:
            raise ConfigError(self.items)


def _need(d: dict, key: str, path: str, issues: _Issues):
    if key not in d:
        issues.add(f"{path}.{key}", "required field is missing")
        return None
    return d[key]


def _number(value, path, issues, minimum=None, strict=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        issues.add(path, f"expected a number, got {value!r}")
        return None
    v = float(value)
    if minimum is not None and (v <= minimum if strict else v < minimum):
        op = ">" if strict else ">="
        issues.add(path, f"must be {op} {minimum}, got {v}")
        return None
    return v


def _integer(value, path, issues, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        issues.add(path, f"expected an integer, got {value!r}")
        return None
    if minimum is not None and value < minimum:
        issues.add(path, f"must be >= {minimum}, got {value}")
        return None
    return value


def parse_system(d, issues: _Issues) -> SystemParams | None:
    if not isinstance(d, dict):
        issues.add("system", f"expected an object, got {d!r}")
        return None
    rho = _need(d, "rho", "system", issues)
    k_max = _need(d, "k_max", "system", issues)
    powers = _need(d, "powers", "system", issues)
    classes = _need(d, "service_classes", "system", issues)
    bandwidth = d.get("bandwidth_w", 1.0)
    noise = d.get("noise_n0", 1.0)
    if None in (rho, k_max, powers, classes):
        return None
    svc = []
    if not isinstance(classes, list) or not classes:
        issues.add("system.service_classes", "expected a non-empty list")
        return None
    for i, sc in enumerate(classes):
        path = f"system.service_classes[{i}]"
        if not isinstance(sc, dict):
            issues.add(path, "expected an object with error_prob and alphabet_size")
            return None
        pe = _need(sc, "error_prob", path, issues)
        m = _need(sc, "alphabet_size", path, issues)
        if pe is None or m is None:
            return None
        try:
            svc.append(ServiceClass(float(pe), m))
        except (TypeError, ValueError) as exc:
            issues.add(path, str(exc))
            return None
    try:
        return SystemParams(
            rho=float(rho),
            bandwidth_w=float(bandwidth),
            noise_n0=float(noise),
            k_max=k_max,
            powers=tuple(powers),
            service_classes=tuple(svc),
        )
    except (TypeError, ValueError) as exc:
        issues.add("system", str(exc))
        return None


def _parse_class_label(value, params: SystemParams, path: str, issues: _Issues):
    """1-based [l, j] pair to a flat 0-based class index."""
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(x, int) and not isinstance(x, bool) for x in value)
    ):
        issues.add(path, f"expected a 1-based [l, j] pair, got {value!r}")
        return None
    l, j = value[0] - 1, value[1] - 1
    try:
        return params.flat_index(l, j)
    except ValueError as exc:
        issues.add(path, str(exc))
        return None


def _parse_schedule(value, params: SystemParams, path: str, issues: _Issues):
    if not isinstance(value, list) or len(value) != params.num_classes:
        issues.add(
            path,
            f"expected a list of {params.num_classes} counts (row-major over classes)",
        )
        return None
    try:
        s = Schedule(tuple(value))
    except (TypeError, ValueError) as exc:
        issues.add(path, str(exc))
        return None
    if s.total > params.k_max:
        issues.add(path, f"schedule total {s.total} exceeds k_max={params.k_max}")
        return None
    return s


def parse_rate(d, params: SystemParams, issues: _Issues) -> RateVector | None:
    if not isinstance(d, dict):
        issues.add("rate", f"expected an object, got {d!r}")
        return None
    ea = _need(d, "ea", "rate", issues)
    if ea is None:
        return None
    if not isinstance(ea, list) or len(ea) != params.num_classes:
        issues.add("rate.ea", f"expected {params.num_classes} entries (row-major)")
        return None
    try:
        return RateVector(tuple(ea), tuple(d["ea2"]) if "ea2" in d else None)
    except (TypeError, ValueError) as exc:
        issues.add("rate", str(exc))
        return None


_ARRIVAL_KINDS = {"bernoulli", "poisson", "deterministic_batch", "empirical"}


def parse_arrivals(entries, params: SystemParams, issues: _Issues) -> ArrivalModel | None:
    if not isinstance(entries, list):
        issues.add("arrivals", f"expected a list, got {entries!r}")
        return None
    specs: list = [Bernoulli(0.0)] * params.num_classes
    seen = set()
    ok = True
    for i, e in enumerate(entries):
        path = f"arrivals[{i}]"
        if not isinstance(e, dict):
            issues.add(path, "expected an object")
            ok = False
            continue
        c = _parse_class_label(_need(e, "class", path, issues), params, f"{path}.class", issues)
        kind = _need(e, "kind", path, issues)
        if c is None or kind is None:
            ok = False
            continue
        if c in seen:
            issues.add(f"{path}.class", "class listed twice")
            ok = False
            continue
        seen.add(c)
        if kind not in _ARRIVAL_KINDS:
            issues.add(f"{path}.kind", f"unknown kind {kind!r}, expected one of {sorted(_ARRIVAL_KINDS)}")
            ok = False
            continue
        try:
            if kind == "bernoulli":
                specs[c] = Bernoulli(float(_need(e, "p", path, issues)))
            elif kind == "poisson":
                specs[c] = Poisson(float(_need(e, "mean", path, issues)))
            elif kind == "deterministic_batch":
                specs[c] = DeterministicBatch(
                    _need(e, "batch", path, issues), _need(e, "period", path, issues)
                )
            else:
                pmf = _need(e, "pmf", path, issues)
                if not isinstance(pmf, dict):
                    raise ValueError("pmf must map count strings to probabilities")
                specs[c] = Empirical(tuple((int(k), float(p)) for k, p in sorted(pmf.items())))
        except (TypeError, ValueError) as exc:
            issues.add(path, str(exc))
            ok = False
    return ArrivalModel(tuple(specs)) if ok else None


def parse_policy(d, params: SystemParams, issues: _Issues):
    if d is None:
        return NonIdling()
    if not isinstance(d, dict):
        issues.add("policy", f"expected an object, got {d!r}")
        return None
    kind = d.get("kind", "non_idling")
    if kind == "non_idling":
        try:
            return NonIdling(d.get("selection", "fcfs"))
        except ValueError as exc:
            issues.add("policy.selection", str(exc))
            return None
    if kind != "state_independent":
        issues.add("policy.kind", f"unknown kind {kind!r}")
        return None
    rows = _need(d, "measure", "policy", issues)
    if not isinstance(rows, list) or not rows:
        issues.add("policy.measure", "expected a non-empty list of {schedule, prob}")
        return None
    support = []
    for i, row in enumerate(rows):
        path = f"policy.measure[{i}]"
        if not isinstance(row, dict):
            issues.add(path, "expected an object")
            return None
        s = _parse_schedule(_need(row, "schedule", path, issues), params, f"{path}.schedule", issues)
        p = _number(_need(row, "prob", path, issues), f"{path}.prob", issues, minimum=0.0)
        if s is None or p is None:
            return None
        support.append((s, p))
    try:
        measure = ScheduleMeasure(tuple(support))
    except ValueError as exc:
        issues.add("policy.measure", str(exc))
        return None
    assignment = None
    if "assignment" in d:
        rows = d["assignment"]
        if not isinstance(rows, list):
            issues.add("policy.assignment", "expected a list")
            return None
        parsed = []
        for i, row in enumerate(rows):
            path = f"policy.assignment[{i}]"
            c = _parse_class_label(_need(row, "class", path, issues), params, f"{path}.class", issues)
            table = _need(row, "table", path, issues)
            if c is None or not isinstance(table, list):
                issues.add(path, "expected class and a table list")
                return None
            tab = []
            for k, t in enumerate(table):
                s = _parse_schedule(
                    _need(t, "schedule", f"{path}.table[{k}]", issues),
                    params,
                    f"{path}.table[{k}].schedule",
                    issues,
                )
                p = _number(
                    _need(t, "prob", f"{path}.table[{k}]", issues),
                    f"{path}.table[{k}].prob",
                    issues,
                    minimum=0.0,
                )
                if s is None or p is None:
                    return None
                tab.append((s, p))
            parsed.append((c, tuple(tab)))
        assignment = tuple(parsed)
    try:
        return StateIndependent(measure, assignment)
    except ValueError as exc:
        issues.add("policy", str(exc))
        return None


@dataclass
class ExperimentConfig:
    """Validated experiment description shared by all commands."""

    params: SystemParams | None = None
    rate: RateVector | None = None
    arrivals: ArrivalModel | None = None
    policy: object = None
    horizon: int = 0
    replications: int = 1
    seed: int = 0
    quantum_mode: str = "actual"
    schedule_cap: int = DEFAULT_SCHEDULE_CAP
    membership: bool = True
    analysis: dict = field(default_factory=lambda: dict(ANALYSIS_DEFAULTS))
    figure: dict | None = None
    validate: dict | None = None
    sweep: dict | None = None

    def require(self, *names: str) -> None:
        missing = []
        for n in names:
            v = getattr(self, n)
            if v is None or (n == "horizon" and v < 1):
                missing.append(n)
        if missing:
            raise ConfigError([f"{n}: required for this command" for n in missing])


def load_config(path: str) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return doc


_KNOWN_KEYS = {
    "system",
    "rate",
    "arrivals",
    "policy",
    "horizon",
    "replications",
    "seed",
    "quantum_mode",
    "schedule_cap",
    "membership",
    "analysis",
    "figure",
    "validate",
    "sweep",
}


def build_experiment(doc: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a config document (with CLI overrides applied on top).

    Top-level keys starting with an underscore are treated as comments.
    """
    doc = {k: v for k, v in doc.items() if not k.startswith("_")}
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    issues = _Issues()
    for key in sorted(doc):
        if key not in _KNOWN_KEYS:
            issues.add(key, "unknown top-level key")

    params = parse_system(doc["system"], issues) if "system" in doc else None
    if params is None and "system" not in doc:
        issues.add("system", "required field is missing")
    issues.raise_if_any()

    exp = ExperimentConfig(params=params)
    if "rate" in doc:
        exp.rate = parse_rate(doc["rate"], params, issues)
    if "arrivals" in doc:
        exp.arrivals = parse_arrivals(doc["arrivals"], params, issues)
    if "policy" in doc:
        exp.policy = parse_policy(doc["policy"], params, issues)
    else:
        exp.policy = NonIdling()

    if "horizon" in doc:
        exp.horizon = _integer(doc["horizon"], "horizon", issues, minimum=1) or 0
    if "replications" in doc:
        exp.replications = _integer(doc["replications"], "replications", issues, minimum=1) or 1
    if "seed" in doc:
        exp.seed = _integer(doc["seed"], "seed", issues, minimum=0) or 0
    if "schedule_cap" in doc:
        exp.schedule_cap = _integer(doc["schedule_cap"], "schedule_cap", issues, minimum=1) or DEFAULT_SCHEDULE_CAP
    if "membership" in doc:
        if not isinstance(doc["membership"], bool):
            issues.add("membership", "expected true or false")
        else:
            exp.membership = doc["membership"]
    mode = doc.get("quantum_mode", "actual")
    if mode not in ("actual", "nominal"):
        issues.add("quantum_mode", f"expected 'actual' or 'nominal', got {mode!r}")
    else:
        exp.quantum_mode = mode

    if "analysis" in doc:
        if not isinstance(doc["analysis"], dict):
            issues.add("analysis", "expected an object")
        else:
            for k, v in doc["analysis"].items():
                if k not in ANALYSIS_DEFAULTS:
                    issues.add(f"analysis.{k}", "unknown analysis option")
                    continue
                if k in ("min_slots", "n_batches"):
                    val = _integer(v, f"analysis.{k}", issues, minimum=1)
                else:
                    val = _number(v, f"analysis.{k}", issues, minimum=0.0)
                if val is not None:
                    exp.analysis[k] = val

    for section in ("figure", "validate", "sweep"):
        if section in doc:
            if not isinstance(doc[section], dict):
                issues.add(section, "expected an object")
            else:
                setattr(exp, section, doc[section])

    issues.raise_if_any()
    return exp
