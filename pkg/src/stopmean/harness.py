"""Experiment configuration, replication driver and CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import jsonschema

from . import __version__
from .dyadic import DyadicValue, as_dyadic
from .estimator import LevelCompletion, PathEstimator, naive_lambda_oracle
from .metrics import (
    CSV_FIELDS,
    TraceRecord,
    detect_An,
    detect_H_prefix,
    oracle_limit,
    oracle_stop,
    total_variation,
)
from .sources import (
    RNG_NAME,
    Source,
    ar1_source,
    counterexample_source,
    iid_bernoulli,
    iid_uniform,
    markov_source,
    sticky_chain,
)
from .sources import ReplaySource

log = logging.getLogger(__name__)

EXACT_CSV_FIELDS = ("replicate", "n", "lambda_prime_n", "m_prime_n", "oracle_stop", "gap")
_FIRST_CHUNK = 4096


class ConfigError(ValueError):
    exit_code = 1


class BudgetExhausted(RuntimeError):
    exit_code = 2


class InvariantViolation(RuntimeError):
    exit_code = 3


_NUMBER = {"anyOf": [{"type": "number"}, {"type": "string"}]}

SOURCE_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "markov"},
                "p_stay": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "required": ["kind", "p_stay"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "markov"},
                "values": {"type": "array", "items": _NUMBER, "minItems": 1},
                "transitions": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number", "minimum": 0}},
                },
            },
            "required": ["kind", "values", "transitions"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "iid_bernoulli"},
                "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "required": ["kind", "p"],
            "additionalProperties": False,
        },
        {
            "properties": {"kind": {"enum": ["iid_uniform", "counterexample"]}},
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "ar1"},
                "a": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "a", "sigma"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "replay"},
                "pattern": {"type": "array", "items": _NUMBER, "minItems": 1},
            },
            "required": ["kind", "pattern"],
            "additionalProperties": False,
        },
    ],
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["source"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "source": SOURCE_SCHEMA,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "n_seeds": {"type": "integer", "minimum": 1},
        "max_samples": {"type": "integer", "minimum": 1},
        "max_level": {"type": "integer", "minimum": 1},
        "min_level": {"type": "integer", "minimum": 0},
        "snapshot_depth": {"type": "integer", "minimum": 0},
        "run_exact_variant": {"type": "boolean"},
        "verify": {"type": "boolean"},
        "workers": {"type": "integer", "minimum": 1},
        "stationarity_level": {"type": ["integer", "null"], "minimum": 1},
        "output_dir": {"type": ["string", "null"]},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    source: dict
    name: str = "custom"
    seed: int = 0
    n_seeds: int = 1
    max_samples: int = 1_000_000
    max_level: int = 40
    min_level: int = 0
    snapshot_depth: int = 0
    run_exact_variant: bool = False
    verify: bool = False
    workers: int = 1
    stationarity_level: Optional[int] = None
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from None
        cfg = cls(**data)
        # build one source to surface semantic errors (bad matrix, bad literal) early
        try:
            make_source(cfg.source, cfg.seed)
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            raise ConfigError(f"invalid source: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed, self.seed + self.n_seeds))


def _value(v) -> DyadicValue:
    return DyadicValue.parse(v) if isinstance(v, str) else as_dyadic(v)


def make_source(spec: dict, seed: int) -> Source:
    kind = spec["kind"]
    if kind == "markov":
        if "p_stay" in spec:
            return sticky_chain(spec["p_stay"], seed)
        return markov_source([_value(v) for v in spec["values"]], spec["transitions"], seed)
    if kind == "iid_bernoulli":
        return iid_bernoulli(spec["p"], seed)
    if kind == "iid_uniform":
        return iid_uniform(seed)
    if kind == "counterexample":
        return counterexample_source(seed)
    if kind == "ar1":
        return ar1_source(spec["a"], spec["sigma"], seed)
    if kind == "replay":
        return ReplaySource([_value(v) for v in spec["pattern"]], seed)
    raise ConfigError(f"unknown source kind {kind!r}")


PRESETS: dict[str, dict[str, Any]] = {
    # observed deepest levels (200 seeds): >=80% of seeds reach n = 6, some reach 40
    "convergence-markov": dict(
        source={"kind": "markov", "p_stay": 0.95}, n_seeds=200, max_samples=1_000_000, max_level=40
    ),
    # observed (200 seeds): 34 stop at n = 2, 104 at n = 3, the rest deeper
    "convergence-iid": dict(
        source={"kind": "iid_bernoulli", "p": 0.5}, n_seeds=200, max_samples=1_000_000, max_level=40
    ),
    "continuity-ar1": dict(
        source={"kind": "ar1", "a": 0.5, "sigma": 1.0}, n_seeds=200, max_samples=100_000, max_level=20
    ),
    "divergence-counterexample": dict(
        source={"kind": "counterexample"},
        n_seeds=10_000,
        max_samples=1_000_000,
        max_level=3,
        run_exact_variant=True,
        stationarity_level=2,
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        params = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ExperimentConfig(name=name, **params)


# --------------------------------------------------------------------------
# one replication


@dataclass
class ReplicateResult:
    seed: int
    samples: int
    records: list[TraceRecord]
    exact_rows: list[dict]
    lambdas: list[int]
    lambdas_exact: list[int]
    x1: Optional[str]
    after_stop: dict[int, str] = field(default_factory=dict)
    snapshot: Optional[list[str]] = None

    @property
    def deepest_level(self) -> int:
        return len(self.lambdas) - 1

    @property
    def deepest_level_exact(self) -> Optional[int]:
        return len(self.lambdas_exact) - 1 if self.lambdas_exact else None

    def meta(self) -> dict:
        return {
            "seed": self.seed,
            "samples": self.samples,
            "deepest_level": self.deepest_level,
            "deepest_level_exact": self.deepest_level_exact,
            "lambdas": self.lambdas[1:],
            "lambdas_exact": self.lambdas_exact[1:],
            "x1": self.x1,
            "after_stop": {str(k): v for k, v in sorted(self.after_stop.items())},
            "snapshot": self.snapshot,
        }


def _check_lambdas(lambdas: list[int], seed: int) -> None:
    for n in range(1, len(lambdas)):
        if lambdas[n] < n or lambdas[n] <= lambdas[n - 1]:
            raise InvariantViolation(
                f"seed {seed}: lambda_{n} = {lambdas[n]} breaks lambda_n >= n / strict increase"
            )


def _verify(est: PathEstimator, seed: int) -> None:
    for n in range(1, len(est.lambdas)):
        want = naive_lambda_oracle(est.path, est.lambdas[n - 1], n, exact=est.exact)
        if want != est.lambdas[n]:
            raise InvariantViolation(
                f"seed {seed}: streaming lambda_{n} = {est.lambdas[n]}, brute force gives {want}"
            )


def run_replicate(cfg: ExperimentConfig, seed: int) -> ReplicateResult:
    src = make_source(cfg.source, seed)
    quant = PathEstimator(max_level=cfg.max_level)
    exact = PathEstimator(exact=True, max_level=cfg.max_level) if cfg.run_exact_variant else None
    used, chunk = 0, _FIRST_CHUNK
    while used < cfg.max_samples and not (quant.done and (exact is None or exact.done)):
        piece = src.take(min(chunk, cfg.max_samples - used))
        used += len(piece)
        quant.extend(piece)
        if exact is not None:
            exact.extend(piece)
        chunk *= 2

    path = quant.path
    _check_lambdas(quant.lambdas, seed)
    if exact is not None:
        _check_lambdas(exact.lambdas, seed)
    if cfg.verify:
        _verify(quant, seed)
        if exact is not None:
            _verify(exact, seed)

    is_ce = src.kind == "counterexample"
    h_prefix = detect_H_prefix([path.value(0), path.value(1)]) if is_ce and len(path) >= 2 else None
    m_prime = {c.n: c.m for c in exact.completions} if exact is not None else {}

    records = []
    for c in quant.completions:
        x = path.value(c.lam)
        o_stop = oracle_stop(src, path, c.lam) if src.has_oracle else None
        o_lim = oracle_limit(src, path, c.lam, c.n) if src.has_oracle else None
        records.append(
            TraceRecord(
                replicate=seed,
                n=c.n,
                lambda_n=c.lam,
                m_n=c.m,
                m_prime_n=m_prime.get(c.n),
                oracle_stop=o_stop,
                oracle_limit=o_lim,
                gap=abs(c.m - o_stop) if o_stop is not None else None,
                value_at_stop=x,
                event_An=detect_An(x, c.n) if is_ce else None,
                event_H_prefix=h_prefix,
            )
        )

    exact_rows = []
    if exact is not None:
        for c in exact.completions:
            o = oracle_stop(src, path, c.lam) if src.has_oracle else None
            exact_rows.append(
                {
                    "replicate": seed,
                    "n": c.n,
                    "lambda_prime_n": c.lam,
                    "m_prime_n": c.m,
                    "oracle_stop": o,
                    "gap": abs(c.m - o) if o is not None else None,
                }
            )

    after = {n: str(path.value(lam + 1)) for n, lam in enumerate(quant.lambdas) if n and lam + 1 < len(path)}
    snap = None
    if cfg.snapshot_depth and quant.completions and quant.lambdas[-1] >= cfg.snapshot_depth:
        snap = [str(v) for v in quant.backward_snapshot(cfg.snapshot_depth).values]
    return ReplicateResult(
        seed=seed,
        samples=used,
        records=records,
        exact_rows=exact_rows,
        lambdas=list(quant.lambdas),
        lambdas_exact=list(exact.lambdas) if exact is not None else [],
        x1=str(path.value(1)) if len(path) > 1 else None,
        after_stop=after,
        snapshot=snap,
    )


def _run_one(args):
    cfg, seed = args
    return run_replicate(cfg, seed)


def run_replicates(cfg: ExperimentConfig, seeds: Optional[list[int]] = None) -> list[ReplicateResult]:
    seeds = cfg.seeds if seeds is None else list(seeds)
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_one, [(cfg, s) for s in seeds], chunksize=8))
    else:
        results = [run_replicate(cfg, s) for s in seeds]
    results.sort(key=lambda r: r.seed)
    return results


# --------------------------------------------------------------------------
# serialization


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trace_csv(records: list[TraceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(rec.as_row())
    return buf.getvalue()


def exact_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=EXACT_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row[k]) for k in EXACT_CSV_FIELDS})
    return buf.getvalue()


def metadata(cfg: ExperimentConfig, results: list[ReplicateResult]) -> dict:
    return {
        "artifact": "stopmean",
        "version": __version__,
        "rng": RNG_NAME,
        "config": cfg.to_dict(),
        "replicates": [r.meta() for r in results],
    }


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_outputs(out: Path, cfg: ExperimentConfig, results: list[ReplicateResult]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    records = [rec for r in results for rec in r.records]
    (out / "trace.csv").write_text(trace_csv(records))
    if cfg.run_exact_variant:
        (out / "exact.csv").write_text(exact_csv([row for r in results for row in r.exact_rows]))
    (out / "metadata.json").write_text(_dump_json(metadata(cfg, results)))


def _check_min_level(cfg: ExperimentConfig, results: list[ReplicateResult]) -> None:
    short = [r.seed for r in results if r.deepest_level < cfg.min_level]
    if short:
        raise BudgetExhausted(
            f"{len(short)} replicate(s) stopped below min_level {cfg.min_level} "
            f"within {cfg.max_samples} samples (first seed {short[0]})"
        )


def run(cfg: ExperimentConfig, out: Optional[Path] = None) -> list[ReplicateResult]:
    """Run every seed in the config and write ``trace.csv`` and ``metadata.json``."""
    results = run_replicates(cfg)
    out = out if out is not None else (Path(cfg.output_dir) if cfg.output_dir else None)
    if out is not None:
        _write_outputs(Path(out), cfg, results)
    _check_min_level(cfg, results)
    return results


# --------------------------------------------------------------------------
# aggregation


@dataclass
class SummaryReport:
    name: str
    replicates: int
    rows: int
    levels: list[dict]
    deepest_levels: dict[str, int]
    stationarity: Optional[dict] = None
    exact_levels: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _num(s: str) -> Optional[float]:
    return float(s) if s != "" else None


def summarize(rows: list[dict], meta: dict, exact_rows: Optional[list[dict]] = None) -> SummaryReport:
    """Aggregate CSV rows (as read back by ``csv.DictReader``) per level."""
    by_level: dict[int, list[dict]] = {}
    for row in rows:
        by_level.setdefault(int(row["n"]), []).append(row)

    levels = []
    for n in sorted(by_level):
        rs = by_level[n]
        gaps = [_num(r["gap"]) for r in rs if r["gap"] != ""]
        ms = [float(r["m_n"]) for r in rs]
        mp = [float(r["m_prime_n"]) for r in rs if r["m_prime_n"] != ""]
        entry = {
            "n": n,
            "count": len(rs),
            "mean_m": statistics.fmean(ms),
            "mean_gap": statistics.fmean(gaps) if gaps else None,
            "median_gap": statistics.median(gaps) if gaps else None,
            "mean_m_prime": statistics.fmean(mp) if mp else None,
        }
        flagged = [r for r in rs if r["event_An"] != ""]
        if flagged:
            entry["event_An_freq"] = sum(r["event_An"] == "true" for r in flagged) / len(flagged)
            given_h = [r for r in flagged if r["event_H_prefix"] == "true"]
            entry["H_prefix_count"] = len(given_h)
            entry["event_An_given_H_freq"] = (
                sum(r["event_An"] == "true" for r in given_h) / len(given_h) if given_h else None
            )
        levels.append(entry)

    exact_levels = []
    if exact_rows:
        by_n: dict[int, list[float]] = {}
        for row in exact_rows:
            if row["gap"] != "":
                by_n.setdefault(int(row["n"]), []).append(float(row["gap"]))
        exact_levels = [
            {"n": n, "count": len(g), "mean_gap": statistics.fmean(g), "median_gap": statistics.median(g)}
            for n, g in sorted(by_n.items())
        ]

    reps = meta["replicates"]
    deepest: dict[str, int] = {}
    for r in reps:
        key = str(r["deepest_level"])
        deepest[key] = deepest.get(key, 0) + 1

    station = None
    k = meta["config"].get("stationarity_level")
    if k:
        firsts = [r["x1"] for r in reps if r["x1"] is not None and str(k) in r["after_stop"]]
        after = [r["after_stop"][str(k)] for r in reps if r["x1"] is not None and str(k) in r["after_stop"]]
        if firsts:
            station = {"level": k, "completed": len(firsts), "tv_distance": total_variation(firsts, after)}

    return SummaryReport(
        name=meta["config"].get("name", "custom"),
        replicates=len(reps),
        rows=len(rows),
        levels=levels,
        deepest_levels=dict(sorted(deepest.items(), key=lambda kv: int(kv[0]))),
        stationarity=station,
        exact_levels=exact_levels,
    )


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_from_dir(directory) -> SummaryReport:
    d = Path(directory)
    meta = json.loads((d / "metadata.json").read_text())
    exact = _read_csv(d / "exact.csv") if (d / "exact.csv").exists() else None
    return summarize(_read_csv(d / "trace.csv"), meta, exact)


def sweep(cfg: ExperimentConfig, n_seeds: int, out) -> SummaryReport:
    """Run ``n_seeds`` replicates from ``cfg.seed`` on; write per-seed CSVs and a summary."""
    if n_seeds < 1:
        raise ConfigError("need at least one seed")
    cfg = replace(cfg, n_seeds=n_seeds)
    out = Path(out)
    results = run_replicates(cfg)
    _write_outputs(out, cfg, results)
    per_seed = out / "seeds"
    per_seed.mkdir(exist_ok=True)
    for r in results:
        (per_seed / f"seed_{r.seed}.csv").write_text(trace_csv(r.records))
    report = summary_from_dir(out)
    (out / "summary.json").write_text(_dump_json(report.to_dict()))
    _check_min_level(cfg, results)
    return report


def trace_pattern(pattern, levels: int) -> tuple[list[LevelCompletion], list[LevelCompletion]]:
    """Completions of both estimators on the periodic replay of ``pattern``."""
    from .estimator import StreamingEstimator

    values = [_value(v) for v in pattern]
    quant = StreamingEstimator(max_level=levels)
    exact = StreamingEstimator(exact=True, max_level=levels)
    t = 0
    limit = 1 << 20
    while not (quant.done and exact.done) and t < limit:
        x = values[t % len(values)]
        quant.step(x)
        exact.step(x)
        t += 1
    return quant.completions, exact.completions
