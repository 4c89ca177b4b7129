"""Seeded instance generation, batch runs of both mechanisms, and CSV/JSON reports.

Every trial draws from its own ``numpy`` PCG64 stream seeded by
``SeedSequence([seed, n, family_code, trial])``, so serial and parallel runs
produce identical reports.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .core import Instance
from .valuations import DEFAULT_EPS, build_instance
from .verify import get_mechanism, measure_welfare, query_limit

RNG_NAME = "numpy.random.PCG64 seeded by SeedSequence([seed, n, crc32(family), trial])"
OWN_WEIGHT_FLOOR = 0.1
CSV_COLUMNS = ("n", "family", "trial", "mechanism", "opt", "expected_welfare", "ratio", "bound",
               "max_queries_per_agent", "sum_x")

Spec = tuple[str, dict[str, Any]]


def _weights(rng: np.random.Generator, n: int, own: int) -> list[float]:
    w = rng.uniform(0.0, 1.0, n)
    w[own] = max(w[own], OWN_WEIGHT_FLOOR)
    return [float(v) for v in w]


def _signals(rng: np.random.Generator, n: int) -> list[float]:
    return [float(v) for v in rng.uniform(0.0, 1.0, n)]


def _agent_weighted_sum(rng, n, i, **_):
    return "weighted_sum", {"weights": _weights(rng, n, i)}


def _agent_mineral(rng, n, i, **_):
    return "mineral_rights_average", {"eps": DEFAULT_EPS}


def _agent_max(rng, n, i, **_):
    return "max_of_signals", {"eps": float(rng.uniform(0.01, 1.0))}


def _agent_concave(rng, n, i, **_):
    return "concave_of_sum", {"weights": _weights(rng, n, i), "gamma": float(rng.uniform(0.3, 1.0))}


def _agent_affine(rng, n, i, **_):
    return "affine_own", {"a": float(rng.uniform(0.0, 1.0)), "b": float(rng.uniform(0.1, 1.0))}


def _agent_quadratic(rng, n, i, d=2.0, **_):
    w = _weights(rng, n, i)
    return "quadratic_of_sum", {"weights": w, "beta": (d - 1.0) / (2.0 * math.fsum(w))}


def _sparse_others(rng, n, i, k):
    others = [j for j in range(n) if j != i]
    size = int(rng.integers(0, min(k, n - 1) + 1))
    return sorted(int(j) for j in rng.choice(others, size=size, replace=False)) if size else []


def _agent_kdep_sum(rng, n, i, k=2, **_):
    keep = set(_sparse_others(rng, n, i, k)) | {i}
    w = _weights(rng, n, i)
    return "weighted_sum", {"weights": [w[j] if j in keep else 0.0 for j in range(n)]}


def _agent_kdep_max(rng, n, i, k=2, **_):
    members = _sparse_others(rng, n, i, k) + [i]
    return "max_of_signals", {"members": sorted(members), "eps": float(rng.uniform(0.01, 1.0))}


_SOS_AGENTS = (_agent_weighted_sum, _agent_mineral, _agent_max, _agent_concave, _agent_affine)


def _agent_mixed(rng, n, i, **kw):
    return _SOS_AGENTS[int(rng.integers(len(_SOS_AGENTS)))](rng, n, i, **kw)


def _agent_kdep_mixed(rng, n, i, **kw):
    pick = int(rng.integers(3))
    return (_agent_kdep_sum, _agent_kdep_max, _agent_affine)[pick](rng, n, i, **kw)


AGENT_GENERATORS: dict[str, Callable[..., Spec]] = {
    "weighted_sum": _agent_weighted_sum,
    "mineral_rights_average": _agent_mineral,
    "max_of_signals": _agent_max,
    "concave_of_sum": _agent_concave,
    "affine_own": _agent_affine,
    "mixed": _agent_mixed,
    "kdep_weighted_sum": _agent_kdep_sum,
    "kdep_max": _agent_kdep_max,
    "kdep_mixed": _agent_kdep_mixed,
    "quadratic_of_sum": _agent_quadratic,
}
SOS_TAGGED = frozenset({"weighted_sum", "mineral_rights_average", "max_of_signals", "concave_of_sum",
                        "affine_own", "mixed", "kdep_weighted_sum", "kdep_max", "kdep_mixed"})
KDEP_TAGGED = frozenset({"kdep_weighted_sum", "kdep_max", "kdep_mixed", "affine_own"})
DSOS_TAGGED = frozenset({"quadratic_of_sum"})


def trial_rng(seed: int, n: int, family: str, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, n, zlib.crc32(family.encode()), trial])
    return np.random.Generator(np.random.PCG64(ss))


def generate_instance(family: str, n: int, rng: np.random.Generator, k: int = 2, d: float = 2.0) -> Instance:
    try:
        agent = AGENT_GENERATORS[family]
    except KeyError:
        raise ValueError(f"unknown generator family {family!r}; choose from {sorted(AGENT_GENERATORS)}") from None
    if n < 1:
        raise ValueError("n must be at least 1")
    specs = [agent(rng, n, i, k=k, d=d) for i in range(n)]
    return build_instance(specs, _signals(rng, n))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_list: tuple[int, ...] = (2, 4, 8, 16)
    families: tuple[str, ...] = ("weighted_sum",)
    trials: int = 10
    mechanism: str = "both"
    chi_override: float | None = None
    d: float = 1.0
    k: int = 2
    lottery_samples: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.mechanism not in ("sos", "kdep", "both"):
            raise ValueError("mechanism must be sos, kdep or both")
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ValueError("n_list must hold positive agent counts")
        unknown = [f for f in self.families if f not in AGENT_GENERATORS]
        if unknown or not self.families:
            raise ValueError(f"unknown families {unknown}; choose from {sorted(AGENT_GENERATORS)}")
        if self.k < 0 or self.lottery_samples < 0 or self.jobs < 1:
            raise ValueError("k and lottery_samples must be non-negative, jobs positive")

    @property
    def mechanisms(self) -> tuple[str, ...]:
        return ("sos", "kdep") if self.mechanism == "both" else (self.mechanism,)

    def cells(self) -> list[tuple[int, str, int]]:
        return [(n, fam, t) for n in self.n_list for fam in self.families for t in range(self.trials)]


def generate(config: ExperimentConfig) -> list[Instance]:
    """One instance per ``(n, family, trial)`` cell, in that nesting order."""
    gen_d = max(config.d, 1.0)
    return [generate_instance(fam, n, trial_rng(config.seed, n, fam, t), config.k, gen_d)
            for n, fam, t in config.cells()]


def sample_lottery(x: Sequence[float], rng: np.random.Generator, size: int) -> np.ndarray:
    """Winner indices drawn from ``x``; ``-1`` marks the no-sale outcome ``1 - sum(x)``."""
    probs = np.asarray(list(x) + [max(0.0, 1.0 - math.fsum(x))], dtype=float)
    probs /= probs.sum()
    draws = rng.choice(len(probs), size=size, p=probs)
    draws[draws == len(x)] = -1
    return draws


def _run_cell(args: tuple[ExperimentConfig, int, str, int]) -> list[dict[str, Any]]:
    config, n, fam, t = args
    rng = trial_rng(config.seed, n, fam, t)
    instance = generate_instance(fam, n, rng, config.k, max(config.d, 1.0))
    rows = []
    for name in config.mechanisms:
        mech = get_mechanism(name, config.chi_override, config.d)
        out = mech.run(instance)
        w = measure_welfare(instance, mech, out)
        counts = out.ledger.counts(n)
        row = {
            "n": n,
            "family": fam,
            "trial": t,
            "mechanism": name,
            "opt": w.opt,
            "expected_welfare": w.expected_welfare,
            "ratio": w.ratio,
            "bound": w.bound,
            "max_queries_per_agent": max(counts),
            "sum_x": math.fsum(out.x),
            "holds": w.holds,
            "queries_ok": max(counts) <= query_limit(mech, n),
        }
        if config.lottery_samples:
            draws = sample_lottery(out.x, rng, config.lottery_samples)
            row["winner"] = int(draws[0])
            row["no_sale_rate"] = float(np.mean(draws == -1))
        rows.append(row)
    return rows


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[dict[str, Any]]
    aggregates: list[dict[str, Any]] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(r["holds"] and r["queries_ok"] for r in self.rows)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rng": RNG_NAME,
            "config": asdict(self.config) | {"jobs": None},
            "all_hold": self.all_hold,
            "aggregates": self.aggregates,
            "rows": self.rows,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def _aggregate(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    groups: dict[tuple[str, int], list[dict[str, Any]]] = {}
    for r in rows:
        groups.setdefault((r["mechanism"], r["n"]), []).append(r)
    return [
        {
            "mechanism": mech,
            "n": n,
            "count": len(g),
            "min_ratio": min(r["ratio"] for r in g),
            "mean_ratio": statistics.fmean(r["ratio"] for r in g),
            "min_margin": min(r["ratio"] - r["bound"] for r in g),
        }
        for (mech, n), g in sorted(groups.items())
    ]


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    tasks = [(config, n, fam, t) for n, fam, t in config.cells()]
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            chunks = list(pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (4 * config.jobs))))
    else:
        chunks = [_run_cell(task) for task in tasks]
    rows = [r for chunk in chunks for r in chunk]
    return ExperimentReport(config, rows, _aggregate(rows))


def bench(n_list: Sequence[int] = (2, 8, 32, 128), trials: int = 3, seed: int = 0,
          family: str = "weighted_sum") -> list[dict[str, Any]]:
    """Wall-clock seconds per full run (allocation and payments) for each mechanism."""
    out = []
    for n in n_list:
        instances = [generate_instance(family, n, trial_rng(seed, n, family, t)) for t in range(trials)]
        for name in ("sos", "kdep"):
            mech = get_mechanism(name)
            start = time.perf_counter()
            queries = [max(mech.run(inst).ledger.counts(n)) for inst in instances]
            elapsed = time.perf_counter() - start
            out.append({"n": n, "mechanism": name, "trials": trials,
                        "seconds_per_run": elapsed / trials, "max_queries_per_agent": max(queries)})
    return out
