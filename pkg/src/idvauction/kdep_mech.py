"""EPIC-IR mechanism for valuations with bounded signal dependency.

Agent ``i`` is a candidate when its value beats every threshold
``T_j = v_j(0_i, s_-i)`` (ties go to the lower index). A candidate wins with
probability ``1 / (2 (max out-degree of an agent depending on i, + 1))``.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field

from .core import Instance, MechanismOutcome, QueryLedger, substitute
from .stepfn import StepFunction

log = logging.getLogger(__name__)


@dataclass
class DependencyGraph:
    """Edge ``i -> j`` iff ``j`` is in agent ``i``'s declared dependency set."""

    edges: list[frozenset[int]]
    under_declared: list[tuple[int, int]] = field(default_factory=list)
    over_declared: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.edges)

    @property
    def out_degrees(self) -> list[int]:
        return [len(e) for e in self.edges]

    @property
    def k(self) -> int:
        return max(self.out_degrees, default=0)

    def predecessors(self, i: int) -> list[int]:
        return [j for j, succ in enumerate(self.edges) if i in succ]

    def to_dict(self) -> dict:
        return {
            "edges": [sorted(e) for e in self.edges],
            "out_degrees": self.out_degrees,
            "k": self.k,
            "under_declared": [list(e) for e in self.under_declared],
            "over_declared": [list(e) for e in self.over_declared],
        }


def build_dependency_graph(instance: Instance, audit_samples: int = 0, seed: int = 0) -> DependencyGraph:
    """Dependency graph from the declared sets, optionally audited on random profiles.

    The audit flags ``(i, j)`` as under-declared when zeroing ``s_j`` changed
    ``v_i`` although ``j`` was not declared, and as over-declared when ``j`` was
    declared but no sampled profile showed a dependence.
    """
    missing = [i for i, o in enumerate(instance.oracles) if o.deps is None]
    if missing:
        raise ValueError(f"agents {missing} have no declared dependency set")
    graph = DependencyGraph([frozenset(o.deps) for o in instance.oracles])
    if audit_samples <= 0:
        return graph
    n = instance.n
    rng = random.Random(seed)
    seen = [set() for _ in range(n)]
    for _ in range(audit_samples):
        s = tuple(rng.random() for _ in range(n))
        for i, oracle in enumerate(instance.oracles):
            base = oracle(s)
            for j in range(n):
                if j != i and j not in seen[i] and oracle(substitute(s, j, 0.0)) != base:
                    seen[i].add(j)
    for i in range(n):
        graph.under_declared.extend((i, j) for j in sorted(seen[i] - graph.edges[i]))
        graph.over_declared.extend((i, j) for j in sorted(graph.edges[i] - seen[i]))
    if graph.under_declared:
        log.warning("under-declared dependencies: %s", graph.under_declared)
    if graph.over_declared:
        log.info("over-declared dependencies (allowed): %s", graph.over_declared)
    return graph


def thresholds(instance: Instance, i: int, ledger: QueryLedger | None = None) -> dict[int, float]:
    """``T_j = v_j(0_i, s_-i)`` for every rival ``j``; never reads ``s_i``."""
    if instance.n < 2:
        raise ValueError("thresholds are defined for n >= 2")
    ledger = QueryLedger() if ledger is None else ledger
    bottom = substitute(instance.signals, i, 0.0)
    return {j: ledger.query(o, bottom) for j, o in enumerate(instance.oracles) if j != i}


def passes(i: int, value: float, thr: dict[int, float]) -> bool:
    return all(value > t or (value == t and i < j) for j, t in thr.items())


def candidates(instance: Instance, ledger: QueryLedger | None = None) -> frozenset[int]:
    ledger = QueryLedger() if ledger is None else ledger
    return frozenset(i for i in range(instance.n) if passes(i, instance.value(i, ledger), thresholds(instance, i, ledger)))


def candidate_probability(graph: DependencyGraph, i: int) -> float:
    top = max((len(graph.edges[j]) for j in graph.predecessors(i)), default=0)
    return 0.5 / (top + 1)


class KdepMechanism:
    name = "kdep"

    def step_function(self, instance: Instance, i: int, ledger: QueryLedger | None = None,
                      graph: DependencyGraph | None = None) -> StepFunction:
        graph = build_dependency_graph(instance) if graph is None else graph
        thr = thresholds(instance, i, ledger)
        q = candidate_probability(graph, i)
        w_star = max(thr.values())
        # the jump sits at w_star or one ulp below it, depending on the tie rule
        points = [math.nextafter(w_star, -math.inf), w_star]
        return StepFunction.from_thresholds(points, lambda w: q if passes(i, w, thr) else 0.0)

    def agent_outcome(self, instance: Instance, i: int, ledger: QueryLedger | None = None,
                      graph: DependencyGraph | None = None) -> tuple[float, float]:
        ledger = QueryLedger() if ledger is None else ledger
        if instance.n == 1:
            instance.value(0, ledger)
            return 1.0, 0.0
        graph = build_dependency_graph(instance) if graph is None else graph
        value = instance.value(i, ledger)
        thr = thresholds(instance, i, ledger)
        if not passes(i, value, thr):
            return 0.0, 0.0
        q = candidate_probability(graph, i)
        # two-level curve: 0 below the largest threshold, q at and above it
        return q, q * max(thr.values())

    def run(self, instance: Instance, ledger: QueryLedger | None = None) -> MechanismOutcome:
        ledger = QueryLedger() if ledger is None else ledger
        n = instance.n
        graph = build_dependency_graph(instance)
        if n == 1:
            x, p, cands = [1.0], [0.0], [0]
            instance.value(0, ledger)
        else:
            outcomes = [self.agent_outcome(instance, i, ledger, graph) for i in range(n)]
            x = [o[0] for o in outcomes]
            p = [o[1] for o in outcomes]
            cands = [i for i in range(n) if x[i] > 0]
        diagnostics = {
            "candidates": cands,
            "dependency_graph": graph.to_dict(),
            "k": graph.k,
            "values": instance.values(ledger),
        }
        return MechanismOutcome(x, p, ledger, diagnostics)


def allocate_kdep(instance: Instance) -> MechanismOutcome:
    out = KdepMechanism().run(instance)
    out.p = [0.0] * instance.n
    return out


def payment_kdep(instance: Instance, i: int) -> float:
    return KdepMechanism().agent_outcome(instance, i)[1]


def run(instance: Instance) -> MechanismOutcome:
    return KdepMechanism().run(instance)
