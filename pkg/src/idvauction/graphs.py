"""The "missed agent" graph behind the SOS feasibility argument, and its coloring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import Instance, QueryLedger, substitute
from .sos_mech import compute_d_set, shrink_factor


@dataclass
class FeasibilityGraph:
    """Edge ``j -> i`` when ``v_j(s) >= v_i(s)`` but ``j`` is left out of ``D_i``
    because ``v_j(0_i, s_-i) < (1 - 1/log2 n) v_i(s)``."""

    succ: list[frozenset[int]]
    values: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.succ)

    @property
    def out_degrees(self) -> list[int]:
        return [len(s) for s in self.succ]

    def edge_list(self) -> list[tuple[int, int]]:
        return [(j, i) for j, succ in enumerate(self.succ) for i in sorted(succ)]

    def to_dot(self, coloring: Coloring | None = None) -> str:
        lines = ["digraph G {"]
        for v in range(self.n):
            attrs = [f'label="{v}: {self.values[v]:.6g}"'] if self.values else [f'label="{v}"']
            if coloring is not None:
                attrs.append(f"color={coloring.color_of[v] + 1} colorscheme=set312")
            lines.append(f"  {v} [{' '.join(attrs)}];")
        lines.extend(f"  {j} -> {i};" for j, i in self.edge_list())
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass
class Coloring:
    color_of: list[int]

    @property
    def num_colors(self) -> int:
        return max(self.color_of, default=-1) + 1


def build_feasibility_graph(instance: Instance, ledger: QueryLedger | None = None) -> FeasibilityGraph:
    n = instance.n
    if n < 2:
        raise ValueError("the feasibility graph is defined for n >= 2")
    ledger = QueryLedger() if ledger is None else ledger
    f = shrink_factor(n)
    values = instance.values(ledger)
    succ: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        bottom = substitute(instance.signals, i, 0.0)
        for j, oracle in enumerate(instance.oracles):
            if j != i and values[j] >= values[i] and ledger.query(oracle, bottom) < f * values[i]:
                succ[j].add(i)
    return FeasibilityGraph([frozenset(s) for s in succ], values)


def greedy_coloring(succ: Sequence[frozenset[int] | set[int]], k: int) -> Coloring:
    """Proper coloring with at most ``2k + 1`` colors of a digraph with out-degrees <= k.

    Repeatedly peels a vertex whose remaining in+out degree is at most ``2k``
    (one always exists: there are at most ``k`` edges per vertex), then colors
    in reverse peeling order with the smallest color unused by neighbors.
    """
    n = len(succ)
    for v, out in enumerate(succ):
        if len(out) > k:
            raise ValueError(f"vertex {v} has out-degree {len(out)} > k={k}")
        if v in out:
            raise ValueError(f"self-loop at vertex {v}")
    pred: list[set[int]] = [set() for _ in range(n)]
    for v, out in enumerate(succ):
        for u in out:
            pred[u].add(v)
    degree = [len(succ[v]) + len(pred[v]) for v in range(n)]
    removed = [False] * n
    order = []
    for _ in range(n):
        v = next((u for u in range(n) if not removed[u] and degree[u] <= 2 * k), None)
        if v is None:
            raise RuntimeError("no vertex of degree <= 2k left; out-degree bound violated")
        removed[v] = True
        order.append(v)
        for u in succ[v]:
            degree[u] -= 1
        for u in pred[v]:
            degree[u] -= 1
    color = [-1] * n
    for v in reversed(order):
        taken = {color[u] for u in succ[v]} | {color[u] for u in pred[v]}
        color[v] = next(c for c in range(2 * k + 2) if c not in taken)
    return Coloring(color)


def is_proper(succ: Sequence[frozenset[int] | set[int]], coloring: Coloring) -> bool:
    return all(coloring.color_of[j] != coloring.color_of[i] for j, out in enumerate(succ) for i in out)


@dataclass
class ChiReport:
    max_outdeg: int
    colors_used: int | None
    bound: float
    outdeg_ok: bool
    counterexample: dict | None = None

    def to_dict(self) -> dict:
        return {
            "max_outdeg": self.max_outdeg,
            "colors_used": self.colors_used,
            "bound": self.bound,
            "outdeg_ok": self.outdeg_ok,
            "counterexample": self.counterexample,
        }


def verify_chi_bound(instance: Instance, d: float = 1.0, ledger: QueryLedger | None = None) -> tuple[ChiReport, FeasibilityGraph, Coloring | None]:
    """Check that the missed-agent graph has out-degree <= d log2 n and color it.

    A violating vertex is returned as a counterexample (the instance cannot be
    (d-)SOS) instead of raising.
    """
    graph = build_feasibility_graph(instance, ledger)
    n = graph.n
    k = math.floor(d * math.log2(n))
    bound = 2 * d * math.log2(n) + 1
    degs = graph.out_degrees
    worst = max(range(n), key=degs.__getitem__)
    if degs[worst] > k:
        cex = {"vertex": worst, "out_degree": degs[worst], "limit": k, "targets": sorted(graph.succ[worst])}
        return ChiReport(degs[worst], None, bound, False, cex), graph, None
    coloring = greedy_coloring(graph.succ, k)
    return ChiReport(degs[worst], coloring.num_colors, bound, True), graph, coloring


def color_class_chains(instance: Instance, coloring: Coloring, ledger: QueryLedger | None = None) -> list[tuple[int, int]]:
    """Pairs ``(higher, lower)`` in one color class where the higher-valued agent
    is missing from the lower one's D set. Empty for a proper coloring."""
    ledger = QueryLedger() if ledger is None else ledger
    values = instance.values(ledger)
    failures = []
    for c in range(coloring.num_colors):
        members = sorted((v for v in range(instance.n) if coloring.color_of[v] == c), key=lambda v: (-values[v], v))
        for pos, i in enumerate(members):
            d_set = compute_d_set(instance, i, values[i], ledger).members
            failures.extend((l, i) for l in members[:pos] if l not in d_set)
    return failures
