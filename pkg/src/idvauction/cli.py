"""Command-line entry point.

Exit codes: 0 success, 1 a checked property failed, 2 bad usage or input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .core import Instance, dumps
from .experiment import AGENT_GENERATORS, ExperimentConfig, bench, generate, run_experiment
from .graphs import verify_chi_bound
from .valuations import FIXTURES, fixture
from .verify import MECHANISMS, check_all, get_mechanism

log = logging.getLogger("idvauction")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_instances(path: Path) -> list[Instance]:
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    if not files:
        raise UsageError(f"no instance files in {path}")
    instances = []
    for f in files:
        data = json.loads(f.read_text())
        items = data if isinstance(data, list) else data.get("instances", [data])
        instances.extend(Instance.from_dict(item) for item in items)
    return instances


def _fixture_kwargs(args: argparse.Namespace, name: str, alpha: float | None) -> dict[str, Any]:
    kw: dict[str, Any] = {}
    if alpha is not None:
        kw["alpha"] = alpha
    for key in ("n", "k", "case", "zeroed"):
        val = getattr(args, key, None)
        if val is not None:
            kw[key] = val
    if name in ("sc_case1", "sc_case2", "kdep_lb1", "kdep_lb2"):
        kw.setdefault("n", 4)
    if name in ("kdep_lb1", "kdep_lb2"):
        kw.setdefault("k", 1)
    return kw


def _load(args: argparse.Namespace) -> list[tuple[dict[str, Any], Instance]]:
    """``(label, instance)`` pairs from ``--instance(s)`` or ``--fixture``."""
    path = getattr(args, "instance", None) or getattr(args, "instances", None)
    if path and args.fixture:
        raise UsageError("give either an instance path or --fixture, not both")
    if path:
        return [({"source": str(path), "index": i}, inst) for i, inst in enumerate(_read_instances(Path(path)))]
    if not args.fixture:
        raise UsageError("an instance path or --fixture is required")
    alphas = args.alpha or [None]
    pairs = []
    for alpha in alphas:
        kw = _fixture_kwargs(args, args.fixture, alpha)
        try:
            inst = fixture(args.fixture, **kw)
        except TypeError as exc:
            raise UsageError(f"fixture {args.fixture}: {exc}") from None
        pairs.append(({"fixture": args.fixture, **kw}, inst))
    return pairs


def _add_input(p: argparse.ArgumentParser, plural: bool = False) -> None:
    if plural:
        p.add_argument("--instances", help="directory of instance JSON files (or one file)")
    else:
        p.add_argument("--instance", help="instance JSON file")
    p.add_argument("--fixture", choices=sorted(FIXTURES))
    p.add_argument("--alpha", type=float, nargs="+", help="carl_daphne informativeness; several values sweep")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--case", type=int)
    p.add_argument("--zeroed", type=int)


def cmd_generate(args: argparse.Namespace) -> int:
    config = ExperimentConfig(seed=args.seed, n_list=tuple(args.n_list), families=tuple(args.families),
                              trials=args.trials, k=args.k, d=args.d)
    instances = generate(config)
    if args.out:
        root = Path(args.out)
        root.mkdir(parents=True, exist_ok=True)
        for (n, fam, t), inst in zip(config.cells(), instances):
            (root / f"{fam}_n{n:03d}_t{t:04d}.json").write_text(inst.to_json())
        log.info("wrote %d instances to %s", len(instances), root)
    else:
        sys.stdout.write(dumps([inst.to_dict() for inst in instances]))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    mech = get_mechanism(args.mechanism_name, getattr(args, "chi", None), getattr(args, "d", 1.0))
    runs = []
    for label, inst in _load(args):
        out = mech.run(inst)
        runs.append({"input": label, "mechanism": mech.name, **out.to_dict()})
    _emit(dumps(runs[0] if len(runs) == 1 else {"runs": runs}), args.out)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    mech = get_mechanism(args.mechanism, args.chi, args.d)
    instances = [inst for _, inst in _load(args)]
    reports = check_all(instances, mech)
    passed = all(r.passed for r in reports.values())
    payload = {"mechanism": args.mechanism, "instances": len(instances), "passed": passed,
               "properties": {k: r.to_dict() for k, r in reports.items()}}
    _emit(dumps(payload), args.out)
    for name, r in reports.items():
        log.info("%-16s %s (worst %.3g over %d checks)", name, "pass" if r.passed else "FAIL", r.worst_violation, r.checked)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_graph(args: argparse.Namespace) -> int:
    pairs = _load(args)
    if len(pairs) != 1:
        raise UsageError("graph inspect takes exactly one instance")
    report, graph, coloring = verify_chi_bound(pairs[0][1], args.d)
    dot = graph.to_dot(coloring)
    if args.out:
        Path(args.out).write_text(dot)
    else:
        sys.stdout.write(dot)
    sys.stdout.write(dumps(report.to_dict()))
    return EXIT_OK if report.outdeg_ok else EXIT_FAIL


def cmd_experiment(args: argparse.Namespace) -> int:
    config = ExperimentConfig(seed=args.seed, n_list=tuple(args.n_list), families=tuple(args.families),
                              trials=args.trials, mechanism=args.mechanism, chi_override=args.chi,
                              d=args.d, k=args.k, lottery_samples=args.lottery_samples, jobs=args.jobs)
    report = run_experiment(config)
    if args.out:
        stem = Path(args.out)
        stem.with_suffix(".csv").write_text(report.to_csv())
        stem.with_suffix(".json").write_text(dumps(report.to_dict()))
    else:
        sys.stdout.write(report.to_csv())
    for agg in report.aggregates:
        log.info("%s n=%d min ratio %.4g (margin %.3g)", agg["mechanism"], agg["n"], agg["min_ratio"], agg["min_margin"])
    return EXIT_OK if report.all_hold else EXIT_FAIL


def cmd_bench(args: argparse.Namespace) -> int:
    rows = bench(tuple(args.n_list), args.trials, args.seed)
    _emit(dumps(rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idvauction", description="Interdependent-value auction mechanisms.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p: argparse.ArgumentParser, with_mech: bool) -> None:
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n", dest="n_list", type=int, nargs="+", default=[2, 4, 8, 16])
        p.add_argument("--families", nargs="+", default=["weighted_sum"], choices=sorted(AGENT_GENERATORS))
        p.add_argument("--trials", type=int, default=10)
        p.add_argument("--k", type=int, default=2)
        p.add_argument("--d", type=float, default=1.0)
        if with_mech:
            p.add_argument("--mechanism", choices=["sos", "kdep", "both"], default="both")
            p.add_argument("--chi", type=float)
            p.add_argument("--lottery-samples", type=int, default=0)
            p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out")

    p = sub.add_parser("generate", help="write seeded random instances")
    experiment_flags(p, with_mech=False)
    p.set_defaults(func=cmd_generate)

    for name in ("sos", "kdep"):
        group = sub.add_parser(name, help=f"{name} mechanism")
        gsub = group.add_subparsers(dest="action", required=True)
        p = gsub.add_parser("run", help="allocation, payments and diagnostics")
        _add_input(p)
        if name == "sos":
            p.add_argument("--chi", type=float)
            p.add_argument("--d", type=float, default=1.0)
        p.add_argument("--out")
        p.set_defaults(func=cmd_run, mechanism_name=name)

    group = sub.add_parser("verify", help="property checks")
    gsub = group.add_subparsers(dest="action", required=True)
    p = gsub.add_parser("all", help="feasibility, EPIC, IR, characterization, welfare, queries")
    _add_input(p, plural=True)
    p.add_argument("--mechanism", choices=sorted(MECHANISMS), default="sos")
    p.add_argument("--chi", type=float)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    group = sub.add_parser("graph", help="missed-agent graph")
    gsub = group.add_subparsers(dest="action", required=True)
    p = gsub.add_parser("inspect", help="DOT graph plus out-degree and coloring summary")
    _add_input(p)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--out", help="write the DOT graph here")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("experiment", help="seeded batch run with CSV/JSON report")
    experiment_flags(p, with_mech=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench", help="time both mechanisms")
    p.add_argument("--n", dest="n_list", type=int, nargs="+", default=[2, 8, 32, 128])
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
