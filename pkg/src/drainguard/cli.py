"""Command line front end.

Subcommands map one-to-one onto the studies in ``scenarios``:

* ``parametrize``: derived budget and limiter parameters
* ``severity``: exhaustion times without rate limitation
* ``detect``: year-long detection study at the limiter level
* ``latency``: request transfer times on the provider's radio
* ``injection-drain``: verification energy a garbage stream forces
* ``run``: one full-stack simulation with radios and handshakes

All output is a pure function of the configuration and flags: rerunning
a command overwrites files under ``--out`` byte for byte.  ``--check``
compares results against the reference deployment's expected envelopes
and exits 3 on the first kind of disagreement; a bad configuration file
exits 2.
"""

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, ScenarioConfig, load_config
from .limiter import Algorithm
from .protocols import Protocol
from .scenarios import (
    DetectionSpec,
    build_topology_spec,
    injection_csv,
    injection_drain,
    latency_csv,
    latency_table,
    parameter_table,
    run_detection,
    severity_csv,
    severity_grid,
    summarize_detection,
)
from .simnet import ChainedBursts, Topology, spawn_attack, spawn_benign_traffic


def _write(out_dir: Path, name: str, text: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)


def _finish_checks(args, failures: List[str], total: int) -> int:
    if not args.check:
        return 0
    for message in failures:
        print(f"check failed: {message}", file=sys.stderr)
    if failures:
        return 3
    print(f"checks passed ({total})", file=sys.stderr)
    return 0


def _expect(failures: List[str], ok: bool, message: str) -> None:
    if not ok:
        failures.append(message)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_parametrize(cfg: ScenarioConfig, args) -> int:
    table = parameter_table(cfg)
    sys.stdout.write(table.render())
    if args.out:
        _write(args.out, "parametrize.csv", table.csv())
    failures: List[str] = []
    _expect(
        failures,
        2248.0 <= table.rx_baseline_j <= 2293.0,
        f"radio baseline {table.rx_baseline_j:.3f} J outside [2248, 2293]",
    )
    _expect(
        failures,
        447.0 <= table.service_budget_j <= 457.0,
        f"service budget {table.service_budget_j:.3f} J outside [447, 457]",
    )
    _expect(
        failures,
        12.26e-3 <= table.depletion_rate_j_per_day <= 12.51e-3,
        f"depletion rate {table.depletion_rate_j_per_day:.6g} J/day outside "
        "[12.26e-3, 12.51e-3]",
    )
    _expect(
        failures,
        0.4009 <= table.bucket_threshold_j <= 0.4090,
        f"bucket threshold {table.bucket_threshold_j:.6g} J outside [0.4009, 0.4090]",
    )
    _expect(
        failures,
        abs(table.ewma_threshold_j - 9.332e-6) <= 0.05 * 9.332e-6,
        f"ewma threshold {table.ewma_threshold_j:.6g} J not within 5% of 9.332e-6",
    )
    return _finish_checks(args, failures, 5)


def cmd_severity(cfg: ScenarioConfig, args) -> int:
    rows = severity_grid(cfg)
    sys.stdout.write("requests  window_s  drain_j_per_day  days_to_exhaustion\n")
    for row in rows:
        sys.stdout.write(
            f"{row.burst_requests:>8}  {row.burst_window_s:>8g}  "
            f"{row.drain_j_per_day:>15.6g}  {row.days_to_exhaustion:>18.6g}\n"
        )
    if args.out:
        _write(args.out, "severity.csv", severity_csv(rows))
    failures: List[str] = []
    by_burst = {(row.burst_requests, row.burst_window_s): row for row in rows}
    mild = by_burst.get((10, 600.0))
    harsh = by_burst.get((1000, 600.0))
    _expect(failures, mild is not None and 36.0 <= mild.days_to_exhaustion <= 54.0,
            "tolerated-pace bursts should exhaust in 45 days +/- 20%")
    _expect(failures, harsh is not None and harsh.days_to_exhaustion < 1.0,
            "1000-request bursts should exhaust within a day")
    return _finish_checks(args, failures, 2)


def _detection_spec(cfg: ScenarioConfig) -> DetectionSpec:
    if isinstance(cfg.attack, ChainedBursts):
        return DetectionSpec(
            attack_start_day=cfg.attack.start_day,
            attacker_ids=(cfg.attack.requester_id,),
            attack_requests=cfg.attack.requests,
            attack_window_seconds=cfg.attack.window_seconds,
        )
    # default study: the highest-numbered requester turns hostile
    return DetectionSpec(attacker_ids=(cfg.deployment.requesters,))


def cmd_detect(cfg: ScenarioConfig, args) -> int:
    spec = _detection_spec(cfg)
    seeds = args.seeds if args.seeds else [cfg.seed]
    algorithms = [cfg.algorithm]
    if args.check:
        algorithms = [Algorithm.LEAKY_BUCKET, Algorithm.EWMA]
    summaries = {}
    for algorithm in algorithms:
        results = [run_detection(cfg, algorithm, seed, spec) for seed in seeds]
        summaries[algorithm] = summarize_detection(results)
        sys.stdout.write(summaries[algorithm].render())
        if args.out:
            for result in results:
                _write(
                    args.out,
                    f"detect_{algorithm.value}_seed{result.seed}.csv",
                    result.csv(),
                )
    failures: List[str] = []
    if args.check:
        days = cfg.days if spec.days is None else spec.days
        span = days - spec.attack_start_day
        rates = {
            algorithm: summary.attack_served_per_seed / span
            for algorithm, summary in summaries.items()
        }
        gap = abs(rates[Algorithm.LEAKY_BUCKET] - rates[Algorithm.EWMA])
        _expect(
            failures,
            gap <= 1.0,
            f"attack-phase served rates disagree by {gap:.3f} requests/day",
        )
    return _finish_checks(args, failures, 1)


def cmd_latency(cfg: ScenarioConfig, args) -> int:
    rows = latency_table(cfg)
    sys.stdout.write("scheme  request_bytes  seconds\n")
    for row in rows:
        sys.stdout.write(f"{row.scheme:<6}  {row.request_bytes:>13}  {row.seconds:.6g}\n")
    if args.out:
        _write(args.out, "latency.csv", latency_csv(rows))
    failures: List[str] = []
    by_scheme = {row.scheme: row for row in rows}
    _expect(
        failures,
        25.0 <= by_scheme["asym"].seconds <= 28.0,
        f"direct-baseline request takes {by_scheme['asym'].seconds:.3f} s, "
        "outside [25, 28]",
    )
    _expect(
        failures,
        by_scheme["p1"].seconds <= 1.0,
        f"proxy request takes {by_scheme['p1'].seconds:.3f} s, above 1 s",
    )
    return _finish_checks(args, failures, 2)


def cmd_injection_drain(cfg: ScenarioConfig, args) -> int:
    protocols = [cfg.protocol] if args.protocol else list(Protocol)
    rows = [
        injection_drain(cfg, protocol, args.rate, float(cfg.days))
        for protocol in protocols
    ]
    for row in rows:
        sys.stdout.write(row.render())
    if args.out:
        _write(args.out, "injection.csv", injection_csv(rows))
    failures: List[str] = []
    if args.check:
        # reference numbers: one garbage message per second for a year
        proxy = injection_drain(cfg, Protocol.PROXY, 1.0, 365.0)
        ticket = injection_drain(cfg, Protocol.TICKET, 1.0, 365.0)
        _expect(
            failures,
            math.isclose(proxy.drained_j, 38.2, rel_tol=0.01),
            f"proxy-scheme drain {proxy.drained_j:.3f} J not within 1% of 38.2 J",
        )
        _expect(
            failures,
            math.isclose(ticket.drained_j, 73.8, rel_tol=0.01),
            f"ticket-scheme drain {ticket.drained_j:.3f} J not within 1% of 73.8 J",
        )
    return _finish_checks(args, failures, 2)


def cmd_run(cfg: ScenarioConfig, args) -> int:
    topology = Topology(build_topology_spec(cfg), cfg.seed)
    spawn_benign_traffic(
        topology, cfg.days, cfg.request_probability, cfg.burst.service_id
    )
    if cfg.attack is not None:
        spawn_attack(topology, cfg.attack)
    report = topology.run(cfg.days)
    sys.stdout.write(report.summary() + "\n")
    if args.out:
        _write(args.out, "grants.csv", report.grants_csv())
        _write(args.out, "energy.csv", report.energy_csv())
        _write(args.out, "limiter.csv", report.limiter_csv())
        _write(args.out, "summary.txt", report.summary() + "\n")
    failures: List[str] = []
    if args.check:
        provider = topology.providers[cfg.provider_id]
        serves = provider.outcomes.get("serve", 0)
        verified = sum(
            count
            for outcome, count in provider.outcomes.items()
            if outcome != "malformed"
        )
        expected = (
            serves * cfg.deployment.service_energy(cfg.burst.service_id)
            + verified * cfg.verify_energy_j
        )
        drained = provider.core.ledger.drained_j
        _expect(
            failures,
            math.isclose(drained, expected, rel_tol=1e-9, abs_tol=1e-12),
            f"provider drain {drained!r} J does not decompose into "
            f"{serves} serves and {verified} verifications",
        )
        _expect(
            failures,
            not provider.core.ledger.exhausted,
            "provider exhausted its service budget",
        )
    return _finish_checks(args, failures, 2)


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=Path, default=None, metavar="PATH",
        help="scenario file (TOML); defaults to the reference deployment",
    )
    common.add_argument(
        "--out", type=Path, default=None, metavar="DIR",
        help="directory for CSV output; reruns overwrite byte-identically",
    )
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument(
        "--check", action="store_true",
        help="verify results against the reference envelopes; exit 3 on violation",
    )

    parser = argparse.ArgumentParser(
        prog="drainguard",
        description="Rate limitation and lightweight authentication against "
        "battery exhaustion of constrained providers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "parametrize", parents=[common],
        help="print the derived budget and limiter parameters",
    )
    p.set_defaults(handler=cmd_parametrize)

    p = sub.add_parser(
        "severity", parents=[common],
        help="exhaustion times under chained bursts without rate limitation",
    )
    p.set_defaults(handler=cmd_severity)

    p = sub.add_parser(
        "detect", parents=[common],
        help="year-long mixed-traffic study against the rate limiter",
    )
    p.add_argument(
        "--limiter", choices=[algorithm.value for algorithm in Algorithm],
        default=None, help="limiter algorithm (default: from config)",
    )
    p.add_argument(
        "--seeds", type=int, nargs="+", default=None, metavar="N",
        help="run once per seed and aggregate",
    )
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser(
        "latency", parents=[common],
        help="request transfer times over the provider's radio",
    )
    p.set_defaults(handler=cmd_latency)

    p = sub.add_parser(
        "injection-drain", parents=[common],
        help="verification energy a sustained garbage stream drains",
    )
    p.add_argument(
        "--protocol", choices=[protocol.value for protocol in Protocol],
        default=None, help="single scheme (default: all three)",
    )
    p.add_argument(
        "--rate", type=float, default=1.0, metavar="PER_SECOND",
        help="garbage datagrams per second (default 1.0)",
    )
    p.set_defaults(handler=cmd_injection_drain)

    p = sub.add_parser(
        "run", parents=[common],
        help="one full-stack simulation: radios, handshakes, limiter, energy",
    )
    p.add_argument(
        "--protocol", choices=[protocol.value for protocol in Protocol],
        default=None, help="authentication scheme (default: from config)",
    )
    p.add_argument(
        "--limiter", choices=[algorithm.value for algorithm in Algorithm],
        default=None, help="limiter algorithm (default: from config)",
    )
    p.set_defaults(handler=cmd_run)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if getattr(args, "protocol", None):
            cfg = replace(cfg, protocol=Protocol(args.protocol))
        if getattr(args, "limiter", None):
            cfg = replace(cfg, algorithm=Algorithm(args.limiter))
        return args.handler(cfg, args)
    except (ConfigError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
