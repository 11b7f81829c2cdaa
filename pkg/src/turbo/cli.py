"""Command-line entry point. Every command writes CSV or JSON to stdout or ``--out``."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .allocator import AllocationProblem, solve_dp
from .policy import parse_policy
from .profiles import ProfileError, ProfileSet, estimate_network_cost, example_profiles_path, load_profiles
from .simulator import (
    Mode, SimConfig, factor_report, factor_report_csv, mean_accuracy, outcomes_to_csv, simulate, sweep,
)
from .traces import AccuracyTrace, NetworkModel, NetworkTrace, TraceError, VarianceModel, gen_traces
from .utility import build_curves, curves_to_csv

EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 1, 2, 3

log = logging.getLogger("turbo")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _profiles(path) -> ProfileSet:
    try:
        return load_profiles(path)
    except (ProfileError, OSError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _acc_trace(path, profiles: ProfileSet) -> AccuracyTrace:
    if path is None:
        # deterministic synthetic trace when none is supplied
        return gen_traces(profiles, seed=0, scenarios=10, frames=100)[0]
    try:
        return AccuracyTrace.load(path)
    except (TraceError, OSError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _net_trace(path) -> NetworkTrace:
    try:
        return NetworkTrace.load(path)
    except (TraceError, OSError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _axis(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:count`` (inclusive, evenly spaced)."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            if int(n) < 1:
                raise ValueError
            return [float(x) for x in np.linspace(float(lo), float(hi), int(n))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad axis {text!r}; use a,b,c or start:stop:count") from None


def _sim_config(args) -> SimConfig:
    try:
        policy = parse_policy(args.policy)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return SimConfig(
        mode=Mode(args.mode),
        policy=policy,
        realloc_period_ms=args.realloc_ms,
        frame_period_ms=args.frame_ms,
        include_downlink=args.include_downlink,
    )


def cmd_curves(args) -> int:
    profiles = _profiles(args.profiles)
    _emit(curves_to_csv(build_curves(profiles, args.rtt_ms, include_output=args.include_downlink)), args.out)
    return 0


def _table(alloc, profiles: ProfileSet) -> str:
    rows = [f"{'service':<18}{'choice':<22}{'mbps':>10}{'accuracy':>10}"]
    for s in profiles.services:
        cid = alloc.choices[s.service_id]
        shown = cid or s.local_config + " (local)"
        acc = profiles.configs[cid or s.local_config].accuracy
        rows.append(f"{s.service_id:<18}{shown:<22}{alloc.bandwidth_mbps[s.service_id]:>10.2f}{acc:>10.3f}")
    rows.append(f"total {alloc.total_bandwidth_mbps:.2f} Mbps, utility {alloc.total_utility:.4f}")
    return "\n".join(rows) + "\n"


def cmd_allocate(args) -> int:
    profiles = _profiles(args.profiles)
    curves = build_curves(profiles, args.rtt_ms, include_output=args.include_downlink)
    alloc = solve_dp(AllocationProblem(tuple(curves), args.bandwidth), args.granularity)
    if args.format == "table":
        _emit(_table(alloc, profiles), args.out)
    else:
        _emit(json.dumps(alloc.to_json(), indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    profiles = _profiles(args.profiles)
    acc = _acc_trace(args.acc_trace, profiles)
    if args.net_trace:
        net = _net_trace(args.net_trace)
    else:
        net = NetworkTrace.constant(args.bandwidth, args.rtt_ms)
    try:
        outcomes = simulate(profiles, acc, net, _sim_config(args))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(outcomes_to_csv(outcomes), args.out)
    print(f"mean accuracy {mean_accuracy(outcomes):.6f}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    profiles = _profiles(args.profiles)
    acc = _acc_trace(args.acc_trace, profiles)
    try:
        result = sweep(profiles, acc, _axis(args.bandwidths), _axis(args.rtts), _sim_config(args), args.workers)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(result.to_csv(), args.out)
    return 0


def cmd_factors(args) -> int:
    profiles = _profiles(args.profiles)
    acc = _acc_trace(args.acc_trace, profiles)
    sim = replace(_sim_config(args), mode=Mode.TURBO)
    try:
        rows = factor_report(profiles, acc, _axis(args.bandwidths), sim, args.rtt_ms)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(factor_report_csv(rows), args.out)
    return 0


def cmd_cost(args) -> int:
    try:
        dollars = estimate_network_cost(args.price_per_gb, args.mbps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(f"{dollars:.2f}\n", args.out)
    return 0


def _service_spread(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        sid, sep, val = item.partition("=")
        try:
            if not sep:
                raise ValueError
            out[sid] = float(val)
        except ValueError:
            raise UsageError(f"--service-spread expects SERVICE=VALUE, got {item!r}") from None
    return out


def cmd_gen_traces(args) -> int:
    profiles = _profiles(args.profiles)
    spread = _service_spread(args.service_spread)
    unknown = set(spread) - set(profiles.service_ids)
    if unknown:
        raise UsageError(f"--service-spread names unknown services: {', '.join(sorted(unknown))}")
    if args.scenarios <= 0 or args.frames <= 0:
        raise UsageError("--scenarios and --frames must be positive")
    variance = VarianceModel(spread=args.spread, service_spread=spread)
    network = NetworkModel(mean_mbps=args.mean_mbps, mean_rtt_ms=args.mean_rtt_ms)
    acc, net = gen_traces(profiles, args.seed, args.scenarios, args.frames, variance, network)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "accuracy.csv").write_text(acc.to_csv())
    (out / "network.csv").write_text(net.to_csv())
    print(f"wrote {out / 'accuracy.csv'} and {out / 'network.csv'}", file=sys.stderr)
    return 0


def _endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    try:
        if not sep:
            raise ValueError
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise UsageError(f"expected HOST:PORT, got {text!r}") from None


def cmd_server(args) -> int:
    from .runtime.server import server_serve

    profiles = _profiles(args.profiles)
    host, port = _endpoint(args.listen)
    try:
        asyncio.run(server_serve(host, port, profiles))
    except KeyboardInterrupt:
        return 0
    except OSError as exc:
        raise RuntimeFailure(f"cannot listen on {args.listen}: {exc}") from exc
    return 0


def _camera_sources(source: str, profiles: ProfileSet):
    """``N`` picks the first N services; a directory supplies payload files for every service."""
    if source.isdigit():
        n = int(source)
        if not 1 <= n <= len(profiles.services):
            raise UsageError(f"--cameras must be between 1 and {len(profiles.services)}")
        return profiles.service_ids[:n], None
    d = Path(source)
    files = sorted(p for p in d.iterdir() if p.is_file()) if d.is_dir() else []
    if not files:
        raise InputError(f"{source}: not a number or a directory with frame files")
    blobs = [f.read_bytes() for f in files]
    return profiles.service_ids, lambda sid, i: blobs[i % len(blobs)]


async def _run_client(args, profiles, services, frames) -> dict:
    from .runtime.client import OffloadClient, run_cameras
    from .runtime.netem import netem_shape

    shaper = netem_shape(_net_trace(args.trace)) if args.trace else None
    host, port = _endpoint(args.server)
    client = OffloadClient(profiles, host, port, services, shaper=shaper, realloc_ms=args.realloc_ms)
    await client.start()
    if not any(lane.connected for lane in client.lanes.values()):
        await client.close()
        raise RuntimeFailure(f"cannot reach server at {args.server}")
    try:
        results = await run_cameras(client, args.duration, args.fps, frames)
    finally:
        await client.close()
    if args.log:
        client.write_log(Path(args.log) / "frames.csv")
    return {
        "frames": len(results),
        "remote": sum(r.used_remote for r in results),
        "mean_solve_ms": float(np.mean(client.solve_ms)) if client.solve_ms else None,
    }


def cmd_client(args) -> int:
    profiles = _profiles(args.profiles)
    services, frames = _camera_sources(args.cameras, profiles)
    try:
        summary = asyncio.run(_run_client(args, profiles, services, frames))
    except OSError as exc:
        raise RuntimeFailure(str(exc)) from exc
    print(json.dumps(summary, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    default_profiles = str(example_profiles_path())
    p = _Parser(prog="turbo", description="Joint bandwidth allocation and model selection for offloaded perception.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *, out=True):
        sp.add_argument("--profiles", default=default_profiles, help="profile JSON (default: bundled example)")
        if out:
            sp.add_argument("--out", help="write to this file instead of stdout")

    def sim_flags(sp):
        sp.add_argument("--acc-trace", help="accuracy trace CSV (default: seeded synthetic trace)")
        sp.add_argument("--mode", choices=[m.value for m in Mode], default="turbo")
        sp.add_argument("--policy", default="global", help="global | scenario | oracle | windowed:N")
        sp.add_argument("--realloc-ms", type=float, default=500.0)
        sp.add_argument("--frame-ms", type=float, default=100.0)
        sp.add_argument("--include-downlink", action="store_true", help="count result download time")
        sp.add_argument("--rtt-ms", type=float, default=20.0)

    sp = sub.add_parser("curves", help="utility step curves as CSV")
    common(sp)
    sp.add_argument("--rtt-ms", type=float, required=True)
    sp.add_argument("--include-downlink", action="store_true")
    sp.set_defaults(func=cmd_curves)

    sp = sub.add_parser("allocate", help="one-shot optimal allocation")
    common(sp)
    sp.add_argument("--bandwidth", type=float, required=True, help="total Mbps")
    sp.add_argument("--rtt-ms", type=float, required=True)
    sp.add_argument("--granularity", type=float, default=1.0, help="DP grid in Mbps")
    sp.add_argument("--include-downlink", action="store_true")
    sp.add_argument("--format", choices=("json", "table"), default="json")
    sp.set_defaults(func=cmd_allocate)

    sp = sub.add_parser("simulate", help="trace-driven per-frame outcomes as CSV")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--net-trace", help="network trace CSV (default: constant --bandwidth/--rtt-ms)")
    sp.add_argument("--bandwidth", type=float, default=250.0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="improvement over on-vehicle across bandwidth x RTT")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--bandwidths", default="0:1000:20", help="a,b,c or start:stop:count")
    sp.add_argument("--rtts", default="10:100:10")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("factors", help="design-factor ladder per bandwidth")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--bandwidths", default="0,50,100,250,500,1000,2000")
    sp.set_defaults(func=cmd_factors)

    sp = sub.add_parser("cost", help="hourly cost of a continuous uplink")
    sp.add_argument("--price-per-gb", type=float, required=True)
    sp.add_argument("--mbps", type=float, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_cost)

    sp = sub.add_parser("gen-traces", help="seeded synthetic accuracy and network traces")
    common(sp, out=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--scenarios", type=int, default=10)
    sp.add_argument("--frames", type=int, default=100)
    sp.add_argument("--spread", type=float, default=0.04, help="accuracy scatter around profile means")
    sp.add_argument("--service-spread", action="append", metavar="SERVICE=VALUE")
    sp.add_argument("--mean-mbps", type=float, default=250.0)
    sp.add_argument("--mean-rtt-ms", type=float, default=20.0)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_gen_traces)

    sp = sub.add_parser("server", help="run the mock cloud worker")
    common(sp, out=False)
    sp.add_argument("--listen", default="127.0.0.1:7400", help="HOST:PORT")
    sp.set_defaults(func=cmd_server)

    sp = sub.add_parser("client", help="run the on-vehicle client against a server")
    common(sp, out=False)
    sp.add_argument("--server", required=True, help="HOST:PORT")
    sp.add_argument("--cameras", default="3", help="number of services, or a directory of frame files")
    sp.add_argument("--realloc-ms", type=float, default=500.0)
    sp.add_argument("--log", help="directory for the per-frame timestamp CSV")
    sp.add_argument("--duration", type=float, default=10.0, help="seconds")
    sp.add_argument("--fps", type=float, default=10.0)
    sp.add_argument("--trace", help="network trace CSV replayed by the in-process shaper")
    sp.set_defaults(func=cmd_client)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"turbo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"turbo: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeFailure as exc:
        print(f"turbo: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
