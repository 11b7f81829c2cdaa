"""Trace-driven evaluation of allocation strategies.

Frames advance at ``frame_period_ms`` across the scenarios of an accuracy
trace, one continuous clock over the network trace. Allocations are decided
from the network sample taken at the last reallocation boundary. Each
frame's upload is then checked against the network actually in effect at
capture time. Scores always use the trace's true per-frame accuracy of
whichever config delivered.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .allocator import Allocation, AllocationProblem, realloc_decision
from .policy import GlobalStatic, PolicyKind, curves_for_anchor
from .profiles import ProfileSet
from .traces import AccuracyTrace, NetworkTrace
from .utility import best_step, required_bandwidth_mbps


class Mode(str, enum.Enum):
    B0 = "b0"  # on-vehicle only
    B1 = "b1"  # one fixed cloud config per service, fair share
    B2 = "b2"  # fixed compressed cloud config per service, fair share
    FAIR_SHARE = "fair_share"  # best step that fits an equal share
    TURBO = "turbo"


@dataclass(frozen=True)
class SimConfig:
    mode: Mode = Mode.TURBO
    policy: PolicyKind = field(default_factory=GlobalStatic)
    realloc_period_ms: float = 500.0
    frame_period_ms: float = 100.0
    include_downlink: bool = False
    # B1/B2 per-service cloud config; defaults to the profile's baselines entry
    baseline_configs: dict[str, str] | None = None
    granularity_mbps: float = 1.0
    hysteresis: float = 0.0

    def __post_init__(self):
        if self.realloc_period_ms <= 0 or self.frame_period_ms <= 0:
            raise ValueError("periods must be positive")


@dataclass(frozen=True)
class ServiceOutcome:
    service_id: str
    effective_config: str
    met_slo: bool  # a remote result arrived within the SLO
    achieved_accuracy: float
    allocated_bandwidth_mbps: float
    attempted_config: str | None = None


@dataclass(frozen=True)
class FrameOutcome:
    scenario: str
    frame_idx: int
    services: dict[str, ServiceOutcome]


@dataclass(frozen=True)
class SweepResult:
    bandwidths: tuple[float, ...]
    rtts: tuple[float, ...]
    improvement_pt: np.ndarray  # shape (len(bandwidths), len(rtts))

    def cell(self, bandwidth: float, rtt: float) -> float:
        return float(self.improvement_pt[self.bandwidths.index(bandwidth), self.rtts.index(rtt)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for i, bw in enumerate(self.bandwidths):
            for j, rtt in enumerate(self.rtts):
                w.writerow([f"{bw:g}", f"{rtt:g}", f"{self.improvement_pt[i, j]:.6f}"])
        return buf.getvalue()


OUTCOME_HEADER = ("scenario_id", "frame_idx", "service_id", "effective_config", "met_slo", "accuracy", "alloc_mbps")
SWEEP_HEADER = ("bandwidth_mbps", "rtt_ms", "mean_improvement_pt")


def _baseline_map(profiles: ProfileSet, sim: SimConfig) -> dict[str, str]:
    mapping = sim.baseline_configs
    if mapping is None:
        mapping = profiles.baselines.get(sim.mode.value)
        if mapping is None:
            raise ValueError(f"profile has no '{sim.mode.value}' baseline and none was given")
    for sid, cid in mapping.items():
        profiles.service(sid)
        if cid not in profiles.configs or not profiles.configs[cid].is_cloud:
            raise ValueError(f"baseline config {cid!r} for {sid} is not a cloud config")
    return dict(mapping)


class _Planner:
    """Decides, per frame, which cloud config each service attempts and at what rate."""

    def __init__(self, profiles: ProfileSet, trace: AccuracyTrace, sim: SimConfig):
        self.profiles = profiles
        self.trace = trace
        self.sim = sim
        self.prev: Allocation | None = None
        self._curves: dict = {}
        self._solved: dict = {}
        if sim.mode in (Mode.B1, Mode.B2):
            self.fixed = _baseline_map(profiles, sim)

    def curves(self, anchor, rtt_ms):
        key = (anchor, rtt_ms)
        if key not in self._curves:
            self._curves[key] = curves_for_anchor(
                anchor, self.trace, self.profiles, rtt_ms, self.sim.include_downlink
            )
        return self._curves[key]

    def plan(self, anchor, est_bw: float, est_rtt: float, now_bw: float):
        """Return {service_id: (config_id or None, bandwidth_mbps)}."""
        mode = self.sim.mode
        ids = self.profiles.service_ids
        if mode is Mode.B0:
            return {s: (None, 0.0) for s in ids}
        if mode in (Mode.B1, Mode.B2):
            k = len(self.fixed)
            share = now_bw / k if k else 0.0
            return {s: (self.fixed.get(s), share if s in self.fixed else 0.0) for s in ids}
        curves = self.curves(anchor, est_rtt)
        if mode is Mode.FAIR_SHARE:
            contenders = [c for c in curves if c.steps]
            share = est_bw / len(contenders) if contenders else 0.0
            out = {s: (None, 0.0) for s in ids}
            for c in contenders:
                step = best_step(c, share)
                out[c.service_id] = (step.config_id if step else None, share)
            return out
        key = (anchor, est_bw, est_rtt)
        if self.sim.hysteresis == 0.0 and key in self._solved:
            alloc = self._solved[key]
        else:
            problem = AllocationProblem(tuple(curves), est_bw)
            alloc = realloc_decision(self.prev, problem, self.sim.hysteresis, self.sim.granularity_mbps)
            self._solved[key] = alloc
        self.prev = alloc
        return {s: (alloc.choices[s], alloc.bandwidth_mbps[s]) for s in ids}


def simulate(
    profiles: ProfileSet,
    acc_trace: AccuracyTrace,
    net_trace: NetworkTrace,
    sim: SimConfig | None = None,
) -> list[FrameOutcome]:
    sim = sim or SimConfig()
    planner = _Planner(profiles, acc_trace, sim)
    services = profiles.services
    outcomes: list[FrameOutcome] = []
    next_realloc = 0.0
    est = net_trace.at(0.0)
    plan = None
    last_anchor = None
    k = 0
    for scenario, frames in acc_trace.scenarios.items():
        for frame in frames:
            t_ms = k * sim.frame_period_ms
            k += 1
            now = net_trace.at(t_ms)
            anchor = sim.policy.anchor(scenario, frame)
            replan = plan is None or anchor != last_anchor or sim.mode in (Mode.B1, Mode.B2)
            if t_ms >= next_realloc:
                est = now
                while next_realloc <= t_ms:
                    next_realloc += sim.realloc_period_ms
                replan = True
            if replan:
                plan = planner.plan(anchor, est.bandwidth_mbps, est.rtt_ms, now.bandwidth_mbps)
                last_anchor = anchor
            requested = sum(bw for cid, bw in plan.values() if cid is not None)
            # oversubscribed links shrink every flow proportionally
            scale = 1.0 if requested <= now.bandwidth_mbps or requested == 0 else now.bandwidth_mbps / requested
            per_service = {}
            for svc in services:
                cid, bw = plan[svc.service_id]
                met = False
                if cid is not None:
                    need = required_bandwidth_mbps(
                        profiles.configs[cid], svc.slo_ms, now.rtt_ms, sim.include_downlink
                    )
                    met = need is not None and bw * scale >= need * (1 - 1e-12)
                effective = cid if met else svc.local_config
                per_service[svc.service_id] = ServiceOutcome(
                    svc.service_id,
                    effective,
                    met,
                    acc_trace.get(scenario, frame, svc.service_id, effective),
                    bw if cid is not None else 0.0,
                    cid,
                )
            outcomes.append(FrameOutcome(scenario, frame, per_service))
    return outcomes


def mean_accuracy(outcomes: list[FrameOutcome]) -> float:
    values = [o.achieved_accuracy for fo in outcomes for o in fo.services.values()]
    return math.fsum(values) / len(values)


def outcomes_to_csv(outcomes: list[FrameOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OUTCOME_HEADER)
    for fo in outcomes:
        for o in fo.services.values():
            w.writerow([
                fo.scenario, fo.frame_idx, o.service_id, o.effective_config,
                int(o.met_slo), f"{o.achieved_accuracy:.6f}", f"{o.allocated_bandwidth_mbps:.6f}",
            ])
    return buf.getvalue()


def _cell(args):
    profiles, acc_trace, bw, rtt, sim = args
    return mean_accuracy(simulate(profiles, acc_trace, NetworkTrace.constant(bw, rtt), sim))


def sweep(
    profiles: ProfileSet,
    acc_trace: AccuracyTrace,
    bandwidths,
    rtts,
    sim: SimConfig | None = None,
    workers: int = 1,
) -> SweepResult:
    """Mean improvement over on-vehicle only, in percentage points, per (bandwidth, RTT)."""
    sim = sim or SimConfig()
    bandwidths = tuple(float(b) for b in bandwidths)
    rtts = tuple(float(r) for r in rtts)
    if not bandwidths or not rtts:
        raise ValueError("sweep axes must be non-empty")
    base = mean_accuracy(
        simulate(profiles, acc_trace, NetworkTrace.constant(0.0, 0.0), replace(sim, mode=Mode.B0))
    )
    jobs = [(profiles, acc_trace, bw, rtt, sim) for bw in bandwidths for rtt in rtts]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            means = list(pool.map(_cell, jobs))
    else:
        means = [_cell(j) for j in jobs]
    grid = (np.asarray(means).reshape(len(bandwidths), len(rtts)) - base) * 100.0
    return SweepResult(bandwidths, rtts, grid)


FACTOR_COLUMNS = ("bandwidth_mbps", "b0", "single_model", "d1_multi_model", "d2_ilp", "d3_compression")


def factor_report(
    profiles: ProfileSet,
    acc_trace: AccuracyTrace,
    bandwidths,
    sim: SimConfig | None = None,
    rtt_ms: float = 20.0,
) -> list[dict[str, float]]:
    """Mean accuracy per bandwidth for the incremental design ladder.

    single_model: one raw-image cloud config per service under fair share.
    d1: all uncompressed configs, each service takes the best that fits its fair share.
    d2: uncompressed configs, optimal allocation. d3: everything, optimal allocation.
    """
    sim = sim or SimConfig()
    uncompressed = profiles.restrict(lambda c: not c.pipeline.compressed)
    rows = []
    for bw in bandwidths:
        net = NetworkTrace.constant(float(bw), rtt_ms)

        def run(p, mode, **kw):
            return mean_accuracy(simulate(p, acc_trace, net, replace(sim, mode=mode, **kw)))

        rows.append({
            "bandwidth_mbps": float(bw),
            "b0": run(profiles, Mode.B0),
            "single_model": run(profiles, Mode.B1),
            "d1_multi_model": run(uncompressed, Mode.FAIR_SHARE),
            "d2_ilp": run(uncompressed, Mode.TURBO),
            "d3_compression": run(profiles, Mode.TURBO),
        })
    return rows


def factor_report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FACTOR_COLUMNS)
    for r in rows:
        w.writerow([f"{r['bandwidth_mbps']:g}"] + [f"{r[c]:.6f}" for c in FACTOR_COLUMNS[1:]])
    return buf.getvalue()
