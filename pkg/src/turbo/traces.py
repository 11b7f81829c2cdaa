"""Network and per-frame accuracy traces, their CSV forms, and a synthetic generator."""

from __future__ import annotations

import bisect
import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .profiles import ProfileSet


class TraceError(ValueError):
    pass


NET_HEADER = ("t_ms", "bandwidth_mbps", "rtt_ms")
ACC_HEADER = ("scenario_id", "frame_idx", "service_id", "config_id", "accuracy")


@dataclass(frozen=True)
class NetSample:
    t_ms: float
    bandwidth_mbps: float
    rtt_ms: float


class NetworkTrace:
    """Step-hold time series of (bandwidth, RTT)."""

    def __init__(self, samples):
        self.samples = tuple(NetSample(*map(float, s)) if not isinstance(s, NetSample) else s for s in samples)
        if not self.samples:
            raise TraceError("network trace is empty")
        for a, b in zip(self.samples, self.samples[1:]):
            if not b.t_ms > a.t_ms:
                raise TraceError(f"timestamps must strictly increase ({a.t_ms} -> {b.t_ms})")
        for s in self.samples:
            if s.bandwidth_mbps < 0 or s.rtt_ms < 0:
                raise TraceError(f"negative value at t={s.t_ms}")
        self._times = [s.t_ms for s in self.samples]

    @classmethod
    def constant(cls, bandwidth_mbps: float, rtt_ms: float) -> NetworkTrace:
        return cls([NetSample(0.0, bandwidth_mbps, rtt_ms)])

    def at(self, t_ms: float) -> NetSample:
        i = bisect.bisect_right(self._times, t_ms) - 1
        return self.samples[max(i, 0)]

    def next_change(self, t_ms: float) -> float | None:
        i = bisect.bisect_right(self._times, t_ms)
        return self._times[i] if i < len(self._times) else None

    def __len__(self):
        return len(self.samples)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(NET_HEADER)
        for s in self.samples:
            w.writerow([f"{s.t_ms:g}", f"{s.bandwidth_mbps:.6g}", f"{s.rtt_ms:.6g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> NetworkTrace:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != NET_HEADER:
            raise TraceError(f"network trace header must be {','.join(NET_HEADER)}")
        try:
            return cls([NetSample(float(r[0]), float(r[1]), float(r[2])) for r in rows[1:] if r])
        except (ValueError, IndexError) as exc:
            raise TraceError(f"malformed network trace row: {exc}") from exc

    @classmethod
    def load(cls, path) -> NetworkTrace:
        return cls.from_csv(Path(path).read_text())


@dataclass(frozen=True)
class AccuracyRecord:
    scenario_id: str
    frame_idx: int
    service_id: str
    config_id: str
    accuracy: float


class AccuracyTrace:
    def __init__(self, records):
        self.records = tuple(records)
        if not self.records:
            raise TraceError("accuracy trace is empty")
        index: dict[tuple[str, int, str, str], float] = {}
        for r in self.records:
            if not 0.0 <= r.accuracy <= 1.0:
                raise TraceError(f"accuracy {r.accuracy} outside [0, 1] at {r}")
            key = (r.scenario_id, r.frame_idx, r.service_id, r.config_id)
            if key in index:
                raise TraceError(f"duplicate record {key}")
            index[key] = r.accuracy
        self.index = index

    def get(self, scenario: str, frame: int, service: str, config: str) -> float:
        try:
            return self.index[(scenario, frame, service, config)]
        except KeyError:
            raise KeyError(f"no accuracy for scenario={scenario} frame={frame} "
                           f"service={service} config={config}") from None

    @cached_property
    def scenarios(self) -> dict[str, list[int]]:
        """Scenario id -> sorted frame indices, in first-appearance order."""
        frames: dict[str, set[int]] = {}
        for r in self.records:
            frames.setdefault(r.scenario_id, set()).add(r.frame_idx)
        return {s: sorted(f) for s, f in frames.items()}

    @cached_property
    def global_means(self) -> dict[tuple[str, str], float]:
        acc = defaultdict(list)
        for r in self.records:
            acc[(r.service_id, r.config_id)].append(r.accuracy)
        return {k: math.fsum(v) / len(v) for k, v in acc.items()}

    @cached_property
    def scenario_means(self) -> dict[tuple[str, str, str], float]:
        acc = defaultdict(list)
        for r in self.records:
            acc[(r.scenario_id, r.service_id, r.config_id)].append(r.accuracy)
        return {k: math.fsum(v) / len(v) for k, v in acc.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ACC_HEADER)
        for r in self.records:
            w.writerow([r.scenario_id, r.frame_idx, r.service_id, r.config_id, f"{r.accuracy:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> AccuracyTrace:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != ACC_HEADER:
            raise TraceError(f"accuracy trace header must be {','.join(ACC_HEADER)}")
        try:
            recs = [AccuracyRecord(r[0], int(r[1]), r[2], r[3], float(r[4])) for r in rows[1:] if r]
        except (ValueError, IndexError) as exc:
            raise TraceError(f"malformed accuracy trace row: {exc}") from exc
        return cls(recs)

    @classmethod
    def load(cls, path) -> AccuracyTrace:
        return cls.from_csv(Path(path).read_text())


def static_accuracy_trace(profiles: ProfileSet, scenarios: int = 1, frames: int = 1) -> AccuracyTrace:
    """Every frame equals the profile accuracy."""
    return gen_traces(profiles, seed=0, scenarios=scenarios, frames=frames,
                      variance=VarianceModel(spread=0.0))[0]


@dataclass(frozen=True)
class VarianceModel:
    """How synthetic per-frame accuracies scatter around the profile means.

    ``spread`` scales everything. Each (scenario, service) gets a scene
    offset, each (scenario, service, model) a model-specific gain, and each
    frame an AR(1) drift with lag-one correlation ``temporal_corr``, so
    recent frames predict the next ones. ``service_spread`` overrides the
    spread per service.
    """

    spread: float = 0.04
    service_spread: dict[str, float] = field(default_factory=dict)
    temporal_corr: float = 0.9
    model_share: float = 1.0
    frame_noise: float = 0.2

    def for_service(self, service_id: str) -> float:
        return self.service_spread.get(service_id, self.spread)


@dataclass(frozen=True)
class NetworkModel:
    mean_mbps: float = 250.0
    mean_rtt_ms: float = 20.0
    bandwidth_cv: float = 0.3
    rtt_jitter_ms: float = 5.0
    step_ms: float = 100.0


def gen_traces(
    profiles: ProfileSet,
    seed: int,
    scenarios: int,
    frames: int,
    variance: VarianceModel | None = None,
    network: NetworkModel | None = None,
    frame_period_ms: float = 100.0,
) -> tuple[AccuracyTrace, NetworkTrace]:
    if scenarios <= 0 or frames <= 0:
        raise ValueError("scenario and frame counts must be positive")
    variance = variance or VarianceModel()
    network = network or NetworkModel()
    rng = np.random.default_rng(seed)
    rho = variance.temporal_corr
    innov = math.sqrt(max(0.0, 1.0 - rho * rho))
    noise = {}
    for c in range(scenarios):
        for svc in profiles.services:
            cids = [svc.local_config, *svc.remote_configs]
            models = sorted({profiles.configs[cid].model_name for cid in cids})
            scene = rng.normal()
            gains = dict(zip(models, rng.normal(size=len(models))))
            drift = np.empty(frames)
            drift[0] = rng.normal()
            shocks = rng.normal(size=frames)
            for f in range(1, frames):
                drift[f] = rho * drift[f - 1] + innov * shocks[f]
            jitter = rng.normal(size=(frames, len(cids)))
            model_gain = np.array([gains[profiles.configs[cid].model_name] for cid in cids])
            block = scene + variance.model_share * model_gain + drift[:, None] + variance.frame_noise * jitter
            noise.setdefault(svc.service_id, []).append(block)

    records = []
    for svc in profiles.services:
        cids = [svc.local_config, *svc.remote_configs]
        blocks = np.stack(noise[svc.service_id])  # (scenario, frame, config)
        # centre per config so the trace mean matches the profile (up to clipping)
        blocks -= blocks.mean(axis=(0, 1), keepdims=True)
        spread = variance.for_service(svc.service_id)
        for c in range(scenarios):
            scen = f"s{c:04d}"
            for f in range(frames):
                for j, cid in enumerate(cids):
                    acc = min(1.0, max(0.0, profiles.configs[cid].accuracy + spread * blocks[c, f, j]))
                    records.append(AccuracyRecord(scen, f, svc.service_id, cid, round(acc, 6)))
    records.sort(key=lambda r: (r.scenario_id, r.frame_idx))

    total_ms = scenarios * frames * frame_period_ms
    n = max(1, int(math.ceil(total_ms / network.step_ms)))
    log_bw = np.log(max(network.mean_mbps, 1e-9))
    walk = np.cumsum(rng.normal(scale=network.bandwidth_cv / 4, size=n))
    walk -= walk.mean()
    bw = np.exp(log_bw + np.clip(walk, -3 * network.bandwidth_cv, 3 * network.bandwidth_cv))
    if network.mean_mbps == 0:
        bw = np.zeros(n)
    rtt = np.maximum(0.0, network.mean_rtt_ms + rng.normal(scale=network.rtt_jitter_ms, size=n))
    samples = [NetSample(i * network.step_ms, round(float(bw[i]), 3), round(float(rtt[i]), 3)) for i in range(n)]
    return AccuracyTrace(records), NetworkTrace(samples)
