"""Bandwidth-to-accuracy step curves.

A remote config contributes a single step: it is worth its accuracy once the
allocated uplink bandwidth lets the input arrive in time for the SLO, and
nothing below that. A service's curve is the upper envelope of its steps on
top of the on-vehicle floor.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable

from .profiles import ModelConfig, ProfileSet, ServiceSpec, exec_time_ms


@dataclass(frozen=True, order=True)
class UtilityStep:
    b_c_mbps: float
    accuracy: float
    config_id: str

    def __post_init__(self):
        if not self.b_c_mbps > 0:
            raise ValueError(f"step bandwidth must be positive, got {self.b_c_mbps}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"step accuracy {self.accuracy} outside [0, 1]")


@dataclass(frozen=True)
class ServiceUtilityCurve:
    service_id: str
    floor_accuracy: float
    steps: tuple[UtilityStep, ...] = ()
    transform: tuple[float, float] = (1.0, 0.0)
    local_config: str = ""

    def __post_init__(self):
        for prev, nxt in zip(self.steps, self.steps[1:]):
            if not (nxt.b_c_mbps > prev.b_c_mbps and nxt.accuracy > prev.accuracy):
                raise ValueError(f"{self.service_id}: steps must strictly increase")
        for st in self.steps:
            if st.accuracy <= self.floor_accuracy:
                raise ValueError(f"{self.service_id}: step {st.config_id} not above floor")

    def value(self, accuracy: float) -> float:
        a, b = self.transform
        return a * accuracy + b


@dataclass(frozen=True)
class NetworkEstimate:
    bandwidth_mbps: float
    rtt_ms: float

    def __post_init__(self):
        if self.bandwidth_mbps < 0 or self.rtt_ms < 0:
            raise ValueError("network estimates must be non-negative")


def required_bandwidth_mbps(
    config: ModelConfig, slo_ms: float, rtt_ms: float, include_output: bool = False
) -> float | None:
    """Minimum uplink rate meeting the SLO, or None when no rate suffices."""
    slack_ms = slo_ms - exec_time_ms(config) - rtt_ms
    if slack_ms <= 0:
        return None
    size = config.input_size_mbit
    if include_output:
        size += config.output_size_kbit / 1000.0
    return size / (slack_ms / 1000.0)


def model_step(
    config: ModelConfig,
    slo_ms: float,
    rtt_ms: float,
    *,
    accuracy: float | None = None,
    include_output: bool = False,
) -> UtilityStep | None:
    if not config.is_cloud:
        raise ValueError(f"{config.config_id} is not a cloud config")
    b_c = required_bandwidth_mbps(config, slo_ms, rtt_ms, include_output)
    if b_c is None:
        return None
    return UtilityStep(b_c, config.accuracy if accuracy is None else accuracy, config.config_id)


def local_utility(config: ModelConfig) -> float:
    if config.is_cloud:
        raise ValueError(f"{config.config_id} is not an on-vehicle config")
    return config.accuracy


def prune_steps(floor: float, candidates: Iterable[UtilityStep]) -> tuple[UtilityStep, ...]:
    """Drop steps at or below the floor and steps dominated by a cheaper, better one."""
    # sort by bandwidth, then best accuracy first, then config id for deterministic ties
    ordered = sorted(
        (s for s in candidates if s.accuracy > floor),
        key=lambda s: (s.b_c_mbps, -s.accuracy, s.config_id),
    )
    kept: list[UtilityStep] = []
    best = floor
    for step in ordered:
        if step.accuracy > best:
            kept.append(step)
            best = step.accuracy
    return tuple(kept)


AccuracyLookup = Callable[[str, str], float]


def build_service_curve(
    service: ServiceSpec,
    profiles: ProfileSet,
    rtt_ms: float,
    *,
    accuracy_of: AccuracyLookup | None = None,
    include_output: bool = False,
) -> ServiceUtilityCurve:
    """Service curve at the given RTT.

    ``accuracy_of(service_id, config_id)`` overrides the profile accuracies,
    which is how dynamic policies feed per-frame estimates in.
    """

    def acc(cid: str) -> float:
        if accuracy_of is None:
            return profiles.configs[cid].accuracy
        return accuracy_of(service.service_id, cid)

    floor = acc(service.local_config)
    candidates = []
    for cid in service.remote_configs:
        step = model_step(
            profiles.configs[cid], service.slo_ms, rtt_ms,
            accuracy=acc(cid), include_output=include_output,
        )
        if step is not None:
            candidates.append(step)
    return ServiceUtilityCurve(
        service.service_id, floor, prune_steps(floor, candidates),
        service.transform, service.local_config,
    )


def build_curves(profiles: ProfileSet, rtt_ms: float, **kwargs) -> list[ServiceUtilityCurve]:
    return [build_service_curve(s, profiles, rtt_ms, **kwargs) for s in profiles.services]


def evaluate(curve: ServiceUtilityCurve, b_mbps: float) -> float:
    if b_mbps < 0:
        raise ValueError("bandwidth must be non-negative")
    value = curve.floor_accuracy
    for step in curve.steps:
        if step.b_c_mbps <= b_mbps:
            value = step.accuracy
        else:
            break
    return value


def best_step(curve: ServiceUtilityCurve, b_mbps: float) -> UtilityStep | None:
    chosen = None
    for step in curve.steps:
        if step.b_c_mbps <= b_mbps:
            chosen = step
        else:
            break
    return chosen


def apply_transform(service: ServiceSpec, u: float) -> float:
    a, b = service.transform
    return a * u + b


CURVE_CSV_HEADER = ("service_id", "b_c_mbps", "accuracy", "config_id")


def curves_to_csv(curves: Iterable[ServiceUtilityCurve]) -> str:
    """One row per step; the floor is emitted as a zero-bandwidth row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_CSV_HEADER)
    for curve in curves:
        w.writerow([curve.service_id, "0", f"{curve.floor_accuracy:.6g}", curve.local_config])
        for st in curve.steps:
            w.writerow([curve.service_id, f"{st.b_c_mbps:.6f}", f"{st.accuracy:.6g}", st.config_id])
    return buf.getvalue()
