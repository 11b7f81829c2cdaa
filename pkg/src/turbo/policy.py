"""Where utility-curve accuracies come from on each frame.

GlobalStatic and ScenarioStatic use averages; Windowed(n) re-reads the true
accuracies at every n-th frame of a scenario and holds them for the next
n - 1 frames; PerFrameOracle uses each frame's true accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

from .profiles import ProfileSet
from .traces import AccuracyTrace
from .utility import ServiceUtilityCurve, build_service_curve


@dataclass(frozen=True)
class GlobalStatic:
    def anchor(self, scenario: str, frame: int):
        return ("global",)


@dataclass(frozen=True)
class ScenarioStatic:
    def anchor(self, scenario: str, frame: int):
        return ("scenario", scenario)


@dataclass(frozen=True)
class Windowed:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("window length must be at least 1")

    def anchor(self, scenario: str, frame: int):
        return ("frame", scenario, frame // self.n * self.n)


@dataclass(frozen=True)
class PerFrameOracle:
    def anchor(self, scenario: str, frame: int):
        return ("frame", scenario, frame)


PolicyKind = GlobalStatic | ScenarioStatic | Windowed | PerFrameOracle


def parse_policy(text: str) -> PolicyKind:
    """``global``, ``scenario``, ``oracle`` or ``windowed:N``."""
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    if name in ("global", "global_static"):
        return GlobalStatic()
    if name in ("scenario", "scenario_static"):
        return ScenarioStatic()
    if name in ("oracle", "per_frame_oracle"):
        return PerFrameOracle()
    if name == "windowed":
        try:
            return Windowed(int(arg))
        except ValueError:
            raise ValueError(f"windowed policy needs a positive integer, got {arg!r}") from None
    raise ValueError(f"unknown policy {text!r}")


def _lookup(trace: AccuracyTrace, anchor, service: str, config: str) -> float:
    kind = anchor[0]
    try:
        if kind == "global":
            return trace.global_means[(service, config)]
        if kind == "scenario":
            return trace.scenario_means[(anchor[1], service, config)]
    except KeyError:
        raise KeyError(f"no accuracy records for service={service} config={config}") from None
    return trace.get(anchor[1], anchor[2], service, config)


def accuracy_for(
    policy: PolicyKind, trace: AccuracyTrace, scenario: str, frame: int, service: str, config: str
) -> float:
    return _lookup(trace, policy.anchor(scenario, frame), service, config)


def curves_for_anchor(
    anchor, trace: AccuracyTrace, profiles: ProfileSet, rtt_ms: float, include_output: bool = False
) -> list[ServiceUtilityCurve]:
    def acc(service: str, config: str) -> float:
        return _lookup(trace, anchor, service, config)

    return [
        build_service_curve(s, profiles, rtt_ms, accuracy_of=acc, include_output=include_output)
        for s in profiles.services
    ]


def curves_for_frame(
    policy: PolicyKind,
    trace: AccuracyTrace,
    scenario: str,
    frame: int,
    profiles: ProfileSet,
    rtt_ms: float,
) -> list[ServiceUtilityCurve]:
    return curves_for_anchor(policy.anchor(scenario, frame), trace, profiles, rtt_ms)
