"""Service and model-configuration registry.

A profile document is a single JSON object with ``services`` and ``configs``
arrays. Durations are milliseconds, transfer sizes megabits (input) and
kilobits (output), accuracies fractions in [0, 1].
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any


class ProfileError(ValueError):
    """Raised when a profile document cannot be parsed or fails validation."""


class Placement(str, enum.Enum):
    ON_VEHICLE = "on_vehicle"
    CLOUD = "cloud"


class PipelineKind(str, enum.Enum):
    CLOUD_PREPROCESS = "cloud_preprocess"
    ON_VEHICLE_PREPROCESS = "on_vehicle_preprocess"
    IMAGE_COMPRESSION = "image_compression"
    DNN_INPUT_COMPRESSION = "dnn_input_compression"


CODECS = ("png", "jpeg")


@dataclass(frozen=True)
class Pipeline:
    kind: PipelineKind
    codec: str | None = None
    quality: int | None = None

    @property
    def compressed(self) -> bool:
        return self.kind in (PipelineKind.IMAGE_COMPRESSION, PipelineKind.DNN_INPUT_COMPRESSION)

    def to_json(self) -> Any:
        if not self.compressed:
            return self.kind.value
        body: dict[str, Any] = {"codec": self.codec}
        if self.quality is not None:
            body["quality"] = self.quality
        return {self.kind.value: body}

    @classmethod
    def from_json(cls, raw: Any, where: str) -> Pipeline:
        if isinstance(raw, str):
            try:
                kind = PipelineKind(raw)
            except ValueError:
                raise ProfileError(f"{where}.pipeline: unknown pipeline {raw!r}") from None
            if kind in (PipelineKind.IMAGE_COMPRESSION, PipelineKind.DNN_INPUT_COMPRESSION):
                raise ProfileError(f"{where}.pipeline: {raw!r} requires codec parameters")
            return cls(kind)
        if isinstance(raw, dict) and len(raw) == 1:
            (name, body), = raw.items()
            try:
                kind = PipelineKind(name)
            except ValueError:
                raise ProfileError(f"{where}.pipeline: unknown pipeline {name!r}") from None
            if kind not in (PipelineKind.IMAGE_COMPRESSION, PipelineKind.DNN_INPUT_COMPRESSION):
                raise ProfileError(f"{where}.pipeline: {name!r} takes no parameters")
            if not isinstance(body, dict) or body.get("codec") not in CODECS:
                raise ProfileError(f"{where}.pipeline.{name}.codec: must be one of {CODECS}")
            quality = body.get("quality")
            if quality is not None and (not isinstance(quality, int) or not 0 < quality <= 100):
                raise ProfileError(f"{where}.pipeline.{name}.quality: must be an int in (0, 100]")
            return cls(kind, body["codec"], quality)
        raise ProfileError(f"{where}.pipeline: malformed value {raw!r}")


STAGE_FIELDS = (
    "preprocess_local_ms",
    "preprocess_remote_ms",
    "inference_remote_ms",
    "inference_local_ms",
    "compress_local_ms",
    "decompress_remote_ms",
)


@dataclass(frozen=True)
class StageProfile:
    preprocess_local_ms: float = 0.0
    preprocess_remote_ms: float = 0.0
    inference_remote_ms: float | None = None
    inference_local_ms: float | None = None
    compress_local_ms: float = 0.0
    decompress_remote_ms: float = 0.0

    def to_json(self) -> dict[str, float]:
        out = {}
        for name in STAGE_FIELDS:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass(frozen=True)
class ModelConfig:
    config_id: str
    model_name: str
    placement: Placement
    pipeline: Pipeline
    accuracy: float
    stages: StageProfile
    input_size_mbit: float
    output_size_kbit: float
    approximate: bool = False

    @property
    def is_cloud(self) -> bool:
        return self.placement is Placement.CLOUD

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "config_id": self.config_id,
            "model_name": self.model_name,
            "placement": self.placement.value,
            "pipeline": self.pipeline.to_json(),
            "accuracy": self.accuracy,
            "stages": self.stages.to_json(),
            "input_size_mbit": self.input_size_mbit,
            "output_size_kbit": self.output_size_kbit,
        }
        if self.approximate:
            out["approximate"] = True
        return out


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    name: str
    slo_ms: float
    local_config: str
    remote_configs: tuple[str, ...]
    transform: tuple[float, float] = (1.0, 0.0)

    def to_json(self) -> dict[str, Any]:
        return {
            "service_id": self.service_id,
            "name": self.name,
            "slo_ms": self.slo_ms,
            "local_config": self.local_config,
            "remote_configs": list(self.remote_configs),
            "transform": {"a": self.transform[0], "b": self.transform[1]},
        }


@dataclass(frozen=True)
class ProfileSet:
    services: tuple[ServiceSpec, ...]
    configs: dict[str, ModelConfig]
    # optional fixed per-service cloud configs for the naive baselines, e.g. {"b1": {svc: cfg}}
    baselines: dict[str, dict[str, str]] = field(default_factory=dict)

    def service(self, service_id: str) -> ServiceSpec:
        for svc in self.services:
            if svc.service_id == service_id:
                return svc
        raise KeyError(service_id)

    @property
    def service_ids(self) -> list[str]:
        return [s.service_id for s in self.services]

    def restrict(self, keep) -> ProfileSet:
        """Copy with each service's remote configs filtered by ``keep(config)``."""
        services = tuple(
            ServiceSpec(
                s.service_id,
                s.name,
                s.slo_ms,
                s.local_config,
                tuple(c for c in s.remote_configs if keep(self.configs[c])),
                s.transform,
            )
            for s in self.services
        )
        return ProfileSet(services, self.configs, self.baselines)

    def subset(self, service_ids) -> ProfileSet:
        wanted = set(service_ids)
        services = tuple(s for s in self.services if s.service_id in wanted)
        baselines = {
            name: {k: v for k, v in mapping.items() if k in wanted}
            for name, mapping in self.baselines.items()
        }
        return ProfileSet(services, self.configs, baselines)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "services": [s.to_json() for s in self.services],
            "configs": [c.to_json() for c in self.configs.values()],
        }
        if self.baselines:
            out["baselines"] = self.baselines
        return out


def exec_time_ms(config: ModelConfig) -> float:
    """Compute time on the critical path, excluding network transfer."""
    st = config.stages
    if config.placement is Placement.ON_VEHICLE:
        return st.preprocess_local_ms + (st.inference_local_ms or 0.0)
    kind = config.pipeline.kind
    infer = st.inference_remote_ms or 0.0
    if kind is PipelineKind.CLOUD_PREPROCESS:
        return st.preprocess_remote_ms + infer
    if kind is PipelineKind.ON_VEHICLE_PREPROCESS:
        return st.preprocess_local_ms + infer
    if kind is PipelineKind.IMAGE_COMPRESSION:
        return st.compress_local_ms + st.decompress_remote_ms + st.preprocess_remote_ms + infer
    return st.preprocess_local_ms + st.compress_local_ms + st.decompress_remote_ms + infer


def estimate_network_cost(price_per_gb: float, avg_mbps: float) -> float:
    """Dollars per hour of streaming ``avg_mbps`` continuously at ``price_per_gb``."""
    if price_per_gb < 0 or avg_mbps < 0:
        raise ValueError("price and rate must be non-negative")
    gb_per_hour = avg_mbps * 3600 / 8 / 1000
    return price_per_gb * gb_per_hour


# -- parsing -----------------------------------------------------------------


def _number(obj: dict, key: str, where: str, *, required: bool = True, default=None):
    if key not in obj:
        if required:
            raise ProfileError(f"{where}.{key}: missing")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ProfileError(f"{where}.{key}: expected a finite number, got {value!r}")
    return float(value)


def _string(obj: dict, key: str, where: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise ProfileError(f"{where}.{key}: expected a non-empty string")
    return value


def _parse_stages(raw: Any, where: str) -> StageProfile:
    if not isinstance(raw, dict):
        raise ProfileError(f"{where}.stages: expected an object")
    unknown = set(raw) - set(STAGE_FIELDS)
    if unknown:
        raise ProfileError(f"{where}.stages: unknown field(s) {sorted(unknown)}")
    values = {}
    for name in STAGE_FIELDS:
        optional = name in ("inference_remote_ms", "inference_local_ms")
        value = _number(raw, name, f"{where}.stages", required=False, default=None if optional else 0.0)
        if value is not None and value < 0:
            raise ProfileError(f"{where}.stages.{name}: negative duration {value}")
        values[name] = value
    return StageProfile(**values)


def _parse_config(raw: Any, idx: int) -> ModelConfig:
    where = f"configs[{idx}]"
    if not isinstance(raw, dict):
        raise ProfileError(f"{where}: expected an object")
    config_id = _string(raw, "config_id", where)
    where = f"configs[{config_id}]"
    try:
        placement = Placement(raw.get("placement"))
    except ValueError:
        raise ProfileError(f"{where}.placement: must be 'on_vehicle' or 'cloud'") from None
    pipeline = Pipeline.from_json(raw.get("pipeline", "on_vehicle_preprocess"), where)
    accuracy = _number(raw, "accuracy", where)
    if not 0.0 <= accuracy <= 1.0:
        raise ProfileError(f"{where}.accuracy: {accuracy} outside [0, 1]")
    stages = _parse_stages(raw.get("stages"), where)
    input_size = _number(raw, "input_size_mbit", where, required=False, default=0.0)
    output_size = _number(raw, "output_size_kbit", where, required=False, default=0.0)
    if input_size < 0:
        raise ProfileError(f"{where}.input_size_mbit: negative size {input_size}")
    if output_size < 0:
        raise ProfileError(f"{where}.output_size_kbit: negative size {output_size}")
    if placement is Placement.ON_VEHICLE:
        if input_size != 0:
            raise ProfileError(f"{where}.input_size_mbit: on-vehicle configs transmit nothing")
        if stages.inference_local_ms is None:
            raise ProfileError(f"{where}.stages.inference_local_ms: required for on-vehicle configs")
    else:
        if input_size <= 0:
            raise ProfileError(f"{where}.input_size_mbit: cloud configs need a positive input size")
        if stages.inference_remote_ms is None:
            raise ProfileError(f"{where}.stages.inference_remote_ms: required for cloud configs")
    approximate = raw.get("approximate", False)
    if not isinstance(approximate, bool):
        raise ProfileError(f"{where}.approximate: expected a boolean")
    return ModelConfig(
        config_id, _string(raw, "model_name", where), placement, pipeline,
        accuracy, stages, input_size, output_size, approximate,
    )


def _parse_service(raw: Any, idx: int, configs: dict[str, ModelConfig]) -> ServiceSpec:
    where = f"services[{idx}]"
    if not isinstance(raw, dict):
        raise ProfileError(f"{where}: expected an object")
    service_id = _string(raw, "service_id", where)
    where = f"services[{service_id}]"
    slo = _number(raw, "slo_ms", where)
    if slo <= 0:
        raise ProfileError(f"{where}.slo_ms: must be positive")
    local = _string(raw, "local_config", where)
    if local not in configs:
        raise ProfileError(f"{where}.local_config: unknown config {local!r}")
    if configs[local].placement is not Placement.ON_VEHICLE:
        raise ProfileError(f"{where}.local_config: {local!r} is not an on-vehicle config")
    remotes = raw.get("remote_configs", [])
    if not isinstance(remotes, list):
        raise ProfileError(f"{where}.remote_configs: expected an array")
    for cid in remotes:
        if cid not in configs:
            raise ProfileError(f"{where}.remote_configs: unknown config {cid!r}")
        if configs[cid].placement is not Placement.CLOUD:
            raise ProfileError(f"{where}.remote_configs: {cid!r} is not a cloud config")
    tr = raw.get("transform", {"a": 1.0, "b": 0.0})
    if not isinstance(tr, dict):
        raise ProfileError(f"{where}.transform: expected an object with 'a' and 'b'")
    transform = (
        _number(tr, "a", f"{where}.transform", required=False, default=1.0),
        _number(tr, "b", f"{where}.transform", required=False, default=0.0),
    )
    return ServiceSpec(
        service_id, raw.get("name", service_id), slo, local, tuple(remotes), transform
    )


def parse_profiles(doc: Any) -> ProfileSet:
    if not isinstance(doc, dict):
        raise ProfileError("profile document must be a JSON object")
    raw_configs = doc.get("configs")
    raw_services = doc.get("services")
    if not isinstance(raw_configs, list):
        raise ProfileError("configs: expected an array")
    if not isinstance(raw_services, list):
        raise ProfileError("services: expected an array")
    if not raw_services:
        raise ProfileError("services: no services")
    configs: dict[str, ModelConfig] = {}
    for i, raw in enumerate(raw_configs):
        cfg = _parse_config(raw, i)
        if cfg.config_id in configs:
            raise ProfileError(f"configs[{cfg.config_id}]: duplicate config_id")
        configs[cfg.config_id] = cfg
    services = []
    seen = set()
    for i, raw in enumerate(raw_services):
        svc = _parse_service(raw, i, configs)
        if svc.service_id in seen:
            raise ProfileError(f"services[{svc.service_id}]: duplicate service_id")
        seen.add(svc.service_id)
        services.append(svc)
    baselines = doc.get("baselines", {})
    if not isinstance(baselines, dict):
        raise ProfileError("baselines: expected an object")
    for name, mapping in baselines.items():
        if not isinstance(mapping, dict):
            raise ProfileError(f"baselines.{name}: expected an object")
        for sid, cid in mapping.items():
            if sid not in seen:
                raise ProfileError(f"baselines.{name}: unknown service {sid!r}")
            if cid not in configs or not configs[cid].is_cloud:
                raise ProfileError(f"baselines.{name}.{sid}: {cid!r} is not a cloud config")
    return ProfileSet(tuple(services), configs, {k: dict(v) for k, v in baselines.items()})


def load_profiles(path) -> ProfileSet:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ProfileError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: malformed JSON ({exc})") from exc
    return parse_profiles(doc)


def save_profiles(profiles: ProfileSet, path) -> None:
    Path(path).write_text(json.dumps(profiles.to_json(), indent=2) + "\n")


def example_profiles_path() -> Path:
    return Path(str(resources.files("turbo") / "data" / "example_profile.json"))


def example_profiles() -> ProfileSet:
    """Five camera detection services and one motion prediction service."""
    return load_profiles(example_profiles_path())
