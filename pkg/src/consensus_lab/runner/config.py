"""Scenario configuration: JSON in, validated dataclasses out. Unknown keys are rejected."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..engines import ENGINES
from ..errors import ConfigError
from ..netsim import FaultPlan, FixedLatency, LatencyModel, Partition, UniformLatency

LATENCY_MODELS = {"fixed": FixedLatency, "uniform": UniformLatency}
TOP_LEVEL_KEYS = ("name", "engine", "nodes", "duration", "seed", "latency", "faults", "engine_params")
FAULT_KEYS = ("crashes", "partitions", "byzantine", "drop_rate", "duplicate_rate")
PARTITION_KEYS = ("start", "end", "side_a", "side_b")
MAX_SEED = (1 << 64) - 1


@dataclass
class ScenarioConfig:
    engine: str
    nodes: int
    duration: int
    seed: int = 0
    name: str = ""
    latency: LatencyModel = field(default_factory=FixedLatency)
    faults: FaultPlan = field(default_factory=FaultPlan)
    engine_params: Any = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(raw: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def _reject_unknown(data: Mapping[str, Any], allowed: typing.Iterable[str], path: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown key (allowed: {', '.join(sorted(allowed))})", where)


def _expect(value: Any, kind: type | tuple[type, ...], path: str) -> Any:
    # bool is an int subclass; never accept it where a number is wanted
    if isinstance(value, bool) and bool not in (kind if isinstance(kind, tuple) else (kind,)):
        raise ConfigError(f"expected {_type_name(kind)}, got bool", path)
    if not isinstance(value, kind):
        raise ConfigError(f"expected {_type_name(kind)}, got {type(value).__name__}", path)
    return value


def _type_name(kind: type | tuple[type, ...]) -> str:
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__


def build(tp: Any, value: Any, path: str) -> Any:
    """Coerce parsed JSON ``value`` into type ``tp`` (dataclasses, lists, optionals, scalars)."""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return build(inner[0], value, path)
    if origin is list:
        (item,) = typing.get_args(tp)
        _expect(value, list, path)
        return [build(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        key_t, val_t = typing.get_args(tp)
        _expect(value, dict, path)
        out = {}
        for k, v in value.items():
            try:
                key = key_t(k)
            except ValueError:
                raise ConfigError(f"bad key {k!r}", path) from None
            out[key] = build(val_t, v, f"{path}.{k}")
        return out
    if dataclasses.is_dataclass(tp):
        return build_dataclass(tp, value, path)
    if tp is float:
        return float(_expect(value, (int, float), path))
    if tp is int:
        return _expect(value, int, path)
    if tp is bool:
        return _expect(value, bool, path)
    if tp is str:
        return _expect(value, str, path)
    return value


def build_dataclass(cls: type, data: Any, path: str) -> Any:
    _expect(data, dict, path)
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    _reject_unknown(data, fields, path)
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = build(hints[name], value, f"{path}.{name}" if path else name)
    missing = [n for n, f in fields.items() if n not in kwargs and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError("missing required key", f"{path}.{missing[0]}" if path else missing[0])
    return cls(**kwargs)


def parse_latency(data: Any) -> LatencyModel:
    if data is None:
        return FixedLatency(1)
    _expect(data, dict, "latency")
    model = data.get("model", "fixed")
    if model not in LATENCY_MODELS:
        raise ConfigError(f"unknown model {model!r} (choices: {', '.join(LATENCY_MODELS)})", "latency.model")
    rest = {k: v for k, v in data.items() if k != "model"}
    return build_dataclass(LATENCY_MODELS[model], rest, "latency")


def parse_faults(data: Any, nodes: int) -> FaultPlan:
    if data is None:
        return FaultPlan()
    _expect(data, dict, "faults")
    _reject_unknown(data, FAULT_KEYS, "faults")
    crashes = build(dict[int, int], data.get("crashes", {}), "faults.crashes")
    partitions = []
    for i, p in enumerate(_expect(data.get("partitions", []), list, "faults.partitions")):
        where = f"faults.partitions[{i}]"
        _expect(p, dict, where)
        _reject_unknown(p, PARTITION_KEYS, where)
        try:
            partitions.append(Partition(build(int, p["start"], f"{where}.start"), build(int, p["end"], f"{where}.end"),
                                        frozenset(build(list[int], p["side_a"], f"{where}.side_a")),
                                        frozenset(build(list[int], p["side_b"], f"{where}.side_b"))))
        except KeyError as exc:
            raise ConfigError("missing required key", f"{where}.{exc.args[0]}") from None
    plan = FaultPlan(crashes=crashes, partitions=tuple(partitions),
                     byzantine=frozenset(build(list[int], data.get("byzantine", []), "faults.byzantine")),
                     drop_rate=build(float, data.get("drop_rate", 0.0), "faults.drop_rate"),
                     duplicate_rate=build(float, data.get("duplicate_rate", 0.0), "faults.duplicate_rate"))
    plan.validate(nodes)
    return plan


def parse_config(data: Any, seed: int | None = None) -> ScenarioConfig:
    """Validate a parsed JSON document; ``seed`` overrides the file's seed."""
    _expect(data, dict, "<root>")
    _reject_unknown(data, TOP_LEVEL_KEYS, "")
    raw = dict(data)
    if seed is not None:
        raw["seed"] = seed
    for key in ("engine", "nodes", "duration"):
        if key not in raw:
            raise ConfigError("missing required key", key)
    engine = _expect(raw["engine"], str, "engine").lower()
    if engine not in ENGINES:
        raise ConfigError(f"unknown engine {raw['engine']!r} (choices: {', '.join(ENGINES)})", "engine")
    nodes = _expect(raw["nodes"], int, "nodes")
    duration = _expect(raw["duration"], int, "duration")
    if nodes < 1:
        raise ConfigError("must be >= 1", "nodes")
    if duration < 1:
        raise ConfigError("must be >= 1", "duration")
    run_seed = _expect(raw.get("seed", 0), int, "seed")
    if not 0 <= run_seed <= MAX_SEED:
        raise ConfigError("must be a 64-bit unsigned integer", "seed")
    params_cls, _ = ENGINES[engine]
    params = build_dataclass(params_cls, raw.get("engine_params", {}), "engine_params")
    params.validate(nodes, "engine_params")
    return ScenarioConfig(
        engine=engine, nodes=nodes, duration=duration, seed=run_seed,
        name=_expect(raw.get("name", ""), str, "name"),
        latency=parse_latency(raw.get("latency")),
        faults=parse_faults(raw.get("faults"), nodes),
        engine_params=params, raw=raw,
    )


def load_config(path: str | Path, seed: int | None = None) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", str(path)) from None
    cfg = parse_config(data, seed)
    if not cfg.name:
        cfg.name = Path(path).stem
    return cfg


def defaults() -> dict[str, Any]:
    """Every default as a JSON-ready mapping, keyed by engine."""
    def plain(obj: Any) -> Any:
        if dataclasses.is_dataclass(obj):
            return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [plain(x) for x in obj]
        return obj

    return {
        "seed": 0,
        "latency": {"model": "fixed", "ticks": FixedLatency().ticks},
        "latency_models": {"fixed": {"ticks": 1}, "uniform": {"low": UniformLatency().low,
                                                               "high": UniformLatency().high}},
        "faults": {"crashes": {}, "partitions": [], "byzantine": [], "drop_rate": 0.0, "duplicate_rate": 0.0},
        "engine_params": {name: plain(params()) for name, (params, _) in ENGINES.items()},
    }
