"""JSON configuration: every tunable in one validated, round-trippable file.

The file is a single JSON object.  Unknown keys are rejected everywhere so
typos fail loudly instead of silently running defaults.  parse(dumps(cfg))
always equals cfg.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .bev import BevGrid
from .cluster import ClusterParams
from .errors import CohereError, ParseError
from .ground import GroundParams
from .learn import PretrainConfig
from .pretrain import RigSpec
from .synth import BoxSpec, EgoSpec, SceneSpec

_REQUIRED = object()


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a JSON object")
    for key in obj:
        if key not in allowed:
            raise ParseError(f"{where}: unknown key {key!r}")


def _number(obj: dict, key: str, where: str, default=_REQUIRED) -> float:
    if key not in obj:
        if default is _REQUIRED:
            raise ParseError(f"{where}: missing required key {key!r}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: {key!r} must be a number")
    return float(v)


def _integer(obj: dict, key: str, where: str, default=_REQUIRED) -> int:
    if key not in obj:
        if default is _REQUIRED:
            raise ParseError(f"{where}: missing required key {key!r}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{where}: {key!r} must be an integer")
    return v


def _triple(obj: dict, key: str, where: str, default=_REQUIRED) -> tuple:
    if key not in obj:
        if default is _REQUIRED:
            raise ParseError(f"{where}: missing required key {key!r}")
        return default
    v = obj[key]
    if (not isinstance(v, list) or len(v) != 3
            or any(isinstance(x, bool) or not isinstance(x, (int, float))
                   for x in v)):
        raise ParseError(f"{where}: {key!r} must be a list of 3 numbers")
    return tuple(float(x) for x in v)


def _section(cls, builder, obj: dict, key: str, where: str):
    if key not in obj:
        return cls()
    return builder(obj[key], f"{where}.{key}")


def _construct(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except (ValueError, CohereError) as exc:
        raise ParseError(f"{where}: {exc}") from exc


def _from_fields(cls, obj: dict, where: str):
    """Build a dataclass whose fields are all numbers from a JSON object."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(obj, set(fields), where)
    kwargs = {}
    for name, f in fields.items():
        if name not in obj:
            continue
        if f.type in ("int", int):
            kwargs[name] = _integer(obj, name, where)
        else:
            kwargs[name] = _number(obj, name, where)
    return _construct(cls, kwargs, where)


def ground_params_from_obj(obj, where="ground") -> GroundParams:
    return _from_fields(GroundParams, obj, where)


def cluster_params_from_obj(obj, where="cluster") -> ClusterParams:
    return _from_fields(ClusterParams, obj, where)


def grid_from_obj(obj, where="grid") -> BevGrid:
    return _from_fields(BevGrid, obj, where)


def rig_from_obj(obj, where="rig") -> RigSpec:
    return _from_fields(RigSpec, obj, where)


# ----------------------------------------------------------------- scene spec

def box_from_obj(obj, where) -> BoxSpec:
    _check_keys(obj, {"size", "center", "velocity", "yaw"}, where)
    return _construct(BoxSpec, dict(
        size=_triple(obj, "size", where),
        center=_triple(obj, "center", where),
        velocity=_triple(obj, "velocity", where, (0.0, 0.0, 0.0)),
        yaw=_number(obj, "yaw", where, 0.0)), where)


def ego_from_obj(obj, where) -> EgoSpec:
    _check_keys(obj, {"start", "velocity", "yaw", "yaw_rate"}, where)
    return _construct(EgoSpec, dict(
        start=_triple(obj, "start", where, (0.0, 0.0, 0.0)),
        velocity=_triple(obj, "velocity", where, (0.0, 0.0, 0.0)),
        yaw=_number(obj, "yaw", where, 0.0),
        yaw_rate=_number(obj, "yaw_rate", where, 0.0)), where)


def scene_spec_from_obj(obj, where="scene") -> SceneSpec:
    _check_keys(obj, {"seed", "frames", "sweeps_per_frame", "sweep_interval",
                      "ego", "objects", "points_per_object", "ground_points",
                      "ground_radius", "noise_sigma", "speed_gate"}, where)
    kwargs = dict(seed=_integer(obj, "seed", where),
                  frames=_integer(obj, "frames", where))
    for key in ("sweeps_per_frame", "points_per_object", "ground_points"):
        if key in obj:
            kwargs[key] = _integer(obj, key, where)
    for key in ("sweep_interval", "ground_radius", "noise_sigma",
                "speed_gate"):
        if key in obj:
            kwargs[key] = _number(obj, key, where)
    if "ego" in obj:
        kwargs["ego"] = ego_from_obj(obj["ego"], f"{where}.ego")
    if "objects" in obj:
        if not isinstance(obj["objects"], list):
            raise ParseError(f"{where}: 'objects' must be a list")
        kwargs["objects"] = tuple(
            box_from_obj(o, f"{where}.objects[{i}]")
            for i, o in enumerate(obj["objects"]))
    spec = _construct(SceneSpec, kwargs, where)
    try:
        spec.validate()
    except Exception as exc:
        raise ParseError(f"{where}: {exc}") from exc
    return spec


def scene_spec_to_obj(spec: SceneSpec) -> dict:
    return {
        "seed": spec.seed,
        "frames": spec.frames,
        "sweeps_per_frame": spec.sweeps_per_frame,
        "sweep_interval": spec.sweep_interval,
        "ego": dataclasses.asdict(spec.ego),
        "objects": [dataclasses.asdict(b) for b in spec.objects],
        "points_per_object": spec.points_per_object,
        "ground_points": spec.ground_points,
        "ground_radius": spec.ground_radius,
        "noise_sigma": spec.noise_sigma,
        "speed_gate": spec.speed_gate,
    }


# ------------------------------------------------------------ pipeline config

@dataclass(frozen=True)
class PipelineConfig:
    """Every pipeline tunable, with the defaults used throughout."""

    match_radius: float = 0.5        # center-distance gate for track matching
    history_length: int = 16         # memory horizon K (tracks and banks)
    n_foreground: int = 1000
    n_background: int = 1000
    temperature: float = 0.1
    momentum: float = 0.99
    dropout_rate: float = 0.3
    learning_rate: float = 1e-2
    channels: int = 16
    occupancy_dilation: int = 1
    ground: GroundParams = field(default_factory=GroundParams)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    grid: BevGrid = field(default_factory=BevGrid)
    rig: RigSpec = field(default_factory=RigSpec)
    scene: SceneSpec | None = None

    def __post_init__(self) -> None:
        if not self.match_radius > 0:
            raise ValueError("match_radius must be positive")
        self.pretrain_config()  # validates all the learning scalars

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            temperature=self.temperature, momentum=self.momentum,
            dropout_rate=self.dropout_rate, learning_rate=self.learning_rate,
            n_foreground=self.n_foreground, n_background=self.n_background,
            history_length=self.history_length,
            occupancy_dilation=self.occupancy_dilation,
            channels=self.channels)


_SCALAR_INTS = ("history_length", "n_foreground", "n_background", "channels",
                "occupancy_dilation")
_SCALAR_FLOATS = ("match_radius", "temperature", "momentum", "dropout_rate",
                  "learning_rate")


def pipeline_config_from_obj(obj: dict, where: str = "config") -> PipelineConfig:
    allowed = set(_SCALAR_INTS) | set(_SCALAR_FLOATS) | {
        "ground", "cluster", "grid", "rig", "scene"}
    _check_keys(obj, allowed, where)
    kwargs = {}
    for key in _SCALAR_INTS:
        if key in obj:
            kwargs[key] = _integer(obj, key, where)
    for key in _SCALAR_FLOATS:
        if key in obj:
            kwargs[key] = _number(obj, key, where)
    kwargs["ground"] = _section(GroundParams, ground_params_from_obj,
                                obj, "ground", where)
    kwargs["cluster"] = _section(ClusterParams, cluster_params_from_obj,
                                 obj, "cluster", where)
    kwargs["grid"] = _section(BevGrid, grid_from_obj, obj, "grid", where)
    kwargs["rig"] = _section(RigSpec, rig_from_obj, obj, "rig", where)
    if "scene" in obj:
        kwargs["scene"] = scene_spec_from_obj(obj["scene"], f"{where}.scene")
    return _construct(PipelineConfig, kwargs, where)


def pipeline_config_to_obj(cfg: PipelineConfig) -> dict:
    obj = {key: getattr(cfg, key) for key in _SCALAR_INTS + _SCALAR_FLOATS}
    obj["ground"] = dataclasses.asdict(cfg.ground)
    obj["cluster"] = dataclasses.asdict(cfg.cluster)
    obj["grid"] = {k: getattr(cfg.grid, k)
                   for k in ("x_min", "x_max", "y_min", "y_max", "cell")}
    obj["rig"] = dataclasses.asdict(cfg.rig)
    if cfg.scene is not None:
        obj["scene"] = scene_spec_to_obj(cfg.scene)
    return obj


def dumps_pipeline_config(cfg: PipelineConfig) -> str:
    return json.dumps(pipeline_config_to_obj(cfg), indent=2, sort_keys=True) + "\n"


def loads_pipeline_config(text: str, where: str = "config") -> PipelineConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: invalid JSON: {exc}") from exc
    return pipeline_config_from_obj(obj, where)


def load_pipeline_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_pipeline_config(fh.read(), where=str(path))


def dumps_scene_spec(spec: SceneSpec) -> str:
    return json.dumps(scene_spec_to_obj(spec), indent=2, sort_keys=True) + "\n"


def load_scene_spec(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.loads(fh.read())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return scene_spec_from_obj(obj, where=str(path))
