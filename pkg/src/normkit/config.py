"""JSON experiment configuration with strict key checking.

Defaults (every key optional except where noted)::

    model.kind            "mlp"        mlp | convnet | charlstm
    model.hidden          [32]         widths / conv channels / LSTM size
    model.activation      "relu"       relu | tanh
    model.kernel          3            odd conv kernel
    model.pool            true         2x2 mean-pool after each conv block
    train.optimizer       "adam"       sgd | adam
    train.lr              0.01
    train.momentum        0.0
    train.beta1/beta2     0.9 / 0.999
    train.adam_eps        1e-8
    train.batch_size      50
    train.epochs          5
    train.seed            0            overridden by $NORMKIT_SEED
    train.lambda_l1       0.0
    train.sigma           1.0
    train.l1_target       "v"          v | y | z
    train.record_wall_time false       false keeps metrics.csv byte-reproducible
    data.kind             "blobs"      blobs | mnist-subset | tiny-chars
    norm.preset           "BN"         BN | LN | DN | DN-no-center | identity-like | none
    norm.affine           true
    norm.dn_window        ["all", 5, 5]
    norm.allow_zero_sigma false        must be true for sigma = 0
    output_dir            "runs/default"
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ContractError, InvalidRegionError, UnknownKeyError
from .models import ModelConfig
from .normalizers import DEFAULT_DN_WINDOW, PRESETS, SIGMA_PLACEMENT, NormalizerSpec, spec_preset
from .training.data import Dataset
from .training.loop import TrainConfig

MODEL_DEFAULTS = {"kind": "mlp", "hidden": [32], "activation": "relu", "kernel": 3, "pool": True}
TRAIN_DEFAULTS = {f.name: f.default for f in dataclasses.fields(TrainConfig) if f.name != "dataset"}
NORM_DEFAULTS = {"preset": "BN", "affine": True, "dn_window": list(DEFAULT_DN_WINDOW), "allow_zero_sigma": False}
DATA_KEYS = {
    "blobs": {"kind", "count", "classes", "dim", "std", "radius", "valid_fraction"},
    "mnist-subset": {"kind", "count", "valid_count", "images", "labels", "classes"},
    "tiny-chars": {"kind", "corpus", "seq_len", "max_bytes", "valid_fraction"},
}
TOP_KEYS = {"model", "train", "data", "norm", "output_dir"}


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    train: TrainConfig
    data: dict
    norm: dict
    output_dir: Path
    source: Path | None = None

    @property
    def conventions(self) -> dict:
        return conventions_block(self.train.l1_target)

    def norm_spec(self) -> NormalizerSpec | None:
        if self.norm["preset"] == "none":
            return None
        return spec_preset(
            self.norm["preset"], 1, dn_window=tuple(self.norm["dn_window"]), sigma=self.train.sigma,
            lambda_l1=self.train.lambda_l1, affine=self.norm["affine"],
            allow_zero_sigma=self.norm["allow_zero_sigma"],
        )

    def model_config(self, data: Dataset) -> ModelConfig:
        m = self.model
        shape = data.handle.feature_shape
        if m["kind"] == "mlp":
            shape = (int(_prod(shape)),)
        elif m["kind"] == "convnet" and len(shape) != 3:
            raise ConfigError(f"convnet needs image data, dataset features have shape {shape}", "model.kind")
        elif m["kind"] == "charlstm" and data.handle.kind != "tiny-chars":
            raise ConfigError("charlstm needs the tiny-chars dataset", "model.kind")
        return ModelConfig(kind=m["kind"], input_shape=shape, hidden=tuple(m["hidden"]),
                           num_classes=data.handle.num_classes, norm=self.norm_spec(),
                           activation=m["activation"], kernel=m["kernel"], pool=m["pool"])

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        train.pop("dataset")
        return {"model": dict(self.model), "train": train, "data": dict(self.data),
                "norm": dict(self.norm), "output_dir": str(self.output_dir)}

    def replace_train(self, **changes) -> "ExperimentConfig":
        return parse_config_dict(_merge(self.to_dict(), {"train": changes}), self.source)


def _prod(shape) -> int:
    out = 1
    for s in shape:
        out *= s
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = {**out.get(k, {}), **v} if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def conventions_block(l1_target: str = "v") -> dict:
    return {
        "sigma_placement": SIGMA_PLACEMENT,
        "l1_target": l1_target,
        "l1_reduction": "lambda * sum(|a|) / element count, over all normalizer outputs of a batch",
        "region_average": "arithmetic mean over in-bounds members; windows clipped at edges, not zero-padded",
        "batch_statistics": "current-batch statistics in training and evaluation; no running averages",
    }


def _section(doc: dict, name: str, allowed: set) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object", name)
    unknown = sorted(set(sec) - allowed)
    if unknown:
        raise UnknownKeyError(f"unknown key '{name}.{unknown[0]}'", f"{name}.{unknown[0]}")
    return sec


def _typed(value, kind, field: str):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{field} must be true or false", field)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{field} must be an integer", field)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{field} must be a number", field)
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{field} must be a string", field)
        return value
    return value


def parse_config_dict(doc: dict, source: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - TOP_KEYS)
    if unknown:
        raise UnknownKeyError(f"unknown key '{unknown[0]}'", unknown[0])

    model = {**MODEL_DEFAULTS, **_section(doc, "model", set(MODEL_DEFAULTS))}
    if model["kind"] not in ("mlp", "convnet", "charlstm"):
        raise ConfigError(f"model.kind must be mlp, convnet or charlstm, got {model['kind']!r}", "model.kind")
    hidden = model["hidden"]
    if not isinstance(hidden, list) or not hidden or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden):
        raise ConfigError("model.hidden must be a non-empty list of positive integers", "model.hidden")
    if model["activation"] not in ("relu", "tanh"):
        raise ConfigError("model.activation must be relu or tanh", "model.activation")
    model["kernel"] = _typed(model["kernel"], int, "model.kernel")
    if model["kernel"] < 1 or model["kernel"] % 2 == 0:
        raise ConfigError("model.kernel must be odd and >= 1", "model.kernel")
    model["pool"] = _typed(model["pool"], bool, "model.pool")

    train_raw = {**TRAIN_DEFAULTS, **_section(doc, "train", set(TRAIN_DEFAULTS))}
    for name, default in TRAIN_DEFAULTS.items():
        train_raw[name] = _typed(train_raw[name], type(default), f"train.{name}")
    if os.environ.get("NORMKIT_SEED"):
        try:
            train_raw["seed"] = int(os.environ["NORMKIT_SEED"])
        except ValueError:
            raise ConfigError("NORMKIT_SEED must be an integer", "train.seed") from None

    data = dict(doc.get("data", {"kind": "blobs"}))
    if not isinstance(doc.get("data", {}), dict):
        raise ConfigError("'data' must be an object", "data")
    data.setdefault("kind", "blobs")
    if data["kind"] not in DATA_KEYS:
        raise ConfigError(f"data.kind must be one of {sorted(DATA_KEYS)}", "data.kind")
    _section({"data": data}, "data", DATA_KEYS[data["kind"]])

    norm = {**NORM_DEFAULTS, **_section(doc, "norm", set(NORM_DEFAULTS))}
    if norm["preset"] != "none" and norm["preset"] not in PRESETS:
        raise ConfigError(f"norm.preset must be one of {PRESETS} or 'none'", "norm.preset")
    norm["affine"] = _typed(norm["affine"], bool, "norm.affine")
    norm["allow_zero_sigma"] = _typed(norm["allow_zero_sigma"], bool, "norm.allow_zero_sigma")
    if not isinstance(norm["dn_window"], list) or len(norm["dn_window"]) != 3:
        raise ConfigError("norm.dn_window must be [channels, height, width]", "norm.dn_window")

    try:
        train = TrainConfig(dataset=data["kind"], **train_raw)
    except ConfigError as exc:
        raise ConfigError(f"train.{exc.field}: {exc}", f"train.{exc.field}") from None
    if train.sigma == 0 and norm["preset"] != "none" and not norm["allow_zero_sigma"]:
        raise ConfigError("train.sigma = 0 requires norm.allow_zero_sigma = true", "train.sigma")

    cfg = ExperimentConfig(model=model, train=train, data=data, norm=norm,
                           output_dir=Path(_typed(doc.get("output_dir", "runs/default"), str, "output_dir")),
                           source=source)
    try:
        cfg.norm_spec()
    except (ContractError, InvalidRegionError) as exc:
        raise ConfigError(f"norm: {exc}", "norm.dn_window") from None
    return cfg


def parse_config(text: str, source: Path | None = None) -> ExperimentConfig:
    """Parse a JSON config document; every error is a :class:`ConfigError`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config_dict(doc, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path)
