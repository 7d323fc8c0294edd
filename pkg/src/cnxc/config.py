"""Plain-text key=value run configuration.

Every tunable default lives here so a run can be audited and replayed: the
fully-resolved config is written next to each command's outputs. Unknown
keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .dataset import Pipeline
from .errors import ParameterError
from .imaging import ClaheParams
from .model import BlockSpec, ModelConfig
from .train import Hyper


@dataclass
class RunConfig:
    seed: int = 0
    # training (Algorithm defaults: lr 1e-4, batch 32, epochs 20, patience 3)
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    patience: int = 3
    lr_factor: float = 0.1
    min_delta: float = 1e-4
    stop_patience: int = 6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    augment: bool = True
    threads: int = 1
    # architecture
    block_filters: tuple = (32, 64, 128, 128, 128)
    kernel: int = 3
    conv_flavor: str = "standard"  # or "separable"
    batchnorm: bool = True
    dense_widths: tuple = (512,)
    dropout_p: float = 0.5
    padding: str = "same"
    input_size: int = 150
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5
    # preprocessing
    clahe_enabled: bool = True
    clahe_tiles_x: int = 8
    clahe_tiles_y: int = 8
    clahe_clip: float = 2.0
    shear_max: float = 0.2
    preprocess_order: tuple = ("clahe", "resize", "augment", "normalize")
    # dataset
    split_train: float = 0.8
    split_val: float = 0.1
    split_test: float = 0.1

    def model_config(self) -> ModelConfig:
        blocks = tuple(
            BlockSpec(f, self.kernel, self.conv_flavor, self.batchnorm)
            for f in self.block_filters
        )
        return ModelConfig(
            input_h=self.input_size,
            input_w=self.input_size,
            blocks=blocks,
            dense_widths=self.dense_widths,
            dropout_p=self.dropout_p,
            padding=self.padding,
            bn_momentum=self.bn_momentum,
            bn_epsilon=self.bn_epsilon,
        )

    def pipeline(self) -> Pipeline:
        clahe = (
            ClaheParams(self.clahe_tiles_x, self.clahe_tiles_y, self.clahe_clip)
            if self.clahe_enabled
            else None
        )
        return Pipeline(
            input_h=self.input_size,
            input_w=self.input_size,
            clahe_params=clahe,
            order=self.preprocess_order,
            shear_max=self.shear_max,
        )

    def hyper(self) -> Hyper:
        return Hyper(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            patience=self.patience,
            lr_factor=self.lr_factor,
            min_delta=self.min_delta,
            stop_patience=self.stop_patience,
            beta1=self.adam_beta1,
            beta2=self.adam_beta2,
            epsilon=self.adam_epsilon,
            augment=self.augment,
            threads=self.threads,
        )

    def fractions(self):
        return (self.split_train, self.split_val, self.split_test)


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(name: str, text: str, default):
    if isinstance(default, bool):
        if text.lower() not in _BOOL:
            raise ParameterError(f"config key '{name}' expects a boolean, got {text!r}")
        return _BOOL[text.lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if all(isinstance(d, int) for d in default) and default:
            return tuple(int(t) for t in items)
        return tuple(items)
    return text


def parse_run_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno} is not key=value: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ParameterError(f"unknown config key '{key}' on line {lineno}")
        try:
            parsed = _parse_value(key, value, getattr(RunConfig(), key))
        except ValueError:
            raise ParameterError(f"bad value for config key '{key}' on line {lineno}: {value!r}") from None
        setattr(cfg, key, parsed)
    return cfg


def serialize_run_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name}={text}")
    return "\n".join(lines) + "\n"
