"""Strict JSON experiment configuration.

Unknown keys anywhere in the document are rejected with their dotted path,
so a typo such as ``"optimiser"`` cannot silently fall back to a default.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from clipflow.clipping import ClipConfig
from clipflow.datasets import DatasetSpec
from clipflow.net import ACTIVATIONS, LOSSES
from clipflow.optimizers import NoiseSpec, OptimizerError, OptimizerState, SubsampleSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    hidden: tuple[int, ...] = (32,)
    activations: tuple[str, ...] | None = None  # one per hidden layer; default relu

    def hidden_activations(self) -> tuple[str, ...]:
        return self.activations or ("relu",) * len(self.hidden)


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "gd"
    lr: float | tuple[float, ...] = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    xi: float = 1e-8
    momentum: float = 0.9
    rho: float = 0.9
    jl_r: int = 64
    prior_scale: float | None = None

    def state(self) -> OptimizerState:
        lr = list(self.lr) if isinstance(self.lr, tuple) else self.lr
        return OptimizerState(
            self.kind, lr, beta1=self.beta1, beta2=self.beta2, xi=self.xi,
            momentum=self.momentum, rho=self.rho, jl_r=self.jl_r, prior_scale=self.prior_scale,
        )


@dataclass(frozen=True)
class Analyzers:
    ntk_every: int = 0
    ntk_samples: int = 64
    calibration: bool = False
    mia: bool = False
    n_bins: int = 10
    log_every: int = 1
    charts: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    network: NetworkSpec
    optimizer: OptimizerSpec
    clip: ClipConfig
    noise: NoiseSpec
    subsample: SubsampleSpec
    loss: str | None = None
    steps: int | None = None
    epochs: int | None = None
    delta: float = 1e-5
    seed: int = 0
    out: str | None = None
    analyzers: Analyzers = field(default_factory=Analyzers)

    @property
    def loss_kind(self) -> str:
        if self.loss:
            return self.loss
        return "softmax_cross_entropy" if self.dataset.classification else "mse"

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def with_mode(self, mode: str) -> "ExperimentConfig":
        return dataclasses.replace(self, clip=self.clip.with_mode(mode))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override the run seed and every section seed with it."""
        return dataclasses.replace(
            self,
            seed=seed,
            dataset=dataclasses.replace(self.dataset, seed=seed),
            noise=dataclasses.replace(self.noise, seed=seed),
            subsample=dataclasses.replace(self.subsample, seed=seed),
        )


def _to_jsonable(x):
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def _section(cls, raw, path: str, extra_defaults: dict | None = None):
    """Build dataclass ``cls`` from dict ``raw``; unknown keys raise with their path."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key (allowed: {', '.join(sorted(names))})")
    kw = dict(extra_defaults or {})
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        kw[key] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


_TOP = {
    "dataset", "network", "optimizer", "clip", "noise", "subsample", "loss", "steps",
    "epochs", "delta", "seed", "out", "analyzers",
}


def _number(value, path: str, *, integer: bool = False, positive: bool = False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok:
        raise ConfigError(f"{path}: expected {'an integer' if integer else 'a number'}, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{path}: must be positive, got {value!r}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    return value


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    for key in raw:
        if key not in _TOP:
            raise ConfigError(f"{key}: unknown key (allowed: {', '.join(sorted(_TOP))})")
    seed = _number(raw.get("seed", 0), "seed", integer=True)
    inherit = {"seed": seed}
    dataset = _section(DatasetSpec, raw.get("dataset"), "dataset", inherit)
    network = _section(NetworkSpec, raw.get("network"), "network")
    optimizer = _section(OptimizerSpec, raw.get("optimizer"), "optimizer")
    clip = _section(ClipConfig, raw.get("clip"), "clip")
    noise = _section(NoiseSpec, raw.get("noise"), "noise", inherit)
    subsample = _section(SubsampleSpec, raw.get("subsample"), "subsample",
                         {"strategy": "full_batch", **inherit})
    analyzers = _section(Analyzers, raw.get("analyzers"), "analyzers")

    for i, h in enumerate(network.hidden):
        _number(h, f"network.hidden[{i}]", integer=True, positive=True)
    acts = network.hidden_activations()
    if len(acts) != len(network.hidden):
        raise ConfigError(
            f"network.activations: {len(acts)} entries for {len(network.hidden)} hidden layers"
        )
    for i, a in enumerate(acts):
        if a not in ACTIVATIONS:
            raise ConfigError(f"network.activations[{i}]: unknown activation {a!r}")
    # building the state validates optimizer hyperparameters
    try:
        optimizer.state()
    except OptimizerError as exc:
        raise ConfigError(f"optimizer: {exc}") from None
    n_layers = len(network.hidden) + 1
    if clip.scope == "layerwise" and clip.mode in ("local", "global") and len(clip.R_r) != n_layers:
        raise ConfigError(f"clip.R_r: need {n_layers} entries (one per layer), got {len(clip.R_r)}")

    loss = raw.get("loss")
    if loss is not None and loss not in LOSSES:
        raise ConfigError(f"loss: unknown loss {loss!r} (allowed: {', '.join(LOSSES)})")
    if loss == "softmax_cross_entropy" and not dataset.classification:
        raise ConfigError("loss: cross-entropy needs a classification dataset")
    steps, epochs = raw.get("steps"), raw.get("epochs")
    if (steps is None) == (epochs is None):
        raise ConfigError("steps/epochs: give exactly one of them")
    if steps is not None:
        _number(steps, "steps", integer=True, positive=True)
    if epochs is not None:
        _number(epochs, "epochs", integer=True, positive=True)
    delta = _number(raw.get("delta", 1e-5), "delta")
    if not 0 < delta < 1:
        raise ConfigError(f"delta: must lie in (0, 1), got {delta}")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out: expected a string path")
    if analyzers.log_every < 1:
        raise ConfigError("analyzers.log_every: must be >= 1")
    if analyzers.ntk_every < 0:
        raise ConfigError("analyzers.ntk_every: must be >= 0")
    if analyzers.n_bins < 1:
        raise ConfigError("analyzers.n_bins: must be >= 1")
    if (analyzers.calibration or analyzers.mia) and not dataset.classification:
        raise ConfigError("analyzers: calibration and mia need a classification dataset")
    return ExperimentConfig(
        dataset, network, optimizer, clip, noise, subsample,
        loss=loss, steps=steps, epochs=epochs, delta=delta, seed=seed, out=out, analyzers=analyzers,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)
