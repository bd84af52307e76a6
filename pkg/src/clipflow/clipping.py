"""Per-sample clipping factors (local/global, flat/layerwise) and batch clipping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clipflow.net import PerSampleGrads, ordered_sum

SCOPES = ("flat", "layerwise")
MODES = ("local", "global", "none", "batch")


class ClipError(ValueError):
    pass


@dataclass(frozen=True)
class ClipConfig:
    scope: str = "flat"
    mode: str = "local"
    R: float = 1.0
    R_r: tuple[float, ...] = ()

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ClipError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.mode not in MODES:
            raise ClipError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.R > 0:
            raise ClipError(f"R must be positive, got {self.R}")
        object.__setattr__(self, "R_r", tuple(float(r) for r in self.R_r))
        if any(not r > 0 for r in self.R_r):
            raise ClipError("every R_r must be positive")
        if self.scope == "layerwise" and not self.R_r:
            raise ClipError("layerwise clipping needs R_r")

    def check_layers(self, n_layers: int) -> None:
        if self.scope == "layerwise" and len(self.R_r) != n_layers:
            raise ClipError(f"R_r has {len(self.R_r)} entries, network has {n_layers} layers")

    def with_mode(self, mode: str) -> "ClipConfig":
        return ClipConfig(self.scope, mode, self.R, self.R_r)

    def to_dict(self) -> dict:
        return {"scope": self.scope, "mode": self.mode, "R": self.R, "R_r": list(self.R_r)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClipConfig":
        return cls(d.get("scope", "flat"), d.get("mode", "local"), float(d.get("R", 1.0)),
                   tuple(d.get("R_r", ())))


@dataclass(frozen=True)
class ClipFactors:
    """Clipping factors: shape (n,) for flat scope, (n, d) for layerwise."""

    scope: str
    mode: str
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def matrix(self, r: int | None = None) -> np.ndarray:
        """Diagonal clipping matrix, for layer ``r`` when layerwise."""
        v = self.values if r is None else self.values[:, r]
        return np.diag(v)

    def summary(self) -> tuple[float, float]:
        return float(np.min(self.values)), float(np.mean(self.values))


def factors_from_norms(norms: np.ndarray, R) -> np.ndarray:
    """min{1, R / norm} with the zero-norm case defined as 1."""
    norms = np.asarray(norms, dtype=float)
    R = np.broadcast_to(np.asarray(R, dtype=float), norms.shape)
    out = np.ones_like(norms)
    mask = norms > 0.0
    out[mask] = np.minimum(1.0, R[mask] / norms[mask])
    return out


def _global(norms: np.ndarray, R) -> np.ndarray:
    # one factor per column, computed from the largest norm
    peak = np.max(norms, axis=0, keepdims=True)
    return np.broadcast_to(factors_from_norms(peak, R), norms.shape).copy()


def local_flat_factors(g: PerSampleGrads, R: float) -> ClipFactors:
    return ClipFactors("flat", "local", factors_from_norms(g.norms(), R))


def global_flat_factor(g: PerSampleGrads, R: float) -> ClipFactors:
    return ClipFactors("flat", "global", _global(g.norms(), R))


def _check_lengths(g: PerSampleGrads, R_r) -> np.ndarray:
    R_r = np.asarray(R_r, dtype=float)
    if R_r.shape != (g.n_layers,):
        raise ClipError(f"R_r has {R_r.size} entries, gradients have {g.n_layers} layers")
    return R_r


def local_layerwise_factors(g: PerSampleGrads, R_r) -> ClipFactors:
    R_r = _check_lengths(g, R_r)
    return ClipFactors("layerwise", "local", factors_from_norms(g.layer_norms(), R_r[None, :]))


def global_layerwise_factors(g: PerSampleGrads, R_r) -> ClipFactors:
    R_r = _check_lengths(g, R_r)
    return ClipFactors("layerwise", "global", _global(g.layer_norms(), R_r[None, :]))


def compute_factors(g: PerSampleGrads, cfg: ClipConfig) -> ClipFactors:
    """Factors for any config. Modes ``none`` and ``batch`` give all ones."""
    if cfg.mode in ("none", "batch"):
        shape = (g.n,) if cfg.scope == "flat" else (g.n, g.n_layers)
        return ClipFactors(cfg.scope, cfg.mode, np.ones(shape))
    if cfg.scope == "flat":
        fn = local_flat_factors if cfg.mode == "local" else global_flat_factor
        return fn(g, cfg.R)
    fn = local_layerwise_factors if cfg.mode == "local" else global_layerwise_factors
    return fn(g, cfg.R_r)


def expand(g: PerSampleGrads, f: ClipFactors) -> np.ndarray:
    """Per-coordinate scale array of shape (n, P)."""
    if f.n != g.n:
        raise ClipError(f"{f.n} factors for {g.n} samples")
    if f.scope == "flat":
        if f.values.ndim != 1:
            raise ClipError("flat factors must be one per sample")
        return np.broadcast_to(f.values[:, None], g.flat.shape)
    if f.values.shape != (g.n, g.n_layers):
        raise ClipError(f"layerwise factors of shape {f.values.shape}, expected {(g.n, g.n_layers)}")
    scale = np.empty_like(g.flat)
    for r, sl in enumerate(g.layer_slices):
        scale[:, sl] = f.values[:, r:r + 1]
    return scale


def apply(g: PerSampleGrads, f: ClipFactors) -> tuple[PerSampleGrads, np.ndarray]:
    """Clipped per-sample gradients and their sum (ascending sample order)."""
    clipped = g.replace(g.flat * expand(g, f))
    return clipped, ordered_sum(clipped.flat)


def batch_clip(mean_grad, R: float) -> np.ndarray:
    """Non-private baseline: clip the already averaged gradient to norm R."""
    if not R > 0:
        raise ClipError(f"R must be positive, got {R}")
    v = np.asarray(mean_grad, dtype=float)
    norm = float(np.sqrt(np.sum(v * v)))
    return v * (factors_from_norms(np.array([norm]), R)[0])
