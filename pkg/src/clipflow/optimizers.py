"""Discrete DP training steps: GD/SGD, Adam, heavy ball, RMSprop, SGLD, SGD-JL.

Every step draws its Gaussian noise from the counter-based stream keyed by
``(noise.seed, state.t)``, so paired runs that differ only in clipping see
identical noise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from clipflow import rng
from clipflow.clipping import ClipConfig, ClipFactors, apply, batch_clip, compute_factors, factors_from_norms
from clipflow.net import Batch, Network, PerSampleGrads, ordered_sum, per_sample_grads

log = logging.getLogger(__name__)

KINDS = ("gd", "sgd", "adam", "heavyball", "rmsprop", "sgld", "sgd_jl")
STRATEGIES = ("full_batch", "poisson", "fixed_size")


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise OptimizerError(f"sigma must be nonnegative, got {self.sigma}")


@dataclass(frozen=True)
class SubsampleSpec:
    strategy: str = "fixed_size"
    p: float = 1.0
    B: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise OptimizerError(f"unknown batch strategy {self.strategy!r}")
        if self.strategy == "poisson" and not 0 < self.p <= 1:
            raise OptimizerError(f"sampling probability must lie in (0, 1], got {self.p}")
        if self.strategy == "fixed_size" and self.B < 1:
            raise OptimizerError(f"fixed-size batches need B >= 1, got {self.B}")

    def sampling_rate(self, n: int) -> float:
        if self.strategy == "full_batch":
            return 1.0
        if self.strategy == "poisson":
            return self.p
        return min(self.B, n) / n


def subsample(spec: SubsampleSpec, n: int, t: int) -> np.ndarray:
    """Sorted index set for step ``t``; a pure function of (spec.seed, t)."""
    if n < 1:
        raise OptimizerError("cannot subsample an empty dataset")
    if spec.strategy == "full_batch":
        return np.arange(n)
    gen = rng.generator(spec.seed, t, "subsample")
    if spec.strategy == "poisson":
        return np.flatnonzero(gen.random(n) < spec.p)
    if spec.B > n:
        raise OptimizerError(f"batch size {spec.B} exceeds dataset size {n}")
    return np.sort(gen.choice(n, size=spec.B, replace=False))


@dataclass
class OptimizerState:
    kind: str = "gd"
    lr: float | list[float] = 0.1
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    xi: float = 1e-8
    momentum: float = 0.9
    rho: float = 0.9
    jl_r: int = 64
    prior_scale: float | None = None
    m: np.ndarray | None = field(default=None, repr=False)
    u: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise OptimizerError(f"unknown optimizer {self.kind!r}")
        for name in ("beta1", "beta2", "momentum", "rho"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise OptimizerError(f"{name} must lie in [0, 1), got {v}")
        if not self.xi > 0:
            raise OptimizerError("xi must be positive")
        if self.jl_r < 1:
            raise OptimizerError("JL projection count r must be >= 1")

    def learning_rate(self) -> float:
        if isinstance(self.lr, (list, tuple)):
            eta = float(self.lr[min(self.t, len(self.lr) - 1)])
        else:
            eta = float(self.lr)
        if not eta > 0:
            raise OptimizerError(f"learning rate must be positive, got {eta}")
        return eta

    def init_buffers(self, n_params: int) -> None:
        if self.kind in ("adam", "heavyball"):
            self.m = np.zeros(n_params)
        if self.kind in ("adam", "rmsprop"):
            self.u = np.zeros(n_params)


@dataclass
class StepResult:
    net: Network
    state: OptimizerState
    factors: ClipFactors | None
    losses: np.ndarray | None
    batch_size: int


def noise_vector(net: Network, clip: ClipConfig, noise: NoiseSpec, t: int) -> np.ndarray:
    """sigma*R*z for flat clipping, sigma*R_r*z_r per block for layerwise."""
    if noise.sigma == 0:
        return np.zeros(net.n_params)
    z = rng.gaussian(noise.seed, t, net.n_params, "noise")
    if clip.scope == "flat":
        return noise.sigma * clip.R * z
    clip.check_layers(net.n_layers)
    out = np.empty_like(z)
    for sl, R_r in zip(net.layer_slices, clip.R_r):
        out[sl] = noise.sigma * R_r * z[sl]
    return out


def jl_norm_estimates(flat: np.ndarray, r: int, seed: int, t: int, chunk: int = 256) -> np.ndarray:
    """M_i = sqrt(mean_j (v_i . u_j)^2) with u_j ~ N(0, I)."""
    if r < 1:
        raise OptimizerError("JL projection count r must be >= 1")
    n, dim = flat.shape
    acc = np.zeros(n)
    for c, start in enumerate(range(0, r, chunk)):
        k = min(chunk, r - start)
        u = rng.gaussian(seed, t, k * dim, f"jl/{c}").reshape(k, dim)
        proj = flat @ u.T
        acc += np.sum(proj * proj, axis=1)
    return np.sqrt(acc / r)


def _privatized(state, net, batch, clip, noise, loss, factors_fn=None):
    """Clipped, noised mean gradient (V-bar + noise) / |I| and the factors used."""
    clip.check_layers(net.n_layers)
    g = per_sample_grads(net, batch, loss)
    if clip.mode == "batch":
        return batch_clip(ordered_sum(g.flat) / g.n, clip.R), None, g
    f = factors_fn(g) if factors_fn else compute_factors(g, clip)
    _, vbar = apply(g, f)
    return (vbar + noise_vector(net, clip, noise, state.t)) / g.n, f, g


def _begin(state: OptimizerState, net: Network, batch: Batch):
    if len(batch) == 0:
        log.warning("step %d: empty batch, step skipped", state.t)
        state.t += 1
        return None
    if state.kind in ("adam", "heavyball", "rmsprop"):
        buf = state.m if state.kind != "rmsprop" else state.u
        if buf is None:
            raise OptimizerError(f"{state.kind} buffers are uninitialized; call init_buffers")
        if buf.shape != (net.n_params,):
            raise OptimizerError("optimizer buffers do not match the parameter count")
    return state.learning_rate()


def _finish(state, net, params, f, g) -> StepResult:
    state.t += 1
    return StepResult(net.with_params(params), state, f, g.losses, g.n)


def _skipped(state, net) -> StepResult:
    return StepResult(net, state, None, None, 0)


def skip_step(state: OptimizerState, net: Network) -> StepResult:
    """Advance the step counter without touching the weights (empty minibatch)."""
    log.warning("step %d: empty batch, step skipped", state.t)
    state.t += 1
    return _skipped(state, net)


def dp_sgd_step(state, net, batch, clip, noise, loss="mse") -> StepResult:
    """w <- w - (eta/|I|) (sum_i C_i g_i + sigma R z)."""
    eta = _begin(state, net, batch)
    if eta is None:
        return _skipped(state, net)
    gt, f, g = _privatized(state, net, batch, clip, noise, loss)
    return _finish(state, net, net.params - eta * gt, f, g)


def dp_adam_step(state, net, batch, clip, noise, loss="mse") -> StepResult:
    """Adam on the privatized gradient, without bias correction.

    m <- b1 m + (1-b1) g;  u <- b2 u + (1-b2) g*g;  w <- w - eta m / (sqrt(u) + xi)
    """
    eta = _begin(state, net, batch)
    if eta is None:
        return _skipped(state, net)
    gt, f, g = _privatized(state, net, batch, clip, noise, loss)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * gt
    state.u = state.beta2 * state.u + (1.0 - state.beta2) * (gt * gt)
    return _finish(state, net, net.params - eta * state.m / (np.sqrt(state.u) + state.xi), f, g)


def dp_heavyball_step(state, net, batch, clip, noise, loss="mse") -> StepResult:
    eta = _begin(state, net, batch)
    if eta is None:
        return _skipped(state, net)
    gt, f, g = _privatized(state, net, batch, clip, noise, loss)
    state.m = state.momentum * state.m + gt
    return _finish(state, net, net.params - eta * state.m, f, g)


def dp_rmsprop_step(state, net, batch, clip, noise, loss="mse") -> StepResult:
    eta = _begin(state, net, batch)
    if eta is None:
        return _skipped(state, net)
    gt, f, g = _privatized(state, net, batch, clip, noise, loss)
    state.u = state.rho * state.u + (1.0 - state.rho) * (gt * gt)
    return _finish(state, net, net.params - eta * gt / np.sqrt(state.u + state.xi), f, g)


def gaussian_prior_grad(w: np.ndarray, scale: float | None) -> np.ndarray:
    """Gradient of log N(0, scale^2 I); ``None`` means a flat prior."""
    if scale is None:
        return np.zeros_like(w)
    return -w / (scale * scale)


def dp_sgld_step(state, net, batch, clip, noise, loss="mse", n_total: int | None = None) -> StepResult:
    """w <- w - eta (V/|I| - grad log p(w) / n) + N(0, eta I).

    The Langevin noise comes from the ``sgld`` stream; ``noise.sigma`` is not
    used. The returned weights are a posterior sample.
    """
    eta = _begin(state, net, batch)
    if eta is None:
        return _skipped(state, net)
    n_total = n_total or len(batch)
    clip.check_layers(net.n_layers)
    g = per_sample_grads(net, batch, loss)
    f = compute_factors(g, clip)
    _, vbar = apply(g, f)
    drift = vbar / g.n - gaussian_prior_grad(net.params, state.prior_scale) / n_total
    langevin = np.sqrt(eta) * rng.gaussian(noise.seed, state.t, net.n_params, "sgld")
    return _finish(state, net, net.params - eta * drift + langevin, f, g)


def jl_factors(g: PerSampleGrads, clip: ClipConfig, r: int, seed: int, t: int) -> ClipFactors:
    """Flat clipping factors from JL norm estimates instead of exact norms."""
    est = jl_norm_estimates(g.flat, r, seed, t)
    if clip.mode == "local":
        return ClipFactors("flat", "local", factors_from_norms(est, clip.R))
    if clip.mode == "global":
        c = factors_from_norms(np.array([est.max(initial=0.0)]), clip.R)[0]
        return ClipFactors("flat", "global", np.full(g.n, c))
    raise OptimizerError(f"DP-SGD-JL supports local or global clipping, not {clip.mode!r}")


def dp_sgd_jl_step(state, net, batch, clip, noise, loss="mse") -> StepResult:
    if clip.scope != "flat":
        raise OptimizerError("DP-SGD-JL uses flat clipping")
    eta = _begin(state, net, batch)
    if eta is None:
        return _skipped(state, net)
    gt, f, g = _privatized(
        state, net, batch, clip, noise, loss,
        factors_fn=lambda g: jl_factors(g, clip, state.jl_r, noise.seed, state.t),
    )
    return _finish(state, net, net.params - eta * gt, f, g)


STEPS = {
    "gd": dp_sgd_step,
    "sgd": dp_sgd_step,
    "adam": dp_adam_step,
    "heavyball": dp_heavyball_step,
    "rmsprop": dp_rmsprop_step,
    "sgld": dp_sgld_step,
    "sgd_jl": dp_sgd_jl_step,
}


def step(state, net, batch, clip, noise, loss="mse", **kw) -> StepResult:
    return STEPS[state.kind](state, net, batch, clip, noise, loss, **kw)
