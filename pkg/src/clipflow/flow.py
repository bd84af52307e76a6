"""Continuous-time gradient flows of clipped training and the certainty-equivalence study."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from clipflow import ntk as ntk_mod
from clipflow.clipping import ClipConfig, apply, compute_factors
from clipflow.net import Batch, Network, mean_loss, per_sample_grads
from clipflow.optimizers import NoiseSpec, OptimizerState, dp_sgd_step

log = logging.getLogger(__name__)

FLOW_KINDS = ("gd", "heavyball", "nag", "adam", "adagrad_rmsprop")
NAG_T0 = 0.1


class FlowError(ValueError):
    pass


@dataclass
class FlowState:
    kind: str
    w: np.ndarray
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: float = 0.0

    @classmethod
    def start(cls, kind: str, w: np.ndarray, t0: float | None = None) -> "FlowState":
        if kind not in FLOW_KINDS:
            raise FlowError(f"unknown flow kind {kind!r}")
        w = np.array(w, dtype=float)
        m = np.zeros_like(w) if kind in ("heavyball", "nag", "adam") else None
        v = np.zeros_like(w) if kind in ("adam", "adagrad_rmsprop") else None
        if t0 is None:
            t0 = NAG_T0 if kind == "nag" else 0.0
        return cls(kind, w, m, v, t0)

    def pack(self) -> np.ndarray:
        return np.concatenate([x for x in (self.w, self.m, self.v) if x is not None])

    def unpack(self, y: np.ndarray, t: float) -> "FlowState":
        p = self.w.size
        parts, k = [], 1
        for x in (self.m, self.v):
            if x is None:
                parts.append(None)
            else:
                parts.append(y[k * p:(k + 1) * p].copy())
                k += 1
        return FlowState(self.kind, y[:p].copy(), parts[0], parts[1], t)


@dataclass(frozen=True)
class FlowParams:
    r: float = 1.0  # heavy-ball friction
    alpha1: float = 1.0
    alpha2: float = 1.0
    xi: float = 1e-8
    p: Callable[[float], float] = field(default=lambda t: 1.0)
    q: Callable[[float], float] = field(default=lambda t: 1.0)


def clipped_sum(net: Network, batch: Batch, clip: ClipConfig, loss: str = "mse"):
    """sum_i C_i grad l_i with factors taken from the instantaneous gradients."""
    g = per_sample_grads(net, batch, loss)
    f = compute_factors(g, clip)
    _, s = apply(g, f)
    return s, f


def flow_rhs(state: FlowState, net: Network, batch: Batch, clip: ClipConfig,
             loss: str = "mse", params: FlowParams = FlowParams()) -> FlowState:
    """Time derivative of the flow state (returned as a FlowState of rates)."""
    s, _ = clipped_sum(net.with_params(state.w), batch, clip, loss)
    n = len(batch)
    kind = state.kind
    if kind == "gd":
        return FlowState(kind, -s / n, t=1.0)
    if kind in ("heavyball", "nag"):
        if kind == "nag":
            if state.t <= 0:
                raise FlowError("the NAG flow has friction 3/t; start it at t0 > 0")
            r = 3.0 / state.t
        else:
            r = params.r
        return FlowState(kind, -state.m, s - r * state.m, t=1.0)
    if kind == "adam":
        dw = -state.m / np.sqrt(state.v + params.xi)
        dm = s - state.m / params.alpha1
        dv = (s * s - state.v) / params.alpha2
        return FlowState(kind, dw, dm, dv, t=1.0)
    dw = -s / np.sqrt(state.v + params.xi)
    dv = params.p(state.t) * (s * s) - params.q(state.t) * state.v
    return FlowState(kind, dw, None, dv, t=1.0)


@dataclass
class Trajectory:
    times: list[float]
    states: list[FlowState]
    losses: list[float]
    aborted: bool = False

    @property
    def final(self) -> FlowState:
        return self.states[-1]


def integrate(state: FlowState, rhs: Callable[[FlowState], FlowState], horizon: float,
              dt: float, loss_fn: Callable[[FlowState], float] | None = None,
              record_every: int = 1) -> Trajectory:
    """Classical fixed-step RK4 from ``state.t`` to ``state.t + horizon``.

    The step is shrunk slightly so an integer number of steps lands exactly on
    the horizon. A non-finite state stops the integration; the trajectory then
    ends at the last finite state and ``aborted`` is set.
    """
    if not dt > 0:
        raise FlowError("dt must be positive")
    if horizon < 0:
        raise FlowError("horizon must be nonnegative")
    lossf = loss_fn or (lambda s: math.nan)
    traj = Trajectory([state.t], [state], [lossf(state)])
    if horizon == 0:
        return traj
    k = max(1, math.ceil(horizon / dt - 1e-9))
    h = horizon / k
    y, t0 = state.pack(), state.t
    cur = state

    def f(t, y):
        return rhs(cur.unpack(y, t)).pack()

    for i in range(k):
        t = t0 + i * h
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y_new)):
            log.warning("flow integration hit a non-finite state at t=%g", t + h)
            if traj.states[-1] is not cur:
                traj.times.append(cur.t)
                traj.states.append(cur)
                traj.losses.append(lossf(cur))
            traj.aborted = True
            return traj
        y = y_new
        cur = cur.unpack(y, t0 + (i + 1) * h)
        if (i + 1) % record_every == 0 or i == k - 1:
            traj.times.append(cur.t)
            traj.states.append(cur)
            traj.losses.append(lossf(cur))
    return traj


def gradient_flow(net: Network, batch: Batch, clip: ClipConfig, horizon: float, dt: float,
                  loss: str = "mse", record_every: int = 1) -> Trajectory:
    """Plain clipped gradient flow w' = -(1/n) sum_i C_i grad l_i from ``net``."""
    start = FlowState.start("gd", net.params)
    return integrate(
        start,
        lambda s: flow_rhs(s, net, batch, clip, loss),
        horizon,
        dt,
        loss_fn=lambda s: mean_loss(net.with_params(s.w), batch, loss),
        record_every=record_every,
    )


# -- certainty equivalence ----------------------------------------------------


@dataclass
class CERow:
    eta: float
    seed: int
    distance: float
    flow_loss: float
    discrete_loss: float


@dataclass
class CEStudy:
    sigma: float
    etas: list[float]
    rows: list[CERow]
    flow_endpoint: np.ndarray
    mean_distance: list[float]
    mean_endpoint: list[np.ndarray]

    @property
    def decreasing(self) -> bool:
        d = self.mean_distance
        return all(b < a for a, b in zip(d, d[1:]))

    @property
    def ratio(self) -> float:
        return self.mean_distance[-1] / self.mean_distance[0]

    def summary(self) -> dict:
        return {
            "sigma": self.sigma,
            "etas": self.etas,
            "mean_distance": self.mean_distance,
            "strictly_decreasing": self.decreasing,
            "final_over_first": self.ratio,
        }


def discrete_dp_gd(net: Network, batch: Batch, clip: ClipConfig, eta: float, steps: int,
                   sigma: float, seed: int, loss: str = "mse") -> Network:
    state = OptimizerState("gd", lr=eta)
    noise = NoiseSpec(sigma, seed)
    for _ in range(steps):
        net = dp_sgd_step(state, net, batch, clip, noise, loss).net
    return net


def certainty_equivalence_study(net: Network, batch: Batch, clip: ClipConfig, etas, sigma: float,
                                seeds, horizon: float = 1.0, loss: str = "mse",
                                flow_dt: float | None = None,
                                flow_endpoint: np.ndarray | None = None) -> CEStudy:
    """Distance between noisy DP-GD at time ``horizon`` and the noiseless flow.

    For each step size the discrete run takes ``round(horizon / eta)`` steps.
    Runs whose weights blow up are dropped with a warning.
    """
    etas = [float(e) for e in etas]
    if any(b >= a for a, b in zip(etas, etas[1:])):
        raise FlowError("step sizes must be strictly decreasing")
    if flow_endpoint is None:
        dt = flow_dt or min(etas) / 10
        flow_endpoint = gradient_flow(net, batch, clip, horizon, dt, loss, record_every=10**9).final.w
    flow_loss = mean_loss(net.with_params(flow_endpoint), batch, loss)
    rows, means, endpoints = [], [], []
    for eta in etas:
        steps = int(round(horizon / eta))
        dists, ends = [], []
        for seed in seeds:
            end = discrete_dp_gd(net, batch, clip, eta, steps, sigma, seed, loss).params
            if not np.all(np.isfinite(end)):
                log.warning("eta=%g seed=%d diverged; excluded", eta, seed)
                continue
            d = float(np.linalg.norm(end - flow_endpoint))
            rows.append(CERow(eta, int(seed), d, flow_loss, mean_loss(net.with_params(end), batch, loss)))
            dists.append(d)
            ends.append(end)
        means.append(float(np.mean(dists)) if dists else math.nan)
        endpoints.append(np.mean(ends, axis=0) if ends else np.full_like(flow_endpoint, np.nan))
    return CEStudy(sigma, etas, rows, flow_endpoint, means, endpoints)


def endpoint_spread(studies: list[CEStudy]) -> list[float]:
    """Per step size, the largest distance between mean endpoints of different sigmas."""
    out = []
    for j in range(len(studies[0].etas)):
        pts = [s.mean_endpoint[j] for s in studies]
        out.append(max(
            (float(np.linalg.norm(a - b)) for i, a in enumerate(pts) for b in pts[i + 1:]),
            default=0.0,
        ))
    return out


# -- stationary points --------------------------------------------------------


@dataclass(frozen=True)
class StationaryReport:
    clipped_grad_norm: float
    loss_grad_norm: float
    loss: float
    stationary: bool
    kernel_positive_in_eigenvalues: bool | None
    classification: str


def stationary_point_check(net: Network, batch: Batch, clip: ClipConfig, loss: str = "mse",
                           threshold: float = 1e-6, loss_floor: float = 1e-6) -> StationaryReport:
    """Classify a (presumed) end state of a gradient flow.

    ``classification`` is ``zero_loss`` when L < loss_floor, ``nonzero_stationary``
    when the clipped gradient vanishes but the loss does not, and
    ``not_stationary`` otherwise. For a kernel positive in eigenvalues a
    nonzero-loss stationary point is impossible and raises.
    """
    s, f = clipped_sum(net, batch, clip, loss)
    gnorm = float(np.linalg.norm(s / len(batch)))
    dldf = ntk_mod.loss_grad_wrt_predictions(net, batch, loss)
    L = mean_loss(net, batch, loss)
    stationary = gnorm < threshold
    if not stationary:
        return StationaryReport(gnorm, float(np.linalg.norm(dldf)), L, False, None, "not_stationary")
    report = ntk_mod.analyze(net, batch, f, loss)
    pos = report.spectrum.positive_in_eigenvalues
    if L < loss_floor:
        label = "zero_loss"
    else:
        label = "nonzero_stationary"
        if pos:
            raise FlowError(
                f"stationary point with loss {L:.3e} under a kernel positive in eigenvalues"
            )
    return StationaryReport(gnorm, float(np.linalg.norm(dldf)), L, True, pos, label)
