"""Empirical NTK matrices, their clipped variants and spectrum classification.

For a network with ``M`` outputs the kernel is indexed by (sample, output)
pairs in the same row order as :func:`clipflow.net.jacobian`, so it is
``nM x nM``. For scalar-output regression that is the familiar ``n x n`` Gram
matrix. Clipping factors act per sample and are repeated over the ``M``
output rows of that sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clipflow import linalg
from clipflow.clipping import ClipFactors
from clipflow.net import Batch, Network, jacobian, per_sample_loss, forward

KERNEL_KINDS = ("H", "HC", "cH", "sum_HrCr", "sum_Hrcr")


class NTKError(ValueError):
    pass


@dataclass(frozen=True)
class NTKReport:
    kind: str
    matrix: np.ndarray
    spectrum: linalg.SpectrumReport
    predicted_loss_derivative: float | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": int(self.matrix.shape[0])}
        d.update(self.spectrum.to_dict())
        d["predicted_loss_derivative"] = self.predicted_loss_derivative
        return d


def ntk(net: Network, batch: Batch) -> np.ndarray:
    """H = J J^T."""
    j = jacobian(net, batch)
    h = j @ j.T
    return 0.5 * (h + h.T)


def per_layer_ntk(net: Network, batch: Batch) -> list[np.ndarray]:
    """H_r = J_r J_r^T for each layer block; they sum to H."""
    j = jacobian(net, batch)
    out = []
    for sl in net.layer_slices:
        jr = j[:, sl]
        h = jr @ jr.T
        out.append(0.5 * (h + h.T))
    return out


def _rows(values: np.ndarray, dim: int) -> np.ndarray:
    n = values.shape[0]
    if dim % n:
        raise NTKError(f"{n} factors do not divide a kernel of size {dim}")
    return np.repeat(values, dim // n, axis=0)


def clipped_kernel(kernel, factors: ClipFactors) -> np.ndarray:
    """H diag(C), c H, sum_r H_r diag(C_r) or sum_r c_r H_r.

    ``kernel`` is a single matrix for flat factors and the list of per-layer
    matrices for layerwise factors.
    """
    if factors.scope == "flat":
        h = linalg.as_matrix(kernel, square=True)
        c = _rows(factors.values, h.shape[0])
        if factors.mode == "global":
            return c[0] * h
        return h * c[None, :]
    hs = [linalg.as_matrix(k, square=True) for k in kernel]
    if factors.values.ndim != 2 or factors.values.shape[1] != len(hs):
        raise NTKError(f"need factors for {len(hs)} layers, got shape {factors.values.shape}")
    total = np.zeros_like(hs[0])
    for r, h in enumerate(hs):
        c = _rows(factors.values[:, r], h.shape[0])
        total += c[0] * h if factors.mode == "global" else h * c[None, :]
    return total


def kernel_kind(factors: ClipFactors | None) -> str:
    if factors is None or factors.mode in ("none", "batch"):
        return "H"
    if factors.scope == "flat":
        return "cH" if factors.mode == "global" else "HC"
    return "sum_Hrcr" if factors.mode == "global" else "sum_HrCr"


def classify(kernel) -> linalg.SpectrumReport:
    return linalg.spectrum_report(kernel)


def loss_grad_wrt_predictions(net: Network, batch: Batch, loss: str) -> np.ndarray:
    """Per-sample derivatives d l_i / d f_i, flattened in kernel row order."""
    f, _ = forward(net, batch)
    _, d = per_sample_loss(f, batch.targets, loss)
    return d.reshape(-1)


def predict_loss_derivative(kernel, loss_grad, n: int | None = None) -> float:
    """-(1/n^2) g K g^T for the flow dL/dt under kernel K.

    ``n`` is the number of samples; it defaults to the kernel size, which is
    right for scalar outputs.
    """
    k = linalg.as_matrix(kernel, square=True)
    g = np.asarray(loss_grad, dtype=float).reshape(-1)
    if g.size != k.shape[0]:
        raise NTKError(f"loss gradient has {g.size} entries, kernel is {k.shape[0]}x{k.shape[0]}")
    n = n or k.shape[0]
    return -linalg.quadratic_form(k, g) / (n * n)


def analyze(net: Network, batch: Batch, factors: ClipFactors | None, loss: str = "mse") -> NTKReport:
    """Build the kernel implied by ``factors`` at the current weights and classify it."""
    kind = kernel_kind(factors)
    if kind == "H":
        k = ntk(net, batch)
    elif factors.scope == "flat":
        k = clipped_kernel(ntk(net, batch), factors)
    else:
        k = clipped_kernel(per_layer_ntk(net, batch), factors)
    g = loss_grad_wrt_predictions(net, batch, loss)
    return NTKReport(kind, k, classify(k), predict_loss_derivative(k, g, len(batch)))


@dataclass(frozen=True)
class ShrinkageReport:
    eig_h: list[float]
    eig_hc: list[float]
    holds: bool
    strict: bool
    max_excess: float


def eig_shrinkage_check(h, c, tol: float = 1e-10) -> ShrinkageReport:
    """Compare the j-th largest eigenvalues of H C and H for diagonal C <= I."""
    h = linalg.as_matrix(h, square=True)
    cdiag = np.diag(linalg.as_matrix(c, square=True)) if np.ndim(c) == 2 else np.asarray(c, dtype=float)
    if np.any(cdiag <= 0) or np.any(cdiag > 1):
        raise NTKError("clipping factors must lie in (0, 1]")
    eh = linalg.eigenvalues_symmetric(h)
    ehc = [z.real for z in linalg.eigenvalues_general(h * cdiag[None, :])]
    diffs = [a - b for a, b in zip(ehc, eh)]
    return ShrinkageReport(
        eig_h=eh,
        eig_hc=ehc,
        holds=all(d <= tol for d in diffs),
        strict=all(d < 0 for d in diffs),
        max_excess=max(diffs),
    )
