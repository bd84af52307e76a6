"""Dense real linear algebra: general and symmetric eigenvalues, positivity tests.

Matrices are plain 2-D ``numpy.ndarray`` of float64. Everything here is a pure
function; inputs are copied before any in-place work.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DIM = 512
_EPS = np.finfo(float).eps


class LinalgError(ValueError):
    pass


class ConvergenceError(LinalgError):
    """Raised when the QR or Jacobi iteration runs out of sweeps."""


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: list[complex]
    is_symmetric: bool
    positive_in_eigenvalues: bool
    positive_in_quadratic_form: bool
    # weaker notion: every eigenvalue has positive real part (complex allowed)
    positive_real_parts: bool = field(default=False)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "is_symmetric": self.is_symmetric,
            "positive_in_eigenvalues": self.positive_in_eigenvalues,
            "positive_in_quadratic_form": self.positive_in_quadratic_form,
            "positive_real_parts": self.positive_real_parts,
        }


def as_matrix(m, *, square: bool = False) -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.ndim != 2:
        raise LinalgError(f"expected a 2-D matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise LinalgError(f"matrix must be square, got {a.shape[0]}x{a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise LinalgError("matrix has non-finite entries")
    return a


def positivity_tolerance(m: np.ndarray) -> float:
    return 1e-10 * max(1.0, float(np.linalg.norm(m)))


def symmetry_tolerance(m: np.ndarray) -> float:
    return 1e-10 * (1.0 + float(np.max(np.abs(m), initial=0.0)))


def is_symmetric(m, tol: float | None = None) -> bool:
    a = as_matrix(m, square=True)
    if tol is None:
        tol = symmetry_tolerance(a)
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= tol)


def sort_eigenvalues(values) -> list[complex]:
    """Descending real part, ties broken by descending imaginary part."""
    return sorted((complex(v) for v in values), key=lambda z: (-z.real, -z.imag))


# -- general (non-symmetric) eigenvalues -------------------------------------


def _balance(a: np.ndarray) -> None:
    # Parlett-Reinsch balancing with radix 2 so scaling is exact.
    radix = 2.0
    sqrdx = radix * radix
    n = a.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            c = float(np.sum(np.abs(a[:, i])) - abs(a[i, i]))
            r = float(np.sum(np.abs(a[i, :])) - abs(a[i, i]))
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f


def _hessenberg(a: np.ndarray) -> None:
    # Householder similarity reduction; only the Hessenberg part is meaningful.
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k].copy()
        alpha = float(np.linalg.norm(x))
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        vnorm2 = float(v @ v)
        if vnorm2 == 0.0:
            continue
        beta = 2.0 / vnorm2
        a[k + 1:, k:] -= beta * np.outer(v, v @ a[k + 1:, k:])
        a[:, k + 1:] -= beta * np.outer(a[:, k + 1:] @ v, v)
        a[k + 2:, k] = 0.0


def _hqr(a: np.ndarray, max_sweeps: int) -> list[complex]:
    # Francis double-shift QR on an upper Hessenberg matrix (in place).
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = 0.0
    for i in range(n):
        anorm += float(np.sum(np.abs(a[i, max(i - 1, 0):])))
    nn = n - 1
    t = 0.0
    sweeps = 0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= _EPS * s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if sweeps >= max_sweeps:
                raise ConvergenceError(
                    f"QR iteration did not converge within {max_sweeps} sweeps"
                )
            if its > 0 and its % 10 == 0:
                # exceptional shift
                t += x
                a[np.arange(nn + 1), np.arange(nn + 1)] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            sweeps += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u <= _EPS * v:
                    break
                m -= 1
            for i in range(m, nn - 1):
                a[i + 2, i] = 0.0
                if i != m:
                    a[i + 2, i - 1] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k + 1 != nn else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                # rows k..k+2, columns k..nn
                pr = a[k, k:nn + 1] + q * a[k + 1, k:nn + 1]
                if k + 1 != nn:
                    pr = pr + r * a[k + 2, k:nn + 1]
                    a[k + 2, k:nn + 1] -= pr * z
                a[k + 1, k:nn + 1] -= pr * y
                a[k, k:nn + 1] -= pr * x
                # columns k..k+2, rows l..min(nn, k+3)
                hi = min(nn, k + 3) + 1
                pc = x * a[l:hi, k] + y * a[l:hi, k + 1]
                if k + 1 != nn:
                    pc = pc + z * a[l:hi, k + 2]
                    a[l:hi, k + 2] -= pc * r
                a[l:hi, k + 1] -= pc * q
                a[l:hi, k] -= pc
    return [complex(wr[i], wi[i]) for i in range(n)]


def eigenvalues_general(m) -> list[complex]:
    """All eigenvalues of a real square matrix, with multiplicity.

    Balances, reduces to upper Hessenberg form and runs shifted QR with 2x2
    block deflation. Complex eigenvalues come out as adjacent conjugate
    pairs. Order: descending real part, then descending imaginary part.
    """
    a = as_matrix(m, square=True)
    n = a.shape[0]
    if n > MAX_DIM:
        raise LinalgError(f"dimension {n} exceeds the supported maximum {MAX_DIM}")
    if n == 0:
        return []
    a = a.copy()
    _balance(a)
    _hessenberg(a)
    return sort_eigenvalues(_hqr(a, max_sweeps=100 * n))


# -- symmetric eigenvalues ----------------------------------------------------


def _jacobi(a: np.ndarray, max_sweeps: int = 100) -> np.ndarray:
    n = a.shape[0]
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        return np.zeros(n)
    tol = 1e-12 * scale
    for _ in range(max_sweeps):
        # summed directly: sum(a*a) - sum(diag^2) cancels badly when the diagonal dominates
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off < tol:
            return np.diag(a).copy()
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(apq) < 1e-100 * abs(h):
                    t = apq / h  # theta would overflow; tan of the tiny angle
                else:
                    theta = h / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = a[q, p] = 0.0
    raise ConvergenceError(f"Jacobi iteration did not converge within {max_sweeps} sweeps")


def eigenvalues_symmetric(m, tol: float | None = None) -> list[float]:
    """Real eigenvalues of a symmetric matrix in descending order (cyclic Jacobi)."""
    a = as_matrix(m, square=True)
    if not is_symmetric(a, tol):
        raise LinalgError("matrix is not symmetric within tolerance")
    if a.shape[0] > MAX_DIM:
        raise LinalgError(f"dimension {a.shape[0]} exceeds the supported maximum {MAX_DIM}")
    a = 0.5 * (a + a.T)
    vals = _jacobi(a)
    return sorted((float(v) for v in vals), reverse=True)


# -- positivity ---------------------------------------------------------------


def quadratic_form(m, x) -> float:
    a = as_matrix(m)
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or a.shape != (v.size, v.size):
        raise LinalgError(f"dimension mismatch: matrix {a.shape}, vector {v.shape}")
    return float(v @ a @ v)


def is_positive_quadratic_form(m) -> bool:
    """x^T m x > 0 for all x != 0, decided on the symmetric part."""
    a = as_matrix(m, square=True)
    sym = 0.5 * (a + a.T)
    lam_min = eigenvalues_symmetric(sym)[-1] if a.shape[0] else 0.0
    return lam_min > positivity_tolerance(a)


def spectrum_report(m) -> SpectrumReport:
    a = as_matrix(m, square=True)
    tol = positivity_tolerance(a)
    eig = eigenvalues_general(a)
    return SpectrumReport(
        eigenvalues=eig,
        is_symmetric=is_symmetric(a),
        positive_in_eigenvalues=all(z.real > tol and abs(z.imag) <= tol for z in eig),
        positive_in_quadratic_form=is_positive_quadratic_form(a),
        positive_real_parts=all(z.real > tol for z in eig),
    )


# -- counterexample fixtures --------------------------------------------------


@dataclass(frozen=True)
class Fixture:
    name: str
    matrix: np.ndarray
    expected: dict
    parts: dict = field(default_factory=dict)


def counterexample_fixtures() -> list[Fixture]:
    """The four counterexamples separating symmetry and the two positivity notions."""
    m1 = np.array([[1.0, 1.0], [1.0, 2.0]])
    m2 = np.diag([1.0, 0.1])
    a2 = np.array([[-1.0, 3.0], [-3.0, 8.0]])
    a3 = np.array([[1.0, 1.0], [-1.0, 1.0]])
    h1 = np.array([[8.0 / 9.0, 2.0], [2.0, 7.0]])
    c1 = np.diag([0.9, 0.4])
    h2 = np.array([[3.0, 2.0], [2.0, 2.0]])
    c2 = np.diag([0.1, 0.6])
    h1_var = h1.copy()
    h1_var[0, 0] = 0.7
    base = h1 @ c1 + h2 @ c2
    variant = h1_var @ c1 + h2 @ c2
    r5 = math.sqrt(5.0)
    # Both sums happen to come out symmetric: [[1.1, 2], [2, 4]] and
    # [[0.93, 2], [2, 4]]. The base one is positive definite (det 0.4).
    base_min = (5.1 - math.sqrt(5.1**2 - 4 * 0.4)) / 2
    return [
        Fixture(
            "fact1_product",
            m1 @ m2,
            {
                "is_symmetric": False,
                "positive_in_eigenvalues": True,
                "positive_in_quadratic_form": False,
                "witness": ([1.0, -2.0], -0.4),
            },
            {"M1": m1, "M2": m2},
        ),
        Fixture(
            "fact2_positive_eigenvalues",
            a2,
            {
                "positive_in_eigenvalues": True,
                "positive_in_quadratic_form": False,
                "eigenvalues": [(7 + 3 * r5) / 2, (7 - 3 * r5) / 2],
                "witness": ([1.0, 0.0], -1.0),
            },
        ),
        Fixture(
            "fact3_positive_quadratic_form",
            a3,
            {
                "positive_in_eigenvalues": False,
                "positive_in_quadratic_form": True,
                "positive_real_parts": True,
                "eigenvalues": [1 + 1j, 1 - 1j],
            },
        ),
        Fixture(
            "fact4_layerwise_sum",
            base,
            {
                "is_symmetric": True,
                "positive_in_eigenvalues": True,
                "min_eigenvalue": base_min,
                "determinant": 0.4,
                "claimed_zero_eigenvalue": True,
            },
            {"H1": h1, "C1": c1, "H2": h2, "C2": c2},
        ),
        Fixture(
            "fact4_layerwise_sum_variant",
            variant,
            {
                "is_symmetric": True,
                "positive_in_eigenvalues": False,
                "determinant": -0.28,
            },
            {"H1": h1_var, "C1": c1, "H2": h2, "C2": c2},
        ),
    ]


@dataclass(frozen=True)
class FixtureCheck:
    fact: str
    passed: bool
    details: dict


def _close(a, b, tol) -> bool:
    return abs(complex(a) - complex(b)) <= tol


def _eig_match(got: list[complex], want, tol: float) -> bool:
    want = sort_eigenvalues(want)
    return len(got) == len(want) and all(_close(a, b, tol) for a, b in zip(got, want))


def check_fixtures() -> list[FixtureCheck]:
    """Verify the four counterexample facts; one entry per fact."""
    fx = {f.name: f for f in counterexample_fixtures()}
    out = []

    f = fx["fact1_product"]
    rep = spectrum_report(f.matrix)
    x, val = f.expected["witness"]
    q = quadratic_form(f.matrix, x)
    out.append(FixtureCheck("fact1", (
        _close(q, val, 1e-10)
        and rep.is_symmetric is False
        and rep.positive_in_eigenvalues
        and not rep.positive_in_quadratic_form
        and is_positive_quadratic_form(f.parts["M1"])
        and is_positive_quadratic_form(f.parts["M2"])
    ), {"quadratic_form": q, "eigenvalues": [z.real for z in rep.eigenvalues]}))

    f = fx["fact2_positive_eigenvalues"]
    rep = spectrum_report(f.matrix)
    x, val = f.expected["witness"]
    q = quadratic_form(f.matrix, x)
    out.append(FixtureCheck("fact2", (
        _eig_match(rep.eigenvalues, f.expected["eigenvalues"], 1e-8)
        and rep.positive_in_eigenvalues
        and not rep.positive_in_quadratic_form
        and _close(q, val, 1e-10)
    ), {"eigenvalues": [z.real for z in rep.eigenvalues], "quadratic_form": q}))

    f = fx["fact3_positive_quadratic_form"]
    rep = spectrum_report(f.matrix)
    out.append(FixtureCheck("fact3", (
        _eig_match(rep.eigenvalues, f.expected["eigenvalues"], 1e-8)
        and not rep.positive_in_eigenvalues
        and rep.positive_in_quadratic_form
        and rep.positive_real_parts
    ), {"eigenvalues": [[z.real, z.imag] for z in rep.eigenvalues]}))

    base, var = fx["fact4_layerwise_sum"], fx["fact4_layerwise_sum_variant"]
    rb, rv = spectrum_report(base.matrix), spectrum_report(var.matrix)
    det_b = float(np.linalg.det(base.matrix))
    det_v = float(np.linalg.det(var.matrix))
    min_b = min(z.real for z in rb.eigenvalues)
    out.append(FixtureCheck("fact4", (
        _close(det_v, var.expected["determinant"], 1e-10)
        and not rv.positive_in_eigenvalues
        and rb.positive_in_eigenvalues
        and _close(min_b, base.expected["min_eigenvalue"], 1e-10)
        and all(is_positive_quadratic_form(base.parts[k]) for k in ("H1", "H2"))
        and all(is_positive_quadratic_form(var.parts[k]) for k in ("H1", "H2"))
    ), {
        "variant_determinant": det_v,
        "variant_eigenvalues": [z.real for z in rv.eigenvalues],
        "base_min_eigenvalue": min_b,
        "base_zero_eigenvalue_claim_holds": abs(min_b) <= 1e-10,
    }))
    return out
