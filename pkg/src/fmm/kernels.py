"""Kernel families and their integrated forms.

Each family defines a smoothing kernel ``h(t, tau)`` over Brownian increments
and the integrated kernel

    h_tilde(t, tau) = integral of h(t, u) du over u in [tau, t_n],

which, convolved with white noise, gives the trajectory process. All
integrated kernels here are non-increasing in ``tau`` and plateau at 1 for
``tau`` far enough in the past (IBM grows linearly instead, normalized by the
domain length).

Families
--------
BM   point mass at ``tau = t``; ``h_tilde`` is a unit step.
IBM  indicator of ``0 < tau <= t``; ``h_tilde`` is a ramp.
TU   triangle on ``[t - phi, t]`` with apex ``2/phi`` at ``tau = t`` (memory).
TD   triangle on ``[t, t + phi]`` with apex ``2/phi`` at ``tau = t`` (perception).
G    Gaussian density in ``tau`` with mean ``t`` and standard deviation ``phi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

FAMILIES = ("BM", "IBM", "TU", "TD", "G")
PHI_FREE = ("BM", "IBM")

# standardized time domain
T0, TN = 0.0, 1.0


@dataclass(frozen=True)
class KernelSpec:
    family: str
    phi: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.family not in PHI_FREE and not (np.isfinite(self.phi) and self.phi > 0):
            raise ValueError(f"{self.family} kernel needs phi > 0, got {self.phi}")

    @property
    def has_phi(self) -> bool:
        return self.family not in PHI_FREE


@dataclass(frozen=True)
class KnotGrid:
    knots: np.ndarray

    @classmethod
    def regular(cls, m: int) -> "KnotGrid":
        if m < 2:
            raise ValueError("need at least 2 knots")
        return cls(np.linspace(T0, TN, m))

    @property
    def m(self) -> int:
        return self.knots.size

    @property
    def spacing(self) -> float:
        return (TN - T0) / (self.m - 1)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights over the knots; they sum to ``TN - T0``."""
        w = np.full(self.m, self.spacing)
        w[0] = w[-1] = self.spacing / 2
        return w


@dataclass(frozen=True)
class BasisMatrix:
    H: np.ndarray
    kernel: KernelSpec
    warp_id: str
    query_times: np.ndarray

    @property
    def shape(self):
        return self.H.shape


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite kernel argument")


def h_values(kernel: KernelSpec, t, tau):
    """Vectorized kernel ``h(t, tau)``. Not defined for the BM point mass."""
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    fam, phi = kernel.family, kernel.phi
    if fam == "BM":
        raise ValueError("BM kernel is a point mass; only its integrated form is defined")
    if fam == "IBM":
        return ((tau > T0) & (tau <= t)).astype(float)
    if fam == "TU":
        lag = t - tau
        return np.where((lag >= 0) & (lag <= phi), (2.0 / phi) * (1.0 - lag / phi), 0.0)
    if fam == "TD":
        lead = tau - t
        return np.where((lead >= 0) & (lead <= phi), (2.0 / phi) * (1.0 - lead / phi), 0.0)
    z = (tau - t) / phi
    return np.exp(-0.5 * z * z) / (phi * math.sqrt(2.0 * math.pi))


def h_tilde_values(kernel: KernelSpec, t, tau):
    """Vectorized closed-form integrated kernel ``h_tilde(t, tau)``."""
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    fam, phi = kernel.family, kernel.phi
    if fam == "BM":
        return (tau <= t).astype(float)
    if fam == "IBM":
        return np.where(tau <= t, (t - tau) / (TN - T0), 0.0)
    if fam == "TU":
        a = np.clip(t - tau, 0.0, phi)
        return np.where(tau <= t - phi, 1.0, 2.0 * a / phi - (a / phi) ** 2)
    if fam == "TD":
        b = np.clip(tau - t, 0.0, phi)
        return 1.0 - (2.0 * b / phi - (b / phi) ** 2)
    return ndtr(-(tau - t) / phi)


def eval_h(kernel: KernelSpec, t: float, tau: float) -> float:
    _check_finite(t, tau)
    return float(h_values(kernel, t, tau))


def eval_h_tilde(kernel: KernelSpec, t: float, tau: float) -> float:
    _check_finite(t, tau)
    return float(h_tilde_values(kernel, t, tau))


def _breakpoints(kernel: KernelSpec, t: float) -> list[float]:
    fam, phi = kernel.family, kernel.phi
    if fam == "IBM":
        return [t]
    if fam == "TU":
        return [t - phi, t]
    if fam == "TD":
        return [t, t + phi]
    return []


def h_tilde_oracle(kernel: KernelSpec, t: float, tau: float, n_quad: int = 100_000) -> float:
    """Trapezoid quadrature of ``h(t, u)`` over ``u`` in ``[tau, TN]``.

    Independent of the closed forms; used to validate them. The range is
    split where ``h`` jumps or kinks so no panel straddles a discontinuity,
    and segment ends use one-sided limits from inside the segment.
    """
    if n_quad < 100:
        raise ValueError("n_quad must be >= 100")
    if tau >= TN:
        return 0.0
    edges = [tau] + [b for b in _breakpoints(kernel, t) if tau < b < TN] + [TN]
    total = 0.0
    span = TN - tau
    for a, b in zip(edges[:-1], edges[1:]):
        panels = max(1, round(n_quad * (b - a) / span))
        u = np.linspace(a, b, panels + 1)
        u[0], u[-1] = np.nextafter(a, b), np.nextafter(b, a)
        vals = h_values(kernel, t, u)
        u[0], u[-1] = a, b
        total += float(np.trapezoid(vals, u))
    return total


def build_basis(query_times, knots: KnotGrid, kernel: KernelSpec, warp=None) -> BasisMatrix:
    """Evaluate ``h_tilde(w(t_i), tau_j)`` for every query time and knot.

    ``warp`` is a :class:`fmm.warp.WarpField` or ``None`` for the identity.
    Only query times are warped; knots stay on the regular grid.
    """
    query_times = np.asarray(query_times, dtype=float)
    if query_times.ndim != 1:
        raise ValueError("query_times must be a vector")
    _check_finite(query_times)
    if warp is None or warp.is_identity:
        warped = query_times
        warp_id = "identity"
    else:
        warped = warp.evaluate(query_times)
        warp_id = warp.id
    H = h_tilde_values(kernel, warped[:, None], knots.knots[None, :])
    H.setflags(write=False)
    return BasisMatrix(H, kernel, warp_id, query_times)
