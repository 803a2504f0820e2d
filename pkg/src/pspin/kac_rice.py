"""First-moment (Kac-Rice) density of critical values and the centered intensity.

The mean number of critical points of ``H_N`` with value in ``B`` is
``int_B rho_N(u) du`` with

    rho_N(u) = omega_N ((p-1)(N-1)/2pi)^{(N-1)/2} (2 pi N)^{-1/2}
               exp(-u^2 / 2N) E|det(M - v I)|,   v = gamma_p u / sqrt(N(N-1)),

``omega_N`` the area of the unit sphere in ``R^N`` and ``M`` an
``(N-1)``-dimensional GOE. The expectation is available three ways, see
:class:`KacRiceDensity`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import integrate

from .constants import ModelParams, TheoryConstants, h_tilde, log_omega_surface, solve_constants
from .random_matrix import (
    NumericalError,
    expected_det_hermite,
    log_expected_abs_det_exact,
    sample_goe_tridiagonal,
    tridiagonal_log_abs_det,
)
from .streams import stream

__all__ = ["Method", "KacRiceDensity", "rho_n", "mean_crt", "intensity_nu", "log_nu_asymptotic", "BULK_MARGIN"]

BULK_MARGIN = 0.05
_TRUNCATE_LOG = math.log(1e-18)


class Method(str, Enum):
    HERMITE_EXACT = "hermite_exact"
    GOE_MONTE_CARLO = "goe_monte_carlo"
    GOE_DENSITY = "goe_density"


@dataclass
class KacRiceDensity:
    """``rho_N`` for fixed ``(p, N)`` and a determinant method.

    ``hermite_exact`` uses the Hermite formula for ``E det`` once the shifted
    argument is beyond ``2 + BULK_MARGIN`` (where the absolute value is
    negligible) and the exact GOE one-point-density formula for ``E|det|``
    inside; it is deterministic. ``goe_density`` uses the latter everywhere.
    ``goe_monte_carlo`` averages ``|det|`` over a fixed bank of ``samples``
    GOE spectra and reports standard errors.
    """

    params: ModelParams
    constants: TheoryConstants = None
    method: Method = Method.HERMITE_EXACT
    samples: int = 20_000
    seed: int = 0
    _bank: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.method = Method(self.method)
        if self.constants is None:
            self.constants = solve_constants(self.params.p, self.params.N)
        N = self.params.N
        n = N - 1
        self._n = n
        self._scale = self.params.gamma_p / math.sqrt(N * (N - 1))
        self._log_prefactor = (
            log_omega_surface(N)
            + 0.5 * n * math.log((self.params.p - 1) * n / (2.0 * math.pi))
            - 0.5 * math.log(2.0 * math.pi * N)
        )

    @property
    def deterministic(self) -> bool:
        return self.method is not Method.GOE_MONTE_CARLO

    def shifted(self, u):
        return self._scale * np.asarray(u, dtype=float)

    def _bank_spectra(self):
        if self._bank is None:
            rng = stream(self.seed, "kac-rice-bank", self._n)
            self._bank = sample_goe_tridiagonal(self._n, self.samples, rng)
        return self._bank

    def log_abs_det(self, v) -> tuple[np.ndarray, np.ndarray]:
        """``log E|det(M - vI)|`` and the standard error of ``E|det|`` relative to it."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        out = np.empty_like(v)
        se = np.zeros_like(v)
        if self.method is Method.GOE_MONTE_CARLO:
            diag, offsq = self._bank_spectra()
            for i, vi in enumerate(v):
                logs, _ = tridiagonal_log_abs_det(diag, offsq, vi)
                top = logs.max()
                w = np.exp(logs - top)
                mean = w.mean()
                out[i] = top + math.log(mean)
                se[i] = w.std(ddof=1) / math.sqrt(w.size) / mean
            return out, se
        out[:] = log_expected_abs_det_exact(self._n, v)
        if self.method is Method.HERMITE_EXACT:
            outside = np.abs(v) > 2.0 + BULK_MARGIN
            for i in np.flatnonzero(outside):
                sign, log_abs = expected_det_hermite(self._n, float(v[i]))
                out[i] = log_abs
        return out, se

    def log_rho(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized ``(log rho_N(u), relative standard error)``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lad, rel_se = self.log_abs_det(self.shifted(u))
        return self._log_prefactor - u * u / (2.0 * self.params.N) + lad, rel_se


def rho_n(u: float, density: KacRiceDensity) -> tuple[float, float]:
    """``(log rho_N(u), standard error)``; the error is absolute on ``rho_N`` and zero for exact methods."""
    lr, rel = density.log_rho(u)
    return float(lr[0]), float(rel[0] * math.exp(lr[0]))


def _support(density: KacRiceDensity, lo: float, hi: float) -> tuple[float, float, float]:
    """Range of ``[lo, hi]`` where ``log rho`` is within ``1e-18`` of its peak, and the peak."""
    N = density.params.N
    a = max(lo, -12.0 * N - 20.0)
    b = min(hi, 12.0 * N + 20.0)
    grid = np.linspace(a, b, 4001)
    lr, _ = density.log_rho(grid)
    peak = float(lr.max())
    keep = np.flatnonzero(lr >= peak + _TRUNCATE_LOG)
    step = grid[1] - grid[0]
    return max(a, grid[keep[0]] - step), min(b, grid[keep[-1]] + step), peak


def mean_crt(B: tuple[float, float], density: KacRiceDensity, tol: float = 1e-10) -> tuple[float, float]:
    """Mean number of critical points with value in ``B``, and its standard error.

    ``B = (lo, hi)`` in ``H``-value units; infinite endpoints are truncated
    where the integrand falls below ``1e-18`` of its peak. Deterministic
    methods use adaptive quadrature of ``rho_N / peak``; the Monte Carlo
    method integrates each bank sample on a fixed Gauss-Legendre grid so the
    standard error accounts for correlation across ``u``.
    """
    lo, hi = float(B[0]), float(B[1])
    if not lo < hi:
        return 0.0, 0.0
    a, b, peak = _support(density, lo, hi)
    if not a < b:
        return 0.0, 0.0
    if density.deterministic:
        f = lambda u: math.exp(float(density.log_rho(u)[0][0]) - peak)
        val, err = integrate.quad(f, a, b, epsabs=tol * 1e-8, epsrel=tol, limit=500)
        if not np.isfinite(val) or err > max(1e-6 * abs(val), 1e-12):
            raise NumericalError(f"Kac-Rice quadrature did not converge: estimate {val}, error {err}")
        return val * math.exp(peak), 0.0
    return _mean_crt_mc(density, a, b)


def _mean_crt_mc(density: KacRiceDensity, a: float, b: float, nodes: int = 96) -> tuple[float, float]:
    x, w = np.polynomial.legendre.leggauss(nodes)
    # composite rule over a few panels keeps the peaked integrand resolved
    panels = 8
    edges = np.linspace(a, b, panels + 1)
    us = np.concatenate([0.5 * (r - l) * x + 0.5 * (r + l) for l, r in zip(edges[:-1], edges[1:])])
    ws = np.concatenate([0.5 * (r - l) * w for l, r in zip(edges[:-1], edges[1:])])
    diag, offsq = density._bank_spectra()
    N = density.params.N
    base = density._log_prefactor - us * us / (2.0 * N)
    v = density.shifted(us)
    logs_all = np.empty((us.size, diag.shape[0]))
    for i, vi in enumerate(v):
        logs_all[i], _ = tridiagonal_log_abs_det(diag, offsq, vi)
        logs_all[i] += base[i] + math.log(ws[i])
    top = float(logs_all.max())
    acc = np.exp(logs_all - top).sum(axis=0)
    mean = float(acc.mean())
    se = float(acc.std(ddof=1) / math.sqrt(acc.size))
    return mean * math.exp(top), se * math.exp(top)


def intensity_nu(x: float, density: KacRiceDensity) -> tuple[float, float]:
    """``nu_N(x) = rho_N(x + m_N) / (1 + iota_p)`` and its standard error."""
    N = density.params.N
    if abs(x) > math.sqrt(N):
        raise ValueError(f"|x| must be <= sqrt(N) = {math.sqrt(N):.4g}, got {x}")
    lr, se = rho_n(x + density.constants.m_N, density)
    w = density.constants.parity_weight
    return w * math.exp(lr), w * se


def log_nu_asymptotic(x: float, constants: TheoryConstants) -> float:
    """Large-N form of ``log nu_N(x)``.

    From the leading behaviour of ``rho_N`` near ``-E_0 N``:
    ``rho_N(u) ~ h(-gamma E_0/2) / (2 sqrt(pi)) exp(c_p (u + E_0 N - E_0/2) - log(N)/2)``.
    With the centering used here this is ``c_p x`` up to rounding.
    """
    c = constants
    u = x + c.m_N
    log_rho = (
        math.log(h_tilde(-0.5 * c.gamma_p * c.E_0) / (2.0 * math.sqrt(math.pi)))
        + c.c_p * (u + c.E_0 * c.N - 0.5 * c.E_0)
        - 0.5 * math.log(c.N)
    )
    return log_rho + math.log(c.parity_weight)
