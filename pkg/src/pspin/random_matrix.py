"""GOE matrices, orthonormal Hermite polynomials and characteristic-polynomial moments.

GOE normalization: symmetric ``n x n`` with independent centered Gaussian
entries up to symmetry, variance ``1/n`` off the diagonal and ``2/n`` on it,
so that the spectrum fills ``[-2, 2]``.

Determinant quantities are returned as ``(sign, log|value|)`` pairs because
they leave double range quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, gammaln, logsumexp

from .constants import h_tilde, omega_fn, semicircle_cdf, stieltjes_semicircle
from .streams import stream

__all__ = [
    "NumericalError",
    "GOEMatrix",
    "SpectralSample",
    "sample_goe",
    "sample_goe_batch",
    "sample_goe_spectra",
    "sample_goe_tridiagonal",
    "tridiagonal_log_abs_det",
    "expected_det_mc",
    "eigenvalues",
    "hermite_orthonormal",
    "expected_det_hermite",
    "expected_abs_det_mc",
    "log_abs_det_samples",
    "goe_one_point_density",
    "log_expected_abs_det_exact",
    "abs_det_gap",
    "plancherel_rotach_check",
    "plancherel_rotach_log_asymptotic",
    "stieltjes_linear_statistic",
    "ks_to_semicircle",
]

_RESCALE = 1e150


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""


@dataclass(frozen=True)
class GOEMatrix:
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class SpectralSample:
    eigenvalues: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.size


def sample_goe_batch(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` dense GOE matrices of dimension ``n``, shape ``(count, n, n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    A = rng.standard_normal((count, n, n))
    return (A + np.swapaxes(A, 1, 2)) / math.sqrt(2.0 * n)


def sample_goe(n: int, rng: np.random.Generator) -> GOEMatrix:
    return GOEMatrix(sample_goe_batch(n, 1, rng)[0])


def sample_goe_spectra(n: int, count: int, rng: np.random.Generator, chunk: int = 4096) -> np.ndarray:
    """Sorted GOE spectra, shape ``(count, n)``.

    Drawn from the tridiagonal beta=1 model (same eigenvalue law as the dense
    ensemble, far cheaper); use :func:`sample_goe_batch` when entries matter.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = np.empty((count, n))
    done = 0
    while done < count:
        m = min(chunk, count - done)
        diag = rng.standard_normal((m, n)) * math.sqrt(2.0)
        # chi variables with n-1, ..., 1 degrees of freedom
        dof = np.arange(n - 1, 0, -1, dtype=float)
        off = np.sqrt(rng.chisquare(dof, size=(m, n - 1))) if n > 1 else np.empty((m, 0))
        T = np.zeros((m, n, n))
        idx = np.arange(n)
        T[:, idx, idx] = diag
        if n > 1:
            T[:, idx[:-1], idx[1:]] = off
            T[:, idx[1:], idx[:-1]] = off
        out[done : done + m] = np.linalg.eigvalsh(T / math.sqrt(n))
        done += m
    return out


def sample_goe_tridiagonal(n: int, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal beta=1 model with the GOE eigenvalue law.

    Returns ``(diag, offsq)`` of shapes ``(count, n)`` and ``(count, n-1)``;
    ``offsq`` holds squared off-diagonal entries.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    diag = rng.standard_normal((count, n)) * math.sqrt(2.0 / n)
    dof = np.arange(n - 1, 0, -1, dtype=float)
    offsq = rng.chisquare(dof, size=(count, n - 1)) / n if n > 1 else np.empty((count, 0))
    return diag, offsq


def tridiagonal_log_abs_det(diag: np.ndarray, offsq: np.ndarray, v: float) -> tuple[np.ndarray, np.ndarray]:
    """``log|det(T - vI)|`` and its sign for batched symmetric tridiagonal ``T``.

    Uses the ratio recurrence ``r_k = (a_k - v) - b_{k-1}^2 / r_{k-1}``, whose
    negative terms count eigenvalues below ``v``.
    """
    count, n = diag.shape
    logs = np.zeros(count)
    negs = np.zeros(count, dtype=np.int64)
    r = diag[:, 0] - v
    tiny = 1e-300
    for k in range(n):
        if k > 0:
            r = (diag[:, k] - v) - offsq[:, k - 1] / r
        r = np.where(r == 0.0, tiny, r)
        logs += np.log(np.abs(r))
        negs += r < 0
    return logs, np.where(negs % 2 == 0, 1.0, -1.0)


def eigenvalues(M) -> SpectralSample:
    A = M.entries if isinstance(M, GOEMatrix) else np.asarray(M, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix has non-finite entries")
    try:
        lam = np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver did not converge: {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise NumericalError("non-finite eigenvalues")
    return SpectralSample(lam)


def ks_to_semicircle(eigs: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between an empirical spectrum and the semicircle law."""
    x = np.sort(np.asarray(eigs, dtype=float).ravel())
    n = x.size
    F = np.array([semicircle_cdf(v) for v in x])
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


# -- Hermite polynomials ----------------------------------------------------------


def hermite_orthonormal(n: int, x: float) -> tuple[float, float]:
    """``p_n(x)`` orthonormal for the weight ``exp(-x^2)``, as ``(sign, log|p_n(x)|)``."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    prev, cur, log_scale = 0.0, math.pi**-0.25, 0.0
    for k in range(n):
        prev, cur = cur, math.sqrt(2.0 / (k + 1)) * x * cur - math.sqrt(k / (k + 1)) * prev
        a = abs(cur)
        if a > _RESCALE or (0.0 < a < 1.0 / _RESCALE):
            prev /= a
            cur /= a
            log_scale += math.log(a)
    if cur == 0.0:
        return 0.0, -math.inf
    return math.copysign(1.0, cur), log_scale + math.log(abs(cur))


def expected_det_hermite(n: int, v: float) -> tuple[float, float]:
    """``E det(M - v I)`` for an ``n``-dimensional GOE, as ``(sign, log|value|)``.

    ``n^{n/2} E det(M - vI) = (-1)^n pi^{1/4} sqrt(n!) p_n(sqrt(n/2) v)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    s, lp = hermite_orthonormal(n, math.sqrt(n / 2.0) * v)
    if s == 0.0:
        return 0.0, -math.inf
    sign = s * (-1.0) ** n
    return sign, 0.25 * math.log(math.pi) + 0.5 * float(gammaln(n + 1)) + lp - 0.5 * n * math.log(n)


# -- Monte Carlo ------------------------------------------------------------------


def log_abs_det_samples(spectra: np.ndarray, v: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``log|det(M - vI)|`` and sign from sorted spectra."""
    d = spectra - v
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(d)).sum(axis=1)
    signs = np.where(np.count_nonzero(d < 0, axis=1) % 2 == 0, 1.0, -1.0)
    return logs, signs


def _log_mean_and_se(logs: np.ndarray) -> tuple[float, float]:
    """``log`` of the sample mean of ``exp(logs)`` and ``log`` of its standard error."""
    S = logs.size
    lm = logsumexp(logs) - math.log(S)
    # variance of exp(logs) relative to exp(lm)
    rel = np.exp(logs - lm)
    var = rel.var(ddof=1) if S > 1 else 0.0
    lse = lm + 0.5 * math.log(var / S) if var > 0 else -math.inf
    return float(lm), float(lse)


def expected_abs_det_mc(n: int, v: float, samples: int, seed: int, dense: bool = False):
    """Monte Carlo ``E|det(M - vI)|`` with its standard error.

    Returns ``(estimate, std_error, log_estimate, log_std_error)``; the plain
    values overflow to ``inf`` for large ``n`` while the logs stay finite.
    """
    if samples < 1000:
        raise ValueError("expected_abs_det_mc needs at least 10^3 samples")
    rng = stream(seed, "abs-det")
    if dense:
        logs, _ = log_abs_det_samples(np.linalg.eigvalsh(sample_goe_batch(n, samples, rng)), v)
    else:
        logs, _ = tridiagonal_log_abs_det(*sample_goe_tridiagonal(n, samples, rng), v)
    lm, lse = _log_mean_and_se(logs)
    return math.exp(min(lm, 709.0)), math.exp(min(lse, 709.0)), lm, lse


def expected_det_mc(n: int, v: float, samples: int, seed: int, chunk: int = 200_000) -> tuple[float, float]:
    """Monte Carlo ``E det(M - vI)`` over dense GOE draws, with standard error."""
    total, total_sq, done, idx = 0.0, 0.0, 0, 0
    while done < samples:
        m = min(chunk, samples - done)
        rng = stream(seed, "det-mc", idx)
        d = np.linalg.det(sample_goe_batch(n, m, rng) - v * np.eye(n))
        total += float(d.sum())
        total_sq += float((d * d).sum())
        done += m
        idx += 1
    mean = total / samples
    var = (total_sq - samples * mean * mean) / (samples - 1)
    return mean, math.sqrt(max(var, 0.0) / samples)


# -- exact E|det| through the GOE one-point density ------------------------------------


def _log_selberg_ratio(n: int, a: float) -> float:
    """``log(Z_{n+1} / Z_n)`` for ``Z_m = int prod_{i<j}|x_i-x_j| exp(-a sum x^2) dx``."""
    m = n + 1
    return (-0.5 * m) * math.log(2.0 * a) + 0.5 * math.log(2.0 * math.pi) + float(gammaln(1.0 + m / 2.0) - gammaln(1.5))


def _hermite_totals(m: int) -> np.ndarray:
    """``int phi_k`` over the line for Hermite functions ``phi_0..phi_m``."""
    T = np.zeros(m + 1)
    T[0] = math.pi**-0.25 * math.sqrt(2.0 * math.pi)
    for k in range(1, m):
        T[k + 1] = math.sqrt(k / (k + 1.0)) * T[k - 1]
    return T


def _log_goe_density_nonpos(m: int, x: np.ndarray) -> np.ndarray:
    """``log`` of the GOE one-point density (weight ``exp(-sum x^2/2)``, mass ``m``) at ``x <= 0``.

    Uses ``rho = sum_{k<m} phi_k^2 + sqrt(m/2) phi_{m-1} (Phi_m(x) - T_m/2)
    [+ phi_{m-1}/T_{m-1} for odd m]`` with ``Phi_k(x) = int_{-inf}^x phi_k``.
    Hermite functions are carried as ``exp(-x^2/2)`` times rescaled
    polynomials so the recurrence neither overflows nor underflows.
    """
    x = np.asarray(x, dtype=float)
    T = _hermite_totals(m)
    # scaled values: true = scaled * exp(log_scale - x^2/2)
    a_prev = np.zeros_like(x)
    a_cur = np.full_like(x, math.pi**-0.25)
    b_prev = np.zeros_like(x)  # Phi_{-1} placeholder
    b_cur = math.pi**-0.25 * math.sqrt(math.pi / 2.0) * erfcx(-x / math.sqrt(2.0))  # Phi_0 e^{x^2/2}
    ssum = np.zeros_like(x)  # sum phi_k^2, scaled by exp(2 log_scale - x^2)
    log_scale = np.zeros_like(x)
    a_hist_last = None
    for k in range(m):
        ssum += a_cur * a_cur
        if k == m - 1:
            a_hist_last = a_cur.copy()
        # advance phi and Phi to index k+1
        a_next = math.sqrt(2.0 / (k + 1)) * x * a_cur - math.sqrt(k / (k + 1.0)) * a_prev
        if k == 0:
            b_next = -math.sqrt(2.0) * a_cur
        else:
            b_next = math.sqrt(k / (k + 1.0)) * b_prev - math.sqrt(2.0 / (k + 1)) * a_cur
        a_prev, a_cur = a_cur, a_next
        b_prev, b_cur = b_cur, b_next
        big = np.maximum(np.abs(a_cur), np.abs(a_prev))
        mask = big > _RESCALE
        if np.any(mask):
            f = big[mask]
            a_prev[mask] /= f
            a_cur[mask] /= f
            b_prev[mask] /= f
            b_cur[mask] /= f
            ssum[mask] /= f * f
            if a_hist_last is not None:
                a_hist_last[mask] /= f
            log_scale[mask] += np.log(f)
    # a_hist_last ~ phi_{m-1}, b_cur ~ Phi_m, both scaled by exp(log_scale - x^2/2)
    logF = log_scale - 0.5 * x * x
    F = np.exp(np.clip(logF, -745.0, 709.0))
    inner = F * ssum + math.sqrt(m / 2.0) * a_hist_last * (F * b_cur - 0.5 * T[m])
    if m % 2 == 1:
        inner = inner + a_hist_last / T[m - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = logF + np.log(inner)
    if np.any(~np.isfinite(out)):
        raise NumericalError("GOE density evaluation lost all precision")
    return out


def goe_one_point_density(m: int, x) -> np.ndarray:
    """One-point density (integrating to ``m``) of eigenvalues with joint law
    proportional to ``prod|x_i - x_j| exp(-sum x_i^2 / 2)``."""
    x = np.asarray(x, dtype=float)
    return np.exp(_log_goe_density_nonpos(m, -np.abs(x)))


def log_expected_abs_det_exact(n: int, v) -> np.ndarray:
    """Exact ``log E|det(M - vI)|`` for the ``n``-dimensional GOE.

    Integrating one eigenvalue of an ``(n+1)``-point ensemble with the same
    Gaussian weight against the rest gives
    ``E|det(M - vI)| = (Z_{n+1} / Z_n) exp(a v^2) rho_{n+1}(v)``, ``a = n/4``,
    with ``rho_{n+1}`` the normalized one-point density.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    v = np.asarray(v, dtype=float)
    a = n / 4.0
    s = math.sqrt(2.0 * a)
    m = n + 1
    log_rho = _log_goe_density_nonpos(m, -np.abs(s * v)) + math.log(s) - math.log(m)
    return _log_selberg_ratio(n, a) + a * v * v + log_rho


# -- removing the absolute value outside the bulk ----------------------------------------


def abs_det_gap(n: int, v: float, samples: int, seed: int) -> dict:
    """Relative gap ``(E|det(M - vI)| - |E det(M - vI)|) / |E det(M - vI)|`` for ``|v| > 2``.

    Monte Carlo with the exact ``E det`` as control variate: the gap equals
    ``E[|det| - s det]`` with ``s`` the sign of ``E det``, a non-negative
    variable that is zero unless an eigenvalue crosses ``v``.
    """
    if abs(v) <= 2.0:
        raise ValueError("the gap diagnostic is meant for |v| > 2")
    sign_e, log_e = expected_det_hermite(n, v)
    rng = stream(seed, "abs-det-gap", n)
    logs, signs = tridiagonal_log_abs_det(*sample_goe_tridiagonal(n, samples, rng), v)
    wrong = signs != sign_e
    terms = np.where(wrong, 2.0 * np.exp(logs - log_e), 0.0)
    gap = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(samples))
    exact = math.expm1(float(log_expected_abs_det_exact(n, v)) - log_e)
    return {
        "n": n,
        "v": v,
        "samples": samples,
        "relative_gap": gap,
        "std_error": se,
        "wrong_sign_fraction": float(wrong.mean()),
        "relative_gap_exact": exact,
    }


# -- Plancherel-Rotach ---------------------------------------------------------------------


def plancherel_rotach_log_asymptotic(n: int, x: float) -> tuple[float, float]:
    """Leading asymptotic of ``p_n(sqrt(2n) x)`` for ``x < -1`` as ``(sign, log|.|)``.

    The sign is the factor ``(-1)^{n-1}`` of the stated asymptotic formula.
    """
    log_mag = -0.5 * math.log(4.0 * math.pi * math.sqrt(2.0 * n)) + n * (omega_fn(2.0 * x) + 0.5) + math.log(h_tilde(x))
    return (-1.0) ** (n - 1), log_mag


def plancherel_rotach_check(n_list, x: float, delta: float = 0.05) -> dict:
    """Compare ``p_n(sqrt(2n) x)`` with its large-degree asymptotic for each ``n``."""
    if x > -(1.0 + delta):
        raise ValueError(f"x must be <= -(1 + delta) = {-(1.0 + delta)}")
    rows = []
    for n in n_list:
        s, lp = hermite_orthonormal(n, math.sqrt(2.0 * n) * x)
        sa, la = plancherel_rotach_log_asymptotic(n, x)
        rel = math.expm1(lp - la)
        rows.append(
            {
                "n": n,
                "log_abs_exact": lp,
                "log_abs_asymptotic": la,
                "relative_error": rel,
                "n_times_relative_error": n * rel,
                "sign_exact": s,
                "sign_formula": sa,
                "sign_matches": s == sa,
            }
        )
    return {"x": x, "rows": rows}


def stieltjes_linear_statistic(M, shift: float) -> float:
    """``(1/n) sum 1 / (lambda_i + shift)``; converges to ``int dmu*(x) / (shift + x)``."""
    lam = eigenvalues(M).eigenvalues if not isinstance(M, SpectralSample) else M.eigenvalues
    if np.any(lam + shift <= 0):
        raise NumericalError("shift does not keep the spectrum positive")
    return float(np.mean(1.0 / (lam + shift)))


def stieltjes_limit(shift: float) -> float:
    """``int dmu*(x) / (shift + x)`` for ``shift > 2``."""
    return stieltjes_semicircle(shift)
