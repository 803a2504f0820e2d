"""Closed-form scalar functions and limiting constants of the pure p-spin model.

Everything here is a pure function of ``(p, N)``. The semicircle law, its
log-potential ``omega_fn`` and Stieltjes transform feed the complexity
function ``theta_p``; its root ``E_0`` and slope ``c_p`` there fix the centering
``m_N`` of the ground state and the exponential intensity of the extremal
process.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from scipy.special import gammaln

__all__ = [
    "ModelParams",
    "TheoryConstants",
    "semicircle_density",
    "semicircle_cdf",
    "stieltjes_semicircle",
    "omega_fn",
    "omega_prime",
    "theta_p",
    "theta_p_prime",
    "h_tilde",
    "log_omega_surface",
    "solve_constants",
    "gumbel_min_cdf",
    "gumbel_min_median",
]

_BRACKET_HI = 10.0
_ROOT_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Interaction degree ``p`` and ambient dimension ``N``."""

    p: int
    N: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 3:
            raise ValueError(f"p must be an integer >= 3, got {self.p}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N}")

    @property
    def gamma_p(self) -> float:
        return math.sqrt(self.p / (self.p - 1))

    @property
    def iota_p(self) -> int:
        return 1 if self.p % 2 == 0 else 0


@dataclass(frozen=True)
class TheoryConstants:
    p: int
    N: int
    gamma_p: float
    iota_p: float
    E_inf: float
    E_0: float
    c_p: float
    C_0: float
    K_0: float
    m_N: float

    @property
    def parity_weight(self) -> float:
        """``(1 + iota_p)^{-1}``, the atom weight of the extremal process."""
        return 1.0 / (1.0 + self.iota_p)

    def as_dict(self) -> dict:
        return asdict(self)


def semicircle_density(x: float) -> float:
    """Density of the semicircle law on ``[-2, 2]``."""
    if abs(x) > 2.0:
        return 0.0
    return math.sqrt(4.0 - x * x) / (2.0 * math.pi)


def semicircle_cdf(x: float) -> float:
    if x <= -2.0:
        return 0.0
    if x >= 2.0:
        return 1.0
    return 0.5 + (x * math.sqrt(4.0 - x * x) / 4.0 + math.asin(x / 2.0)) / math.pi


def stieltjes_semicircle(z: float) -> float:
    """``int dmu*(x) / (z - x)`` for real ``|z| > 2``."""
    if abs(z) <= 2.0:
        raise ValueError(f"Stieltjes transform requested inside the support: z={z}")
    return (z - math.copysign(math.sqrt(z * z - 4.0), z)) / 2.0


def omega_fn(x: float) -> float:
    """Logarithmic potential ``int log|l - x| dmu*(l)`` of the semicircle law."""
    a = abs(x)
    base = x * x / 4.0 - 0.5
    if a <= 2.0:
        return base
    return base - (a / 4.0 * math.sqrt(x * x - 4.0) - math.log(math.sqrt(x * x / 4.0 - 1.0) + a / 2.0))


def omega_prime(x: float) -> float:
    """Derivative of :func:`omega_fn`; continuous, equal to ``-1`` at ``x = -2``."""
    if abs(x) <= 2.0:
        return x / 2.0
    return x / 2.0 - math.copysign(math.sqrt(x * x - 4.0), x) / 2.0


def theta_p(u: float, p: int) -> float:
    """Exponential growth rate of the mean number of critical values below ``N u``."""
    if p < 3:
        raise ValueError(f"p must be >= 3, got {p}")
    if u >= 0:
        return 0.5 * math.log(p - 1)
    g = math.sqrt(p / (p - 1))
    return 0.5 + 0.5 * math.log(p - 1) - u * u / 2.0 + omega_fn(g * u)


def theta_p_prime(u: float, p: int) -> float:
    if u >= 0:
        raise ValueError("theta_p_prime is only defined on the negative half-line")
    g = math.sqrt(p / (p - 1))
    return -u + g * omega_prime(g * u)


def h_tilde(x: float) -> float:
    if x == 1.0 or x == -1.0:
        raise ValueError("h_tilde has poles at x = +-1")
    r = abs((x - 1.0) / (x + 1.0))
    return r**0.25 + r**-0.25


def log_omega_surface(N: int) -> float:
    """``log`` of the surface area of the unit sphere in ``R^N``."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return math.log(2.0) + 0.5 * N * math.log(math.pi) - float(gammaln(N / 2.0))


def _solve_e0(p: int) -> float:
    e_inf = 2.0 * math.sqrt((p - 1) / p)
    lo, hi = e_inf + 1e-9, _BRACKET_HI
    f_lo, f_hi = theta_p(-lo, p), theta_p(-hi, p)
    if not (f_lo > 0.0 > f_hi):
        raise ArithmeticError(
            f"no sign change of theta_p(-E) on [{lo}, {hi}] for p={p}: "
            f"values {f_lo}, {f_hi}"
        )
    while hi - lo > _ROOT_TOL:
        mid = 0.5 * (lo + hi)
        if theta_p(-mid, p) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_constants(p: int, N: int) -> TheoryConstants:
    """All limiting constants for ``(p, N)``.

    ``K_0`` is fixed so that the intensity of the centered process tends to
    ``exp(c_p x)``: the large-N form of the Kac-Rice density at level
    ``u = -E_0 N + s`` is ``h(-gamma E_0 / 2) / (2 sqrt(pi)) exp(c_p (s - E_0/2)) / sqrt(N)``,
    which after division by ``1 + iota_p`` and centering at ``m_N`` leaves
    ``exp(c_p x)`` exactly when
    ``K_0 = -E_0/2 + log(h(-gamma E_0 / 2) / ((1 + iota_p) 2 sqrt(pi))) / c_p``.
    """
    params = ModelParams(p, N)
    g = params.gamma_p
    iota = params.iota_p
    e_inf = 2.0 * math.sqrt((p - 1) / p)
    e0 = _solve_e0(p)
    c = theta_p_prime(-e0, p)
    c0 = 0.5 * g * stieltjes_semicircle(g * e0)
    k0 = -0.5 * e0 + math.log(h_tilde(-0.5 * g * e0) / ((1.0 + iota) * 2.0 * math.sqrt(math.pi))) / c
    m_n = -e0 * N + math.log(N) / (2.0 * c) - k0
    return TheoryConstants(
        p=p, N=N, gamma_p=g, iota_p=float(iota), E_inf=e_inf, E_0=e0,
        c_p=c, C_0=c0, K_0=k0, m_N=m_n,
    )


def gumbel_min_cdf(x: float, c_p: float) -> float:
    """Limit law of the centered ground state: ``P{min - m_N < x}``."""
    if c_p <= 0:
        raise ValueError("c_p must be positive")
    t = c_p * x
    if t > 700.0:
        return 1.0
    return -math.expm1(-math.exp(t) / c_p)


def gumbel_min_median(c_p: float) -> float:
    return math.log(c_p * math.log(2.0)) / c_p
