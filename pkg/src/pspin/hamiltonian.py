"""The pure p-spin Hamiltonian on the sphere of radius sqrt(N).

``H(sigma) = N^{-(p-1)/2} sum J[i_1..i_p] sigma_i1 ... sigma_ip`` with the sum
over all ordered multi-indices. Derivatives are taken through the
symmetrized coupling tensor, which defines the same polynomial.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np

from .constants import ModelParams
from .streams import stream

__all__ = [
    "BudgetExceededError",
    "DisorderTensor",
    "SpherePoint",
    "LocalFrame",
    "sample_disorder",
    "evaluate",
    "evaluate_many",
    "overlap",
    "euclidean_grad_hess",
    "value_grad_hess",
    "riemannian_grad_hess",
    "householder_frame",
    "chart_value",
    "random_sphere_points",
    "verify_covariance_structure",
    "w_kernel",
    "w_kernel_derivative",
    "covariance_targets",
    "write_disorder",
    "read_disorder",
]

DEFAULT_BUDGET = 2**31
RADIUS_RTOL = 1e-9
_MAGIC = b"PSPN"
_HEADER = struct.Struct("<4sHHIQ")


class BudgetExceededError(MemoryError):
    """The coupling tensor would exceed the configured entry budget."""


def symmetrize(T: np.ndarray, batch: bool = False) -> np.ndarray:
    """Average of ``T`` over all permutations of its tensor axes."""
    off = 1 if batch else 0
    p = T.ndim - off
    out = np.zeros_like(T)
    perms = list(itertools.permutations(range(p)))
    for perm in perms:
        axes = tuple(range(off)) + tuple(a + off for a in perm)
        out += np.transpose(T, axes)
    out /= len(perms)
    return out


class DisorderTensor:
    """I.i.d. standard normal couplings defining one Hamiltonian instance.

    Immutable after construction. ``coefficients`` is the flat row-major view
    of the ``N^p`` couplings.
    """

    def __init__(self, params: ModelParams, couplings: np.ndarray, seed: int):
        couplings = np.asarray(couplings, dtype=np.float64)
        shape = (params.N,) * params.p
        if couplings.size != params.N**params.p:
            raise ValueError(f"expected {params.N ** params.p} couplings, got {couplings.size}")
        self.params = params
        self.seed = int(seed)
        self._J = couplings.reshape(shape).copy()
        self._J.setflags(write=False)
        self._S = None

    @property
    def p(self) -> int:
        return self.params.p

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def couplings(self) -> np.ndarray:
        return self._J

    @property
    def coefficients(self) -> np.ndarray:
        return self._J.reshape(-1)

    @property
    def scaled_symmetric(self) -> np.ndarray:
        """``N^{-(p-1)/2}`` times the symmetrized couplings (cached)."""
        if self._S is None:
            S = symmetrize(self._J) * self.N ** (-(self.p - 1) / 2.0)
            S.setflags(write=False)
            self._S = S
        return self._S

    def combined(self, other: "DisorderTensor", weight: float) -> "DisorderTensor":
        """Couplings of ``H + weight * H_other`` (same ``p`` and ``N``)."""
        if other.params != self.params:
            raise ValueError("cannot combine tensors with different (p, N)")
        return DisorderTensor(self.params, self._J + weight * other._J, seed=self.seed)

    def __repr__(self):
        return f"DisorderTensor(p={self.p}, N={self.N}, seed={self.seed})"


@dataclass(frozen=True)
class SpherePoint:
    """A point of the sphere of radius sqrt(N); renormalized on construction."""

    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        x = np.array(self.coords, dtype=np.float64).reshape(-1)
        nrm = np.linalg.norm(x)
        if not np.isfinite(nrm) or nrm == 0.0:
            raise ValueError("cannot place a zero or non-finite vector on the sphere")
        x *= math.sqrt(x.size) / nrm
        x.setflags(write=False)
        object.__setattr__(self, "coords", x)

    @property
    def N(self) -> int:
        return self.coords.size

    def __neg__(self) -> "SpherePoint":
        return SpherePoint(-self.coords)


@dataclass(frozen=True)
class LocalFrame:
    basepoint: SpherePoint
    tangent_basis: np.ndarray = field(repr=False)  # (N, N-1), orthonormal columns


def _as_coords(x) -> np.ndarray:
    return x.coords if isinstance(x, SpherePoint) else np.asarray(x, dtype=np.float64)


def sample_disorder(params: ModelParams, seed: int, budget: int = DEFAULT_BUDGET) -> DisorderTensor:
    """Draw the couplings of one instance; deterministic in ``seed``."""
    size = params.N**params.p
    if size > budget:
        raise BudgetExceededError(
            f"N^p = {params.N}^{params.p} = {size} couplings exceeds the budget of {budget}; "
            "use a smaller N or p"
        )
    rng = stream(seed, "disorder")
    return DisorderTensor(params, rng.standard_normal(size), seed)


def _contract(S: np.ndarray, X: np.ndarray, times: int) -> np.ndarray:
    """Contract the trailing axes of ``S`` with the rows of ``X`` ``times`` times.

    Returns a batch of tensors of shape ``(B,) + (N,) * (p - times)``.
    """
    out = np.tensordot(X, S, axes=([1], [S.ndim - 1]))
    for _ in range(times - 1):
        out = np.einsum("b...k,bk->b...", out, X)
    return out


def value_grad_hess(J: DisorderTensor, X: np.ndarray):
    """Values, Euclidean gradients and Hessians at a batch of points ``X`` (B, N)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    p = J.p
    A = _contract(J.scaled_symmetric, X, p - 2)
    Ax = np.einsum("bij,bj->bi", A, X)
    H = np.einsum("bi,bi->b", Ax, X)
    return H, p * Ax, p * (p - 1) * A


def evaluate_many(J: DisorderTensor, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    A = _contract(J.scaled_symmetric, X, J.p - 1)
    return np.einsum("bi,bi->b", A, X)


def evaluate(J: DisorderTensor, sigma) -> float:
    """``H_N(sigma)`` by direct contraction of the raw (unsymmetrized) couplings."""
    x = _as_coords(sigma)
    T = J.couplings
    for _ in range(J.p):
        T = T @ x
    return float(T) * J.N ** (-(J.p - 1) / 2.0)


def overlap(a, b) -> float:
    a, b = _as_coords(a), _as_coords(b)
    return float(a @ b) / a.size


def euclidean_grad_hess(J: DisorderTensor, sigma):
    _, G, Hs = value_grad_hess(J, _as_coords(sigma)[None, :])
    return G[0], Hs[0]


def householder_frame(sigma) -> LocalFrame:
    """Orthonormal tangent frame at ``sigma`` from the reflection swapping the
    north pole ``e_N`` and ``sigma / sqrt(N)``."""
    sp = sigma if isinstance(sigma, SpherePoint) else SpherePoint(sigma)
    N = sp.N
    s = sp.coords / math.sqrt(N)
    v = -s.copy()
    v[-1] += 1.0
    vv = v @ v
    Q = np.eye(N)
    if vv > 1e-30:
        Q -= 2.0 * np.outer(v, v) / vv
    return LocalFrame(sp, Q[:, : N - 1].copy())


def riemannian_grad_hess(J: DisorderTensor, sigma, frame: LocalFrame | None = None):
    """Riemannian gradient and Hessian of ``H_N`` in the given tangent frame.

    The Hessian is the frame-restricted Euclidean Hessian minus
    ``p H_N(sigma) / N`` times the identity (radius-sqrt(N) sphere metric).
    """
    x = _as_coords(sigma)
    if frame is None:
        frame = householder_frame(x)
    E = frame.tangent_basis
    H, G, Hs = value_grad_hess(J, x[None, :])
    rg = E.T @ G[0]
    rh = E.T @ Hs[0] @ E - (J.p * H[0] / x.size) * np.eye(x.size - 1)
    return rg, 0.5 * (rh + rh.T)


def chart_value(J: DisorderTensor, x, frame: LocalFrame | None = None) -> float:
    """Normalized chart ``H(sqrt(N) theta(P(x))) / sqrt(N)`` around the frame's base point.

    ``P(x) = (x, sqrt(1 - |x|^2))`` maps the unit ball of ``R^{N-1}`` onto the
    upper hemisphere; with ``frame=None`` the rotation is the identity
    (chart at the north pole).
    """
    x = np.asarray(x, dtype=np.float64)
    N = J.N
    r2 = x @ x
    if r2 >= 1.0:
        raise ValueError("chart argument must lie in the open unit ball")
    y = np.append(x, math.sqrt(1.0 - r2))
    if frame is not None:
        E = frame.tangent_basis
        y = E @ y[:-1] + frame.basepoint.coords / math.sqrt(N) * y[-1]
    return evaluate_many(J, math.sqrt(N) * y[None, :])[0] / math.sqrt(N)


def random_sphere_points(rng: np.random.Generator, count: int, N: int) -> np.ndarray:
    X = rng.standard_normal((count, N))
    return X * (math.sqrt(N) / np.linalg.norm(X, axis=1, keepdims=True))


# -- covariance structure ---------------------------------------------------


def w_kernel(x: np.ndarray, y: np.ndarray, p: int) -> float:
    """Chart covariance ``(<x,y> + sqrt(1-|x|^2) sqrt(1-|y|^2))^p``."""
    w = x @ y + math.sqrt(1.0 - x @ x) * math.sqrt(1.0 - y @ y)
    return w**p


def _nested_central(f, dirs, h):
    if not dirs:
        return f(())
    (first, rest) = dirs[0], dirs[1:]

    def shifted(sign):
        return _nested_central(lambda s: f(s + ((first, sign * h),)), rest, h)

    return (shifted(1.0) - shifted(-1.0)) / (2.0 * h)


def w_kernel_derivative(p: int, dim: int, x_idx: tuple, y_idx: tuple, h: float = 1e-7) -> float:
    """Mixed partial ``d_x[x_idx] d_y[y_idx] W(x, y)^p`` at ``x = y = 0``.

    Nested central differences evaluated in 40-digit arithmetic, so a tiny
    step leaves both truncation and rounding far below double precision.
    """
    dirs = [("x", i) for i in x_idx] + [("y", j) for j in y_idx]
    with mpmath.workdps(40):
        hm = mpmath.mpf(h)

        def at(shifts):
            x = [mpmath.mpf(0)] * dim
            y = [mpmath.mpf(0)] * dim
            for (which, i), d in shifts:
                (x if which == "x" else y)[i] += d
            dot = mpmath.fsum(a * b for a, b in zip(x, y))
            nx = mpmath.sqrt(1 - mpmath.fsum(a * a for a in x))
            ny = mpmath.sqrt(1 - mpmath.fsum(b * b for b in y))
            return (dot + nx * ny) ** p

        return float(_nested_central(at, dirs, hm))


def covariance_targets(p: int, x_idx: tuple, y_idx: tuple) -> float:
    """Closed-form covariances of value/gradient/Hessian of the chart at 0."""
    d = lambda a, b: 1.0 if a == b else 0.0  # noqa: E731
    k, l = len(x_idx), len(y_idx)
    if (k, l) == (0, 0):
        return 1.0
    if k + l == 1 or k + l == 3:
        return 0.0
    if (k, l) == (1, 1):
        return p * d(x_idx[0], y_idx[0])
    if (k, l) in ((0, 2), (2, 0)):
        i, j = x_idx if k == 2 else y_idx
        return -p * d(i, j)
    if (k, l) == (2, 2):
        i, j = x_idx
        kk, ll = y_idx
        return p * (p - 1) * (d(i, j) * d(kk, ll) + d(i, ll) * d(j, kk) + d(i, kk) * d(j, ll)) + p * d(
            i, j
        ) * d(kk, ll)
    raise ValueError("only value, gradient and Hessian entries are tabulated")


def _chart_jets(J_batch: np.ndarray, p: int, N: int):
    """Value, gradient and Hessian of the north-pole chart for a batch of coupling tensors."""
    S = symmetrize(J_batch, batch=True) * N ** (-(p - 1) / 2.0)
    # contract all but two axes with e_N: only the last coordinate is non-zero
    A = S[(slice(None), slice(None), slice(None)) + (N - 1,) * (p - 2)] * N ** ((p - 2) / 2.0)
    s = math.sqrt(N)
    H = A[:, N - 1, N - 1] * s * s
    grad = p * A[:, : N - 1, N - 1] * s
    hess_e = p * (p - 1) * A[:, : N - 1, : N - 1]
    value = H / s
    hess = s * (hess_e - (p * H / N)[:, None, None] * np.eye(N - 1))
    return value, grad, hess


def _cov_entry(a: np.ndarray, b: np.ndarray):
    a0 = a - a.mean()
    b0 = b - b.mean()
    prod = a0 * b0
    n = a.size
    return float(prod.sum() / (n - 1)), float(prod.std(ddof=1) / math.sqrt(n))


def verify_covariance_structure(params: ModelParams, trials: int = 10_000, seed: int = 0) -> dict:
    """Monte Carlo check of the value/gradient/Hessian covariances of the chart at the north pole.

    Each entry carries the estimate, its standard error, the closed-form target
    and the same target recovered by differentiating ``W(x, y)^p`` numerically.
    """
    if trials < 10_000:
        raise ValueError("verify_covariance_structure needs at least 10^4 trials")
    p, N = params.p, params.N
    if N < 5:
        raise ValueError("use N >= 5 so four distinct tangent indices exist")
    rng = stream(seed, "covariance")
    values, grads, hesses = [], [], []
    chunk = max(1, 2_000_000 // N**p)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        v, g, h = _chart_jets(rng.standard_normal((m,) + (N,) * p), p, N)
        values.append(v)
        grads.append(g)
        hesses.append(h)
        done += m
    v = np.concatenate(values)
    g = np.concatenate(grads)
    h = np.concatenate(hesses)

    def field_of(idx):
        if len(idx) == 0:
            return v
        if len(idx) == 1:
            return g[:, idx[0]]
        return h[:, idx[0], idx[1]]

    probes = [
        ("value variance", (), ()),
        ("gradient variance", (0,), (0,)),
        ("gradient variance", (1,), (1,)),
        ("gradient cross", (0,), (1,)),
        ("value-hessian diagonal", (), (0, 0)),
        ("value-hessian diagonal", (), (2, 2)),
        ("value-hessian off-diagonal", (), (0, 1)),
        ("hessian diagonal variance", (0, 0), (0, 0)),
        ("hessian diagonal variance", (1, 1), (1, 1)),
        ("hessian diagonal pair", (0, 0), (1, 1)),
        ("hessian off-diagonal variance", (0, 1), (0, 1)),
        ("hessian mixed", (0, 1), (2, 3)),
        ("hessian mixed", (0, 0), (1, 2)),
        ("gradient-value", (0,), ()),
        ("gradient-value", (2,), ()),
        ("gradient-hessian", (0,), (0, 0)),
        ("gradient-hessian", (0,), (1, 2)),
        ("gradient-hessian", (1,), (0, 1)),
    ]
    entries = []
    for name, a, b in probes:
        est, se = _cov_entry(field_of(a), field_of(b))
        target = covariance_targets(p, a, b)
        kernel = w_kernel_derivative(p, N - 1, a, b)
        entries.append(
            {
                "name": name,
                "x_indices": list(a),
                "y_indices": list(b),
                "estimate": est,
                "std_error": se,
                "target": target,
                "kernel_derivative": kernel,
                "z": (est - target) / se if se > 0 else 0.0,
            }
        )
    return {"p": p, "N": N, "trials": trials, "seed": seed, "entries": entries}


# -- disorder file format -----------------------------------------------------


def write_disorder(J: DisorderTensor, path) -> None:
    """Binary file: ``PSPN``, u16 version=1, u16 p, u32 N, u64 seed, then float64 LE couplings."""
    header = _HEADER.pack(_MAGIC, 1, J.p, J.N, J.seed & ((1 << 64) - 1))
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(J.coefficients, dtype="<f8").tobytes())


def read_disorder(path) -> DisorderTensor:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated disorder file")
    magic, version, p, N, seed = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != 1:
        raise ValueError(f"unsupported disorder file version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != N**p:
        raise ValueError(f"disorder file holds {body.size} couplings, expected {N ** p}")
    return DisorderTensor(ModelParams(p, N), body.astype(np.float64), seed)
