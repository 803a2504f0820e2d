"""Numerical enumeration of critical points of ``H_N`` on the sphere of radius ``sqrt(N)``.

Critical points are found by batched Riemannian Newton iterations started
from uniform points, deduplicated in restart order, closed under the
antipodal map and classified by Morse index. Completeness is a heuristic
backed by restart saturation and by agreement of mean counts with the
Kac-Rice integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .constants import ModelParams, TheoryConstants
from .hamiltonian import DisorderTensor, SpherePoint, sample_disorder, value_grad_hess
from .streams import derive_seed, stream

__all__ = [
    "EnumerationError",
    "CriticalPoint",
    "CriticalSet",
    "RESIDUAL_TOL",
    "DEDUP_OVERLAP",
    "DEGENERATE_EIG",
    "batched_frames",
    "newton_solve",
    "find_all",
    "find_low",
    "window_select",
    "pair_counts",
    "separation_stats",
    "crt_count",
    "pair_identity_holds",
    "completeness_check",
]

RESIDUAL_TOL = 1e-10  # times sqrt(N)
DEDUP_OVERLAP = 1.0 - 1e-8
DEGENERATE_EIG = 1e-8
ARMIJO = 1e-4
START_CHUNK = 1024


class EnumerationError(RuntimeError):
    """No Newton run converged."""


@dataclass(frozen=True)
class CriticalPoint:
    location: SpherePoint
    value: float
    grad_residual: float
    hessian_spectrum: np.ndarray
    morse_index: int
    degenerate: bool = False

    @property
    def min_eig(self) -> float:
        return float(self.hessian_spectrum[0])

    def as_dict(self, with_location: bool = False) -> dict:
        d = {
            "value": self.value,
            "grad_residual": self.grad_residual,
            "morse_index": self.morse_index,
            "min_eig": self.min_eig,
            "degenerate": self.degenerate,
        }
        if with_location:
            d["location"] = self.location.coords.tolist()
        return d


@dataclass(frozen=True)
class CriticalSet:
    points: tuple
    params: ModelParams
    disorder_seed: int
    restarts_used: int
    window: tuple | None = None
    converged_runs: int = 0
    residual_tol: float = RESIDUAL_TOL

    def __len__(self):
        return len(self.points)

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.points])

    @property
    def locations(self) -> np.ndarray:
        if not self.points:
            return np.empty((0, self.params.N))
        return np.stack([c.location.coords for c in self.points])

    @property
    def indices(self) -> np.ndarray:
        return np.array([c.morse_index for c in self.points], dtype=int)


# -- batched geometry -------------------------------------------------------------------------


def batched_frames(X: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frames ``(B, N, N-1)`` at points ``X`` on the sphere.

    Householder reflection sending ``e_N`` to ``-+ x/|x|``; the sign is chosen
    to keep the reflector away from zero.
    """
    B, N = X.shape
    s = X / np.linalg.norm(X, axis=1, keepdims=True)
    sgn = np.where(s[:, -1] > 0, 1.0, -1.0)
    v = s * sgn[:, None]
    v[:, -1] += 1.0
    vv = np.einsum("bi,bi->b", v, v)
    Q = np.broadcast_to(np.eye(N), (B, N, N)) - 2.0 * v[:, :, None] * v[:, None, :] / vv[:, None, None]
    return Q[:, :, : N - 1]


def _jets(J: DisorderTensor, X: np.ndarray):
    """Values, tangent gradients, tangent Hessians and frames at ``X``."""
    N = X.shape[1]
    H, G, Hs = value_grad_hess(J, X)
    E = batched_frames(X)
    Et = np.swapaxes(E, 1, 2)
    g = (Et @ G[:, :, None])[..., 0]
    R = Et @ Hs @ E
    R -= (J.p * H / N)[:, None, None] * np.eye(N - 1)
    R = 0.5 * (R + np.swapaxes(R, 1, 2))
    return H, g, R, E


def _tangent_grad_norm(J: DisorderTensor, X: np.ndarray) -> np.ndarray:
    H, G, _ = value_grad_hess(J, X)
    N = X.shape[1]
    # x . grad = p H by homogeneity
    sq = np.einsum("bi,bi->b", G, G) - (J.p * H) ** 2 / N
    return np.sqrt(np.maximum(sq, 0.0))


def _retract(X: np.ndarray, D: np.ndarray, t: np.ndarray) -> np.ndarray:
    Y = X + t[:, None] * D
    return Y * (math.sqrt(X.shape[1]) / np.linalg.norm(Y, axis=1, keepdims=True))


def _direction(g, R, E, mode: str, radius: float):
    if mode == "descent":
        w, U = np.linalg.eigh(R)
        gu = np.einsum("bij,bi->bj", U, g)
        scale = np.maximum(np.abs(w), 1e-3 * np.maximum(np.abs(w).max(axis=1, keepdims=True), 1.0))
        y = -np.einsum("bij,bj->bi", U, gu / scale)
    else:
        try:
            y = -np.linalg.solve(R, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            y = -np.stack([np.linalg.lstsq(r, gi, rcond=None)[0] for r, gi in zip(R, g)])
    norm = np.linalg.norm(y, axis=1)
    y *= np.minimum(1.0, radius / np.maximum(norm, 1e-300))[:, None]
    return (E @ y[..., None])[..., 0]


_HALVINGS = 10


def _backtrack(J, mode, Xa, D, H, g, gn, E, pending, Xn):
    """Armijo backtracking for the rows ``pending``; accepted rows are written to ``Xn``.

    Returns the rows for which no step was accepted.
    """
    t = np.ones(pending.size)
    if mode == "descent":
        slope = np.einsum("bi,bi->b", g[pending], (np.swapaxes(E[pending], 1, 2) @ D[pending][..., None])[..., 0])
    for _ in range(_HALVINGS):
        Y = _retract(Xa[pending], D[pending], t)
        if mode == "descent":
            ok = value_grad_hess(J, Y)[0] <= H[pending] + ARMIJO * t * np.minimum(slope, 0.0)
        else:
            ok = _tangent_grad_norm(J, Y) <= (1.0 - ARMIJO * t) * gn[pending]
        Xn[pending[ok]] = Y[ok]
        pending, t = pending[~ok], t[~ok] * 0.5
        if mode == "descent":
            slope = slope[~ok]
        if pending.size == 0:
            break
    return pending


def newton_solve(
    J: DisorderTensor,
    X0: np.ndarray,
    mode: str = "newton",
    max_iter: int = 200,
    radius: float = 0.5,
    polish: int = 2,
    stall_limit: int = 8,
):
    """Batched damped Riemannian Newton from starting points ``X0`` (B, N).

    ``mode="newton"`` targets critical points of any index with backtracking
    on the gradient norm; ``mode="descent"`` replaces Hessian eigenvalues by
    their absolute values (bounded below) and backtracks on ``H``, so it
    converges to local minima. Steps are clipped to ``radius``.

    Returns ``(X, residual, converged)``.
    """
    X = np.array(X0, dtype=float)
    B, N = X.shape
    X *= math.sqrt(N) / np.linalg.norm(X, axis=1, keepdims=True)
    tol = RESIDUAL_TOL * math.sqrt(N)
    res = np.full(B, np.inf)
    done = np.zeros(B, dtype=bool)
    active = np.arange(B)
    stalls = np.zeros(B, dtype=int)
    for _ in range(max_iter):
        if active.size == 0:
            break
        Xa = X[active]
        H, g, R, E = _jets(J, Xa)
        gn = np.linalg.norm(g, axis=1)
        res[active] = gn
        conv = gn <= tol
        done[active[conv]] = True
        keep = ~conv
        active, Xa, H, g, R, E, gn = active[keep], Xa[keep], H[keep], g[keep], R[keep], E[keep], gn[keep]
        if active.size == 0:
            break
        D = _direction(g, R, E, mode, radius)
        Xn = Xa.copy()
        pending = _backtrack(J, mode, Xa, D, H, g, gn, E, np.arange(active.size), Xn)
        if pending.size and mode == "newton":
            # Newton failed to reduce |g|: descend on |g|^2 along -Hess g instead
            y = -(R[pending] @ g[pending][..., None])[..., 0]
            ny = np.linalg.norm(y, axis=1)
            y *= (np.minimum(radius, gn[pending]) / np.maximum(ny, 1e-300))[:, None]
            D[pending] = (E[pending] @ y[..., None])[..., 0]
            pending = _backtrack(J, mode, Xa, D, H, g, gn, E, pending, Xn)
        stuck = np.zeros(active.size, dtype=bool)
        stuck[pending] = True
        stalls[active] = np.where(stuck, stalls[active] + 1, 0)
        X[active] = Xn
        # runs that cannot make progress sit near a non-critical minimum of |g|
        active = active[stalls[active] < stall_limit]
    # final polish with undamped Newton keeps the residual well below tolerance
    idx = np.flatnonzero(done)
    for _ in range(polish):
        if idx.size == 0:
            break
        _, g, R, E = _jets(J, X[idx])
        y = -np.linalg.solve(R, g[..., None])[..., 0]
        small = np.linalg.norm(y, axis=1) < 1e-3
        Y = _retract(X[idx], (E @ y[..., None])[..., 0], np.ones(idx.size))
        X[idx[small]] = Y[small]
    if idx.size:
        _, g, _, _ = _jets(J, X[idx])
        res[idx] = np.linalg.norm(g, axis=1)
        done[idx] = res[idx] <= tol
    return X, res, done


def _classify(J: DisorderTensor, X: np.ndarray) -> list[CriticalPoint]:
    if X.shape[0] == 0:
        return []
    H, g, R, _ = _jets(J, X)
    w = np.linalg.eigvalsh(R)
    out = []
    for i in range(X.shape[0]):
        spec = w[i]
        out.append(
            CriticalPoint(
                location=SpherePoint(X[i]),
                value=float(H[i]),
                grad_residual=float(np.linalg.norm(g[i])),
                hessian_spectrum=spec,
                morse_index=int(np.count_nonzero(spec < 0.0)),
                degenerate=bool(np.any(np.abs(spec) < DEGENERATE_EIG)),
            )
        )
    return out


def _dedup(X: np.ndarray, existing: np.ndarray | None = None) -> np.ndarray:
    """Keep points in order, dropping any with overlap above ``DEDUP_OVERLAP`` to an earlier one."""
    N = X.shape[1] if X.size else (existing.shape[1] if existing is not None else 0)
    kept = [] if existing is None else list(existing)
    for x in X:
        if kept:
            K = np.asarray(kept)
            if np.max(K @ x) / N > DEDUP_OVERLAP:
                continue
        kept.append(x)
    n0 = 0 if existing is None else len(existing)
    return np.asarray(kept[n0:]).reshape(-1, N)


def _with_antipodes(X: np.ndarray) -> np.ndarray:
    if X.shape[0] == 0:
        return X
    both = np.concatenate([X, -X])
    return _dedup(both)


def _starts(seed: int, count: int, N: int, kind: str = "restart") -> np.ndarray:
    chunks = []
    for k in range(-(-count // START_CHUNK)):
        chunks.append(stream(seed, kind, k).standard_normal((START_CHUNK, N)))
    X = np.concatenate(chunks)[:count] if chunks else np.empty((0, N))
    return X * (math.sqrt(N) / np.linalg.norm(X, axis=1, keepdims=True))


def _ordered_by_value(points: list[CriticalPoint]) -> tuple:
    return tuple(sorted(points, key=lambda c: (c.value, tuple(np.round(c.location.coords, 12)))))


def find_all(J: DisorderTensor, restarts: int, seed: int, batch: int = 8192, max_iter: int = 60) -> CriticalSet:
    """Critical points reached by Newton from ``restarts`` uniform starts.

    Starts are a deterministic prefix-stable sequence for ``seed``; the set is
    deduplicated in restart order, closed under ``sigma -> -sigma`` and sorted by value.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    N = J.N
    X0 = _starts(seed, restarts, N)
    found = np.empty((0, N))
    converged = 0
    for lo in range(0, restarts, batch):
        X, _, ok = newton_solve(J, X0[lo : lo + batch], mode="newton", max_iter=max_iter)
        converged += int(ok.sum())
        new = _dedup(X[ok], found)
        found = np.concatenate([found, new])
    if converged == 0:
        raise EnumerationError(f"none of {restarts} Newton runs converged (N={N}, p={J.p})")
    pts = _classify(J, _with_antipodes(found))
    return CriticalSet(
        points=_ordered_by_value(pts),
        params=J.params,
        disorder_seed=J.seed,
        restarts_used=restarts,
        converged_runs=converged,
    )


def _kicked(rng: np.random.Generator, base: np.ndarray, copies: int, scale: float) -> np.ndarray:
    N = base.shape[1]
    B = np.repeat(base, copies, axis=0)
    Z = rng.standard_normal(B.shape)
    Z -= (np.einsum("bi,bi->b", Z, B) / N)[:, None] * B
    Z *= (scale * math.sqrt(N) / np.linalg.norm(Z, axis=1))[:, None]
    return B + Z


def _bridges(P: np.ndarray, fractions=(0.25, 0.5, 0.75)) -> np.ndarray:
    """Points on the chords between all pairs of rows of ``P``."""
    i, j = np.triu_indices(P.shape[0], k=1)
    out = [(1.0 - t) * P[i] + t * P[j] for t in fractions]
    X = np.concatenate(out) if out else np.empty((0, P.shape[1]))
    keep = np.linalg.norm(X, axis=1) > 1e-6
    return X[keep]


def find_low(
    J: DisorderTensor,
    window: tuple[float, float],
    restarts: int,
    seed: int,
    hops: int = 6,
    kicks: int = 8,
    kick_scales: tuple = (0.3,),
    bridge_points: int = 12,
    max_iter: int = 200,
    descent_radius: float | None = None,
) -> CriticalSet:
    """Critical points with values in ``window``, for dimensions too large to enumerate.

    Local minima come from saddle-free Newton descent from ``restarts``
    uniform starts. Low points found so far are then used as seeds, over up
    to ``hops`` rounds or until nothing new turns up:

    * tangent Gaussian kicks of norm ``scale * sqrt(N)`` for each scale,
      re-solved by descent (neighbouring minima) and plain Newton (saddles);
    * plain Newton from chord points between pairs of the ``bridge_points``
      lowest points, where index-1 saddles joining two minima tend to sit.

    Descent steps are clipped to ``descent_radius`` (default ``sqrt(N)/2``).
    """
    N = J.N
    lo, hi = window
    margin = 0.5 * (hi - lo) if math.isfinite(hi - lo) else 2.0
    # descent backtracks on H, so long steps are safe and save the trek from random starts
    dr = 0.5 * math.sqrt(N) if descent_radius is None else descent_radius
    X, _, ok = newton_solve(J, _starts(seed, restarts, N), mode="descent", max_iter=max_iter, radius=dr)
    found = _dedup(X[ok])
    converged = int(ok.sum())
    frontier = found
    total = restarts
    for hop in range(hops):
        if frontier.shape[0] == 0:
            break
        vals = value_grad_hess(J, frontier)[0]
        seeds_ = frontier[vals <= hi + margin]
        allv = value_grad_hess(J, found)[0]
        low = found[np.argsort(allv)[:bridge_points]]
        low = low[value_grad_hess(J, low)[0] <= hi + margin]
        if seeds_.shape[0] == 0 and hop > 0:
            break
        rng = stream(seed, "basin-hop", hop)
        batches = [("descent", _kicked(rng, seeds_, kicks, sc)) for sc in kick_scales]
        batches += [("newton", Y) for _, Y in batches]
        bridge = _bridges(low)
        if bridge.shape[0]:
            batches.append(("newton", bridge))
        new_pts = []
        for mode, starts in batches:
            if starts.shape[0] == 0:
                continue
            total += starts.shape[0]
            if mode == "descent":
                Y, _, okY = newton_solve(J, starts, mode=mode, max_iter=max_iter, radius=dr)
            else:
                Y, _, okY = newton_solve(J, starts, mode=mode, max_iter=60)
            converged += int(okY.sum())
            new_pts.append(Y[okY])
        new = _dedup(np.concatenate(new_pts), found) if new_pts else np.empty((0, N))
        found = np.concatenate([found, new])
        frontier = new
        if new.shape[0] == 0:
            break
    found = _with_antipodes(found)
    pts = [c for c in _classify(J, found) if lo <= c.value <= hi]
    if converged == 0:
        raise EnumerationError(f"none of the low-value searches converged (N={N}, p={J.p})")
    return CriticalSet(
        points=_ordered_by_value(pts),
        params=J.params,
        disorder_seed=J.seed,
        restarts_used=total,
        window=(lo, hi),
        converged_runs=converged,
    )


def window_select(cs: CriticalSet, L: float, constants: TheoryConstants) -> CriticalSet:
    """Points with value in ``[m_N - L, m_N + L]``."""
    lo, hi = constants.m_N - L, constants.m_N + L
    pts = tuple(c for c in cs.points if lo <= c.value <= hi)
    return replace(cs, points=pts, window=(lo, hi))


def crt_count(cs: CriticalSet, B: tuple[float, float]) -> int:
    """Number of critical points with value in ``N * B`` (closed interval)."""
    lo, hi = cs.params.N * B[0], cs.params.N * B[1]
    return int(np.count_nonzero((cs.values >= lo) & (cs.values <= hi)))


def _overlap_matrix(X: np.ndarray) -> np.ndarray:
    N = X.shape[1]
    R = X @ X.T / N
    # snap self and antipodal overlaps so open intervals exclude them exactly
    R[R > DEDUP_OVERLAP] = 1.0
    R[R < -DEDUP_OVERLAP] = -1.0
    return R


def pair_counts(cs: CriticalSet, B: tuple[float, float], I_R: tuple[float, float] = (-1.0, 1.0)) -> int:
    """Ordered pairs of critical points with values in ``N * B`` and overlap in the open interval ``I_R``."""
    lo, hi = cs.params.N * B[0], cs.params.N * B[1]
    sel = (cs.values >= lo) & (cs.values <= hi)
    X = cs.locations[sel]
    if X.shape[0] < 2:
        return 0
    R = _overlap_matrix(X)
    np.fill_diagonal(R, 1.0)
    inside = (R > I_R[0]) & (R < I_R[1])
    np.fill_diagonal(inside, False)
    return int(inside.sum())


def pair_identity_holds(cs: CriticalSet, B: tuple[float, float]) -> bool:
    """``[Crt(B, (-1,1))]_2 == Crt(B)^2 - (1 + iota_p) Crt(B)`` for ``B`` below zero."""
    if B[1] >= 0:
        raise ValueError("the pair identity is stated for B inside the negative half-line")
    k = crt_count(cs, B)
    return pair_counts(cs, B) == k * k - (1 + cs.params.iota_p) * k


def separation_stats(cs_window: CriticalSet) -> float | None:
    """Largest ``|R(s1, s2)|`` over pairs with ``s1 != +-s2``; ``None`` if there are none."""
    X = cs_window.locations
    if X.shape[0] < 2:
        return None
    R = _overlap_matrix(X)
    mask = np.abs(R) < 1.0
    np.fill_diagonal(mask, False)
    if not mask.any():
        return None
    return float(np.abs(R[mask]).max())


def completeness_check(
    params: ModelParams,
    L: float,
    instances: int,
    restarts: int,
    seed: int,
    density=None,
    workers: int = 1,
) -> dict:
    """Empirical mean critical-point counts versus the Kac-Rice mean.

    Full-sphere counts are only trusted for ``N <= 8``.
    """
    from .kac_rice import KacRiceDensity, mean_crt
    from .parallel import ordered_map

    if params.N > 8:
        raise ValueError("full-sphere enumeration is only trusted for N <= 8")
    if density is None:
        density = KacRiceDensity(params)
    m = density.constants.m_N
    rows = ordered_map(_completeness_instance, [(params, L, restarts, seed, i, m) for i in range(instances)], workers)
    totals = np.array([r["total"] for r in rows], dtype=float)
    windows = np.array([r["window"] for r in rows], dtype=float)
    kr_total, kr_total_se = mean_crt((-math.inf, math.inf), density)
    kr_win, kr_win_se = mean_crt((m - L, m + L), density)

    def compare(emp, kr, kr_se):
        se_emp = float(emp.std(ddof=1) / math.sqrt(emp.size)) if emp.size > 1 else math.inf
        se = math.hypot(se_emp, kr_se)
        z = (float(emp.mean()) - kr) / se if se > 0 else math.inf
        return {"empirical_mean": float(emp.mean()), "empirical_se": se_emp, "kac_rice": kr,
                "kac_rice_se": kr_se, "combined_se": se, "z": z, "within_3se": abs(z) <= 3.0}

    return {
        "p": params.p,
        "N": params.N,
        "L": L,
        "instances": instances,
        "restarts": restarts,
        "seed": seed,
        "residual_tol": RESIDUAL_TOL * math.sqrt(params.N),
        "total": compare(totals, kr_total, kr_total_se),
        "window": compare(windows, kr_win, kr_win_se),
        "all_counts_even": bool(np.all(totals % 2 == 0)),
        "pair_identity_all": all(r["pair_identity"] for r in rows),
        "counts": [int(t) for t in totals],
    }


def _completeness_instance(args) -> dict:
    params, L, restarts, seed, i, m = args
    J = sample_disorder(params, derive_seed(seed, "instance", i))
    cs = find_all(J, restarts, derive_seed(seed, "restarts", i))
    vals = cs.values
    N = params.N
    bounds = [(-math.inf, -1e-12)]
    neg = np.unique(np.round(vals[vals < 0] / N, 9))
    # windows ending midway between distinct critical values below zero
    for k in range(1, neg.size):
        bounds.append((-math.inf, 0.5 * (neg[k - 1] + neg[k])))
    ok = all(pair_identity_holds(cs, b) for b in bounds)
    return {
        "total": len(cs),
        "window": int(np.count_nonzero((vals >= m - L) & (vals <= m + L))),
        "pair_identity": ok,
    }
