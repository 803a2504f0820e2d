"""Perturbation experiments and extremal-process statistics.

``H^+ = H + H'/sqrt(N)`` with ``H'`` an independent copy has the law of
``H`` at radius ``s_N sqrt(N)``. Near-minimal critical points of ``H`` move
to critical points of ``H^+`` nearby, and their values shift by roughly
``H'(sigma)/sqrt(N) - C_0``: an independent standard Gaussian minus ``C_0``.
This module measures those shifts and the Poisson/Gumbel statistics of the
centered low critical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .constants import ModelParams, TheoryConstants, gumbel_min_cdf, gumbel_min_median, solve_constants
from .critical_points import CriticalPoint, CriticalSet, _classify, find_low, newton_solve, window_select
from .hamiltonian import DisorderTensor, evaluate_many, sample_disorder, value_grad_hess
from .parallel import ordered_map
from .streams import derive_seed, stream

__all__ = [
    "PerturbationPair",
    "MatchedPair",
    "PointProcessSample",
    "make_pair",
    "build_xi",
    "scaling_law_check",
    "match_critical_points",
    "quadratic_shift",
    "shift_distribution_test",
    "bin_limit_mean",
    "poisson_tests",
    "gumbel_test",
    "run_extremal",
    "run_perturb",
]


@dataclass
class PerturbationPair:
    base: DisorderTensor
    perturb: DisorderTensor
    _plus: DisorderTensor = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.base.params != self.perturb.params:
            raise ValueError("base and perturbation must share (p, N)")
        if self.base.seed == self.perturb.seed:
            raise ValueError("base and perturbation must use different seeds")

    @property
    def N(self) -> int:
        return self.base.N

    @property
    def s_N(self) -> float:
        return math.sqrt((self.N + 1) / self.N)

    @property
    def plus(self) -> DisorderTensor:
        """Couplings of ``H^+``; the Hamiltonian is linear in the couplings."""
        if self._plus is None:
            self._plus = self.base.combined(self.perturb, 1.0 / math.sqrt(self.N))
        return self._plus


def make_pair(params: ModelParams, seed: int, index: int = 0) -> PerturbationPair:
    base = sample_disorder(params, derive_seed(seed, "base", index))
    pert = sample_disorder(params, derive_seed(seed, "perturb", index))
    return PerturbationPair(base, pert)


@dataclass(frozen=True)
class MatchedPair:
    original: CriticalPoint
    matched: CriticalPoint | None
    overlap: float
    predicted_shift: float
    actual_shift: float
    residual: float
    accepted: bool
    quadratic_shift: float = math.nan
    trace_term: float = math.nan
    spectral_window: bool = False

    def as_dict(self) -> dict:
        return {
            "value": self.original.value,
            "morse_index": self.original.morse_index,
            "accepted": self.accepted,
            "overlap": self.overlap,
            "predicted_shift": self.predicted_shift,
            "actual_shift": self.actual_shift,
            "residual": self.residual,
            "quadratic_shift": self.quadratic_shift,
            "trace_term": self.trace_term,
            "spectral_window": self.spectral_window,
        }


@dataclass(frozen=True)
class PointProcessSample:
    """Centered critical values in ``[-L, L]`` for one instance.

    ``minimum`` is the lowest centered critical value found (it may lie
    below ``-L``).
    """

    centered_values: np.ndarray
    window_L: float
    parity_weight: float
    params: ModelParams
    minimum: float = math.nan
    seed: int = 0

    def __post_init__(self):
        v = np.sort(np.asarray(self.centered_values, dtype=float))
        if v.size and (v[0] < -self.window_L or v[-1] > self.window_L):
            raise ValueError("atoms outside the window")
        object.__setattr__(self, "centered_values", v)

    def counts(self, edges: np.ndarray) -> np.ndarray:
        return np.histogram(self.centered_values, bins=edges)[0]


def _one_per_antipodal_pair(cs: CriticalSet) -> list[CriticalPoint]:
    """For even ``p`` keep one representative of each ``{sigma, -sigma}``."""
    keep = []
    for c in cs.points:
        x = c.location.coords
        lead = x[np.flatnonzero(np.abs(x) > 1e-12)[0]]
        if lead > 0:
            keep.append(c)
    return keep


def build_xi(cs: CriticalSet, L: float, constants: TheoryConstants, minimum: float | None = None) -> PointProcessSample:
    """Atoms ``H(sigma) - m_N`` of the critical points within ``L`` of ``m_N``."""
    w = window_select(cs, L, constants)
    pts = _one_per_antipodal_pair(w) if cs.params.iota_p else list(w.points)
    vals = np.array([c.value - constants.m_N for c in pts])
    if minimum is None:
        minimum = float(cs.values.min() - constants.m_N) if len(cs) else math.nan
    return PointProcessSample(
        centered_values=vals,
        window_L=L,
        parity_weight=constants.parity_weight,
        params=cs.params,
        minimum=minimum,
        seed=cs.disorder_seed,
    )


# -- scaling law -------------------------------------------------------------------------------


def scaling_law_check(params: ModelParams, probes: int, seed: int, overlaps=(0.0, 0.5, 1.0)) -> dict:
    """Covariance of ``H^+`` over ``probes`` disorder draws at fixed points.

    Target: ``Cov(H^+(s), H^+(t)) = (N + 1) R(s, t)^p``. Also checks the
    pointwise definition ``H^+ = H + H'/sqrt(N)`` against direct evaluation.
    """
    if probes < 1000:
        raise ValueError("scaling_law_check needs at least 10^3 probes")
    N, p = params.N, params.p
    rng = stream(seed, "scaling-law")
    s = rng.standard_normal(N)
    s *= math.sqrt(N) / np.linalg.norm(s)
    e = rng.standard_normal(N)
    e -= (e @ s) / N * s
    e *= math.sqrt(N) / np.linalg.norm(e)
    # row 0 is the reference point s, the rest sit at the requested overlaps with it
    pts = np.stack([s] + [r * s + math.sqrt(max(1.0 - r * r, 0.0)) * e for r in overlaps])
    vals = np.empty((probes, len(overlaps) + 1))
    max_identity_err = 0.0
    for k in range(probes):
        pair = make_pair(params, derive_seed(seed, "scaling-law-pair", k))
        hp = evaluate_many(pair.plus, pts)
        direct = evaluate_many(pair.base, pts) + evaluate_many(pair.perturb, pts) / math.sqrt(N)
        max_identity_err = max(max_identity_err, float(np.max(np.abs(hp - direct) / (1.0 + np.abs(direct)))))
        vals[k] = hp
    x0 = vals[:, 0] - vals[:, 0].mean()
    rows = []
    for j, r in enumerate(overlaps):
        xj = vals[:, j + 1] - vals[:, j + 1].mean()
        prod = x0 * xj
        cov = float(prod.sum() / (probes - 1))
        se = float(prod.std(ddof=1) / math.sqrt(probes))
        target = (N + 1) * r**p
        rows.append({"overlap": r, "covariance": cov, "std_error": se, "target": target, "z": (cov - target) / se})
    return {"p": p, "N": N, "probes": probes, "seed": seed, "s_N": math.sqrt((N + 1) / N),
            "rows": rows, "max_identity_error": max_identity_err}


# -- matching ------------------------------------------------------------------------------------


def quadratic_shift(pair: PerturbationPair, c: CriticalPoint, constants: TheoryConstants) -> tuple[float, float, bool]:
    """Second-order prediction of the value shift beyond ``H'(sigma)/sqrt(N)``.

    Returns ``(-g'^T Hess^{-1} g' / (2N), p tr(Hess^{-1}) / (2N), in_window)``
    with Riemannian gradient ``g'`` of ``H'`` and Hessian of ``H`` at ``sigma``;
    the first two concentrate at ``-C_0`` and ``C_0``. ``in_window`` says whether
    the Hessian spectrum sits in the bulk interval of a typical deep minimum,
    ``[p(E_0 - E_inf) - d, p(E_0 + E_inf) + d]`` with ``d = p(E_0 - E_inf)/2``.
    """
    from .critical_points import _jets

    X = c.location.coords[None, :]
    N, p = pair.N, pair.base.p
    _, _, R, E = _jets(pair.base, X)
    _, Gp, _ = value_grad_hess(pair.perturb, X)
    g = E[0].T @ Gp[0]
    R = R[0]
    sol = np.linalg.solve(R, g)
    delta = -0.5 * float(g @ sol) / N
    trace = 0.5 * p * float(np.trace(np.linalg.inv(R))) / N
    gap = p * (constants.E_0 - constants.E_inf)
    lo, hi = gap - 0.5 * gap, p * (constants.E_0 + constants.E_inf) + 0.5 * gap
    w = c.hessian_spectrum
    return delta, trace, bool(w[0] >= lo and w[-1] <= hi)


def match_critical_points(
    pair: PerturbationPair, cs_window: CriticalSet, alpha: float, constants: TheoryConstants
) -> list[MatchedPair]:
    """Follow each critical point of ``H`` to a critical point of ``H^+`` by Newton from ``sigma``.

    A match is accepted iff Newton converges and ``R(sigma, sigma') >= 1 - N^{-2 alpha}``.
    """
    if not (1.0 / 3.0 < alpha < 0.5):
        raise ValueError("alpha must lie in (1/3, 1/2)")
    pts = list(cs_window.points)
    if not pts:
        return []
    N = pair.N
    X0 = np.stack([c.location.coords for c in pts])
    X, _, ok = newton_solve(pair.plus, X0, mode="newton", max_iter=100, radius=0.5)
    hprime = evaluate_many(pair.perturb, X0)
    new = _classify(pair.plus, X)
    gate = 1.0 - N ** (-2.0 * alpha)
    out = []
    for i, c in enumerate(pts):
        ov = float(X0[i] @ X[i] / N)
        accepted = bool(ok[i] and ov >= gate)
        pred = float(hprime[i]) / math.sqrt(N) - constants.C_0
        actual = new[i].value - c.value if accepted else math.nan
        q, tr, win = quadratic_shift(pair, c, constants)
        out.append(
            MatchedPair(
                original=c,
                matched=new[i] if accepted else None,
                overlap=ov,
                predicted_shift=pred,
                actual_shift=actual,
                residual=actual - pred if accepted else math.nan,
                accepted=accepted,
                quadratic_shift=q,
                trace_term=tr,
                spectral_window=win,
            )
        )
    return out


def _var_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    d = x - x.mean()
    var = float(d @ d / (n - 1))
    m4 = float(np.mean(d**4))
    return var, math.sqrt(max(m4 - var * var, 0.0) / n)


def shift_distribution_test(matches_by_instance, constants: TheoryConstants) -> dict:
    """Pooled statistics of value shifts of accepted matches.

    ``matches_by_instance`` is a sequence (one entry per instance) of
    sequences of :class:`MatchedPair`.
    """
    acc = [[m for m in ms if m.accepted] for ms in matches_by_instance]
    total = sum(len(ms) for ms in matches_by_instance)
    pooled = [m for ms in acc for m in ms]
    n = len(pooled)
    out = {"matches": total, "accepted": n, "match_rate": n / total if total else math.nan}
    if n < 3:
        return out
    a = np.array([m.actual_shift for m in pooled])
    pr = np.array([m.predicted_shift for m in pooled])
    res = a - pr
    var, var_se = _var_se(a)
    mean_se = math.sqrt(var / n)
    ks = stats.kstest(a, "norm", args=(-constants.C_0, 1.0))
    reg = stats.linregress(pr, a)
    # shifts of distinct points in the same instance, centered at the prediction mean
    xs, ys = [], []
    for ms in acc:
        v = np.array([m.actual_shift for m in ms]) + constants.C_0
        for i in range(v.size):
            for j in range(i + 1, v.size):
                xs.append(v[i])
                ys.append(v[j])
    if len(xs) >= 3:
        xs, ys = np.array(xs), np.array(ys)
        # symmetrized pair correlation with the known unit-variance, centered model
        corr = float(np.mean(xs * ys) / math.sqrt(np.mean(xs * xs) * np.mean(ys * ys)))
        corr_se = 1.0 / math.sqrt(xs.size)
    else:
        corr, corr_se = math.nan, math.nan
    q = np.array([m.quadratic_shift for m in pooled])
    tr = np.array([m.trace_term for m in pooled])
    out.update(
        {
            "target_mean": -constants.C_0,
            "mean": float(a.mean()),
            "mean_se": mean_se,
            "mean_z": (float(a.mean()) + constants.C_0) / mean_se,
            "variance": var,
            "variance_se": var_se,
            "variance_z": (var - 1.0) / var_se if var_se > 0 else math.inf,
            "ks_statistic": float(ks.statistic),
            "ks_pvalue": float(ks.pvalue),
            "slope": float(reg.slope),
            "slope_se": float(reg.stderr),
            "median_abs_residual": float(np.median(np.abs(res))),
            "pair_correlation": corr,
            "pair_correlation_se": corr_se,
            "pair_count": int(len(xs)),
            "quadratic_shift_mean": float(q.mean()),
            "trace_term_mean": float(tr.mean()),
            "spectral_window_fraction": float(np.mean([m.spectral_window for m in pooled])),
        }
    )
    return out


# -- extremal statistics ---------------------------------------------------------------------------


def bin_limit_mean(a: float, b: float, c_p: float) -> float:
    """``int_a^b exp(c_p x) dx``; for ``(n, n+1)`` this is ``exp(c_p n)(exp(c_p) - 1)/c_p``."""
    return (math.exp(c_p * b) - math.exp(c_p * a)) / c_p


def poisson_tests(samples, constants: TheoryConstants, density=None) -> dict:
    """Unit-bin count statistics over ``[-L, L]``.

    For each bin: mean against the limit ``int e^{c_p x}`` and, when a
    Kac-Rice ``density`` is given, against the finite-N intensity;
    dispersion ``Var/Mean``; second-moment ratio ``E[k^2 - k]/(E k)^2``.
    Also the same for the whole window and the correlation of neighbouring bins.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    L = samples[0].window_L
    Li = int(math.floor(L))
    edges = np.arange(-Li, Li + 1, dtype=float)
    C = np.stack([s.counts(edges) for s in samples]).astype(float)
    c = constants.c_p
    bins = []
    for k in range(edges.size - 1):
        bins.append(_count_stats(C[:, k], edges[k], edges[k + 1], constants, density))
    whole = _count_stats(C.sum(axis=1), edges[0], edges[-1], constants, density)
    corr = []
    for k in range(edges.size - 2):
        x, y = C[:, k], C[:, k + 1]
        if x.std() > 0 and y.std() > 0:
            r = float(np.corrcoef(x, y)[0, 1])
            corr.append({"bins": [float(edges[k]), float(edges[k + 1]), float(edges[k + 2])],
                         "correlation": r, "std_error": 1.0 / math.sqrt(len(samples))})
    return {"L": L, "samples": len(samples), "c_p": c, "bins": bins, "window": whole, "neighbour_correlation": corr}


def _count_stats(k: np.ndarray, a: float, b: float, constants: TheoryConstants, density) -> dict:
    mean = float(k.mean())
    var = float(k.var(ddof=1)) if k.size > 1 else math.nan
    fact2 = float(np.mean(k * k - k))
    d = {
        "bin": [float(a), float(b)],
        "mean": mean,
        "mean_se": math.sqrt(var / k.size) if k.size > 1 else math.nan,
        "limit_mean": bin_limit_mean(a, b, constants.c_p),
        "dispersion": var / mean if mean > 0 else math.nan,
        "second_moment_ratio": fact2 / mean**2 if mean > 0 else math.nan,
    }
    if density is not None:
        from .kac_rice import mean_crt

        m = constants.m_N
        d["kac_rice_mean"] = constants.parity_weight * mean_crt((m + a, m + b), density)[0]
    return d


def gumbel_test(samples, constants: TheoryConstants) -> dict:
    """KS distance of centered minima from the limit law and the median check.

    The low-value search is unbounded below, so the minimum is only unknown
    when no local minimum was found at all; such samples are excluded.
    """
    mins = np.array([s.minimum for s in samples], dtype=float)
    excluded = int(np.count_nonzero(~np.isfinite(mins)))
    m = np.sort(mins[np.isfinite(mins)])
    c = constants.c_p
    cdf = np.vectorize(lambda x: gumbel_min_cdf(x, c))
    ks = stats.kstest(m, cdf)
    med_target = gumbel_min_median(c)
    # asymptotic standard error of the sample median
    dens = math.exp(c * med_target) * math.exp(-math.exp(c * med_target) / c)
    med_se = 1.0 / (2.0 * dens * math.sqrt(m.size))
    probs = (np.arange(1, m.size + 1) - 0.5) / m.size
    theo = np.log(-c * np.log1p(-probs)) / c
    return {
        "samples": int(mins.size),
        "excluded": excluded,
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "median": float(np.median(m)),
        "median_target": med_target,
        "median_se": med_se,
        "median_z": (float(np.median(m)) - med_target) / med_se,
        "qq": [[float(t), float(e)] for t, e in zip(theo, m)],
    }


# -- drivers -----------------------------------------------------------------------------------


def _extremal_instance(args) -> dict:
    params, L, restarts, seed, i = args
    constants = solve_constants(params.p, params.N)
    J = sample_disorder(params, derive_seed(seed, "extremal-instance", i))
    cs = find_low(J, (-math.inf, constants.m_N + L), restarts, derive_seed(seed, "extremal-search", i))
    xi = build_xi(cs, L, constants)
    return {
        "index": i,
        "disorder_seed": J.seed,
        "centered_values": xi.centered_values.tolist(),
        "minimum": xi.minimum,
        "restarts_used": cs.restarts_used,
        "window_indices": [c.morse_index for c in window_select(cs, L, constants).points],
    }


def run_extremal(params: ModelParams, samples: int, L: float, restarts: int, seed: int, workers=None, density=None) -> dict:
    """Sample ``samples`` instances and return per-instance atoms plus Poisson and Gumbel statistics."""
    constants = solve_constants(params.p, params.N)
    rows = ordered_map(_extremal_instance, [(params, L, restarts, seed, i) for i in range(samples)], workers)
    xs = [
        PointProcessSample(np.array(r["centered_values"]), L, constants.parity_weight, params, r["minimum"], r["disorder_seed"])
        for r in rows
    ]
    idx = np.array([k for r in rows for k in r["window_indices"]], dtype=int)
    return {
        "p": params.p,
        "N": params.N,
        "L": L,
        "samples": samples,
        "restarts": restarts,
        "seed": seed,
        "constants": constants.as_dict(),
        "instances": rows,
        "poisson": poisson_tests(xs, constants, density),
        "gumbel": gumbel_test(xs, constants),
        "local_minimum_fraction": float(np.mean(idx == 0)) if idx.size else math.nan,
    }


def _perturb_instance(args) -> dict:
    params, L, alpha, restarts, seed, i = args
    constants = solve_constants(params.p, params.N)
    pair = make_pair(params, seed, i)
    cs = find_low(pair.base, (constants.m_N - L, constants.m_N + L), restarts, derive_seed(seed, "perturb-search", i))
    if params.iota_p:
        cs = CriticalSet(tuple(_one_per_antipodal_pair(cs)), cs.params, cs.disorder_seed, cs.restarts_used, cs.window)
    matches = match_critical_points(pair, cs, alpha, constants)
    return {
        "index": i,
        "base_seed": pair.base.seed,
        "perturb_seed": pair.perturb.seed,
        "matches": [m.as_dict() for m in matches],
    }


def run_perturb(params: ModelParams, samples: int, L: float, alpha: float, restarts: int, seed: int, workers=None) -> dict:
    constants = solve_constants(params.p, params.N)
    rows = ordered_map(_perturb_instance, [(params, L, alpha, restarts, seed, i) for i in range(samples)], workers)
    by_inst = [[_MatchView(d) for d in r["matches"]] for r in rows]
    return {
        "p": params.p,
        "N": params.N,
        "L": L,
        "alpha": alpha,
        "samples": samples,
        "restarts": restarts,
        "seed": seed,
        "overlap_gate": 1.0 - params.N ** (-2.0 * alpha),
        "instances": rows,
        "shifts": shift_distribution_test(by_inst, constants),
    }


class _MatchView:
    """Attribute access to a serialized match record."""

    def __init__(self, d: dict):
        self.__dict__.update(d)
