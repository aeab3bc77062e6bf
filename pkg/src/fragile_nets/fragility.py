"""Fragility classifier.

A state (the laws of the surviving values of every type right before t) is
fragile when every solution must jump at t.  The classifier

* bounds the near-zero mass of each type linearly, ``P(tau >= t, Y in (0, z)) g'(P(tau >= t)) >= c z``,
* forms the loss-intensity matrix ``M[x, x'] = C(x) kappa(x, x') c[x']``,
* computes the log Perron-Frobenius eigenvalue of each closed irreducible
  component of ``M`` and declares the state fragile if one of them is positive
  and not fragile if all of them are negative.

The borderline case rho = 0 can be probed with :func:`series_diagnostic`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import ndtr

from .core import DensitySpec, InteractionFn, TypedNetwork, g_prime, piecewise_linear_cdf
from .errors import InsufficientDataError, NoConvergenceError, ValidationError

MIN_SAMPLES = 100
PF_MAX_ITER = 10_000
DEFAULT_Z_SCAN = np.geomspace(1e-3, 0.5, 25)
TREND_BAND = 0.02


class Verdict(str, enum.Enum):
    FRAGILE = "Fragile"
    NOT_FRAGILE = "NotFragile"
    INCONCLUSIVE = "Inconclusive"


class Trend(str, enum.Enum):
    DIVERGING = "Diverging"
    BOUNDED = "Bounded"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class DensityRow:
    """A density sampled on a grid (piecewise linear in between), possibly unnormalised."""

    y: np.ndarray
    p: np.ndarray


@dataclass
class FragilityInput:
    """Marginals of surviving values per type plus their survival probabilities.

    Each marginal is a 1-d sample array, a :class:`DensityRow` or a
    :class:`~fragile_nets.core.DensitySpec`; all three describe the law of the
    surviving values conditional on survival.
    """

    marginals: Sequence
    survival: np.ndarray
    g: InteractionFn
    net: TypedNetwork
    z_scan: np.ndarray = field(default_factory=lambda: DEFAULT_Z_SCAN.copy())

    def __post_init__(self):
        self.survival = np.asarray(self.survival, dtype=float)
        self.z_scan = np.sort(np.asarray(self.z_scan, dtype=float))
        n = self.net.n
        if len(self.marginals) != n or self.survival.shape != (n,):
            raise ValidationError(f"fragility input needs one marginal and one survival value per type ({n})")
        if np.any(~(self.survival > 0)) or np.any(self.survival > 1):
            raise ValidationError("survival probabilities must lie in (0, 1]")
        if self.z_scan.size == 0 or np.any(self.z_scan <= 0):
            raise ValidationError("z_scan must be a non-empty grid of positive values")


@dataclass(frozen=True)
class Component:
    members: tuple
    closed: bool
    degenerate: bool
    rho: float

    def to_dict(self, types=None) -> dict:
        labels = [types[i] for i in self.members] if types is not None else list(self.members)
        return {"members": labels, "closed": self.closed, "degenerate": self.degenerate, "rho": self.rho}


@dataclass
class SeriesDiagnostic:
    partial_sums: np.ndarray
    log_terms: np.ndarray
    ratio: float
    trend: Trend

    def to_dict(self) -> dict:
        return {"partial_sums": self.partial_sums, "ratio": self.ratio, "trend": self.trend.value}


@dataclass
class FragilityReport:
    c: np.ndarray
    z: np.ndarray
    c_upper: np.ndarray
    z_upper: np.ndarray
    components: list
    upper_components: list
    verdict: Verdict
    series_diagnostic: SeriesDiagnostic | None = None
    types: tuple = ()

    @property
    def max_closed_rho(self) -> float:
        return max((c.rho for c in self.components if c.closed), default=-np.inf)

    def to_dict(self) -> dict:
        types = list(self.types) or None
        return {
            "types": list(self.types),
            "c": self.c,
            "z": self.z,
            "c_upper": self.c_upper,
            "z_upper": self.z_upper,
            "components": [c.to_dict(types) for c in self.components],
            "upper_components": [c.to_dict(types) for c in self.upper_components],
            "verdict": self.verdict.value,
            "series_diagnostic": self.series_diagnostic.to_dict() if self.series_diagnostic else None,
        }

    def table(self) -> str:
        """Plain-text table: type, c, z, component, rho, verdict."""
        labels = list(self.types) or list(range(len(self.c)))
        comp_of = {}
        for k, comp in enumerate(self.components):
            for m in comp.members:
                comp_of[m] = (k, comp)
        lines = [f"{'type':>10} {'c':>14} {'z':>12} {'comp':>5} {'closed':>6} {'rho':>14}"]
        for i, lab in enumerate(labels):
            k, comp = comp_of[i]
            lines.append(f"{str(lab):>10} {self.c[i]:>14.6g} {self.z[i]:>12.6g} {k:>5} "
                         f"{str(comp.closed).lower():>6} {comp.rho:>14.6g}")
        lines.append(f"verdict: {self.verdict.value}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# (c, z) estimation


def _row_cdf(row: DensityRow, z: np.ndarray) -> np.ndarray:
    try:
        return piecewise_linear_cdf(row.y, row.p, z)
    except ValidationError:
        raise InsufficientDataError("density row has no mass") from None


def conditional_cdf(marginal, z) -> np.ndarray:
    """P(Y < z | survived) for a sample array, density row or density spec."""
    z = np.asarray(z, dtype=float)
    if isinstance(marginal, DensitySpec):
        return np.asarray(marginal.cdf(z), dtype=float)
    if isinstance(marginal, DensityRow):
        return _row_cdf(marginal, z)
    s = np.sort(np.asarray(marginal, dtype=float).ravel())
    if s.size < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples per type, got {s.size}")
    if np.any(s < 0):
        raise ValidationError("surviving values must be nonnegative")
    # open interval (0, z): strict inequalities on both ends
    below = np.searchsorted(s, z, side="left") - np.searchsorted(s, 0.0, side="right")
    return below / s.size


def _envelopes(ratio: np.ndarray, z_scan: np.ndarray):
    lower = np.minimum.accumulate(ratio)
    upper = np.maximum.accumulate(ratio)
    c_low = float(lower.max())
    z_low = float(z_scan[np.flatnonzero(lower >= c_low)[-1]])
    c_up = float(upper.min())
    z_up = float(z_scan[np.flatnonzero(upper <= c_up)[-1]])
    return c_low, z_low, c_up, z_up


def scan_ratios(inp: FragilityInput) -> np.ndarray:
    """``P(tau >= t, Y in (0, z')) g'(P(tau >= t)) / z'`` for every type and scan point."""
    out = np.empty((inp.net.n, inp.z_scan.size))
    for i, marg in enumerate(inp.marginals):
        sub = inp.survival[i] * conditional_cdf(marg, inp.z_scan)
        out[i] = sub * g_prime(inp.g, float(inp.survival[i])) / inp.z_scan
    return out


def estimate_cz(inp: FragilityInput):
    """Lower- and upper-envelope (c, z) per type.

    The lower envelope at z is the largest c with the linear bound holding at
    every scan point z' <= z; its maximum over z is returned together with the
    largest z attaining it.  The upper envelope is the smallest c bounding the
    ratio from above on the scan points up to z.

    Returns ``(c_low, z_low, c_up, z_up)`` as arrays over types.
    """
    ratios = scan_ratios(inp)
    rows = [_envelopes(r, inp.z_scan) for r in ratios]
    c_low, z_low, c_up, z_up = (np.array(v) for v in zip(*rows))
    return c_low, z_low, c_up, z_up


# ---------------------------------------------------------------------------
# spectral analysis


def closed_components(M) -> list[Component]:
    """Strongly connected components of the positive-entry digraph of ``M``.

    ``closed`` means no positive entry leaves the component.  A singleton with
    zero self-weight is flagged degenerate and gets rho = -inf; rho of the other
    components is left as nan for :func:`log_pf_eigenvalue` to fill in.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or np.any(M < 0):
        raise ValidationError("M must be a square nonnegative matrix")
    pos = M > 0
    _, labels = connected_components(csr_matrix(pos), directed=True, connection="strong")
    comps = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        inside = labels == lab
        closed = not pos[np.ix_(members, ~inside)].any()
        degenerate = members.size == 1 and not pos[members[0], members[0]]
        comps.append(Component(tuple(int(m) for m in members), closed, degenerate,
                               -np.inf if degenerate else np.nan))
    comps.sort(key=lambda c: c.members[0])
    return comps


def log_pf_eigenvalue(M_sub, tol: float = 1e-8, max_iter: int = PF_MAX_ITER) -> float:
    """log of the spectral radius of a nonnegative irreducible matrix.

    Power iteration with repeated squaring on ``M / s + I`` (s the largest row
    sum) and a Collatz-Wielandt bracket; the shift makes periodic matrices primitive
    without moving the Perron root relative to the rest of the spectrum.
    """
    M = np.atleast_2d(np.asarray(M_sub, dtype=float))
    if M.shape[0] != M.shape[1] or np.any(M < 0):
        raise ValidationError("log_pf_eigenvalue needs a square nonnegative matrix")
    n = M.shape[0]
    if n == 1:
        return float(np.log(M[0, 0])) if M[0, 0] > 0 else -np.inf
    if not np.any(M > 0):
        return -np.inf
    # the spectral radius is homogeneous, so work at unit scale
    scale = float(M.sum(axis=1).max())
    B = M / scale + np.eye(n)
    # iterate with B^(2^k) so weakly coupled classes (|lambda_2| near rho) still converge
    P = B / B.sum(axis=1).max()
    v = np.ones(n) / n
    lo = hi = np.nan
    for _ in range(max_iter):
        w = B @ v
        q = w / v
        lo, hi = float(q.min()), float(q.max())
        if hi - lo <= 1e-14 * hi:
            break
        v = P @ w
        v /= v.sum()
        P = P @ P
        P /= P.sum(axis=1).max()
    else:
        if not hi - lo <= tol * hi:
            raise NoConvergenceError(
                f"power iteration did not converge in {max_iter} steps (bracket [{lo:.6g}, {hi:.6g}])"
            )
    lam = 0.5 * (lo + hi) - 1.0
    return float(np.log(lam) + np.log(scale)) if lam > 0 else -np.inf


def loss_matrix(net: TypedNetwork, c) -> np.ndarray:
    """M[x, x'] = C(x) kappa(x, x') c[x']."""
    return net.C[:, None] * net.kappa * np.asarray(c, float)[None, :]


def analyse(M, tol: float = 1e-8) -> list[Component]:
    comps = closed_components(M)
    out = []
    for comp in comps:
        if comp.degenerate:
            out.append(comp)
            continue
        idx = np.array(comp.members)
        rho = log_pf_eigenvalue(np.asarray(M)[np.ix_(idx, idx)], tol)
        out.append(Component(comp.members, comp.closed, False, rho))
    return out


def verdict_from(lower: list[Component], upper: list[Component], tol: float) -> Verdict:
    if any(c.closed and c.rho > tol for c in lower):
        return Verdict.FRAGILE
    if all(c.rho < -tol for c in upper if c.closed):
        return Verdict.NOT_FRAGILE
    return Verdict.INCONCLUSIVE


def classify(inp: FragilityInput, frag_tol: float = 1e-8, semimart: Mapping | None = None) -> FragilityReport:
    """Classify a state; ``semimart`` (keyword arguments of :func:`series_diagnostic`
    other than ``c``, ``z`` and ``net``) enables the series check on inconclusive states."""
    c_low, z_low, c_up, z_up = estimate_cz(inp)
    lower = analyse(loss_matrix(inp.net, c_low), frag_tol)
    upper = analyse(loss_matrix(inp.net, c_up), frag_tol)
    verdict = verdict_from(lower, upper, frag_tol)
    diag = None
    if verdict is Verdict.INCONCLUSIVE and semimart is not None:
        diag = series_diagnostic(c=c_low, z=z_low, net=inp.net, **semimart)
    return FragilityReport(c_low, z_low, c_up, z_up, lower, upper, verdict, diag, inp.net.types)


# ---------------------------------------------------------------------------
# borderline diagnostic


def series_a_tilde(alpha_bar: float, sigma_lo: float) -> float:
    """A value strictly below the bound -sqrt(pi/2) alpha_bar / sigma_lo."""
    bound = -np.sqrt(np.pi / 2) * alpha_bar / sigma_lo
    return bound - 0.01 * abs(bound) if bound != 0 else -0.01


def series_terms(c, z, net: TypedNetwork, x0: int, eps, alpha_bar: float, sigma_lo: float,
                 sigma_hi: float, t: float, eta: float, N_terms: int, a_tilde: float) -> np.ndarray:
    """Logarithms of the first ``N_terms`` terms of the divergence series started at type ``x0``."""
    c = np.asarray(c, float)
    z = np.asarray(z, float)
    eps = np.broadcast_to(np.asarray(eps, float), z.shape)
    K = loss_matrix(net, c)
    n = np.arange(1, N_terms + 2)
    s = t + eta / n
    out = np.full(N_terms, -np.inf)
    u = K[x0].copy()
    log_scale = 0.0
    for k in range(1, N_terms + 1):
        total = u.sum()
        if total <= 0:
            break
        lead = np.sqrt(s[k - 1] - s[k]) + a_tilde * (s[k] - t)
        out[k - 1] = np.log(lead) + np.log(total) + log_scale
        # step k -> k+1 multiplies by F_k on the current endpoint and by K
        arg = (z - eps + alpha_bar * (s[k - 1] - t)) / np.sqrt(
            sigma_lo**2 * (s[k - 1] - s[k]) + sigma_hi**2 * (s[k] - t))
        F = np.maximum(0.0, 1.0 - 4.0 * ndtr(-arg))
        u = (u * F) @ K
        m = u.max(initial=0.0)
        if m > 0:
            log_scale += np.log(m)
            u = u / m
    return out


def series_diagnostic(c, z, net: TypedNetwork, eps=None, alpha_bar: float = 0.0, sigma_lo: float = 1.0,
                      sigma_hi: float = 1.0, t: float = 0.0, eta: float | None = None,
                      N_terms: int = 200) -> SeriesDiagnostic:
    """Partial sums and growth trend of the divergence series along ``s_n = t + eta / n``.

    The trend comes from the geometric-mean ratio of consecutive terms over the
    last ``N_terms / 2`` terms; the worst starting type is reported.
    """
    c = np.asarray(c, float)
    z = np.asarray(z, float)
    if eps is None:
        eps = 0.5 * z
    eps = np.broadcast_to(np.asarray(eps, float), z.shape)
    if np.any(c < 0):
        raise ValidationError("series diagnostic: c must be nonnegative")
    if np.any(eps <= 0) or np.any(eps >= z):
        raise ValidationError("series diagnostic: need 0 < eps < z for every type")
    if not (sigma_lo > 0 and sigma_hi > 0):
        raise ValidationError("series diagnostic: sigma_lo and sigma_hi must be positive")
    if N_terms < 4:
        raise ValidationError("series diagnostic: N_terms must be at least 4")
    a_tilde = series_a_tilde(alpha_bar, sigma_lo)
    eta_max = 1.0 / a_tilde**2
    if eta is None:
        eta = min(1.0, 0.25 * eta_max)
    if not 0 < eta < eta_max:
        raise ValidationError(f"series diagnostic: eta must lie in (0, {eta_max:.6g}) so every term is positive")

    best = None
    for x0 in range(net.n):
        logs = series_terms(c, z, net, x0, eps, alpha_bar, sigma_lo, sigma_hi, t, eta, N_terms, a_tilde)
        half = N_terms // 2
        tail = logs[-half - 1:]
        if np.all(np.isfinite(tail)):
            ratio = float(np.exp((tail[-1] - tail[0]) / half))
        else:
            ratio = 0.0
        if best is None or ratio > best[0]:
            best = (ratio, logs)
    ratio, logs = best
    with np.errstate(over="ignore"):
        partial = np.cumsum(np.exp(logs))
    if ratio > 1 + TREND_BAND:
        trend = Trend.DIVERGING
    elif ratio < 1 - TREND_BAND:
        trend = Trend.BOUNDED
    else:
        trend = Trend.UNDETERMINED
    return SeriesDiagnostic(partial, logs, ratio, trend)
