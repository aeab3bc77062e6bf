"""Domain types, configuration loading and result writers.

Every object here is immutable after construction: numpy arrays held by the
dataclasses are flagged read-only, so instances can be shared between workers.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError, ParseError, ValidationError

SEED_ENV = "FRAGILE_NETS_SEED"
THREADS_ENV = "FRAGILE_NETS_THREADS"

MASS_TOL = 1e-12
KAPPA_RENORM_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class TypedNetwork:
    """Finite type graph: masses ``mu``, physical adjacency ``O``, connectivity ``C``
    and the stochastic lending kernel ``kappa`` (rows are probability vectors)."""

    types: tuple
    mu: np.ndarray
    C: np.ndarray
    kappa: np.ndarray
    O: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.types)
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "mu", _frozen(self.mu))
        object.__setattr__(self, "C", _frozen(self.C))
        object.__setattr__(self, "kappa", _frozen(self.kappa))
        if self.O is not None:
            object.__setattr__(self, "O", _frozen(self.O, dtype=np.int8))
        if n == 0:
            raise ValidationError("network must have at least one type")
        if len(set(self.types)) != n:
            raise ValidationError("type labels must be unique")
        if self.mu.shape != (n,) or self.C.shape != (n,) or self.kappa.shape != (n, n):
            raise ValidationError("mu, C and kappa dimensions must match the number of types")
        if self.O is not None and self.O.shape != (n, n):
            raise ValidationError("O must be an n x n matrix")
        self.validate()

    @property
    def n(self) -> int:
        return len(self.types)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.mu)) or np.any(self.mu <= 0):
            raise ValidationError("mu: every type mass must be strictly positive")
        if abs(self.mu.sum() - 1.0) > MASS_TOL:
            raise ValidationError(f"mu: masses must sum to 1 (got {self.mu.sum():.15g})")
        if np.any(self.C < 0) or not np.all(np.isfinite(self.C)):
            raise ValidationError("C: connectivity must be finite and nonnegative")
        if np.any(self.kappa < 0) or not np.all(np.isfinite(self.kappa)):
            raise ValidationError("kappa: entries must be finite and nonnegative")
        rows = self.kappa.sum(axis=1)
        bad = ~((np.abs(rows - 1.0) <= MASS_TOL) | (rows == 0.0))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"kappa: row {self.types[i]!r} sums to {rows[i]:.15g}, expected 1 or 0")
        if self.O is not None:
            if not np.all((self.O == 0) | (self.O == 1)):
                raise ValidationError("O: entries must be 0 or 1")
            if np.any((self.kappa > 0) & (self.O == 0)):
                raise ValidationError("kappa: positive weight on an edge absent from O")

    @property
    def adjacency(self) -> np.ndarray:
        """O if supplied, else the support of kappa."""
        if self.O is not None:
            return self.O.astype(bool)
        return self.kappa > 0

    def nu(self) -> np.ndarray:
        """Density of kappa with respect to mu: kappa(x, x') = nu(x, x') mu(x')."""
        return self.kappa / self.mu[None, :]

    def weights(self) -> np.ndarray:
        """Edge weights C(x) kappa(x, x')."""
        return self.C[:, None] * self.kappa

    def index(self, label) -> int:
        return self.types.index(label)

    def with_kappa(self, kappa) -> "TypedNetwork":
        return TypedNetwork(self.types, self.mu, self.C, kappa, self.O if _support_ok(kappa, self.O) else None)

    def to_dict(self) -> dict:
        d = {
            "types": list(self.types),
            "mu": self.mu.tolist(),
            "C": self.C.tolist(),
            "kappa": self.kappa.tolist(),
        }
        if self.O is not None:
            d["O"] = self.O.astype(int).tolist()
        return d


def _support_ok(kappa, O) -> bool:
    return O is not None and not np.any((np.asarray(kappa) > 0) & (np.asarray(O) == 0))


def clustered_kernel(n: int) -> np.ndarray:
    return np.eye(n)


def uniform_kernel(n: int) -> np.ndarray:
    return np.full((n, n), 1.0 / n)


# ---------------------------------------------------------------------------
# interaction function g


_G_KINDS = ("log", "affine", "tabulated")
_G_ALIASES = {"log": "log", "affineminusone": "affine", "affine": "affine", "tabulated": "tabulated"}


@dataclass(frozen=True)
class InteractionFn:
    """Non-decreasing interaction function on (0, 1] with g(1) = 0.

    ``log`` is the natural logarithm, ``affine`` is z - 1 and ``tabulated`` is the
    piecewise-linear interpolant of (z, values) samples, extended linearly below
    the first breakpoint.
    """

    kind: str = "log"
    z: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        kind = _G_ALIASES.get(str(self.kind).lower().replace("_", "").replace("-", ""))
        if kind is None:
            raise ValidationError(f"g: unknown kind {self.kind!r}; expected one of {_G_KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "tabulated":
            if self.z is None or self.values is None:
                raise ValidationError("g: tabulated kind requires 'z' and 'values'")
            z = _frozen(self.z)
            v = _frozen(self.values)
            if z.ndim != 1 or z.shape != v.shape or z.size < 2:
                raise ValidationError("g: tabulated samples need matching 1-d arrays of length >= 2")
            if np.any(z <= 0) or np.any(z > 1) or np.any(np.diff(z) <= 0):
                raise ValidationError("g: breakpoints must be strictly increasing in (0, 1]")
            if z[-1] != 1.0 or v[-1] != 0.0:
                raise ValidationError("g: tabulated g must contain the point (1, 0)")
            if np.any(np.diff(v) < 0):
                raise ValidationError("g: tabulated values must be non-decreasing")
            object.__setattr__(self, "z", z)
            object.__setattr__(self, "values", v)
        else:
            object.__setattr__(self, "z", None)
            object.__setattr__(self, "values", None)

    def __call__(self, z):
        return g_eval(self, z)

    def prime(self, z):
        return g_prime(self, z)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "tabulated":
            d["z"] = self.z.tolist()
            d["values"] = self.values.tolist()
        return d


def _check_unit_interval(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)) or np.any(z > 1):
        raise DomainError("g is defined on (0, 1] only")
    return z


def _scalar_or_array(z, out):
    return float(out) if np.ndim(z) == 0 else out


def g_eval(g: InteractionFn, z):
    """Evaluate g on (0, 1]; raises DomainError outside it."""
    za = _check_unit_interval(z)
    if g.kind == "log":
        out = np.log(za)
    elif g.kind == "affine":
        out = za - 1.0
    else:
        out = np.interp(za, g.z, g.values)
        below = za < g.z[0]
        if np.any(below):
            slope = (g.values[1] - g.values[0]) / (g.z[1] - g.z[0])
            out = np.where(below, g.values[0] + slope * (za - g.z[0]), out)
    return _scalar_or_array(z, out)


def g_prime(g: InteractionFn, z):
    """Derivative of g; tabulated g uses the slope of the segment to the left of z."""
    za = _check_unit_interval(z)
    if g.kind == "log":
        out = 1.0 / za
    elif g.kind == "affine":
        out = np.ones_like(za)
    else:
        slopes = np.diff(g.values) / np.diff(g.z)
        idx = np.clip(np.searchsorted(g.z, za, side="left") - 1, 0, slopes.size - 1)
        out = slopes[idx]
    return _scalar_or_array(z, out)


def g_safe(g: InteractionFn, frac):
    """g on [0, 1] with g(0) taken as the right limit (-inf for log)."""
    frac = np.asarray(frac, dtype=float)
    out = np.empty_like(frac)
    zero = frac <= 0
    if np.any(~zero):
        out[~zero] = g_eval(g, frac[~zero])
    if np.any(zero):
        if g.kind == "log":
            out[zero] = -np.inf
        elif g.kind == "affine":
            out[zero] = -1.0
        else:
            slope = (g.values[1] - g.values[0]) / (g.z[1] - g.z[0])
            out[zero] = g.values[0] - slope * g.z[0]
    return out


# ---------------------------------------------------------------------------
# initial densities


_DENSITY_KINDS = ("truncated_gaussian", "triangle", "uniform", "tabulated", "mixture")


@dataclass(frozen=True)
class DensitySpec:
    """Initial law of the healthiness level of one type, supported on (0, inf)."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = str(self.kind).lower().replace("-", "_")
        if kind in ("truncatedgaussian", "gaussian", "normal"):
            kind = "truncated_gaussian"
        if kind not in _DENSITY_KINDS:
            raise ValidationError(f"density: unknown kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        p = dict(self.params)
        if kind == "truncated_gaussian":
            if p.get("sd", 0) <= 0:
                raise ValidationError("truncated_gaussian: sd must be positive")
        elif kind == "triangle":
            lo, pk, hi = p["lo"], p["peak"], p["hi"]
            if not (0 <= lo <= pk <= hi and lo < hi):
                raise ValidationError("triangle: need 0 <= lo <= peak <= hi, lo < hi")
        elif kind == "uniform":
            if not (0 <= p["lo"] < p["hi"]):
                raise ValidationError("uniform: need 0 <= lo < hi")
        elif kind == "tabulated":
            y = np.asarray(p["y"], float)
            v = np.asarray(p["p"], float)
            if y.ndim != 1 or y.shape != v.shape or y.size < 2 or np.any(np.diff(y) <= 0) or y[0] < 0:
                raise ValidationError("tabulated density: need increasing nonnegative y and matching p")
            if np.any(v < 0) or np.trapezoid(v, y) <= 0:
                raise ValidationError("tabulated density: values must be nonnegative with positive mass")
            p["y"], p["p"] = y, v
        else:
            comps = [c if isinstance(c, DensitySpec) else density_from_dict(c) for c in p["components"]]
            w = np.asarray(p["weights"], float)
            if w.shape != (len(comps),) or np.any(w < 0) or w.sum() <= 0:
                raise ValidationError("mixture: weights must be nonnegative, one per component")
            p["components"], p["weights"] = tuple(comps), w / w.sum()
        object.__setattr__(self, "params", p)

    def pdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        p = self.params
        if self.kind == "truncated_gaussian":
            m, s = p["mean"], p["sd"]
            z = stats.norm.sf(-m / s)
            out = stats.norm.pdf(y, m, s) / z
        elif self.kind == "triangle":
            lo, pk, hi = p["lo"], p["peak"], p["hi"]
            h = 2.0 / (hi - lo)
            up = np.where(pk > lo, h * (y - lo) / max(pk - lo, 1e-300), h)
            down = np.where(hi > pk, h * (hi - y) / max(hi - pk, 1e-300), h)
            out = np.where(y < pk, up, down)
            out = np.where((y < lo) | (y > hi), 0.0, out)
        elif self.kind == "uniform":
            lo, hi = p["lo"], p["hi"]
            out = np.where((y >= lo) & (y <= hi), 1.0 / (hi - lo), 0.0)
        elif self.kind == "tabulated":
            mass = np.trapezoid(p["p"], p["y"])
            out = np.interp(y, p["y"], p["p"], left=0.0, right=0.0) / mass
        else:
            out = sum(w * c.pdf(y) for w, c in zip(p["weights"], p["components"]))
        return np.where(y < 0, 0.0, out)

    def cdf(self, y) -> np.ndarray:
        """P(Y <= y); closed form where available."""
        y = np.asarray(y, dtype=float)
        p = self.params
        if self.kind == "truncated_gaussian":
            m, s = p["mean"], p["sd"]
            z = stats.norm.sf(-m / s)
            out = (stats.norm.cdf(y, m, s) - stats.norm.cdf(0.0, m, s)) / z
        elif self.kind == "uniform":
            out = (y - p["lo"]) / (p["hi"] - p["lo"])
        elif self.kind == "triangle":
            out = stats.triang.cdf(y, _triang_c(p), loc=p["lo"], scale=p["hi"] - p["lo"])
        elif self.kind == "tabulated":
            out = piecewise_linear_cdf(p["y"], p["p"], y)
        else:
            out = sum(w * c.cdf(y) for w, c in zip(p["weights"], p["components"]))
        return np.clip(np.where(y <= 0, 0.0, out), 0.0, 1.0)

    def mean(self) -> float:
        p = self.params
        if self.kind == "truncated_gaussian":
            m, s = p["mean"], p["sd"]
            a = -m / s
            return float(m + s * stats.norm.pdf(a) / stats.norm.sf(a))
        if self.kind == "triangle":
            return (p["lo"] + p["peak"] + p["hi"]) / 3.0
        if self.kind == "uniform":
            return (p["lo"] + p["hi"]) / 2.0
        if self.kind == "tabulated":
            y, v = p["y"], p["p"]
            return float(np.trapezoid(y * v, y) / np.trapezoid(v, y))
        return float(sum(w * c.mean() for w, c in zip(p["weights"], p["components"])))

    def upper(self) -> float:
        """A point beyond which the density is negligible."""
        p = self.params
        if self.kind == "truncated_gaussian":
            return p["mean"] + 8 * p["sd"]
        if self.kind in ("triangle", "uniform"):
            return float(p["hi"])
        if self.kind == "tabulated":
            return float(p["y"][-1])
        return max(c.upper() for c in p["components"])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.kind == "truncated_gaussian":
            m, s = p["mean"], p["sd"]
            return stats.truncnorm.rvs(-m / s, np.inf, loc=m, scale=s, size=n, random_state=rng)
        if self.kind == "triangle":
            if p["lo"] == p["hi"]:
                return np.full(n, p["lo"])
            return rng.triangular(p["lo"], p["peak"], p["hi"], size=n)
        if self.kind == "uniform":
            return rng.uniform(p["lo"], p["hi"], size=n)
        if self.kind == "tabulated":
            fy, fc = _tab_cdf_table(p["y"], p["p"])
            u = rng.uniform(size=n)
            return np.interp(u, fc, fy)
        comp = rng.choice(len(p["components"]), size=n, p=p["weights"])
        out = np.empty(n)
        for k, c in enumerate(p["components"]):
            idx = np.flatnonzero(comp == k)
            out[idx] = c.sample(rng, idx.size)
        return out

    def to_dict(self) -> dict:
        p = self.params
        if self.kind == "tabulated":
            return {"kind": self.kind, "y": p["y"].tolist(), "p": p["p"].tolist()}
        if self.kind == "mixture":
            return {"kind": self.kind, "weights": p["weights"].tolist(),
                    "components": [c.to_dict() for c in p["components"]]}
        return {"kind": self.kind, **{k: float(v) for k, v in p.items()}}


def _triang_c(p) -> float:
    return (p["peak"] - p["lo"]) / (p["hi"] - p["lo"])


def piecewise_linear_cdf(y, v, z) -> np.ndarray:
    """Exact normalised integral from y[0] to z of the piecewise-linear interpolant of (y, v)."""
    y = np.asarray(y, float)
    v = np.clip(np.asarray(v, float), 0.0, None)
    z = np.asarray(z, float)
    seg = 0.5 * (v[1:] + v[:-1]) * np.diff(y)
    total = seg.sum()
    if total <= 0:
        raise ValidationError("piecewise-linear density has no mass")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    j = np.clip(np.searchsorted(y, z, side="right") - 1, 0, y.size - 2)
    h = np.clip(z - y[j], 0.0, None)
    width = y[j + 1] - y[j]
    part = v[j] * h + (v[j + 1] - v[j]) * h**2 / (2 * width)
    out = np.where(z >= y[-1], total, cum[j] + np.minimum(part, seg[j]))
    return np.where(z <= y[0], 0.0, out) / total


def _tab_cdf_table(y, v, refine: int = 256):
    # fine table of the exact CDF, used for inverse-transform sampling
    fine = np.concatenate([np.linspace(y[i], y[i + 1], refine, endpoint=False) for i in range(y.size - 1)] + [y[-1:]])
    return fine, piecewise_linear_cdf(y, v, fine)


def density_from_dict(d: Mapping) -> DensitySpec:
    if isinstance(d, DensitySpec):
        return d
    d = dict(d)
    try:
        kind = d.pop("kind")
    except KeyError:
        raise ValidationError("density spec needs a 'kind'") from None
    try:
        return DensitySpec(kind, d)
    except KeyError as exc:
        raise ValidationError(f"density spec {kind!r} is missing parameter {exc}") from None


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class DriftVolSpec:
    alpha_prime: np.ndarray
    alpha: np.ndarray
    sigma: float = 1.0
    cbar: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha_prime", _frozen(self.alpha_prime))
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        if not self.sigma > 0:
            raise ValidationError("dynamics.sigma must be positive")
        if not self.cbar > 0:
            raise ValidationError("dynamics.cbar must be positive")
        if not self.gamma > 0:
            raise ValidationError("dynamics.gamma must be positive")
        if np.any(self.alpha < 0) or np.any(self.alpha_prime < 0):
            raise ValidationError("dynamics.alpha and dynamics.alpha_prime must be nonnegative")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.alpha_prime))):
            raise ValidationError("dynamics.alpha and dynamics.alpha_prime must be finite")

    def drift_bound(self) -> float:
        """Upper bound on |b| for the equilibrium drift."""
        return float(np.max(self.alpha_prime) + self.cbar * np.max(self.alpha))

    def to_dict(self) -> dict:
        return {"alpha_prime": self.alpha_prime.tolist(), "alpha": self.alpha.tolist(),
                "sigma": self.sigma, "cbar": self.cbar, "gamma": self.gamma}


@dataclass(frozen=True)
class Grid:
    y_max: float
    n_y: int
    n_t: int

    def __post_init__(self):
        if not self.y_max > 0:
            raise ValidationError("grid.y_max must be positive")
        if int(self.n_y) < 16:
            raise ValidationError("grid.n_y must be at least 16")
        if int(self.n_t) < 8:
            raise ValidationError("grid.n_t must be at least 8")
        object.__setattr__(self, "n_y", int(self.n_y))
        object.__setattr__(self, "n_t", int(self.n_t))

    @property
    def dy(self) -> float:
        return self.y_max / (self.n_y + 1)

    @property
    def y(self) -> np.ndarray:
        """All nodes including both boundary nodes (n_y + 2 points)."""
        return np.linspace(0.0, self.y_max, self.n_y + 2)


@dataclass(frozen=True)
class ParticleSpec:
    N: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValidationError("particles.N must be positive")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class Tolerances:
    picard_tol: float = 1e-6
    eq_tol: float = 1e-9
    frag_tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        for name in ("picard_tol", "eq_tol", "frag_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"tolerances.{name} must be positive")


@dataclass(frozen=True)
class RunConfig:
    network: TypedNetwork
    g: InteractionFn
    dynamics: DriftVolSpec
    T: float
    grid: Grid
    particles: ParticleSpec = field(default_factory=ParticleSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    initial: tuple = ()

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError("horizon must be positive")
        n = self.network.n
        if self.dynamics.alpha.shape != (n,) or self.dynamics.alpha_prime.shape != (n,):
            raise ValidationError("dynamics.alpha and alpha_prime need one entry per type")
        object.__setattr__(self, "initial", tuple(self.initial))
        if self.initial and len(self.initial) != n:
            raise ValidationError("initial: one density spec per type is required")

    @property
    def dt(self) -> float:
        return self.T / self.grid.n_t

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.grid.n_t + 1)

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = self.network.to_dict()
        d.update({
            "g": self.g.to_dict(),
            "dynamics": self.dynamics.to_dict(),
            "horizon": self.T,
            "grid": {"y_max": self.grid.y_max, "n_y": self.grid.n_y, "n_t": self.grid.n_t},
            "particles": {"N": self.particles.N, "seed": self.particles.seed},
            "tolerances": {"picard_tol": self.tolerances.picard_tol, "eq_tol": self.tolerances.eq_tol,
                           "frag_tol": self.tolerances.frag_tol, "max_iter": self.tolerances.max_iter},
        })
        if self.initial:
            d["initial"] = [s.to_dict() for s in self.initial]
        return d


def default_y_max(initial: Sequence[DensitySpec], dynamics: DriftVolSpec, T: float) -> float:
    """8 * (largest initial mean + |b|_max T + 4 sigma sqrt(T))."""
    m = max((s.mean() for s in initial), default=1.0)
    return 8.0 * (m + dynamics.drift_bound() * T + 4.0 * dynamics.sigma * math.sqrt(T))


def _as_matrix(value, n, name):
    a = np.asarray(value, dtype=float)
    if a.shape != (n, n):
        raise ValidationError(f"{name}: expected a {n}x{n} matrix")
    return a


def _as_vector(value, n, name, default=None):
    if value is None:
        if default is None:
            raise ValidationError(f"{name}: missing")
        return np.full(n, float(default))
    if isinstance(value, (int, float)):
        return np.full(n, float(value))
    a = np.asarray(value, dtype=float)
    if a.shape != (n,):
        raise ValidationError(f"{name}: expected {n} entries")
    return a


def network_from_dict(d: Mapping) -> TypedNetwork:
    if "types" not in d:
        raise ValidationError("config: 'types' is required")
    types = tuple(d["types"])
    n = len(types)
    mu = _as_vector(d.get("mu"), n, "mu", default=1.0 / n if n else None)
    C = _as_vector(d.get("C"), n, "C", default=0.0)
    O = _as_matrix(d["O"], n, "O") if d.get("O") is not None else None
    if d.get("kappa") is not None:
        kappa = _as_matrix(d["kappa"], n, "kappa")
    elif O is not None:
        w = O * mu[None, :]
        s = w.sum(axis=1, keepdims=True)
        kappa = np.divide(w, s, out=np.zeros_like(w), where=s > 0)
    else:
        kappa = np.eye(n)
    rows = kappa.sum(axis=1)
    near = (np.abs(rows - 1.0) <= KAPPA_RENORM_TOL) & (rows > 0)
    kappa = np.where(near[:, None], kappa / np.where(rows > 0, rows, 1.0)[:, None], kappa)
    return TypedNetwork(types, mu, C, kappa, O)


def config_from_dict(d: Mapping, *, env: Mapping | None = None) -> RunConfig:
    """Build and validate a RunConfig from the documented JSON structure."""
    env = os.environ if env is None else env
    try:
        net = network_from_dict(d)
        n = net.n
        g = InteractionFn(**d.get("g", {"kind": "log"}))
        dyn_d = dict(d.get("dynamics", {}))
        dynamics = DriftVolSpec(
            alpha_prime=_as_vector(dyn_d.get("alpha_prime"), n, "dynamics.alpha_prime", default=0.0),
            alpha=_as_vector(dyn_d.get("alpha"), n, "dynamics.alpha", default=0.0),
            sigma=float(dyn_d.get("sigma", 1.0)),
            cbar=float(dyn_d.get("cbar", 1.0)),
            gamma=float(dyn_d.get("gamma", 1.0)),
        )
        T = float(d.get("horizon", d.get("T", 1.0)))
        initial = tuple(density_from_dict(s) for s in d.get("initial", ()))
        grid_d = dict(d.get("grid", {}))
        y_max = grid_d.get("y_max")
        if y_max is None:
            y_max = default_y_max(initial, dynamics, T)
        grid = Grid(float(y_max), grid_d.get("n_y", 400), grid_d.get("n_t", 200))
        part_d = dict(d.get("particles", {}))
        seed = part_d.get("seed", 0)
        if env.get(SEED_ENV):
            seed = int(env[SEED_ENV])
        particles = ParticleSpec(part_d.get("N", 10_000), seed)
        tolerances = Tolerances(**d.get("tolerances", {}))
        return RunConfig(net, g, dynamics, T, grid, particles, tolerances, initial)
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"config: {exc}") from exc


def apply_overrides(d: dict, overrides: Sequence[str]) -> dict:
    """Apply ``dotted.path=value`` overrides; values are parsed as JSON when possible."""
    out = copy.deepcopy(d)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if isinstance(node, list):
                node = node[int(p)]
            else:
                node = node.setdefault(p, {})
        if isinstance(node, list):
            node[int(parts[-1])] = value
        else:
            node[parts[-1]] = value
    return out


def read_config_dict(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return data


def load_config(path, overrides: Sequence[str] = (), *, env: Mapping | None = None) -> RunConfig:
    return config_from_dict(apply_overrides(read_config_dict(path), overrides), env=env)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")


def config_hash(cfg_or_dict) -> str:
    d = cfg_or_dict.to_dict() if isinstance(cfg_or_dict, RunConfig) else cfg_or_dict
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# randomness


def type_rngs(seed: int, n_types: int) -> list[np.random.Generator]:
    """One Philox stream per type, spawned from a single seed."""
    children = np.random.SeedSequence(seed).spawn(n_types)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


# ---------------------------------------------------------------------------
# writers


def fmt(x) -> str:
    """12 significant digits, used for all floating-point output."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "-inf" if x < 0 else "inf"
        if math.isnan(x):
            return "nan"
        return f"{x:.12g}"
    return str(x)


def write_csv(path, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return float(f"{x:.12g}")
        return "-inf" if x < 0 else ("inf" if x > 0 else "nan")
    return obj


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2) + "\n", encoding="utf-8")
