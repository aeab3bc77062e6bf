"""Fokker-Planck solver with an absorbing barrier at 0.

Each type's density of surviving particles solves

    p_t = -b(t) p_y + (sigma^2 / 2) p_yy   on (0, y_max),   p(t, 0) = p(t, y_max) = 0,

discretised with Crank-Nicolson in time and centred differences in space.  The
first step of every sweep is replaced by four implicit-Euler quarter steps
(Rannacher start-up) so that sharp initial data does not excite the
undamped high-frequency Crank-Nicolson modes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .core import DensitySpec, Grid, RunConfig, write_csv, write_json
from .errors import DegenerateMassError, DimensionMismatch, StabilityError, ValidationError

PECLET_MAX = 2.0
RANNACHER_SUBSTEPS = 4
MIN_MASS = 1e-12


@dataclass
class DensityField:
    """Per-type densities on the full grid (boundary nodes included).

    ``p[k, n]`` is the density of type k at ``times[n]``; ``theta`` its mass and
    ``lambda_bar[k, n]`` the default intensity on ``[times[n], times[n+1])``
    (the last entry repeats the previous one).  ``lambda_flux`` is the boundary
    rate read off the slope of ``p`` at 0 and ``flux`` the mass that left
    through the two boundaries during each step.
    """

    y: np.ndarray
    times: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    lambda_bar: np.ndarray
    lambda_flux: np.ndarray
    flux: np.ndarray
    clipped: np.ndarray
    types: tuple = ()

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def survival_at(self, n: int) -> np.ndarray:
        return self.theta[:, n]

    def summary(self) -> dict:
        return {
            "types": list(self.types),
            "t": self.times,
            "theta": self.theta,
            "lambda_bar": self.lambda_bar,
            "lambda_flux": self.lambda_flux,
        }

    def write_csv(self, path, stride: int = 1) -> None:
        labels = self.types or tuple(range(self.p.shape[0]))

        def rows():
            for k, lab in enumerate(labels):
                for n in range(0, len(self.times), stride):
                    t = self.times[n]
                    for j, yj in enumerate(self.y):
                        yield lab, t, yj, self.p[k, n, j]

        write_csv(path, ["type", "t", "y", "p"], rows())

    def write_json(self, path) -> None:
        write_json(path, self.summary())


def init_density(spec: DensitySpec, grid: Grid, tol: float = 1e-3) -> np.ndarray:
    """Initial density sampled on the grid, zero at both ends, unit discrete mass."""
    y = grid.y
    p = np.asarray(spec.pdf(y), dtype=float)
    peak = float(np.max(p, initial=0.0))
    if peak <= 0:
        raise ValidationError(f"initial density {spec.kind} has no mass on (0, {grid.y_max})")
    p0 = float(spec.pdf(np.array([0.0]))[0])
    if p0 > tol * peak:
        raise ValidationError(
            f"initial density {spec.kind} is {p0:.3g} at y=0; an absorbing barrier needs p(0) = 0"
        )
    p[0] = p[-1] = 0.0
    p = np.maximum(p, 0.0)
    mass = grid.dy * p.sum()
    if mass <= MIN_MASS:
        raise ValidationError(f"initial density {spec.kind} has no mass on the grid")
    return p / mass


def mass(row, dy: float) -> float:
    """Discrete mass (trapezoid rule; both boundary values are 0)."""
    return float(dy * np.sum(row))


def _coefficients(b: float, sigma: float, dy: float):
    d = 0.5 * sigma * sigma
    lower = d / dy**2 + b / (2 * dy)
    diag = -2 * d / dy**2
    upper = d / dy**2 - b / (2 * dy)
    return lower, diag, upper


def check_peclet(b: float, sigma: float, dy: float) -> None:
    pe = abs(b) * dy / sigma**2
    if pe > PECLET_MAX:
        raise StabilityError(
            f"Peclet number {pe:.3g} exceeds {PECLET_MAX}: refine the y-grid (|b|={abs(b):.3g}, dy={dy:.3g})"
        )


def _apply(u, lower, diag, upper):
    out = diag * u
    out[1:] += lower * u[:-1]
    out[:-1] += upper * u[1:]
    return out


def fp_step(row, b: float, sigma: float, dt: float, dy: float, theta: float = 0.5, return_flux: bool = False):
    """One theta-scheme step (0.5 = Crank-Nicolson, 1 = implicit Euler).

    ``row`` has the two boundary nodes at its ends.  Negative values produced by
    the scheme are clipped to 0 without renormalising.  With ``return_flux`` also
    returns the discrete boundary outflow (negative) and the clipped mass.
    """
    check_peclet(b, sigma, dy)
    row = np.asarray(row, dtype=float)
    u = row[1:-1]
    n = u.size
    lo, di, up = _coefficients(b, sigma, dy)
    rhs = u + (1 - theta) * dt * _apply(u, lo, di, up)
    ab = np.empty((3, n))
    ab[0, 0] = 0.0
    ab[0, 1:] = -theta * dt * up
    ab[1, :] = 1.0 - theta * dt * di
    ab[2, :-1] = -theta * dt * lo
    ab[2, -1] = 0.0
    v = solve_banded((1, 1), ab, rhs, check_finite=False)
    if return_flux:
        w = theta * v + (1 - theta) * u
        flux = dt * dy * ((di + lo) * w[0] + (di + up) * w[-1])
    neg = v < 0
    clipped = float(-dy * v[neg].sum()) if neg.any() else 0.0
    v[neg] = 0.0
    out = np.zeros_like(row)
    out[1:-1] = v
    if return_flux:
        return out, float(flux), clipped
    return out


def boundary_rate(row, sigma: float, dy: float) -> float:
    """-(sigma^2/2) p_y(0) / mass, with a second-order one-sided slope, clipped to <= 0."""
    row = np.asarray(row, dtype=float)
    m = mass(row, dy)
    if m < MIN_MASS:
        raise DegenerateMassError(f"boundary rate undefined: surviving mass {m:.3g} < {MIN_MASS}")
    # (-3 p0 + 4 p1 - p2) / (2 dy) with p0 = 0
    slope = (4 * row[1] - row[2]) / (2 * dy)
    return min(0.0, -0.5 * sigma**2 * slope / m)


def _drift_matrix(drift_schedule, n_types: int, n_t: int) -> np.ndarray:
    d = np.asarray(drift_schedule, dtype=float)
    if d.ndim == 1 and d.shape[0] == n_types:
        d = np.repeat(d[:, None], n_t, axis=1)
    if d.ndim != 2 or d.shape[0] != n_types or d.shape[1] not in (n_t, n_t + 1):
        raise DimensionMismatch(
            f"drift schedule must have shape ({n_types}, {n_t}) or ({n_types}, {n_t + 1}), got {d.shape}"
        )
    if not np.all(np.isfinite(d)):
        raise ValidationError("drift schedule must be finite")
    return d[:, :n_t]


def evolve(p0, drift_schedule, sigma: float, dt: float, dy: float, n_t: int,
           t0: float = 0.0, types=(), rannacher: bool = True) -> DensityField:
    """Forward sweep of every type from the rows ``p0`` over ``n_t`` steps.

    ``drift_schedule[k, n]`` is the drift of type k on step n.  The masses of
    ``p0`` are taken as the starting survival probabilities, so a sweep may start
    mid-horizon from a previously computed state.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    n_types, n_nodes = p0.shape
    drift = _drift_matrix(drift_schedule, n_types, n_t)
    check_peclet(float(np.max(np.abs(drift), initial=0.0)), sigma, dy)
    p = np.empty((n_types, n_t + 1, n_nodes))
    theta = np.empty((n_types, n_t + 1))
    flux = np.zeros((n_types, n_t))
    clipped = np.zeros((n_types, n_t))
    for k in range(n_types):
        row = p0[k].copy()
        row[0] = row[-1] = 0.0
        p[k, 0] = row
        theta[k, 0] = mass(row, dy)
        for n in range(n_t):
            b = drift[k, n]
            if n == 0 and rannacher:
                sub = dt / RANNACHER_SUBSTEPS
                fl = cl = 0.0
                for _ in range(RANNACHER_SUBSTEPS):
                    row, f, c = fp_step(row, b, sigma, sub, dy, theta=1.0, return_flux=True)
                    fl += f
                    cl += c
            else:
                row, fl, cl = fp_step(row, b, sigma, dt, dy, return_flux=True)
            p[k, n + 1] = row
            # running minimum absorbs round-off gains of order 1e-16
            theta[k, n + 1] = min(mass(row, dy), theta[k, n])
            flux[k, n] = fl
            clipped[k, n] = cl
    if np.any(theta[:, 1:] < MIN_MASS):
        k, n = np.argwhere(theta < MIN_MASS)[0]
        raise DegenerateMassError(f"surviving mass of type index {k} vanished at step {n}")
    lam = np.empty_like(theta)
    with np.errstate(divide="ignore"):
        lam[:, :-1] = np.minimum(0.0, np.log(theta[:, 1:] / theta[:, :-1]) / dt)
    lam[:, -1] = lam[:, -2] if n_t > 0 else 0.0
    lam_flux = np.array([[boundary_rate(p[k, n], sigma, dy) for n in range(n_t + 1)] for k in range(n_types)])
    times = t0 + dt * np.arange(n_t + 1)
    y = dy * np.arange(n_nodes)
    return DensityField(y, times, p, theta, lam, lam_flux, flux, clipped, tuple(types))


def initial_rows(cfg: RunConfig) -> np.ndarray:
    if not cfg.initial:
        raise ValidationError("config needs an 'initial' density spec per type for the PDE solver")
    return np.array([init_density(s, cfg.grid) for s in cfg.initial])


def evolve_config(cfg: RunConfig, drift_schedule, p0=None) -> DensityField:
    """Sweep the configured grid and horizon with the given drift schedule."""
    rows = initial_rows(cfg) if p0 is None else p0
    return evolve(rows, drift_schedule, cfg.dynamics.sigma, cfg.dt, cfg.grid.dy, cfg.grid.n_t,
                  types=cfg.network.types)


def survival_log_rate(theta, dt: float) -> np.ndarray:
    """Left-endpoint log-derivative of a survival curve, clipped to <= 0."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        return np.minimum(0.0, np.log(theta[..., 1:] / theta[..., :-1]) / dt)


__all__ = [
    "DensityField", "init_density", "fp_step", "boundary_rate", "evolve", "evolve_config",
    "initial_rows", "mass", "check_peclet", "survival_log_rate",
]
