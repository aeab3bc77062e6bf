"""Dynamic equilibrium: Picard iteration of the default-intensity map.

``apply_D`` takes a default-intensity path, solves the static equilibrium at
every time step, runs the Fokker-Planck sweep with the resulting drifts and
returns the log-derivative of the surviving mass.  ``picard_solve`` iterates
it to a fixed point, falling back to time-window marching when the full
horizon does not contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RunConfig, write_csv, write_json
from .errors import CascadeDetectedError, NoConvergenceError, ValidationError
from .fragility import DensityRow, FragilityInput, Verdict, classify
from .pde import DensityField, evolve, initial_rows
from .static_eq import StaticEquilibrium, general_drift, static_solve

DAMPING = 0.5
STALL_LIMIT = 5
JUMP_FACTOR = 1.5


@dataclass
class EquilibriumPath:
    times: np.ndarray
    lambda_bar: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    R: np.ndarray
    cb: np.ndarray
    cl: np.ndarray
    nu: np.ndarray
    drift: np.ndarray
    iterations: int
    residual_history: list
    types: tuple = ()
    windows: list = field(default_factory=list)
    density: DensityField | None = None
    objective: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def static_slice(self, n: int) -> StaticEquilibrium:
        lender = self.cl[:, n] > 0
        return StaticEquilibrium(self.r[:, n], self.R[:, n], self.cb[:, n], self.cl[:, n], self.nu[n],
                                 self.drift[:, n], lender)

    def to_dict(self) -> dict:
        return {
            "types": list(self.types),
            "t": self.times,
            "lambda_bar": self.lambda_bar,
            "theta": self.theta,
            "r": self.r,
            "R": self.R,
            "cb": self.cb,
            "cl": self.cl,
            "nu": self.nu,
            "drift": self.drift,
            "iterations": self.iterations,
            "residual_history": self.residual_history,
            "windows": self.windows,
            "objective": self.objective,
        }

    def write_json(self, path) -> None:
        write_json(path, self.to_dict())

    def write_csvs(self, out_dir) -> list[Path]:
        """One CSV per quantity: columns t followed by one column per type."""
        out_dir = Path(out_dir)
        written = []
        for name in ("lambda_bar", "theta", "r", "R", "cb", "cl", "drift"):
            arr = getattr(self, name)
            path = out_dir / f"{name}.csv"
            write_csv(path, ["t", *map(str, self.types)],
                      ([t, *arr[:, n]] for n, t in enumerate(self.times)))
            written.append(path)
        return written


def residual(a, b, mu, dt: float) -> float:
    """mu-weighted discrete L2([0, T]) distance over the step intervals."""
    d = np.asarray(a)[:, :-1] - np.asarray(b)[:, :-1]
    return float(np.sqrt(np.sum(np.asarray(mu)[:, None] * dt * d * d)))


def static_path(lambda_bar, cfg: RunConfig) -> list[StaticEquilibrium]:
    lam = np.asarray(lambda_bar, dtype=float)
    return [static_solve(lam[:, n], cfg) for n in range(lam.shape[1])]


def drift_schedule(lambda_bar, cfg: RunConfig) -> np.ndarray:
    """Equilibrium drift per type and step (left endpoint of each step)."""
    lam = np.asarray(lambda_bar, dtype=float)
    return np.array([static_solve(lam[:, n], cfg).drift for n in range(lam.shape[1] - 1)]).T


def _check_lambda(lambda_bar, cfg: RunConfig) -> np.ndarray:
    lam = np.asarray(lambda_bar, dtype=float)
    n_t = cfg.grid.n_t
    if lam.shape != (cfg.network.n, n_t + 1):
        raise ValidationError(f"lambda_bar must have shape ({cfg.network.n}, {n_t + 1}), got {lam.shape}")
    if np.any(lam > cfg.tolerances.frag_tol):
        raise ValidationError("lambda_bar must be nonpositive")
    return lam


def sweep(lambda_bar, cfg: RunConfig, p0=None) -> DensityField:
    """Density field produced by the equilibrium drifts of ``lambda_bar``."""
    lam = _check_lambda(lambda_bar, cfg)
    rows = initial_rows(cfg) if p0 is None else p0
    return evolve(rows, drift_schedule(lam, cfg), cfg.dynamics.sigma, cfg.dt, cfg.grid.dy, cfg.grid.n_t,
                  types=cfg.network.types)


def apply_D(lambda_bar, cfg: RunConfig, p0=None) -> np.ndarray:
    """One application of the default-intensity map; output is entrywise <= 0."""
    return sweep(lambda_bar, cfg, p0).lambda_bar


def _window_sweep(lam_w, cfg: RunConfig, rows, start: int) -> DensityField:
    drift = np.array([static_solve(lam_w[:, n], cfg).drift for n in range(lam_w.shape[1] - 1)]).T
    return evolve(rows, drift, cfg.dynamics.sigma, cfg.dt, cfg.grid.dy, lam_w.shape[1] - 1,
                  t0=cfg.times[start], types=cfg.network.types, rannacher=start == 0)


def _iterate(lam0, step, mu, dt, tol, max_iter):
    """Damped Picard iteration.  Returns (lam, field, history, converged)."""
    lam = lam0
    history = []
    stalls = 0
    fld = None
    for _ in range(max_iter):
        fld = step(lam)
        new = fld.lambda_bar
        res = residual(new, lam, mu, dt)
        history.append(res)
        if res < tol:
            return lam, fld, history, True
        if len(history) > 1 and res >= history[-2]:
            stalls += 1
            if stalls >= STALL_LIMIT:
                return lam, fld, history, False
            lam = lam + DAMPING * (new - lam)
        else:
            stalls = 0
            lam = new
    return lam, fld, history, False


def picard_solve(cfg: RunConfig, max_iter: int | None = None, windows: bool = True) -> EquilibriumPath:
    """Fixed point of the default-intensity map starting from lambda_bar = 0."""
    max_iter = cfg.tolerances.max_iter if max_iter is None else max_iter
    tol = cfg.tolerances.picard_tol
    mu = cfg.network.mu
    dt = cfg.dt
    n_t = cfg.grid.n_t
    rows = initial_rows(cfg)
    lam0 = np.zeros((cfg.network.n, n_t + 1))

    lam, fld, history, ok = _iterate(lam0, lambda l: _window_sweep(l, cfg, rows, 0), mu, dt, tol, max_iter)
    window_log = [{"start": 0, "steps": n_t, "iterations": len(history), "converged": ok}]
    if not ok:
        if not windows:
            raise NoConvergenceError(f"Picard iteration did not converge in {len(history)} iterations "
                                     f"(last residual {history[-1]:.3g})", history)
        lam, fld, window_log, history = _march(cfg, rows, max_iter)
    return assemble(lam, fld, cfg, len(history), history, window_log)


def _march(cfg: RunConfig, rows, max_iter: int):
    """Solve window by window, halving the window length on failure."""
    n_t = cfg.grid.n_t
    mu, dt, tol = cfg.network.mu, cfg.dt, cfg.tolerances.picard_tol
    lam = np.zeros((cfg.network.n, n_t + 1))
    width = max(1, n_t // 2)
    start = 0
    state = rows
    log, all_history = [], []
    while start < n_t:
        w = min(width, n_t - start)
        lam_w0 = np.repeat(lam[:, start:start + 1], w + 1, axis=1)
        lam_w, _, hist, ok = _iterate(lam_w0, lambda l: _window_sweep(l, cfg, state, start), mu, dt, tol, max_iter)
        all_history.extend(hist)
        log.append({"start": start, "steps": w, "iterations": len(hist), "converged": ok})
        if not ok:
            if w == 1:
                raise NoConvergenceError(
                    f"Picard iteration failed on the smallest window at t={cfg.times[start]:.6g}", all_history
                )
            width = max(1, w // 2)
            continue
        lam[:, start:start + w + 1] = lam_w
        state = _window_sweep(lam_w, cfg, state, start).p[:, -1]
        start += w
    fld = _window_sweep(lam, cfg, rows, 0)
    return lam, fld, log, all_history


def assemble(lam, fld: DensityField, cfg: RunConfig, iterations: int, history, window_log) -> EquilibriumPath:
    statics = static_path(lam, cfg)
    stack = lambda name: np.array([getattr(s, name) for s in statics]).T
    nu = np.array([s.nu for s in statics])
    path = EquilibriumPath(
        times=cfg.times, lambda_bar=lam, theta=fld.theta, r=stack("r"), R=stack("R"), cb=stack("cb"),
        cl=stack("cl"), nu=nu, drift=stack("drift"), iterations=iterations, residual_history=list(history),
        types=cfg.network.types, windows=window_log, density=fld,
    )
    path.objective = objective(fld, cfg.dynamics.gamma)
    return path


def objective(fld: DensityField, gamma: float) -> np.ndarray:
    """Discounted expected healthiness until default, per type (diagnostic only)."""
    first_moment = fld.dy * (fld.p * fld.y[None, None, :]).sum(axis=2)
    disc = np.exp(-gamma * fld.times)
    w = np.full(fld.times.size, fld.dt)
    w[0] = w[-1] = 0.5 * fld.dt
    return (first_moment * disc[None, :] * w[None, :]).sum(axis=1)


def max_drift(r, lambda_bar, net, alpha, alpha_prime, cbar: float, x: int, eq_tol: float = 1e-9) -> float:
    """Largest drift of type ``x`` over admissible controls, by enumerating vertices.

    Controls are ``cb >= 0``, ``0 <= cl <= cbar + cb`` and allocations supported on
    neighbours.  The drift is linear in each, so for ``cb = 0`` it suffices to try
    ``cl`` in ``{0, cbar}`` and point-mass allocations; raising ``cb`` never helps
    because its coefficient ``alpha - r + (best gain - alpha)^+`` is nonpositive.
    """
    r = np.asarray(r, float)
    lb = np.asarray(lambda_bar, float)
    mu = net.mu
    nbrs = np.flatnonzero(net.adjacency[x])
    best = float(alpha_prime[x])
    gains = []
    for y in nbrs:
        nu = np.zeros(net.n)
        nu[y] = 1.0 / mu[y]
        gains.append(float(nu @ ((r + lb) * mu)))
        for cl in (0.0, cbar):
            cbv = np.zeros(net.n)
            clv = np.zeros(net.n)
            clv[x] = cl
            nu_m = np.zeros((net.n, net.n))
            nu_m[x] = nu
            b = general_drift(r, lb, cbv, clv, nu_m, alpha, alpha_prime, mu)[x]
            best = max(best, float(b))
    slope = alpha[x] - r[x] + max(0.0, max(gains, default=-np.inf) - alpha[x])
    if slope > eq_tol:
        raise ValidationError(f"drift of type {x} is unbounded in the borrowed amount (slope {slope:.3g})")
    return best


def no_cascade_check(path: EquilibriumPath, cfg: RunConfig, classify_every: int = 1, raise_on_failure: bool = True) -> dict:
    """Check that survival never jumps and that no output time is fragile.

    Per-step survival drops must stay below ``1.5 max|lambda_bar| dt``; every
    ``classify_every``-th time is run through the fragility classifier using the
    density rows of the path.
    """
    dt = path.dt
    c_jump = JUMP_FACTOR * float(np.max(np.abs(path.lambda_bar), initial=0.0))
    drops = -np.diff(path.theta, axis=1)
    bound = c_jump * dt
    report = {"c_jump": c_jump, "bound": bound, "max_drop": float(drops.max(initial=0.0)),
              "verdicts": [], "passed": True}
    slack = 1e-12
    if drops.size and drops.max() > bound + slack:
        k, n = np.unravel_index(np.argmax(drops), drops.shape)
        report["passed"] = False
        msg = (f"survival of type {path.types[k]!r} drops by {drops[k, n]:.6g} on step starting at "
               f"t={path.times[n]:.6g}, above the bound {bound:.6g}")
        if raise_on_failure:
            raise CascadeDetectedError(msg, float(path.times[n]), path.types[k])
        report["message"] = msg
        return report
    fld = path.density
    if fld is not None:
        for n in range(0, len(path.times), classify_every):
            marg = [DensityRow(fld.y, fld.p[k, n]) for k in range(cfg.network.n)]
            surv = np.clip(path.theta[:, n], 1e-300, 1.0)
            rep = classify(FragilityInput(marg, surv, cfg.g, cfg.network), cfg.tolerances.frag_tol)
            report["verdicts"].append({"t": float(path.times[n]), "verdict": rep.verdict.value,
                                       "max_rho": rep.max_closed_rho})
            if rep.verdict is Verdict.FRAGILE:
                comp = next(c for c in rep.components if c.closed and c.rho > cfg.tolerances.frag_tol)
                label = path.types[comp.members[0]]
                report["passed"] = False
                msg = f"state at t={path.times[n]:.6g} is fragile (type {label!r}, rho={comp.rho:.6g})"
                if raise_on_failure:
                    raise CascadeDetectedError(msg, float(path.times[n]), label)
                report["message"] = msg
                return report
    return report
