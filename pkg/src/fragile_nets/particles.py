"""Finite-N Monte Carlo of the multi-type particle system with default cascades.

Between deaths each particle moves as ``dY = b dt + sigma dW``.  When particles
die, every surviving particle of type x is shifted by

    dLambda(x) = C(x) sum_x' kappa(x, x') [g(frac(x') after) - g(frac(x') before)],

which may kill further particles.  The cascade is resolved by iterating
removals from below, which yields the smallest self-consistent jump.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import InteractionFn, RunConfig, TypedNetwork, g_safe, type_rngs, write_csv, write_json
from .errors import TotalWipeoutError, ValidationError

log = logging.getLogger(__name__)

VALUE_CLIP = 1e12


@dataclass
class ParticleEnsemble:
    """Particle states of all types; row k of ``values``/``alive`` holds type k."""

    values: np.ndarray
    alive: np.ndarray
    loss: np.ndarray
    time: float = 0.0
    rngs: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def survived_fraction(self) -> np.ndarray:
        return self.alive.sum(axis=1) / self.N

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.values.copy(), self.alive.copy(), self.loss.copy(), self.time, self.rngs)

    @classmethod
    def from_values(cls, values, rngs=None, time: float = 0.0) -> "ParticleEnsemble":
        values = np.atleast_2d(np.asarray(values, dtype=float)).copy()
        alive = values > 0
        return cls(values, alive, np.zeros(values.shape[0]), time, list(rngs or []))


@dataclass(frozen=True)
class CascadeResult:
    removed: np.ndarray
    jump: np.ndarray
    rounds: int
    killed: np.ndarray | None = None

    def to_dict(self, types=None) -> dict:
        types = list(types) if types is not None else list(range(len(self.jump)))
        return {"removed": dict(zip(types, self.removed.tolist())),
                "jump": dict(zip(types, self.jump.tolist())),
                "rounds": self.rounds}


def loss_level(net: TypedNetwork, g: InteractionFn, frac) -> np.ndarray:
    """C(x) sum_x' kappa(x, x') g(frac(x')), with 0 * (-inf) read as 0."""
    gv = g_safe(g, frac)
    w = net.weights()
    terms = np.where(w > 0, w * gv[None, :], 0.0)
    return terms.sum(axis=1)


def cascade_fixed_point(values, alive, f0, net: TypedNetwork, g: InteractionFn):
    """Smallest self-consistent cascade.

    ``alive`` marks particles still alive after the initial deaths of the
    instant and ``f0`` holds the survived fractions before the instant.
    Returns ``(alive_after, jump, rounds, trace)``; ``alive`` is not modified.
    """
    values = np.asarray(values, dtype=float)
    alive = np.array(alive, dtype=bool)
    N = values.shape[1]
    f0 = np.asarray(f0, dtype=float)
    f = alive.sum(axis=1) / N
    n = net.n
    jump = np.zeros(n)
    trace = []
    if np.array_equal(f, f0):
        return alive, jump, 0, trace
    base = loss_level(net, g, f0)
    rounds = 0
    while True:
        if g.kind == "log" and np.any(f <= 0):
            wiped = [net.types[i] for i in np.flatnonzero(f <= 0)]
            trace.append({"round": rounds + 1, "fractions": f.tolist(), "jump": None, "killed": None})
            raise TotalWipeoutError(
                f"cascade wiped out every particle of type(s) {wiped}; g = log is -inf at 0", trace
            )
        jump = loss_level(net, g, f) - base
        rounds += 1
        kill = alive & (values + jump[:, None] <= 0)
        trace.append({"round": rounds, "fractions": f.tolist(), "jump": jump.tolist(),
                      "killed": kill.sum(axis=1).tolist()})
        if not kill.any():
            return alive, jump, rounds, trace
        alive &= ~kill
        f = alive.sum(axis=1) / N


def resolve_cascade(ens: ParticleEnsemble, f0, net: TypedNetwork, g: InteractionFn) -> CascadeResult:
    """Resolve the cascade triggered by the particles that died since fractions were ``f0``.

    Survivors and cascade victims are shifted by the final jump, after which
    victims stay frozen.  Updates ``ens`` in place.
    """
    before = ens.alive.copy()
    after, jump, rounds, _ = cascade_fixed_point(ens.values, ens.alive, f0, net, g)
    if rounds == 0:
        return CascadeResult(np.zeros(net.n, dtype=int), np.zeros(net.n), 0, np.zeros_like(before))
    killed = before & ~after
    ens.values = np.where(before, ens.values + jump[:, None], ens.values)
    ens.alive = after
    ens.loss = ens.loss + jump
    initial = np.round((np.asarray(f0) - before.sum(axis=1) / ens.N) * ens.N).astype(int)
    return CascadeResult(initial + killed.sum(axis=1), jump, rounds, killed)


def sim_step(ens: ParticleEnsemble, drift, sigma: float, dt: float, net: TypedNetwork, g: InteractionFn,
             bridge: bool = False) -> CascadeResult:
    """Advance every alive particle by one Euler step, kill barrier crossings, resolve the cascade.

    Each type draws ``N`` normals (and ``N`` uniforms with ``bridge``) from its
    own stream whatever the number of survivors, so streams stay aligned.
    With ``bridge`` a particle that ends the step above 0 is still killed with
    the Brownian-bridge crossing probability ``exp(-2 y0 y1 / (sigma^2 dt))``.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (net.n,))
    if not np.all(np.isfinite(drift)):
        raise ValidationError("drift must be finite")
    f0 = ens.survived_fraction
    old = ens.values
    new = old.copy()
    hit = np.zeros_like(ens.alive)
    for k in range(net.n):
        xi = ens.rngs[k].standard_normal(ens.N) if sigma > 0 else np.zeros(ens.N)
        a = ens.alive[k]
        new[k, a] = old[k, a] + drift[k] * dt + sigma * np.sqrt(dt) * xi[a]
        hit[k] = a & (new[k] <= 0)
        if bridge and sigma > 0:
            u = ens.rngs[k].uniform(size=ens.N)
            inside = a & ~hit[k]
            with np.errstate(over="ignore"):
                p_cross = np.exp(-2.0 * old[k] * new[k] / (sigma**2 * dt))
            crossed = inside & (u < p_cross)
            new[k, crossed] = 0.0
            hit[k] |= crossed
    if np.any(np.abs(new) > VALUE_CLIP):
        log.warning("particle values exceeded %.0e and were clipped", VALUE_CLIP)
        np.clip(new, -VALUE_CLIP, VALUE_CLIP, out=new)
    ens.values = new
    ens.alive = ens.alive & ~hit
    ens.time += dt
    return resolve_cascade(ens, f0, net, g)


@dataclass
class SimResult:
    times: np.ndarray
    survived: np.ndarray
    loss: np.ndarray
    cascades: list
    types: tuple
    marginals: dict = field(default_factory=dict)
    final: ParticleEnsemble | None = None
    N: int = 0

    def max_step_drop(self) -> np.ndarray:
        return np.max(-np.diff(self.survived, axis=1), axis=1, initial=0.0)

    def trajectory_rows(self):
        for n, t in enumerate(self.times):
            for k, lab in enumerate(self.types):
                yield t, lab, self.survived[k, n], self.loss[k, n]

    def write_trajectory(self, path) -> None:
        write_csv(path, ["t", "type", "survived_fraction", "loss"], self.trajectory_rows())

    def write_cascades(self, path) -> None:
        write_json(path, {"types": list(self.types), "N": self.N, "cascades": self.cascades})

    def write_marginals(self, path) -> None:
        def rows():
            for n in sorted(self.marginals):
                for k, lab in enumerate(self.types):
                    for v in self.marginals[n][k]:
                        yield self.times[n], lab, v
        write_csv(path, ["t", "type", "value"], rows())


def initial_ensemble(cfg: RunConfig) -> ParticleEnsemble:
    if not cfg.initial:
        raise ValidationError("config needs an 'initial' density spec per type to sample particles")
    rngs = type_rngs(cfg.particles.seed, cfg.network.n)
    N = cfg.particles.N
    values = np.array([spec.sample(rngs[k], N) for k, spec in enumerate(cfg.initial)])
    return ParticleEnsemble.from_values(values, rngs)


def run_sim(cfg: RunConfig, drift_schedule=None, *, interact: bool = True, bridge: bool = False,
            record_marginals=()) -> SimResult:
    """Simulate on the configured time grid.

    Without a schedule each type drifts at its constant ``alpha_prime``.
    ``interact=False`` drops the loss term (independent particles).  Alive
    values at the step indices in ``record_marginals`` are kept for the fragility
    classifier.
    """
    net = cfg.network
    n_t = cfg.grid.n_t
    dt = cfg.dt
    if drift_schedule is None:
        drift = np.repeat(cfg.dynamics.alpha_prime[:, None], n_t, axis=1)
    else:
        drift = np.asarray(drift_schedule, dtype=float)
        if drift.ndim != 2 or drift.shape[0] != net.n or drift.shape[1] < n_t:
            raise ValidationError(f"drift schedule must have shape ({net.n}, {n_t}) or wider")
    sim_net = net if interact else TypedNetwork(net.types, net.mu, np.zeros(net.n), net.kappa, net.O)
    ens = initial_ensemble(cfg)
    survived = np.empty((net.n, n_t + 1))
    loss = np.empty((net.n, n_t + 1))
    # particles starting at or below 0 are dead on arrival and trigger a cascade at t=0
    f0 = np.ones(net.n)
    cascades = []
    res = resolve_cascade(ens, f0, sim_net, cfg.g)
    if res.rounds:
        cascades.append({"step": 0, "t": 0.0, **res.to_dict(net.types)})
    survived[:, 0] = ens.survived_fraction
    loss[:, 0] = ens.loss
    record = set(int(i) for i in record_marginals)
    marginals = {}
    if 0 in record:
        marginals[0] = [ens.values[k, ens.alive[k]].copy() for k in range(net.n)]
    for n in range(n_t):
        res = sim_step(ens, drift[:, n], cfg.dynamics.sigma, dt, sim_net, cfg.g, bridge=bridge)
        if res.rounds:
            cascades.append({"step": n + 1, "t": ens.time, **res.to_dict(net.types)})
        survived[:, n + 1] = ens.survived_fraction
        loss[:, n + 1] = ens.loss
        if n + 1 in record:
            marginals[n + 1] = [ens.values[k, ens.alive[k]].copy() for k in range(net.n)]
    return SimResult(cfg.times, survived, loss, cascades, net.types, marginals, ens, cfg.particles.N)


def closed_death_sets(values, alive, f0, net: TypedNetwork, g: InteractionFn) -> np.ndarray:
    """Exhaustive oracle: every extra-death set closed under the loss rule.

    Candidates are the particles alive after the initial deaths, flattened in
    row-major order.  Returns a boolean array ``(n_closed, n_candidates)``.
    Intended for small instances (at most ~16 candidates).
    """
    values = np.asarray(values, dtype=float)
    alive = np.asarray(alive, dtype=bool)
    N = values.shape[1]
    idx = np.flatnonzero(alive.ravel())
    m = idx.size
    subsets = ((np.arange(2**m)[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    type_of = idx // N
    vals = values.ravel()[idx]
    counts = np.stack([(subsets & (type_of == k)[None, :]).sum(axis=1) for k in range(net.n)], axis=1)
    frac = (alive.sum(axis=1)[None, :] - counts) / N
    base = loss_level(net, g, f0)
    w = net.weights()
    gv = np.stack([g_safe(g, row) for row in frac])
    jump = np.where(w[None] > 0, w[None] * gv[:, None, :], 0.0).sum(axis=2) - base[None, :]
    with np.errstate(invalid="ignore"):
        doomed = vals[None, :] + jump[:, type_of] <= 0
    closed = ~np.any(doomed & ~subsets, axis=1)
    return subsets[closed]
