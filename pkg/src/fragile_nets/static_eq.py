"""Static equilibrium map: default intensities -> (rates, flows, allocation, drift).

For a fixed time slice with default intensities ``lambda_bar <= 0`` the solver

1. finds the smallest interest-rate vector solving
   ``r(x) = alpha(x) ∨ max_{O(x,y)=1} (r(y) + lambda_bar(y))`` in max-plus form,
2. lets every lender spread its funds uniformly (w.r.t. ``mu``) over the
   neighbours with the best ``r + lambda_bar`` and reroutes lenders until the
   lending graph has no cycles,
3. walks the acyclic lending graph from the sinks upwards to fill in the
   borrowed/lent amounts so that the market clears.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import RunConfig, TypedNetwork
from .errors import CycleDetectedError, NoExitNodeError, ValidationError
from .maxplus import NEG_INF, MaxPlusMatrix, min_solution, mp_matvec


@dataclass(frozen=True)
class StaticEquilibrium:
    r: np.ndarray
    R: np.ndarray
    cb: np.ndarray
    cl: np.ndarray
    nu: np.ndarray
    drift: np.ndarray
    lender: np.ndarray
    layers: tuple = ()
    reroutes: tuple = ()

    def to_dict(self, types=None) -> dict:
        types = list(types) if types is not None else list(range(len(self.r)))
        return {
            "types": types,
            "r": self.r.tolist(),
            "R": self.R.tolist(),
            "cb": self.cb.tolist(),
            "cl": self.cl.tolist(),
            "nu": self.nu.tolist(),
            "drift": self.drift.tolist(),
        }


def _lambda(lambda_bar, n, tol) -> np.ndarray:
    lb = np.asarray(lambda_bar, dtype=float)
    if lb.shape != (n,):
        raise ValidationError(f"lambda_bar must have {n} entries")
    if np.any(~np.isfinite(lb)):
        raise ValidationError("lambda_bar must be finite")
    if np.any(lb > tol):
        raise ValidationError(f"lambda_bar must be nonpositive (max entry {lb.max():.3g})")
    return np.minimum(lb, 0.0)


def build_A(lambda_bar, net: TypedNetwork, tol: float = 1e-8) -> MaxPlusMatrix:
    """A_ij = lambda_bar(j) where O(i, j) = 1, -inf elsewhere."""
    lb = _lambda(lambda_bar, net.n, tol)
    adj = net.adjacency
    return MaxPlusMatrix(np.where(adj, lb[None, :], NEG_INF))


def solve_rates(lambda_bar, alpha, net: TypedNetwork, tol: float = 1e-8):
    """Minimal interest rates ``r`` and best-neighbour profit ``R``."""
    A = build_A(lambda_bar, net, tol)
    r = min_solution(A, alpha, tol)
    R = np.maximum(mp_matvec(A, r), 0.0)
    return r, R


def best_neighbours(r, lambda_bar, net: TypedNetwork, eq_tol: float = 1e-9) -> np.ndarray:
    """Boolean matrix of the argmax sets: row x marks neighbours attaining max (r + lambda_bar)."""
    adj = net.adjacency
    val = np.asarray(r) + np.asarray(lambda_bar)
    vals = np.where(adj, val[None, :], NEG_INF)
    best = vals.max(axis=1, initial=NEG_INF)
    return adj & (vals >= best[:, None] - eq_tol) & np.isfinite(best)[:, None]


def uniform_rows(mask, mu) -> np.ndarray:
    """Row x of the result is 1_A / mu(A) with A the row's support (zero row if A is empty)."""
    mask = np.asarray(mask, dtype=bool)
    m = mask @ np.asarray(mu, float)
    return np.divide(mask.astype(float), m[:, None], out=np.zeros(mask.shape), where=m[:, None] > 0)


def cycle_unions(support) -> list[np.ndarray]:
    """Node sets of the nontrivial strongly connected components of a directed graph.

    A component is nontrivial if it has more than one node or a self-loop.
    Ordered by their smallest member.
    """
    support = np.asarray(support, dtype=bool)
    n = support.shape[0]
    if n == 0:
        return []
    _, labels = connected_components(csr_matrix(support), directed=True, connection="strong")
    out = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        if members.size > 1 or support[members[0], members[0]]:
            out.append(members)
    out.sort(key=lambda m: m[0])
    return out


def has_cycle(support) -> bool:
    return bool(cycle_unions(support))


def eliminate_cycles(r, lambda_bar, net: TypedNetwork, alpha=None, eq_tol: float = 1e-9):
    """Optimal lending allocation without lending cycles.

    Starts from the allocation that spreads each lender's funds uniformly over its
    whole argmax set, then repeatedly takes the cycle union containing the
    smallest-index node, picks the first member whose best neighbour outside the
    union is as good as the union's common rate, and redirects that member to its
    argmax set outside the union.

    Returns ``(nu, reroutes)`` where ``reroutes`` lists the redirected nodes in order.
    """
    r = np.asarray(r, dtype=float)
    lb = np.asarray(lambda_bar, dtype=float)
    alpha = np.zeros(net.n) if alpha is None else np.asarray(alpha, dtype=float)
    adj = net.adjacency
    lender = r > alpha + eq_tol
    support = best_neighbours(r, lb, net, eq_tol) & lender[:, None]
    nu = uniform_rows(support, net.mu)
    val = r + lb
    reroutes = []
    for _ in range(net.n * net.n + 1):
        unions = cycle_unions(support)
        if not unions:
            return nu, tuple(reroutes)
        members = unions[0]
        in_c = np.zeros(net.n, dtype=bool)
        in_c[members] = True
        rc = float(r[members].max())
        exit_node = None
        for x in members:
            outside = adj[x] & ~in_c
            if not outside.any():
                continue
            ra = float(val[outside].max())
            if ra >= rc - eq_tol:
                exit_node = int(x)
                break
        if exit_node is None:
            raise NoExitNodeError(
                f"lending cycle through types {members.tolist()} has no member with an equally good "
                "neighbour outside the cycle; the rates are not the minimal solution to within "
                "eq_tol (try tightening tolerances.eq_tol)"
            )
        target = support[exit_node] & ~in_c
        if not target.any():
            outside = adj[exit_node] & ~in_c
            target = outside & (val >= val[outside].max() - eq_tol)
        support[exit_node] = target
        nu[exit_node] = uniform_rows(target[None, :], net.mu)[0]
        reroutes.append(exit_node)
    raise CycleDetectedError("cycle elimination did not terminate")


def lending_layers(support) -> list[np.ndarray]:
    """Layer 0 = nodes that lend to nobody; layer i = unassigned nodes lending into layers < i."""
    support = np.asarray(support, dtype=bool)
    n = support.shape[0]
    assigned = ~support.any(axis=1)
    if n and not assigned.any():
        raise CycleDetectedError("every node lends: the allocation contains a cycle")
    layers = [np.flatnonzero(assigned)]
    while not assigned.all():
        nxt = ~assigned & support[:, assigned].any(axis=1)
        if not nxt.any():
            raise CycleDetectedError(
                f"types {np.flatnonzero(~assigned).tolist()} cannot be layered: the allocation contains a cycle"
            )
        layers.append(np.flatnonzero(nxt))
        assigned |= nxt
    return layers


def allocate_flows(nu_m, R, alpha, net: TypedNetwork, cbar: float, eq_tol: float = 1e-9):
    """Borrowed/lent amounts on an acyclic allocation, built layer by layer.

    Returns ``(cb, cl, nu, layers)``.  ``nu`` is ``nu_m`` with each row restricted to
    the layers strictly below its own and renormalised w.r.t. ``mu``.
    """
    nu_m = np.asarray(nu_m, dtype=float)
    support = nu_m > 0
    layers = lending_layers(support)
    lender = np.asarray(R, float) > np.asarray(alpha, float) + eq_tol
    mu = net.mu
    n = net.n
    cb = np.zeros(n)
    cl = np.zeros(n)
    nu = np.zeros((n, n))
    below = np.zeros(n, dtype=bool)

    x0 = layers[0]
    cl[x0] = cbar * lender[x0]
    below[x0] = True
    for i in range(1, len(layers)):
        xi = layers[i]
        restricted = support[xi] & below[None, :]
        nu[xi] = uniform_rows(restricted, mu)
        cb[xi] = 0.0
        cl[xi] = cbar * lender[xi]
        for k in range(i, 0, -1):
            # every processed layer above k-1 may lend into it, not only layer k
            lenders, borrowers = np.concatenate(layers[k:i + 1]), layers[k - 1]
            cb[borrowers] = (nu[np.ix_(lenders, borrowers)] * (cl[lenders] * mu[lenders])[:, None]).sum(axis=0)
            cl[borrowers] = (cbar + cb[borrowers]) * lender[borrowers]
        below[xi] = True
    return cb, cl, nu, layers


def collapsed_drift(R, alpha, alpha_prime, cbar) -> np.ndarray:
    """b(x) = alpha'(x) + cbar (R(x) - alpha(x))^+."""
    return np.asarray(alpha_prime, float) + cbar * np.maximum(np.asarray(R) - np.asarray(alpha), 0.0)


def general_drift(r, lambda_bar, cb, cl, nu, alpha, alpha_prime, mu) -> np.ndarray:
    """Drift of the controlled healthiness process for arbitrary (cb, cl, nu)."""
    r = np.asarray(r, float)
    gain = np.asarray(nu, float) @ ((r + np.asarray(lambda_bar, float)) * np.asarray(mu, float))
    alpha = np.asarray(alpha, float)
    return np.asarray(alpha_prime, float) + (cb - cl) * alpha - cb * r + cl * gain


def solve_static(lambda_bar, net: TypedNetwork, alpha, alpha_prime, cbar: float,
                 eq_tol: float = 1e-9, frag_tol: float = 1e-8) -> StaticEquilibrium:
    lb = _lambda(lambda_bar, net.n, frag_tol)
    alpha = np.asarray(alpha, float)
    r, R = solve_rates(lb, alpha, net, frag_tol)
    nu_m, reroutes = eliminate_cycles(r, lb, net, alpha, eq_tol)
    cb, cl, nu, layers = allocate_flows(nu_m, R, alpha, net, cbar, eq_tol)
    drift = collapsed_drift(R, alpha, alpha_prime, cbar)
    lender = R > alpha + eq_tol
    return StaticEquilibrium(r, R, cb, cl, nu, drift, lender, tuple(layers), reroutes)


def static_solve(lambda_bar, cfg: RunConfig) -> StaticEquilibrium:
    d = cfg.dynamics
    tol = cfg.tolerances
    return solve_static(lambda_bar, cfg.network, d.alpha, d.alpha_prime, d.cbar, tol.eq_tol, tol.frag_tol)


def check_static(eq: StaticEquilibrium, lambda_bar, net: TypedNetwork, alpha, cbar: float,
                 eq_tol: float = 1e-9) -> list[str]:
    """Names of violated equilibrium invariants (empty list if all hold)."""
    problems = []
    mu = net.mu
    clearing = (eq.nu * (eq.cl * mu)[:, None]).sum(axis=0)
    if np.any(np.abs(eq.cb - clearing) > eq_tol * max(1.0, float(np.max(np.abs(clearing), initial=0.0)))):
        problems.append("clearing")
    if np.any(eq.cl > eq.cb + cbar + eq_tol):
        problems.append("cap")
    if np.any((eq.nu > 0) & ~net.adjacency):
        problems.append("support")
    if has_cycle(eq.nu > 0):
        problems.append("acyclicity")
    if np.any(np.abs(eq.r - np.maximum(alpha, eq.R)) > eq_tol):
        problems.append("rate")
    rows = eq.nu @ mu
    if np.any((np.abs(rows - 1) > 1e-9) & (rows != 0)):
        problems.append("allocation-normalisation")
    return problems
