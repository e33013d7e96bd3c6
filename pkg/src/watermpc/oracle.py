"""Slow reference implementations backing the test suite.

Everything here takes the stacked dense route on purpose: constraints are
assembled row by row and solved as one symmetric indefinite KKT system, so
agreement with the tree-structured solver is evidence rather than
tautology. Single-threaded, small instances only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .problem import (
    ProblemInstance,
    apply_H,
    apply_H_adjoint,
    clip_dual_to_domain,
    g_conjugate_value,
    primal_objective,
    restore_feasible_inputs,
    rollout_inputs,
    smooth_cost,
)

_MAX_DENSE_PRIMAL = 5000


@dataclass
class DenseKkt:
    """Stacked quadratic cost and equality constraints of the inner QP."""

    hessian: np.ndarray
    linear: np.ndarray
    constraints: np.ndarray
    rhs: np.ndarray


def build_dense_kkt(instance: ProblemInstance) -> DenseKkt:
    """Assemble the inner QP over the full primal vector, brute force."""
    m = instance.model
    nu, nt = m.n_inputs, m.n_tanks
    n = instance.n_nonroot
    width = nu + nt
    dim = n * width

    def u_off(r: int) -> slice:
        return slice(r * width, r * width + nu)

    def x_off(r: int) -> slice:
        return slice(r * width + nu, (r + 1) * width)

    hess = np.zeros((dim, dim))
    lin = np.zeros(dim)
    wu = instance.wu
    for r in range(n):
        pr = instance.prob[r]
        hess[u_off(r), u_off(r)] += 2.0 * pr * wu
        a = instance.anc_row[r]
        if a >= 0:
            hess[u_off(r), u_off(a)] -= 2.0 * pr * wu
            hess[u_off(a), u_off(r)] -= 2.0 * pr * wu
            hess[u_off(a), u_off(a)] += 2.0 * pr * wu
        else:
            lin[u_off(r)] += -2.0 * pr * (wu @ instance.q)
        lin[u_off(r)] += pr * instance.weights.w_alpha * (m.alpha0 + instance.price[r])

    n_rows = n * (nt + m.n_mixing)
    cons = np.zeros((n_rows, dim))
    rhs = np.zeros(n_rows)
    row = 0
    for r in range(n):
        cons[row:row + nt, x_off(r)] = np.eye(nt)
        cons[row:row + nt, u_off(r)] = -m.B
        a = instance.anc_row[r]
        if a >= 0:
            cons[row:row + nt, x_off(a)] = -m.A
            rhs[row:row + nt] = m.Gd @ instance.demand[r]
        else:
            rhs[row:row + nt] = m.A @ instance.p + m.Gd @ instance.demand[r]
        row += nt
        if m.n_mixing > 0:
            cons[row:row + m.n_mixing, u_off(r)] = m.E
            rhs[row:row + m.n_mixing] = -m.Ed @ instance.demand[r]
            row += m.n_mixing
    return DenseKkt(hessian=hess, linear=lin, constraints=cons, rhs=rhs)


def dense_kkt_solve(instance: ProblemInstance, y: np.ndarray) -> np.ndarray:
    """Exact minimizer of f(x) + <H'y, x> by one dense symmetric solve."""
    if instance.n_primal > _MAX_DENSE_PRIMAL:
        raise ValueError(
            f"instance with {instance.n_primal} primal variables is too large "
            f"for the dense oracle (limit {_MAX_DENSE_PRIMAL})"
        )
    kkt = build_dense_kkt(instance)
    dim = kkt.hessian.shape[0]
    n_rows = kkt.constraints.shape[0]
    K = np.zeros((dim + n_rows, dim + n_rows))
    K[:dim, :dim] = kkt.hessian
    K[:dim, dim:] = kkt.constraints.T
    K[dim:, :dim] = kkt.constraints
    full_rhs = np.concatenate([-(kkt.linear + apply_H_adjoint(instance, y)), kkt.rhs])
    try:
        sol = scipy.linalg.solve(K, full_rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise RuntimeError(
            "singular KKT system: reduced cost is not strongly convex"
        ) from exc
    resid = float(np.max(np.abs(K @ sol - full_rhs)))
    scale = 1.0 + float(np.max(np.abs(full_rhs))) + float(np.max(np.abs(sol)))
    if not np.isfinite(resid) or resid > 1e-10 * scale * (1.0 + np.abs(K).max()):
        raise RuntimeError(f"dense KKT solve failed: residual {resid:.3e}")
    return sol[:dim]


def _objective_on_inputs(instance: ProblemInstance, u_batch: np.ndarray) -> np.ndarray:
    """Full objective for a batch of stacked input vectors (box-feasible)."""
    m = instance.model
    n = instance.n_nonroot
    P = u_batch.shape[0]
    U = u_batch.reshape(P, n, m.n_inputs)
    X = np.empty((P, n, m.n_tanks))
    for j, sl in enumerate(instance.stage_slices):
        anc = instance.anc_row[sl]
        if j == 0:
            x_prev = np.broadcast_to(instance.p, (P, sl.stop - sl.start, m.n_tanks))
        else:
            x_prev = X[:, anc]
        X[:, sl] = (
            x_prev @ m.A.T + U[:, sl] @ m.B.T
            + np.broadcast_to(instance.demand[sl] @ m.Gd.T, (P, sl.stop - sl.start, m.n_tanks))
        )
    u_anc = U[:, instance.anc_row]
    u_anc[:, instance.anc_row < 0] = instance.q
    du = U - u_anc
    w = instance.weights
    smooth = (instance.prob[None, :] * (
        (instance.econ[None, :, :] * U).sum(axis=2)
        + np.einsum("pij,jk,pik->pi", du, instance.wu, du)
    )).sum(axis=1)
    box_d = np.linalg.norm(X - np.clip(X, m.x_min, m.x_max), axis=2).sum(axis=1)
    safe_d = np.linalg.norm(X - np.maximum(X, m.x_safe), axis=2).sum(axis=1)
    return smooth + w.w_x * box_d + w.w_s * safe_d


def brute_force_min(
    instance: ProblemInstance, resolution: float = 1e-3
) -> tuple[np.ndarray, float]:
    """Grid search over the input boxes of a tiny uncoupled instance.

    ``resolution`` is relative to each input's range. Up to two free
    inputs use the literal tensor grid; three use nested window refinement
    to the same terminal cell size (safe on these convex objectives).
    """
    m = instance.model
    if m.n_mixing > 0:
        raise ValueError("grid oracle requires an instance without mixing nodes")
    dims = instance.n_nonroot * m.n_inputs
    if dims > 3:
        raise ValueError(f"dimension too large for grid search: {dims} free inputs")
    lo = np.tile(m.u_min, instance.n_nonroot)
    hi = np.tile(m.u_max, instance.n_nonroot)
    span = hi - lo
    npts = int(round(1.0 / resolution)) + 1

    def evaluate(axes: list[np.ndarray]) -> tuple[np.ndarray, float]:
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.reshape(-1) for g in mesh], axis=1)
        vals = _objective_on_inputs(instance, pts)
        best = int(np.argmin(vals))
        return pts[best], float(vals[best])

    if npts ** dims <= 2_000_000:
        u_best, val = evaluate([np.linspace(lo[i], hi[i], npts) for i in range(dims)])
    else:
        window_lo, window_hi = lo.copy(), hi.copy()
        coarse = 11
        u_best, val = None, np.inf
        target = resolution * span
        while True:
            axes = [np.linspace(window_lo[i], window_hi[i], coarse) for i in range(dims)]
            cand, cval = evaluate(axes)
            if cval < val:
                u_best, val = cand, cval
            cell = (window_hi - window_lo) / (coarse - 1)
            if np.all(cell <= target):
                break
            window_lo = np.maximum(lo, cand - cell)
            window_hi = np.minimum(hi, cand + cell)

    U = u_best.reshape(instance.n_nonroot, m.n_inputs)
    z = instance.join_primal(U, rollout_inputs(instance, U))
    return z, val


def project_primal_feasible(instance: ProblemInstance, z: np.ndarray) -> np.ndarray:
    """Restore hard feasibility: inputs into box and coupling (Dykstra),
    states re-rolled from the dynamics."""
    U, _ = instance.split_primal(z)
    U_f = restore_feasible_inputs(instance, U)
    return instance.join_primal(U_f, rollout_inputs(instance, U_f))


def duality_gap(instance: ProblemInstance, z: np.ndarray, y: np.ndarray) -> float:
    """Primal value at the feasibility-restored z minus the dual value at y.

    Nonnegative up to rounding by weak duality. The dual value uses the
    dense KKT route, keeping this certificate independent of the
    tree-structured solver.
    """
    z_f = project_primal_feasible(instance, z)
    primal = primal_objective(instance, z_f)
    y_c = clip_dual_to_domain(instance, y)
    z_star = dense_kkt_solve(instance, y_c)
    U_star, _ = instance.split_primal(z_star)
    inner = smooth_cost(instance, U_star) + float(y_c @ apply_H(instance, z_star))
    dual_value = inner - g_conjugate_value(instance, y_c)
    return float(primal - dual_value)
