"""Damped least squares (Levenberg-Marquardt) with a central-difference Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message, params=None, cost=None):
        super().__init__(message)
        self.params = params
        self.cost = cost


@dataclass
class LsqResult:
    params: np.ndarray
    residuals: np.ndarray
    jacobian: np.ndarray
    cost: float  # sum of squared residuals
    n_iter: int
    converged: bool


def numerical_jacobian(fun, p, scale, rel_step=1e-6):
    p = np.asarray(p, dtype=float)
    cols = []
    for i in range(len(p)):
        h = rel_step * max(abs(p[i]), scale[i])
        up, down = p.copy(), p.copy()
        up[i] += h
        down[i] -= h
        cols.append((fun(up) - fun(down)) / (2 * h))
    return np.column_stack(cols)


def gradient_cosine(jacobian: np.ndarray, residuals: np.ndarray) -> float:
    """Largest |cos| between a Jacobian column and the residual vector (scale free)."""
    rn = np.linalg.norm(residuals)
    cn = np.linalg.norm(jacobian, axis=0)
    if rn == 0:
        return 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.abs(jacobian.T @ residuals) / (cn * rn)
    return float(np.max(np.where(cn > 0, cos, 0.0)))


STALL_COSINE = 1e-6  # finite-difference noise floor of the gradient test
ZERO_COST = 1e-20  # residuals are expected to be weighted (dimensionless)


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    p0,
    scale=None,
    rel_step: float = 1e-6,
    xtol: float = 1e-10,
    gtol: float = 1e-8,
    max_iter: int = 200,
) -> LsqResult:
    """Minimize sum(fun(p)**2).

    Converged when the relative parameter step is below ``xtol`` and the
    gradient test (:func:`gradient_cosine`) is below ``gtol``.  When no step
    lowers the cost any further, the point is accepted if the gradient test
    is within the finite-difference noise floor ``STALL_COSINE`` or the
    residuals have vanished to roundoff.  ``fun`` should return weighted,
    dimensionless residuals.
    """
    p = np.asarray(p0, dtype=float).copy()
    scale = np.ones_like(p) if scale is None else np.asarray(scale, dtype=float)
    r = fun(p)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise ConvergenceError("residuals are not finite at the starting point", p, cost)
    cost0 = cost
    lam = 1e-3
    jac = numerical_jacobian(fun, p, scale, rel_step)
    for it in range(1, max_iter + 1):
        js = jac * scale  # scaled parameters p = scale * u
        grad = js.T @ r
        a = js.T @ js
        gcos = gradient_cosine(jac, r)
        if gcos == 0.0:
            return LsqResult(p, r, jac, cost, it, True)
        step_ok = False
        while lam < 1e16:
            lhs = a + lam * np.diag(np.maximum(np.diag(a), 1e-30))
            try:
                du = -np.linalg.solve(lhs, grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = p + du * scale
            r_trial = fun(trial)
            c_trial = float(r_trial @ r_trial)
            if np.isfinite(c_trial) and c_trial < cost:
                step_ok = True
                break
            lam *= 10
        if not step_ok:
            if gcos < STALL_COSINE or cost <= max(1e-24 * cost0, ZERO_COST):
                return LsqResult(p, r, jac, cost, it, True)
            raise ConvergenceError(f"no descent step found (gradient cosine {gcos:.3e})", p, cost)
        rel = float(np.max(np.abs(du * scale) / np.maximum(np.abs(p), scale)))
        p, r, cost = trial, r_trial, c_trial
        lam = max(lam / 10, 1e-12)
        jac = numerical_jacobian(fun, p, scale, rel_step)
        if rel < xtol and gradient_cosine(jac, r) < gtol:
            return LsqResult(p, r, jac, cost, it, True)
    raise ConvergenceError(f"no convergence after {max_iter} iterations", p, cost)


def covariance(jacobian: np.ndarray, cond_limit: float = 1e12) -> np.ndarray:
    """(J^T J)^-1 for weighted residuals; raises LinAlgError when ill-conditioned."""
    a = jacobian.T @ jacobian
    d = np.sqrt(np.diag(a))
    if np.any(d == 0):
        raise np.linalg.LinAlgError("Jacobian has a zero column")
    scaled = a / np.outer(d, d)
    if np.linalg.cond(scaled) > cond_limit:
        raise np.linalg.LinAlgError("normal matrix is numerically singular")
    return np.linalg.inv(scaled) / np.outer(d, d)
