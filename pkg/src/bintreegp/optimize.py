"""Quasi-Newton minimizer with a loss-only line search.

The loss here is cheap relative to its gradient (O(nq log n) vs O(nq^2)),
so the line search evaluates only the loss: steps are accepted on the
Armijo condition, the gradient is computed once at each accepted point, and
the BFGS update is skipped whenever the curvature condition fails there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_fun: int
    n_grad: int
    converged: bool
    message: str


def minimize_bfgs(
    fun,
    grad,
    x0,
    max_iter=200,
    gtol=1e-6,
    ftol=1e-9,
    c1=1e-4,
    c2=0.9,
    max_ls=30,
):
    """Minimize ``fun`` starting at x0; ``grad`` is called only at accepted
    iterates. Stops on gradient norm <= gtol, relative decrease <= ftol, or
    max_iter iterations. If the loss ever becomes non-finite the best
    iterate seen so far is returned with a warning message.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    n = len(x)
    fx = fun(x)
    g = grad(x)
    n_fun, n_grad = 1, 1
    if not np.isfinite(fx):
        return OptimizeResult(
            x, fx, g, 0, n_fun, n_grad, False, "non-finite loss at x0"
        )
    H = np.eye(n)
    best_x, best_f = x.copy(), fx

    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            return OptimizeResult(
                x, fx, g, it, n_fun, n_grad, True, "gradient norm below gtol"
            )
        d = -H @ g
        slope = float(d @ g)
        if not np.isfinite(slope) or slope >= 0:
            H = np.eye(n)
            d = -g
            slope = -gnorm**2
        if slope == 0.0:
            return OptimizeResult(
                x, fx, g, it, n_fun, n_grad, True, "zero search direction"
            )

        # Backtracking Armijo search on the loss only.
        alpha = 1.0
        f_new = np.inf
        accepted = False
        for _ in range(max_ls):
            f_new = fun(x + alpha * d)
            n_fun += 1
            if np.isfinite(f_new) and f_new <= fx + c1 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return OptimizeResult(
                best_x,
                best_f,
                g,
                it,
                n_fun,
                n_grad,
                True,
                "line search could not decrease the loss",
            )

        s = alpha * d
        x_new = x + s
        g_new = grad(x_new)
        n_grad += 1
        y = g_new - g

        rel_drop = (fx - f_new) / max(1.0, abs(fx))
        x, fx, g = x_new, f_new, g_new
        if fx < best_f:
            best_x, best_f = x.copy(), fx
        if not np.all(np.isfinite(g)):
            return OptimizeResult(
                best_x, best_f, g, it + 1, n_fun, n_grad, False,
                "non-finite gradient",
            )
        if rel_drop <= ftol:
            return OptimizeResult(
                x, fx, g, it + 1, n_fun, n_grad, True,
                "relative decrease below ftol",
            )

        sy = float(s @ y)
        # Curvature (Wolfe) check at the accepted point; skip the BFGS
        # update on failure rather than re-searching with more gradients.
        curvature_ok = float(g @ d) >= c2 * slope
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) and curvature_ok:
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)

    return OptimizeResult(
        x, fx, g, max_iter, n_fun, n_grad, True, "max iterations reached"
    )
