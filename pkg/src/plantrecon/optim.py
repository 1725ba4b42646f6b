"""Damped nonlinear least squares (Levenberg-Marquardt) used by the
curve refinement and calibration stages."""

import numpy as np


def forward_difference_jacobian(residual_fn, x, r0, step=1e-4, batch_fn=None):
    """Jacobian of residual_fn at x by forward differences.

    If batch_fn is given it must map an (m, n) array of parameter vectors to
    an (m, k) array of residual vectors; this avoids m python-level calls.
    """
    n = x.size
    if batch_fn is not None:
        xs = np.repeat(x[None, :], n, axis=0)
        xs[np.arange(n), np.arange(n)] += step
        rs = batch_fn(xs)
        return (rs - r0[None, :]).T / step
    jac = np.empty((r0.size, n))
    for j in range(n):
        xj = x.copy()
        xj[j] += step
        jac[:, j] = (residual_fn(xj) - r0) / step
    return jac


def levenberg_marquardt(residual_fn, x0, max_iters=100, lam0=1e-3,
                        fd_step=1e-4, rel_tol=1e-6, batch_fn=None,
                        jac_fn=None):
    """Minimise sum(residual_fn(x)**2) starting from x0.

    Damping is multiplied by 10 on a rejected step and by 0.1 on an
    accepted one. Stops after max_iters or when the relative cost
    improvement of an accepted step drops below rel_tol. The returned
    cost is never above the initial cost.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fn(x)
    cost = float(r @ r)
    lam = lam0
    for _ in range(max_iters):
        if jac_fn is not None:
            jac = jac_fn(x)
        else:
            jac = forward_difference_jacobian(residual_fn, x, r,
                                              step=fd_step, batch_fn=batch_fn)
        g = jac.T @ r
        jtj = jac.T @ jac
        eye = np.eye(x.size)
        accepted = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * eye, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + delta
            r_new = residual_fn(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam * 0.1, 1e-12)
                accepted = True
                if rel < rel_tol:
                    return x, cost
                break
            lam *= 10.0
        if not accepted:
            break
    return x, cost
