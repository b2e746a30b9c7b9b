"""Deep-cut ellipsoid maximizer for the dual of the reduced problem.

Maintains an ellipsoid ``{c + P^{1/2} u : |u| <= 1}`` guaranteed to contain a
dual maximizer, and shrinks it with one cut per iteration:

  * feasibility cuts restore the nonnegative orthant and the open-domain
    margin (deadline price above floor price) when the center leaves them,
  * value cuts use the dual supergradient; with the best value seen so far
    they cut deeper than the center (a "deep cut").

The certified upper bound ``min over iterations of q(c) + ||grad||_P`` comes
from concavity: the maximum inside the current ellipsoid cannot exceed the
center value plus the largest supergradient ascent within it.  The method
stops when that bound meets the incumbent, when the ellipsoid collapses, or
at the iteration cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edgecache.solver.dualfn import DualSpace, dual_function
from edgecache.solver.reduction import ReducedBatch

_DOMAIN_MARGIN = 1e-9  # keep deadline price above floor price by this much
_VOLUME_COLLAPSE = 1e-12


@dataclass
class EllipsoidResult:
    best_value: float  # largest certified dual value (lower bound on optimum)
    upper_bound: float  # smallest certified cap on the dual optimum
    iterations: int
    stop_reason: str  # gap | volume | degenerate | iteration-limit | infeasible-precheck
    best_point: np.ndarray | None


def necessary_feasible(red: ReducedBatch) -> bool:
    """Full-band worst-pair chain fits the deadline for every service.

    A cheap necessary condition: no shared-band allocation can beat the
    service-alone full-band times, so if even those overrun the deadline the
    instance is infeasible.
    """
    if red.batch != 1:
        raise ValueError("pre-check evaluates one instance at a time")
    un = red.ux[0]
    act = red.ay[0]
    Q, R, T = red.input_bits[0], red.output_bits[0], red.deadline[0]
    chain = np.zeros(red.L)
    rows = np.flatnonzero(act)
    if rows.size == 0:
        return True
    r_dl = red.bw_dl * np.log2(1.0 + red.snr_dl_star[0][rows])
    chain[rows] += R[rows] / r_dl
    urows = np.flatnonzero(un)
    if urows.size:
        r_off = red.bw_off * np.log2(1.0 + red.snr_off_star[0][urows])
        chain[urows] += Q[urows] / r_off + red.t_floor[0][urows]
    return bool(np.all(chain[rows] <= T[rows]))


def _domain_cut(space: DualSpace, z: np.ndarray):
    """Most violated sign/domain constraint at ``z``, as (gradient, violation)."""
    n = z.shape[0]
    worst = None
    neg = np.flatnonzero(z < 0)
    if neg.size:
        i = int(neg[np.argmin(z[neg])])
        g = np.zeros(n)
        g[i] = -1.0
        worst = (g, float(-z[i]))
    # deadline price must exceed the floor price on uncached rows
    na = int(space.active.sum())
    mu_col = np.flatnonzero(space.active)
    eta_rows = np.flatnonzero(space.uncached)
    for j, l in enumerate(eta_rows):
        i_mu = int(np.searchsorted(mu_col, l))
        viol = float(z[na + j] - z[i_mu] + _DOMAIN_MARGIN)
        if viol > 0 and (worst is None or viol > worst[1]):
            g = np.zeros(n)
            g[na + j] = 1.0
            g[i_mu] = -1.0
            worst = (g, viol)
    return worst


def ellipsoid_solve(
    red: ReducedBatch,
    *,
    radius: float = 1e3,
    gap_rtol: float = 1e-3,
    max_iter: int | None = None,
) -> EllipsoidResult:
    """Maximize the dual with deep cuts; returns certified bounds."""
    space = DualSpace.from_batch(red)
    n = space.dim
    if max_iter is None:
        max_iter = 2000 * n
    if not necessary_feasible(red):
        return EllipsoidResult(
            best_value=-np.inf,
            upper_bound=-np.inf,
            iterations=0,
            stop_reason="infeasible-precheck",
            best_point=None,
        )

    c = np.ones(n)
    P = (radius**2) * np.eye(n)
    trace0 = float(np.trace(P))
    f_best = -np.inf
    ub = np.inf
    z_best = None
    stop = "iteration-limit"

    it = 0
    for it in range(1, max_iter + 1):
        cut = _domain_cut(space, c)
        if cut is not None:
            g, viol = cut
            beta = viol
        else:
            q, grad, _ = dual_function(red, c, space)
            if q > f_best:
                f_best = q
                z_best = c.copy()
            norm_p = float(np.sqrt(max(grad @ P @ grad, 0.0)))
            ub = min(ub, q + norm_p)
            scale = max(abs(f_best), 1e-12)
            if ub - f_best <= gap_rtol * scale:
                stop = "gap"
                break
            if norm_p <= 1e-15 * scale:
                stop = "degenerate"
                break
            g = -grad  # cut away the half-space of provably lower value
            beta = f_best - q  # deep cut: points below the incumbent go too

        gPg = float(g @ P @ g)
        if gPg <= 0 or not np.isfinite(gPg):
            stop = "degenerate"
            break
        denom = float(np.sqrt(gPg))
        alpha = beta / denom
        if alpha >= 1.0:
            stop = "empty"
            break
        alpha = max(alpha, -1.0 / n)

        Pg = P @ g
        tau = (1.0 + n * alpha) / (n + 1.0)
        delta = (n * n / (n * n - 1.0)) * (1.0 - alpha * alpha)
        xi = 2.0 * (1.0 + n * alpha) / ((n + 1.0) * (1.0 + alpha))
        c = c - tau * Pg / denom
        P = delta * (P - xi * np.outer(Pg, Pg) / gPg)
        P = 0.5 * (P + P.T)

        if float(np.trace(P)) <= _VOLUME_COLLAPSE * trace0:
            stop = "volume"
            break

    return EllipsoidResult(
        best_value=float(f_best),
        upper_bound=float(ub),
        iterations=it,
        stop_reason=stop,
        best_point=z_best,
    )
