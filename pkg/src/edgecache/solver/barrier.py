"""Log-barrier interior-point engine for the reduced problem, batched.

Phase 1 minimizes an epigraph variable v that uniformly relaxes the two
nonlinear constraint families (compute slack and cached-deadline), keeping
band budgets hard. It stops early as soon as a strictly feasible point
exists (v < 0) or certifies infeasibility via its own barrier gap
(v - m/t > 0 implies no feasible point).

Phase 2 follows the central path of

    minimize t * G(x, y) - sum log(slack_i)

The barrier multipliers 1 / (t * slack_i) satisfy stationarity of the true
Lagrangian exactly at each central point, which gives dual variables for
the full (times + shares) problem and a certified duality gap of m / t,
m being the number of inequality constraints.

Everything is vectorized over a batch of instances with equal shapes; each
instance carries its own barrier parameter, convergence flag and verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edgecache.energy import link_rate_derivative
from edgecache.solver.reduction import ReducedBatch, primal_times

__all__ = ["BarrierResult", "barrier_solve", "recover_duals"]

_ARMIJO = 0.25
_BACKTRACK = 0.5
_MAX_BACKTRACK = 60
_NEWTON_TOL = 1e-9  # squared Newton decrement


@dataclass
class BarrierResult:
    X: np.ndarray  # (B, L) uplink shares (dummies on masked slots)
    Y: np.ndarray  # (B, L) downlink shares
    t: np.ndarray  # (B,) final barrier parameter
    feasible: np.ndarray  # (B,) strictly feasible point found
    infeasible: np.ndarray  # (B,) certified infeasible
    objective: np.ndarray  # (B,) G at the returned point (inf if infeasible)
    gap: np.ndarray  # (B,) certified absolute duality gap m / t
    newton_steps: int
    phase1_steps: int


def _masked_energy_weights(red: ReducedBatch):
    w_off = red.w_off * red.ux[:, :, None]
    w_dl = red.w_dl * red.ay[:, :, None]
    return w_off, w_dl


def _slacks(red: ReducedBatch, X, Y):
    """Constraint slacks; masked-off entries reported as 1 (inactive)."""
    Xs = np.where(red.ux, X, 1.0)
    Ys = np.where(red.ay, Y, 1.0)
    D = red.compute_slack(Xs, Ys)
    sd = np.where(red.ux, D - red.t_floor, 1.0)
    psi = red.worst_downlink(Ys)[0]
    sc = np.where(red.cy, red.deadline - psi, 1.0)
    sx = 1.0 - (X * red.ux).sum(axis=1)
    sy = 1.0 - (Y * red.ay).sum(axis=1)
    return sd, sc, sx, sy


def _strictly_feasible(red: ReducedBatch, X, Y):
    sd, sc, sx, sy = _slacks(red, X, Y)
    pos = np.where(red.ux, X, 1.0) > 0.0
    pos &= np.where(red.ay, Y, 1.0) > 0.0
    return (
        pos.all(axis=1)
        & (sd > 0).all(axis=1)
        & (sc > 0).all(axis=1)
        & (sx > 0)
        & (sy > 0)
    )


# --------------------------------------------------------------- phase 2


def _phi2(red, X, Y, t, w_off, w_dl):
    """Barrier merit at (X, Y); +inf outside the domain. (B,)"""
    sd, sc, sx, sy = _slacks(red, X, Y)
    bad = ~_strictly_feasible(red, X, Y)
    sd_, sc_ = np.maximum(sd, 1e-300), np.maximum(sc, 1e-300)
    G = red.objective(np.where(red.ux, X, 1.0), np.where(red.ay, Y, 1.0))
    phi = (
        t * G
        - np.log(np.where(red.ux, sd_, 1.0)).sum(axis=1)
        - np.log(np.where(red.cy, sc_, 1.0)).sum(axis=1)
        - np.log(np.maximum(sx, 1e-300))
        - np.log(np.maximum(sy, 1e-300))
    )
    return np.where(bad, np.inf, phi), G


def _newton_system2(red: ReducedBatch, X, Y, t, w_off, w_dl):
    """Gradient and Hessian of the phase-2 barrier at a feasible point."""
    B, L = red.a.shape
    ux, ay, cy = red.ux, red.ay, red.cy
    Xs = np.where(ux, X, 1.0)
    Ys = np.where(ay, Y, 1.0)

    tau_o, t1_o, t2_o = red.uplink_times(Xs, order=2)
    tau_d, t1_d, t2_d = red.downlink_times(Ys, order=2)
    phi, phi1, phi2 = red.worst_uplink(Xs, order=2)
    psi, psi1, psi2 = red.worst_downlink(Ys, order=2)
    D = np.where(ux, red.deadline - phi - psi, 1.0)
    dDdX = -phi1  # > 0
    dDdY = -psi1

    aD3 = np.where(ux, 2.0 * red.a / D**3, 0.0)
    aD4 = np.where(ux, 6.0 * red.a / D**4, 0.0)
    gX = (w_off * t1_o).sum(2) - aD3 * dDdX
    gY = (w_dl * t1_d).sum(2) - np.where(ux, aD3 * dDdY, 0.0)
    hXX = (w_off * t2_o).sum(2) + aD4 * dDdX**2 + aD3 * phi2
    hYY = (w_dl * t2_d).sum(2) + np.where(ux, aD4 * dDdY**2 + aD3 * psi2, 0.0)
    hXY = np.where(ux, aD4 * dDdX * dDdY, 0.0)

    # barrier: compute-slack constraints (uncached rows)
    sd = np.where(ux, D - red.t_floor, 1.0)
    inv = np.where(ux, 1.0 / sd, 0.0)
    bgX = -dDdX * inv
    bgY = -dDdY * inv
    bXX = (dDdX * inv) ** 2 + phi2 * inv
    bYY = (dDdY * inv) ** 2 + psi2 * inv
    bXY = dDdX * dDdY * inv**2

    # barrier: cached downlink deadline
    sc = np.where(cy, red.deadline - psi, 1.0)
    invc = np.where(cy, 1.0 / sc, 0.0)
    bgY = bgY + psi1 * invc
    bYY = bYY + psi2 * invc + (psi1 * invc) ** 2

    # barrier: band budgets (rank-one)
    mx, my = ux.astype(float), ay.astype(float)
    sx = 1.0 - (X * ux).sum(axis=1)
    sy = 1.0 - (Y * ay).sum(axis=1)
    bgX = bgX + mx / sx[:, None]
    bgY = bgY + my / sy[:, None]

    grad = np.concatenate([t[:, None] * gX + bgX, t[:, None] * gY + bgY], axis=1)
    grad *= np.concatenate([mx, my], axis=1)  # dummies stay put

    H = np.zeros((B, 2 * L, 2 * L))
    i = np.arange(L)
    H[:, i, i] = t[:, None] * hXX + bXX + ~ux  # unit diagonal on dummies
    H[:, L + i, L + i] = t[:, None] * hYY + bYY + ~ay
    H[:, i, L + i] = H[:, L + i, i] = t[:, None] * hXY + bXY
    H[:, :L, :L] += mx[:, :, None] * mx[:, None, :] / (sx**2)[:, None, None]
    H[:, L:, L:] += my[:, :, None] * my[:, None, :] / (sy**2)[:, None, None]
    return grad, H


def _safe_newton_step(grad, H, live):
    """Batched Newton direction; non-live rows get a zero step."""
    n = grad.shape[1]
    grad = np.where(live[:, None], grad, 0.0)
    H = np.where(live[:, None, None], H, np.eye(n)[None])
    H = H + 1e-14 * np.eye(n)[None]
    try:
        delta = np.linalg.solve(H, -grad[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        delta = np.stack([np.linalg.lstsq(H[b], -grad[b], rcond=None)[0] for b in range(len(grad))])
    bad = ~np.isfinite(delta).all(axis=1)
    delta[bad] = 0.0
    return delta, grad


def _newton_loop(red, X, Y, t, w_off, w_dl, live, max_iter=60):
    """Damped Newton on the phase-2 barrier for instances in ``live``."""
    steps = 0
    live = live.copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(max_iter):
            if not live.any():
                break
            grad, H = _newton_system2(red, X, Y, t, w_off, w_dl)
            delta, grad = _safe_newton_step(grad, H, live)
            dec = -(grad * delta).sum(axis=1)  # squared Newton decrement
            live &= dec > _NEWTON_TOL
            if not live.any():
                break
            phi0, _ = _phi2(red, X, Y, t, w_off, w_dl)
            gTd = (grad * delta).sum(axis=1)
            step = np.where(live, 1.0, 0.0)
            for _ in range(_MAX_BACKTRACK):
                Xn = X + step[:, None] * delta[:, : red.L]
                Yn = Y + step[:, None] * delta[:, red.L :]
                phin, _ = _phi2(red, Xn, Yn, t, w_off, w_dl)
                ok = phin <= phi0 + _ARMIJO * step * gTd
                if (ok | ~live).all():
                    break
                step = np.where(live & ~ok, step * _BACKTRACK, step)
            upd = (live & ok)[:, None]
            X = np.where(upd, Xn, X)
            Y = np.where(upd, Yn, Y)
            live &= ok
            steps += 1
    return X, Y, steps


# --------------------------------------------------------------- phase 1


def _phi1(red, X, Y, v, t, m_relax):
    sd, sc, sx, sy = _slacks(red, X, Y)
    rd = np.where(red.ux, sd + v[:, None] * red.deadline, 1.0)
    rc = np.where(red.cy, sc + v[:, None] * red.deadline, 1.0)
    pos = (np.where(red.ux, X, 1.0) > 0).all(1) & (np.where(red.ay, Y, 1.0) > 0).all(1)
    bad = ~(pos & (rd > 0).all(1) & (rc > 0).all(1) & (sx > 0) & (sy > 0))
    val = (
        t * v
        - np.log(np.maximum(rd, 1e-300)).sum(1)
        - np.log(np.maximum(rc, 1e-300)).sum(1)
        - np.log(np.maximum(sx, 1e-300))
        - np.log(np.maximum(sy, 1e-300))
    )
    return np.where(bad, np.inf, val)


def _newton_system1(red: ReducedBatch, X, Y, v, t):
    B, L = red.a.shape
    ux, ay, cy = red.ux, red.ay, red.cy
    Xs = np.where(ux, X, 1.0)
    Ys = np.where(ay, Y, 1.0)
    phi, phi1, phi2 = red.worst_uplink(Xs, order=2)
    psi, psi1, psi2 = red.worst_downlink(Ys, order=2)
    D = red.deadline - phi - psi
    dDdX, dDdY = -phi1, -psi1
    T = red.deadline

    rd = np.where(ux, D - red.t_floor + v[:, None] * T, 1.0)
    rc = np.where(cy, T - psi + v[:, None] * T, 1.0)
    inv = np.where(ux, 1.0 / rd, 0.0)
    invc = np.where(cy, 1.0 / rc, 0.0)

    mx, my = ux.astype(float), ay.astype(float)
    sx = 1.0 - (X * ux).sum(1)
    sy = 1.0 - (Y * ay).sum(1)

    gX = -dDdX * inv + mx / sx[:, None]
    gY = -dDdY * inv + psi1 * invc + my / sy[:, None]
    gV = t - (T * inv).sum(1) - (T * invc).sum(1)

    hXX = (dDdX * inv) ** 2 + phi2 * inv
    hYY = (dDdY * inv) ** 2 + psi2 * inv + psi2 * invc + (psi1 * invc) ** 2
    hXY = dDdX * dDdY * inv**2
    hXV = dDdX * T * inv**2
    hYV = dDdY * T * inv**2 - psi1 * T * invc**2
    hVV = (T**2 * inv**2).sum(1) + (T**2 * invc**2).sum(1)

    n = 2 * L + 1
    grad = np.zeros((B, n))
    grad[:, :L] = gX * mx
    grad[:, L : 2 * L] = gY * my
    grad[:, -1] = gV
    H = np.zeros((B, n, n))
    i = np.arange(L)
    H[:, i, i] = hXX + ~ux
    H[:, L + i, L + i] = hYY + ~ay
    H[:, i, L + i] = H[:, L + i, i] = hXY
    H[:, i, -1] = H[:, -1, i] = hXV * mx
    H[:, L + i, -1] = H[:, -1, L + i] = hYV * my
    H[:, -1, -1] = hVV + 1e-12
    H[:, :L, :L] += mx[:, :, None] * mx[:, None, :] / (sx**2)[:, None, None]
    H[:, L : 2 * L, L : 2 * L] += my[:, :, None] * my[:, None, :] / (sy**2)[:, None, None]
    return grad, H


def _phase1(red: ReducedBatch, max_stages=40, mu=20.0):
    """Find strictly feasible shares per instance, or certify infeasibility."""
    B, L = red.a.shape
    n_ux = red.ux.sum(1)
    n_ay = red.ay.sum(1)
    X = np.where(red.ux, 0.9 / np.maximum(n_ux, 1)[:, None], 0.0)
    Y = np.where(red.ay, 0.9 / np.maximum(n_ay, 1)[:, None], 0.0)

    sd, sc, sx, sy = _slacks(red, X, Y)
    viol = np.maximum(
        np.where(red.ux, -sd, -np.inf).max(1), np.where(red.cy, -sc, -np.inf).max(1)
    )
    viol = np.maximum(viol / red.deadline.max(1), 0.0)
    v = viol + 1.0
    m1 = n_ux + red.cy.sum(1) + 2.0

    feasible = _strictly_feasible(red, X, Y) & (n_ay > 0)
    trivial = n_ay == 0  # nothing requested: no constraints at all
    feasible |= trivial
    infeasible = np.zeros(B, dtype=bool)
    Xf, Yf = X.copy(), Y.copy()
    t = np.full(B, 1.0)
    steps = 0

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(max_stages):
            live = ~(feasible | infeasible)
            if not live.any():
                break
            for _ in range(40):
                grad, H = _newton_system1(red, X, Y, v, t)
                delta, grad = _safe_newton_step(grad, H, live)
                dec = -(grad * delta).sum(1)
                inner_live = live & (dec > _NEWTON_TOL)
                if not inner_live.any():
                    break
                phi0 = _phi1(red, X, Y, v, t, m1)
                gTd = (grad * delta).sum(1)
                step = np.where(inner_live, 1.0, 0.0)
                for _ in range(_MAX_BACKTRACK):
                    Xn = X + step[:, None] * delta[:, :L]
                    Yn = Y + step[:, None] * delta[:, L : 2 * L]
                    vn = v + step * delta[:, -1]
                    phin = _phi1(red, Xn, Yn, vn, t, m1)
                    ok = phin <= phi0 + _ARMIJO * step * gTd
                    if (ok | ~inner_live).all():
                        break
                    step = np.where(inner_live & ~ok, step * _BACKTRACK, step)
                upd = (inner_live & ok)[:, None]
                X = np.where(upd, Xn, X)
                Y = np.where(upd, Yn, Y)
                v = np.where(upd[:, 0], vn, v)
                steps += 1
                # early exit: a strictly feasible point appeared
                hit = live & (v < -1e-9) & _strictly_feasible(red, X, Y)
                if hit.any():
                    Xf = np.where(hit[:, None], X, Xf)
                    Yf = np.where(hit[:, None], Y, Yf)
                    feasible |= hit
                    live &= ~hit
                    if not live.any():
                        break
            # certificates at this stage
            lower = v - m1 / t
            infeasible |= live & (lower > 0)
            live &= ~infeasible
            t = np.where(live, t * mu, t)
            if t.max() > 1e14:
                break
    # anything undecided after the loop: no strict interior found
    infeasible |= ~(feasible | infeasible)
    return Xf, Yf, feasible, infeasible, steps


# ----------------------------------------------------------------- driver


def barrier_solve(red: ReducedBatch, gap_rtol: float = 1e-7, mu: float = 20.0, max_stages: int = 60) -> BarrierResult:
    """Phase-1 + central path on a batch; returns shares, verdicts, gaps."""
    B, L = red.a.shape
    w_off, w_dl = _masked_energy_weights(red)
    X, Y, feasible, infeasible, p1 = _phase1(red)
    m = red.n_constraints().astype(float)

    nvars = red.ux.sum(1) + red.ay.sum(1)
    solvable = feasible & (nvars > 0)
    G0 = red.objective(np.where(red.ux, X, 1.0), np.where(red.ay, Y, 1.0))
    t = np.where(solvable, m / np.maximum(np.abs(G0), 1e-9), 1.0)
    total_steps = 0
    for _ in range(max_stages):
        live = solvable.copy()
        X, Y, steps = _newton_loop(red, X, Y, t, w_off, w_dl, live)
        total_steps += steps
        G = red.objective(np.where(red.ux, X, 1.0), np.where(red.ay, Y, 1.0))
        done = m / t <= gap_rtol * np.maximum(np.abs(G), 1e-12)
        if (done | ~solvable).all():
            break
        t = np.where(solvable & ~done, t * mu, t)

    G = red.objective(np.where(red.ux, X, 1.0), np.where(red.ay, Y, 1.0))
    G = np.where(feasible, np.where(nvars > 0, G, 0.0), np.inf)
    gap = np.where(solvable, m / t, 0.0)
    return BarrierResult(
        X=X,
        Y=Y,
        t=t,
        feasible=feasible,
        infeasible=infeasible,
        objective=G,
        gap=gap,
        newton_steps=total_steps,
        phase1_steps=p1,
    )


def recover_duals(red: ReducedBatch, res: BarrierResult):
    """Lagrange multipliers of the full problem from the central point.

    Time-constraint multipliers (mu, eta, omega, gamma) are implied by the
    primal point, so time stationarity holds by construction.  The band
    prices (sigma, epsilon) are recovered as the average of the marginal
    rate values ``sum_k omega * r'(share)`` over active services rather
    than from the barrier slack 1/(t*slack): near a vertex of the share
    simplex the barrier multiplier is accurate only to ~sqrt(gap), while
    the implied price keeps share stationarity tight.  Complementarity
    residuals remain O(1/t) per constraint.  Returns dict of batched
    arrays.
    """
    B, L = red.a.shape
    K = red.w_off.shape[2]
    X, Y, t = res.X, res.Y, res.t
    sd, sc, _, _ = _slacks(red, X, Y)
    D = np.where(red.ux, red.compute_slack(np.where(red.ux, X, 1.0), np.where(red.ay, Y, 1.0)), 1.0)

    eta = np.where(red.ux, 1.0 / (t[:, None] * sd), 0.0)
    mu_u = np.where(red.ux, 2.0 * red.a / D**3 + eta, 0.0)
    mu_c = np.where(red.cy, 1.0 / (t[:, None] * np.where(red.cy, sc, 1.0)), 0.0)
    mu = mu_u + mu_c

    t_c, t_off, t_dl = primal_times(red, X, Y)
    hot_off = np.zeros((B, L, K), dtype=bool)
    hot_dl = np.zeros((B, L, K), dtype=bool)
    bb, ll = np.meshgrid(np.arange(B), np.arange(L), indexing="ij")
    hot_off[bb, ll, np.maximum(red.koff, 0)] = red.ux
    hot_dl[bb, ll, np.maximum(red.kdl, 0)] = red.ay

    w_off, w_dl = _masked_energy_weights(red)
    omega = (w_off + mu[:, :, None] * hot_off) * t_off**2 / red.input_bits[:, :, None]
    omega = np.where(red.ux[:, :, None], omega, 0.0)
    gamma = (w_dl + mu[:, :, None] * hot_dl) * t_dl**2 / red.output_bits[:, :, None]
    gamma = np.where(red.ay[:, :, None], gamma, 0.0)

    x_safe = np.where(red.ux, X, 1.0)
    r1_off = link_rate_derivative(x_safe[:, :, None], red.bw_off, red.snr_off)
    price_x = np.where(red.ux, (omega * r1_off).sum(axis=2), 0.0)
    n_x = np.maximum(red.ux.sum(axis=1), 1)
    sigma = np.where(red.ux.any(1), price_x.sum(axis=1) / n_x, 0.0)

    y_safe = np.where(red.ay, Y, 1.0)
    r1_dl = link_rate_derivative(y_safe[:, :, None], red.bw_dl, red.snr_dl)
    price_y = np.where(red.ay, (gamma * r1_dl).sum(axis=2), 0.0)
    n_y = np.maximum(red.ay.sum(axis=1), 1)
    eps = np.where(red.ay.any(1), price_y.sum(axis=1) / n_y, 0.0)
    return {"mu": mu, "eta": eta, "omega": omega, "gamma": gamma, "sigma": sigma, "epsilon": eps}
