"""Compiled single-shooting rollout with adjoint gradient.

The arithmetic mirrors :mod:`btmpc.battery` operation for operation so the
compiled trajectory matches the reference stepper to rounding error.
"""

import math

import numpy as np
from numba import njit

EXACT = 0
SOC_APPROX = 1
THERMAL_APPROX = 2


@njit(cache=True)
def current_partials(model, p, soc, t, v0, vs, r0, rsoc, rtemp, tref, rfloor):
    """Current and its partials wrt (P, SOC, T); also R and its partials.

    Returns ``ok=False`` if the exact-current discriminant is negative.
    """
    u = v0 + vs * soc
    a = 1.0 + rsoc * (1.0 - soc)
    b = 1.0 + rtemp * (tref - t)
    r = r0 * a * b
    if r <= rfloor:
        r = rfloor
        r_s = 0.0
        r_t = 0.0
    else:
        r_s = -r0 * rsoc * b
        r_t = -r0 * a * rtemp
    if model == EXACT:
        disc = u * u - 4.0 * r * p
        if disc < 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, r, r_s, r_t
        d = math.sqrt(disc)
        i = (u - d) / (2.0 * r)
        i_p = 1.0 / d
        i_u = (1.0 - u / d) / (2.0 * r)
        i_r = p / (r * d) - i / r
    elif model == SOC_APPROX:
        i = p / u + r * p * p / u**3
        i_p = 1.0 / u + 2.0 * r * p / u**3
        i_u = -p / (u * u) - 3.0 * r * p * p / u**4
        i_r = p * p / u**3
    else:
        i = p / u
        i_p = 1.0 / u
        i_u = -p / (u * u)
        i_r = 0.0
    i_s = i_u * vs + i_r * r_s
    i_t = i_r * r_t
    return True, i, i_p, i_s, i_t, r, r_s, r_t


@njit(cache=True)
def evaluate(
    t0, s0, q, eps, p, dt,
    m_thermal, m_soc,
    cap, cnom, ac, v0, vs, r0, rsoc, rtemp, tref, rfloor,
    economic, tracking, t_ref, s_ref, w1,
    bounded, t_lo, t_hi, s_lo, s_hi, mu,
    slack, gamma, delta,
    want_grad,
):
    """Roll out the horizon and return cost pieces, gradient and states.

    Returns ``(ok, stage_cost, penalty, grad_q, grad_eps, T, S, t_viol, s_viol)``
    where ``stage_cost`` includes the slack term and ``t_viol``/``s_viol``
    are the largest bound excesses over steps 1..N.
    """
    n = q.size
    T = np.empty(n + 1)
    S = np.empty(n + 1)
    jac = np.empty((n, 6))  # dT'/dT, dT'/dS, dS'/dT, dS'/dS, dT'/dq, dS'/dq
    T[0] = t0
    S[0] = s0
    grad_q = np.zeros(n)
    grad_eps = np.zeros(n)
    for i in range(n):
        ptot = p[i] + ac * q[i]
        ok, it, it_p, it_s, it_t, r, r_s, r_t = current_partials(
            m_thermal, ptot, S[i], T[i], v0, vs, r0, rsoc, rtemp, tref, rfloor)
        if not ok:
            return False, np.inf, np.inf, grad_q, grad_eps, T, S, np.inf, np.inf
        ok, js, js_p, js_s, js_t, _, _, _ = current_partials(
            m_soc, ptot, S[i], T[i], v0, vs, r0, rsoc, rtemp, tref, rfloor)
        if not ok:
            return False, np.inf, np.inf, grad_q, grad_eps, T, S, np.inf, np.inf
        heat = it * it * r
        T[i + 1] = T[i] + dt * ((heat + q[i]) / cap)
        s_next = S[i] + dt * (-js / cnom)
        clamped = s_next < 0.0 or s_next > 1.0
        S[i + 1] = min(1.0, max(0.0, s_next))
        if want_grad:
            h_t = 2.0 * it * r * it_t + it * it * r_t
            h_s = 2.0 * it * r * it_s + it * it * r_s
            h_q = 2.0 * it * r * it_p * ac
            jac[i, 0] = 1.0 + dt * h_t / cap
            jac[i, 1] = dt * h_s / cap
            jac[i, 4] = dt * (h_q + 1.0) / cap
            if clamped:
                jac[i, 2] = 0.0
                jac[i, 3] = 0.0
                jac[i, 5] = 0.0
            else:
                jac[i, 2] = -dt * js_t / cnom
                jac[i, 3] = 1.0 - dt * js_s / cnom
                jac[i, 5] = -dt * js_p * ac / cnom

    stage = 0.0
    penalty = 0.0
    lam_t = np.zeros(n + 1)
    lam_s = np.zeros(n + 1)
    if economic:
        for i in range(n):
            stage += ac * q[i]
            grad_q[i] += ac
    if tracking:
        for j in range(n + 1):
            et = T[j] - t_ref[j]
            es = S[j] - s_ref[j]
            stage += et * et + w1 * es * es
            lam_t[j] += 2.0 * et
            lam_s[j] += 2.0 * w1 * es
    if slack:
        for i in range(n):
            d = delta - eps[i]
            stage += gamma * d * d
            grad_eps[i] += -2.0 * gamma * d
    t_viol = 0.0
    s_viol = 0.0
    if bounded:
        for j in range(1, n + 1):
            upper = t_hi[j] - eps[j - 1]
            v = T[j] - upper
            if v > 0.0:
                penalty += mu * v * v
                lam_t[j] += 2.0 * mu * v
                grad_eps[j - 1] += 2.0 * mu * v
                t_viol = max(t_viol, v)
            v = t_lo[j] - T[j]
            if v > 0.0:
                penalty += mu * v * v
                lam_t[j] -= 2.0 * mu * v
                t_viol = max(t_viol, v)
            v = S[j] - s_hi
            if v > 0.0:
                penalty += mu * v * v
                lam_s[j] += 2.0 * mu * v
                s_viol = max(s_viol, v)
            v = s_lo - S[j]
            if v > 0.0:
                penalty += mu * v * v
                lam_s[j] -= 2.0 * mu * v
                s_viol = max(s_viol, v)

    if want_grad:
        # backward sweep: lam_x[i] accumulates dL/dx_i
        for i in range(n - 1, -1, -1):
            lt = lam_t[i + 1]
            ls = lam_s[i + 1]
            grad_q[i] += lt * jac[i, 4] + ls * jac[i, 5]
            lam_t[i] += lt * jac[i, 0] + ls * jac[i, 2]
            lam_s[i] += lt * jac[i, 1] + ls * jac[i, 3]
    return True, stage, penalty, grad_q, grad_eps, T, S, t_viol, s_viol


# Scalar layout for ``objective``/``minimize_box``.
(C_T0, C_S0, C_DT, C_CAP, C_CNOM, C_AC, C_V0, C_VS, C_R0, C_RSOC, C_RTEMP, C_TREF, C_RFLOOR,
 C_W1, C_SLO, C_SHI, C_MU, C_GAMMA, C_DELTA, C_QSCALE) = range(20)
N_CFG = 20
# Flag layout.
F_THERMAL, F_SOC, F_ECON, F_TRACK, F_BOUNDED, F_SLACK = range(6)
N_FLAGS = 6


@njit(cache=True)
def objective(z, n, cfg, flags, p, t_ref, s_ref, t_lo, t_hi):
    """Penalized cost and gradient in scaled variables ``z = [q/qs, eps]``."""
    qs = cfg[C_QSCALE]
    q = z[:n] * qs
    slack = flags[F_SLACK] != 0
    if slack:
        eps = z[n:].copy()
    else:
        eps = np.zeros(n)
    ok, stage, pen, gq, geps, _, _, _, _ = evaluate(
        cfg[C_T0], cfg[C_S0], q, eps, p, cfg[C_DT],
        flags[F_THERMAL], flags[F_SOC],
        cfg[C_CAP], cfg[C_CNOM], cfg[C_AC], cfg[C_V0], cfg[C_VS], cfg[C_R0], cfg[C_RSOC],
        cfg[C_RTEMP], cfg[C_TREF], cfg[C_RFLOOR],
        flags[F_ECON] != 0, flags[F_TRACK] != 0, t_ref, s_ref, cfg[C_W1],
        flags[F_BOUNDED] != 0, t_lo, t_hi, cfg[C_SLO], cfg[C_SHI], cfg[C_MU],
        slack, cfg[C_GAMMA], cfg[C_DELTA],
        True,
    )
    g = np.zeros(z.size)
    if not ok:
        return False, np.inf, g
    for i in range(n):
        g[i] = gq[i] * qs
    if slack:
        for i in range(n):
            g[n + i] = geps[i]
    return True, stage + pen, g


@njit(cache=True)
def _project(z, lo, hi):
    out = np.empty(z.size)
    for i in range(z.size):
        out[i] = min(hi[i], max(lo[i], z[i]))
    return out


@njit(cache=True)
def projected_gradient_norm(z, g, lo, hi):
    worst = 0.0
    for i in range(z.size):
        v = abs(z[i] - min(hi[i], max(lo[i], z[i] - g[i])))
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def minimize_box(z0, lo, hi, n, cfg, flags, p, t_ref, s_ref, t_lo, t_hi,
                 maxiter, memory, maxls, ftol, gtol):
    """Projected limited-memory BFGS for box-constrained minimization.

    Variables pinned at a bound with the gradient pushing outward are held
    fixed; the two-loop recursion acts on the remaining free variables and
    an Armijo backtracking search runs along the projected path. Falls back
    to projected steepest descent when the quasi-Newton direction is not a
    descent direction.

    Returns ``(z, f, iterations, code)`` with code 0 = projected gradient
    below ``gtol``, 1 = relative decrease below ``ftol``, 2 = no further
    decrease found, 3 = iteration limit, -1 = non-finite start.
    """
    m = z0.size
    z = _project(z0, lo, hi)
    ok, f, g = objective(z, n, cfg, flags, p, t_ref, s_ref, t_lo, t_hi)
    if not ok:
        return z, np.inf, 0, -1
    S = np.zeros((memory, m))
    Y = np.zeros((memory, m))
    rho = np.zeros(memory)
    count = 0
    head = 0
    alpha = np.zeros(memory)
    free = np.empty(m, dtype=np.bool_)
    d = np.empty(m)
    it = 0
    code = 3
    while it < maxiter:
        if projected_gradient_norm(z, g, lo, hi) <= gtol * max(1.0, abs(f)):
            code = 0
            break
        width = 1e-12
        for i in range(m):
            at_lo = z[i] <= lo[i] + width and g[i] > 0.0
            at_hi = z[i] >= hi[i] - width and g[i] < 0.0
            free[i] = not (at_lo or at_hi)
        accepted = False
        for attempt in range(2):
            use_qn = attempt == 0 and count > 0
            for i in range(m):
                d[i] = -g[i] if free[i] else 0.0
            if use_qn:
                for k in range(count):
                    j = (head - 1 - k) % memory
                    a = 0.0
                    for i in range(m):
                        if free[i]:
                            a += S[j, i] * d[i]
                    a *= rho[j]
                    alpha[j] = a
                    for i in range(m):
                        if free[i]:
                            d[i] -= a * Y[j, i]
                jl = (head - 1) % memory
                yy = 0.0
                for i in range(m):
                    yy += Y[jl, i] * Y[jl, i]
                scale = 1.0 / (rho[jl] * yy) if yy > 0.0 else 1.0
                for i in range(m):
                    d[i] *= scale
                for k in range(count - 1, -1, -1):
                    j = (head - 1 - k) % memory
                    b = 0.0
                    for i in range(m):
                        if free[i]:
                            b += Y[j, i] * d[i]
                    b *= rho[j]
                    for i in range(m):
                        if free[i]:
                            d[i] += (alpha[j] - b) * S[j, i]
                slope = 0.0
                for i in range(m):
                    slope += g[i] * d[i]
                if not slope < 0.0:
                    continue
                step = 1.0
            else:
                dmax = 0.0
                for i in range(m):
                    dmax = max(dmax, abs(d[i]))
                if dmax == 0.0:
                    break
                step = 1.0 / dmax  # largest move spans at most one scaled unit
            for _ in range(maxls):
                zt = _project(z + step * d, lo, hi)
                okt, ft, gt = objective(zt, n, cfg, flags, p, t_ref, s_ref, t_lo, t_hi)
                decrease = 0.0
                for i in range(m):
                    decrease += g[i] * (zt[i] - z[i])
                if okt and ft <= f + 1e-4 * decrease and ft <= f:
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                break
            count = 0  # discard curvature pairs before the steepest-descent retry
        if not accepted:
            code = 2
            break
        it += 1
        sy = 0.0
        ss = 0.0
        yy = 0.0
        for i in range(m):
            si = zt[i] - z[i]
            yi = gt[i] - g[i]
            S[head, i] = si
            Y[head, i] = yi
            sy += si * yi
            ss += si * si
            yy += yi * yi
        if sy > 1e-12 * math.sqrt(ss * yy) and sy > 0.0:
            rho[head] = 1.0 / sy
            head = (head + 1) % memory
            count = min(count + 1, memory)
        rel = (f - ft) / max(abs(f), abs(ft), 1.0)
        z = zt
        f = ft
        g = gt
        if rel <= ftol:
            code = 1
            break
    return z, f, it, code
