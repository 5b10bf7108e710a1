"""Compiled rigid-body kernels (numba). Arrays follow the layout built by
``RobotModel._arrays``; spatial vectors are [angular; linear] in world
coordinates about the world origin."""
import numba as nb
import numpy as np

FLOATING, REVOLUTE, PRISMATIC = 0, 1, 2

_opts = dict(cache=True)


@nb.njit(**_opts)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


@nb.njit(**_opts)
def _quat_rot(w, x, y, z):
    r = np.empty((3, 3))
    r[0, 0] = 1 - 2 * (y * y + z * z)
    r[0, 1] = 2 * (x * y - w * z)
    r[0, 2] = 2 * (x * z + w * y)
    r[1, 0] = 2 * (x * y + w * z)
    r[1, 1] = 1 - 2 * (x * x + z * z)
    r[1, 2] = 2 * (y * z - w * x)
    r[2, 0] = 2 * (x * z - w * y)
    r[2, 1] = 2 * (y * z + w * x)
    r[2, 2] = 1 - 2 * (x * x + y * y)
    return r


@nb.njit(**_opts)
def _axis_rot(a, angle):
    c, s = np.cos(angle), np.sin(angle)
    t = 1.0 - c
    x, y, z = a[0], a[1], a[2]
    r = np.empty((3, 3))
    r[0, 0] = c + x * x * t
    r[0, 1] = x * y * t - z * s
    r[0, 2] = x * z * t + y * s
    r[1, 0] = y * x * t + z * s
    r[1, 1] = c + y * y * t
    r[1, 2] = y * z * t - x * s
    r[2, 0] = z * x * t - y * s
    r[2, 1] = z * y * t + x * s
    r[2, 2] = c + z * z * t
    return r


@nb.njit(**_opts)
def _cross_motion(v, m):
    out = np.empty(6)
    out[:3] = _cross(v[:3], m[:3])
    out[3:] = _cross(v[:3], m[3:]) + _cross(v[3:], m[:3])
    return out


@nb.njit(**_opts)
def _cross_force(v, f):
    out = np.empty(6)
    out[:3] = _cross(v[:3], f[:3]) + _cross(v[3:], f[3:])
    out[3:] = _cross(v[:3], f[3:])
    return out


@nb.njit(**_opts)
def forward_kinematics(q, v, jtype, parent, axis, prot, ptrans, qstart, vstart, nvj):
    nj = jtype.shape[0]
    nv = v.shape[0]
    rot = np.zeros((nj, 3, 3))
    pos = np.zeros((nj, 3))
    S = np.zeros((6, nv))
    vel = np.zeros((nj, 6))
    cbias = np.zeros((nj, 6))
    for i in range(nj):
        p = parent[i]
        vs = vstart[i]
        if jtype[i] == FLOATING:
            qs = qstart[i]
            r = _quat_rot(q[qs + 3], q[qs + 4], q[qs + 5], q[qs + 6])
            ps = q[qs:qs + 3].copy()
            px = np.array([[0.0, -ps[2], ps[1]], [ps[2], 0.0, -ps[0]], [-ps[1], ps[0], 0.0]])
            pr = px @ r
            for a in range(3):
                for b in range(3):
                    S[3 + a, vs + b] = r[a, b]
                    S[a, vs + 3 + b] = r[a, b]
                    S[3 + a, vs + 3 + b] = pr[a, b]
        else:
            if p < 0:
                rp = np.eye(3)
                pp = np.zeros(3)
            else:
                rp = rot[p]
                pp = pos[p]
            rj = rp @ prot[i]
            pj = pp + rp @ ptrans[i]
            aw = rj @ axis[i]
            qi = q[qstart[i]]
            if jtype[i] == REVOLUTE:
                r = rj @ _axis_rot(axis[i], qi)
                ps = pj
                S[:3, vs] = aw
                S[3:, vs] = _cross(ps, aw)
            else:
                r = rj
                ps = pj + aw * qi
                S[3:, vs] = aw
        rot[i] = r
        pos[i] = ps
        vj = np.zeros(6)
        for k in range(nvj[i]):
            vj += S[:, vs + k] * v[vs + k]
        if p >= 0:
            vel[i] = vel[p] + vj
        else:
            vel[i] = vj
        cbias[i] = _cross_motion(vel[i], vj)
    return rot, pos, S, vel, cbias


@nb.njit(**_opts)
def spatial_inertias(rot, pos, mass, com, inertia):
    nj = mass.shape[0]
    out = np.zeros((nj, 6, 6))
    for i in range(nj):
        r = rot[i]
        c = pos[i] + r @ com[i]
        cx = np.array([[0.0, -c[2], c[1]], [c[2], 0.0, -c[0]], [-c[1], c[0], 0.0]])
        ic = r @ inertia[i] @ r.T
        m = mass[i]
        out[i, :3, :3] = ic + m * (cx @ cx.T)
        out[i, :3, 3:] = m * cx
        out[i, 3:, :3] = m * cx.T
        for a in range(3):
            out[i, 3 + a, 3 + a] = m
    return out


@nb.njit(**_opts)
def crba(iw, S, parent, vstart, nvj, ancestor):
    nj = parent.shape[0]
    nv = S.shape[1]
    ic = iw.copy()
    for i in range(nj - 1, -1, -1):
        p = parent[i]
        if p >= 0:
            ic[p] += ic[i]
    M = np.zeros((nv, nv))
    for i in range(nj):
        vi = vstart[i]
        ni = nvj[i]
        F = ic[i] @ np.ascontiguousarray(S[:, vi:vi + ni])
        for k in range(nj):
            if ancestor[i, k]:
                vk = vstart[k]
                nk = nvj[k]
                blk = np.ascontiguousarray(F.T) @ np.ascontiguousarray(S[:, vk:vk + nk])
                M[vi:vi + ni, vk:vk + nk] = blk
                M[vk:vk + nk, vi:vi + ni] = blk.T
    return M


@nb.njit(**_opts)
def rnea(vdot, gravity, iw, S, vel, cbias, parent, vstart, nvj):
    nj = parent.shape[0]
    nv = S.shape[1]
    acc = np.zeros((nj, 6))
    f = np.zeros((nj, 6))
    a0 = np.zeros(6)
    a0[3:] = -gravity
    for i in range(nj):
        p = parent[i]
        a = a0.copy() if p < 0 else acc[p].copy()
        vs = vstart[i]
        for k in range(nvj[i]):
            a += S[:, vs + k] * vdot[vs + k]
        a += cbias[i]
        acc[i] = a
        f[i] = iw[i] @ a + _cross_force(vel[i], iw[i] @ vel[i])
    tau = np.zeros(nv)
    for i in range(nj - 1, -1, -1):
        vs = vstart[i]
        for k in range(nvj[i]):
            acc_k = 0.0
            for r in range(6):
                acc_k += S[r, vs + k] * f[i, r]
            tau[vs + k] = acc_k
        p = parent[i]
        if p >= 0:
            f[p] += f[i]
    return tau


@nb.njit(**_opts)
def points(rot, pos, S, vel, cbias, parent, vstart, nvj, ancestor, bodies, locals_):
    """Position, velocity, Jacobian and drift acceleration of body-fixed points."""
    nj = parent.shape[0]
    nv = S.shape[1]
    npts = bodies.shape[0]
    acc = np.zeros((nj, 6))
    for i in range(nj):
        p = parent[i]
        if p >= 0:
            acc[i] = acc[p] + cbias[i]
        else:
            acc[i] = cbias[i]
    P = np.zeros((npts, 3))
    V = np.zeros((npts, 3))
    J = np.zeros((npts, 3, nv))
    A = np.zeros((npts, 3))
    for n in range(npts):
        b = bodies[n]
        pt = pos[b] + rot[b] @ locals_[n]
        P[n] = pt
        w = vel[b]
        pdot = w[3:] + _cross(w[:3], pt)
        V[n] = pdot
        a = acc[b]
        A[n] = a[3:] + _cross(a[:3], pt) + _cross(w[:3], pdot)
        for k in range(nj):
            if ancestor[b, k]:
                vs = vstart[k]
                for c in range(nvj[k]):
                    col = S[:, vs + c]
                    J[n, :, vs + c] = col[3:] + _cross(col[:3], pt)
    return P, V, J, A


@nb.njit(**_opts)
def contact_law(delta, w0, w1, w2, mu, k, b, v_eps, dt):
    """Force in the local contact frame and its Jacobian w.r.t. the local
    velocity. ``delta`` is the penetration at the start of the step; with
    ``dt > 0`` the spring sees the end-of-step penetration ``delta - dt*w2``."""
    f = np.zeros(3)
    jac = np.zeros((3, 3))
    d = delta - dt * w2
    if d <= 0.0:
        return f, jac
    fn = k * d - b * w2
    if fn <= 0.0:
        return f, jac
    dfn = -b - k * dt
    f[2] = fn
    jac[2, 2] = dfn
    speed = np.sqrt(w0 * w0 + w1 * w1)
    if speed > v_eps:
        g0, g1 = w0 / speed, w1 / speed
        c = -mu * fn / speed
        f[0] = -mu * fn * g0
        f[1] = -mu * fn * g1
        jac[0, 0] = c * (1.0 - g0 * g0)
        jac[0, 1] = -c * g0 * g1
        jac[1, 0] = -c * g0 * g1
        jac[1, 1] = c * (1.0 - g1 * g1)
        jac[0, 2] = -mu * g0 * dfn
        jac[1, 2] = -mu * g1 * dfn
    else:
        c = -mu * fn / v_eps
        f[0] = c * w0
        f[1] = c * w1
        jac[0, 0] = c
        jac[1, 1] = c
        jac[0, 2] = -mu * w0 / v_eps * dfn
        jac[1, 2] = -mu * w1 / v_eps * dfn
    return f, jac


@nb.njit(**_opts)
def _contact_residual(w, w_free, W, deltas, mu, k, b, v_eps, dt):
    n = w.shape[0]
    nc = n // 3
    f = np.zeros(n)
    D = np.zeros((n, n))
    for c in range(nc):
        fc, jc = contact_law(deltas[c], w[3 * c], w[3 * c + 1], w[3 * c + 2], mu, k, b, v_eps, dt)
        f[3 * c:3 * c + 3] = fc
        D[3 * c:3 * c + 3, 3 * c:3 * c + 3] = jc
    F = w - w_free - dt * (W @ f)
    return F, f, D


@nb.njit(**_opts)
def solve_contacts(W, w_free, deltas, w0, mu, k, b, v_eps, dt, tol, max_iter):
    """Newton iteration with backtracking on w = w_free + dt W f(w)."""
    n = w_free.shape[0]
    w = w0.copy()
    F, f, D = _contact_residual(w, w_free, W, deltas, mu, k, b, v_eps, dt)
    res = np.sqrt(F @ F)
    it = 0
    eye = np.eye(n)
    while res > tol and it < max_iter:
        it += 1
        dw = np.linalg.solve(eye - dt * (W @ D), -F)
        t = 1.0
        while True:
            w_try = w + t * dw
            F_try, f_try, D_try = _contact_residual(w_try, w_free, W, deltas, mu, k, b, v_eps, dt)
            r_try = np.sqrt(F_try @ F_try)
            if r_try < (1.0 - 1e-4 * t) * res or t < 1e-6:
                break
            t *= 0.5
        w, F, f, D, res = w_try, F_try, f_try, D_try, r_try
    return w, f, it, res
