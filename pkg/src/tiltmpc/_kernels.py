"""Compiled per-stage dynamics, Jacobians and RK4 sensitivities.

Same model as :class:`tiltmpc.model.Dynamics`, written as scalar loops so the
solver's hot path avoids numpy call overhead.  ``consts`` packs
``[1/m, g, Ixx, Iyy, Izz, t_servo, t_thrust]``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def deriv_jac(x, u, fext, lat, ver, consts, servo, thrust, xdot, jx, ju):
    n = lat.shape[1]
    inv_m = consts[0]
    g = consts[1]
    ixx, iyy, izz = consts[2], consts[3], consts[4]
    a_off = 13
    f_off = 13 + (n if servo else 0)

    wrench = np.zeros(6)
    dw_dt = np.zeros((6, n))
    dw_da = np.zeros((6, n))
    for i in range(n):
        t = x[f_off + i] if thrust else u[i]
        a = x[a_off + i] if servo else u[n + i]
        s = np.sin(a)
        c = np.cos(a)
        for r in range(6):
            dt_ = lat[r, i] * s + ver[r, i] * c
            dw_dt[r, i] = dt_
            dw_da[r, i] = t * (lat[r, i] * c - ver[r, i] * s)
            wrench[r] += t * dt_

    qw, qx, qy, qz = x[6], x[7], x[8], x[9]
    wx, wy, wz = x[10], x[11], x[12]
    fx, fy, fz = wrench[0], wrench[1], wrench[2]

    # homogeneous rotation matrix, equals R(q) for unit q
    nv = qx * qx + qy * qy + qz * qz
    d = qw * qw - nv
    R = np.empty((3, 3))
    R[0, 0] = d + 2 * qx * qx
    R[0, 1] = 2 * qx * qy - 2 * qw * qz
    R[0, 2] = 2 * qx * qz + 2 * qw * qy
    R[1, 0] = 2 * qx * qy + 2 * qw * qz
    R[1, 1] = d + 2 * qy * qy
    R[1, 2] = 2 * qy * qz - 2 * qw * qx
    R[2, 0] = 2 * qx * qz - 2 * qw * qy
    R[2, 1] = 2 * qy * qz + 2 * qw * qx
    R[2, 2] = d + 2 * qz * qz

    for k in range(xdot.shape[0]):
        xdot[k] = 0.0
    xdot[0] = x[3]
    xdot[1] = x[4]
    xdot[2] = x[5]
    for r in range(3):
        xdot[3 + r] = (R[r, 0] * fx + R[r, 1] * fy + R[r, 2] * fz + fext[r]) * inv_m
    xdot[5] -= g
    xdot[6] = 0.5 * (-qx * wx - qy * wy - qz * wz)
    xdot[7] = 0.5 * (qw * wx + qy * wz - qz * wy)
    xdot[8] = 0.5 * (qw * wy - qx * wz + qz * wx)
    xdot[9] = 0.5 * (qw * wz + qx * wy - qy * wx)
    hx, hy, hz = ixx * wx, iyy * wy, izz * wz
    xdot[10] = (wrench[3] - (wy * hz - wz * hy)) / ixx
    xdot[11] = (wrench[4] - (wz * hx - wx * hz)) / iyy
    xdot[12] = (wrench[5] - (wx * hy - wy * hx)) / izz
    ks = 1.0 / consts[5]
    kt = 1.0 / consts[6]
    if servo:
        for i in range(n):
            xdot[a_off + i] = (u[n + i] - x[a_off + i]) * ks
    if thrust:
        for i in range(n):
            xdot[f_off + i] = (u[i] - x[f_off + i]) * kt

    jx[:, :] = 0.0
    ju[:, :] = 0.0
    jx[0, 3] = 1.0
    jx[1, 4] = 1.0
    jx[2, 5] = 1.0
    # d(R F)/dq
    cx = qy * fz - qz * fy
    cy = qz * fx - qx * fz
    cz = qx * fy - qy * fx
    jx[3, 6] = (2 * qw * fx + 2 * cx) * inv_m
    jx[4, 6] = (2 * qw * fy + 2 * cy) * inv_m
    jx[5, 6] = (2 * qw * fz + 2 * cz) * inv_m
    dot = qx * fx + qy * fy + qz * fz
    qv = (qx, qy, qz)
    fv = (fx, fy, fz)
    for r in range(3):
        for c in range(3):
            val = -2 * fv[r] * qv[c] + 2 * qv[r] * fv[c]
            if r == c:
                val += 2 * dot
            jx[3 + r, 7 + c] = val * inv_m
    # -2 qw [F]x
    jx[3, 8] += 2 * qw * fz * inv_m
    jx[3, 9] -= 2 * qw * fy * inv_m
    jx[4, 7] -= 2 * qw * fz * inv_m
    jx[4, 9] += 2 * qw * fx * inv_m
    jx[5, 7] += 2 * qw * fy * inv_m
    jx[5, 8] -= 2 * qw * fx * inv_m
    # quaternion kinematics
    jx[6, 7] = -0.5 * wx
    jx[6, 8] = -0.5 * wy
    jx[6, 9] = -0.5 * wz
    jx[7, 6] = 0.5 * wx
    jx[7, 8] = 0.5 * wz
    jx[7, 9] = -0.5 * wy
    jx[8, 6] = 0.5 * wy
    jx[8, 7] = -0.5 * wz
    jx[8, 9] = 0.5 * wx
    jx[9, 6] = 0.5 * wz
    jx[9, 7] = 0.5 * wy
    jx[9, 8] = -0.5 * wx
    jx[6, 10] = -0.5 * qx
    jx[6, 11] = -0.5 * qy
    jx[6, 12] = -0.5 * qz
    jx[7, 10] = 0.5 * qw
    jx[7, 11] = -0.5 * qz
    jx[7, 12] = 0.5 * qy
    jx[8, 10] = 0.5 * qz
    jx[8, 11] = 0.5 * qw
    jx[8, 12] = -0.5 * qx
    jx[9, 10] = -0.5 * qy
    jx[9, 11] = 0.5 * qx
    jx[9, 12] = 0.5 * qw
    # Euler equation: d(-w x Iw)/dw
    jx[10, 11] = -(wz * izz - wz * iyy) / ixx
    jx[10, 12] = -(wy * izz - wy * iyy) / ixx
    jx[11, 10] = -(wz * ixx - wz * izz) / iyy
    jx[11, 12] = -(wx * ixx - wx * izz) / iyy
    jx[12, 10] = -(wy * iyy - wy * ixx) / izz
    jx[12, 11] = -(wx * iyy - wx * ixx) / izz
    inv_i = (1.0 / ixx, 1.0 / iyy, 1.0 / izz)
    for i in range(n):
        col_t = f_off + i
        col_a = a_off + i
        for r in range(3):
            dvt = (R[r, 0] * dw_dt[0, i] + R[r, 1] * dw_dt[1, i] + R[r, 2] * dw_dt[2, i]) * inv_m
            dva = (R[r, 0] * dw_da[0, i] + R[r, 1] * dw_da[1, i] + R[r, 2] * dw_da[2, i]) * inv_m
            dwt = dw_dt[3 + r, i] * inv_i[r]
            dwa = dw_da[3 + r, i] * inv_i[r]
            if thrust:
                jx[3 + r, col_t] = dvt
                jx[10 + r, col_t] = dwt
            else:
                ju[3 + r, i] = dvt
                ju[10 + r, i] = dwt
            if servo:
                jx[3 + r, col_a] = dva
                jx[10 + r, col_a] = dwa
            else:
                ju[3 + r, n + i] = dva
                ju[10 + r, n + i] = dwa
        if servo:
            jx[col_a, col_a] = -ks
            ju[col_a, n + i] = ks
        if thrust:
            jx[col_t, col_t] = -kt
            ju[col_t, i] = kt


@njit(cache=True)
def rk4_sens_batch(xs, us, fext, h, substeps, lat, ver, consts, servo, thrust):
    """Discrete RK4 map and exact sensitivities for every row of ``xs``."""
    m, nx = xs.shape
    nu = us.shape[1]
    x_out = np.empty((m, nx))
    A_out = np.empty((m, nx, nx))
    B_out = np.empty((m, nx, nu))
    dt = h / substeps
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    a1 = np.empty((nx, nx))
    a2 = np.empty((nx, nx))
    a3 = np.empty((nx, nx))
    a4 = np.empty((nx, nx))
    b1 = np.empty((nx, nu))
    b2 = np.empty((nx, nu))
    b3 = np.empty((nx, nu))
    b4 = np.empty((nx, nu))
    eye = np.eye(nx)
    for j in range(m):
        x = xs[j].copy()
        u = us[j]
        Ax = eye.copy()
        Bu = np.zeros((nx, nu))
        for _ in range(substeps):
            deriv_jac(x, u, fext, lat, ver, consts, servo, thrust, k1, a1, b1)
            deriv_jac(x + 0.5 * dt * k1, u, fext, lat, ver, consts, servo, thrust, k2, a2, b2)
            d2x = a2 @ (eye + 0.5 * dt * a1)
            d2u = a2 @ (0.5 * dt * b1) + b2
            deriv_jac(x + 0.5 * dt * k2, u, fext, lat, ver, consts, servo, thrust, k3, a3, b3)
            d3x = a3 @ (eye + 0.5 * dt * d2x)
            d3u = a3 @ (0.5 * dt * d2u) + b3
            deriv_jac(x + dt * k3, u, fext, lat, ver, consts, servo, thrust, k4, a4, b4)
            d4x = a4 @ (eye + dt * d3x)
            d4u = a4 @ (dt * d3u) + b4
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            sx = eye + dt / 6.0 * (a1 + 2 * d2x + 2 * d3x + d4x)
            su = dt / 6.0 * (b1 + 2 * d2u + 2 * d3u + d4u)
            Bu = sx @ Bu + su
            Ax = sx @ Ax
        x_out[j] = x
        A_out[j] = Ax
        B_out[j] = Bu
    return x_out, A_out, B_out


@njit(cache=True)
def condense(A, B, defects, dx0):
    """Stacked prediction ``dx_k = S_k du + s_k`` of the linearised dynamics."""
    N, nx, nu = B.shape
    nz = N * nu
    S = np.zeros((N + 1, nx, nz))
    s = np.zeros((N + 1, nx))
    s[0] = dx0
    for k in range(N):
        c = k * nu
        for i in range(nx):
            acc = defects[k, i]
            for l in range(nx):
                acc += A[k, i, l] * s[k, l]
            s[k + 1, i] = acc
            for j in range(c):
                v = 0.0
                for l in range(nx):
                    v += A[k, i, l] * S[k, l, j]
                S[k + 1, i, j] = v
            for j in range(nu):
                S[k + 1, i, c + j] = B[k, i, j]
    return S, s
