"""Compiled kernels for the arm chain walk and the DLS iteration."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def axis_rotation(axis, angle):
    x, y, z = axis[0], axis[1], axis[2]
    c = math.cos(angle)
    s = math.sin(angle)
    C = 1.0 - c
    R = np.empty((3, 3))
    R[0, 0] = c + x * x * C
    R[0, 1] = x * y * C - z * s
    R[0, 2] = x * z * C + y * s
    R[1, 0] = y * x * C + z * s
    R[1, 1] = c + y * y * C
    R[1, 2] = y * z * C - x * s
    R[2, 0] = z * x * C - y * s
    R[2, 1] = z * y * C + x * s
    R[2, 2] = c + z * z * C
    return R


@njit(cache=True)
def chain_walk(mount_R, mount_p, off_R, off_p, axes, tool_R, tool_p, q):
    n = q.shape[0]
    R = mount_R.copy()
    p = mount_p.copy()
    origins = np.empty((n, 3))
    axes_out = np.empty((n, 3))
    for i in range(n):
        p = p + R @ off_p[i]
        R = R @ off_R[i]
        origins[i] = p
        axes_out[i] = R @ axes[i]
        R = R @ axis_rotation(axes[i], q[i])
    p_eef = p + R @ tool_p
    R_eef = R @ tool_R
    return R_eef, p_eef, origins, axes_out


@njit(cache=True)
def rotation_error(R_t, R):
    """Axis-angle vector of ``R_t @ R.T``."""
    M = R_t @ R.T
    tr = M[0, 0] + M[1, 1] + M[2, 2]
    # quaternion (Shepperd)
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        w = 0.25 * s
        x = (M[2, 1] - M[1, 2]) / s
        y = (M[0, 2] - M[2, 0]) / s
        z = (M[1, 0] - M[0, 1]) / s
    elif M[0, 0] > M[1, 1] and M[0, 0] > M[2, 2]:
        s = 2.0 * math.sqrt(1.0 + M[0, 0] - M[1, 1] - M[2, 2])
        w = (M[2, 1] - M[1, 2]) / s
        x = 0.25 * s
        y = (M[0, 1] + M[1, 0]) / s
        z = (M[0, 2] + M[2, 0]) / s
    elif M[1, 1] > M[2, 2]:
        s = 2.0 * math.sqrt(1.0 + M[1, 1] - M[0, 0] - M[2, 2])
        w = (M[0, 2] - M[2, 0]) / s
        x = (M[0, 1] + M[1, 0]) / s
        y = 0.25 * s
        z = (M[1, 2] + M[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + M[2, 2] - M[0, 0] - M[1, 1])
        w = (M[1, 0] - M[0, 1]) / s
        x = (M[0, 2] + M[2, 0]) / s
        y = (M[1, 2] + M[2, 1]) / s
        z = 0.25 * s
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    out = np.empty(3)
    vn = math.sqrt(x * x + y * y + z * z)
    if vn < 1e-12:
        out[0] = 2.0 * x
        out[1] = 2.0 * y
        out[2] = 2.0 * z
        return out
    k = 2.0 * math.atan2(vn, w) / vn
    out[0] = x * k
    out[1] = y * k
    out[2] = z * k
    return out


@njit(cache=True)
def dls_solve(
    mount_R, mount_p, off_R, off_p, axes, tool_R, tool_p,
    lower, upper, R_t, p_t, q0,
    max_iters, lam2, max_step, stop_pos, stop_rot,
):
    """Returns (q, position error, rotation error, iterations used)."""
    n = q0.shape[0]
    q = np.minimum(np.maximum(q0.copy(), lower), upper)
    pos_err = 0.0
    rot_err = 0.0
    J = np.empty((6, n))
    e = np.empty(6)
    eye = np.eye(6)
    for it in range(max_iters + 1):
        R, p, origins, ax = chain_walk(mount_R, mount_p, off_R, off_p, axes, tool_R, tool_p, q)
        e_p = p_t - p
        e_r = rotation_error(R_t, R)
        pos_err = math.sqrt(e_p[0] ** 2 + e_p[1] ** 2 + e_p[2] ** 2)
        rot_err = math.sqrt(e_r[0] ** 2 + e_r[1] ** 2 + e_r[2] ** 2)
        if pos_err <= stop_pos and rot_err <= stop_rot:
            return q, pos_err, rot_err, it
        if it == max_iters:
            break
        for i in range(n):
            a = ax[i]
            d = p - origins[i]
            J[0, i] = a[1] * d[2] - a[2] * d[1]
            J[1, i] = a[2] * d[0] - a[0] * d[2]
            J[2, i] = a[0] * d[1] - a[1] * d[0]
            J[3, i] = a[0]
            J[4, i] = a[1]
            J[5, i] = a[2]
        e[:3] = e_p
        e[3:] = e_r
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * eye, e)
        step = np.max(np.abs(dq))
        if step > max_step:
            dq = dq * (max_step / step)
        q = np.minimum(np.maximum(q + dq, lower), upper)
    return q, pos_err, rot_err, max_iters


@njit(cache=True)
def rpy_matrix(roll, pitch, yaw):
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    R = np.empty((3, 3))
    R[0, 0] = cy * cp
    R[0, 1] = cy * sp * sr - sy * cr
    R[0, 2] = cy * sp * cr + sy * sr
    R[1, 0] = sy * cp
    R[1, 1] = sy * sp * sr + cy * cr
    R[1, 2] = sy * sp * cr - cy * sr
    R[2, 0] = -sp
    R[2, 1] = cp * sr
    R[2, 2] = cp * cr
    return R


@njit(cache=True)
def torso_frame(base, torso):
    Rb = rpy_matrix(0.0, 0.0, base[2])
    R = Rb @ rpy_matrix(torso[1], torso[2], torso[3])
    p = np.empty(3)
    p[0] = base[0] + Rb[0, 2] * torso[0]
    p[1] = base[1] + Rb[1, 2] * torso[0]
    p[2] = Rb[2, 2] * torso[0]
    return R, p


@njit(cache=True)
def mat_to_quat(M):
    tr = M[0, 0] + M[1, 1] + M[2, 2]
    q = np.empty(4)
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q[0] = 0.25 * s
        q[1] = (M[2, 1] - M[1, 2]) / s
        q[2] = (M[0, 2] - M[2, 0]) / s
        q[3] = (M[1, 0] - M[0, 1]) / s
    elif M[0, 0] > M[1, 1] and M[0, 0] > M[2, 2]:
        s = 2.0 * math.sqrt(1.0 + M[0, 0] - M[1, 1] - M[2, 2])
        q[0] = (M[2, 1] - M[1, 2]) / s
        q[1] = 0.25 * s
        q[2] = (M[0, 1] + M[1, 0]) / s
        q[3] = (M[0, 2] + M[2, 0]) / s
    elif M[1, 1] > M[2, 2]:
        s = 2.0 * math.sqrt(1.0 + M[1, 1] - M[0, 0] - M[2, 2])
        q[0] = (M[0, 2] - M[2, 0]) / s
        q[1] = (M[0, 1] + M[1, 0]) / s
        q[2] = 0.25 * s
        q[3] = (M[1, 2] + M[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + M[2, 2] - M[0, 0] - M[1, 1])
        q[0] = (M[1, 0] - M[0, 1]) / s
        q[1] = (M[0, 2] + M[2, 0]) / s
        q[2] = (M[1, 2] + M[2, 1]) / s
        q[3] = 0.25 * s
    return q / math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)


@njit(cache=True)
def unpack_chain(f, n):
    """Views into a chain packed as mount R, p, offset Rs, ps, axes, tool R, p, lower, upper."""
    mount_R = f[0:9].reshape(3, 3)
    mount_p = f[9:12]
    o = 12
    off_R = f[o : o + 9 * n].reshape(n, 3, 3)
    o += 9 * n
    off_p = f[o : o + 3 * n].reshape(n, 3)
    o += 3 * n
    axes = f[o : o + 3 * n].reshape(n, 3)
    o += 3 * n
    tool_R = f[o : o + 9].reshape(3, 3)
    tool_p = f[o + 9 : o + 12]
    o += 12
    return mount_R, mount_p, off_R, off_p, axes, tool_R, tool_p, f[o : o + n], f[o + n : o + 2 * n]


# one packed array per chain: numba unboxes each argument separately, which
# costs more than the kernels themselves for 6-joint arms


@njit(cache=True)
def world_eef_pair(left, right, q_arms, n_left, base, torso):
    """World eef (translation, quaternion) of both arms; ``q_arms`` is left then right."""
    Rt, pt = torso_frame(base, torso)
    n_right = q_arms.shape[0] - n_left
    a = unpack_chain(left, n_left)
    b = unpack_chain(right, n_right)
    R, p, _, _ = chain_walk(a[0], a[1], a[2], a[3], a[4], a[5], a[6], q_arms[:n_left].copy())
    Rr, pr, _, _ = chain_walk(b[0], b[1], b[2], b[3], b[4], b[5], b[6], q_arms[n_left:].copy())
    return pt + Rt @ p, mat_to_quat(Rt @ R), pt + Rt @ pr, mat_to_quat(Rt @ Rr)


@njit(cache=True)
def dls_solve_packed(chain, R_t, p_t, q0, max_iters, lam2, max_step, stop_pos, stop_rot):
    c = unpack_chain(chain, q0.shape[0])
    return dls_solve(
        c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8],
        R_t, p_t, q0, max_iters, lam2, max_step, stop_pos, stop_rot,
    )


@njit(cache=True)
def camera_frame(base, torso, neck, nm_R, nm_p, cm_R, cm_p):
    Rt, pt = torso_frame(base, torso)
    p = pt + Rt @ nm_p
    R = Rt @ nm_R @ rpy_matrix(0.0, neck[1], neck[0])
    return R @ cm_R, p + R @ cm_p
