"""Compiled gravity kernels: direct summation and a Barnes-Hut octree.

All kernels use the Plummer-softened pair potential ``-w_i w_j / sqrt(r^2 + eps^2)``
and take positions as three contiguous coordinate arrays.  Loops over target
particles run in parallel; every reduction is done per target and then summed
in a fixed order, so results do not depend on the thread count.
"""
import os

import numba
import numpy as np
from numba import njit, prange

THREADS_ENV = "VPSTAB_NUM_THREADS"
# the installed TBB is too old; workqueue is always available
numba.config.THREADING_LAYER = "workqueue"


def configure_threads(n=None):
    """Set the kernel thread count from ``n`` or the environment; return it."""
    if n is None:
        n = os.environ.get(THREADS_ENV)
    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()

_JIT = dict(cache=True, fastmath=True, error_model="numpy")
_PAR = dict(_JIT, parallel=True)


def split_coords(x):
    x = np.asarray(x, dtype=np.float64)
    return (np.ascontiguousarray(x[:, 0]), np.ascontiguousarray(x[:, 1]),
            np.ascontiguousarray(x[:, 2]))


@njit(**_PAR)
def _direct_acc(x0, x1, x2, w, eps2):
    n = x0.shape[0]
    a = np.zeros((n, 3))
    for i in prange(n):
        xi0 = x0[i]
        xi1 = x1[i]
        xi2 = x2[i]
        ax = 0.0
        ay = 0.0
        az = 0.0
        if eps2 > 0.0:
            # the self term has dx = 0 and contributes exactly nothing
            for j in range(n):
                dx = x0[j] - xi0
                dy = x1[j] - xi1
                dz = x2[j] - xi2
                rinv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
                s = w[j] * rinv * rinv * rinv
                ax += s * dx
                ay += s * dy
                az += s * dz
        else:
            for j in range(i):
                dx = x0[j] - xi0
                dy = x1[j] - xi1
                dz = x2[j] - xi2
                rinv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
                s = w[j] * rinv * rinv * rinv
                ax += s * dx
                ay += s * dy
                az += s * dz
            for j in range(i + 1, n):
                dx = x0[j] - xi0
                dy = x1[j] - xi1
                dz = x2[j] - xi2
                rinv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
                s = w[j] * rinv * rinv * rinv
                ax += s * dx
                ay += s * dy
                az += s * dz
        a[i, 0] = ax
        a[i, 1] = ay
        a[i, 2] = az
    return a


@njit(**_PAR)
def _direct_pair_rows(x0, x1, x2, w, eps2):
    # row i holds sum over j>i of w_i w_j / sqrt(r^2 + eps^2)
    n = x0.shape[0]
    rows = np.zeros(n)
    for i in prange(n):
        xi0 = x0[i]
        xi1 = x1[i]
        xi2 = x2[i]
        acc = 0.0
        for j in range(i + 1, n):
            dx = x0[j] - xi0
            dy = x1[j] - xi1
            dz = x2[j] - xi2
            acc += w[j] / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
        rows[i] = w[i] * acc
    return rows


@njit(**_PAR)
def _direct_phi(x0, x1, x2, w, eps2):
    # per-particle potential, self term excluded
    n = x0.shape[0]
    phi = np.zeros(n)
    for i in prange(n):
        xi0 = x0[i]
        xi1 = x1[i]
        xi2 = x2[i]
        acc = 0.0
        for j in range(i):
            dx = x0[j] - xi0
            dy = x1[j] - xi1
            dz = x2[j] - xi2
            acc += w[j] / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
        for j in range(i + 1, n):
            dx = x0[j] - xi0
            dy = x1[j] - xi1
            dz = x2[j] - xi2
            acc += w[j] / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
        phi[i] = -acc
    return phi


@njit(**_PAR)
def _cross_pair_rows(x0, x1, x2, w, y0, y1, y2, u, eps2):
    # row i holds sum over j of w_i u_j / sqrt(|x_i - y_j|^2 + eps^2)
    rows = np.zeros(x0.shape[0])
    for i in prange(x0.shape[0]):
        acc = 0.0
        for j in range(y0.shape[0]):
            dx = y0[j] - x0[i]
            dy = y1[j] - x1[i]
            dz = y2[j] - x2[i]
            acc += u[j] / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
        rows[i] = w[i] * acc
    return rows


# ---------------------------------------------------------------------------
# Barnes-Hut octree
# ---------------------------------------------------------------------------

@njit(cache=True)
def _grow(arr, size):
    out = np.empty((size,) + arr.shape[1:], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def _build_tree(x0, x1, x2, w, leaf_size, max_depth):
    n = x0.shape[0]
    order = np.arange(n)
    cap = max(64, 4 * n)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    first_child = -np.ones(cap, np.int64)
    n_child = np.zeros(cap, np.int64)
    center = np.zeros((cap, 3))
    half = np.zeros(cap)
    depth = np.zeros(cap, np.int64)

    lo0, hi0 = x0.min(), x0.max()
    lo1, hi1 = x1.min(), x1.max()
    lo2, hi2 = x2.min(), x2.max()
    h = 0.5 * max(hi0 - lo0, hi1 - lo1, hi2 - lo2) * (1.0 + 1e-9) + 1e-300
    center[0, 0] = 0.5 * (lo0 + hi0)
    center[0, 1] = 0.5 * (lo1 + hi1)
    center[0, 2] = 0.5 * (lo2 + hi2)
    half[0] = h
    start[0] = 0
    count[0] = n
    n_nodes = 1

    octant = np.empty(n, np.int64)
    buf = np.empty(n, np.int64)
    node = 0
    while node < n_nodes:
        c = count[node]
        if c > leaf_size and depth[node] < max_depth:
            s = start[node]
            cx = center[node, 0]
            cy = center[node, 1]
            cz = center[node, 2]
            counts = np.zeros(8, np.int64)
            for t in range(s, s + c):
                p = order[t]
                o = 0
                if x0[p] >= cx:
                    o += 1
                if x1[p] >= cy:
                    o += 2
                if x2[p] >= cz:
                    o += 4
                octant[t] = o
                counts[o] += 1
            offs = np.zeros(8, np.int64)
            acc = 0
            for o in range(8):
                offs[o] = acc
                acc += counts[o]
            fill = offs.copy()
            for t in range(s, s + c):
                o = octant[t]
                buf[s + fill[o]] = order[t]
                fill[o] += 1
            for t in range(s, s + c):
                order[t] = buf[t]
            if n_nodes + 8 > cap:
                cap *= 2
                start = _grow(start, cap)
                count = _grow(count, cap)
                first_child = _grow(first_child, cap)
                n_child = _grow(n_child, cap)
                center = _grow(center, cap)
                half = _grow(half, cap)
                depth = _grow(depth, cap)
                first_child[n_nodes:] = -1
            first_child[node] = n_nodes
            hh = 0.5 * half[node]
            for o in range(8):
                if counts[o] == 0:
                    continue
                k = n_nodes
                start[k] = s + offs[o]
                count[k] = counts[o]
                half[k] = hh
                depth[k] = depth[node] + 1
                center[k, 0] = cx + (hh if (o & 1) else -hh)
                center[k, 1] = cy + (hh if (o & 2) else -hh)
                center[k, 2] = cz + (hh if (o & 4) else -hh)
                first_child[k] = -1
                n_child[k] = 0
                n_nodes += 1
                n_child[node] += 1
        node += 1

    mass = np.zeros(n_nodes)
    com = np.zeros((n_nodes, 3))
    for k in range(n_nodes - 1, -1, -1):
        if first_child[k] < 0:
            m = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            for t in range(start[k], start[k] + count[k]):
                p = order[t]
                m += w[p]
                c0 += w[p] * x0[p]
                c1 += w[p] * x1[p]
                c2 += w[p] * x2[p]
        else:
            m = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            for q in range(first_child[k], first_child[k] + n_child[k]):
                m += mass[q]
                c0 += mass[q] * com[q, 0]
                c1 += mass[q] * com[q, 1]
                c2 += mass[q] * com[q, 2]
        mass[k] = m
        if m > 0:
            com[k, 0] = c0 / m
            com[k, 1] = c1 / m
            com[k, 2] = c2 / m
        else:
            com[k, 0] = center[k, 0]
            com[k, 1] = center[k, 1]
            com[k, 2] = center[k, 2]
    return (order, start[:n_nodes].copy(), count[:n_nodes].copy(), first_child[:n_nodes].copy(),
            n_child[:n_nodes].copy(), center[:n_nodes].copy(), half[:n_nodes].copy(), mass, com)


@njit(**_PAR)
def _tree_walk(x0, x1, x2, w, order, start, count, first_child, n_child, center, half, mass,
               com, theta, eps2, want_acc):
    n = x0.shape[0]
    acc = np.zeros((n, 3))
    phi = np.zeros(n)
    th2 = theta * theta
    for i in prange(n):
        stack = np.empty(64 * 8 + 16, np.int64)
        xi0 = x0[i]
        xi1 = x1[i]
        xi2 = x2[i]
        ax = 0.0
        ay = 0.0
        az = 0.0
        pot = 0.0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            k = stack[sp]
            if first_child[k] < 0:
                for t in range(start[k], start[k] + count[k]):
                    p = order[t]
                    if p == i:
                        continue
                    dx = x0[p] - xi0
                    dy = x1[p] - xi1
                    dz = x2[p] - xi2
                    rinv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
                    pot -= w[p] * rinv
                    s = w[p] * rinv * rinv * rinv
                    ax += s * dx
                    ay += s * dy
                    az += s * dz
                continue
            dx = com[k, 0] - xi0
            dy = com[k, 1] - xi1
            dz = com[k, 2] - xi2
            d2 = dx * dx + dy * dy + dz * dz
            size = 2.0 * half[k]
            hk = half[k]
            inside = (abs(xi0 - center[k, 0]) <= hk and abs(xi1 - center[k, 1]) <= hk
                      and abs(xi2 - center[k, 2]) <= hk)
            if (not inside) and size * size < th2 * d2:
                rinv = 1.0 / np.sqrt(d2 + eps2)
                pot -= mass[k] * rinv
                s = mass[k] * rinv * rinv * rinv
                ax += s * dx
                ay += s * dy
                az += s * dz
            else:
                for q in range(first_child[k], first_child[k] + n_child[k]):
                    stack[sp] = q
                    sp += 1
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
        phi[i] = pot
    return acc, phi


def build_tree(x, w, leaf_size=8, max_depth=60):
    x0, x1, x2 = split_coords(x)
    return _build_tree(x0, x1, x2, np.ascontiguousarray(w, dtype=np.float64), leaf_size, max_depth)


def tree_forces(x, w, theta=0.5, softening=0.0, leaf_size=8):
    """Barnes-Hut monopole accelerations and potentials (self term excluded)."""
    x0, x1, x2 = split_coords(x)
    w = np.ascontiguousarray(w, dtype=np.float64)
    tree = _build_tree(x0, x1, x2, w, leaf_size, 60)
    return _tree_walk(x0, x1, x2, w, *tree, float(theta), float(softening) ** 2, True)


def direct_accelerations(x, w, softening=0.0):
    x0, x1, x2 = split_coords(x)
    w = np.ascontiguousarray(w, dtype=np.float64)
    eps2 = float(softening) ** 2
    return _direct_acc(x0, x1, x2, w, eps2)


def direct_pair_sum(x, w, softening=0.0):
    """Sum over pairs i<j of w_i w_j / sqrt(|x_i - x_j|^2 + eps^2)."""
    if len(w) < 2:
        return 0.0
    x0, x1, x2 = split_coords(x)
    rows = _direct_pair_rows(x0, x1, x2, np.ascontiguousarray(w, dtype=np.float64),
                             float(softening) ** 2)
    return float(np.sum(rows))


def direct_potentials(x, w, softening=0.0):
    x0, x1, x2 = split_coords(x)
    return _direct_phi(x0, x1, x2, np.ascontiguousarray(w, dtype=np.float64), float(softening) ** 2)


def cross_pair_sum(x, w, y, u, softening=0.0):
    """Sum over all i, j of w_i u_j / sqrt(|x_i - y_j|^2 + eps^2)."""
    x0, x1, x2 = split_coords(x)
    y0, y1, y2 = split_coords(y)
    rows = _cross_pair_rows(x0, x1, x2, np.ascontiguousarray(w, dtype=np.float64), y0, y1, y2,
                            np.ascontiguousarray(u, dtype=np.float64), float(softening) ** 2)
    return float(np.sum(rows))
