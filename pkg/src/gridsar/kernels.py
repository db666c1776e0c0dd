"""Compiled inner loops for fuzzy candidate-plan grading.

Plan grading runs inside the particle swarm's objective, thousands of
times per re-plan, so the decode + grade pipeline is JIT-compiled.  The
fuzzy grader only gathers precomputed per-cell degrees and weights; all
map updates happen outside the optimization loop.  (The stochastic
baseline deliberately has no compiled grader: its cost rolls the
probability and certainty maps through the regular update operations for
every candidate, which is the whole point of the runtime comparison.)

All kernels are deterministic and single-threaded.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# 8-connected step directions in ascending angle order (y grows downward);
# ties in the heading rasterizer break toward the lower angle index.
_DIRS = np.array(
    [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)],
    dtype=np.int64)
DIR_X = np.ascontiguousarray(_DIRS[:, 0])
DIR_Y = np.ascontiguousarray(_DIRS[:, 1])
DIR_INVNORM = 1.0 / np.hypot(DIR_X, DIR_Y)

_WARMED = False


def warmup() -> None:
    """Compile (or load from cache) all kernels on tiny inputs.

    Called once per process before any timed grading so JIT costs never
    leak into the per-candidate statistics.
    """
    global _WARMED
    if _WARMED:
        return
    X = np.zeros((1, 2), dtype=np.float64)
    off = np.zeros(1, dtype=np.int64)
    offa = np.ones(1, dtype=np.float64)
    grid = np.ones(4, dtype=np.float64)
    out = np.empty(1, dtype=np.float64)
    rim_ptr = np.zeros(10, dtype=np.int64)
    fuzzy_batch(X, 0, 0, 1, 1, 1, 2, 2, DIR_X, DIR_Y, DIR_INVNORM,
                off, off, offa, rim_ptr, off, off, offa,
                grid, grid, grid * 0.0, grid,
                np.ones(2), 2.0, 2.0, 1.0, 1.0, False, out)
    _WARMED = True


@njit(cache=True)
def decode_path(xrow, n_p, n_travel, n_path, start_x, start_y, width, height,
                dir_x, dir_y, dir_invnorm, path_x, path_y, path_k):
    """Decode one decision vector into a cell path; returns its length.

    Each of the ``n_p`` blocks is (segment_length, heading).  The segment
    length rounds half-up and clamps to [0, n_travel]; the heading ray is
    rasterized step by step onto the 8-connected grid by following the
    compass direction nearest to the residual displacement.  Steps pressing
    against the border are dropped; the path stops at ``n_path`` cells.
    """
    cx, cy = start_x, start_y
    plen = 0
    for j in range(n_p):
        seg = xrow[2 * j]
        if seg < 0.0:
            seg = 0.0
        if seg > n_travel:
            seg = float(n_travel)
        m = int(seg + 0.5)
        theta = xrow[2 * j + 1]
        ux = math.cos(theta)
        uy = math.sin(theta)
        sx = float(cx)
        sy = float(cy)
        for t in range(1, m + 1):
            rx = sx + t * ux - cx
            ry = sy + t * uy - cy
            if rx * rx + ry * ry < 1e-24:
                rx, ry = ux, uy
            best = 0
            best_s = -1e300
            for d in range(8):
                s = (rx * dir_x[d] + ry * dir_y[d]) * dir_invnorm[d]
                if s > best_s:
                    best_s = s
                    best = d
            nx = cx + dir_x[best]
            ny = cy + dir_y[best]
            if nx < 0:
                nx = 0
            elif nx >= width:
                nx = width - 1
            if ny < 0:
                ny = 0
            elif ny >= height:
                ny = height - 1
            if nx == cx and ny == cy:
                continue
            cx, cy = nx, ny
            path_x[plen] = cx
            path_y[plen] = cy
            path_k[plen] = j + 1
            plen += 1
            if plen >= n_path:
                return plen
    return plen


@njit(cache=True)
def grade_fuzzy_path(path_x, path_y, path_k, plen, width, height,
                     off_dx, off_dy, off_alpha,
                     rim_ptr, rim_dx, rim_dy, rim_alpha,
                     goal_grid, pass_grid, coop_grid, hlc_grid, gamma_pows,
                     w_goal, w_con, w_agg, inv_max_count, tnorm_min,
                     seen, members, kappas, alphas, gen):
    """Grade a decoded path against fuzzy map snapshots (empty path -> 0).

    Builds the observed set (first sighting per cell, in path order), turns
    (distance, step) into tuning weights, applies the cluster weight and the
    cooperative reduction, and fuses the weighted goal mean with the Yager
    constraint degree over the traversed cells.

    The first path cell stamps its full disc; each following cell stamps
    only the rim its step direction newly uncovers (consecutive cells are
    8-adjacent, so the rest of its disc was already covered at an earlier,
    hence first, sighting).  The ``seen`` generation array still guards
    against loops in the path.
    """
    if plen == 0:
        return 0.0
    nmem = 0
    for i in range(plen):
        px = path_x[i]
        py = path_y[i]
        kk = path_k[i]
        if i == 0:
            o_dx, o_dy, o_al = off_dx, off_dy, off_alpha
            lo, hi = 0, off_dx.shape[0]
        else:
            step = (path_y[i] - path_y[i - 1] + 1) * 3 \
                + (path_x[i] - path_x[i - 1] + 1)
            o_dx, o_dy, o_al = rim_dx, rim_dy, rim_alpha
            lo, hi = rim_ptr[step], rim_ptr[step + 1]
        for o in range(lo, hi):
            nx = px + o_dx[o]
            if nx < 0 or nx >= width:
                continue
            ny = py + o_dy[o]
            if ny < 0 or ny >= height:
                continue
            m = ny * width + nx
            if seen[m] != gen:
                seen[m] = gen
                members[nmem] = m
                kappas[nmem] = kk
                alphas[nmem] = o_al[o]
                nmem += 1
    S = 0.0
    for i in range(nmem):
        m = members[i]
        g = goal_grid[m]
        if g <= 0.0:
            continue
        a = alphas[i] * hlc_grid[m]
        if a <= 0.0:
            continue
        c = coop_grid[m]
        if g >= 1.0 and c <= 0.0:
            S += 1.0  # weight is positive and 1**e == 1: skip the pow
            continue
        w = 1.0 / (1.0 - math.log(a * gamma_pows[kappas[i]])) - c
        if w > 0.0:
            S += g ** (w_goal + 1.0 / w)
    goal = (S * inv_max_count) ** (1.0 / w_goal)
    acc = 0.0
    for i in range(plen):
        mu = pass_grid[path_y[i] * width + path_x[i]]
        acc += 1.0 - mu ** w_con
    con = 1.0 - acc ** (1.0 / w_con)
    if con < 0.0:
        con = 0.0
    conw = con ** w_agg
    if tnorm_min:
        return min(goal, conw)
    return goal * conw


@njit(cache=True)
def fuzzy_batch(X, start_x, start_y, n_p, n_travel, n_path, width, height,
                dir_x, dir_y, dir_invnorm,
                off_dx, off_dy, off_alpha,
                rim_ptr, rim_dx, rim_dy, rim_alpha,
                goal_grid, pass_grid, coop_grid, hlc_grid, gamma_pows,
                w_goal, w_con, w_agg, inv_max_count, tnorm_min, out):
    ncells = width * height
    seen = np.full(ncells, -1, dtype=np.int64)
    members = np.empty(ncells, dtype=np.int64)
    kappas = np.empty(ncells, dtype=np.int64)
    alphas = np.empty(ncells, dtype=np.float64)
    path_x = np.empty(n_path, dtype=np.int64)
    path_y = np.empty(n_path, dtype=np.int64)
    path_k = np.empty(n_path, dtype=np.int64)
    for p in range(X.shape[0]):
        plen = decode_path(X[p], n_p, n_travel, n_path, start_x, start_y,
                           width, height, dir_x, dir_y, dir_invnorm,
                           path_x, path_y, path_k)
        out[p] = grade_fuzzy_path(path_x, path_y, path_k, plen, width, height,
                                  off_dx, off_dy, off_alpha,
                                  rim_ptr, rim_dx, rim_dy, rim_alpha,
                                  goal_grid, pass_grid, coop_grid, hlc_grid,
                                  gamma_pows, w_goal, w_con, w_agg,
                                  inv_max_count, tnorm_min,
                                  seen, members, kappas, alphas, p)
