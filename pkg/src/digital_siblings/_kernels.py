"""Numeric inner loops.

Every function here is written in the numba-compatible subset so the same
source runs jitted or as plain Python. Kernels whose loop form is slow in
plain Python also ship a vectorised numpy twin (``*_numpy``); the public
name is bound to whichever suits the active backend.
"""

import math

import numpy as np

from ._jit import USING_NUMBA, njit

# sine of the turning angle below which a point triple counts as collinear
COLLINEAR_SIN = 1e-10

# packed simulator parameters
SIM_ENGINE = 0
SIM_DT = 1
SIM_WHEELBASE = 2
SIM_MAX_STEER = 3
SIM_THROTTLE_GAIN = 4
SIM_DRAG = 5
SIM_TIRE = 6
SIM_K_LOW = 7
SIM_K_HIGH = 8
SIM_SPEED_THRESHOLD = 9
SIM_BIAS = 10
SIM_DELAY = 11
SIM_NPARAMS = 12

ENGINE_KINEMATIC = 0
ENGINE_DYNAMIC = 1

# packed driving-model parameters
MDL_KP = 0
MDL_KD = 1
MDL_KI = 2
MDL_DELAY = 3
MDL_OFFSET = 4
MDL_MAX_SLEW = 5  # negative disables the slew clamp
MDL_USE_ORACLE = 6
MDL_NPARAMS = 7

# trace columns
T_TIME = 0
T_X = 1
T_Y = 2
T_HEADING = 3
T_SPEED = 4
T_YAW_RATE = 5
T_LP_TRUE = 6
T_LP_VISIBLE = 7
T_LD = 8
T_HEADING_ERROR = 9
T_CURVATURE_AHEAD = 10
T_STEERING = 11
T_THROTTLE = 12
T_PROGRESS = 13
N_TRACE_COLS = 14

OUTCOME_SUCCESS = 0
OUTCOME_OOB = 1
OUTCOME_TIMEOUT = 2

LOOKAHEAD_M = 5.0
_WINDOW_BACK = 3
_WINDOW_AHEAD = 16


@njit
def wrap_angle(a):
    return math.atan2(math.sin(a), math.cos(a))


@njit
def clip(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


# ---------------------------------------------------------------- geometry


@njit
def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit
def _within(ax, ay, bx, by, cx, cy):
    # c is known collinear with ab
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


@njit
def segments_intersect(ax, ay, bx, by, cx, cy, dx, dy):
    """Closed-segment intersection test (touching and collinear overlap count)."""
    d1 = _orient(cx, cy, dx, dy, ax, ay)
    d2 = _orient(cx, cy, dx, dy, bx, by)
    d3 = _orient(ax, ay, bx, by, cx, cy)
    d4 = _orient(ax, ay, bx, by, dx, dy)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _within(cx, cy, dx, dy, ax, ay):
        return True
    if d2 == 0 and _within(cx, cy, dx, dy, bx, by):
        return True
    if d3 == 0 and _within(ax, ay, bx, by, cx, cy):
        return True
    if d4 == 0 and _within(ax, ay, bx, by, dx, dy):
        return True
    return False


@njit
def first_self_intersection_loop(points):
    n = points.shape[0] - 1
    for i in range(n):
        ax = points[i, 0]
        ay = points[i, 1]
        bx = points[i + 1, 0]
        by = points[i + 1, 1]
        for j in range(i + 2, n):
            if segments_intersect(ax, ay, bx, by, points[j, 0], points[j, 1], points[j + 1, 0], points[j + 1, 1]):
                return i, j
    return -1, -1


def first_self_intersection_numpy(points):
    n = points.shape[0] - 1
    if n < 3:
        return -1, -1
    a = points[:-1, None, :]
    b = points[1:, None, :]
    c = points[None, :-1, :]
    d = points[None, 1:, :]

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    def within(p, q, r):
        return (
            (np.minimum(p[..., 0], q[..., 0]) <= r[..., 0])
            & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
            & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1])
            & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]))
        )

    d1 = orient(c, d, a)
    d2 = orient(c, d, b)
    d3 = orient(a, b, c)
    d4 = orient(a, b, d)
    proper = (((d1 > 0) & (d2 < 0)) | ((d1 < 0) & (d2 > 0))) & (((d3 > 0) & (d4 < 0)) | ((d3 < 0) & (d4 > 0)))
    hit = (
        proper
        | ((d1 == 0) & within(c, d, a))
        | ((d2 == 0) & within(c, d, b))
        | ((d3 == 0) & within(a, b, c))
        | ((d4 == 0) & within(a, b, d))
    )
    hit &= np.triu(np.ones((n, n), dtype=bool), k=2)
    idx = np.argwhere(hit)
    if idx.shape[0] == 0:
        return -1, -1
    return int(idx[0, 0]), int(idx[0, 1])


@njit
def circumradii_loop(points):
    m = points.shape[0] - 2
    out = np.empty(max(m, 0))
    for k in range(m):
        ux = points[k + 1, 0] - points[k, 0]
        uy = points[k + 1, 1] - points[k, 1]
        vx = points[k + 2, 0] - points[k + 1, 0]
        vy = points[k + 2, 1] - points[k + 1, 1]
        wx = points[k + 2, 0] - points[k, 0]
        wy = points[k + 2, 1] - points[k, 1]
        a = math.sqrt(ux * ux + uy * uy)
        b = math.sqrt(vx * vx + vy * vy)
        c = math.sqrt(wx * wx + wy * wy)
        cross = abs(ux * wy - uy * wx)
        if a == 0.0 or b == 0.0 or cross <= COLLINEAR_SIN * a * b:
            out[k] = np.inf
        else:
            out[k] = a * b * c / (2.0 * cross)
    return out


def circumradii_numpy(points):
    u = points[1:-1] - points[:-2]
    v = points[2:] - points[1:-1]
    w = points[2:] - points[:-2]
    a = np.sqrt(u[:, 0] * u[:, 0] + u[:, 1] * u[:, 1])
    b = np.sqrt(v[:, 0] * v[:, 0] + v[:, 1] * v[:, 1])
    c = np.sqrt(w[:, 0] * w[:, 0] + w[:, 1] * w[:, 1])
    cross = np.abs(u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0])
    flat = (a == 0.0) | (b == 0.0) | (cross <= COLLINEAR_SIN * a * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a * b * c / (2.0 * cross)
    r[flat] = np.inf
    return r


if USING_NUMBA:
    first_self_intersection = first_self_intersection_loop
    circumradii = circumradii_loop
else:
    first_self_intersection = first_self_intersection_numpy
    circumradii = circumradii_numpy


@njit
def project_window(points, cumlen, x, y, lo, hi):
    """Nearest point on segments ``lo..hi-1``.

    Returns (segment index, signed lateral position, arc-length progress).
    Lateral position is positive on the right-hand side of the travel direction.
    """
    nseg = points.shape[0] - 1
    if lo < 0:
        lo = 0
    if hi > nseg:
        hi = nseg
    best = -1
    best_d2 = np.inf
    best_t = 0.0
    best_cross = 0.0
    for i in range(lo, hi):
        ax = points[i, 0]
        ay = points[i, 1]
        dx = points[i + 1, 0] - ax
        dy = points[i + 1, 1] - ay
        px = x - ax
        py = y - ay
        ll = dx * dx + dy * dy
        t = (px * dx + py * dy) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        ex = px - t * dx
        ey = py - t * dy
        d2 = ex * ex + ey * ey
        if d2 < best_d2:
            best_d2 = d2
            best = i
            best_t = t
            best_cross = dx * py - dy * px
    dist = math.sqrt(best_d2)
    lp = dist if best_cross < 0.0 else -dist
    s = cumlen[best] + best_t * (cumlen[best + 1] - cumlen[best])
    return best, lp, s


@njit
def curvature_ahead(headings, cumlen, seg, lookahead):
    n = headings.shape[0]
    j = seg + 1
    target = cumlen[seg] + lookahead
    while j < n - 1 and cumlen[j] < target:
        j += 1
    if j >= n:
        j = n - 1
    ds = cumlen[j] - cumlen[seg]
    if ds <= 0.0:
        return 0.0
    return wrap_angle(headings[j] - headings[seg]) / ds


# ----------------------------------------------------------------- vehicle


@njit
def pid_raw(kp, kd, ki, lp, prev_lp, integral):
    """Unclipped PID output; ``integral`` already includes ``lp``."""
    return kp * lp + kd * (lp - prev_lp) + ki * integral


@njit
def throttle_value(steering, speed, k_low, k_high, speed_threshold):
    k = k_low if speed > speed_threshold else k_high
    ratio = speed / k
    return clip(1.0 - steering * steering - ratio * ratio, 0.0, 1.0)


@njit
def step_state(x, y, heading, speed, yaw_rate, steering, throttle, sim):
    dt = sim[SIM_DT]
    commanded = speed / sim[SIM_WHEELBASE] * math.tan(steering * sim[SIM_MAX_STEER])
    nx = x + speed * math.cos(heading) * dt
    ny = y + speed * math.sin(heading) * dt
    if sim[SIM_ENGINE] == ENGINE_DYNAMIC:
        nh = heading + yaw_rate * dt
        gain = sim[SIM_TIRE] * dt
        if gain > 1.0:
            gain = 1.0
        nr = yaw_rate + gain * (commanded - yaw_rate)
    else:
        nh = heading + commanded * dt
        nr = commanded
    nv = speed + (sim[SIM_THROTTLE_GAIN] * throttle - sim[SIM_DRAG] * speed) * dt
    if nv < 0.0:
        nv = 0.0
    return nx, ny, nh, nv, nr


@njit
def simulate_episode(points, cumlen, headings, half_width, sim, mdl, sensor_noise, model_noise, max_steps, goal_tol, trace, final):
    """Closed-loop lane-keeping episode.

    ``trace`` receives one row per executed step (state, observation and the
    command issued from it); ``final`` receives the terminal row. Returns
    (steps, outcome code, min lateral distance, max |lateral position|).
    """
    nseg = points.shape[0] - 1
    total = cumlen[nseg]
    delay = int(sim[SIM_DELAY]) + int(mdl[MDL_DELAY])
    bias = sim[SIM_BIAS]
    kp = mdl[MDL_KP]
    kd = mdl[MDL_KD]
    ki = mdl[MDL_KI]
    offset = mdl[MDL_OFFSET]
    slew = mdl[MDL_MAX_SLEW]
    use_oracle = mdl[MDL_USE_ORACLE] > 0.5
    dt = sim[SIM_DT]

    x = points[0, 0]
    y = points[0, 1]
    heading = headings[0]
    speed = 0.0
    yaw_rate = 0.0
    t = 0.0
    seg, lp, s = project_window(points, cumlen, x, y, 0, nseg)

    visible_raw = np.empty(max_steps + 1)
    prev_lp = 0.0
    integral = 0.0
    prev_steer = 0.0
    min_ld = half_width - abs(lp)
    max_lp = abs(lp)
    outcome = OUTCOME_TIMEOUT
    k = 0
    while True:
        visible_raw[k] = lp + bias + sensor_noise[k]
        idx = k - delay
        if idx < 0:
            idx = 0
        lp_visible = visible_raw[idx]
        lp_in = lp if use_oracle else lp_visible

        integral += lp_in
        raw = pid_raw(kp, kd, ki, lp_in, prev_lp, integral) + offset + model_noise[k]
        prev_lp = lp_in
        steer = clip(raw, -1.0, 1.0)
        if slew >= 0.0:
            steer = clip(steer, prev_steer - slew, prev_steer + slew)
        prev_steer = steer
        thr = throttle_value(steer, speed, sim[SIM_K_LOW], sim[SIM_K_HIGH], sim[SIM_SPEED_THRESHOLD])

        trace[k, T_TIME] = t
        trace[k, T_X] = x
        trace[k, T_Y] = y
        trace[k, T_HEADING] = heading
        trace[k, T_SPEED] = speed
        trace[k, T_YAW_RATE] = yaw_rate
        trace[k, T_LP_TRUE] = lp
        trace[k, T_LP_VISIBLE] = lp_visible
        trace[k, T_LD] = half_width - abs(lp)
        trace[k, T_HEADING_ERROR] = wrap_angle(heading - headings[seg])
        trace[k, T_CURVATURE_AHEAD] = curvature_ahead(headings, cumlen, seg, LOOKAHEAD_M)
        trace[k, T_STEERING] = steer
        trace[k, T_THROTTLE] = thr
        trace[k, T_PROGRESS] = s

        x, y, heading, speed, yaw_rate = step_state(x, y, heading, speed, yaw_rate, steer, thr, sim)
        t = t + dt
        k += 1
        seg, lp, s = project_window(points, cumlen, x, y, seg - _WINDOW_BACK, seg + _WINDOW_AHEAD)
        ld = half_width - abs(lp)
        if ld < min_ld:
            min_ld = ld
        if abs(lp) > max_lp:
            max_lp = abs(lp)
        if ld < 0.0:
            outcome = OUTCOME_OOB
            break
        if s >= total - goal_tol:
            outcome = OUTCOME_SUCCESS
            break
        if k >= max_steps:
            outcome = OUTCOME_TIMEOUT
            break

    final[T_TIME] = t
    final[T_X] = x
    final[T_Y] = y
    final[T_HEADING] = heading
    final[T_SPEED] = speed
    final[T_YAW_RATE] = yaw_rate
    final[T_LP_TRUE] = lp
    final[T_LP_VISIBLE] = np.nan
    final[T_LD] = half_width - abs(lp)
    final[T_HEADING_ERROR] = wrap_angle(heading - headings[seg])
    final[T_CURVATURE_AHEAD] = curvature_ahead(headings, cumlen, seg, LOOKAHEAD_M)
    final[T_STEERING] = np.nan
    final[T_THROTTLE] = np.nan
    final[T_PROGRESS] = s
    return k, outcome, min_ld, max_lp
