"""Compiled inner loops for the per-step hot paths."""

import numpy as np
from numba import njit


@njit(cache=True)
def wrap(x, a, b, out):
    """Map ``x`` periodically into ``[a, b)``; points already inside are copied unchanged."""
    length = b - a
    for i in range(x.shape[0]):
        y = x[i]
        if y < a or y >= b:
            y = a + (y - a) % length
            # the remainder can round up to exactly the period
            if y >= b:
                y = a
        out[i] = y


@njit(cache=True)
def apply_accidents(x, length, lo, size, red, out):
    """Multiply ``out`` by ``1 - red_j`` wherever ``x`` lies in accident ``j``'s wrapped interval."""
    for j in range(lo.shape[0]):
        keep = 1.0 - red[j]
        for i in range(x.shape[0]):
            d = x[i] - lo[j]
            # positions and accidents lie within a period of each other, so
            # shifting beats a float modulo
            if d < 0.0 or d >= length:
                d = d % length
            if d <= size[j]:
                out[i] *= keep


@njit(cache=True)
def headways(x, length, out):
    n = x.shape[0]
    for i in range(n - 1):
        out[i] = x[i + 1] - x[i]
    out[n - 1] = x[0] + length - x[n - 1]


@njit(cache=True)
def micro_measures(x, L, length, cap, h, rho, flux_mass, jump):
    """Headways, local densities, type-1 interval masses and type-2 atom weights.

    Returns ``(C_F, D_rho_plus, min_headway)``.
    """
    n = x.shape[0]
    headways(x, length, h)
    cf = 0.0
    hmin = np.inf
    for i in range(n):
        hi = h[i]
        if hi < hmin:
            hmin = hi
        r = L / hi
        rho[i] = r
        v = 1.0 - r
        if v < 0.0:
            v = 0.0
        m = cap[i] * r * v * hi
        flux_mass[i] = m
        cf += m
    dplus = 0.0
    for i in range(n):
        nxt = rho[i + 1] if i < n - 1 else rho[0]
        d = nxt - rho[i]
        if d < 0.0:
            d = 0.0
        jump[i] = d
        dplus += d
    return cf, dplus, hmin


@njit(cache=True)
def euler_positions(x, L, length, cap, dt, out):
    """One explicit Euler step of the follow-the-leader ODE."""
    n = x.shape[0]
    for i in range(n):
        hi = x[i + 1] - x[i] if i < n - 1 else x[0] + length - x[i]
        v = 1.0 - L / hi
        if v < 0.0:
            v = 0.0
        out[i] = x[i] + dt * cap[i] * v


@njit(cache=True)
def road_step(x, edges, values, out):
    """Piecewise constant road capacity on ``[edges[k], edges[k+1])``; ``x`` inside the road."""
    last = values.shape[0] - 1
    for i in range(x.shape[0]):
        k = np.searchsorted(edges, x[i], side="right") - 1
        if k < 0:
            k = 0
        elif k > last:
            k = last
        out[i] = values[k]


@njit(cache=True)
def sorted_road_capacity(x, smoothed, xp, fp, edges, values, out):
    """Road capacity at sorted positions inside the road.

    Linear interpolation of ``(xp, fp)`` when ``smoothed``, otherwise the step
    function with value ``values[k]`` on ``[edges[k], edges[k+1])``. Each
    piece is located by binary search and filled as a block.
    """
    n = x.shape[0]
    if smoothed:
        m = xp.shape[0]
        for k in range(m - 1):
            i0 = np.searchsorted(x, xp[k]) if k > 0 else 0
            i1 = np.searchsorted(x, xp[k + 1]) if k < m - 2 else n
            if fp[k] == fp[k + 1]:
                out[i0:i1] = fp[k]
            else:
                slope = (fp[k + 1] - fp[k]) / (xp[k + 1] - xp[k])
                for i in range(i0, i1):
                    out[i] = fp[k] + slope * (x[i] - xp[k])
    else:
        m = values.shape[0]
        for k in range(m):
            i0 = np.searchsorted(x, edges[k]) if k > 0 else 0
            i1 = np.searchsorted(x, edges[k + 1]) if k < m - 1 else n
            out[i0:i1] = values[k]


@njit(cache=True)
def sorted_accidents(x, a, b, lo, size, red, out):
    """``apply_accidents`` for sorted positions in ``[a, b)``, by blocks."""
    length = b - a
    for j in range(lo.shape[0]):
        keep = 1.0 - red[j]
        start = lo[j]
        if start < a or start >= b:
            start = a + (start - a) % length
        end = start + size[j]
        i0 = np.searchsorted(x, start)
        i1 = np.searchsorted(x, end, side="right")
        out[i0:i1] *= keep
        if end >= b:
            out[: np.searchsorted(x, end - length, side="right")] *= keep


@njit(cache=True)
def micro_advance(x, ids, L, a, b, smoothed, xp, fp, edges, values, lo, size, red, dt, nsub):
    """``nsub`` Euler substeps of length ``dt`` in place.

    The road capacity interpolates ``(xp, fp)`` when ``smoothed`` and is the
    step function ``(edges, values)`` otherwise.

    Vehicles crossing ``b`` re-enter at the front; ``x`` and ``ids`` are rotated
    so that positions stay sorted in ``[a, b)``.
    """
    n = x.shape[0]
    length = b - a
    cap = np.empty(n)
    xn = np.empty(n)
    idn = np.empty_like(ids)
    for _ in range(nsub):
        sorted_road_capacity(x, smoothed, xp, fp, edges, values, cap)
        sorted_accidents(x, a, b, lo, size, red, cap)
        euler_positions(x, L, length, cap, dt, xn)
        k = 0
        while k < n and xn[n - 1 - k] >= b:
            k += 1
        if k == 0:
            x[:] = xn
            continue
        for i in range(k):
            x[i] = xn[n - k + i] - length
            idn[i] = ids[n - k + i]
        for i in range(n - k):
            x[k + i] = xn[i]
            idn[k + i] = ids[i]
        ids[:] = idn


@njit(cache=True)
def lxf_update(rho, cap, lam, out):
    k = rho.shape[0]
    for i in range(k):
        ip = i + 1 if i < k - 1 else 0
        im = i - 1 if i > 0 else k - 1
        fp = cap[ip] * rho[ip] * (1.0 - rho[ip])
        fm = cap[im] * rho[im] * (1.0 - rho[im])
        out[i] = 0.5 * (rho[ip] + rho[im]) - 0.5 * lam * (fp - fm)


@njit(cache=True)
def godunov_fluxes(rho, cap, rho_crit, out):
    """Interface fluxes; ``out[i]`` is the flux through the right edge of cell ``i``."""
    k = rho.shape[0]
    for i in range(k):
        ip = i + 1 if i < k - 1 else 0
        r_right = rho[ip] if rho[ip] > rho_crit else rho_crit
        r_left = rho[i] if rho[i] < rho_crit else rho_crit
        supply = cap[ip] * r_right * (1.0 - r_right)
        demand = cap[i] * r_left * (1.0 - r_left)
        out[i] = supply if supply < demand else demand


@njit(cache=True)
def godunov_update(rho, cap, lam, rho_crit, fluxes, out):
    godunov_fluxes(rho, cap, rho_crit, fluxes)
    k = rho.shape[0]
    for i in range(k):
        im = i - 1 if i > 0 else k - 1
        out[i] = rho[i] - lam * (fluxes[i] - fluxes[im])


@njit(cache=True)
def macro_measures(rho, cap, dx, flux_mass, jump):
    """Cell masses of the type-1 measure and interface jumps of the type-2 measure.

    ``jump[i]`` is the positive increase across the left interface of cell ``i``.
    Returns ``(C_F, D_rho_plus)``.
    """
    k = rho.shape[0]
    cf = 0.0
    dplus = 0.0
    for i in range(k):
        m = cap[i] * rho[i] * (1.0 - rho[i]) * dx
        flux_mass[i] = m
        cf += m
        prev = rho[i - 1] if i > 0 else rho[k - 1]
        d = rho[i] - prev
        if d < 0.0:
            d = 0.0
        jump[i] = d
        dplus += d
    return cf, dplus
