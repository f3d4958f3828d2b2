"""Compiled inner loops: tridiagonal solves and the thinning simulation.

The hybrid loop is resumable. All scalar state lives in two small arrays
(``fstate``, ``istate``) so that the Python driver can refill the uniform
buffer or grow output buffers and call back in without changing the
random-number consumption order.
"""

import math

import numpy as np
from numba import njit

# fstate slots
F_T, F_TCAND, F_UACC, F_USEL, F_SUPERR = range(5)
# istate slots
I_K, I_UPOS, I_NSNAP, I_NJUMP, I_HASCAND, I_STATUS, I_REFPTR, I_NCAND = range(8)

DONE, NEED_UNIFORMS, SNAP_FULL, JUMP_FULL, MAJORANT = range(5)

UNIFORMS_PER_CANDIDATE = 3


@njit(cache=True)
def solve_const(diag, off, rhs, cp, out):
    """Thomas algorithm for a constant-coefficient symmetric tridiagonal system.

    The forward-sweep ratios converge geometrically; once one repeats
    bitwise, every later row reuses it, which is exact.
    """
    n = rhs.size
    inv_m = 1.0 / diag
    cp[0] = off * inv_m
    out[0] = rhs[0] * inv_m
    settled = False
    for j in range(1, n):
        if settled:
            cp[j] = cp[j - 1]
        else:
            inv_m = 1.0 / (diag - off * cp[j - 1])
            cp[j] = off * inv_m
            settled = cp[j] == cp[j - 1]
        out[j] = (rhs[j] - off * out[j - 1]) * inv_m
    for j in range(n - 2, -1, -1):
        out[j] -= cp[j] * out[j + 1]


@njit(cache=True)
def imex_into(x, drift, dt, l_diag, l_off, cp, rhs, out):
    """One backward-Euler diffusion step with explicit drift: (I - dt L) out = x + dt drift."""
    for j in range(x.size):
        rhs[j] = x[j] + dt * drift[j]
    solve_const(1.0 - dt * l_diag, -dt * l_off, rhs, cp, out)


@njit(cache=True)
def site_potentials(x, starts, stops, offsets, flat, h, zeta):
    for i in range(starts.size):
        s = 0.0
        base = offsets[i] - starts[i]
        for j in range(starts[i], stops[i]):
            s += flat[base + j] * x[j]
        zeta[i] = h * s


@njit(cache=True)
def reaction_into(y, zeta, c, v, inv_n, starts, stops, offsets, flat, drift):
    drift[:] = 0.0
    for i in range(starts.size):
        e = y[i]
        w = c[e] * (v[e] - zeta[i]) * inv_n
        base = offsets[i] - starts[i]
        for j in range(starts[i], stops[i]):
            drift[j] += w * flat[base + j]


@njit(cache=True)
def rate(e1, e2, zeta, lo, hi, k, z0, active):
    if not active[e1, e2]:
        return 0.0
    arg = -k[e1, e2] * (zeta - z0[e1, e2])
    if arg > 700.0:
        s = 0.0
    else:
        s = 1.0 / (1.0 + math.exp(arg))
    return lo[e1, e2] + (hi[e1, e2] - lo[e1, e2]) * s


@njit(cache=True)
def _sq_err(x, t, ref_t, ref_x, ptr, h):
    n = ref_t.size
    p = ptr
    while p + 1 < n - 1 and ref_t[p + 1] <= t:
        p += 1
    if n == 1:
        w = 0.0
    else:
        span = ref_t[p + 1] - ref_t[p]
        w = (t - ref_t[p]) / span if span > 0.0 else 0.0
        if w < 0.0:
            w = 0.0
        elif w > 1.0:
            w = 1.0
    s = 0.0
    for j in range(x.size):
        if n == 1:
            r = ref_x[0, j]
        else:
            r = (1.0 - w) * ref_x[p, j] + w * ref_x[p + 1, j]
        d = x[j] - r
        s += d * d
    return h * s, p


@njit(cache=True)
def hybrid_run(x, y, fstate, istate, T, dt, K, h, inv_n,
               starts, stops, offsets, flat, c, v, lo, hi, k, z0, active,
               lam, inv_eps, uni, record_snaps, record_jumps,
               snap_t, snap_x, snap_y, snap_kind, jump_t, jump_site, jump_from, jump_to,
               use_ref, ref_t, ref_x):
    """Advance the PDMP until T, or until a buffer needs attention.

    Candidates come from a rate-``lam`` Poisson stream; each consumes three
    uniforms in order (waiting time, acceptance, target selection). Between
    events the PDE takes backward-Euler steps that land exactly on each
    lattice time and each candidate time.
    """
    M = x.size
    n_sites = y.size
    n_states = c.size
    l_off = 1.0 / (h * h)
    l_diag = -2.0 * l_off
    zeta = np.empty(n_sites)
    site_tot = np.empty(n_sites)
    drift = np.empty(M)
    rhs = np.empty(M)
    cp = np.empty(M)
    xn = np.empty(M)

    t = fstate[F_T]
    while True:
        if istate[I_K] >= K:
            istate[I_STATUS] = DONE
            break
        if record_snaps and istate[I_NSNAP] >= snap_t.size:
            istate[I_STATUS] = SNAP_FULL
            break
        if record_jumps and istate[I_NJUMP] >= jump_t.size:
            istate[I_STATUS] = JUMP_FULL
            break
        if istate[I_HASCAND] == 0:
            if lam > 0.0:
                p = istate[I_UPOS]
                if p + UNIFORMS_PER_CANDIDATE > uni.size:
                    istate[I_STATUS] = NEED_UNIFORMS
                    break
                fstate[F_TCAND] = fstate[F_TCAND] - math.log1p(-uni[p]) / lam
                fstate[F_UACC] = uni[p + 1]
                fstate[F_USEL] = uni[p + 2]
                istate[I_UPOS] = p + UNIFORMS_PER_CANDIDATE
            else:
                fstate[F_TCAND] = np.inf
            istate[I_HASCAND] = 1

        kk = istate[I_K]
        t_lat = T if kk + 1 >= K else (kk + 1) * dt
        t_cand = fstate[F_TCAND]
        is_cand = t_cand < t_lat
        target = t_cand if is_cand else t_lat

        step = target - t
        if step > 0.0:
            site_potentials(x, starts, stops, offsets, flat, h, zeta)
            reaction_into(y, zeta, c, v, inv_n, starts, stops, offsets, flat, drift)
            imex_into(x, drift, step, l_diag, l_off, cp, rhs, xn)
            x[:] = xn
        t = target
        fstate[F_T] = t

        jumped = False
        if is_cand:
            istate[I_HASCAND] = 0
            istate[I_NCAND] += 1
            site_potentials(x, starts, stops, offsets, flat, h, zeta)
            total = 0.0
            for i in range(n_sites):
                s = 0.0
                e1 = y[i]
                for e2 in range(n_states):
                    if e2 != e1:
                        s += rate(e1, e2, zeta[i], lo, hi, k, z0, active)
                site_tot[i] = s
                total += s
            if total * inv_eps > lam * (1.0 + 1e-12):
                istate[I_STATUS] = MAJORANT
                break
            if fstate[F_UACC] * lam < total * inv_eps:
                u = fstate[F_USEL] * total
                site = -1
                acc = 0.0
                last_acc = 0.0
                for i in range(n_sites):
                    if site_tot[i] > 0.0:
                        if u < acc + site_tot[i]:
                            site = i
                            break
                        last_acc = acc
                        site = -2 - i
                    acc += site_tot[i]
                if site < 0:
                    # u landed on the rounding slack past the last positive site
                    site = -2 - site
                    acc = last_acc
                e1 = y[site]
                dest = -1
                last = -1
                for e2 in range(n_states):
                    if e2 == e1:
                        continue
                    r = rate(e1, e2, zeta[site], lo, hi, k, z0, active)
                    if r > 0.0:
                        last = e2
                        if dest < 0 and u < acc + r:
                            dest = e2
                        acc += r
                if dest < 0:
                    dest = last
                y[site] = dest
                jumped = True
                if record_jumps:
                    n = istate[I_NJUMP]
                    jump_t[n] = t
                    jump_site[n] = site
                    jump_from[n] = e1
                    jump_to[n] = dest
                    istate[I_NJUMP] = n + 1
        else:
            istate[I_K] = kk + 1

        if jumped or not is_cand:
            if record_snaps:
                n = istate[I_NSNAP]
                snap_t[n] = t
                snap_x[n, :] = x
                snap_y[n, :] = y
                snap_kind[n] = 1 if jumped else 0
                istate[I_NSNAP] = n + 1
            if use_ref:
                err, p = _sq_err(x, t, ref_t, ref_x, istate[I_REFPTR], h)
                istate[I_REFPTR] = p
                if err > fstate[F_SUPERR]:
                    fstate[F_SUPERR] = err
