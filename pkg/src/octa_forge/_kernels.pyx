# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. ``_fallback.py`` mirrors every function here.

All volumes are C-contiguous with shape (X, Y, Z); z is the fastest axis so
one (x, y) column is contiguous.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, pow, rint, floor, ceil
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int64_t

cnp.import_array()

cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


# --- capsule rasterization -------------------------------------------------

def rasterize_capsules(const double[:, ::1] a, const double[:, ::1] b,
                       const double[::1] radii, const float[::1] theta,
                       double ox, double oy, double oz, double vs,
                       uint8_t[:, :, ::1] labels, float[:, :, ::1] meta_r,
                       float[:, :, ::1] meta_t, uint32_t[:, :, ::1] meta_v,
                       Py_ssize_t x_lo, Py_ssize_t x_hi):
    """Label every voxel whose center lies within ``radii[e]`` of segment e.

    Only voxels with ``x_lo <= x < x_hi`` are touched so disjoint slabs can
    be processed concurrently. Overlaps go to the larger radius, then to
    the lower edge index.
    """
    cdef Py_ssize_t n_edges = a.shape[0]
    cdef Py_ssize_t X = labels.shape[0], Y = labels.shape[1], Z = labels.shape[2]
    cdef Py_ssize_t e, i, j, k, cur
    cdef Py_ssize_t lo[3]
    cdef Py_ssize_t hi[3]
    cdef double r, rr, ax, ay, az, dx, dy, dz, dd, cx, cy, cz
    cdef double wx, wy, wz, t, qx, qy, qz, ex, ey, ez, dist2, rc
    cdef double o[3]
    cdef Py_ssize_t dims[3]
    cdef int axis
    cdef double pmin, pmax
    o[0] = ox; o[1] = oy; o[2] = oz
    dims[0] = X; dims[1] = Y; dims[2] = Z
    with nogil:
        for e in range(n_edges):
            r = radii[e]
            rr = r * r
            for axis in range(3):
                pmin = a[e, axis] if a[e, axis] < b[e, axis] else b[e, axis]
                pmax = a[e, axis] if a[e, axis] > b[e, axis] else b[e, axis]
                lo[axis] = <Py_ssize_t>floor((pmin - r - o[axis]) / vs - 0.5) - 1
                hi[axis] = <Py_ssize_t>ceil((pmax + r - o[axis]) / vs - 0.5) + 2
                if lo[axis] < 0:
                    lo[axis] = 0
                if hi[axis] > dims[axis]:
                    hi[axis] = dims[axis]
            if lo[0] < x_lo:
                lo[0] = x_lo
            if hi[0] > x_hi:
                hi[0] = x_hi
            ax = a[e, 0]; ay = a[e, 1]; az = a[e, 2]
            dx = b[e, 0] - ax; dy = b[e, 1] - ay; dz = b[e, 2] - az
            dd = dx * dx + dy * dy + dz * dz
            for i in range(lo[0], hi[0]):
                cx = ox + (i + 0.5) * vs
                for j in range(lo[1], hi[1]):
                    cy = oy + (j + 0.5) * vs
                    for k in range(lo[2], hi[2]):
                        cz = oz + (k + 0.5) * vs
                        wx = cx - ax; wy = cy - ay; wz = cz - az
                        if dd > 0:
                            t = (wx * dx + wy * dy + wz * dz) / dd
                            if t < 0:
                                t = 0
                            elif t > 1:
                                t = 1
                        else:
                            t = 0
                        qx = ax + t * dx; qy = ay + t * dy; qz = az + t * dz
                        ex = cx - qx; ey = cy - qy; ez = cz - qz
                        dist2 = ex * ex + ey * ey + ez * ez
                        if dist2 > rr:
                            continue
                        cur = meta_v[i, j, k]
                        if cur != 0:
                            rc = radii[cur - 1]
                            if r < rc or (r == rc and e >= cur - 1):
                                continue
                        labels[i, j, k] = 1
                        meta_r[i, j, k] = <float>r
                        meta_t[i, j, k] = theta[e]
                        meta_v[i, j, k] = <uint32_t>(e + 1)


# --- counter-based gaussian noise ------------------------------------------

cdef inline uint64_t _splitmix(uint64_t z) noexcept nogil:
    z = z + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _gauss(uint64_t key, uint64_t counter) noexcept nogil:
    cdef double u1 = <double>(_splitmix(key ^ (counter << 1)) >> 11) * INV_2_53
    cdef double u2 = <double>(_splitmix(key ^ ((counter << 1) | 1)) >> 11) * INV_2_53
    return sqrt(-2.0 * log(1.0 - u1)) * cos(TWO_PI * u2)


def gauss_values(uint64_t key, const uint64_t[::1] counters):
    """Standard normal draws for the given stream counters (test hook)."""
    cdef Py_ssize_t n = counters.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _gauss(key, counters[i])
    return out


# --- tail artifacts ---------------------------------------------------------

def add_tails(const int64_t[::1] ex, const int64_t[::1] ey, const int64_t[::1] ez,
              const double[::1] e_int, const double[::1] e_rad,
              double[:, :, ::1] out, double alpha_len, double alpha_int,
              double mu, double sigma, double kappa, uint64_t key,
              Py_ssize_t lo, Py_ssize_t hi):
    """Add a decaying tail below each emitter ``lo <= n < hi``.

    Emitters must be sorted by (x, y, z). Tail term i of an emitter at
    linear index L draws its noise from stream counter ``(L << 20) | i``.
    """
    cdef Py_ssize_t X = out.shape[0], Y = out.shape[1], Z = out.shape[2]
    cdef Py_ssize_t n, i, l, zz
    cdef double start, term, vmax, noise
    cdef uint64_t lin
    with nogil:
        for n in range(lo, hi):
            l = <Py_ssize_t>rint(alpha_len * e_rad[n])
            if l <= 0:
                continue
            vmax = e_int[n]
            start = vmax * alpha_int
            lin = <uint64_t>(ez[n] * Y * X + ey[n] * X + ex[n])
            for i in range(l):
                zz = ez[n] + 1 + i
                if zz >= Z:
                    break
                term = start * pow(kappa, <double>i / <double>l)
                if sigma != 0:
                    noise = mu + sigma * _gauss(key, (lin << 20) | <uint64_t>i)
                else:
                    noise = mu
                term = term + noise
                if term < 0:
                    term = 0
                elif term > vmax:
                    term = vmax
                out[ex[n], ey[n], zz] += term


# --- topology-preserving thinning --------------------------------------------

cdef int N_OFF[27][3]
cdef int ADJ26[27][26]
cdef int ADJ26_N[27]
cdef int ADJ6[27][6]
cdef int ADJ6_N[27]
cdef int IS_FACE[27]
cdef int IN_N18[27]


cdef void _init_tables():
    cdef int k, m, dx, dy, dz, cheb, manh, n
    for k in range(27):
        N_OFF[k][0] = k // 9 - 1
        N_OFF[k][1] = (k // 3) % 3 - 1
        N_OFF[k][2] = k % 3 - 1
    for k in range(27):
        manh = abs(N_OFF[k][0]) + abs(N_OFF[k][1]) + abs(N_OFF[k][2])
        IS_FACE[k] = 1 if manh == 1 else 0
        IN_N18[k] = 1 if (manh == 1 or manh == 2) else 0
        ADJ26_N[k] = 0
        ADJ6_N[k] = 0
        for m in range(27):
            if m == k or m == 13:
                continue
            dx = abs(N_OFF[k][0] - N_OFF[m][0])
            dy = abs(N_OFF[k][1] - N_OFF[m][1])
            dz = abs(N_OFF[k][2] - N_OFF[m][2])
            cheb = max(dx, max(dy, dz))
            if cheb == 1:
                ADJ26[k][ADJ26_N[k]] = m
                ADJ26_N[k] += 1
            if dx + dy + dz == 1:
                ADJ6[k][ADJ6_N[k]] = m
                ADJ6_N[k] += 1


_init_tables()


cdef int _is_simple(const uint8_t* nb) noexcept nogil:
    """26/6 simple-point test on a 27-voxel neighborhood (center at 13)."""
    cdef int seen[27]
    cdef int stack[27]
    cdef int top, k, m, p, q, comps
    for k in range(27):
        seen[k] = 0
    comps = 0
    for k in range(27):
        if k == 13 or not nb[k] or seen[k]:
            continue
        comps += 1
        if comps > 1:
            return 0
        seen[k] = 1
        top = 0
        stack[top] = k
        top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            for m in range(ADJ26_N[p]):
                q = ADJ26[p][m]
                if nb[q] and not seen[q]:
                    seen[q] = 1
                    stack[top] = q
                    top += 1
    if comps != 1:
        return 0
    for k in range(27):
        seen[k] = 0
    comps = 0
    for k in range(27):
        if not IS_FACE[k] or nb[k] or seen[k]:
            continue
        comps += 1
        if comps > 1:
            return 0
        seen[k] = 1
        top = 0
        stack[top] = k
        top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            for m in range(ADJ6_N[p]):
                q = ADJ6[p][m]
                if IN_N18[q] and not nb[q] and not seen[q]:
                    seen[q] = 1
                    stack[top] = q
                    top += 1
    return 1 if comps == 1 else 0


def is_simple_code(uint32_t code):
    """Simple-point test for a 26-bit neighborhood code (test hook)."""
    cdef uint8_t nb[27]
    cdef int k, bit
    for k in range(27):
        if k == 13:
            nb[k] = 1
            continue
        bit = k if k < 13 else k - 1
        nb[k] = (code >> bit) & 1
    return bool(_is_simple(nb))


def thin(uint8_t[:, :, ::1] img):
    """Thin a zero-padded binary volume in place; returns voxels removed.

    Sub-iterations peel border voxels facing -z, +z, -y, +y, -x, +x in
    turn. Candidates are gathered in lexicographic order and re-checked
    one by one before deletion, so connectivity is never broken. Voxels
    with exactly one 26-neighbor (curve ends) are kept.
    """
    cdef Py_ssize_t X = img.shape[0], Y = img.shape[1], Z = img.shape[2]
    cdef uint8_t* data = &img[0, 0, 0]
    cdef Py_ssize_t off[27]
    cdef Py_ssize_t k, n, p, n_fg, n_cand, w
    cdef Py_ssize_t dir_off[6]
    cdef int d, cnt, changed, removed = 0
    cdef uint8_t nb[27]
    for k in range(27):
        off[k] = N_OFF[k][0] * Y * Z + N_OFF[k][1] * Z + N_OFF[k][2]
    dir_off[0] = -1
    dir_off[1] = 1
    dir_off[2] = -Z
    dir_off[3] = Z
    dir_off[4] = -Y * Z
    dir_off[5] = Y * Z

    fg_arr = np.flatnonzero(np.asarray(img).reshape(-1)).astype(np.intp)
    cand_arr = np.empty_like(fg_arr)
    cdef Py_ssize_t[::1] fg = fg_arr
    cdef Py_ssize_t[::1] cand = cand_arr
    n_fg = fg.shape[0]

    with nogil:
        while True:
            changed = 0
            for d in range(6):
                n_cand = 0
                for n in range(n_fg):
                    p = fg[n]
                    if data[p + dir_off[d]]:
                        continue
                    cnt = 0
                    for k in range(27):
                        nb[k] = data[p + off[k]]
                        cnt += nb[k]
                    if cnt == 2:
                        continue
                    if _is_simple(nb):
                        cand[n_cand] = p
                        n_cand += 1
                for n in range(n_cand):
                    p = cand[n]
                    cnt = 0
                    for k in range(27):
                        nb[k] = data[p + off[k]]
                        cnt += nb[k]
                    if cnt == 2:
                        continue
                    if _is_simple(nb):
                        data[p] = 0
                        changed = 1
                        removed += 1
                if n_cand:
                    w = 0
                    for n in range(n_fg):
                        if data[fg[n]]:
                            fg[w] = fg[n]
                            w += 1
                    n_fg = w
            if not changed:
                break
    return removed
