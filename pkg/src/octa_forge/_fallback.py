"""Pure numpy versions of the kernels in ``_kernels.pyx``.

Signatures and results match the compiled module. Rasterization and
thinning match bit for bit. Tail noise can differ in the last ulp, because
numpy and libm may round ``log``/``cos`` differently.
"""
import numpy as np

_INV_2_53 = 1.0 / 9007199254740992.0


def rasterize_capsules(a, b, radii, theta, ox, oy, oz, vs,
                       labels, meta_r, meta_t, meta_v, x_lo, x_hi):
    dims = labels.shape
    o = (ox, oy, oz)
    for e in range(len(a)):
        r = float(radii[e])
        rr = r * r
        lo, hi = [], []
        for axis in range(3):
            pmin = min(a[e, axis], b[e, axis])
            pmax = max(a[e, axis], b[e, axis])
            lo.append(max(int(np.floor((pmin - r - o[axis]) / vs - 0.5)) - 1, 0))
            hi.append(min(int(np.ceil((pmax + r - o[axis]) / vs - 0.5)) + 2, dims[axis]))
        lo[0] = max(lo[0], x_lo)
        hi[0] = min(hi[0], x_hi)
        if any(h <= l for l, h in zip(lo, hi)):
            continue
        ax, ay, az = a[e]
        dx, dy, dz = b[e, 0] - ax, b[e, 1] - ay, b[e, 2] - az
        dd = dx * dx + dy * dy + dz * dz
        cx = ox + (np.arange(lo[0], hi[0], dtype=np.float64) + 0.5) * vs
        cy = oy + (np.arange(lo[1], hi[1], dtype=np.float64) + 0.5) * vs
        cz = oz + (np.arange(lo[2], hi[2], dtype=np.float64) + 0.5) * vs
        cx, cy, cz = np.meshgrid(cx, cy, cz, indexing="ij")
        wx, wy, wz = cx - ax, cy - ay, cz - az
        if dd > 0:
            t = np.clip((wx * dx + wy * dy + wz * dz) / dd, 0.0, 1.0)
        else:
            t = np.zeros_like(wx)
        ex = cx - (ax + t * dx)
        ey = cy - (ay + t * dy)
        ez = cz - (az + t * dz)
        inside = (ex * ex + ey * ey + ez * ez) <= rr
        sl = (slice(lo[0], hi[0]), slice(lo[1], hi[1]), slice(lo[2], hi[2]))
        cur = meta_v[sl].astype(np.int64)
        rc = np.where(cur > 0, radii[np.maximum(cur - 1, 0)], -np.inf)
        wins = inside & ((cur == 0) | (r > rc) | ((r == rc) & (e < cur - 1)))
        labels[sl][wins] = 1
        meta_r[sl][wins] = np.float32(r)
        meta_t[sl][wins] = theta[e]
        meta_v[sl][wins] = e + 1


def _splitmix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def gauss_values(key, counters):
    key = np.uint64(key)
    c = np.asarray(counters, dtype=np.uint64) << np.uint64(1)
    with np.errstate(over="ignore"):
        u1 = (_splitmix(key ^ c) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        u2 = (_splitmix(key ^ (c | np.uint64(1))) >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(6.283185307179586 * u2)


def add_tails(ex, ey, ez, e_int, e_rad, out, alpha_len, alpha_int,
              mu, sigma, kappa, key, lo, hi):
    X, Y, Z = out.shape
    sel = slice(lo, hi)
    ex, ey, ez = ex[sel], ey[sel], ez[sel]
    e_int, e_rad = e_int[sel], e_rad[sel]
    length = np.rint(alpha_len * e_rad).astype(np.int64)
    length = np.maximum(length, 0)
    # terms past the bottom of the volume are dropped
    n_terms = np.minimum(length, Z - 1 - ez)
    n_terms = np.maximum(n_terms, 0)
    if n_terms.sum() == 0:
        return
    owner = np.repeat(np.arange(len(ex)), n_terms)
    starts = np.cumsum(n_terms) - n_terms
    i = np.arange(owner.size) - starts[owner]
    l = length[owner].astype(np.float64)
    vmax = e_int[owner]
    term = vmax * alpha_int * np.power(kappa, i / l)
    if sigma != 0:
        lin = (ez[owner] * Y * X + ey[owner] * X + ex[owner]).astype(np.uint64)
        counters = (lin << np.uint64(20)) | i.astype(np.uint64)
        term = term + (mu + sigma * gauss_values(key, counters))
    else:
        term = term + mu
    term = np.minimum(np.maximum(term, 0.0), vmax)
    np.add.at(out, (ex[owner], ey[owner], ez[owner] + 1 + i), term)


# --- thinning ---------------------------------------------------------------

_OFFSETS = [(k // 9 - 1, (k // 3) % 3 - 1, k % 3 - 1) for k in range(27)]


def _tables():
    adj26, adj6 = {}, {}
    for k in range(27):
        adj26[k], adj6[k] = [], []
        for m in range(27):
            if m == k or m == 13:
                continue
            d = [abs(p - q) for p, q in zip(_OFFSETS[k], _OFFSETS[m])]
            if max(d) == 1:
                adj26[k].append(m)
            if sum(d) == 1:
                adj6[k].append(m)
    manh = [sum(abs(c) for c in o) for o in _OFFSETS]
    face = [m == 1 for m in manh]
    n18 = [m in (1, 2) for m in manh]
    return adj26, adj6, face, n18


_ADJ26, _ADJ6, _FACE, _N18 = _tables()
_SIMPLE_CACHE = {}


def _decode(code):
    nb = [0] * 27
    for k in range(27):
        if k == 13:
            nb[k] = 1
        else:
            nb[k] = (code >> (k if k < 13 else k - 1)) & 1
    return nb


def _count(nb, starts, adj, allowed):
    seen = [False] * 27
    comps = 0
    for k in starts:
        if seen[k]:
            continue
        comps += 1
        seen[k] = True
        stack = [k]
        while stack:
            p = stack.pop()
            for q in adj[p]:
                if not seen[q] and allowed(q):
                    seen[q] = True
                    stack.append(q)
    return comps


def is_simple_code(code):
    code = int(code)
    hit = _SIMPLE_CACHE.get(code)
    if hit is not None:
        return hit
    nb = _decode(code)
    fg = [k for k in range(27) if k != 13 and nb[k]]
    ok = _count(nb, fg, _ADJ26, lambda q: nb[q]) == 1
    if ok:
        starts = [k for k in range(27) if _FACE[k] and not nb[k]]
        ok = _count(nb, starts, _ADJ6, lambda q: _N18[q] and not nb[q]) == 1
    _SIMPLE_CACHE[code] = ok
    return ok


def thin(img):
    X, Y, Z = img.shape
    flat = img.reshape(-1)
    offs = np.array([dx * Y * Z + dy * Z + dz for dx, dy, dz in _OFFSETS], dtype=np.intp)
    bit_offs = [(int(offs[k]), k if k < 13 else k - 1) for k in range(27) if k != 13]
    dir_offs = [-1, 1, -Z, Z, -Y * Z, Y * Z]
    fg = np.flatnonzero(flat)
    removed = 0

    def code_of(p):
        c = 0
        for o, bit in bit_offs:
            if flat[p + o]:
                c |= 1 << bit
        return c

    while True:
        changed = False
        for d in dir_offs:
            border = fg[flat[fg + d] == 0]
            if border.size == 0:
                continue
            codes = np.zeros(border.size, dtype=np.int64)
            for o, bit in bit_offs:
                codes |= flat[border + o].astype(np.int64) << bit
            popcount = np.zeros(border.size, dtype=np.int64)
            for o, _ in bit_offs:
                popcount += flat[border + o]
            uniq, inv = np.unique(codes, return_inverse=True)
            simple = np.array([is_simple_code(c) for c in uniq.tolist()], dtype=bool)[inv]
            cand = border[simple & (popcount != 1)]
            for p in cand.tolist():
                c = code_of(p)
                if c.bit_count() != 1 and is_simple_code(c):
                    flat[p] = 0
                    changed = True
                    removed += 1
            if cand.size:
                fg = fg[flat[fg] != 0]
        if not changed:
            break
    return removed
