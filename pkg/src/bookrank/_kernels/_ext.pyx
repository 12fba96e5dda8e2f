# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Each function mirrors its counterpart in ``_pure``."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libcpp.algorithm cimport sort
from libc.math cimport floor, fabs
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef double TWO_NEG53 = 1.0 / 9007199254740992.0


# ---------------------------------------------------------------------------
# split search
# ---------------------------------------------------------------------------
cdef struct VR:
    double v
    Py_ssize_t pos
    double r

cdef bint _less_vr(const VR &x, const VR &y) noexcept nogil:
    return x.v < y.v or (x.v == y.v and x.pos < y.pos)


def best_split(const double[:, ::1] X, const double[::1] residual, const cnp.int64_t[::1] rows, Py_ssize_t min_leaf, order=None):
    cdef Py_ssize_t n = rows.shape[0]
    if n < 2 * min_leaf:
        return None
    if order is not None:
        return _best_split_presorted(X, residual, rows, order, min_leaf)
    cdef Py_ssize_t F = X.shape[1]
    cdef double G = 0.0
    cdef Py_ssize_t i, f, k, n_p, n_miss, row
    for i in range(n):
        G += residual[rows[i]]
    cdef double N = <double> n
    cdef double g_miss, v
    cdef Split best
    best.gain = 0.0
    best.f = -1
    cdef VR *buf = <VR *> malloc(n * sizeof(VR))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for f in range(F):
                n_p = 0
                n_miss = 0
                g_miss = 0.0
                for i in range(n):
                    row = rows[i]
                    v = X[row, f]
                    if v != v:
                        n_miss += 1
                        g_miss += residual[row]
                    else:
                        buf[n_p].v = v
                        buf[n_p].pos = i
                        buf[n_p].r = residual[row]
                        n_p += 1
                if n_p < 2:
                    continue
                sort(buf, buf + n_p, _less_vr)
                _scan(buf, n_p, f, n_miss, g_miss, G, N, min_leaf, &best)
    finally:
        free(buf)
    if best.f < 0:
        return None
    return (best.gain, best.f, best.thr, bool(best.dl))


cdef struct Split:
    double gain
    Py_ssize_t f
    double thr
    int dl


cdef void _scan(VR *buf, Py_ssize_t n_p, Py_ssize_t f, Py_ssize_t n_miss, double g_miss,
                double G, double N, Py_ssize_t min_leaf, Split *best) noexcept nogil:
    """Evaluate every boundary between distinct sorted values of one feature."""
    cdef double cs = 0.0
    cdef double gl, gr, nl, nr, gain
    cdef double parent = G * G / N
    cdef Py_ssize_t k
    cdef int dl
    for k in range(n_p - 1):
        cs += buf[k].r
        if not (buf[k].v < buf[k + 1].v):
            continue
        for dl in range(1, -1, -1):
            if dl:
                gl = cs + g_miss
                nl = <double> (k + 1) + <double> n_miss
            else:
                gl = cs + 0.0
                nl = <double> (k + 1)
            gr = G - gl
            nr = N - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            gain = gl * gl / nl + gr * gr / nr - parent
            if gain > best.gain:
                best.gain = gain
                best.f = f
                best.thr = buf[k + 1].v
                best.dl = dl


cdef object _best_split_presorted(const double[:, ::1] X, const double[::1] residual,
                                  const cnp.int64_t[::1] rows, order, Py_ssize_t min_leaf):
    # ``order[f]`` lists all training rows sorted by (value, row), NaNs last;
    # filtering it by node membership reproduces the per-node sort exactly
    cdef const cnp.int64_t[:, ::1] srt = order
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t total = X.shape[0]
    cdef Py_ssize_t F = X.shape[1]
    cdef Py_ssize_t i, f, j, n_p, n_miss, row
    cdef double G = 0.0
    cdef double g_miss, v
    for i in range(n):
        G += residual[rows[i]]
    cdef double N = <double> n
    cdef Split best
    best.gain = 0.0
    best.f = -1
    cdef VR *buf = <VR *> malloc(n * sizeof(VR))
    cdef char *member = <char *> malloc(total)
    if buf == NULL or member == NULL:
        free(buf)
        free(member)
        raise MemoryError()
    try:
        with nogil:
            for i in range(total):
                member[i] = 0
            for i in range(n):
                member[rows[i]] = 1
            for f in range(F):
                n_miss = 0
                g_miss = 0.0
                for i in range(n):
                    row = rows[i]
                    if X[row, f] != X[row, f]:
                        n_miss += 1
                        g_miss += residual[row]
                n_p = 0
                for j in range(total):
                    row = srt[f, j]
                    if not member[row]:
                        continue
                    v = X[row, f]
                    if v != v:
                        break
                    buf[n_p].v = v
                    buf[n_p].pos = row
                    buf[n_p].r = residual[row]
                    n_p += 1
                if n_p < 2:
                    continue
                _scan(buf, n_p, f, n_miss, g_miss, G, N, min_leaf, &best)
    finally:
        free(buf)
        free(member)
    if best.f < 0:
        return None
    return (best.gain, best.f, best.thr, bool(best.dl))


# ---------------------------------------------------------------------------
# path-dependent TreeSHAP
# ---------------------------------------------------------------------------
cdef struct PE:
    Py_ssize_t d
    double z
    double o
    double w


cdef void _extend(PE *p, Py_ssize_t l, double pz, double po, Py_ssize_t pi) noexcept nogil:
    cdef Py_ssize_t i
    p[l].d = pi
    p[l].z = pz
    p[l].o = po
    p[l].w = 1.0 if l == 0 else 0.0
    i = l - 1
    while i >= 0:
        p[i + 1].w += po * p[i].w * (i + 1) / (l + 1)
        p[i].w = pz * p[i].w * (l - i) / (l + 1)
        i -= 1


cdef void _unwind(PE *p, Py_ssize_t l, Py_ssize_t i) noexcept nogil:
    cdef double one = p[i].o
    cdef double zero = p[i].z
    cdef double nxt = p[l].w
    cdef double tmp
    cdef Py_ssize_t j = l - 1
    while j >= 0:
        if one != 0.0:
            tmp = p[j].w
            p[j].w = nxt * (l + 1) / ((j + 1) * one)
            nxt = tmp - p[j].w * zero * (l - j) / (l + 1)
        else:
            p[j].w = (p[j].w * (l + 1)) / (zero * (l - j))
        j -= 1
    for j in range(i, l):
        p[j].d = p[j + 1].d
        p[j].z = p[j + 1].z
        p[j].o = p[j + 1].o


cdef double _unwound_sum(PE *p, Py_ssize_t l, Py_ssize_t i) noexcept nogil:
    cdef double one = p[i].o
    cdef double zero = p[i].z
    cdef double nxt = p[l].w
    cdef double total = 0.0
    cdef double tmp
    cdef Py_ssize_t j = l - 1
    while j >= 0:
        if one != 0.0:
            tmp = nxt * (l + 1) / ((j + 1) * one)
            total += tmp
            nxt = p[j].w - tmp * zero * ((<double> (l - j)) / (l + 1))
        elif zero != 0.0:
            total += (p[j].w / zero) / ((<double> (l - j)) / (l + 1))
        j -= 1
    return total


cdef void _recurse(
    Py_ssize_t node,
    const PE *src,
    PE *dst,
    Py_ssize_t l,
    double pz,
    double po,
    Py_ssize_t pi,
    const cnp.int64_t[::1] left,
    const cnp.int64_t[::1] right,
    const cnp.int64_t[::1] feature,
    const double[::1] threshold,
    const double[::1] value,
    const double[::1] cover,
    const cnp.int8_t[::1] default_left,
    const double[::1] x,
    double *local,
) noexcept nogil:
    # dst holds this node's path (l + 1 entries); children use dst + l + 1
    cdef Py_ssize_t i, k, hot, cold, lc
    cdef Py_ssize_t f
    cdef double iz, io, xv, s
    cdef bint go_left
    for i in range(l):
        dst[i] = src[i]
    _extend(dst, l, pz, po, pi)
    f = feature[node]
    if f < 0:
        for i in range(1, l + 1):
            s = _unwound_sum(dst, l, i)
            local[dst[i].d] += s * (dst[i].o - dst[i].z) * value[node]
        return
    xv = x[f]
    if xv != xv:
        go_left = default_left[node] != 0
    else:
        go_left = xv < threshold[node]
    if go_left:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    iz = 1.0
    io = 1.0
    k = 0
    while k <= l:
        if dst[k].d == f:
            break
        k += 1
    lc = l
    if k != l + 1:
        iz = dst[k].z
        io = dst[k].o
        _unwind(dst, l, k)
        lc = l - 1
    _recurse(hot, dst, dst + l + 1, lc + 1, cover[hot] / cover[node] * iz, io, f,
             left, right, feature, threshold, value, cover, default_left, x, local)
    _recurse(cold, dst, dst + l + 1, lc + 1, cover[cold] / cover[node] * iz, 0.0, f,
             left, right, feature, threshold, value, cover, default_left, x, local)


def tree_shap(trees, Py_ssize_t n_features, x, double scale):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    phi = np.zeros(n_features, dtype=np.float64)
    cdef double[::1] phiv = phi
    cdef double *local = <double *> malloc(n_features * sizeof(double))
    cdef PE *buf
    cdef Py_ssize_t j, depth, size
    cdef const cnp.int64_t[::1] left
    cdef const cnp.int64_t[::1] right
    cdef const cnp.int64_t[::1] feature
    cdef const double[::1] threshold
    cdef const double[::1] value
    cdef const double[::1] cover
    cdef const cnp.int8_t[::1] default_left
    if local == NULL:
        raise MemoryError()
    try:
        for t in trees:
            left, right, feature, threshold, value, cover, default_left = t
            depth = _depth(left, right)
            size = (depth + 2) * (depth + 3) // 2
            buf = <PE *> malloc(size * sizeof(PE))
            if buf == NULL:
                raise MemoryError()
            for j in range(n_features):
                local[j] = 0.0
            with nogil:
                _recurse(0, NULL, buf, 0, 1.0, 1.0, -1, left, right, feature, threshold,
                         value, cover, default_left, xv, local)
            free(buf)
            for j in range(n_features):
                phiv[j] += scale * local[j]
    finally:
        free(local)
    return phi


cdef Py_ssize_t _depth(const cnp.int64_t[::1] left, const cnp.int64_t[::1] right):
    cdef Py_ssize_t n = left.shape[0]
    cdef Py_ssize_t i, best = 0
    depth = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] dv = depth
    # children always follow their parent in node order
    for i in range(n):
        if left[i] >= 0:
            dv[left[i]] = dv[i] + 1
            dv[right[i]] = dv[i] + 1
        if dv[i] > best:
            best = dv[i]
    return best


# ---------------------------------------------------------------------------
# permutation test
# ---------------------------------------------------------------------------
cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


def splitmix_uniforms(unsigned long long seed, unsigned long long trial, Py_ssize_t count):
    cdef uint64_t state = _mix(<uint64_t> seed * GOLDEN + (<uint64_t> trial + 1) * GOLDEN)
    out = []
    for _ in range(count):
        state += GOLDEN
        out.append(<double> (_mix(state) >> 11) * TWO_NEG53)
    return out


def observed_statistic(values, offsets, n_a, lam):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t K = len(n_a)
    cdef double stat = 0.0, s, tot, ma, mb
    cdef Py_ssize_t k, i, lo, hi, na
    for k in range(K):
        lo = offsets[k]
        hi = offsets[k + 1]
        na = n_a[k]
        s = 0.0
        for i in range(lo, lo + na):
            s += v[i]
        tot = 0.0
        for i in range(lo, hi):
            tot += v[i]
        ma = s / na
        mb = (tot - s) / (hi - lo - na)
        stat += lam[k] * (ma - mb)
    return stat


def perm_count(values, offsets, n_a, lam, Py_ssize_t n_perm, unsigned long long seed, double tol):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const cnp.int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const cnp.int64_t[::1] na = np.ascontiguousarray(n_a, dtype=np.int64)
    cdef const double[::1] lm = np.ascontiguousarray(lam, dtype=np.float64)
    cdef Py_ssize_t K = na.shape[0]
    cdef double obs = fabs(observed_statistic(values, offsets, n_a, lam))
    tots_arr = np.zeros(K, dtype=np.float64)
    cdef double[::1] tots = tots_arr
    cdef Py_ssize_t k, i, j, t, lo, size, maxsize = 0, tmp
    for k in range(K):
        s = 0.0
        for i in range(off[k], off[k + 1]):
            s += v[i]
        tots[k] = s
        if off[k + 1] - off[k] > maxsize:
            maxsize = off[k + 1] - off[k]
    idx_arr = np.zeros(max(maxsize, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef uint64_t base = <uint64_t> seed * GOLDEN
    cdef uint64_t state
    cdef double u, sd, stat, ma, mb
    cdef Py_ssize_t count = 0
    with nogil:
        for t in range(n_perm):
            state = _mix(base + (<uint64_t> t + 1) * GOLDEN)
            stat = 0.0
            for k in range(K):
                lo = off[k]
                size = off[k + 1] - lo
                for i in range(size):
                    idx[i] = i
                sd = 0.0
                for i in range(na[k]):
                    state += GOLDEN
                    u = <double> (_mix(state) >> 11) * TWO_NEG53
                    j = i + <Py_ssize_t> floor(u * <double> (size - i))
                    tmp = idx[j]
                    idx[j] = idx[i]
                    idx[i] = tmp
                    sd += v[lo + tmp]
                ma = sd / na[k]
                mb = (tots[k] - sd) / (size - na[k])
                stat += lm[k] * (ma - mb)
            if fabs(stat) >= obs - tol:
                count += 1
    return count
