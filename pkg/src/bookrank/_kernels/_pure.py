"""Pure-Python/numpy kernels.

These are the reference implementations. The compiled extension mirrors
them operation for operation (sequential sums, identical tie-breaks and
arithmetic order) so both backends return bit-identical results.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
TWO_NEG53 = 1.0 / 9007199254740992.0


# --------------------------------------------------------------------------
# split search
# --------------------------------------------------------------------------
def best_split(X, residual, rows, min_leaf, order=None):
    """Exact greedy squared-error split over the rows of one node.

    Returns ``(gain, feature, threshold, default_left)`` or ``None`` when no
    split with positive gain leaves ``min_leaf`` rows on both sides. Rows go
    left iff ``x < threshold``; NaNs follow the default side. ``rows`` must
    be ascending. ``order`` is a presorting hint used only by the compiled
    backend.
    """
    n = rows.shape[0]
    if n < 2 * min_leaf:
        return None
    r_node = residual[rows]
    G = float(np.cumsum(r_node)[-1])
    N = float(n)
    parent = G * G / N
    best_gain = 0.0
    best = None
    for f in range(X.shape[1]):
        v = X[rows, f]
        miss = np.isnan(v)
        n_miss = int(miss.sum())
        if n_miss:
            g_miss = float(np.cumsum(r_node[miss])[-1])
            vp = v[~miss]
            rp = r_node[~miss]
        else:
            g_miss = 0.0
            vp = v
            rp = r_node
        n_p = vp.shape[0]
        if n_p < 2:
            continue
        order = np.argsort(vp, kind="stable")
        vs = vp[order]
        cs = np.cumsum(rp[order])[:-1]
        k1 = np.arange(1, n_p, dtype=np.float64)
        distinct = vs[:-1] < vs[1:]
        gains = np.full((n_p - 1, 2), -np.inf)
        for col, dl in ((0, True), (1, False)):
            if dl:
                gl = cs + g_miss
                nl = k1 + n_miss
            else:
                gl = cs + 0.0
                nl = k1
            gr = G - gl
            nr = N - nl
            ok = distinct & (nl >= min_leaf) & (nr >= min_leaf)
            with np.errstate(divide="ignore", invalid="ignore"):
                g = gl * gl / nl + gr * gr / nr - parent
            gains[:, col] = np.where(ok, g, -np.inf)
        flat = gains.ravel()
        j = int(np.argmax(flat))
        if flat[j] > best_gain:
            best_gain = float(flat[j])
            k, col = divmod(j, 2)
            best = (best_gain, f, float(vs[k + 1]), col == 0)
    return best


# --------------------------------------------------------------------------
# path-dependent TreeSHAP
# --------------------------------------------------------------------------
def _extend(d, z, o, w, l, pz, po, pi):
    d[l] = pi
    z[l] = pz
    o[l] = po
    w[l] = 1.0 if l == 0 else 0.0
    for i in range(l - 1, -1, -1):
        w[i + 1] += po * w[i] * (i + 1) / (l + 1)
        w[i] = pz * w[i] * (l - i) / (l + 1)


def _unwind(d, z, o, w, l, i):
    one = o[i]
    zero = z[i]
    nxt = w[l]
    for j in range(l - 1, -1, -1):
        if one != 0.0:
            tmp = w[j]
            w[j] = nxt * (l + 1) / ((j + 1) * one)
            nxt = tmp - w[j] * zero * (l - j) / (l + 1)
        else:
            w[j] = (w[j] * (l + 1)) / (zero * (l - j))
    for j in range(i, l):
        d[j] = d[j + 1]
        z[j] = z[j + 1]
        o[j] = o[j + 1]


def _unwound_sum(z, o, w, l, i):
    one = o[i]
    zero = z[i]
    nxt = w[l]
    total = 0.0
    for j in range(l - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (l + 1) / ((j + 1) * one)
            total += tmp
            nxt = w[j] - tmp * zero * ((l - j) / (l + 1))
        elif zero != 0.0:
            total += (w[j] / zero) / ((l - j) / (l + 1))
    return total


def tree_shap_tree(left, right, feature, threshold, value, cover, default_left, x, phi, scale):
    """Add ``scale`` times one tree's Shapley values for row ``x`` into ``phi``."""
    local = [0.0] * len(phi)

    def recurse(node, d, z, o, w, l, pz, po, pi):
        d, z, o, w = d[:], z[:], o[:], w[:]
        d.append(0)
        z.append(0.0)
        o.append(0.0)
        w.append(0.0)
        _extend(d, z, o, w, l, pz, po, pi)
        f = feature[node]
        if f < 0:
            for i in range(1, l + 1):
                s = _unwound_sum(z, o, w, l, i)
                local[d[i]] += s * (o[i] - z[i]) * value[node]
            return
        xv = x[f]
        if xv != xv:
            go_left = default_left[node]
        else:
            go_left = xv < threshold[node]
        hot, cold = (left[node], right[node]) if go_left else (right[node], left[node])
        iz = 1.0
        io = 1.0
        k = 0
        while k <= l:
            if d[k] == f:
                break
            k += 1
        if k != l + 1:
            iz = z[k]
            io = o[k]
            _unwind(d, z, o, w, l, k)
            l -= 1
            del d[-1], z[-1], o[-1], w[-1]
        recurse(hot, d, z, o, w, l + 1, cover[hot] / cover[node] * iz, io, f)
        recurse(cold, d, z, o, w, l + 1, cover[cold] / cover[node] * iz, 0.0, f)

    recurse(0, [], [], [], [], 0, 1.0, 1.0, -1)
    for j in range(len(phi)):
        phi[j] += scale * local[j]


def tree_shap(trees, n_features, x, scale):
    """Shapley values of ``scale * sum(trees)`` at row ``x``; trees are array tuples."""
    x = [float(v) for v in x]
    phi = [0.0] * n_features
    for t in trees:
        left, right, feature, threshold, value, cover, default_left = (a.tolist() for a in t)
        tree_shap_tree(left, right, feature, threshold, value, cover, default_left, x, phi, scale)
    return np.asarray(phi, dtype=np.float64)


# --------------------------------------------------------------------------
# permutation test
# --------------------------------------------------------------------------
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def trial_states(seed, trials):
    """Independent splitmix64 starting states, one per permutation trial."""
    base = np.uint64((seed * GOLDEN) & MASK64)
    t = np.asarray(trials, dtype=np.uint64) + np.uint64(1)
    with np.errstate(over="ignore"):
        return _mix(base + t * np.uint64(GOLDEN))


def _stat(values, offsets, n_a, lam, drawn_sums):
    stat = np.zeros(drawn_sums.shape[0])
    for k in range(len(n_a)):
        lo, hi = offsets[k], offsets[k + 1]
        tot = 0.0
        for i in range(lo, hi):
            tot += values[i]
        ma = drawn_sums[:, k] / n_a[k]
        mb = (tot - drawn_sums[:, k]) / (hi - lo - n_a[k])
        stat = stat + lam[k] * (ma - mb)
    return stat


def observed_statistic(values, offsets, n_a, lam):
    sums = np.zeros((1, len(n_a)))
    for k in range(len(n_a)):
        s = 0.0
        for i in range(offsets[k], offsets[k] + n_a[k]):
            s += values[i]
        sums[0, k] = s
    return float(_stat(values, offsets, n_a, lam, sums)[0])


def perm_count(values, offsets, n_a, lam, n_perm, seed, tol, chunk=256):
    """Count permutations whose |statistic| reaches the observed one.

    Units of stratum ``k`` occupy ``values[offsets[k]:offsets[k+1]]``; the
    first ``n_a[k]`` of them form group A. Each trial reshuffles group
    membership within every stratum by a partial Fisher-Yates pass driven by
    a per-trial splitmix64 stream.
    """
    values = np.asarray(values, dtype=np.float64)
    obs = abs(observed_statistic(values, offsets, n_a, lam))
    count = 0
    for start in range(0, n_perm, chunk):
        m = min(chunk, n_perm - start)
        state = trial_states(seed, np.arange(start, start + m))
        sums = np.zeros((m, len(n_a)))
        rows = np.arange(m)
        for k in range(len(n_a)):
            lo, hi = offsets[k], offsets[k + 1]
            size = hi - lo
            idx = np.tile(np.arange(size), (m, 1))
            s = np.zeros(m)
            for i in range(n_a[k]):
                with np.errstate(over="ignore"):
                    state = state + np.uint64(GOLDEN)
                    r = _mix(state)
                u = (r >> np.uint64(11)).astype(np.float64) * TWO_NEG53
                j = i + np.floor(u * (size - i)).astype(np.int64)
                picked = idx[rows, j]
                idx[rows, j] = idx[:, i]
                idx[:, i] = picked
                s = s + values[lo + picked]
            sums[:, k] = s
        stat = _stat(values, offsets, n_a, lam, sums)
        count += int(np.count_nonzero(np.abs(stat) >= obs - tol))
    return count


def splitmix_uniforms(seed, trial, count):
    """First ``count`` uniforms of one trial stream (used to cross-check backends)."""
    state = trial_states(seed, [trial])
    out = []
    for _ in range(count):
        with np.errstate(over="ignore"):
            state = state + np.uint64(GOLDEN)
        out.append(float((_mix(state) >> np.uint64(11)).astype(np.float64)[0] * TWO_NEG53))
    return out


__all__ = ["best_split", "tree_shap", "perm_count", "observed_statistic", "splitmix_uniforms"]
