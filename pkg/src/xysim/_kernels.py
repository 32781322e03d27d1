"""Numba kernels over materialized sector bases.

All kernels use the pull form: each output index is computed from read-only
inputs, so rows are independent under ``prange`` and results do not depend on
the thread count.
"""
import numpy as np
from numba import njit, prange


@njit(cache=True)
def popcount64(x):
    x = x - ((x >> 1) & 0x5555555555555555)
    x = (x & 0x3333333333333333) + ((x >> 2) & 0x3333333333333333)
    x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0F
    return (x * 0x0101010101010101) >> 56 & 0xFF


@njit(cache=True)
def enumerate_states(n_q, m, dim):
    out = np.empty(dim, dtype=np.int64)
    if dim == 0:
        return out
    if m == 0:
        out[0] = 0
        return out
    x = np.uint64((1 << m) - 1)
    one = np.uint64(1)
    for i in range(dim):
        out[i] = np.int64(x)
        if i + 1 == dim:
            break
        # next integer with the same popcount
        u = x & (~x + one)
        v = u + x
        x = v + (((v ^ x) // u) >> np.uint64(2))
    return out


@njit(cache=True, inline="always")
def rank_of(s, tables, width, nchunks):
    mask = (np.int64(1) << width) - 1
    r = np.int64(0)
    w = 0
    for c in range(nchunks):
        chunk = (s >> (c * width)) & mask
        r += tables[c, w, chunk]
        w += popcount64(chunk)
    return r


@njit(cache=True)
def rank_many(bits, tables, width, nchunks):
    out = np.empty(bits.shape[0], dtype=np.int64)
    for t in range(bits.shape[0]):
        out[t] = rank_of(bits[t], tables, width, nchunks)
    return out


@njit(cache=True, parallel=True)
def apply_h(states, tables, width, nchunks, psi, out,
            onsite, bi, bj, hop, nn, ti, tj, tk, xnx, xix, nxx):
    dim = states.shape[0]
    n_q = onsite.shape[0]
    nb = bi.shape[0]
    nt = ti.shape[0]
    for idx in prange(dim):
        s = states[idx]
        diag = 0.0
        for i in range(n_q):
            if (s >> i) & 1:
                diag += onsite[i]
        acc = 0.0 + 0.0j
        for b in range(nb):
            ni = (s >> bi[b]) & 1
            nj = (s >> bj[b]) & 1
            if ni == nj:
                if ni == 1:
                    diag += nn[b]
            elif hop[b] != 0.0:
                t = s ^ ((np.int64(1) << bi[b]) | (np.int64(1) << bj[b]))
                acc += hop[b] * psi[rank_of(t, tables, width, nchunks)]
        for q in range(nt):
            i = ti[q]
            j = tj[q]
            k = tk[q]
            ni = (s >> i) & 1
            nj = (s >> j) & 1
            nk = (s >> k) & 1
            if ni != nk:
                c = xnx[q] * nj + xix[q]
                if c != 0.0:
                    t = s ^ ((np.int64(1) << i) | (np.int64(1) << k))
                    acc += c * psi[rank_of(t, tables, width, nchunks)]
            if nxx[q] != 0.0:
                if ni == 1 and nj != nk:
                    t = s ^ ((np.int64(1) << j) | (np.int64(1) << k))
                    acc += nxx[q] * psi[rank_of(t, tables, width, nchunks)]
                if nk == 1 and nj != ni:
                    t = s ^ ((np.int64(1) << j) | (np.int64(1) << i))
                    acc += nxx[q] * psi[rank_of(t, tables, width, nchunks)]
        out[idx] = diag * psi[idx] + acc


@njit(cache=True)
def hop_matrix(states, tables, width, nchunks, psi, n_q):
    """``C[a, b] = <psi| a_a^dag a_b |psi>`` for hard-core bosons (``a_b`` empties site ``b``)."""
    c = np.zeros((n_q, n_q), dtype=np.complex128)
    for idx in range(states.shape[0]):
        s = states[idx]
        amp = psi[idx]
        if amp == 0:
            continue
        for b in range(n_q):
            if (s >> b) & 1:
                c[b, b] += amp.real * amp.real + amp.imag * amp.imag
                for a in range(n_q):
                    if not (s >> a) & 1:
                        t = s ^ ((np.int64(1) << a) | (np.int64(1) << b))
                        c[a, b] += np.conj(psi[rank_of(t, tables, width, nchunks)]) * amp
    return c


@njit(cache=True)
def pauli_expectation(states, tables, width, nchunks, psi, xmask, ymask, zmask, m):
    """``<psi|P|psi>`` for a Pauli string with X on ``xmask``, Y on ``ymask``, Z on ``zmask``.

    Sites must be disjoint across masks. Strings leaving the sector contribute zero.
    """
    flip = xmask | ymask
    total = 0.0 + 0.0j
    for idx in range(states.shape[0]):
        s = states[idx]
        amp = psi[idx]
        t = s ^ flip
        if popcount64(t) != m:
            continue
        phase = 1.0 + 0.0j
        # Y|0> = i|1>, Y|1> = -i|0>
        y1 = popcount64(s & ymask)
        y0 = popcount64(ymask) - y1
        k = (y0 - y1) % 4
        if k == 1:
            phase = 1j
        elif k == 2:
            phase = -1.0 + 0.0j
        elif k == 3:
            phase = -1j
        if popcount64(s & zmask) % 2 == 1:
            phase = -phase
        total += np.conj(psi[rank_of(t, tables, width, nchunks)]) * phase * amp
    return total


@njit(cache=True)
def schmidt_blocks_index(states, left_mask_positions, right_positions):
    """Split each basis state into (left bits packed, right bits packed)."""
    dim = states.shape[0]
    lb = np.empty(dim, dtype=np.int64)
    rb = np.empty(dim, dtype=np.int64)
    for idx in range(dim):
        s = states[idx]
        l = np.int64(0)
        for p in range(left_mask_positions.shape[0]):
            if (s >> left_mask_positions[p]) & 1:
                l |= np.int64(1) << p
        r = np.int64(0)
        for p in range(right_positions.shape[0]):
            if (s >> right_positions[p]) & 1:
                r |= np.int64(1) << p
        lb[idx] = l
        rb[idx] = r
    return lb, rb


@njit(cache=True)
def count_moves(states, bi, bj, ti, tj, tk, with_three):
    dim = states.shape[0]
    counts = np.zeros(dim + 1, dtype=np.int64)
    for idx in range(dim):
        s = states[idx]
        c = 0
        for b in range(bi.shape[0]):
            if ((s >> bi[b]) & 1) != ((s >> bj[b]) & 1):
                c += 1
        if with_three:
            for q in range(ti.shape[0]):
                ni = (s >> ti[q]) & 1
                nj = (s >> tj[q]) & 1
                nk = (s >> tk[q]) & 1
                if ni != nk:
                    c += 1
                if ni == 1 and nj != nk:
                    c += 1
                if nk == 1 and nj != ni:
                    c += 1
        counts[idx + 1] = c
    return counts


@njit(cache=True)
def fill_moves(states, tables, width, nchunks, bi, bj, ti, tj, tk, with_three, indptr, cols, kinds):
    """Connectivity of the hopping graph. ``kinds`` indexes the coefficient vector:

    ``b`` for bond hops, ``nb + 2q + n_j`` for the XnX/XIX move of triple ``q``,
    ``nb + 2 nt + q`` for its nXX moves.
    """
    nb = bi.shape[0]
    nt = ti.shape[0]
    for idx in range(states.shape[0]):
        s = states[idx]
        p = indptr[idx]
        for b in range(nb):
            if ((s >> bi[b]) & 1) != ((s >> bj[b]) & 1):
                cols[p] = rank_of(s ^ ((np.int64(1) << bi[b]) | (np.int64(1) << bj[b])), tables, width, nchunks)
                kinds[p] = b
                p += 1
        if with_three:
            for q in range(nt):
                i = ti[q]
                j = tj[q]
                k = tk[q]
                ni = (s >> i) & 1
                nj = (s >> j) & 1
                nk = (s >> k) & 1
                if ni != nk:
                    cols[p] = rank_of(s ^ ((np.int64(1) << i) | (np.int64(1) << k)), tables, width, nchunks)
                    kinds[p] = nb + 2 * q + nj
                    p += 1
                if ni == 1 and nj != nk:
                    cols[p] = rank_of(s ^ ((np.int64(1) << j) | (np.int64(1) << k)), tables, width, nchunks)
                    kinds[p] = nb + 2 * nt + q
                    p += 1
                if nk == 1 and nj != ni:
                    cols[p] = rank_of(s ^ ((np.int64(1) << j) | (np.int64(1) << i)), tables, width, nchunks)
                    kinds[p] = nb + 2 * nt + q
                    p += 1


@njit(cache=True, parallel=True)
def csr_apply(indptr, cols, kinds, coef, diag, psi, out):
    for idx in prange(psi.shape[0]):
        acc = diag[idx] * psi[idx]
        for p in range(indptr[idx], indptr[idx + 1]):
            acc += coef[kinds[p]] * psi[cols[p]]
        out[idx] = acc


@njit(cache=True, parallel=True)
def occupation_sums(states, weights):
    """``sum_i weights[i] n_i`` per basis state."""
    out = np.empty(states.shape[0])
    for idx in prange(states.shape[0]):
        s = states[idx]
        d = 0.0
        for i in range(weights.shape[0]):
            if (s >> i) & 1:
                d += weights[i]
        out[idx] = d
    return out


@njit(cache=True, parallel=True)
def pair_occupation_sums(states, bi, bj, weights):
    out = np.empty(states.shape[0])
    for idx in prange(states.shape[0]):
        s = states[idx]
        d = 0.0
        for b in range(bi.shape[0]):
            if (s >> bi[b]) & 1 and (s >> bj[b]) & 1:
                d += weights[b]
        out[idx] = d
    return out


@njit(cache=True, inline="always")
def permute_bits(s, perm):
    t = np.int64(0)
    for i in range(perm.shape[0]):
        if (s >> i) & 1:
            t |= np.int64(1) << perm[i]
    return t


@njit(cache=True, inline="always")
def canonical(s, perms):
    """Smallest image of ``s`` under the group and the stabilizer order."""
    best = s
    stab = 0
    for g in range(perms.shape[0]):
        t = permute_bits(s, perms[g])
        if t < best:
            best = t
        if t == s:
            stab += 1
    return best, stab


@njit(cache=True, parallel=True)
def orbit_scan(states, perms):
    """Per state: is it its own orbit representative, and its orbit size."""
    n = states.shape[0]
    is_rep = np.zeros(n, dtype=np.bool_)
    orbit = np.zeros(n, dtype=np.int64)
    order = perms.shape[0]
    for idx in prange(n):
        c, stab = canonical(states[idx], perms)
        is_rep[idx] = c == states[idx]
        orbit[idx] = order // stab
    return is_rep, orbit


@njit(cache=True, parallel=True)
def symmetrize_moves(indptr, cols, full_states, reps, orbit, perms, weights):
    """Map full-basis move targets to representative indices with ``sqrt(|O_row| / |O_col|)`` weights."""
    for t in prange(reps.shape[0]):
        for p in range(indptr[t], indptr[t + 1]):
            c, _ = canonical(full_states[cols[p]], perms)
            r = np.searchsorted(reps, c)
            cols[p] = r
            weights[p] = np.sqrt(orbit[t] / orbit[r])


@njit(cache=True, parallel=True)
def csr_apply_weighted(indptr, cols, kinds, weights, coef, diag, psi, out):
    for idx in prange(psi.shape[0]):
        acc = diag[idx] * psi[idx]
        for p in range(indptr[idx], indptr[idx + 1]):
            acc += weights[p] * coef[kinds[p]] * psi[cols[p]]
        out[idx] = acc


@njit(cache=True, parallel=True)
def orbit_expand(full_states, reps, orbit, perms, amp):
    out = np.empty(full_states.shape[0], dtype=np.complex128)
    for idx in prange(full_states.shape[0]):
        c, _ = canonical(full_states[idx], perms)
        r = np.searchsorted(reps, c)
        out[idx] = amp[r] / np.sqrt(orbit[r])
    return out


@njit(cache=True)
def orbit_project(full_states, reps, orbit, perms, amp):
    out = np.zeros(reps.shape[0], dtype=np.complex128)
    for idx in range(full_states.shape[0]):
        c, _ = canonical(full_states[idx], perms)
        r = np.searchsorted(reps, c)
        out[r] += amp[idx] / np.sqrt(orbit[r])
    return out
