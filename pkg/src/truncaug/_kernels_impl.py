"""Hot simulation and elimination loops.

This module contains the shared source for both execution lanes: it is
imported as-is for the plain (no-JIT) lane and re-executed under
``numba.njit`` by :mod:`truncaug._kernels_jit`.  Every function listed in
``KERNELS`` must therefore stay inside the numba nopython subset.

Randomness is a splitmix64 stream per trial, derived from
``(batch_seed, trial_index)``, so results are independent of batching and
identical across lanes.  Draw schedule (fixed so streams are reproducible):
one uniform for the start state, two per discrete split step
(branch + row), three per jump step (holding + branch + row), one per
plain m-block step, and one acceptance draw per confined m-block.

Padded-row kernels: ``cols[i, j]`` holds successor local ids with ``-1``
meaning "outside the enumerated window", ``cum[i, :nnz[i]]`` the row's
normalized cumulative masses.  Status codes returned by batch kernels:
0 ok, 1 escaped the window (caller grows it and reruns), 2 step cap hit,
3 invalid thinning ratio.
"""

import numpy as np

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_STRIDE = U64(0xB5AD4ECEDA1CE2A9)
_SALT = U64(0x5851F42D4C957F2D)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S11 = U64(11)
_INV53 = 1.0 / 9007199254740992.0

KERNELS = (
    "mix64",
    "stream_state",
    "next_u01",
    "sample_dist",
    "sample_padded",
    "gth_solve",
    "killed_cycles",
    "truncated_cycles",
    "coupling_untruncated",
    "coupling_truncated",
    "mstep_cycles",
    "jump_cycles",
)


def mix64(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def stream_state(seed, idx):
    return mix64(mix64(seed ^ _SALT) + U64(idx) * _STRIDE)


def next_u01(s):
    s = s + _GOLDEN
    z = mix64(s)
    return s, (z >> _S11) * _INV53


def sample_dist(cols, cum, u):
    j = 0
    last = cols.shape[0] - 1
    while j < last and u >= cum[j]:
        j += 1
    return cols[j]


def sample_padded(cols, cum, nnz, row, u):
    j = 0
    last = nnz[row] - 1
    while j < last and u >= cum[row, j]:
        j += 1
    return cols[row, j]


def gth_solve(A):
    """GTH state reduction on a dense stochastic matrix (in place)."""
    n = A.shape[0]
    scale = np.ones(n)
    for k in range(n - 1, 0, -1):
        s = 0.0
        for j in range(k):
            s += A[k, j]
        scale[k] = s
        for j in range(k):
            A[k, j] /= s
        for i in range(k):
            aik = A[i, k]
            if aik != 0.0:
                for j in range(k):
                    A[i, j] += aik * A[k, j]
    u = np.zeros(n)
    u[0] = 1.0
    total = 1.0
    for k in range(1, n):
        acc = 0.0
        for i in range(k):
            acc += u[i] * A[i, k]
        u[k] = acc / scale[k]
        total += u[k]
    for k in range(n):
        u[k] /= total
    return u


def killed_cycles(seed, ncyc, start_cols, start_cum,
                  pcols, pcum, pnnz, c_idx, lam,
                  hcols, hcum, hnnz, phi_cols, phi_cum,
                  in_set, kill_on, fvals, cap):
    """Split-chain cycles of the untruncated kernel, optionally killed.

    A cycle runs until the first regeneration (beta = 1); with
    ``kill_on`` it is additionally stopped the first time the chain
    leaves ``in_set``, recording ``killed[c] = 1`` and the stopped time
    tau-and-T_n.  Functional sums cover states strictly before the stop.
    """
    nf = fvals.shape[0]
    tau = np.zeros(ncyc, dtype=np.int64)
    fsums = np.zeros((ncyc, nf))
    killed = np.zeros(ncyc, dtype=np.uint8)
    cvisits = np.int64(0)
    regens = np.int64(0)
    status = np.int64(0)
    for c in range(ncyc):
        s = stream_state(seed, c)
        s, u0 = next_u01(s)
        x = sample_dist(start_cols, start_cum, u0)
        t = np.int64(0)
        while True:
            if t >= cap:
                status = np.int64(2)
                return tau, fsums, killed, cvisits, regens, status
            for q in range(nf):
                fsums[c, q] += fvals[q, x]
            s, ub = next_u01(s)
            s, ur = next_u01(s)
            ci = c_idx[x]
            beta = 0
            if ci >= 0:
                cvisits += 1
                if ub < lam:
                    beta = 1
                    nxt = sample_dist(phi_cols, phi_cum, ur)
                else:
                    nxt = sample_padded(hcols, hcum, hnnz, ci, ur)
            else:
                nxt = sample_padded(pcols, pcum, pnnz, x, ur)
            t += 1
            if beta == 1:
                regens += 1
                tau[c] = t
                break
            if nxt < 0:
                if kill_on == 1:
                    tau[c] = t
                    killed[c] = 1
                    break
                status = np.int64(1)
                return tau, fsums, killed, cvisits, regens, status
            if kill_on == 1 and in_set[nxt] == 0:
                tau[c] = t
                killed[c] = 1
                break
            x = nxt
    return tau, fsums, killed, cvisits, regens, status


def truncated_cycles(seed, ncyc, start_cols, start_cum,
                     exitm, tcols, tcum, tnnz, c_idx, lam,
                     thcols, thcum, thnnz,
                     phi_cols, phi_cum, nu_cols, nu_cum, fvals, cap):
    """Split-chain cycles of the augmented kernel P_n.

    An attempted exit of A_n sets beta = 2 and redirects to the re-entry
    law; the cycle ends at the first beta = 1.  Interior rows are
    pre-conditioned on staying inside A_n, so no escape is possible.
    """
    nf = fvals.shape[0]
    tau = np.zeros(ncyc, dtype=np.int64)
    fsums = np.zeros((ncyc, nf))
    gamma = np.zeros(ncyc, dtype=np.int64)
    cvisits = np.int64(0)
    regens = np.int64(0)
    status = np.int64(0)
    for c in range(ncyc):
        s = stream_state(seed, c)
        s, u0 = next_u01(s)
        x = sample_dist(start_cols, start_cum, u0)
        t = np.int64(0)
        while True:
            if t >= cap:
                status = np.int64(2)
                return tau, fsums, gamma, cvisits, regens, status
            for q in range(nf):
                fsums[c, q] += fvals[q, x]
            s, ub = next_u01(s)
            s, ur = next_u01(s)
            em = exitm[x]
            ci = c_idx[x]
            if ci >= 0:
                cvisits += 1
            beta = 0
            if ub < em:
                beta = 2
                gamma[c] += 1
                nxt = sample_dist(nu_cols, nu_cum, ur)
            elif ci >= 0 and ub < em + lam:
                beta = 1
                nxt = sample_dist(phi_cols, phi_cum, ur)
            elif ci >= 0:
                nxt = sample_padded(thcols, thcum, thnnz, ci, ur)
            else:
                nxt = sample_padded(tcols, tcum, tnnz, x, ur)
            t += 1
            if beta == 1:
                regens += 1
                tau[c] = t
                break
            x = nxt
    return tau, fsums, gamma, cvisits, regens, status


def coupling_untruncated(seed, trials, horizon, phi_cols, phi_cum,
                         pcols, pcum, pnnz, c_idx, lam,
                         hcols, hcum, hnnz, in_set, b_mask):
    """Counts of {X_k in B, tau and T_n > k} under the untruncated chain."""
    counts = np.zeros(horizon + 1, dtype=np.int64)
    for i in range(trials):
        s = stream_state(seed, i)
        s, u0 = next_u01(s)
        x = sample_dist(phi_cols, phi_cum, u0)
        if b_mask[x] == 1:
            counts[0] += 1
        for k in range(1, horizon + 1):
            s, ub = next_u01(s)
            s, ur = next_u01(s)
            ci = c_idx[x]
            if ci >= 0 and ub < lam:
                break
            if ci >= 0:
                nxt = sample_padded(hcols, hcum, hnnz, ci, ur)
            else:
                nxt = sample_padded(pcols, pcum, pnnz, x, ur)
            if nxt < 0 or in_set[nxt] == 0:
                break
            x = nxt
            if b_mask[x] == 1:
                counts[k] += 1
    return counts


def coupling_truncated(seed, trials, horizon, phi_cols, phi_cum,
                       exitm, tcols, tcum, tnnz, c_idx, lam,
                       thcols, thcum, thnnz, nu_cols, nu_cum, b_mask):
    """Counts of {X_k in B, tau and Gamma > k} under the augmented chain."""
    counts = np.zeros(horizon + 1, dtype=np.int64)
    for i in range(trials):
        s = stream_state(seed, i)
        s, u0 = next_u01(s)
        x = sample_dist(phi_cols, phi_cum, u0)
        if b_mask[x] == 1:
            counts[0] += 1
        for k in range(1, horizon + 1):
            s, ub = next_u01(s)
            s, ur = next_u01(s)
            em = exitm[x]
            ci = c_idx[x]
            if ub < em:
                break
            if ci >= 0 and ub < em + lam:
                break
            if ci >= 0:
                nxt = sample_padded(thcols, thcum, thnnz, ci, ur)
            else:
                nxt = sample_padded(tcols, tcum, tnnz, x, ur)
            x = nxt
            if b_mask[x] == 1:
                counts[k] += 1
    return counts


def mstep_cycles(seed, ncyc, pcols, pcum, pnnz, in_a1, cm_idx, lam,
                 km, phi_cols, phi_cum, phi_pmf, fvals, m, cap):
    """Cycles with m-step block regeneration by Bernoulli thinning.

    At each visit to C a block of m forward steps runs under the plain
    kernel; if the block stays inside A_1, regeneration is accepted with
    probability lam*phi(y)/K_m(x, y), which leaves the path law unchanged
    while making accepted block ends exactly phi-distributed.
    """
    nf = fvals.shape[0]
    tau = np.zeros(ncyc, dtype=np.int64)
    fsums = np.zeros((ncyc, nf))
    blocks = np.int64(0)
    accepts = np.int64(0)
    status = np.int64(0)
    for c in range(ncyc):
        s = stream_state(seed, c)
        s, u0 = next_u01(s)
        x = sample_dist(phi_cols, phi_cum, u0)
        t = np.int64(0)
        done = False
        while not done:
            ci = cm_idx[x]
            if ci >= 0:
                blocks += 1
                x0 = x
                confined = 1
                for j in range(m):
                    if t >= cap:
                        status = np.int64(2)
                        return tau, fsums, blocks, accepts, status
                    for q in range(nf):
                        fsums[c, q] += fvals[q, x]
                    s, ur = next_u01(s)
                    nxt = sample_padded(pcols, pcum, pnnz, x, ur)
                    if nxt < 0:
                        status = np.int64(1)
                        return tau, fsums, blocks, accepts, status
                    t += 1
                    x = nxt
                    if in_a1[x] == 0:
                        confined = 0
                if confined == 1:
                    denom = km[ci, x]
                    ratio = lam * phi_pmf[x] / denom if denom > 0.0 else 2.0
                    if ratio > 1.0 + 1e-9:
                        status = np.int64(3)
                        return tau, fsums, blocks, accepts, status
                    s, ua = next_u01(s)
                    if ua < ratio:
                        accepts += 1
                        tau[c] = t
                        done = True
            else:
                if t >= cap:
                    status = np.int64(2)
                    return tau, fsums, blocks, accepts, status
                for q in range(nf):
                    fsums[c, q] += fvals[q, x]
                s, ur = next_u01(s)
                nxt = sample_padded(pcols, pcum, pnnz, x, ur)
                if nxt < 0:
                    status = np.int64(1)
                    return tau, fsums, blocks, accepts, status
                t += 1
                x = nxt
    return tau, fsums, blocks, accepts, status


def jump_cycles(seed, ncyc, start_cols, start_cum, exitm,
                tcols, tcum, tnnz, c_idx, lam,
                thcols, thcum, thnnz, phi_cols, phi_cum,
                nu_cols, nu_cum, rate, fvals, cap):
    """Regenerative cycles of a jump process via its embedded chain.

    Holding times are exact exponentials with mean 1/rate(x); the cycle
    time integral accumulates f(Y_k) * hold_k for jumps strictly before
    the regenerating transition.  With all-zero ``exitm`` this simulates
    the untruncated process (escapes return status 1).
    """
    nf = fvals.shape[0]
    jumps = np.zeros(ncyc, dtype=np.int64)
    total_time = np.zeros(ncyc)
    tints = np.zeros((ncyc, nf))
    vsums = np.zeros((ncyc, nf))
    gamma = np.zeros(ncyc, dtype=np.int64)
    status = np.int64(0)
    for c in range(ncyc):
        s = stream_state(seed, c)
        s, u0 = next_u01(s)
        x = sample_dist(start_cols, start_cum, u0)
        t = np.int64(0)
        while True:
            if t >= cap:
                status = np.int64(2)
                return jumps, total_time, tints, vsums, gamma, status
            s, uh = next_u01(s)
            hold = -np.log(1.0 - uh) / rate[x]
            total_time[c] += hold
            for q in range(nf):
                tints[c, q] += fvals[q, x] * hold
                vsums[c, q] += fvals[q, x]
            s, ub = next_u01(s)
            s, ur = next_u01(s)
            em = exitm[x]
            ci = c_idx[x]
            beta = 0
            if ub < em:
                beta = 2
                gamma[c] += 1
                nxt = sample_dist(nu_cols, nu_cum, ur)
            elif ci >= 0 and ub < em + lam:
                beta = 1
                nxt = sample_dist(phi_cols, phi_cum, ur)
            elif ci >= 0:
                nxt = sample_padded(thcols, thcum, thnnz, ci, ur)
            else:
                nxt = sample_padded(tcols, tcum, tnnz, x, ur)
            t += 1
            if beta == 1:
                jumps[c] = t
                break
            if nxt < 0:
                status = np.int64(1)
                return jumps, total_time, tints, vsums, gamma, status
            x = nxt
    return jumps, total_time, tints, vsums, gamma, status
