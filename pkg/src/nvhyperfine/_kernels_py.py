"""Pure numpy implementation of the propagation kernels.

Same signatures and results as the compiled ``_kernels`` module.  Loops
that the compiled version runs step by step are replaced here by batched
eigendecompositions, a pairwise product tree and prefix products.
"""

import numpy as np

_CHUNK = 65536


def step_unitaries(h0, v, freq, t0, dt, nsteps):
    h0 = np.asarray(h0, dtype=complex)
    v = np.asarray(v, dtype=complex)
    n = h0.shape[0]
    out = np.empty((nsteps, n, n), dtype=complex)
    for start in range(0, nsteps, _CHUNK):
        stop = min(start + _CHUNK, nsteps)
        mid = t0 + (np.arange(start, stop) + 0.5) * dt
        h = h0[None] + np.cos(2 * np.pi * freq * mid)[:, None, None] * v[None]
        w, vec = np.linalg.eigh(h)
        phase = np.exp(-2j * np.pi * dt * w)
        u = (vec * phase[:, None, :]) @ vec.conj().transpose(0, 2, 1)
        # one Newton-Schulz step removes the O(eps) unitarity defect
        g = 3 * np.eye(n) - u.conj().transpose(0, 2, 1) @ u
        out[start:stop] = 0.5 * (u @ g)
    return out


def chain_product(steps):
    steps = np.asarray(steps, dtype=complex)
    n = steps.shape[1]
    if len(steps) == 0:
        return np.eye(n, dtype=complex)
    level = steps
    while len(level) > 1:
        if len(level) % 2:
            level = np.concatenate([level, np.eye(n, dtype=complex)[None]])
        level = level[1::2] @ level[0::2]
    return level[0].copy()


def _prefix_products(steps):
    n = steps.shape[1]
    prefix = np.empty((len(steps) + 1, n, n), dtype=complex)
    prefix[0] = np.eye(n)
    for k, u in enumerate(steps):
        prefix[k + 1] = u @ prefix[k]
    return prefix


def evolve_periodic(steps, psi0, sample_steps):
    steps = np.asarray(steps, dtype=complex)
    samples = np.asarray(sample_steps, dtype=np.int64)
    period = len(steps)
    prefix = _prefix_products(steps)
    one_period = prefix[-1]
    out = np.empty((len(samples), steps.shape[1]), dtype=complex)
    psi_k = np.array(psi0, dtype=complex)
    k_done = 0
    for q, s in enumerate(samples):
        k, m = divmod(int(s), period)
        while k_done < k:
            psi_k = one_period @ psi_k
            k_done += 1
        out[q] = prefix[m] @ psi_k
    return out
