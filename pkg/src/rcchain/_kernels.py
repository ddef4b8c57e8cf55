"""Clocked transient inner loop of the chain simulator.

The loop is written once with scalar indexing so the compiled and
interpreted paths execute the identical sequence of float64 operations.
By default it is JIT-compiled with numba; set RCCHAIN_DISABLE_NUMBA=1 to
run the plain numpy/Python version instead (slow, for verification and
environments without numba).  `benchmarks/bench_kernels.py` times both.
"""

import os

import numpy as np

DISABLE_ENV = "RCCHAIN_DISABLE_NUMBA"


def chain_loop_py(
    a_d,
    b_u,
    b_c,
    u_mid,
    offsets,
    v_max,
    delay_substeps,
    n_cycles,
    substeps,
    noise,
    use_noise,
    x0,
    forced_bits,
    use_forced,
):
    """One full clocked run; returns (bits, edge_states, max_abs, diverged).

    Per cycle: latch comparator signs at the clock edge, switch the
    feedback vector once the digital delay (in substeps) has elapsed, and
    propagate the state with the exact one-substep operator, input held at
    substep midpoints.  diverged is the first cycle with a non-finite
    state, or -1.
    """
    n = a_d.shape[0]
    bits = np.empty((n, n_cycles), dtype=np.int8)
    edges = np.empty((n_cycles, n))
    max_abs = np.zeros(n)
    x = x0.copy()
    x_next = np.empty(n)
    c_active = np.zeros(n)
    c_new = np.zeros(n)
    diverged = -1
    for k in range(n_cycles):
        finite = True
        for i in range(n):
            edges[k, i] = x[i]
            if not np.isfinite(x[i]):
                finite = False
        if not finite:
            diverged = k
            break
        for i in range(n):
            if use_forced:
                s = forced_bits[i, k]
            else:
                s = 1 if x[i] + offsets[i] >= 0.0 else -1
            bits[i, k] = s
            c_new[i] = -s * v_max  # inverter output opposes the latched sign
        if k == 0:
            # no pre-history: the first decision is also the held value
            for i in range(n):
                c_active[i] = c_new[i]
        base = k * substeps
        for m in range(substeps):
            if m == delay_substeps:
                for i in range(n):
                    c_active[i] = c_new[i]
            u = u_mid[base + m]
            for i in range(n):
                acc = b_u[i] * u
                for j in range(n):
                    acc += a_d[i, j] * x[j] + b_c[i, j] * c_active[j]
                if use_noise:
                    acc += noise[base + m, i]
                x_next[i] = acc
            for i in range(n):
                x[i] = x_next[i]
                a = abs(x[i])
                if a > max_abs[i]:
                    max_abs[i] = a
        if delay_substeps >= substeps:
            # a full-period delay lands on the next clock edge
            for i in range(n):
                c_active[i] = c_new[i]
    return bits, edges, max_abs, diverged


def _numba_enabled() -> bool:
    if os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_enabled()

if NUMBA_ENABLED:
    from numba import njit

    chain_loop_jit = njit(cache=True)(chain_loop_py)
    chain_loop = chain_loop_jit
else:
    chain_loop_jit = None
    chain_loop = chain_loop_py
