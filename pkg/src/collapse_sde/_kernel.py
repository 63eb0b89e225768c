"""Compiled inner loop of the batched integrator.

Works in the complex packing of chart coordinates: each state row holds the
homogeneous representative with amplitude exactly 1 at its pivot. See
``sde_engine`` for the formulas.
"""

import numpy as np
from numba import njit

ACTIVE = -10
UNRESOLVED = -1
BLOWUP = -2


@njit(cache=True, inline="always")
def _observe(z, H, HZ, d):
    N = 0.0
    for i in range(d):
        N += z[i].real * z[i].real + z[i].imag * z[i].imag
    e = 0.0
    h2 = 0.0
    for i in range(d):
        acc = 0j
        for k in range(d):
            acc += H[i, k] * z[k]
        HZ[i] = acc
        e += (z[i].conjugate() * acc).real
        h2 += acc.real * acc.real + acc.imag * acc.imag
    e /= N
    h2 /= N
    return N, e, h2


@njit(cache=True, inline="always")
def _probs(z, N, Ud, group_of, out, d):
    for g in range(out.size):
        out[g] = 0.0
    for e in range(d):
        acc = 0j
        for k in range(d):
            acc += Ud[e, k] * z[k]
        out[group_of[e]] += (acc.real * acc.real + acc.imag * acc.imag) / N


@njit(cache=True)
def advance_block(Z, piv, status, end_step, H, Ud, group_of, n_groups,
                  sigma, dt, dW, k0, n_steps, rec_slot, thr, vtol, dominance,
                  stop_on_collapse, ito_correction,
                  rec_E, rec_V, rec_P, rec_Z, rec_piv, fin_E, fin_V, fin_P):
    """Advance every ACTIVE row through steps ``k0 .. k0 + L - 1``.

    ``rec_slot[s]`` is the recording slot for step ``k0 + s`` or -1. At each
    step the state is observed (recorded, tested for collapse, finished at
    ``n_steps``) before it is advanced with ``dW[b, s]``.
    """
    B, d = Z.shape
    L = dW.shape[1]
    HZ = np.empty(d, dtype=np.complex128)
    HHZ = np.empty(d, dtype=np.complex128)
    uH = np.empty(d, dtype=np.complex128)
    uV = np.empty(d, dtype=np.complex128)
    znew = np.empty(d, dtype=np.complex128)
    P = np.empty(n_groups)
    s2 = sigma * sigma
    for b in range(B):
        if status[b] != ACTIVE:
            continue
        z = Z[b]
        p = piv[b]
        for s in range(L):
            k = k0 + s
            N, e, h2 = _observe(z, H, HZ, d)
            V = h2 - e * e
            if V < 0.0:
                V = 0.0
            slot = rec_slot[s]
            have_p = False
            if slot >= 0:
                _probs(z, N, Ud, group_of, P, d)
                have_p = True
                rec_E[b, slot] = e
                rec_V[b, slot] = V
                rn = 1.0 / np.sqrt(N)
                for g in range(n_groups):
                    rec_P[b, slot, g] = P[g]
                for i in range(d):
                    rec_Z[b, slot, i] = z[i] * rn
                rec_piv[b, slot] = p
            code = ACTIVE
            if (stop_on_collapse or k == n_steps) and V < vtol:
                if not have_p:
                    _probs(z, N, Ud, group_of, P, d)
                    have_p = True
                best = 0
                for g in range(1, n_groups):
                    if P[g] > P[best]:
                        best = g
                if P[best] > dominance:
                    code = best
            if code == ACTIVE and k == n_steps:
                code = UNRESOLVED
            if code != ACTIVE:
                if not have_p:
                    _probs(z, N, Ud, group_of, P, d)
                status[b] = code
                end_step[b] = k
                fin_E[b] = e
                fin_V[b] = V
                for g in range(n_groups):
                    fin_P[b, g] = P[g]
                break

            # -- increment in the current chart
            for i in range(d):
                acc = 0j
                for kk in range(d):
                    acc += H[i, kk] * HZ[kk]
                HHZ[i] = acc
            sH = 0j
            sV = 0j
            for i in range(d):
                if i == p:
                    uH[i] = 0j
                    uV[i] = 0j
                else:
                    uH[i] = 2.0 * (HZ[i] - e * z[i]) / N
                    uV[i] = 2.0 * (HHZ[i] - h2 * z[i]) / N - 2.0 * e * uH[i]
                    sH += z[i].conjugate() * uH[i]
                    sV += z[i].conjugate() * uV[i]
            # raise indices: w -> N/4 (w + t (t^dag w)); uH, uV now hold raised vectors
            sb = 0j
            for i in range(d):
                if i != p:
                    uH[i] = 0.25 * N * (uH[i] + z[i] * sH)
                    uV[i] = 0.25 * N * (uV[i] + z[i] * sV)
                    sb += z[i].conjugate() * uH[i]
            w = dW[b, s]
            corr = s2 * sb / N if ito_correction else 0j
            Nn = 0.0
            for i in range(d):
                if i == p:
                    znew[i] = 1.0
                else:
                    drift = -2j * uH[i] - 0.25 * s2 * uV[i] + corr * uH[i]
                    znew[i] = z[i] + drift * dt + sigma * uH[i] * w
                Nn += znew[i].real * znew[i].real + znew[i].imag * znew[i].imag
            if not np.isfinite(Nn):
                _probs(z, N, Ud, group_of, P, d)
                status[b] = BLOWUP
                end_step[b] = k + 1
                fin_E[b] = e
                fin_V[b] = V
                for g in range(n_groups):
                    fin_P[b, g] = P[g]
                break
            for i in range(d):
                z[i] = znew[i]
            if Nn > thr:
                q = 0
                m = -1.0
                for i in range(d):
                    a = z[i].real * z[i].real + z[i].imag * z[i].imag
                    if a > m:
                        m = a
                        q = i
                if q != p:
                    inv = 1.0 / z[q]
                    for i in range(d):
                        z[i] = z[i] * inv
                    z[q] = 1.0
                    p = q
        piv[b] = p
