"""Compiled FIFO toppling engines.

These kernels mirror the pure-python reference in stabilizer.py
instruction for instruction; the FIFO queue discipline is identical, so
python and compiled runs agree bit for bit even when capped mid-run.
All state arrays are indexed 0..n-1 with ``base`` mapping index 0 to its
absolute site; region bounds, watch sites, and origins arrive as array
indices.  The instruction mixer must match stacks.raw_draw exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_SITE_SALT = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ONE = np.uint64(1)

# run status codes
STATUS_STABLE = 0
STATUS_CAPPED = 1
STATUS_EARLY = 2
STATUS_OVERFLOW = 3


@njit(cache=True, nogil=True, inline="always")
def _fin(z):
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


@njit(cache=True, nogil=True, inline="always")
def _site_key(seed, site):
    if site >= 0:
        zz = np.uint64(2 * site)
    else:
        zz = np.uint64(-2 * site - 1)
    h = _fin(seed + _GOLD)
    return _fin((h ^ zz) * _SITE_SALT)


@njit(cache=True, nogil=True, inline="always")
def _draw(key, index):
    return _fin(key + np.uint64(index + 1) * _GOLD)


@njit(cache=True, nogil=True)
def raw_grid(seed, sites, indices):
    """Raw draws for (site, index) pairs; cross-checks the python mixer."""
    out = np.empty(sites.size, dtype=np.uint64)
    for k in range(sites.size):
        out[k] = _draw(_site_key(seed, sites[k]), indices[k])
    return out


@njit(cache=True, nogil=True)
def fifo_stabilize(counts, asleep, odo, u0, base, vlo, vhi, seed, threshold, cap,
                   watch_lo, watch_hi, stop_on_both):
    """Stabilize the region [vlo, vhi] (array indices) under FIFO order.

    Mutates counts/asleep/odo in place; instruction index at i is
    u0[i] + odo[i].  watch_* are array indices (-1 to disable); with
    stop_on_both the run halts once both watch sites have seen an
    active particle.  Returns (topplings, status, arrived_lo,
    arrived_hi, hit_lo, hit_hi) where arrived_* flag arrivals at the
    halo sites vlo-1 and vhi+1.
    """
    n = counts.size
    keys = np.empty(n, dtype=np.uint64)
    for i in range(n):
        keys[i] = _site_key(seed, base + i)

    qcap = n + 1
    q = np.empty(qcap, dtype=np.int64)
    inq = np.zeros(n, dtype=np.uint8)
    head = 0
    tail = 0
    qn = 0
    for i in range(vlo, vhi + 1):
        if counts[i] >= 1 and asleep[i] == 0:
            q[tail] = i
            tail = (tail + 1) % qcap
            qn += 1
            inq[i] = 1

    hit_lo = watch_lo >= 0 and counts[watch_lo] >= 1 and asleep[watch_lo] == 0
    hit_hi = watch_hi >= 0 and counts[watch_hi] >= 1 and asleep[watch_hi] == 0
    arrived_lo = False
    arrived_hi = False
    t = 0
    status = STATUS_STABLE
    while qn > 0:
        if stop_on_both and hit_lo and hit_hi:
            status = STATUS_EARLY
            break
        if t >= cap:
            status = STATUS_CAPPED
            break
        i = q[head]
        head = (head + 1) % qcap
        qn -= 1
        inq[i] = 0
        h = _draw(keys[i], u0[i] + odo[i])
        odo[i] += 1
        t += 1
        if h < threshold:
            if counts[i] == 1:
                asleep[i] = 1
            else:
                q[tail] = i
                tail = (tail + 1) % qcap
                qn += 1
                inq[i] = 1
        else:
            j = i + 1 if (h & _ONE) == _ONE else i - 1
            counts[i] -= 1
            if counts[i] >= 1 and inq[i] == 0:
                q[tail] = i
                tail = (tail + 1) % qcap
                qn += 1
                inq[i] = 1
            counts[j] += 1
            asleep[j] = 0
            if j == watch_lo:
                hit_lo = True
            if j == watch_hi:
                hit_hi = True
            if j < vlo:
                arrived_lo = True
            elif j > vhi:
                arrived_hi = True
            elif inq[j] == 0:
                q[tail] = j
                tail = (tail + 1) % qcap
                qn += 1
                inq[j] = 1
    return t, status, arrived_lo, arrived_hi, hit_lo, hit_hi


@njit(cache=True, nogil=True)
def fifo_excursion(counts, asleep, odo, u0, base, origin, glo, ghi, seed, threshold, cap):
    """Topple only the currently visited interval until it is stable.

    The visited interval starts as {origin} (array index; must hold an
    active particle) and extends one site whenever a particle lands just
    outside it.  Growth is limited to [glo, ghi]; an arrival beyond that
    aborts the run with STATUS_OVERFLOW (the caller keeps the halo sites
    glo-1, ghi+1 inside the arrays).  Returns (topplings, status, rlo,
    rhi) with the visited interval as array indices.
    """
    n = counts.size
    keys = np.empty(n, dtype=np.uint64)
    for i in range(n):
        keys[i] = _site_key(seed, base + i)

    qcap = n + 1
    q = np.empty(qcap, dtype=np.int64)
    inq = np.zeros(n, dtype=np.uint8)
    head = 0
    tail = 0
    qn = 0
    rlo = origin
    rhi = origin
    q[tail] = origin
    tail = (tail + 1) % qcap
    qn = 1
    inq[origin] = 1

    t = 0
    status = STATUS_STABLE
    while qn > 0:
        if t >= cap:
            status = STATUS_CAPPED
            break
        i = q[head]
        head = (head + 1) % qcap
        qn -= 1
        inq[i] = 0
        h = _draw(keys[i], u0[i] + odo[i])
        odo[i] += 1
        t += 1
        if h < threshold:
            if counts[i] == 1:
                asleep[i] = 1
            else:
                q[tail] = i
                tail = (tail + 1) % qcap
                qn += 1
                inq[i] = 1
        else:
            j = i + 1 if (h & _ONE) == _ONE else i - 1
            counts[i] -= 1
            if counts[i] >= 1 and inq[i] == 0:
                q[tail] = i
                tail = (tail + 1) % qcap
                qn += 1
                inq[i] = 1
            counts[j] += 1
            asleep[j] = 0
            if j < glo or j > ghi:
                status = STATUS_OVERFLOW
                break
            if j < rlo:
                rlo = j
            elif j > rhi:
                rhi = j
            if inq[j] == 0:
                q[tail] = j
                tail = (tail + 1) % qcap
                qn += 1
                inq[j] = 1
    return t, status, rlo, rhi
