"""Exact per-station subproblem solver: the bucket-filling water-level sweep.

The per-station problem is

    maximize  U(sum_q y_q) - sum_q (rho/2 * y_q**2 - a_q * y_q)   over 0 <= y <= N.

Geometrically each region-file is a bucket of height N_q whose bottom sits at
depth (a_max - a_q) / rho; raising a common water level w fills buckets from
the deepest bottom up, and the allocation is y_q = clip(w - bottom_q, 0, N_q).
Along the sweep the common gradient of all active buckets is

    h(w) = U'(V(w)) - rho * w + a_max,

which is strictly decreasing, so the optimum is the unique water level where
h crosses zero (or where every bucket is full first). The sweep visits the
O(|Q|) activation/saturation events in sorted order, giving O(|Q| log |Q|)
total work.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .crp import (
    ConfigurationError,
    CrpInstance,
    DualVector,
    RoutingVector,
    UtilitySpec,
)

__all__ = [
    "Bucket",
    "BucketFillResult",
    "local_coefficients",
    "bucket_fill",
    "water_level_root",
]


@dataclass(frozen=True)
class Bucket:
    """One region-file of a station subproblem: linear coefficient and capacity."""

    region_file: int
    coefficient: float
    capacity: float

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("bucket capacity must be nonnegative")


@dataclass
class BucketFillResult:
    allocation: dict[int, float]
    water_level: float | None
    active_at_termination: frozenset[int]


def local_coefficients(
    m: int,
    instance: CrpInstance,
    y_tilde: RoutingVector,
    lam: DualVector,
    rho: float,
) -> list[Bucket]:
    """Buckets for station m given the shared iterate and prices.

    The coefficient is lam_q + rho * (demand not claimed by the other eligible
    stations in ``y_tilde``); the unclaimed part may be negative, which simply
    lowers the coefficient.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    buckets = []
    for qid in instance.served_by(m):
        q = instance.region_file(qid)
        claimed = 0.0
        for other in sorted(q.eligible):
            if other != m:
                claimed += y_tilde.get(other, qid)
        nbar = q.demand - claimed
        buckets.append(
            Bucket(region_file=qid, coefficient=lam.get(qid, 0.0) + rho * nbar,
                   capacity=q.demand)
        )
    return buckets


@njit(cache=True)
def _fill_kernel(a, cap, wu, vu, rho):  # pragma: no cover - exercised via wrappers
    """Water-level sweep for the weighted-log utility; returns (y, water_level)."""
    n = a.size
    y = np.zeros(n)
    if n == 0:
        return y, 0.0
    amax = a[0]
    npos = 0
    for i in range(n):
        if a[i] > amax:
            amax = a[i]
        if cap[i] > 0.0:
            npos += 1
    if npos == 0:
        return y, 0.0

    # event levels: bucket bottoms (slope +1) and rims (slope -1)
    levels = np.empty(2 * npos)
    deltas = np.empty(2 * npos, dtype=np.int64)
    j = 0
    for i in range(n):
        if cap[i] > 0.0:
            b = (amax - a[i]) / rho
            levels[j] = b
            deltas[j] = 1
            levels[npos + j] = b + cap[i]
            deltas[npos + j] = -1
            j += 1
    order = np.argsort(levels)

    k = 0  # number of active buckets = slope of V(w)
    vol = 0.0
    wprev = levels[order[0]]
    w = -1.0
    found = False
    for ii in range(2 * npos):
        lv = levels[order[ii]]
        vol += k * (lv - wprev)
        h = wu / (vu + vol) - rho * lv + amax
        if h <= 0.0:
            if ii == 0:
                w = lv  # gradient nonpositive before any filling
            else:
                v0 = vol - k * (lv - wprev)
                w = _segment_root(v0, k, wprev, wu, vu, rho, amax)
                if w < wprev:
                    w = wprev
                elif w > lv:
                    w = lv
            found = True
            break
        k += deltas[order[ii]]
        wprev = lv
    if not found:
        # all buckets full before the gradient turns: stationarity beyond the rim
        w = (amax + wu / (vu + vol)) / rho
        if w < wprev:
            w = wprev

    for i in range(n):
        if cap[i] > 0.0:
            fill = w - (amax - a[i]) / rho
            if fill < 0.0:
                fill = 0.0
            elif fill > cap[i]:
                fill = cap[i]
            y[i] = fill
    return y, w


@njit(cache=True)
def _segment_root(v0, k, w0, wu, vu, rho, amax):  # pragma: no cover
    """Solve wu / (vu + v0 + k*(w - w0)) = rho*w - amax for w within a segment."""
    if k == 0:
        return (amax + wu / (vu + v0)) / rho
    acoef = vu + v0 - k * w0
    b = acoef * rho - k * amax
    disc = b * b + 4.0 * k * rho * (acoef * amax + wu)
    if disc < 0.0:
        disc = 0.0
    return (-b + math.sqrt(disc)) / (2.0 * k * rho)


def _check_concave(utility) -> None:
    probes = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0]
    derivs = [utility.derivative(v) for v in probes]
    if any(d2 >= d1 for d1, d2 in zip(derivs, derivs[1:])):
        raise ConfigurationError("utility derivative must be strictly decreasing")
    if any(d <= 0 for d in derivs):
        raise ConfigurationError("utility derivative must be positive")


def water_level_root(active_volume_fn, utility, rho, a_max, bracket):
    """Root of U'(V(w)) - rho*w + a_max on a bracket, or None if no sign change.

    ``active_volume_fn`` maps a water level to the filled volume and must be
    nondecreasing on the bracket; the residual is then strictly decreasing and
    plain bisection is safe. The returned level satisfies the stationarity
    equation to 1e-12.
    """
    w_lo, w_hi = bracket
    if w_lo > w_hi:
        raise ValueError("invalid bracket: w_lo > w_hi")

    def h(w):
        return utility.derivative(active_volume_fn(w)) - rho * w + a_max

    h_lo = h(w_lo)
    if h_lo <= 0.0:
        return float(w_lo) if abs(h_lo) <= 1e-12 else None
    h_hi = h(w_hi)
    if h_hi > 0.0:
        return None
    lo, hi = float(w_lo), float(w_hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if h(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    root = hi if abs(h(hi)) < abs(h(lo)) else lo
    if abs(h(root)) > 1e-12:
        # fall back to the endpoint with the smaller residual; the bracket is
        # exhausted at float resolution so this is as good as it gets
        root = min((lo, hi), key=lambda w: abs(h(w)))
    return float(root)


def _fill_generic(a, cap, utility, rho, trace=None):
    """Event sweep for arbitrary concave utilities; bisection for segment roots."""
    n = a.size
    y = np.zeros(n)
    if n == 0 or not np.any(cap > 0):
        return y, 0.0
    amax = float(a.max())
    pos = cap > 0
    bottoms = (amax - a[pos]) / rho
    levels = np.concatenate([bottoms, bottoms + cap[pos]])
    deltas = np.concatenate([np.ones(pos.sum(), int), -np.ones(pos.sum(), int)])
    order = np.argsort(levels, kind="stable")

    k = 0
    vol = 0.0
    wprev = float(levels[order[0]])
    w = None
    events = []
    for nseen, ii in enumerate(order):
        lv = float(levels[ii])
        vol += k * (lv - wprev)
        h = utility.derivative(vol) - rho * lv + amax
        if h <= 0.0:
            if nseen == 0:
                w = lv
            else:
                v0 = vol - k * (lv - wprev)
                kk = k

                def vol_at(wq, _v0=v0, _kk=kk, _w0=wprev):
                    return _v0 + _kk * (wq - _w0)

                w = water_level_root(vol_at, utility, rho, amax, (wprev, lv))
                if w is None:
                    w = lv
            if trace is not None:
                events.append({"event": "stationarity", "level": w})
            break
        if trace is not None:
            events.append(
                {
                    "event": "activation" if deltas[ii] > 0 else "saturation",
                    "level": lv,
                    "volume": vol,
                }
            )
        k += int(deltas[ii])
        wprev = lv
    if w is None:
        # every bucket saturated with the gradient still positive
        w = (amax + utility.derivative(vol)) / rho
        w = max(w, wprev)
        if trace is not None:
            events.append({"event": "stationarity", "level": w})

    fill = np.clip(w - (amax - a) / rho, 0.0, cap)
    y[:] = np.where(cap > 0, fill, 0.0)
    if trace is not None:
        for ev in events:
            trace.write(json.dumps(ev) + "\n")
    return y, float(w)


def bucket_fill(
    buckets: list[Bucket],
    utility,
    rho: float,
    trace=None,
) -> BucketFillResult:
    """Solve the per-station subproblem exactly.

    ``utility`` is a :class:`~cachefair.crp.UtilitySpec` or any object exposing
    ``value``/``derivative`` with a strictly decreasing positive derivative.
    With ``trace`` set to a writable text stream, one JSON line per sweep
    event (activation / saturation / stationarity) is emitted.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if not buckets:
        return BucketFillResult(allocation={}, water_level=None,
                                active_at_termination=frozenset())
    a = np.array([b.coefficient for b in buckets], dtype=float)
    cap = np.array([b.capacity for b in buckets], dtype=float)

    if isinstance(utility, UtilitySpec) and trace is None:
        y, w = _fill_kernel(a, cap, utility.weight, utility.soft_limit, rho)
    else:
        _check_concave(utility)
        y, w = _fill_generic(a, cap, utility, rho, trace=trace)

    amax = float(a.max())
    active = frozenset(
        b.region_file
        for b, yi in zip(buckets, y)
        if b.capacity > 0 and (amax - b.coefficient) / rho <= w and yi < b.capacity
    )
    allocation = {b.region_file: float(yi) for b, yi in zip(buckets, y)}
    return BucketFillResult(allocation=allocation, water_level=float(w),
                            active_at_termination=active)
