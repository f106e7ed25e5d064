"""Centralized orchestration: Jacobi inner loop over bucket fills, dual ascent outer loop."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .bucketfill import _fill_kernel
from .crp import CrpInstance, DualVector, RoutingVector, objective

__all__ = ["SolverConfig", "SolveReport", "dqa_solve_primal", "dual_step", "solve_crp"]


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.0
    alpha: float = 0.5
    eps_inner: float = 1e-6
    eps_outer: float = 1e-6
    max_inner: int = 500
    max_outer: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.eps_inner <= 0 or self.eps_outer <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class SolveReport:
    routing: RoutingVector
    duals: DualVector
    outer_iterations: int
    inner_iterations_total: int
    residual_history: list[float]
    objective: float
    converged: bool
    inner_shortfalls: int = 0  # inner loops that hit the iteration cap

    def to_json(self) -> str:
        doc = {
            "routing": self.routing.to_triplets(),
            "duals": {str(k): v for k, v in sorted(self.duals.items())},
            "outer_iterations": self.outer_iterations,
            "inner_iterations_total": self.inner_iterations_total,
            "residual_history": self.residual_history,
            "objective": self.objective,
            "converged": self.converged,
            "inner_shortfalls": self.inner_shortfalls,
        }
        return json.dumps(doc, sort_keys=True)


@dataclass
class _Arrays:
    """Flat CSR view of an instance for the compiled loops.

    Pairs are ordered by (station index, region-file index); ``q_pairs`` lists
    each region-file's pair positions in ascending station order, which fixes
    the floating-point summation order shared with the agent runtime.
    """

    station_ids: list[int]
    q_ids: list[int]
    N: np.ndarray  # demand per region-file index
    wu: np.ndarray  # utility weight per station index
    vu: np.ndarray  # utility soft limit per station index
    st_ptr: np.ndarray
    pair_q: np.ndarray
    pair_station: np.ndarray
    q_ptr: np.ndarray
    q_pairs: np.ndarray
    pair_keys: list[tuple[int, int]]  # (station id, region-file id) per pair


def _compiled(instance: CrpInstance) -> _Arrays:
    if instance._arrays is not None:
        return instance._arrays
    station_ids = sorted(instance.station_ids)
    st_index = {m: i for i, m in enumerate(station_ids)}
    q_sorted = sorted(instance.region_files, key=lambda q: q.id)
    q_ids = [q.id for q in q_sorted]
    q_index = {qid: i for i, qid in enumerate(q_ids)}

    N = np.array([q.demand for q in q_sorted], dtype=float)
    wu = np.array([instance.utilities[m].weight for m in station_ids])
    vu = np.array([instance.utilities[m].soft_limit for m in station_ids])

    st_ptr = [0]
    pair_q = []
    pair_station = []
    pair_keys = []
    for m in station_ids:
        for qid in instance.served_by(m):
            pair_q.append(q_index[qid])
            pair_station.append(st_index[m])
            pair_keys.append((m, qid))
        st_ptr.append(len(pair_q))
    pair_q = np.array(pair_q, dtype=np.int64)
    pair_station = np.array(pair_station, dtype=np.int64)
    st_ptr = np.array(st_ptr, dtype=np.int64)

    per_q: list[list[int]] = [[] for _ in q_ids]
    for p, qi in enumerate(pair_q):
        per_q[qi].append(p)  # pairs already ascend by station within each q
    q_ptr = [0]
    q_pairs = []
    for lst in per_q:
        q_pairs.extend(lst)
        q_ptr.append(len(q_pairs))
    arrays = _Arrays(
        station_ids=station_ids,
        q_ids=q_ids,
        N=N,
        wu=wu,
        vu=vu,
        st_ptr=st_ptr,
        pair_q=pair_q,
        pair_station=pair_station,
        q_ptr=np.array(q_ptr, dtype=np.int64),
        q_pairs=np.array(q_pairs, dtype=np.int64),
        pair_keys=pair_keys,
    )
    instance._arrays = arrays
    return arrays


@njit(cache=True)
def _sweep(y, lam, N, st_ptr, pair_q, q_ptr, q_pairs, wu, vu, rho, alpha):  # pragma: no cover
    """One Jacobi round: every station's bucket fill from the shared iterate."""
    n_st = st_ptr.size - 1
    ystar = np.empty_like(y)
    for m in range(n_st):
        s, e = st_ptr[m], st_ptr[m + 1]
        nq = e - s
        if nq == 0:
            continue
        a = np.empty(nq)
        cap = np.empty(nq)
        for i in range(nq):
            p = s + i
            qi = pair_q[p]
            claimed = 0.0
            for jj in range(q_ptr[qi], q_ptr[qi + 1]):
                pp = q_pairs[jj]
                if pp != p:
                    claimed += y[pp]
            a[i] = lam[qi] + rho * (N[qi] - claimed)
            cap[i] = N[qi]
        yloc, _ = _fill_kernel(a, cap, wu[m], vu[m], rho)
        for i in range(nq):
            ystar[s + i] = yloc[i]
    delta = 0.0
    for p in range(y.size):
        newv = y[p] + alpha * (ystar[p] - y[p])
        d = abs(newv - y[p])
        if d > delta:
            delta = d
        y[p] = newv
    return delta


@njit(cache=True)
def _dqa_inner(y, lam, N, st_ptr, pair_q, q_ptr, q_pairs, wu, vu,
               rho, alpha, eps_inner, max_inner):  # pragma: no cover
    iters = 0
    converged = False
    for _ in range(max_inner):
        delta = _sweep(y, lam, N, st_ptr, pair_q, q_ptr, q_pairs, wu, vu, rho, alpha)
        iters += 1
        if delta <= eps_inner:
            converged = True
            break
    return iters, converged


@njit(cache=True)
def _served(y, q_ptr, q_pairs):  # pragma: no cover
    nq = q_ptr.size - 1
    out = np.zeros(nq)
    for qi in range(nq):
        tot = 0.0
        for jj in range(q_ptr[qi], q_ptr[qi + 1]):
            tot += y[q_pairs[jj]]
        out[qi] = tot
    return out


def _flat_from_routing(arrays: _Arrays, y: RoutingVector | None) -> np.ndarray:
    flat = np.zeros(len(arrays.pair_keys))
    if y is not None:
        for p, key in enumerate(arrays.pair_keys):
            v = y.entries.get(key)
            if v is not None:
                flat[p] = v
    return flat


def _routing_from_flat(arrays: _Arrays, flat: np.ndarray) -> RoutingVector:
    return RoutingVector({key: float(v) for key, v in zip(arrays.pair_keys, flat)})


def _lam_array(arrays: _Arrays, lam: DualVector) -> np.ndarray:
    return np.array([lam.get(qid, 0.0) for qid in arrays.q_ids], dtype=float)


def dqa_solve_primal(
    instance: CrpInstance,
    lam: DualVector,
    cfg: SolverConfig,
    warm_start: RoutingVector | None = None,
) -> RoutingVector:
    """Jacobi-relaxed fixed point of the per-station bucket fills at fixed prices."""
    arrays = _compiled(instance)
    y = _flat_from_routing(arrays, warm_start)
    lam_arr = _lam_array(arrays, lam)
    _dqa_inner(
        y, lam_arr, arrays.N, arrays.st_ptr, arrays.pair_q, arrays.q_ptr,
        arrays.q_pairs, arrays.wu, arrays.vu,
        cfg.rho, cfg.alpha, cfg.eps_inner, cfg.max_inner,
    )
    return _routing_from_flat(arrays, y)


def dual_step(
    lam: DualVector, y_star: RoutingVector, instance: CrpInstance, rho: float
) -> DualVector:
    """Price ascent on the constraint residuals: lam + rho * (N - served)."""
    out = dict(lam)
    for q in instance.region_files:
        served = 0.0
        for m in sorted(q.eligible):
            served += y_star.get(m, q.id)
        out[q.id] = lam.get(q.id, 0.0) + rho * (q.demand - served)
    return out


def solve_crp(instance: CrpInstance, cfg: SolverConfig | None = None) -> SolveReport:
    """Full solve: alternate the Jacobi primal loop with dual price updates.

    Prices start at zero; each primal loop is warm-started from the previous
    outer iteration. Stops when the price vector moves less than
    ``eps_outer`` in the max norm, or after ``max_outer`` rounds
    (``converged=False``, best iterate returned).
    """
    if cfg is None:
        cfg = SolverConfig()
    arrays = _compiled(instance)
    y = np.zeros(len(arrays.pair_keys))
    lam = np.zeros(len(arrays.q_ids))
    history: list[float] = []
    inner_total = 0
    inner_shortfalls = 0
    converged = False
    outer = 0
    for _ in range(cfg.max_outer):
        iters, inner_ok = _dqa_inner(
            y, lam, arrays.N, arrays.st_ptr, arrays.pair_q, arrays.q_ptr,
            arrays.q_pairs, arrays.wu, arrays.vu,
            cfg.rho, cfg.alpha, cfg.eps_inner, cfg.max_inner,
        )
        inner_total += iters
        if not inner_ok:
            inner_shortfalls += 1
        served = _served(y, arrays.q_ptr, arrays.q_pairs)
        resid = arrays.N - served
        history.append(float(np.max(np.abs(resid))) if resid.size else 0.0)
        lam = lam + cfg.rho * resid
        outer += 1
        if resid.size == 0 or float(np.max(np.abs(cfg.rho * resid))) <= cfg.eps_outer:
            converged = True
            break

    routing = _routing_from_flat(arrays, y)
    duals = {qid: float(v) for qid, v in zip(arrays.q_ids, lam)}
    return SolveReport(
        routing=routing,
        duals=duals,
        outer_iterations=outer,
        inner_iterations_total=inner_total,
        residual_history=history,
        objective=objective(instance, routing),
        converged=converged,
        inner_shortfalls=inner_shortfalls,
    )
