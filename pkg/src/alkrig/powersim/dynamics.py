"""Classical-model transient simulation and stability margins.

The expensive ground truth behind the surrogate: for a realization ``x`` of
the uncertain inputs, solve the pre-fault power flow, reduce the network to
the machine internal nodes (loads as constant impedance at the pre-fault
voltage, RES as negative loads), integrate the swing equations with fixed-step
RK4 through the fault-on and post-fault phases, and bisect on the fault
clearing time to obtain the critical clearing time.  The stability margin is
``T_cct(x) - t_fct``.

Everything is vectorized over samples: the bisection advances a whole batch of
realizations through shared integration sweeps, which is what makes
reference Monte Carlo runs with the built-in simulator tractable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..sampling import ConfigurationError, wind_power
from .cases import Contingency, GridCase
from .network import (
    PowerFlowError,
    PowersimError,
    ReductionError,
    build_ybus,
    kron_reduce,
    newton_pf,
)

__all__ = [
    "DEFAULT_STEP",
    "DEFAULT_THRESHOLD",
    "CctSearch",
    "TrajectoryResult",
    "CctBatchResult",
    "MarginBatchResult",
    "prepare_batch",
    "simulate",
    "compute_cct_batch",
    "compute_cct",
    "tsm_batch",
    "tsm",
    "SwingMarginEvaluator",
]

DEFAULT_STEP = 1.0e-3
DEFAULT_THRESHOLD = 2.0 * math.pi

CENSOR_NONE = 0
CENSOR_LOW = 1    # unstable already at the lower search bound
CENSOR_HIGH = 2   # still stable at the upper search bound


@dataclass(frozen=True)
class CctSearch:
    """Bisection bracket and tolerance for the critical clearing time."""

    lo: float = 0.0
    hi: float = 0.5
    tol: float | None = None  # None -> quarter cycle of the case frequency

    def resolve_tol(self, frequency_hz: float) -> float:
        tol = self.tol if self.tol is not None else 0.25 / frequency_hz
        if not tol > 0.0:
            raise ConfigurationError(f"bisection tolerance must be > 0, got {tol}")
        if self.hi < self.lo or self.lo < 0.0:
            raise ConfigurationError(f"bad search bracket [{self.lo}, {self.hi}]")
        return tol


@dataclass
class TrajectoryResult:
    """Time grid plus rotor angle/speed trajectories of one simulation."""

    t: np.ndarray        # (K,)
    delta: np.ndarray    # (K, m) rotor angles, rad
    omega: np.ndarray    # (K, m) speed deviations, rad/s
    spread: np.ndarray   # (K,) max pairwise angle difference, rad
    stable: bool
    blowup: bool = False


@dataclass
class _Prepared:
    """Per-sample reduced classical model data, stacked over a batch."""

    emag: np.ndarray     # (N, m)
    delta0: np.ndarray   # (N, m)
    pm: np.ndarray       # (N, m)
    y_pre: np.ndarray    # (N, m, m) complex
    y_fault: np.ndarray  # (N, m, m)
    y_post: np.ndarray   # (N, m, m)
    inv_2h: np.ndarray   # (m,) omega_s / 2H
    damping: np.ndarray  # (m,) D / omega_s
    omega_s: float
    ok: np.ndarray       # (N,) power flow + reduction succeeded
    failures: list       # [(sample index, message)]
    v_bus: np.ndarray    # (N, n_bus) complex pre-fault voltages

    def __len__(self) -> int:
        return self.emag.shape[0]


def _injected_loads(case: GridCase, x: np.ndarray,
                    apply_injections: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample bus load vectors (N, n_bus) after applying the injection map."""
    n = len(case.buses)
    N = x.shape[0]
    idx = case.bus_index
    p = np.zeros((N, n))
    q = np.zeros((N, n))
    for load in case.loads:
        p[:, idx[load.bus]] += load.p
        q[:, idx[load.bus]] += load.q
    if not apply_injections:
        return p, q
    for inj in case.injections:
        if inj.dim >= x.shape[1]:
            raise ConfigurationError(
                f"injection dimension {inj.dim} outside sample of size {x.shape[1]}"
            )
        b = idx[inj.bus]
        xi = x[:, inj.dim]
        if inj.kind == "load_scale":
            p[:, b] *= xi
            q[:, b] *= xi
        elif inj.kind == "wind":
            p[:, b] -= wind_power(inj.curve, xi) / case.base_mva
        else:  # solar, MW
            p[:, b] -= xi / case.base_mva
    return p, q


def _kron_batch(a: np.ndarray, retained: np.ndarray, ok: np.ndarray, failures: list, tag: str) -> np.ndarray:
    """Batched Kron reduction with per-sample failure isolation."""
    N = a.shape[0]
    eliminated = np.setdiff1d(np.arange(a.shape[1]), retained)
    if eliminated.size == 0:
        return a[:, retained[:, None], retained[None, :]].copy()
    a_rr = a[:, retained[:, None], retained[None, :]]
    a_re = a[:, retained[:, None], eliminated[None, :]]
    a_er = a[:, eliminated[:, None], retained[None, :]]
    a_ee = a[:, eliminated[:, None], eliminated[None, :]]
    try:
        sol = np.linalg.solve(a_ee, a_er)
        out = a_rr - a_re @ sol
        bad = ~np.isfinite(out).all(axis=(1, 2))
    except np.linalg.LinAlgError:
        out = np.empty_like(a_rr)
        bad = np.zeros(N, dtype=bool)
        for i in range(N):
            if not ok[i]:
                continue
            try:
                out[i] = kron_reduce(a[i], retained)
            except ReductionError:
                bad[i] = True
    for i in np.nonzero(bad & ok)[0]:
        failures.append((int(i), f"singular network reduction ({tag})"))
        ok[i] = False
    return out


def prepare_batch(case: GridCase, ctg: Contingency, x=None) -> _Prepared:
    """Pre-fault power flow, EMFs and reduced admittances for each sample.

    ``x`` is an (N, M) array of uncertain-input realizations, or ``None`` for
    a single run of the base case.  Samples whose power flow diverges are
    reported through ``failures`` and masked out via ``ok``; no exception is
    raised at batch level.
    """
    base_case = x is None
    if base_case:
        x = np.zeros((1, 0))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N = x.shape[0]
    n = len(case.buses)
    m = len(case.machines)
    idx = case.bus_index
    omega_s = case.omega_s

    slack = next(i for i, b in enumerate(case.buses) if b.type == "slack")
    pv = [i for i, b in enumerate(case.buses) if b.type == "pv"]
    pq = [i for i, b in enumerate(case.buses) if b.type == "pq"]
    mach_bus = np.array([idx[mm.bus] for mm in case.machines])

    lines_pre = [ln for ln in case.lines if ln.status]
    if not any(ln.id == ctg.tripped_line for ln in lines_pre):
        raise ConfigurationError(f"tripped line {ctg.tripped_line!r} is not in service")
    ctg.validate(case)
    fault = idx[ctg.fault_bus]

    def branches(lines):
        return [(idx[ln.from_bus], idx[ln.to_bus], ln.r, ln.x, ln.b) for ln in lines]

    y_net_pre = build_ybus(n, branches(lines_pre))
    y_net_post = build_ybus(n, branches([ln for ln in lines_pre if ln.id != ctg.tripped_line]))

    p_load, q_load = _injected_loads(case, x, apply_injections=not base_case)

    # scheduled net injections (PV machines at fixed P; slack free)
    p_gen = np.zeros(n)
    for mm in case.machines:
        if case.buses[idx[mm.bus]].type == "pv":
            p_gen[idx[mm.bus]] += mm.p_gen

    v0 = np.array([b.v_set for b in case.buses], dtype=complex)

    ok = np.ones(N, dtype=bool)
    failures: list = []
    v_bus = np.full((N, n), np.nan, dtype=complex)
    for i in range(N):
        try:
            v_bus[i] = newton_pf(
                y_net_pre, v0, p_gen - p_load[i], -q_load[i], slack, pv, pq
            )
        except PowersimError as exc:
            ok[i] = False
            failures.append((i, f"power flow failed: {exc}"))

    # machine internal EMFs and mechanical power
    emag = np.full((N, m), np.nan)
    delta0 = np.full((N, m), np.nan)
    xd = np.array([mm.xd_p for mm in case.machines])
    vm = np.where(ok[:, None], v_bus[:, mach_bus], 1.0)
    with np.errstate(invalid="ignore"):
        i_inj = np.einsum("ij,nj->ni", y_net_pre, np.where(ok[:, None], v_bus, 1.0))
        s_inj = np.where(ok[:, None], v_bus, 1.0) * np.conj(i_inj)
        s_gen = s_inj[:, mach_bus] + (p_load + 1j * q_load)[:, mach_bus]
        i_gen = np.conj(s_gen / vm)
        e = vm + 1j * xd[None, :] * i_gen
    emag[ok] = np.abs(e[ok])
    delta0[ok] = np.angle(e[ok])

    # loads (including RES negative loads) as constant impedance at |V|
    with np.errstate(invalid="ignore", divide="ignore"):
        y_load = (p_load - 1j * q_load) / np.abs(np.where(ok[:, None], v_bus, 1.0)) ** 2

    # augmented matrices: network buses 0..n-1, internal nodes n..n+m-1
    ym = 1.0 / (1j * xd)
    base = np.zeros((n + m, n + m), dtype=complex)
    for k in range(m):
        b = mach_bus[k]
        base[b, b] += ym[k]
        base[n + k, n + k] = ym[k]
        base[b, n + k] = base[n + k, b] = -ym[k]

    def augmented(y_net):
        a = np.broadcast_to(base, (N, n + m, n + m)).copy()
        a[:, :n, :n] += y_net[None, :, :]
        a[:, np.arange(n), np.arange(n)] += y_load
        return a

    internal = np.arange(n, n + m)
    a_pre = augmented(y_net_pre)
    y_pre = _kron_batch(a_pre, internal, ok, failures, "pre-fault")
    keep = np.array([j for j in range(n + m) if j != fault])
    y_fault = _kron_batch(a_pre[:, keep[:, None], keep[None, :]],
                          np.arange(keep.size - m, keep.size), ok, failures, "fault-on")
    y_post = _kron_batch(augmented(y_net_post), internal, ok, failures, "post-fault")

    # exact equilibrium: mechanical power from the reduced pre-fault network
    e0 = emag * np.exp(1j * delta0)
    with np.errstate(invalid="ignore"):
        pm = (e0 * np.conj(np.matmul(y_pre, e0[..., None])[..., 0])).real

    inv_2h = omega_s / (2.0 * np.array([mm.h for mm in case.machines]))
    damping = np.array([mm.d for mm in case.machines]) / omega_s
    return _Prepared(
        emag=emag, delta0=delta0, pm=pm,
        y_pre=y_pre, y_fault=y_fault, y_post=y_post,
        inv_2h=inv_2h, damping=damping, omega_s=omega_s,
        ok=ok, failures=failures, v_bus=v_bus,
    )


def _rk4_flags(emag, delta0, pm, y_fault, y_post, inv_2h, damping,
               n_fault, n_steps, h, threshold):
    """Integrate a batch; return (stable, blowup) flags per sample.

    ``n_fault[i]`` is the clearing step of sample ``i`` (0 = fault never
    applied, the post-fault network acts from the start).  Crossed samples
    are compacted away so heavily unstable batches exit early.
    """
    N, m = delta0.shape
    stable = np.ones(N, dtype=bool)
    blowup = np.zeros(N, dtype=bool)
    idx = np.arange(N)
    delta = delta0.copy()
    omega = np.zeros_like(delta)
    y_act = np.where((n_fault > 0)[:, None, None], y_fault, y_post)
    emag = emag.copy()
    pm = pm.copy()
    y_post = y_post.copy()
    nf = n_fault.copy()

    def deriv(dlt, omg, y):
        # tolerate non-finite states: they surface as a blow-up flag below
        with np.errstate(invalid="ignore", over="ignore"):
            e = emag * np.exp(1j * dlt)
            pe = (e * np.conj(np.matmul(y, e[..., None])[..., 0])).real
            return omg, inv_2h * (pm - pe - damping * omg)

    for k in range(n_steps):
        if k > 0:
            swap = nf == k
            if swap.any():
                y_act[swap] = y_post[swap]
        k1d, k1w = deriv(delta, omega, y_act)
        k2d, k2w = deriv(delta + 0.5 * h * k1d, omega + 0.5 * h * k1w, y_act)
        k3d, k3w = deriv(delta + 0.5 * h * k2d, omega + 0.5 * h * k2w, y_act)
        k4d, k4w = deriv(delta + h * k3d, omega + h * k3w, y_act)
        delta += (h / 6.0) * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
        omega += (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)

        spread = delta.max(axis=1) - delta.min(axis=1)
        bad = ~np.isfinite(spread)
        over = (spread > threshold) | bad
        if over.any():
            stable[idx[over]] = False
            blowup[idx[bad]] = True
            keep = ~over
            if not keep.any():
                break
            idx = idx[keep]
            delta = delta[keep]
            omega = omega[keep]
            y_act = y_act[keep]
            y_post = y_post[keep]
            emag = emag[keep]
            pm = pm[keep]
            nf = nf[keep]
    return stable, blowup


@dataclass
class CctBatchResult:
    values: np.ndarray    # (N,) critical clearing times, NaN where not ok
    censored: np.ndarray  # (N,) int8, CENSOR_* codes
    ok: np.ndarray        # (N,) evaluation succeeded
    blowup: np.ndarray    # (N,) numerical blow-up seen (classified unstable)
    nonmonotone: np.ndarray  # (N,) stable at hi but unstable at lo
    n_sims: int           # time-domain integrations performed
    failures: list


def compute_cct_batch(
    case: GridCase,
    ctg: Contingency,
    x=None,
    search: CctSearch = CctSearch(),
    h: float = DEFAULT_STEP,
    threshold: float = DEFAULT_THRESHOLD,
    prepared: _Prepared | None = None,
) -> CctBatchResult:
    """Bisection critical clearing time for every sample of a batch."""
    tol = search.resolve_tol(case.frequency_hz)
    prep = prepared if prepared is not None else prepare_batch(case, ctg, x)
    N = len(prep)
    if ctg.sim_duration <= ctg.t_fault_on + search.hi:
        raise ConfigurationError(
            f"sim_duration {ctg.sim_duration} too short for search bound {search.hi}"
        )
    n_steps = int(round((ctg.sim_duration - ctg.t_fault_on) / h))

    values = np.full(N, np.nan)
    censored = np.zeros(N, dtype=np.int8)
    blowup = np.zeros(N, dtype=bool)
    nonmono = np.zeros(N, dtype=bool)
    n_sims = 0

    def probe(rows: np.ndarray, t_fct: np.ndarray):
        nonlocal n_sims
        n_sims += rows.size
        nf = np.rint(np.asarray(t_fct) / h).astype(int)
        st, bl = _rk4_flags(
            prep.emag[rows], prep.delta0[rows], prep.pm[rows],
            prep.y_fault[rows], prep.y_post[rows],
            prep.inv_2h, prep.damping, nf, n_steps, h, threshold,
        )
        blowup[rows[bl]] = True
        return st

    rows = np.nonzero(prep.ok)[0]
    if rows.size == 0:
        return CctBatchResult(values, censored, prep.ok.copy(), blowup, nonmono,
                              n_sims, list(prep.failures))
    if search.hi == search.lo:
        values[rows] = search.lo
        return CctBatchResult(values, censored, prep.ok.copy(), blowup, nonmono,
                              n_sims, list(prep.failures))

    stable_hi = probe(rows, np.full(rows.size, search.hi))
    stable_lo = probe(rows, np.full(rows.size, search.lo))

    cens_hi = rows[stable_hi]
    values[cens_hi] = search.hi
    censored[cens_hi] = CENSOR_HIGH
    nonmono[rows[stable_hi & ~stable_lo]] = True

    cens_lo = rows[~stable_hi & ~stable_lo]
    values[cens_lo] = search.lo
    censored[cens_lo] = CENSOR_LOW

    active = rows[~stable_hi & stable_lo]
    if active.size:
        lo_v = np.full(active.size, search.lo)
        hi_v = np.full(active.size, search.hi)
        while np.max(hi_v - lo_v) > tol:
            mid = 0.5 * (lo_v + hi_v)
            st = probe(active, mid)
            lo_v[st] = mid[st]
            hi_v[~st] = mid[~st]
        values[active] = lo_v
    return CctBatchResult(values, censored, prep.ok.copy(), blowup, nonmono,
                          n_sims, list(prep.failures))


def compute_cct(case, ctg, x=None, search: CctSearch = CctSearch(),
                h: float = DEFAULT_STEP, threshold: float = DEFAULT_THRESHOLD):
    """Critical clearing time of a single realization.

    Returns ``(t_cct, censored)`` where ``censored`` is ``None``, ``"low"``
    or ``"high"``.  Raises on power-flow failure.
    """
    res = compute_cct_batch(case, ctg, _as_row(x), search=search, h=h, threshold=threshold)
    if not res.ok[0]:
        raise PowerFlowError(res.failures[0][1] if res.failures else "evaluation failed")
    labels = {CENSOR_NONE: None, CENSOR_LOW: "low", CENSOR_HIGH: "high"}
    return float(res.values[0]), labels[int(res.censored[0])]


@dataclass
class MarginBatchResult:
    values: np.ndarray    # (N,) stability margins T_cct - t_fct, NaN on failure
    censored: np.ndarray
    ok: np.ndarray
    blowup: np.ndarray
    nonmonotone: np.ndarray
    n_sims: int
    failures: list


def tsm_batch(case, ctg, x=None, search: CctSearch = CctSearch(),
              h: float = DEFAULT_STEP, threshold: float = DEFAULT_THRESHOLD,
              prepared: _Prepared | None = None) -> MarginBatchResult:
    """Transient stability margin for every sample of a batch."""
    res = compute_cct_batch(case, ctg, x, search=search, h=h, threshold=threshold,
                            prepared=prepared)
    return MarginBatchResult(
        values=res.values - ctg.t_fct,
        censored=res.censored, ok=res.ok, blowup=res.blowup,
        nonmonotone=res.nonmonotone, n_sims=res.n_sims, failures=res.failures,
    )


def tsm(case, ctg, x=None, search: CctSearch = CctSearch(),
        h: float = DEFAULT_STEP, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Stability margin ``T_cct(x) - t_fct`` (s) of a single realization."""
    cct, _ = compute_cct(case, ctg, x, search=search, h=h, threshold=threshold)
    return cct - ctg.t_fct


def simulate(case, ctg, x=None, h: float = DEFAULT_STEP,
             threshold: float = DEFAULT_THRESHOLD) -> TrajectoryResult:
    """Time-domain simulation of one realization through the full contingency.

    The pre-fault segment is the exact classical equilibrium and is emitted
    without integration; integration starts at ``t_fault_on``, switches to the
    post-fault network after ``t_fct`` and stops early once the angle spread
    crosses the instability threshold.
    """
    ctg.validate(case)
    prep = prepare_batch(case, ctg, _as_row(x))
    if not prep.ok[0]:
        raise PowerFlowError(prep.failures[0][1])
    n_pre = int(round(ctg.t_fault_on / h))
    nf = int(round(ctg.t_fct / h))
    n_dyn = int(round((ctg.sim_duration - ctg.t_fault_on) / h))

    m = prep.emag.shape[1]
    delta_traj = np.empty((n_pre + n_dyn + 1, m))
    omega_traj = np.empty_like(delta_traj)
    delta_traj[: n_pre + 1] = prep.delta0[0]
    omega_traj[: n_pre + 1] = 0.0

    emag, pm = prep.emag[0], prep.pm[0]
    inv_2h, damping = prep.inv_2h, prep.damping
    y_fault, y_post = prep.y_fault[0], prep.y_post[0]

    def deriv(dlt, omg, y):
        e = emag * np.exp(1j * dlt)
        pe = (e * np.conj(y @ e)).real
        return omg, inv_2h * (pm - pe - damping * omg)

    delta = prep.delta0[0].copy()
    omega = np.zeros(m)
    stable = True
    blowup = False
    last = n_pre + n_dyn
    for k in range(n_dyn):
        y = y_fault if k < nf else y_post
        k1d, k1w = deriv(delta, omega, y)
        k2d, k2w = deriv(delta + 0.5 * h * k1d, omega + 0.5 * h * k1w, y)
        k3d, k3w = deriv(delta + 0.5 * h * k2d, omega + 0.5 * h * k2w, y)
        k4d, k4w = deriv(delta + h * k3d, omega + h * k3w, y)
        delta = delta + (h / 6.0) * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
        omega = omega + (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        delta_traj[n_pre + k + 1] = delta
        omega_traj[n_pre + k + 1] = omega
        spread_k = delta.max() - delta.min()
        if not np.isfinite(spread_k):
            stable, blowup, last = False, True, n_pre + k + 1
            break
        if spread_k > threshold:
            stable, last = False, n_pre + k + 1
            break

    delta_traj = delta_traj[: last + 1]
    omega_traj = omega_traj[: last + 1]
    t = np.arange(last + 1) * h
    spread = delta_traj.max(axis=1) - delta_traj.min(axis=1)
    return TrajectoryResult(t=t, delta=delta_traj, omega=omega_traj,
                            spread=spread, stable=stable, blowup=blowup)


def _as_row(x):
    if x is None:
        return None
    x = np.asarray(x, dtype=float)
    return x.reshape(1, -1)


class SwingMarginEvaluator:
    """Batch stability-margin evaluator backed by the built-in simulator.

    Deterministic per sample and safe to call from several threads; `workers`
    splits large batches into chunks evaluated concurrently (results are
    reassembled in input order, so the output does not depend on `workers`).
    """

    def __init__(self, case: GridCase, ctg: Contingency,
                 search: CctSearch = CctSearch(), h: float = DEFAULT_STEP,
                 threshold: float = DEFAULT_THRESHOLD, workers: int = 1):
        case.validate()
        ctg.validate(case)
        self.case = case
        self.ctg = ctg
        self.search = search
        self.h = h
        self.threshold = threshold
        self.workers = max(1, int(workers))
        self.n_calls = 0
        self.n_sims = 0
        self.n_censored = 0
        self.failures: list = []

    def _eval_chunk(self, x: np.ndarray) -> MarginBatchResult:
        return tsm_batch(self.case, self.ctg, x, search=self.search,
                         h=self.h, threshold=self.threshold)

    def margins(self, x: np.ndarray) -> np.ndarray:
        """Margins for an (N, M) batch; NaN marks failed samples."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        if n == 0:
            return np.empty(0)
        chunks = np.array_split(np.arange(n), min(self.workers, n))
        if len(chunks) == 1:
            results = [self._eval_chunk(x)]
        else:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                results = list(pool.map(lambda r: self._eval_chunk(x[r]), chunks))
        out = np.concatenate([r.values for r in results])
        offset = 0
        for r, rows in zip(results, chunks):
            for i, msg in r.failures:
                self.failures.append((int(rows[i]) if rows.size else i, msg))
            self.n_sims += r.n_sims
            self.n_censored += int(np.count_nonzero(r.censored))
            offset += rows.size
        self.n_calls += n
        return out
