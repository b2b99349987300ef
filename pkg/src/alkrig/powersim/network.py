"""Static network algebra: admittance matrices, power flow, Kron reduction."""

from __future__ import annotations

import numpy as np

__all__ = [
    "PowersimError",
    "PowerFlowError",
    "ReductionError",
    "build_ybus",
    "kron_reduce",
    "newton_pf",
]


class PowersimError(RuntimeError):
    """Base class for evaluator-side failures."""


class PowerFlowError(PowersimError):
    """Newton power flow failed to converge."""


class ReductionError(PowersimError):
    """Kron elimination block is singular."""


def build_ybus(n_bus: int, branches, shunts=None) -> np.ndarray:
    """Assemble the bus admittance matrix from pi-model branches.

    ``branches`` yields tuples ``(i, j, r, x, b)`` with series impedance
    ``r + jx`` (p.u.) and total line-charging susceptance ``b``.  ``shunts``
    optionally yields ``(i, y)`` complex shunt admittances.
    """
    y = np.zeros((n_bus, n_bus), dtype=complex)
    for i, j, r, x, b in branches:
        ys = 1.0 / complex(r, x)
        ysh = 1j * b / 2.0
        y[i, i] += ys + ysh
        y[j, j] += ys + ysh
        y[i, j] -= ys
        y[j, i] -= ys
    if shunts is not None:
        for i, ysh in shunts:
            y[i, i] += ysh
    return y


def kron_reduce(y: np.ndarray, retained) -> np.ndarray:
    """Eliminate all nodes not in ``retained`` from admittance matrix ``y``.

    Returns ``Y_rr - Y_re Y_ee^-1 Y_er``; the reduced network reproduces the
    injections at the retained nodes for any terminal condition.
    """
    retained = np.asarray(retained, dtype=int)
    n = y.shape[0]
    eliminated = np.setdiff1d(np.arange(n), retained)
    if eliminated.size == 0:
        return y[np.ix_(retained, retained)].copy()
    y_rr = y[np.ix_(retained, retained)]
    y_re = y[np.ix_(retained, eliminated)]
    y_er = y[np.ix_(eliminated, retained)]
    y_ee = y[np.ix_(eliminated, eliminated)]
    try:
        x = np.linalg.solve(y_ee, y_er)
    except np.linalg.LinAlgError as exc:
        raise ReductionError("eliminated block is singular") from exc
    if not np.all(np.isfinite(x)):
        raise ReductionError("eliminated block is numerically singular")
    return y_rr - y_re @ x


def newton_pf(
    ybus: np.ndarray,
    v0: np.ndarray,
    p_set: np.ndarray,
    q_set: np.ndarray,
    slack: int,
    pv,
    pq,
    tol: float = 1e-8,
    max_iter: int = 40,
) -> np.ndarray:
    """Full Newton-Raphson power flow in polar coordinates.

    ``p_set``/``q_set`` are net scheduled injections (generation minus load,
    p.u.).  Returns the converged complex bus voltages; raises
    :class:`PowerFlowError` when the mismatch does not drop below ``tol``.
    """
    pv = np.asarray(pv, dtype=int)
    pq = np.asarray(pq, dtype=int)
    pvpq = np.concatenate([pv, pq])
    va = np.angle(v0).astype(float)
    vm = np.abs(v0).astype(float)

    for _ in range(max_iter):
        v = vm * np.exp(1j * va)
        ibus = ybus @ v
        s = v * np.conj(ibus)
        f = np.concatenate([(s.real - p_set)[pvpq], (s.imag - q_set)[pq]])
        if f.size == 0 or np.max(np.abs(f)) < tol:
            return v

        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vn = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dvm = diag_vn @ np.conj(diag_i) + diag_v @ np.conj(ybus @ diag_vn)

        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power-flow Jacobian") from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("non-finite Newton step")
        va[pvpq] -= dx[: pvpq.size]
        vm[pq] -= dx[pvpq.size :]

    raise PowerFlowError(f"no convergence after {max_iter} iterations")
