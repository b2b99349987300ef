import json

import numpy as np
import pytest

from alkrig.sampling import ConfigurationError, Group, Marginal, UncertaintySpec, mc_sample
from alkrig.powersim import (
    Contingency,
    CctSearch,
    GridCase,
    PowerFlowError,
    ReductionError,
    SwingMarginEvaluator,
    build_ybus,
    compute_cct,
    compute_cct_batch,
    kron_reduce,
    newton_pf,
    nine_bus,
    simulate,
    smib,
    tsm,
    tsm_batch,
)
from alkrig.powersim.dynamics import _rk4_flags, prepare_batch


SMIB_CTG = Contingency(fault_bus="m1", tripped_line="L1", t_fct=0.10,
                       t_fault_on=0.5, sim_duration=3.0)


def smib_hand_oracle(p=0.9, x_line=0.4, xd1=0.3, xd2=1e-3, h=3.0, f=60.0):
    """Equal-area CCT for the built-in SMIB case, by hand complex algebra.

    Pre-fault: two parallel lines (x_line each); post-fault: one line.  The
    fault sits at the machine terminal bus, so fault-on electrical power is
    exactly zero and the fault-on trajectory is the textbook parabola.
    """
    x_pre = x_line / 2.0
    phi = np.arcsin(p * x_pre)                 # 2-bus power flow, |V| = 1 both ends
    v1, v2 = np.exp(1j * phi), 1.0 + 0j
    i12 = (v1 - v2) / (1j * x_pre)
    e1 = v1 + 1j * xd1 * i12
    e2 = v2 - 1j * xd2 * i12
    d0 = np.angle(e1) - np.angle(e2)
    pmax_post = abs(e1) * abs(e2) / (xd1 + x_line + xd2)
    d_max = np.pi - np.arcsin(p / pmax_post)
    d_cr = np.arccos(np.cos(d_max) + (p / pmax_post) * (d_max - d0))
    omega_s = 2.0 * np.pi * f
    t_cr = np.sqrt(4.0 * h * (d_cr - d0) / (omega_s * p))
    return {"d0": d0, "e1": e1, "e2": e2, "pmax_post": pmax_post, "t_cr": t_cr}


# ---------------------------------------------------------------------------
# Kron reduction
# ---------------------------------------------------------------------------

def test_kron_identity_when_nothing_eliminated():
    y = build_ybus(3, [(0, 1, 0.01, 0.1, 0.0), (1, 2, 0.02, 0.2, 0.0)])
    np.testing.assert_allclose(kron_reduce(y, [0, 1, 2]), y)


def test_kron_chain_series_combination():
    ya = 1.0 / complex(0.0, 0.3)
    yb = 1.0 / complex(0.0, 0.5)
    y = np.array([
        [ya, -ya, 0],
        [-ya, ya + yb, -yb],
        [0, -yb, yb],
    ])
    red = kron_reduce(y, [0, 2])
    series = ya * yb / (ya + yb)   # reactances add: 0.3 + 0.5
    np.testing.assert_allclose(red[0, 1], -series, rtol=1e-12)
    np.testing.assert_allclose(red[0, 0], series, rtol=1e-12)


def test_kron_singular_isolated_node():
    y = np.zeros((3, 3), dtype=complex)
    y[0, 0] = y[1, 1] = 1.0
    y[0, 1] = y[1, 0] = -1.0
    with pytest.raises(ReductionError):
        kron_reduce(y, [0, 1])  # node 2 has zero self/coupling admittance


# ---------------------------------------------------------------------------
# power flow
# ---------------------------------------------------------------------------

def test_newton_pf_two_bus_closed_form():
    x_line = 0.2
    y = build_ybus(2, [(0, 1, 0.0, x_line, 0.0)])
    p = 0.9
    v = newton_pf(y, np.array([1.0 + 0j, 1.0 + 0j]), np.array([0.0, p]),
                  np.zeros(2), slack=0, pv=[1], pq=[])
    delta = np.angle(v[1])
    assert delta == pytest.approx(np.arcsin(p * x_line), abs=1e-10)
    s = v * np.conj(y @ v)
    assert abs(s[1].real - p) < 1e-8


def test_newton_pf_divergence():
    y = build_ybus(2, [(0, 1, 0.0, 0.2, 0.0)])
    with pytest.raises(PowerFlowError):
        newton_pf(y, np.array([1.0 + 0j, 1.0 + 0j]), np.array([0.0, -50.0]),
                  np.array([0.0, -50.0]), slack=0, pv=[], pq=[1])


# ---------------------------------------------------------------------------
# pre-fault operating point
# ---------------------------------------------------------------------------

def test_prefault_zero_transfer():
    prep = prepare_batch(smib(p_transfer=0.0), SMIB_CTG)
    assert prep.ok[0]
    d1, d2 = prep.delta0[0]
    assert abs(d1 - d2) < 1e-9
    assert abs(prep.pm[0][0]) < 1e-9


def test_prefault_smib_angle_closed_form():
    oracle = smib_hand_oracle()
    prep = prepare_batch(smib(), SMIB_CTG)
    d0 = prep.delta0[0][0] - prep.delta0[0][1]
    assert d0 == pytest.approx(oracle["d0"], abs=1e-9)
    assert prep.emag[0][0] == pytest.approx(abs(oracle["e1"]), abs=1e-9)
    assert prep.pm[0][0] == pytest.approx(0.9, abs=1e-7)


def test_prefault_infeasible_sample_reports_failure():
    case = nine_bus()
    x = np.array([[60.0, 1.0, 1.0, 10.0], [1.0, 1.0, 1.0, 10.0]])
    ctg = Contingency("7", "5-7", t_fct=0.1, t_fault_on=0.2, sim_duration=1.0)
    prep = prepare_batch(case, ctg, x)
    assert not prep.ok[0] and prep.ok[1]
    assert any("power flow" in msg for _, msg in prep.failures)


# ---------------------------------------------------------------------------
# time-domain simulation
# ---------------------------------------------------------------------------

def test_simulate_vanishing_disturbance_stays_stable():
    # an almost-instantly cleared fault (the line still trips) must leave the
    # system swinging gently in the post-trip basin, nowhere near the threshold
    ctg = Contingency("m1", "L2", t_fct=2e-3, t_fault_on=0.2, sim_duration=1.0)
    case = smib()
    res = simulate(case, ctg, None)
    assert res.stable
    prep = prepare_batch(case, ctg)
    d0_spread = prep.delta0[0].max() - prep.delta0[0].min()
    assert res.spread.max() < d0_spread + 0.5


def test_simulate_damped_case_relative_swings_decay():
    ctg = Contingency("7", "7-8", t_fct=1e-3, t_fault_on=0.2, sim_duration=6.0)
    case = nine_bus()
    res = simulate(case, ctg)
    assert res.stable
    assert abs(res.spread[-1] - res.spread[0]) < 0.2
    # inter-machine swings decay; the center-of-inertia frequency may drift
    # (impedance loads shed power as voltages change, and there is no governor)
    h = np.array([m.h for m in case.machines])
    coi = (res.omega * h).sum(axis=1) / h.sum()
    rel = np.abs(res.omega - coi[:, None]).max(axis=1)
    assert rel[-500:].max() < 0.6 * rel.max()


def test_simulate_unstable_beyond_critical_and_early_exit():
    ctg = Contingency("m1", "L1", t_fct=0.3, t_fault_on=0.5, sim_duration=4.0)
    res = simulate(smib(), ctg)
    assert not res.stable
    assert res.spread[-1] > 2.0 * np.pi
    assert res.t[-1] < 4.0 - 1e-9  # exited before the horizon
    assert len(res.t) == len(res.delta) == len(res.spread)


def test_undamped_energy_conservation():
    # trip-only transient: the dynamic segment is an autonomous lossless flow
    ctg = Contingency("m1", "L1", t_fct=0.0, t_fault_on=0.5, sim_duration=12.5)
    case = smib()
    res = simulate(case, ctg)
    assert res.stable
    prep = prepare_batch(case, ctg)
    emag, pm = prep.emag[0], prep.pm[0]
    h = np.array([m.h for m in case.machines])
    b = prep.y_post[0].imag
    omega_s = case.omega_s
    sel = res.t >= 0.5
    delta, omega = res.delta[sel], res.omega[sel]
    ke = (h / omega_s * omega**2).sum(axis=1)
    pe = -(pm * delta).sum(axis=1)
    for i in range(2):
        for j in range(i + 1, 2):
            pe -= emag[i] * emag[j] * b[i, j] * np.cos(delta[:, i] - delta[:, j])
    energy = ke + pe
    scale = ke.max()
    assert scale > 1e-4  # the kick actually moved the machine
    assert (energy.max() - energy.min()) / scale < 1e-6


def test_rk4_fourth_order_convergence():
    ctg = Contingency("m1", "L1", t_fct=0.0, t_fault_on=0.1, sim_duration=1.1)
    case = smib()
    ends = {}
    for h in (4e-3, 2e-3, 5e-4):
        res = simulate(case, ctg, h=h)
        ends[h] = res.delta[-1]
    e1 = np.max(np.abs(ends[4e-3] - ends[5e-4]))
    e2 = np.max(np.abs(ends[2e-3] - ends[5e-4]))
    assert 10.0 < e1 / e2 < 24.0


def test_blowup_classified_unstable():
    emag = np.array([[np.inf, 1.0]])
    delta0 = np.zeros((1, 2))
    pm = np.zeros((1, 2))
    y = np.zeros((1, 2, 2), dtype=complex)
    stable, blowup = _rk4_flags(emag, delta0, pm, y, y, np.ones(2), np.zeros(2),
                                np.array([1]), 10, 1e-3, 2 * np.pi)
    assert not stable[0] and blowup[0]


def test_simulate_determinism():
    ctg = Contingency("7", "5-7", t_fct=0.12, t_fault_on=0.2, sim_duration=2.0)
    x = np.array([1.05, 0.95, 1.0, 12.0])
    a = simulate(nine_bus(), ctg, x)
    b = simulate(nine_bus(), ctg, x)
    np.testing.assert_array_equal(a.delta, b.delta)
    np.testing.assert_array_equal(a.omega, b.omega)
    assert a.stable == b.stable


# ---------------------------------------------------------------------------
# critical clearing time
# ---------------------------------------------------------------------------

def test_cct_matches_equal_area_oracle():
    oracle = smib_hand_oracle()
    cct, censored = compute_cct(smib(), SMIB_CTG)
    tol = 0.25 / 60.0
    assert censored is None
    assert abs(cct - oracle["t_cr"]) <= tol + 2e-3


def test_cct_censored_high_for_mild_case():
    cct, censored = compute_cct(smib(p_transfer=0.05), SMIB_CTG)
    assert censored == "high"
    assert cct == 0.5


def test_cct_censored_low():
    cct, censored = compute_cct(smib(), SMIB_CTG, search=CctSearch(lo=0.3, hi=0.5))
    assert censored == "low"
    assert cct == 0.3


def test_cct_degenerate_bracket():
    cct, censored = compute_cct(smib(), SMIB_CTG, search=CctSearch(lo=0.2, hi=0.2))
    assert cct == 0.2 and censored is None


def test_margin_example_eight_cycles():
    # margin = T_cct - t_fct with the cycle conversion of a 60 Hz system
    case = smib()
    t_fct = case.cycles_to_seconds(8.0)
    assert t_fct == pytest.approx(0.13333333, abs=1e-6)
    ctg = Contingency("m1", "L1", t_fct=t_fct, t_fault_on=0.5, sim_duration=3.0)
    oracle = smib_hand_oracle()
    m = tsm(case, ctg)
    assert m == pytest.approx(oracle["t_cr"] - t_fct, abs=0.25 / 60 + 2e-3)


def test_margin_sign_consistent_with_simulation():
    case = nine_bus()
    ctg = Contingency("7", "5-7", t_fct=0.15, t_fault_on=0.2, sim_duration=3.0)
    spec = UncertaintySpec(
        dims=(Marginal.gaussian(1, 0.1), Marginal.gaussian(1, 0.1),
              Marginal.gaussian(1, 0.1), Marginal.weibull(11.2, 2.2)),
        groups=(Group((0, 1, 2), 0.4),),
        seed=4242,
    )
    x = mc_sample(spec, 40).values
    res = tsm_batch(case, ctg, x)
    assert res.ok.all()
    tol = 0.25 / 60.0
    checked = 0
    for i in range(len(x)):
        if abs(res.values[i]) <= tol:
            continue  # within bisection tolerance of the boundary: exempt
        traj = simulate(case, ctg, x[i])
        assert traj.stable == (res.values[i] > 0), f"sample {i}"
        checked += 1
    assert checked >= 30


def test_batch_matches_scalar_and_is_deterministic():
    case = nine_bus()
    ctg = Contingency("9", "6-9", t_fct=0.12, t_fault_on=0.2, sim_duration=2.5)
    x = np.array([[1.0, 1.0, 1.0, 11.0], [1.1, 0.9, 1.05, 5.0], [0.9, 1.1, 1.0, 26.0]])
    a = tsm_batch(case, ctg, x)
    b = tsm_batch(case, ctg, x)
    np.testing.assert_array_equal(a.values, b.values)
    for i in range(3):
        m = tsm(case, ctg, x[i])
        assert m == a.values[i]


# ---------------------------------------------------------------------------
# evaluator interface
# ---------------------------------------------------------------------------

def test_evaluator_counts_and_worker_invariance():
    case = nine_bus()
    ctg = Contingency("7", "5-7", t_fct=0.12, t_fault_on=0.2, sim_duration=2.5)
    x = mc_sample(UncertaintySpec(
        dims=(Marginal.gaussian(1, 0.08), Marginal.gaussian(1, 0.08),
              Marginal.gaussian(1, 0.08), Marginal.weibull(11.2, 2.2)),
        seed=7,
    ), 8).values
    ev1 = SwingMarginEvaluator(case, ctg, workers=1)
    ev2 = SwingMarginEvaluator(case, ctg, workers=3)
    m1 = ev1.margins(x)
    m2 = ev2.margins(x)
    np.testing.assert_array_equal(m1, m2)
    assert ev1.n_calls == ev2.n_calls == 8


def test_evaluator_failure_channel():
    case = nine_bus()
    ctg = Contingency("7", "5-7", t_fct=0.12, t_fault_on=0.2, sim_duration=2.5)
    ev = SwingMarginEvaluator(case, ctg)
    x = np.array([[1.0, 1.0, 1.0, 10.0], [80.0, 1.0, 1.0, 10.0]])
    m = ev.margins(x)
    assert np.isfinite(m[0]) and np.isnan(m[1])
    assert len(ev.failures) == 1 and ev.failures[0][0] == 1


# ---------------------------------------------------------------------------
# case serialization and validation
# ---------------------------------------------------------------------------

def test_grid_case_json_roundtrip(tmp_path):
    case = nine_bus()
    p = tmp_path / "case.json"
    from alkrig.powersim import dump_case, load_case
    dump_case(case, p)
    again = load_case(p)
    assert again.to_dict() == case.to_dict()


def test_contingency_adjacency_enforced():
    case = nine_bus()
    with pytest.raises(ConfigurationError):
        Contingency("5", "6-9", t_fct=0.1).validate(case)
    with pytest.raises(ConfigurationError):
        case.line("does-not-exist")
    with pytest.raises(ConfigurationError):
        Contingency("7", "5-7", t_fct=2.0, t_fault_on=1.0, sim_duration=2.5).validate(case)


def test_case_validation_errors():
    from alkrig.powersim import Bus, Line, Machine
    with pytest.raises(ConfigurationError):  # disconnected network
        GridCase(
            name="bad",
            buses=(Bus("a", "slack", 1.0), Bus("b", "pv", 1.0), Bus("c")),
            lines=(Line("l", "a", "b", 0.0, 0.1),),
            machines=(Machine("a", 3.0, 0.3), Machine("b", 3.0, 0.3)),
        )
    with pytest.raises(ConfigurationError):  # machine off the generator buses
        GridCase(
            name="bad2",
            buses=(Bus("a", "slack", 1.0), Bus("b")),
            lines=(Line("l", "a", "b", 0.0, 0.1),),
            machines=(Machine("b", 3.0, 0.3),),
        )
    with pytest.raises(ConfigurationError):  # nonpositive inertia
        GridCase(
            name="bad3",
            buses=(Bus("a", "slack", 1.0),),
            lines=(),
            machines=(Machine("a", 0.0, 0.3),),
        )
