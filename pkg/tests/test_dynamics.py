import numpy as np
import pytest
from hypothesis import given, strategies as st

from epictrl import (ControlSignal, IntegratorConfig, ModelInstance, Trajectory, constant,
                     cost_J, fig1_model, simulate, simulate_backward, step)
from epictrl.dynamics import in_simplex_all
from epictrl.exceptions import (DomainError, HorizonExceeded, IncompleteTrajectory,
                                StepRejected)

CFG = IntegratorConfig()


def test_step_at_equilibrium(fig1):
    assert step(fig1, (0.6, 0.0), 0.3, 0.5) == (0.6, 0.0)


def test_step_full_control_decays(fig1):
    s = step(fig1, (0.6, 0.2), 1.0, 0.1)
    assert s.x == 0.6
    assert s.y == pytest.approx(0.2 * np.exp(-0.05 * 0.1), abs=1e-12)


def test_step_halving(fig1):
    a = step(fig1, (0.9, 0.05), 0.0, 1e-3)
    b = step(fig1, step(fig1, (0.9, 0.05), 0.0, 5e-4), 0.0, 5e-4)
    assert abs(a.x - b.x) < 1e-12 and abs(a.y - b.y) < 1e-12


def test_step_rejected_for_huge_dt():
    m = ModelInstance(constant(5.0), 0.1)
    with pytest.raises(StepRejected):
        step(m, (0.9, 0.1), 0.0, 50.0)


def test_step_domain_errors(fig1):
    with pytest.raises(DomainError):
        step(fig1, (0.9, 0.2), 0.0, 1e-3)
    with pytest.raises(DomainError):
        step(fig1, (0.5, 0.2), 1.5, 1e-3)
    with pytest.raises(DomainError):
        step(fig1, (0.5, 0.2), 0.0, 0.0)


def test_classical_sir_extinction_and_invariant(sir):
    tr = simulate(sir, ControlSignal.zero(), (0.99, 0.01), CFG)
    assert tr.y[-1] < 1e-8
    assert np.all(np.diff(tr.x) <= 0)
    q = tr.x + tr.y - (0.1 / 0.3) * np.log(tr.x)
    assert np.max(np.abs(q - q[0])) < 1e-7
    assert tr.events[-1][1] == "infection_extinct"
    assert tr.tail_zero and cost_J(tr) == 0.0


def test_fig1_unimodal(fig1):
    tr = simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG)
    d = np.sign(np.diff(tr.y))
    d = d[d != 0]
    assert np.count_nonzero(np.diff(d)) == 1 and d[0] > 0 and d[-1] < 0


def test_events_detected_and_bracketed(fig1):
    tr = simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG, ybar=0.2)
    kinds = [k for _, k in tr.events]
    assert kinds == ["threshold_hit", "R_equals_one", "infection_extinct"]
    for t, _ in tr.events:
        i = np.searchsorted(tr.times, t)
        assert tr.times[max(i - 1, 0)] <= t <= tr.times[min(i, len(tr) - 1)]
    t_hit = tr.event_times("threshold_hit")[0]
    assert np.interp(t_hit, tr.times, tr.y) == pytest.approx(0.2, abs=1e-9)
    t_one = tr.event_times("R_equals_one")[0]
    x1, y1 = np.interp(t_one, tr.times, tr.x), np.interp(t_one, tr.times, tr.y)
    assert fig1.R(x1, y1) == pytest.approx(1.0, abs=1e-7)
    assert np.all(np.diff(tr.times) > 0)


def test_stop_on_event_and_time(fig1):
    tr = simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG, "threshold_hit", ybar=0.2)
    assert tr.y[-1] == pytest.approx(0.2, abs=1e-10) and tr.status == "event"
    tr = simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG, 3.25)
    assert tr.times[-1] == pytest.approx(3.25)
    tr = simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG, [2.0, "threshold_hit"], ybar=0.2)
    assert tr.times[-1] == pytest.approx(2.0) and tr.status == "horizon"


def test_horizon_exceeded(fig1):
    with pytest.raises(HorizonExceeded):
        simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG.replace(max_time=5.0))
    with pytest.raises(DomainError):
        simulate(fig1, None, (0.99, 0.01), CFG, "no_such_event")


def test_breakpoints_split_steps_exactly(fig1):
    c = ControlSignal.open_loop([0.00037, 1.23456789], [0.5, 0.0])
    tr = simulate(fig1, c, (0.99, 0.01), CFG, 2.0)
    assert 0.00037 in tr.times and 1.23456789 in tr.times
    assert cost_J(tr, require_complete=False) == pytest.approx(0.5 * (1.23456789 - 0.00037), abs=1e-14)


def test_control_signal_semantics(tmp_path):
    c = ControlSignal.open_loop([1.0, 2.0, 3.0], [0.2, 0.7, 0.0])
    assert c(0.5) == 0.0 and c(1.0) == 0.2 and c(2.0) == 0.7 and c(2.999) == 0.7 and c(3.0) == 0.0
    assert c.total() == pytest.approx(0.9)
    p = tmp_path / "u.csv"
    p.write_text("t_start,u\n0,0.5\n10,0\n")
    assert ControlSignal.from_csv(p).total() == pytest.approx(5.0)
    for bp, v in (([1, 1], [0.1, 0.2]), ([0], [1.2]), ([0, 1], [0.1])):
        with pytest.raises(DomainError):
            ControlSignal.open_loop(bp, v)


def test_cost_examples(fig1):
    tr = simulate(fig1, ControlSignal.open_loop([0.0, 10.0], [0.5, 0.0]), (0.99, 0.01), CFG)
    assert cost_J(tr) == pytest.approx(5.0, abs=1e-12)
    tr = simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG, 5.0)
    with pytest.raises(IncompleteTrajectory):
        cost_J(tr)


def test_feedback_policy_checked(fig1):
    with pytest.raises(DomainError):
        simulate(fig1, ControlSignal.feedback(lambda x, y: 1.5), (0.9, 0.1), CFG, 1.0)
    tr = simulate(fig1, ControlSignal.feedback(lambda x, y: 1.0 + 1e-13), (0.9, 0.1), CFG, 1.0)
    assert tr.x[-1] == 0.9 and tr.y[-1] == pytest.approx(0.1 * np.exp(-0.05), abs=1e-12)


def test_feedback_matches_open_loop_constant(fig1):
    a = simulate(fig1, ControlSignal.feedback(lambda x, y: 0.3), (0.9, 0.05), CFG, 2.0)
    b = simulate(fig1, ControlSignal.open_loop([0.0], [0.3]), (0.9, 0.05), CFG, 2.0)
    assert a.x[-1] == pytest.approx(b.x[-1], abs=1e-14) and a.y[-1] == pytest.approx(b.y[-1], abs=1e-14)


def test_backward_orbit_at_R_one(fig1):
    x1 = np.sqrt(1 / 5.6)  # R(x, 0.2) = 1
    tr = simulate_backward(fig1, (x1, 0.2), CFG)
    assert np.all(np.diff(tr.y) < 0) and np.all(np.diff(tr.x) > 0)


def test_backward_round_trip(fig1):
    s0 = (0.5, 0.2)
    back = simulate_backward(fig1, s0, CFG, t_end=5.0)
    fwd = simulate(fig1, ControlSignal.zero(), (back.x[-1], back.y[-1]), CFG, 5.0)
    assert abs(fwd.x[-1] - s0[0]) < 1e-6 and abs(fwd.y[-1] - s0[1]) < 1e-6


def test_backward_hits_boundary_fig2(g2_high, fig2):
    tr = simulate_backward(fig2, (g2_high.xbar, g2_high.ybar), CFG)
    assert tr.events[-1][1] == "boundary_exit"
    assert tr.x[-1] + tr.y[-1] == pytest.approx(1.0, abs=1e-9)


def test_csv_export(fig1):
    tr = simulate(fig1, ControlSignal.zero(), (0.99, 0.01), CFG.replace(record_every=5000), ybar=0.2)
    text = tr.to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,x,y,u,R"
    assert lines[-1].startswith("# event,") and lines[-1].endswith("infection_extinct")
    assert len(lines[1].split(",")) == 5


def test_concatenate_keeps_later_sample():
    a = Trajectory(np.array([0.0, 1.0]), np.array([0.9, 0.8]), np.array([0.1, 0.2]), np.array([0.0, 0.0]))
    b = Trajectory(np.array([1.0, 2.0]), np.array([0.8, 0.7]), np.array([0.2, 0.2]),
                   np.array([0.6, 0.0]), hold=np.array([False]))
    c = Trajectory.concatenate([a, b])
    assert list(c.times) == [0.0, 1.0, 2.0] and list(c.controls) == [0.0, 0.6, 0.0]
    assert list(c.hold) == [True, False]


STARTS = st.tuples(st.floats(0.3, 0.999), st.floats(1e-4, 0.3)).filter(lambda s: s[0] + s[1] <= 1)


@given(STARTS, st.floats(0.0, 1.0), st.sampled_from(["fig1", "sir"]))
def test_simplex_and_monotone_x_under_any_constant_control(s0, u, which):
    m = ModelInstance(fig1_model(), 0.05) if which == "fig1" else ModelInstance(constant(0.3), 0.1)
    tr = simulate(m, ControlSignal.open_loop([0.0, 20.0], [u, 0.0]), s0, CFG.replace(record_every=50), 40.0)
    assert in_simplex_all(tr)
    assert np.all(np.diff(tr.x) <= 1e-12)
    assert np.all(tr.y > 0)


def test_rk4_order(fig1, sir):
    for m, s0, T in ((fig1, (0.99, 0.01), 30.0), (sir, (0.9, 0.1), 20.0), (fig1, (0.6, 0.3), 25.0)):
        ref = simulate(m, None, s0, IntegratorConfig(step=0.05 / 16), T)
        errs = []
        for h in (0.1, 0.05):
            tr = simulate(m, None, s0, IntegratorConfig(step=h), T)
            errs.append(np.hypot(tr.x[-1] - ref.x[-1], tr.y[-1] - ref.y[-1]))
        assert errs[0] / errs[1] >= 14
