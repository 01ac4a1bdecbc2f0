import numpy as np
import pytest

from robust_deepc.controllers import L1InputCost
from robust_deepc.experiments import (BUILDING_E_MILLI, PRESETS, building_preset,
                                      building_schedules, custom_preset, expand_controllers,
                                      generate_dataset, get_preset, make_controller,
                                      max_deviation, realize_disturbances, verification_report,
                                      warmup)
from robust_deepc.lti import simulate


def test_second_order_preset_fidelity(so_preset):
    # PAPER: second-order plant display, bounds and weights.
    s = so_preset.system
    np.testing.assert_array_equal(s.A, [[0.9535, 0.0761], [-0.8454, 0.5478]])
    np.testing.assert_array_equal(s.B, [[0.0465], [0.8454]])
    np.testing.assert_array_equal(s.E, [[0.0465], [0.8454]])
    np.testing.assert_array_equal(s.C, [[1.0, 0.0]])
    cfg = so_preset.config
    assert (cfg.cost.Q, cfg.cost.R) == (10.0, 0.1)
    u_s, y_s, w_s = cfg.schedules(1, 1, 1)
    assert u_s.bounds(0)[0][0] == -5 and u_s.bounds(0)[1][0] == 5
    assert y_s.bounds(0)[0][0] == -0.5 and y_s.bounds(0)[1][0] == 0.5
    assert w_s.bounds(0)[0][0] == -0.1 and w_s.bounds(0)[1][0] == 0.1
    assert so_preset.data_length == 100 and so_preset.steps == 45


def test_building_preset_fidelity(building_preset):
    # PAPER: building plant display including the 1e-3 scaled disturbance block.
    s = building_preset.system
    np.testing.assert_array_equal(s.A, [[0.8511, 0.0541, 0.0707], [0.1293, 0.8635, 0.0055],
                                        [0.0989, 0.0032, 0.7541]])
    np.testing.assert_array_equal(s.B, [[0.0035], [0.0003], [0.0002]])
    E_milli = [[22.2170, 1.7912, 42.2123], [1.5376, 0.6944, 2.29214],
               [103.1813, 0.1032, 196.0444]]
    np.testing.assert_array_equal(BUILDING_E_MILLI, E_milli)
    np.testing.assert_allclose(s.E, 1e-3 * np.array(E_milli), rtol=1e-15)
    np.testing.assert_array_equal(s.C, [[1.0, 0.0, 0.0]])
    assert isinstance(building_preset.config.cost, L1InputCost)
    assert building_preset.start_time == 6 and building_preset.steps == 30
    assert building_preset.x_run_start == (26.0, 24.0, 20.0)


def test_building_schedules():
    y, w = building_schedules()
    assert y.bounds(6)[0][0] == 23 and y.bounds(21)[0][0] == 23
    assert y.bounds(22)[0][0] == 17 and y.bounds(5)[0][0] == 17
    assert np.isinf(y.bounds(12)[1][0])
    np.testing.assert_array_equal(w.bounds(12)[0], [4, 4, 6])
    np.testing.assert_array_equal(w.bounds(12)[1], [6, 6, 8])
    np.testing.assert_array_equal(w.bounds(2)[0], [0, 0, 2])
    np.testing.assert_array_equal(w.bounds(2)[1], [2, 0, 4])


def test_preset_lookup():
    assert set(PRESETS) == {"second-order", "building"}
    with pytest.raises(ValueError):
        get_preset("nope")
    assert expand_controllers("both") == ["robust-deepc", "robust-mpc"]
    assert expand_controllers("all") == ["deepc", "robust-deepc", "robust-mpc"]
    with pytest.raises(ValueError):
        make_controller("other", get_preset("second-order"))


def test_datasets(so_preset, building_preset):
    so, man = generate_dataset(so_preset, 1)
    assert len(so) == 100 and man.length == 100 and man.seed == 1
    b, _ = generate_dataset(building_preset, 1)
    assert len(b) == 100 and b.w.shape == (100, 3)
    again, _ = generate_dataset(so_preset, 1)
    np.testing.assert_array_equal(again.y, so.y)
    flat, _ = generate_dataset(so_preset, 1, amplitude=0.0)
    assert not flat.u.any() and not flat.w.any()


@pytest.mark.parametrize("mode", [None, "vertex", "lower", "upper"])
def test_disturbance_realisations(building_preset, mode):
    _, _, w_s = building_preset.config.schedules(1, 1, 3)
    d = realize_disturbances(w_s, 6, 30, seed=4, worst_case=mode)
    lo, hi = w_s.horizon(6, 30)
    assert d.shape == (30, 3)
    assert np.all(d >= lo) and np.all(d <= hi)
    if mode == "vertex":
        assert np.all((d == lo) | (d == hi))
    np.testing.assert_array_equal(d, realize_disturbances(w_s, 6, 30, 4, mode))
    with pytest.raises(ValueError):
        realize_disturbances(w_s, 6, 3, 0, "middle")


def test_building_warmup_ends_at_preset_state(building_preset):
    x0, u, w = warmup(building_preset, seed=2)
    tr = simulate(building_preset.system, x0, u, w)
    np.testing.assert_allclose(tr.x[-1], [26.0, 24.0, 20.0], atol=1e-9)


def test_second_order_run(so_run):
    s = so_run.summary
    assert s["steps"] == 45 and "infeasible" not in s
    assert s["max_constraint_violation"] <= 1e-8
    indep = max(np.abs(so_run.logs["robust-deepc"].y - so_run.logs["robust-mpc"].y).max(),
                np.abs(so_run.logs["robust-deepc"].u - so_run.logs["robust-mpc"].u).max())
    assert s["max_deepc_mpc_deviation"] == pytest.approx(indep, abs=0)
    assert s["max_deepc_mpc_deviation"] <= 1e-6


def test_building_run_cost_frozen(building_run):
    # DERIVED: optimal worst-case 1-norm cost of the 30-hour run (both controllers agree).
    costs = [c["total_cost"] for c in building_run.summary["controllers"].values()]
    for c in costs:
        assert c == pytest.approx(5796.52, rel=1e-5)
    assert max_deviation(building_run.logs["robust-deepc"], building_run.logs["robust-mpc"]) < 1e-4


def test_custom_preset_runs(so_system):
    from robust_deepc.controllers import ControllerConfig, QuadraticCost
    from robust_deepc.experiments import run_experiment
    cfg = ControllerConfig(t_init=2, n_h=4, cost=QuadraticCost(Q=1.0, R=0.1, reference=0.2),
                           u_bounds=([-5.0], [5.0]), y_bounds=([-1.0], [1.0]),
                           w_bounds=([-0.05], [0.05]))
    preset = custom_preset(so_system, cfg, steps=5)
    res = run_experiment(preset, ("deepc", "robust-deepc", "robust-mpc"), seed=0)
    assert all(len(log_) == 5 for log_ in res.logs.values())


def test_verification_report(so_preset, so_dataset):
    rep = verification_report(so_preset, so_dataset, seed=1)
    assert rep["verdict"]
    assert rep["dualization"]["relative_gap"] <= 1e-6
    short = verification_report(so_preset, so_dataset.truncated(12), seed=1)
    assert not short["verdict"] and not short["fundamental_lemma_uncertain"]["verdict"]


def test_relaxed_building_bounds_lower_the_cost(building_dataset):
    from robust_deepc.experiments import run_experiment
    relaxed = building_preset(day_lower=22.0, night_lower=16.0)
    res = run_experiment(relaxed, ("robust-mpc",), seed=1, worst_case="lower",
                         dataset=building_dataset)
    assert res.summary["controllers"]["robust-mpc"]["total_cost"] < 5796.52
