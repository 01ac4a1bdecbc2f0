"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import time

import numpy as np
import pytest

from robust_deepc.controllers import (CausalFeedback, ControllerConfig, QuadraticCost,
                                      build_robust_deepc, data_stack, prediction_matrices,
                                      solve_causal_robust_deepc, solve_deepc, stack_causal_basis)
from robust_deepc.convex import dualize, solve, vertex_robust_oracle
from robust_deepc.experiments import building_preset as make_building_preset
from robust_deepc.experiments import generate_dataset, run_experiment
from robust_deepc.hankel import build_hankel, verify_fundamental_lemma
from robust_deepc.lti import simulate
from robust_deepc.sls import sls_hankel_equivalence

from conftest import random_dataset, random_system

pytestmark = pytest.mark.acceptance


RESULTS = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, detail


def svd_rank(M, rtol=1e-9):
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


# -- 1. fundamental-lemma rank ---------------------------------------------------------------

def test_criterion_1_fundamental_lemma_rank(so_preset):
    t0 = time.perf_counter()
    sys, L = so_preset.system, 6
    data, _ = generate_dataset(so_preset, seed=0, length=100)
    H = np.vstack([build_hankel(data.u, L).data, build_hankel(data.w, L).data,
                   build_hankel(data.x[:len(data)], L).data])
    rank_u = svd_rank(H)
    det, _ = generate_dataset(so_preset, seed=0, length=100, w_amplitude=0.0)
    assert np.all(det.w == 0)
    H_det = np.vstack([build_hankel(det.u, L).data, build_hankel(det.x[:len(det)], L).data])
    rank_d = svd_rank(H_det)
    lemma = verify_fundamental_lemma(sys, data, L, output="x")
    lemma_d = verify_fundamental_lemma(sys, det, L, mode="deterministic", output="x")
    elapsed = time.perf_counter() - t0
    ok = (rank_u == 14 == sys.n_x + L * (sys.n_u + sys.n_w)
          and rank_d == 8 == sys.n_x + L * sys.n_u
          and lemma.verdict and lemma_d.verdict and elapsed < 1.0)
    report(1, ok, f"rank {rank_u} (claimed 14), deterministic {rank_d} (claimed 8), "
                  f"{elapsed:.3f} s")


# -- 2. SLS and Hankel equivalence ---------------------------------------------------------

def test_criterion_2_sls_hankel_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, dims_ok, verdicts = 0.0, True, True
    for k in range(8):
        n_x = 2 + k % 2
        L = 2 + k % 3
        sys = random_system(rng, n_x=n_x, n_u=1, n_y=1, E="identity")
        length = 4 * (n_x + L * (1 + n_x)) + 20
        data = random_dataset(sys, length, seed=100 + k)
        rep = sls_hankel_equivalence(sys, data, L, n_laws=20, seed=k)
        worst = max(worst, rep.max_residual)
        dims_ok &= rep.measured_rank == rep.claimed_dimension == rep.details["sls_rank"]
        verdicts &= rep.verdict
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and dims_ok and verdicts and elapsed < 10.0
    report(2, ok, f"max residual {worst:.2e} over 8 systems x 20 laws, dimensions agree "
                  f"{dims_ok}, {elapsed:.2f} s")


# -- 3. controller identity ----------------------------------------------------------------

def test_criterion_3_controller_identity(so_preset, so_dataset):
    t0 = time.perf_counter()
    res = run_experiment(so_preset, ("robust-deepc", "robust-mpc"), seed=3, dataset=so_dataset)
    elapsed = time.perf_counter() - t0
    a, b = res.logs["robust-deepc"], res.logs["robust-mpc"]
    dev = float(np.abs(a.y - b.y).max()) if len(a) == len(b) == 45 else np.inf
    ok = a.completed and b.completed and dev <= 1e-6 and elapsed < 30.0
    report(3, ok, f"max output deviation {dev:.2e} over {len(a)} steps, {elapsed:.2f} s")


# -- 4. robust feasibility -----------------------------------------------------------------

def _replay_plan(sys, x, plan, W):
    """Outputs and inputs of ``plan`` on the true model for each disturbance row of ``W``."""
    n_h = plan.u_pred.shape[0]
    O, G_u, G_w = prediction_matrices(sys, n_h)
    U = plan.u_pred.ravel()[None, :] + W @ plan.input_feedback.T
    Y = (O @ x)[None, :] + U @ G_u.T + W @ G_w.T
    return U, Y


def test_criterion_4_robust_feasibility(so_preset, so_dataset):
    sys, cfg = so_preset.system, so_preset.config
    n_h = cfg.n_h
    vertices = np.array(list(itertools.product([-0.1, 0.1], repeat=n_h)))
    rng = np.random.default_rng(4)
    W = np.vstack([vertices, rng.uniform(-0.1, 0.1, (1000 - len(vertices), n_h))])
    tol = 1e-8
    worst = {"y": -np.inf, "u": -np.inf, "plans": 0}

    def watch(kind, t, x, plan):
        assert plan.ok, f"step {t}: {plan.status}"
        U, Y = _replay_plan(sys, x, plan, W)
        worst["y"] = max(worst["y"], float(np.abs(Y).max() - 0.5))
        worst["u"] = max(worst["u"], float(np.abs(U).max() - 5.0))
        worst["plans"] += 1

    runs = [dict(seed=4), dict(seed=5, worst_case="vertex"), dict(seed=6, worst_case="vertex"),
            dict(seed=7, worst_case="lower"), dict(seed=8, worst_case="upper")]
    closed = -np.inf
    n_steps = 0
    for kw in runs:
        res = run_experiment(so_preset, ("robust-deepc",), dataset=so_dataset, observer=watch,
                             **kw)
        log = res.logs["robust-deepc"]
        assert log.completed
        closed = max(closed, float(np.abs(log.y).max() - 0.5), float(np.abs(log.u).max() - 5.0))
        n_steps += len(log)
    ok = worst["y"] <= tol and worst["u"] <= tol and closed <= tol
    report(4, ok, f"{worst['plans']} plans x {len(W)} sequences ({len(vertices)} vertex): "
                  f"worst y excess {worst['y']:.2e}, u excess {worst['u']:.2e}; "
                  f"{len(runs)} closed loops ({n_steps} steps) excess {closed:.2e}")


# -- 5. dualization soundness --------------------------------------------------------------

def _random_robust_program(rng):
    sys = random_system(rng, n_x=2, n_u=1, n_w=1, n_y=1)
    n_h = int(rng.integers(1, 4))
    t_init = 2
    w_hi = float(rng.uniform(0.05, 0.3))
    w_lo = -float(rng.uniform(0.05, 0.3))
    cfg = ControllerConfig(
        t_init=t_init, n_h=n_h,
        cost=QuadraticCost(Q=float(rng.uniform(1, 10)), R=float(rng.uniform(0.05, 1)),
                           reference=[[float(rng.uniform(-0.5, 0.5))]]),
        u_bounds=([-3.0], [3.0]), y_bounds=([-2.0], [2.0]), w_bounds=([w_lo], [w_hi]))
    length = 6 * (sys.n_x + (t_init + n_h) * 2) + 20
    data = random_dataset(sys, length, seed=int(rng.integers(1 << 30)))
    stack = data_stack(data.u, data.y, t_init, n_h, data.w)
    x = 0.3 * rng.standard_normal(sys.n_x)
    u0 = 0.3 * rng.standard_normal((t_init, 1))
    w0 = rng.uniform(w_lo, w_hi, (t_init, 1))
    y0 = simulate(sys, x, u0, w0).y
    return build_robust_deepc(cfg, stack, u0, w0, y0, basis=stack_causal_basis(stack))


def test_criterion_5_dualization_soundness():
    rng = np.random.default_rng(5)
    worst, mismatched, feasible = 0.0, 0, 0
    for _ in range(50):
        prog = _random_robust_program(rng)
        a = solve(dualize(prog))
        b = solve(vertex_robust_oracle(prog))
        if a.status != b.status:
            mismatched += 1
            continue
        if a.ok:
            feasible += 1
            worst = max(worst, abs(a.objective - b.objective) / max(1.0, abs(b.objective)))
    ok = mismatched == 0 and worst <= 1e-6 and feasible >= 25
    report(5, ok, f"50 instances ({feasible} feasible), max relative gap {worst:.2e}, "
                  f"status mismatches {mismatched}")


# -- 6. causality structure ----------------------------------------------------------------

def _independent_feedback_check(fb, stack):
    """Residuals of the causal structure recomputed from the raw stack blocks."""
    t_init, n_h = stack.t_init, stack.n_h
    n_u = stack.rows("u_init") // t_init
    n_w = stack.rows("w_init") // t_init
    H_init = np.vstack([stack["u_init"], stack["w_init"], stack["y_init"]])
    init = np.abs(H_init @ fb.K_d).max()
    ident = np.abs(stack["w_pred"] @ fb.K_d - np.eye(n_h * n_w)).max()
    Ku = stack["u_pred"] @ fb.K_d
    off = 0.0
    for i in range(n_h):
        for j in range(i, n_h):
            off = max(off, np.abs(Ku[i * n_u:(i + 1) * n_u, j * n_w:(j + 1) * n_w]).max())
    return init, ident, off


@pytest.mark.parametrize("which", ["second-order", "building"])
def test_criterion_6_causality_structure(which, so_preset, so_dataset, building_preset,
                                         building_dataset):
    preset, data = ((so_preset, so_dataset) if which == "second-order"
                    else (building_preset, building_dataset))
    cfg = preset.config
    stack = data_stack(data.u, data.y, cfg.t_init, cfg.n_h, data.w)
    seen = {"n": 0, "eq": 0.0, "causal": 0.0, "typed": True}

    def watch(kind, t, x, plan):
        if not plan.ok:
            return
        fb = plan.feedback
        seen["typed"] &= isinstance(fb, CausalFeedback)
        init, ident, off = _independent_feedback_check(fb, stack)
        seen["eq"] = max(seen["eq"], init, ident)
        seen["causal"] = max(seen["causal"], off)
        seen["n"] += 1

    run_experiment(preset, ("robust-deepc",), seed=6, dataset=data, observer=watch,
                   worst_case=preset.default_worst_case)
    ok = seen["typed"] and seen["n"] > 0 and seen["eq"] <= 1e-8 and seen["causal"] <= 1e-9
    report(6, ok, f"{which}: {seen['n']} feedbacks, equality residual {seen['eq']:.2e}, "
                  f"off-pattern {seen['causal']:.2e}")


# -- 7. building experiment ----------------------------------------------------------------

def test_criterion_7_building(building_preset, building_dataset, building_run):
    log = building_run.logs["robust-deepc"]
    y_s = building_preset.config.schedules(1, 1, 3)[1]
    lo, _ = y_s.horizon(building_preset.start_time, len(log))
    margin = float((log.y - lo).min())
    t = log.t
    morning = log.y[np.flatnonzero(t == 30)[0], 0]
    cost = log.total_cost()
    looser = run_experiment(make_building_preset(day_lower=22.0, night_lower=16.0), ("robust-deepc",), seed=1,
                            worst_case="lower", dataset=building_dataset)
    cost_relaxed = looser.logs["robust-deepc"].total_cost()
    ok = (log.completed and len(log) == 30 and t[0] == 6 and margin >= -1e-6
          and morning >= 23.0 - 1e-6 and cost_relaxed <= cost + 1e-6)
    report(7, ok, f"min margin {margin:.2e}, y(06:00 day 2) {morning:.6f}, cost {cost:.2f}, "
                  f"relaxed cost {cost_relaxed:.2f}")


# -- 8. degenerate reduction ---------------------------------------------------------------

def test_criterion_8_zero_disturbance_reduction():
    rng = np.random.default_rng(8)
    worst, mismatched, feasible, drawn = 0.0, 0, 0, 0
    while feasible < 20 and drawn < 60:
        drawn += 1
        sys = random_system(rng, n_x=2, n_u=1, n_w=1, n_y=1)
        t_init, n_h = 2, int(rng.integers(2, 6))
        cfg = ControllerConfig(
            t_init=t_init, n_h=n_h,
            cost=QuadraticCost(Q=float(rng.uniform(1, 10)), R=float(rng.uniform(0.05, 1)),
                               reference=[[float(rng.uniform(-0.5, 0.5))]]),
            u_bounds=([-2.0], [2.0]), y_bounds=([-1.5], [1.5]), w_bounds=([0.0], [0.0]))
        data = random_dataset(sys, 8 * (t_init + n_h) + 30, seed=int(rng.integers(1 << 30)))
        stack = data_stack(data.u, data.y, t_init, n_h, data.w)
        u0 = 0.3 * rng.standard_normal((t_init, 1))
        w0 = np.zeros((t_init, 1))
        y0 = simulate(sys, 0.3 * rng.standard_normal(2), u0, w0).y
        robust = solve_causal_robust_deepc(cfg, stack, u0, w0, y0)
        plain = solve_deepc(cfg, stack, u0, y0, w0)
        mismatched += robust.status != plain.status
        if robust.ok and plain.ok:
            feasible += 1
            worst = max(worst, float(np.abs(robust.u_pred - plain.u_pred).max()))
    ok = feasible == 20 and mismatched == 0 and worst <= 1e-8
    report(8, ok, f"{feasible} feasible of {drawn} drawn, max input difference {worst:.2e}, "
                  f"status mismatches {mismatched}")
