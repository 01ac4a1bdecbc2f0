import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from robust_deepc._validation import numerical_rank
from robust_deepc.hankel import (StackedHankel, build_hankel, hankel_column_update,
                                 is_persistently_exciting, split_init_pred,
                                 trajectory_membership, verify_fundamental_lemma)
from robust_deepc.lti import simulate

from conftest import random_dataset, random_system


def test_hankel_block_structure():
    s = np.arange(12.0).reshape(6, 2)
    H = build_hankel(s, 3)
    assert H.shape == (6, 4)
    for i in range(3):
        for j in range(4):
            np.testing.assert_array_equal(H.row_block(i)[:, j], s[i + j])
    with pytest.raises(ValueError):
        build_hankel(s, 7)


def test_persistency_of_excitation():
    rng = np.random.default_rng(0)
    assert is_persistently_exciting(rng.standard_normal((40, 1)), 10)
    assert not is_persistently_exciting(np.ones((40, 1)), 2)
    assert not is_persistently_exciting(rng.standard_normal((5, 1)), 6)


def test_split_and_stack_labels():
    rng = np.random.default_rng(1)
    u, y, w = rng.standard_normal((20, 1)), rng.standard_normal((20, 2)), rng.standard_normal((20, 1))
    st_ = StackedHankel.init_pred(u, y, 2, 3, w=w)
    assert st_.labels == ("u_init", "w_init", "y_init", "u_pred", "w_pred", "y_pred")
    assert st_.rows("y_pred") == 6 and st_.n_columns == 16
    h = split_init_pred(build_hankel(u, 5), 2, 3, name="u")
    np.testing.assert_array_equal(h["u_pred"], st_["u_pred"])
    with pytest.raises(ValueError):
        split_init_pred(build_hankel(u, 5), 2, 2)


def test_state_stack_alignment(so_system, so_dataset):
    st_ = StackedHankel.state_stack(so_dataset.u, so_dataset.w, so_dataset.x, 4)
    assert st_["x_first"].shape == (2, st_.n_columns)
    np.testing.assert_array_equal(st_["x_first"][:, 0], so_dataset.x[0])
    np.testing.assert_array_equal(st_["x_rest"][-2:, 0], so_dataset.x[4])


def test_rank_frozen_second_order(so_system, so_dataset):
    # DERIVED: n_x + L (n_u + n_w) = 2 + 6 * 2 for the seeded length-100 dataset.
    rep = verify_fundamental_lemma(so_system, so_dataset, 6, output="x")
    assert rep.verdict and rep.measured_rank == rep.claimed_dimension == 14
    det = simulate(so_system, np.zeros(2), so_dataset.u, np.zeros_like(so_dataset.w))
    rep = verify_fundamental_lemma(so_system, det, 6, mode="deterministic", output="x")
    assert rep.verdict and rep.measured_rank == 8


def test_report_serialises(so_system, so_dataset):
    rep = verify_fundamental_lemma(so_system, so_dataset, 4)
    d = json.loads(rep.to_json())
    assert d["verdict"] is True and d["claimed_dimension"] == 10


def test_short_dataset_fails(so_system, so_dataset):
    rep = verify_fundamental_lemma(so_system, so_dataset.truncated(12), 6)
    assert not rep.verdict and rep.causes


def test_zero_disturbance_data_fails_uncertain_mode(so_system, so_dataset):
    det = simulate(so_system, np.zeros(2), so_dataset.u, np.zeros_like(so_dataset.w))
    rep = verify_fundamental_lemma(so_system, det, 6)
    assert not rep.verdict
    assert any("w is not persistently exciting" in c for c in rep.causes)


def test_unknown_modes_rejected(so_system, so_dataset):
    with pytest.raises(ValueError):
        verify_fundamental_lemma(so_system, so_dataset, 3, mode="other")
    with pytest.raises(ValueError):
        verify_fundamental_lemma(so_system, so_dataset, 3, output="z")


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 3), st.integers(2, 5))
def test_lemma_rank_on_random_systems(seed, n_x, L):
    """Property: a persistently exciting dataset spans exactly n_x + L (n_u + n_w) dims."""
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n_x, 1, 2)
    data = random_dataset(sys, 80, seed)
    rep = verify_fundamental_lemma(sys, data, L, output="x", n_samples=5, seed=seed)
    assert rep.verdict, rep.causes
    assert rep.measured_rank == n_x + L * 3


@given(st.integers(0, 2 ** 32 - 1))
def test_membership_of_fresh_trajectory(seed):
    """A new trajectory of the same plant is reproduced by some g; a perturbed one is not."""
    rng = np.random.default_rng(seed)
    sys = random_system(rng, 2, 1, 1, n_y=1)
    data = random_dataset(sys, 60, seed)
    L = 4
    stack = StackedHankel([("u", build_hankel(data.u, L).data), ("w", build_hankel(data.w, L).data),
                           ("y", build_hankel(data.y, L).data)])
    tr = simulate(sys, rng.standard_normal(2), rng.standard_normal((L, 1)),
                  rng.standard_normal((L, 1)))
    _, res = trajectory_membership(stack, {"u": tr.u, "w": tr.w, "y": tr.y})
    assert res < 1e-8
    bad_y = tr.y.copy()
    bad_y[-1] += 1.0
    _, res = trajectory_membership(stack, {"u": tr.u, "w": tr.w, "y": bad_y})
    assert res > 1e-3


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_column_update_matches_refactorisation(seed, steps):
    """Sliding the window and updating QR agrees with building and factorising from scratch."""
    rng = np.random.default_rng(seed)
    sig = rng.standard_normal((30 + steps, 2))
    h = build_hankel(sig[:30], 5).with_qr()
    for k in range(steps):
        h = hankel_column_update(h, sig[30 + k])
    fresh = build_hankel(sig[steps:30 + steps], 5)
    np.testing.assert_allclose(h.data, fresh.data, atol=0)
    Q, R = h.qr
    np.testing.assert_allclose(Q @ R, fresh.data.T, atol=1e-10)
    np.testing.assert_allclose(Q.T @ Q, np.eye(Q.shape[0]), atol=1e-10)
    assert np.allclose(np.tril(R, -1), 0.0, atol=1e-12)
    # Same column space as an independent factorisation.
    Q2, _ = scipy.linalg.qr(fresh.data.T, mode="economic")
    r = numerical_rank(fresh.data)
    angles = scipy.linalg.subspace_angles(Q[:, :r], Q2[:, :r])
    assert np.max(angles) < 1e-8


def test_column_update_checks_size():
    h = build_hankel(np.zeros((10, 2)), 3)
    with pytest.raises(ValueError):
        hankel_column_update(h, [1.0])


def test_hankel_csv_sidecar(tmp_path):
    s = np.arange(10.0).reshape(10, 1)
    path = build_hankel(s, 3).to_csv(tmp_path / "h.csv", source="d.csv")
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["depth"] == 3 and meta["n_columns"] == 8 and meta["source"] == "d.csv"
    back = np.loadtxt(path, delimiter=",")
    np.testing.assert_array_equal(back, build_hankel(s, 3).data)
