"""Logistic-regression instance: losses, gradients, curvature, solver, IO."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confed import problem
from confed._rng import TEST, keyed_generator


def directional_fd(f, x, v, h=1e-6):
    return (f(x + h * v) - f(x - h * v)) / (2.0 * h)


# ------------------------------------------------------------------ config


def test_config_validation():
    problem.DatasetConfig().validate()
    with pytest.raises(problem.ProblemError):
        problem.DatasetConfig(n_servers=0).validate()
    with pytest.raises(problem.ProblemError):
        problem.DatasetConfig(batch_size=-1).validate()
    with pytest.raises(problem.ProblemError):
        problem.DatasetConfig(kappa=-0.1).validate()


def test_synthesize_shapes_and_determinism(tiny_cfg):
    ds = problem.synthesize_dataset(tiny_cfg, seed=7)
    c = tiny_cfg
    assert ds.features.shape == (c.n_servers, c.users_per_server,
                                 c.minibatches_per_user, c.batch_size, c.dim)
    assert ds.labels.shape == ds.features.shape[:4]
    assert ds.labels.dtype == np.float64
    assert set(np.unique(ds.labels)) <= {0.0, 1.0}
    again = problem.synthesize_dataset(tiny_cfg, seed=7)
    assert ds.features.tobytes() == again.features.tobytes()
    assert ds.labels.tobytes() == again.labels.tobytes()
    other = problem.synthesize_dataset(tiny_cfg, seed=8)
    assert ds.features.tobytes() != other.features.tobytes()


def test_sample_counts(tiny_ds):
    assert tiny_ds.total_samples == 3 * 2 * 3 * 2
    assert tiny_ds.samples_per_server == 2 * 3 * 2


# ------------------------------------------------------------ loss/gradient


def test_loss_at_zero_is_batchsize_log2(tiny_ds):
    for (i, j, t) in ((0, 0, 0), (1, 1, 2), (2, 0, 1)):
        want = tiny_ds.cfg.batch_size * np.log(2.0)
        assert abs(problem.minibatch_loss(np.zeros(6), tiny_ds, i, j, t) - want) <= 1e-12


def test_objective_at_zero(tiny_ds):
    want = tiny_ds.total_samples * np.log(2.0) / tiny_ds.cfg.n_servers
    assert abs(problem.objective(np.zeros(6), tiny_ds) - want) <= 1e-12


def test_sigmoid_stable_and_correct():
    assert problem.sigmoid(0.0) == 0.5
    z = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = problem.sigmoid(z)
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
    assert np.allclose(s[1:4], 1.0 / (1.0 + np.exp(-z[1:4])), rtol=1e-12)


def test_minibatch_gradient_matches_fd(tiny_ds):
    gen = keyed_generator(0, TEST)
    for _ in range(20):
        i = int(gen.integers(0, 3))
        j = int(gen.integers(0, 2))
        t = int(gen.integers(0, 3))
        x = gen.standard_normal(6)
        v = gen.standard_normal(6)
        v /= np.linalg.norm(v)
        g = problem.minibatch_gradient(x, tiny_ds, i, j, t)
        fd = directional_fd(lambda z: problem.minibatch_loss(z, tiny_ds, i, j, t), x, v)
        assert abs(float(g @ v) - fd) <= 1e-5 * max(1.0, abs(fd))


def test_full_gradient_matches_fd(tiny_ds):
    gen = keyed_generator(1, TEST)
    for _ in range(10):
        x = gen.standard_normal(6)
        v = gen.standard_normal(6)
        v /= np.linalg.norm(v)
        g = problem.full_gradient(x, tiny_ds)
        fd = directional_fd(lambda z: problem.objective(z, tiny_ds), x, v)
        assert abs(float(g @ v) - fd) <= 1e-5 * max(1.0, abs(fd))


def test_server_gradients_decompose_into_minibatches(tiny_ds):
    gen = keyed_generator(2, TEST)
    x = gen.standard_normal((3, 6))
    got = problem.server_gradients(tiny_ds, x)
    for i in range(3):
        want = np.zeros(6)
        for j in range(2):
            for t in range(3):
                want += problem.minibatch_gradient(x[i], tiny_ds, i, j, t)
        assert np.allclose(got[i], want, rtol=1e-12, atol=1e-12)


def test_full_gradient_is_mean_of_server_gradients(tiny_ds):
    gen = keyed_generator(3, TEST)
    x = gen.standard_normal(6)
    stack = np.broadcast_to(x, (3, 6)).copy()
    mean_server = problem.server_gradients(tiny_ds, stack).mean(axis=0)
    assert np.allclose(problem.full_gradient(x, tiny_ds), mean_server, rtol=1e-12)


def test_batched_gradients_match_loop_bitwise(tiny_ds):
    gen = keyed_generator(4, TEST)
    x = gen.standard_normal((3, 6))
    users = np.array([[0, 1], [1, 0], [0, 0]])
    slots = np.array([[2, 0], [1, 1], [0, 2]])
    got = problem.minibatch_gradients_at(tiny_ds, x, users, slots)
    for i in range(3):
        for m in range(2):
            want = problem.minibatch_gradient(x[i], tiny_ds, i, users[i, m], slots[i, m])
            assert np.array_equal(got[i, m], want)


# --------------------------------------------------------------- curvature


def test_curvature_mu_formula(tiny_ds):
    curv = problem.curvature(tiny_ds)
    assert curv.mu == tiny_ds.kappa * tiny_ds.total_samples / tiny_ds.cfg.n_servers


def test_lip_matches_hessian_at_zero():
    # At x = 0 the logistic curvature factor is exactly 1/4, so the bound
    # lip = mu + lambda_max(sum w w^T)/(4N) coincides with lambda_max of the
    # true Hessian there.
    cfg = problem.DatasetConfig(n_servers=4, users_per_server=2,
                                minibatches_per_user=2, batch_size=3, dim=20)
    ds = problem.synthesize_dataset(cfg, seed=1)
    curv = problem.curvature(ds)
    omega = ds.features.reshape(-1, 20)
    hess0 = (ds.kappa * ds.total_samples * np.eye(20) + 0.25 * omega.T @ omega) / 4.0
    lam = float(np.linalg.eigvalsh(hess0)[-1])
    assert abs(curv.lip - lam) <= 1e-6 * lam
    assert curv.mu <= curv.lip


def test_lip_bounds_hessian_everywhere(tiny_ds):
    curv = problem.curvature(tiny_ds)
    omega = tiny_ds.features.reshape(-1, 6)
    gen = keyed_generator(5, TEST)
    for _ in range(5):
        x = gen.standard_normal(6)
        z = omega @ x
        s = problem.sigmoid(z)
        hess = (tiny_ds.kappa * tiny_ds.total_samples * np.eye(6)
                + (omega * (s * (1 - s))[:, None]).T @ omega) / 3.0
        assert float(np.linalg.eigvalsh(hess)[-1]) <= curv.lip * (1 + 1e-9)


def test_minibatch_lip_formula_and_bound(tiny_ds):
    curv = problem.curvature(tiny_ds)
    feats = tiny_ds.features
    want = tiny_ds.kappa * tiny_ds.cfg.batch_size + 0.25 * (feats ** 2).sum(axis=(3, 4))
    assert np.allclose(curv.minibatch_lip, want, rtol=1e-12)
    # it upper-bounds the per-minibatch Hessian spectrum at the origin
    for (i, j, t) in ((0, 0, 0), (2, 1, 2)):
        w = feats[i, j, t]
        h = tiny_ds.kappa * tiny_ds.cfg.batch_size * np.eye(6) + 0.25 * w.T @ w
        assert float(np.linalg.eigvalsh(h)[-1]) <= curv.minibatch_lip[i, j, t] * (1 + 1e-12)


def test_zero_features_lip_equals_mu(tiny_cfg):
    ds = problem.Dataset(
        cfg=tiny_cfg,
        features=np.zeros((3, 2, 3, 2, 6)),
        labels=np.zeros((3, 2, 3, 2)),
    )
    curv = problem.curvature(ds)
    assert curv.lip == curv.mu


def test_strong_convexity_and_smoothness_witness(tiny_ds):
    curv = problem.curvature(tiny_ds)
    gen = keyed_generator(6, TEST)
    for _ in range(10):
        a = gen.standard_normal(6)
        b = gen.standard_normal(6)
        fa = problem.objective(a, tiny_ds)
        fb = problem.objective(b, tiny_ds)
        ga = problem.full_gradient(a, tiny_ds)
        gb = problem.full_gradient(b, tiny_ds)
        gap = b - a
        assert fb >= fa + float(ga @ gap) + 0.5 * curv.mu * float(gap @ gap) - 1e-9
        assert np.linalg.norm(ga - gb) <= curv.lip * np.linalg.norm(gap) * (1 + 1e-12)


# ------------------------------------------------------------------ solver


def test_solver_reaches_tolerance(small_instance):
    _, ds, x_star = small_instance
    assert np.linalg.norm(problem.full_gradient(x_star, ds)) <= 1e-10


def test_solver_two_start_agreement(small_instance):
    _, ds, x_star = small_instance
    alt = problem.solve_centralized(ds, 1e-10, x0=np.ones(ds.cfg.dim))
    assert np.linalg.norm(alt - x_star) <= 1e-7


def test_solver_deterministic(small_instance):
    _, ds, x_star = small_instance
    again = problem.solve_centralized(ds, 1e-10)
    assert again.tobytes() == x_star.tobytes()


def test_solver_rejects_bad_tol(tiny_ds):
    with pytest.raises(problem.ProblemError):
        problem.solve_centralized(tiny_ds, 0.0)


def test_solver_reports_iteration_exhaustion(tiny_ds):
    with pytest.raises(problem.ProblemError, match="no convergence"):
        problem.solve_centralized(tiny_ds, 1e-12, max_iter=1)


def test_solver_matches_scalar_bisection_oracle():
    # One server, one user, one minibatch, one sample omega = [1], y = 1:
    # f(x) = (kappa/2) x^2 + softplus(x) - x, so f'(x) = kappa x + s(x) - 1.
    cfg = problem.DatasetConfig(n_servers=1, users_per_server=1,
                                minibatches_per_user=1, batch_size=1,
                                dim=1, kappa=0.05)
    ds = problem.Dataset(cfg=cfg, features=np.ones((1, 1, 1, 1, 1)),
                         labels=np.ones((1, 1, 1, 1)))
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.05 * mid + problem.sigmoid(mid) - 1.0 < 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    got = problem.solve_centralized(ds, 1e-12)
    assert abs(float(got[0]) - root) <= 1e-9


def test_large_ridge_pins_solution_near_origin():
    cfg = problem.DatasetConfig(n_servers=4, users_per_server=3,
                                minibatches_per_user=2, batch_size=3,
                                dim=12, kappa=1e6)
    ds = problem.synthesize_dataset(cfg, seed=3)
    x = problem.solve_centralized(ds, 1e-10)
    assert np.linalg.norm(x) <= 1e-3


# ---------------------------------------------------------------------- IO


def test_dataset_dump_round_trip(tiny_ds, tmp_path):
    path = tmp_path / "ds.bin"
    problem.write_dataset(tiny_ds, path)
    back = problem.read_dataset(path)
    assert back.cfg == tiny_ds.cfg
    assert back.features.tobytes() == tiny_ds.features.tobytes()
    assert back.labels.tobytes() == tiny_ds.labels.tobytes()


def test_dataset_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(problem.ProblemError, match="bad magic"):
        problem.read_dataset(path)


def test_dataset_dump_rejects_bad_version(tiny_ds, tmp_path):
    path = tmp_path / "ds.bin"
    problem.write_dataset(tiny_ds, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(problem.ProblemError, match="version"):
        problem.read_dataset(path)


# ------------------------------------------------------------- properties


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_objective_midpoint_convexity(tiny_ds, data):
    coords = st.floats(min_value=-3.0, max_value=3.0,
                       allow_nan=False, allow_infinity=False)
    a = np.array(data.draw(st.lists(coords, min_size=6, max_size=6)))
    b = np.array(data.draw(st.lists(coords, min_size=6, max_size=6)))
    mid = problem.objective(0.5 * (a + b), tiny_ds)
    avg = 0.5 * (problem.objective(a, tiny_ds) + problem.objective(b, tiny_ds))
    assert mid <= avg + 1e-9
