"""Shared fixtures: cheap instances for unit tests, the default instance once."""

from __future__ import annotations

import numpy as np
import pytest

from confed import problem, topology


@pytest.fixture(scope="session")
def tiny_cfg() -> problem.DatasetConfig:
    """Smallest config that still exercises every array axis."""
    return problem.DatasetConfig(
        n_servers=3,
        users_per_server=2,
        minibatches_per_user=3,
        batch_size=2,
        dim=6,
        kappa=0.05,
    )


@pytest.fixture(scope="session")
def tiny_ds(tiny_cfg) -> problem.Dataset:
    return problem.synthesize_dataset(tiny_cfg, seed=7)


@pytest.fixture(scope="session")
def tiny_mix() -> topology.MixingMatrix:
    return topology.mixing_matrix(topology.build_graph("ring", 3, seed=0))


@pytest.fixture(scope="session")
def small_instance():
    """A mid-size instance whose centralized solve takes milliseconds."""
    cfg = problem.DatasetConfig(
        n_servers=4,
        users_per_server=3,
        minibatches_per_user=2,
        batch_size=3,
        dim=12,
        kappa=0.05,
    )
    ds = problem.synthesize_dataset(cfg, seed=3)
    x_star = problem.solve_centralized(ds, 1e-10)
    return cfg, ds, x_star


@pytest.fixture(scope="session")
def default_instance():
    """The full 20000-sample instance with its graph and minimizer."""
    cfg = problem.DatasetConfig()
    ds = problem.synthesize_dataset(cfg, seed=0)
    graph = topology.build_graph("random", cfg.n_servers, edge_prob=0.3, seed=0)
    mix = topology.mixing_matrix(graph)
    x_star = problem.solve_centralized(ds, 1e-10)
    return cfg, ds, mix, x_star


def opg_of(x: np.ndarray, x_star: np.ndarray) -> float:
    """Optimality gap ||x - 1 x*|| / sqrt(N) used throughout the tests."""
    diff = x - x_star[None, :]
    return float(np.sqrt((diff * diff).sum() / x.shape[0]))


def assert_mixing_invariants(mix: topology.MixingMatrix) -> None:
    """Symmetry, double stochasticity (±1e-12), contraction sigma < 1."""
    w = mix.w
    n = mix.n
    assert np.abs(w - w.T).max() <= 1e-15
    assert np.abs(w.sum(axis=0) - 1.0).max() <= 1e-12
    assert np.abs(w.sum(axis=1) - 1.0).max() <= 1e-12
    assert w.min() >= 0.0
    assert 0.0 <= mix.sigma < 1.0
    # sigma matches the dense SVD of W - 11^T/n.  The documented power
    # iteration stops on a 1e-10 relative step, which on clustered
    # spectra (large random graphs) leaves ~1e-9 relative eigenvalue
    # error, so the oracle comparison allows 1e-8.
    b = w - np.full((n, n), 1.0 / n)
    sigma_svd = float(np.linalg.svd(b, compute_uv=False)[0])
    assert abs(mix.sigma - sigma_svd) <= 1e-8 * max(1.0, sigma_svd)
