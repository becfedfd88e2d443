"""Graph builders, Laplacians, and doubly-stochastic mixing matrices."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confed import topology
from conftest import assert_mixing_invariants


def reachable_all(g: topology.ServerGraph) -> bool:
    """Connectivity oracle via boolean matrix powers (independent of BFS)."""
    a = g.adjacency() + np.eye(g.n)
    reach = a > 0
    for _ in range(g.n):
        reach = (reach @ reach) > 0
    return bool(reach.all())


# ---------------------------------------------------------------- builders


def test_ring_edges_and_degrees():
    g = topology.build_graph("ring", 5)
    assert g.edges == ((0, 1), (0, 4), (1, 2), (2, 3), (3, 4))
    assert np.array_equal(g.degrees(), np.full(5, 2.0))


def test_complete_edges_and_degrees():
    g = topology.build_graph("complete", 4)
    assert len(g.edges) == 6
    assert np.array_equal(g.degrees(), np.full(4, 3.0))


def test_random_graph_connected_and_deterministic():
    g1 = topology.build_graph("random", 12, edge_prob=0.4, seed=11)
    g2 = topology.build_graph("random", 12, edge_prob=0.4, seed=11)
    g3 = topology.build_graph("random", 12, edge_prob=0.4, seed=12)
    assert g1.edges == g2.edges
    assert g1.edges != g3.edges
    assert reachable_all(g1)


def test_random_graph_edges_are_canonical_pairs():
    g = topology.build_graph("random", 10, edge_prob=0.5, seed=5)
    assert all(i < j for i, j in g.edges)
    assert list(g.edges) == sorted(g.edges)


def test_build_graph_rejects_bad_inputs():
    with pytest.raises(topology.TopologyError):
        topology.build_graph("tree", 5)
    with pytest.raises(topology.TopologyError):
        topology.build_graph("ring", 1)
    with pytest.raises(topology.TopologyError):
        topology.build_graph("random", 5)  # edge_prob missing
    with pytest.raises(topology.TopologyError):
        topology.build_graph("random", 5, edge_prob=0.0)
    with pytest.raises(topology.TopologyError):
        topology.build_graph("random", 5, edge_prob=1.5)


def test_random_graph_gives_up_when_connectivity_hopeless():
    with pytest.raises(topology.TopologyError, match="edge_prob is too low"):
        topology.build_graph("random", 40, edge_prob=0.001, seed=0)


# --------------------------------------------------------------- laplacian


def test_laplacian_identity_and_psd():
    g = topology.build_graph("random", 9, edge_prob=0.5, seed=2)
    lap = topology.laplacian(g)
    assert np.array_equal(lap, np.diag(g.degrees()) - g.adjacency())
    assert np.abs(lap.sum(axis=1)).max() == 0.0
    assert np.linalg.eigvalsh(lap).min() >= -1e-12


def test_power_eig_matches_dense_eigensolver():
    for seed in range(5):
        gen = np.random.default_rng(seed)
        r = gen.standard_normal((8, 8))
        mat = r @ r.T  # PSD, so largest magnitude = largest eigenvalue
        lam = topology._power_eig_sym(mat)
        lam_ref = float(np.linalg.eigvalsh(mat)[-1])
        assert abs(lam - lam_ref) <= 1e-8 * lam_ref


def test_power_eig_zero_matrix():
    assert topology._power_eig_sym(np.zeros((4, 4))) == 0.0


# ---------------------------------------------------------- mixing matrix


def test_complete_graph_tau_n_averages_exactly():
    g = topology.build_graph("complete", 4)
    mix = topology.mixing_matrix(g, tau=4.0)
    assert np.abs(mix.w - 0.25).max() <= 1e-15
    assert mix.sigma <= 1e-12


def test_complete_graph_auto_tau_equals_n():
    g = topology.build_graph("complete", 4)
    mix = topology.mixing_matrix(g)
    assert abs(mix.tau - 4.0) <= 1e-8
    assert mix.sigma <= 1e-6


def test_ring4_tau4_sigma_half():
    g = topology.build_graph("ring", 4)
    mix = topology.mixing_matrix(g, tau=4.0)
    assert abs(mix.sigma - 0.5) <= 1e-10


def test_ring20_auto_invariants():
    mix = topology.mixing_matrix(topology.build_graph("ring", 20))
    assert_mixing_invariants(mix)
    assert mix.sigma > 0.9  # poorly connected ring mixes slowly


def test_directed_links_counts_ordered_pairs():
    g = topology.build_graph("random", 10, edge_prob=0.5, seed=5)
    mix = topology.mixing_matrix(g)
    assert mix.directed_links == 2 * len(g.edges)


def test_mixing_contraction_property():
    mix = topology.mixing_matrix(topology.build_graph("random", 8, edge_prob=0.5, seed=1))
    gen = np.random.default_rng(0)
    z = gen.standard_normal((1000, 8))
    zbar = z.mean(axis=1, keepdims=True)
    before = np.linalg.norm(z - zbar, axis=1)
    after = np.linalg.norm(z @ mix.w.T - zbar, axis=1)
    assert np.all(after <= mix.sigma * before + 1e-9)


def test_mixing_fixed_point_of_averaging():
    mix = topology.mixing_matrix(topology.build_graph("random", 7, edge_prob=0.6, seed=3))
    w_inf = np.full((7, 7), 1.0 / 7)
    assert np.abs(w_inf @ mix.w - w_inf).max() <= 1e-12


def test_explicit_tau_below_primitivity_floor_rejected():
    g = topology.build_graph("ring", 4)  # lambda_max(L) = 4
    with pytest.raises(topology.TopologyError, match="lambda_max"):
        topology.mixing_matrix(g, tau=1.9)


def test_explicit_tau_negative_weights_rejected():
    star = topology.ServerGraph(n=5, edges=((0, 1), (0, 2), (0, 3), (0, 4)), kind="random")
    # lambda_max(L) = 5 so tau=3 passes primitivity, but center degree 4
    # would make w[0, 0] negative.
    with pytest.raises(topology.TopologyError, match="negative mixing weights"):
        topology.mixing_matrix(star, tau=3.0)
    mix = topology.mixing_matrix(star, tau=4.0)
    assert_mixing_invariants(mix)


def test_large_explicit_tau_still_contracts():
    mix = topology.mixing_matrix(topology.build_graph("ring", 6), tau=100.0)
    assert_mixing_invariants(mix)
    assert mix.sigma > 0.95


def test_disconnected_graph_rejected():
    split = topology.ServerGraph(n=4, edges=((0, 1), (2, 3)), kind="random")
    with pytest.raises(topology.TopologyError, match="disconnected"):
        topology.mixing_matrix(split)


def test_spectral_gap_accepts_raw_array():
    w = np.full((3, 3), 1.0 / 3)
    assert topology.spectral_gap(w) <= 1e-12
    assert abs(topology.spectral_gap(np.eye(3)) - 1.0) <= 1e-10


def test_mixing_deterministic_bytes():
    a = topology.mixing_matrix(topology.build_graph("random", 10, edge_prob=0.4, seed=9))
    b = topology.mixing_matrix(topology.build_graph("random", 10, edge_prob=0.4, seed=9))
    assert a.w.tobytes() == b.w.tobytes()
    assert a.sigma == b.sigma


def test_dump_mixing_csv_round_trips(tmp_path):
    mix = topology.mixing_matrix(topology.build_graph("random", 6, edge_prob=0.5, seed=4))
    path = tmp_path / "w.csv"
    topology.dump_mixing_csv(mix, path)
    back = np.loadtxt(path, delimiter=",")
    assert np.array_equal(back, mix.w)


@settings(max_examples=25, deadline=None)
@given(
    kind=st.sampled_from(topology.GRAPH_KINDS),
    n=st.integers(min_value=2, max_value=12),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    edge_prob=st.sampled_from((0.3, 0.6, 0.9)),
)
def test_mixing_invariants_hold_everywhere(kind, n, seed, edge_prob):
    try:
        g = topology.build_graph(kind, n, edge_prob=edge_prob, seed=seed)
    except topology.TopologyError:
        return  # connectivity can be hopeless for small edge_prob
    mix = topology.mixing_matrix(g)
    assert_mixing_invariants(mix)
    assert reachable_all(g)
