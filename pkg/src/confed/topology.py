"""Server graphs and doubly-stochastic mixing matrices.

Servers form an undirected connected graph; consensus steps average
neighbor state through W = I - L/tau where L is the graph Laplacian and
tau exceeds lambda_max(L)/2.  The contraction factor of the consensus
step is sigma, the second-largest singular value of W, equivalently
||W - (1/n) 11^T||_2 for symmetric doubly-stochastic W.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _rng

GRAPH_KINDS = ("random", "ring", "complete")

#: Attempts before giving up on sampling a connected random graph.
MAX_GRAPH_ATTEMPTS = 1000

#: Power-iteration controls (relative tolerance, iteration cap).
POWER_TOL = 1e-10
POWER_CAP = 100_000


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class ServerGraph:
    """Undirected connected graph on n servers.

    edges holds each undirected pair once, as sorted (i, j) tuples in
    lexicographic order, so iteration order is deterministic.
    """

    n: int
    edges: tuple
    kind: str

    def adjacency(self):
        a = np.zeros((self.n, self.n), dtype=float)
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def degrees(self):
        return self.adjacency().sum(axis=1)


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly-stochastic weight matrix with cached spectral gap."""

    w: np.ndarray = field(repr=False)
    sigma: float
    tau: float

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def directed_links(self):
        """Number of ordered neighbor pairs (twice the undirected edge count)."""
        off = self.w.copy()
        np.fill_diagonal(off, 0.0)
        return int(np.count_nonzero(off))


def _connected(n, edges):
    """BFS reachability from node 0 over an undirected edge list."""
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return all(seen)


def build_graph(kind, n, edge_prob=None, seed=0):
    """Build a connected server graph of the requested kind.

    random: Erdos-Renyi(edge_prob), resampled with a fresh sub-seed per
    attempt until connected (at most MAX_GRAPH_ATTEMPTS).  ring: cycle
    0-1-...-n-1-0.  complete: all pairs.  Deterministic for fixed
    (kind, n, edge_prob, seed).
    """
    if kind not in GRAPH_KINDS:
        raise TopologyError(f"unknown graph kind {kind!r}; expected one of {GRAPH_KINDS}")
    if n < 2:
        raise TopologyError(f"need at least 2 servers, got n={n}")

    if kind == "ring":
        edges = sorted({tuple(sorted((i, (i + 1) % n))) for i in range(n)})
        return ServerGraph(n=n, edges=tuple(edges), kind=kind)

    if kind == "complete":
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
        return ServerGraph(n=n, edges=tuple(edges), kind=kind)

    if edge_prob is None or not (0.0 < edge_prob <= 1.0):
        raise TopologyError(f"random graph needs edge_prob in (0, 1], got {edge_prob!r}")
    for attempt in range(MAX_GRAPH_ATTEMPTS):
        gen = _rng.keyed_generator(seed, _rng.GRAPH, attempt)
        coins = gen.random(size=(n, n))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if coins[i, j] < edge_prob]
        if _connected(n, edges):
            return ServerGraph(n=n, edges=tuple(edges), kind=kind)
    raise TopologyError(
        f"no connected graph in {MAX_GRAPH_ATTEMPTS} attempts (n={n}, edge_prob={edge_prob}); "
        "edge_prob is too low"
    )


def laplacian(g):
    """Graph Laplacian L = D - A (symmetric PSD, row sums zero)."""
    a = g.adjacency()
    return np.diag(a.sum(axis=1)) - a


def _power_eig_sym(mat, tol=POWER_TOL, cap=POWER_CAP):
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration.

    Deterministic start vector; converges on relative change of the
    Rayleigh quotient.  Returns 0.0 for the (near-)zero matrix.
    """
    n = mat.shape[0]
    v = _rng.keyed_generator(0, _rng.POWER).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(cap):
        av = mat @ v
        norm = np.linalg.norm(av)
        if norm <= 1e-300:
            return 0.0
        lam_new = float(v @ av)
        v = av / norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    raise TopologyError(f"power iteration did not converge in {cap} iterations")


def spectral_gap(w):
    """sigma = ||W - (1/n) 11^T||_2 via power iteration (rel. tol 1e-10).

    Accepts a MixingMatrix or a raw square array.  For symmetric
    doubly-stochastic W this equals the second-largest singular value.
    The iteration runs on B^T B with B = W - 11^T/n (symmetric PSD), so
    paired +/- eigenvalues of B cannot stall it.
    """
    mat = w.w if isinstance(w, MixingMatrix) else np.asarray(w, dtype=float)
    n = mat.shape[0]
    b = mat - np.full((n, n), 1.0 / n)
    lam = _power_eig_sym(b @ b)
    return float(np.sqrt(max(lam, 0.0)))


def mixing_matrix(g, tau="auto"):
    """Mixing matrix W = I - L/tau for a connected graph.

    tau="auto" sets tau = lambda_max(L) (strictly above the
    lambda_max/2 primitivity floor and large enough to keep W
    entrywise nonnegative, hence PSD with singular values equal to
    eigenvalues).  An explicit tau must exceed lambda_max(L)/2 and
    keep every entry of W nonnegative (tau >= max degree).
    """
    if not _connected(g.n, g.edges):
        raise TopologyError("graph is disconnected; sigma would be 1")
    lap = laplacian(g)
    lam_max = _power_eig_sym(lap)
    if tau == "auto":
        tau_val = lam_max
    else:
        tau_val = float(tau)
        if tau_val <= lam_max / 2.0:
            raise TopologyError(
                f"tau={tau_val} violates tau > lambda_max(L)/2 = {lam_max / 2.0}"
            )
    w = np.eye(g.n) - lap / tau_val
    if w.min() < 0.0:
        raise TopologyError(
            f"tau={tau_val} gives negative mixing weights (needs tau >= max degree "
            f"{int(g.degrees().max())}); matrix would not be stochastic"
        )
    sigma = spectral_gap(w)
    if sigma >= 1.0:
        raise TopologyError(f"sigma={sigma} >= 1; mixing would not contract")
    return MixingMatrix(w=w, sigma=sigma, tau=tau_val)


def dump_mixing_csv(mix, path):
    """Debug dump of W as CSV, row-major, full precision (%.17g)."""
    with open(path, "w") as fh:
        for row in mix.w:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
