"""Round engines for confederated optimization.

All algorithm state lives on the server axis: a cluster of ``n`` edge
servers holds iterates ``x``, tracker variables ``y`` and aggregated
variance-reduced gradients ``g`` as ``[n, dim]`` arrays, while the SAGA
bookkeeping (per-minibatch stored gradients and their running sums) is
kept in ``[n, p, s, dim]`` / ``[n, p, dim]`` arrays.  Rounds mutate the
state in place and return a small record of what happened, so a caller
can stream per-round statistics without re-deriving them.

Three round types are provided:

* :func:`cfl_saga_round` — gradient tracking with SAGA-style variance
  reduction and an event-triggered upload rule: a user only uploads the
  innovation of its gradient estimate when that innovation exceeds a
  broadcast consensus-gap threshold.
* :func:`gt_saga_round` — the sampled-user baseline: each server
  activates a random subset of users per round and rebuilds its
  aggregate from the SAGA tables.
* :func:`gt_round` — plain gradient tracking with exact server
  gradients (no sampling, no tables).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .problem import Dataset, minibatch_gradients_at, server_gradients
from .topology import MixingMatrix

__all__ = [
    "CommLedger",
    "TriggerPolicy",
    "SagaTables",
    "ClusterState",
    "RoundInfo",
    "EngineError",
    "InvariantViolation",
    "DivergenceError",
    "consensus_gap_sq",
    "init_state",
    "round_slot_draws",
    "round_selection_draws",
    "ctus_decide",
    "vr_estimate",
    "vr_gradient",
    "gt_saga_estimate",
    "cfl_saga_round",
    "gt_saga_round",
    "gt_round",
]

#: Any coordinate beyond this magnitude is treated as divergence.
DIVERGENCE_CAP = 1e12

#: Relative tolerance for the self-check monitors.
MONITOR_TOL = 1e-9


class EngineError(RuntimeError):
    """Base class for engine failures."""


class InvariantViolation(EngineError):
    """An internal consistency monitor failed."""


class DivergenceError(EngineError):
    """The iterates blew up (non-finite or beyond :data:`DIVERGENCE_CAP`)."""


@dataclass
class CommLedger:
    """Cumulative communication counters for one run.

    ``vrsg_uploads`` counts user->server gradient-innovation uploads,
    ``server_broadcasts`` counts server->server vector exchanges over
    graph edges (each undirected edge carries one vector in each
    direction per mixing pass), and ``threshold_broadcasts`` counts
    server->user threshold notifications.
    """

    vrsg_uploads: int = 0
    server_broadcasts: int = 0
    threshold_broadcasts: int = 0


@dataclass(frozen=True)
class TriggerPolicy:
    """Event-trigger configuration: upload iff ||delta||^2 > rho * threshold."""

    rho: float = 10.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.rho) or self.rho < 0:
            raise ValueError(f"rho must be finite and >= 0, got {self.rho}")


@dataclass
class SagaTables:
    """Per-minibatch gradient memory for the variance-reduced estimators.

    ``stored[i, j, t]`` is the gradient of minibatch ``t`` of user ``j``
    on server ``i`` evaluated at that minibatch's reference point;
    ``grad_sum[i, j]`` keeps ``stored[i, j].sum(axis=0)`` incrementally.
    ``last_vrsg[i, j]`` is the most recent estimate the server has on
    record for user ``(i, j)`` — the value the aggregate ``g_i`` is made
    of.  ``phi`` optionally retains the reference points themselves so a
    caller can measure how far the table lags the iterate; it is ``None``
    unless that diagnostic was requested at init time.
    """

    stored: np.ndarray  # [n, p, s, dim]
    grad_sum: np.ndarray  # [n, p, dim]
    last_vrsg: np.ndarray  # [n, p, dim]
    phi: np.ndarray | None  # [n, p, s, dim] or None

    def table_gap(self, x: np.ndarray) -> float:
        """Sum over all minibatches of ||phi_ijt - x||^2.

        ``x`` may be a single ``[dim]`` reference point (the same for
        every server, e.g. the optimum) or per-server ``[n, dim]``
        iterates.  Requires ``phi`` (init with ``track_phi=True``).
        """
        if self.phi is None:
            raise EngineError("table_gap requires phi tracking (track_phi=True)")
        x = np.asarray(x, dtype=float)
        ref = x if x.ndim == 1 else x[:, None, None, :]
        diff = self.phi - ref
        return float(np.einsum("npsd,npsd->", diff, diff))


@dataclass
class ClusterState:
    """Full mutable state of one simulated cluster.

    ``g`` is the current per-server aggregate of user estimates and
    ``g_prev`` the aggregate used in the previous tracker update; plain
    gradient tracking reuses the same two slots for exact gradients.
    ``g_table_sum[i]`` keeps ``tables.stored[i].sum(axis=(0, 1))``
    current across every round type that commits to the tables; the
    sampled-user estimator reads it.  ``refresh_every`` controls how often
    the incrementally maintained sums are recomputed from the tables to
    stop round-off drift (0 disables refresh).
    """

    x: np.ndarray  # [n, dim]
    y: np.ndarray  # [n, dim]
    g: np.ndarray  # [n, dim]
    g_prev: np.ndarray  # [n, dim]
    g_table_sum: np.ndarray  # [n, dim]
    tables: SagaTables
    round: int = 0
    seed: int = 0
    refresh_every: int = 1000
    comm: CommLedger = field(default_factory=CommLedger)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class RoundInfo:
    """What one round did: trigger mask and consensus-step diagnostics.

    ``triggers`` is the boolean upload mask (``[n, p]``; all-True for
    plain tracking, the sampled subset for the sampled-user baseline),
    ``sum_delta_sq`` is the total of ``||delta_ij||^2`` over all users
    and ``sum_thr_sq`` the total over servers of the squared trigger
    thresholds ``||(W x - x)_i||^2`` (both zero for the baselines), and
    ``consensus_margin`` is ``bound - actual`` for the consensus
    contraction inequality (non-negative when the inequality holds).
    """

    round: int
    triggers: np.ndarray
    sum_delta_sq: float
    sum_thr_sq: float
    consensus_margin: float


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def round_slot_draws(seed: int, rnd: int, n: int, p: int, s: int) -> np.ndarray:
    """Minibatch indices drawn by every user in round ``rnd`` (``[n, p]``)."""
    gen = _rng.keyed_generator(seed, _rng.ROUND, index=rnd)
    return gen.integers(0, s, size=(n, p))


def round_selection_draws(
    seed: int, rnd: int, n: int, p: int, m: int, s: int
) -> tuple[np.ndarray, np.ndarray]:
    """Sampled-user draws for round ``rnd``.

    Each server activates ``m`` of its ``p`` users without replacement
    and each active user draws one minibatch index.  Returns
    ``(users, slots)``, both ``[n, m]``, with users listed in increasing
    order per server.  The user subset and the slots come from the same
    round-keyed stream, in that order, so a round's draws are a pure
    function of ``(seed, rnd)``.
    """
    if not 1 <= m <= p:
        raise ValueError(f"selected users m={m} must satisfy 1 <= m <= p={p}")
    gen = _rng.keyed_generator(seed, _rng.ROUND, index=rnd)
    keys = gen.random(size=(n, p))
    users = np.sort(np.argsort(keys, axis=1)[:, :m], axis=1)
    slots = gen.integers(0, s, size=(n, m))
    return users, slots


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def init_state(
    ds: Dataset,
    mix: MixingMatrix,
    seed: int = 0,
    track_phi: bool = False,
    refresh_every: int = 1000,
) -> ClusterState:
    """Build the starting state shared by all three round types.

    Every server starts from the origin: ``x = y = g = g_prev = 0``.
    The SAGA tables are warm-started with the exact minibatch gradients
    at zero, so the first variance-reduced estimate collapses to the
    freshly drawn minibatch gradient plus the stale-table correction.
    ``last_vrsg`` starts at zero to match ``g``: the aggregate a server
    holds is always the sum of the per-user estimates it knows about.
    """
    cfg = ds.cfg
    if mix.n != cfg.n_servers:
        raise ValueError(
            f"mixing matrix is {mix.n}x{mix.n} but dataset has "
            f"{cfg.n_servers} servers"
        )
    if refresh_every < 0:
        raise ValueError(f"refresh_every must be >= 0, got {refresh_every}")
    n, p, s, d = cfg.n_servers, cfg.users_per_server, cfg.minibatches_per_user, cfg.dim

    # Gradient of every minibatch at x = 0: the sigmoid is 1/2 there and
    # the ridge term vanishes, so each sample contributes (1/2 - y) * w.
    stored = np.einsum("npsbd,npsb->npsd", ds.features, 0.5 - ds.labels)
    tables = SagaTables(
        stored=stored,
        grad_sum=stored.sum(axis=2),
        last_vrsg=np.zeros((n, p, d)),
        phi=np.zeros((n, p, s, d)) if track_phi else None,
    )
    zeros = lambda: np.zeros((n, d))  # noqa: E731
    return ClusterState(
        x=zeros(),
        y=zeros(),
        g=zeros(),
        g_prev=zeros(),
        g_table_sum=stored.sum(axis=(1, 2)),
        tables=tables,
        round=0,
        seed=seed,
        refresh_every=refresh_every,
    )


# ---------------------------------------------------------------------------
# Variance-reduced estimators (pure forms, used by the rounds and by tests)
# ---------------------------------------------------------------------------


def ctus_decide(delta: np.ndarray, threshold_sq: float, policy: TriggerPolicy) -> bool:
    """Single-user upload decision: ``||delta||^2 > rho * threshold_sq``.

    Strict inequality, so a zero innovation never uploads — even at
    ``rho = 0``, where every nonzero innovation does.
    """
    if threshold_sq < 0 or not np.isfinite(threshold_sq):
        raise ValueError(f"threshold_sq must be finite and >= 0, got {threshold_sq}")
    delta = np.asarray(delta, dtype=float)
    return bool(float(delta @ delta) > policy.rho * threshold_sq)


def vr_estimate(
    ds: Dataset,
    tables: SagaTables,
    x: np.ndarray,
    slots: np.ndarray,
) -> np.ndarray:
    """Per-user variance-reduced stochastic gradients, without commit.

    For every user ``(i, j)`` with drawn minibatch ``t = slots[i, j]``
    the estimate is ``S * (grad_t(x_i) - stored[i, j, t]) +
    grad_sum[i, j]`` where ``S`` is the number of minibatches per user.
    Unbiased for the user objective's gradient under a uniform draw of
    ``t``.  Returns ``[n, p, dim]`` and leaves the tables untouched.
    """
    s = ds.cfg.minibatches_per_user
    p = ds.cfg.users_per_server
    users = np.broadcast_to(np.arange(p), slots.shape)
    fresh = minibatch_gradients_at(ds, x, users, slots)
    ax0 = np.arange(slots.shape[0])[:, None]
    old = tables.stored[ax0, users, slots]
    return s * (fresh - old) + tables.grad_sum


def vr_gradient(
    ds: Dataset,
    tables: SagaTables,
    x: np.ndarray,
    slots: np.ndarray,
) -> np.ndarray:
    """Variance-reduced gradients with table commit.

    Same estimate as :func:`vr_estimate`, but afterwards each drawn
    table cell is replaced by the fresh minibatch gradient, the running
    per-user sums are updated incrementally, and — when reference points
    are tracked — the drawn cells of ``phi`` are set to the current
    iterate.  Returns the ``[n, p, dim]`` estimates.
    """
    p = ds.cfg.users_per_server
    users = np.broadcast_to(np.arange(p), slots.shape)
    fresh = minibatch_gradients_at(ds, x, users, slots)
    ax0 = np.arange(slots.shape[0])[:, None]
    old = tables.stored[ax0, users, slots]
    est = ds.cfg.minibatches_per_user * (fresh - old) + tables.grad_sum
    tables.grad_sum += fresh - old
    tables.stored[ax0, users, slots] = fresh
    if tables.phi is not None:
        tables.phi[ax0, users, slots] = x[:, None, :]
    return est


def gt_saga_estimate(
    ds: Dataset,
    tables: SagaTables,
    g_table_sum: np.ndarray,
    x: np.ndarray,
    users: np.ndarray,
    slots: np.ndarray,
) -> np.ndarray:
    """Per-server sampled-user gradient estimates, without commit.

    With ``m`` active users per server, each contributing one fresh
    minibatch gradient against its stored counterpart, the server
    estimate is ``(S_tot / m) * sum_j (grad - stored) + g_table_sum_i``
    where ``S_tot = p * s`` is the server's total minibatch count.
    Unbiased under without-replacement user subsets and uniform slot
    draws.  Returns ``[n, dim]``.
    """
    cfg = ds.cfg
    m = users.shape[1]
    s_tot = cfg.users_per_server * cfg.minibatches_per_user
    fresh = minibatch_gradients_at(ds, x, users, slots)
    ax0 = np.arange(users.shape[0])[:, None]
    old = tables.stored[ax0, users, slots]
    return (s_tot / m) * (fresh - old).sum(axis=1) + g_table_sum


# ---------------------------------------------------------------------------
# Monitors
# ---------------------------------------------------------------------------


def _check_finite(x: np.ndarray, what: str, rnd: int) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_CAP:
        raise DivergenceError(f"{what} diverged at round {rnd}")


def consensus_gap_sq(z: np.ndarray) -> float:
    """Squared consensus gap ||z - 1 z_bar||^2 of per-server vectors ``[n, dim]``."""
    dev = z - z.mean(axis=0)
    return float(np.einsum("nd,nd->", dev, dev))


def _consensus_margin(
    x_old: np.ndarray, x_new: np.ndarray, y_old: np.ndarray, sigma: float, alpha: float
) -> tuple[float, float]:
    """Margin of the one-round consensus contraction bound.

    The mixing step satisfies ``X_next <= (1+sigma^2)/2 * X +
    2 alpha^2/(1-sigma^2) * Y`` where ``X`` and ``Y`` are the squared
    consensus gaps of the iterate and the tracker.  Returns
    ``(bound - actual, bound)``; a negative margin beyond round-off
    means the inequality was violated.  A complete graph has
    ``sigma = 0`` and contracts exactly.
    """
    x_gap = consensus_gap_sq(x_old)
    y_gap = consensus_gap_sq(y_old)
    bound = 0.5 * (1 + sigma**2) * x_gap + 2 * alpha**2 / (1 - sigma**2) * y_gap
    return bound - consensus_gap_sq(x_new), bound


def _run_monitors(
    state: ClusterState,
    x_old_bar: np.ndarray,
    y_old_bar: np.ndarray,
    alpha: float,
    margin: float,
    margin_scale: float,
    check_vrsg_sum: bool,
) -> None:
    rnd = state.round
    # Dynamic average consensus: the tracker mean always equals the
    # aggregate mean (exactly preserved by y <- Wy + g_new - g_old).
    y_bar = state.y.mean(axis=0)
    g_bar = state.g.mean(axis=0)
    scale = 1.0 + float(np.linalg.norm(g_bar))
    if np.linalg.norm(y_bar - g_bar) > MONITOR_TOL * scale:
        raise InvariantViolation(
            f"tracker mean drifted from aggregate mean at round {rnd}: "
            f"||y_bar - g_bar|| = {np.linalg.norm(y_bar - g_bar):.3e}"
        )
    # Mean dynamics: averaging the update gives x_bar_next = x_bar - alpha*y_bar.
    expect = x_old_bar - alpha * y_old_bar
    x_bar = state.x.mean(axis=0)
    scale = 1.0 + float(np.linalg.norm(expect))
    if np.linalg.norm(x_bar - expect) > MONITOR_TOL * scale:
        raise InvariantViolation(
            f"mean iterate dynamics violated at round {rnd}: "
            f"||x_bar - (x_bar_prev - alpha y_bar_prev)|| = "
            f"{np.linalg.norm(x_bar - expect):.3e}"
        )
    if margin < -MONITOR_TOL * (1.0 + margin_scale):
        raise InvariantViolation(
            f"consensus contraction bound violated at round {rnd}: "
            f"margin = {margin:.3e}"
        )
    if check_vrsg_sum:
        # The aggregate each server holds is the sum of the estimates it
        # has on record for its users.
        expected_g = state.tables.last_vrsg.sum(axis=1)
        err = float(np.linalg.norm(state.g - expected_g))
        scale = 1.0 + float(np.linalg.norm(expected_g))
        if err > MONITOR_TOL * scale:
            raise InvariantViolation(
                f"aggregate does not match recorded user estimates at round "
                f"{rnd}: error = {err:.3e}"
            )


def _maybe_refresh(state: ClusterState, ds: Dataset, monitor: bool) -> None:
    """Recompute the incrementally maintained sums from the tables.

    Runs every ``refresh_every`` rounds.  With monitoring on, first
    verifies that the drift being repaired is itself negligible.
    """
    if state.refresh_every <= 0 or state.round % state.refresh_every != 0:
        return
    grad_sum = state.tables.stored.sum(axis=2)
    g_table_sum = state.tables.stored.sum(axis=(1, 2))
    if monitor:
        drift = float(np.linalg.norm(state.tables.grad_sum - grad_sum))
        scale = 1.0 + float(np.linalg.norm(grad_sum))
        if drift > MONITOR_TOL * scale:
            raise InvariantViolation(
                f"running minibatch-gradient sums drifted by {drift:.3e} "
                f"at round {state.round}"
            )
        drift = float(np.linalg.norm(state.g_table_sum - g_table_sum))
        scale = 1.0 + float(np.linalg.norm(g_table_sum))
        if drift > MONITOR_TOL * scale:
            raise InvariantViolation(
                f"running table totals drifted by {drift:.3e} "
                f"at round {state.round}"
            )
    state.tables.grad_sum = grad_sum
    state.g_table_sum = g_table_sum


# ---------------------------------------------------------------------------
# Rounds
# ---------------------------------------------------------------------------


def cfl_saga_round(
    state: ClusterState,
    ds: Dataset,
    mix: MixingMatrix,
    alpha: float,
    policy: TriggerPolicy,
    monitor: bool = False,
) -> RoundInfo:
    """One event-triggered variance-reduced gradient-tracking round.

    #. Servers mix and step: ``x_new = W x - alpha * y``, then exchange
       the new iterates with their neighbors.
    #. Each server turns its own consensus gap after a second mixing
       pass, ``||(W x_new - x_new)_i||^2`` — computable from the vectors
       the first exchange already delivered — into an upload threshold
       and broadcasts it to its users.
    #. Every user draws a minibatch, forms the variance-reduced estimate
       and updates its table, but uploads the innovation against the
       server's recorded value only when ``||delta||^2 > rho * thr``.
    #. Servers fold the received innovations into their aggregates and
       update the tracker: ``y_new = W y + g_new - g_old``.

    Mutates ``state`` in place and returns the round's :class:`RoundInfo`.
    """
    if alpha < 0 or not np.isfinite(alpha):
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
    cfg = ds.cfg
    n, p = cfg.n_servers, cfg.users_per_server
    w = mix.w
    rnd = state.round + 1

    x_old, y_old = state.x, state.y
    x_old_bar = x_old.mean(axis=0)
    y_old_bar = y_old.mean(axis=0)

    # 1) Mix and step; neighbors exchange the new iterates.
    x_new = w @ state.x - alpha * state.y
    state.comm.server_broadcasts += 2 * mix.directed_links

    # 2) Per-server trigger thresholds from a second mixing pass on the
    #    new iterates (no further exchange needed: step 1 delivered the
    #    neighbor values this pass consumes).
    mixed_twice = w @ x_new
    thr_sq = np.einsum("nd,nd->n", mixed_twice - x_new, mixed_twice - x_new)
    state.comm.threshold_broadcasts += n * p

    # 3) Every user computes and commits its estimate; only triggered
    #    innovations travel.
    slots = round_slot_draws(state.seed, rnd, n, p, cfg.minibatches_per_user)
    user_sums_before = state.tables.grad_sum.sum(axis=1)
    est = vr_gradient(ds, state.tables, x_new, slots)
    state.g_table_sum += state.tables.grad_sum.sum(axis=1) - user_sums_before
    delta = est - state.tables.last_vrsg
    delta_sq = np.einsum("npd,npd->np", delta, delta)
    triggers = delta_sq > policy.rho * thr_sq[:, None]
    state.comm.vrsg_uploads += int(triggers.sum())

    # 4) Fold the uploaded innovations into the aggregates; a user that
    #    stayed silent keeps its server-side record unchanged.
    g_new = state.g + np.einsum("npd,np->nd", delta, triggers.astype(float))
    state.tables.last_vrsg = np.where(
        triggers[:, :, None], est, state.tables.last_vrsg
    )

    # 5) Tracker update and commit.
    y_new = w @ state.y + g_new - state.g
    state.g_prev = state.g
    state.g = g_new
    state.x = x_new
    state.y = y_new
    state.round = rnd

    _check_finite(state.x, "iterate", rnd)
    _check_finite(state.y, "tracker", rnd)

    margin, bound = _consensus_margin(x_old, x_new, y_old, mix.sigma, alpha)
    if monitor:
        _run_monitors(
            state, x_old_bar, y_old_bar, alpha, margin, bound, check_vrsg_sum=True
        )
    _maybe_refresh(state, ds, monitor)

    return RoundInfo(
        round=rnd,
        triggers=triggers,
        sum_delta_sq=float(delta_sq.sum()),
        sum_thr_sq=float(thr_sq.sum()),
        consensus_margin=margin,
    )


def gt_saga_round(
    state: ClusterState,
    ds: Dataset,
    mix: MixingMatrix,
    alpha: float,
    selected_users: int,
    monitor: bool = False,
) -> RoundInfo:
    """One sampled-user variance-reduced gradient-tracking round.

    Each server activates ``selected_users`` of its users uniformly
    without replacement; each active user contributes one fresh
    minibatch gradient, and the server rebuilds its aggregate from the
    rescaled innovations plus its running table total.  Every active
    user uploads (there is no trigger).
    """
    if alpha < 0 or not np.isfinite(alpha):
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
    cfg = ds.cfg
    n, p, s = cfg.n_servers, cfg.users_per_server, cfg.minibatches_per_user
    m = selected_users
    w = mix.w
    rnd = state.round + 1

    x_old, y_old = state.x, state.y
    x_old_bar = x_old.mean(axis=0)
    y_old_bar = y_old.mean(axis=0)

    x_new = w @ state.x - alpha * state.y
    state.comm.server_broadcasts += 2 * mix.directed_links

    users, slots = round_selection_draws(state.seed, rnd, n, p, m, s)
    fresh = minibatch_gradients_at(ds, x_new, users, slots)
    ax0 = np.arange(n)[:, None]
    old = state.tables.stored[ax0, users, slots]
    g_new = (p * s / m) * (fresh - old).sum(axis=1) + state.g_table_sum
    state.comm.vrsg_uploads += n * m

    diff = fresh - old
    state.tables.grad_sum[ax0, users] += diff
    state.g_table_sum += diff.sum(axis=1)
    state.tables.stored[ax0, users, slots] = fresh
    if state.tables.phi is not None:
        state.tables.phi[ax0, users, slots] = x_new[:, None, :]

    y_new = w @ state.y + g_new - state.g
    state.g_prev = state.g
    state.g = g_new
    state.x = x_new
    state.y = y_new
    state.round = rnd

    _check_finite(state.x, "iterate", rnd)
    _check_finite(state.y, "tracker", rnd)

    margin, bound = _consensus_margin(x_old, x_new, y_old, mix.sigma, alpha)
    if monitor:
        _run_monitors(
            state, x_old_bar, y_old_bar, alpha, margin, bound, check_vrsg_sum=False
        )
    _maybe_refresh(state, ds, monitor)

    triggers = np.zeros((n, p), dtype=bool)
    triggers[ax0, users] = True
    return RoundInfo(
        round=rnd,
        triggers=triggers,
        sum_delta_sq=0.0,
        sum_thr_sq=0.0,
        consensus_margin=margin,
    )


def gt_round(
    state: ClusterState,
    ds: Dataset,
    mix: MixingMatrix,
    alpha: float,
    monitor: bool = False,
) -> RoundInfo:
    """One exact gradient-tracking round.

    Every user uploads its exact gradient contribution each round, so
    the server aggregate is the true local gradient at the new iterate.
    The SAGA tables are left untouched.
    """
    if alpha < 0 or not np.isfinite(alpha):
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
    cfg = ds.cfg
    n, p = cfg.n_servers, cfg.users_per_server
    w = mix.w
    rnd = state.round + 1

    x_old, y_old = state.x, state.y
    x_old_bar = x_old.mean(axis=0)
    y_old_bar = y_old.mean(axis=0)

    x_new = w @ state.x - alpha * state.y
    state.comm.server_broadcasts += 2 * mix.directed_links

    g_new = server_gradients(ds, x_new)
    state.comm.vrsg_uploads += n * p

    y_new = w @ state.y + g_new - state.g
    state.g_prev = state.g
    state.g = g_new
    state.x = x_new
    state.y = y_new
    state.round = rnd

    _check_finite(state.x, "iterate", rnd)
    _check_finite(state.y, "tracker", rnd)

    margin, bound = _consensus_margin(x_old, x_new, y_old, mix.sigma, alpha)
    if monitor:
        _run_monitors(
            state, x_old_bar, y_old_bar, alpha, margin, bound, check_vrsg_sum=False
        )

    return RoundInfo(
        round=rnd,
        triggers=np.ones((n, p), dtype=bool),
        sum_delta_sq=0.0,
        sum_thr_sq=0.0,
        consensus_margin=margin,
    )
