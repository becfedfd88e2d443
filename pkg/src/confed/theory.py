"""Convergence machinery: contraction constants, certified stepsizes, fits.

The event-triggered variance-reduced tracking recursion admits a
four-dimensional error vector

    psi^k = [X^k, Xbar^k, D^{k-1}, Y^k]

(iterate consensus gap, mean-iterate optimality gap, table staleness,
tracker consensus gap) whose expectation contracts linearly: there is a
nonnegative 4x4 matrix ``T`` — assembled here entry-for-entry from the
one-round bounds — with ``E[psi^{k+1}] <= T E[psi^k]``, and a stepsize
range on which ``rho(T) < 1``.  This module evaluates the constants,
builds ``T``, certifies stepsizes by bisecting on ``rho(T(alpha))``,
and provides the empirical counterparts: per-run psi snapshots,
log-linear rate fits, and the upload-pruning diagnostic for the
event trigger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import ClusterState, SagaTables, consensus_gap_sq
from .topology import MixingMatrix

__all__ = [
    "PsiVector",
    "TheoryConstants",
    "RateFit",
    "PruneReport",
    "TheoryError",
    "compute_constants",
    "transition_matrix",
    "spectral_radius",
    "find_alpha_threshold",
    "psi_metrics",
    "psi_recursion_bounds",
    "linear_rate_fit",
    "table_lipschitz_ratio",
    "ctus_prune_check",
]

#: Bracket and step count for the certified-stepsize bisection.
ALPHA_BRACKET_LO = 1e-12
ALPHA_BISECT_STEPS = 60


class TheoryError(ValueError):
    """Invalid inputs to a theory computation."""


@dataclass(frozen=True)
class PsiVector:
    """One snapshot of the four contraction-vector components.

    ``x_gap``: ||x - 1 xbar||^2; ``mean_gap``: ||xbar - x*||^2;
    ``table_gap``: sum over all minibatches of ||x* - phi||^2 (``None``
    when reference points are not tracked); ``y_gap``: ||y - 1 ybar||^2.
    """

    x_gap: float
    mean_gap: float
    table_gap: float | None
    y_gap: float


@dataclass(frozen=True)
class TheoryConstants:
    """All scalar constants of the linear-contraction bound.

    ``c1, c2, c3`` bound the aggregate-gradient variance; ``b1, b2, b3``
    and ``b_bar`` drive the mean-gap recursion; ``a1..a4`` drive the
    tracker-gap recursion; ``gamma = 1 - mu*alpha/4 + 2 c2 alpha^2 / N``
    is the target contraction factor.  The defining inputs are echoed.
    """

    c1: float
    c2: float
    c3: float
    b1: float
    b2: float
    b3: float
    b_bar: float
    a1: float
    a2: float
    a3: float
    a4: float
    gamma: float
    mu: float
    lip: float
    sigma: float
    alpha: float
    rho: float
    n: int
    p_max: int
    s_max: int


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of log(gap) against round index."""

    slope: float
    r_squared: float
    n_points: int

    @property
    def contraction(self) -> float:
        """Per-round multiplicative factor implied by the fit."""
        return math.exp(self.slope)


@dataclass(frozen=True)
class PruneReport:
    """Realized innovation-to-threshold statistics over a trace window.

    ``avg_ratio`` is the window mean of ``r_k = (sum_ij ||Delta||^2 /
    sum_i P_i) / ((1/N) sum_i ||(Wx - x)_i||^2)``; rounds whose
    threshold sum is zero are excluded from the mean and counted in
    ``degenerate_rounds`` (``avg_ratio`` is NaN when every round is
    degenerate).  ``rho_markov`` is the trigger parameter at which the
    mean-ratio (Markov) bound already guarantees the observed
    non-trigger fraction; it is finite exactly when the report supports
    "a large enough trigger parameter prunes at least this much".
    """

    n_rounds: int
    avg_ratio: float
    ratio_finite: bool
    non_trigger_fraction: float
    degenerate_rounds: int
    rho_markov: float
    l_bar: float | None


# ---------------------------------------------------------------------------
# Constants and transition matrix
# ---------------------------------------------------------------------------


def compute_constants(
    mu: float,
    lip: float,
    sigma: float,
    alpha: float,
    rho: float,
    n: int,
    p_max: int,
    s_max: int,
) -> TheoryConstants:
    """Evaluate every scalar of the contraction bound at the given inputs.

    ``mu``/``lip`` are the strong-convexity and smoothness moduli of the
    server objectives, ``sigma`` the mixing contraction factor,
    ``alpha`` the stepsize, ``rho`` the trigger parameter, ``p_max`` the
    largest user count per server and ``s_max`` the largest minibatch
    count per user.
    """
    if not (0 < mu <= lip):
        raise TheoryError(f"need 0 < mu <= lip, got mu={mu}, lip={lip}")
    if not (0 <= sigma < 1):
        raise TheoryError(f"need 0 <= sigma < 1, got sigma={sigma}")
    if not (alpha > 0 and np.isfinite(alpha)):
        raise TheoryError(f"need alpha > 0, got {alpha}")
    if rho < 0:
        raise TheoryError(f"need rho >= 0, got {rho}")
    if min(n, p_max, s_max) < 1:
        raise TheoryError(
            f"counts must be >= 1, got n={n}, p_max={p_max}, s_max={s_max}"
        )

    lsq = lip**2
    sig2 = 1 + sigma**2
    c1 = 8 * lsq * (1 + p_max * s_max**2) + 12 * rho * sig2 * p_max**2
    c2 = 8 * lsq * (1 + p_max * s_max**2) * n
    c3 = 4 * lsq * s_max

    b1 = 1 - mu * alpha + 2 * c2 * alpha**2 / n
    b2 = (
        2 * alpha * lsq
        + 4 * alpha * rho * sig2 * p_max**2
        + 2 * mu * alpha**2 * lsq
        + 2 * mu * alpha**2 * c1
    ) / (mu * n)
    b3 = 2 * alpha**2 * c3 / n
    b_bar = (
        4 * alpha**2 * lsq + 4 * alpha**2 * rho * sig2 * p_max**2 + 2 * alpha**2 * c1
    ) / n

    gap = 1 - sigma**2
    a1 = (
        25 * lsq * sig2
        + 4 * sig2 * c1
        + 3 * sig2 * (2 * c1 * sigma**2 + c2 * b_bar + 2 * c3 * p_max * n)
    ) / gap
    a2 = (
        n * lsq * sig2
        + 4 * sig2 * c2
        + 3 * sig2 * (c2 * (2 + 2 * c2 / lsq) + 2 * c3 * p_max * n)
    ) / gap
    a3 = sig2 / 2 + 24 * alpha**2 * lsq * sig2 / gap + 6 * alpha**2 * c1 * sig2 / gap
    a4 = 4 * sig2 * c3 / gap + 3 * sig2 * (b3 * c2 + c3 * (1 - 1 / s_max)) / gap

    gamma = 1 - mu * alpha / 4 + 2 * c2 * alpha**2 / n

    return TheoryConstants(
        c1=c1,
        c2=c2,
        c3=c3,
        b1=b1,
        b2=b2,
        b3=b3,
        b_bar=b_bar,
        a1=a1,
        a2=a2,
        a3=a3,
        a4=a4,
        gamma=gamma,
        mu=mu,
        lip=lip,
        sigma=sigma,
        alpha=alpha,
        rho=rho,
        n=n,
        p_max=p_max,
        s_max=s_max,
    )


def transition_matrix(tc: TheoryConstants) -> np.ndarray:
    """The 4x4 nonnegative matrix driving ``E[psi^{k+1}] <= T E[psi^k]``.

    Rows are the one-round recursions of, in order, the iterate
    consensus gap, the mean optimality gap, the table staleness and the
    tracker consensus gap.
    """
    sig2 = 1 + tc.sigma**2
    gap = 1 - tc.sigma**2
    return np.array(
        [
            [sig2 / 2, 0.0, 0.0, 2 * tc.alpha**2 / gap],
            [tc.b2, tc.b1, tc.b3, 0.0],
            [2.0 * tc.p_max, 2.0 * tc.p_max * tc.n, 1 - 1 / tc.s_max, 0.0],
            [tc.a1, tc.a2, tc.a4, tc.a3],
        ]
    )


def spectral_radius(t: np.ndarray) -> float:
    """Spectral radius of a nonnegative matrix, with a norm cross-check.

    Uses the dense eigensolver — the matrices here are 4x4, and near
    ``sigma -> 1`` the two dominant eigenvalues become nearly
    degenerate, which defeats iterative methods.  The largest singular
    value is computed independently as a cross-check: the spectral
    radius can never exceed it, so a violation beyond round-off flags a
    numerical failure.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise TheoryError(f"need a square matrix, got shape {t.shape}")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise TheoryError("matrix must be nonnegative and finite")
    lam = float(np.max(np.abs(np.linalg.eigvals(t))))
    smax = float(np.linalg.svd(t, compute_uv=False)[0])
    if lam > smax * (1 + 1e-8) + 1e-12:
        raise TheoryError(
            f"inconsistent spectral estimates: eigenvalue {lam} exceeds "
            f"largest singular value {smax}"
        )
    return lam


def find_alpha_threshold(
    mu: float,
    lip: float,
    sigma: float,
    rho: float,
    n: int,
    p_max: int,
    s_max: int,
) -> float:
    """Largest certified stepsize found by log-bisection.

    Searches ``[1e-12, 1/lip]`` for the largest ``alpha`` with
    ``rho(T(alpha)) <= 1 - mu*alpha/8``, which in particular certifies
    ``rho(T) < 1`` (linear contraction of the error vector).  The lower
    bracket end must itself be certified, otherwise the inputs are
    inconsistent with contraction and an error is raised.
    """

    def certified(alpha: float) -> bool:
        tc = compute_constants(mu, lip, sigma, alpha, rho, n, p_max, s_max)
        return spectral_radius(transition_matrix(tc)) <= 1 - mu * alpha / 8

    lo, hi = ALPHA_BRACKET_LO, 1.0 / lip
    if hi <= lo:
        raise TheoryError(f"degenerate bracket: 1/lip = {hi} <= {lo}")
    if not certified(lo):
        raise TheoryError(
            f"no certified stepsize at the bracket floor {lo}; "
            "inputs inconsistent with contraction"
        )
    if certified(hi):
        return hi
    for _ in range(ALPHA_BISECT_STEPS):
        mid = math.sqrt(lo * hi)
        if certified(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# Empirical counterparts
# ---------------------------------------------------------------------------


def psi_metrics(
    state: ClusterState,
    x_star: np.ndarray,
    mix: MixingMatrix | None = None,
) -> PsiVector:
    """Evaluate the four error components on the current state.

    ``table_gap`` is measured against ``x_star`` over the stored
    reference points and is ``None`` when those are not tracked.  Note
    the contraction vector pairs round-``k`` gaps with the table gap of
    round ``k-1``; callers logging full vectors should snapshot the
    table gap before advancing the round.
    """
    x_star = np.asarray(x_star, dtype=float)
    if x_star.shape != (state.dim,):
        raise TheoryError(
            f"x_star has shape {x_star.shape}, expected ({state.dim},)"
        )
    if mix is not None and mix.n != state.n:
        raise TheoryError(f"mixing matrix is {mix.n}x{mix.n} for {state.n} servers")
    mean_dev = state.x.mean(axis=0) - x_star
    tables = state.tables
    return PsiVector(
        x_gap=consensus_gap_sq(state.x),
        mean_gap=float(mean_dev @ mean_dev),
        table_gap=tables.table_gap(x_star) if tables.phi is not None else None,
        y_gap=consensus_gap_sq(state.y),
    )


def psi_recursion_bounds(
    psi_seq: np.ndarray, tc: TheoryConstants
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted vs. realized error vectors under the contraction matrix.

    ``psi_seq`` has one row per round (columns: x_gap, mean_gap,
    table_gap, y_gap; expectations or ensemble averages).  Returns
    ``(bounds, actuals)`` where ``bounds[k] = T @ psi_seq[k]`` and
    ``actuals[k] = psi_seq[k+1]``, so componentwise ``actuals <=
    bounds`` is the statistical one-round contraction statement.
    """
    psi_seq = np.asarray(psi_seq, dtype=float)
    if psi_seq.ndim != 2 or psi_seq.shape[1] != 4:
        raise TheoryError(f"psi_seq must be [rounds, 4], got {psi_seq.shape}")
    if psi_seq.shape[0] < 2:
        raise TheoryError("need at least two rounds to check the recursion")
    t = transition_matrix(tc)
    return psi_seq[:-1] @ t.T, psi_seq[1:]


def linear_rate_fit(
    rounds: np.ndarray,
    gaps: np.ndarray,
    window: tuple[int, int] | None = None,
) -> RateFit:
    """Least-squares fit of ``log(gap)`` against round index.

    ``window = (lo, hi)`` restricts the fit to rounds in the inclusive
    range.  Requires at least 10 points, all with positive gaps; the
    returned slope is the per-round log-rate (``exp(slope)`` is the
    fitted contraction factor).
    """
    rounds = np.asarray(rounds, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if rounds.shape != gaps.shape or rounds.ndim != 1:
        raise TheoryError("rounds and gaps must be equal-length 1-D arrays")
    if window is not None:
        lo, hi = window
        mask = (rounds >= lo) & (rounds <= hi)
        rounds, gaps = rounds[mask], gaps[mask]
    if rounds.size < 10:
        raise TheoryError(f"fit window too short: {rounds.size} points (need >= 10)")
    if np.any(gaps <= 0) or not np.all(np.isfinite(gaps)):
        raise TheoryError("gaps must be positive and finite over the fit window")

    y = np.log(gaps)
    xc = rounds - rounds.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise TheoryError("fit window has no round-index spread")
    slope = float(xc @ y) / denom
    resid = y - y.mean() - slope * xc
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(resid @ resid)
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(slope=slope, r_squared=r_squared, n_points=int(rounds.size))


def table_lipschitz_ratio(
    tables: SagaTables, minibatch_lip: np.ndarray, x_star: np.ndarray
) -> float:
    """Staleness-weighted squared-smoothness average of the tables.

    Evaluates ``(sum_ijt 4 S L_ijt^2 ||phi_ijt - x*||^2) / (sum_ijt
    ||phi_ijt - x*||^2)`` over the stored reference points — the
    effective squared Lipschitz constant that relates innovation energy
    to table staleness.  NaN at a fully converged table (0/0).
    """
    if tables.phi is None:
        raise TheoryError("table_lipschitz_ratio requires tracked reference points")
    x_star = np.asarray(x_star, dtype=float)
    s_count = tables.phi.shape[2]
    diff = tables.phi - x_star
    sq = np.einsum("npsd,npsd->nps", diff, diff)
    denom = float(sq.sum())
    if denom == 0.0:
        return float("nan")
    num = float((4.0 * s_count * minibatch_lip**2 * sq).sum())
    return num / denom


def ctus_prune_check(
    sum_delta_sq: np.ndarray,
    sum_thr_sq: np.ndarray,
    trigger_counts: np.ndarray,
    total_users: int,
    n_servers: int,
    l_bar: float | None = None,
) -> PruneReport:
    """Upload-pruning diagnostic over a near-convergence trace window.

    Inputs are per-round totals: ``sum_delta_sq[k]`` of ``||Delta||^2``
    over all users, ``sum_thr_sq[k]`` of the squared trigger thresholds
    over servers, and ``trigger_counts[k]`` of uploads.  The realized
    ratio ``r_k`` compares the average user's innovation energy to the
    average server threshold; its window mean says how large a trigger
    parameter must be before the mean innovation falls below the
    trigger bar, and the Markov bound turns that mean into a pruning
    guarantee.  This is a report, not an assertion — the proportionality
    constants of the underlying near-convergence argument are not
    constructive.
    """
    sum_delta_sq = np.asarray(sum_delta_sq, dtype=float)
    sum_thr_sq = np.asarray(sum_thr_sq, dtype=float)
    trigger_counts = np.asarray(trigger_counts, dtype=float)
    k = sum_delta_sq.size
    if k == 0:
        raise TheoryError(
            "empty window: run has not reached the near-convergence regime"
        )
    if sum_thr_sq.size != k or trigger_counts.size != k:
        raise TheoryError("window arrays must have equal length")
    if total_users < 1 or n_servers < 1:
        raise TheoryError("counts must be positive")

    live = sum_thr_sq > 0.0
    degenerate = int(k - live.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = (sum_delta_sq / total_users) / (sum_thr_sq / n_servers)
    avg_ratio = float(ratios[live].mean()) if live.any() else float("nan")

    non_trigger = 1.0 - float(trigger_counts.sum()) / (k * total_users)
    if math.isfinite(avg_ratio) and non_trigger < 1.0:
        rho_markov = avg_ratio / (1.0 - non_trigger)
    elif math.isfinite(avg_ratio):
        rho_markov = avg_ratio  # nothing triggered; any larger rho also prunes all
    else:
        rho_markov = float("nan")

    return PruneReport(
        n_rounds=int(k),
        avg_ratio=avg_ratio,
        ratio_finite=bool(math.isfinite(avg_ratio)),
        non_trigger_fraction=non_trigger,
        degenerate_rounds=degenerate,
        rho_markov=rho_markov,
        l_bar=l_bar,
    )
