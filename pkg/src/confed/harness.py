"""Experiment orchestration: configs, runs, sweeps, and trace files.

A run is fully described by a flat key=value config (file plus
``--set`` overrides).  ``run`` builds the graph and dataset, solves the
centralized reference problem, executes the selected algorithm until
the target optimality gap or the round cap, and emits a versioned CSV
trace; every output is a pure function of (config, seed), so repeated
runs are byte-identical.  ``sweep`` maps a config over one axis
(trigger parameter, sampling rate, or topology) and a seed list, and
aggregates per-cell summaries.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import (
    ClusterState,
    RoundInfo,
    TriggerPolicy,
    cfl_saga_round,
    consensus_gap_sq,
    gt_round,
    gt_saga_round,
    init_state,
)
from .problem import Curvature, Dataset, DatasetConfig, curvature, solve_centralized, synthesize_dataset
from .theory import (
    PruneReport,
    RateFit,
    TheoryError,
    ctus_prune_check,
    find_alpha_threshold,
    linear_rate_fit,
    table_lipschitz_ratio,
)
from .topology import GRAPH_KINDS, MixingMatrix, ServerGraph, build_graph, mixing_matrix

__all__ = [
    "ALGORITHMS",
    "TRACE_HEADER",
    "TRACE_COLUMNS",
    "ConfigError",
    "TraceFormatError",
    "ExperimentConfig",
    "MetricsTrace",
    "Prepared",
    "RunResult",
    "SweepCell",
    "SweepSummary",
    "parse_config_text",
    "load_config",
    "apply_overrides",
    "build_config",
    "resolved_config_text",
    "prepare",
    "run",
    "sweep",
]

ALGORITHMS = ("gt", "gt-saga", "cfl-saga")

TRACE_HEADER = "# confed-trace v1"
TRACE_COLUMNS = (
    "round",
    "opg",
    "vrsg_uploads",
    "server_broadcasts",
    "triggers",
    "x_gap",
    "mean_gap",
    "table_gap",
    "y_gap",
    "consensus_margin",
)
TRIGGERS_HEADER = "# confed-triggers v1"
SWEEP_HEADER = "# confed-sweep v1"

#: Optimality-gap fraction that defines the near-convergence window of
#: the pruning diagnostic.
PRUNE_WINDOW_FRACTION = 1e-3

#: Tolerance used for the centralized reference solve.
SOLVE_TOL = 1e-10


class ConfigError(ValueError):
    """Invalid experiment configuration (file, override, or field value)."""


class TraceFormatError(ValueError):
    """A trace CSV does not match the expected schema/version."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully specified.

    ``alpha=None`` means "use the certified stepsize" from the theory
    module.  ``rho`` must be present exactly when the algorithm is
    ``cfl-saga`` and ``sample_count`` exactly when it is ``gt-saga``.
    ``psi_stride`` is the round stride at which the four error-vector
    columns are logged (requires ``d_metric``; 0 disables).
    """

    topology: str = "random"
    n_servers: int = 20
    edge_prob: float = 0.3
    tau: float | str = "auto"
    users_per_server: int = 20
    minibatches_per_user: int = 10
    batch_size: int = 5
    dim: int = 200
    kappa: float = 0.05
    algorithm: str = "cfl-saga"
    alpha: float | None = None
    rho: float | None = None
    sample_count: int | None = None
    max_rounds: int = 200_000
    stop_gap: float = 1e-8
    seed: int = 0
    d_metric: bool = False
    monitor: bool = True
    psi_stride: int = 10

    def validate(self) -> None:
        if self.topology not in GRAPH_KINDS:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not 0 < self.edge_prob <= 1:
            raise ConfigError(f"edge_prob must be in (0, 1], got {self.edge_prob}")
        if self.tau != "auto" and (
            not isinstance(self.tau, (int, float)) or not self.tau > 0
        ):
            raise ConfigError(f"tau must be 'auto' or > 0, got {self.tau!r}")
        for key in (
            "n_servers",
            "users_per_server",
            "minibatches_per_user",
            "batch_size",
            "dim",
            "max_rounds",
        ):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.kappa <= 0:
            raise ConfigError(f"kappa must be > 0, got {self.kappa}")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError(f"alpha must be 'auto' or > 0, got {self.alpha}")
        if self.stop_gap <= 0:
            raise ConfigError(f"stop_gap must be > 0, got {self.stop_gap}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be in [0, 2^64), got {self.seed}")
        if self.psi_stride < 0:
            raise ConfigError(f"psi_stride must be >= 0, got {self.psi_stride}")
        # Exactly the algorithm's own parameter block may be present.
        if self.algorithm == "cfl-saga":
            if self.rho is None:
                raise ConfigError("cfl-saga requires rho")
            if self.rho < 0:
                raise ConfigError(f"rho must be >= 0, got {self.rho}")
            if self.sample_count is not None:
                raise ConfigError("sample_count is a gt-saga parameter")
        elif self.algorithm == "gt-saga":
            if self.sample_count is None:
                raise ConfigError("gt-saga requires sample_count")
            if not 1 <= self.sample_count <= self.users_per_server:
                raise ConfigError(
                    f"sample_count must be in [1, {self.users_per_server}], "
                    f"got {self.sample_count}"
                )
            if self.rho is not None:
                raise ConfigError("rho is a cfl-saga parameter")
        else:
            if self.rho is not None or self.sample_count is not None:
                raise ConfigError("gt takes neither rho nor sample_count")

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(
            n_servers=self.n_servers,
            users_per_server=self.users_per_server,
            minibatches_per_user=self.minibatches_per_user,
            batch_size=self.batch_size,
            dim=self.dim,
            kappa=self.kappa,
        )


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_tau(s: str) -> float | str:
    return "auto" if s.lower() == "auto" else float(s)


def _parse_alpha(s: str) -> float | None:
    return None if s.lower() == "auto" else float(s)


def _parse_opt_float(s: str) -> float | None:
    return None if s.lower() == "none" else float(s)


def _parse_opt_int(s: str) -> int | None:
    return None if s.lower() == "none" else int(s)


_FIELD_PARSERS = {
    "topology": str,
    "n_servers": int,
    "edge_prob": float,
    "tau": _parse_tau,
    "users_per_server": int,
    "minibatches_per_user": int,
    "batch_size": int,
    "dim": int,
    "kappa": float,
    "algorithm": str,
    "alpha": _parse_alpha,
    "rho": _parse_opt_float,
    "sample_count": _parse_opt_int,
    "max_rounds": int,
    "stop_gap": float,
    "seed": int,
    "d_metric": _parse_bool,
    "monitor": _parse_bool,
    "psi_stride": int,
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key=value`` lines into a raw string mapping.

    Blank lines and ``#`` comments are ignored; later assignments win.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def apply_overrides(raw: dict[str, str], overrides: list[str]) -> dict[str, str]:
    """Apply ``--set key=value`` strings on top of a raw mapping."""
    out = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def build_config(raw: dict[str, str]) -> ExperimentConfig:
    """Coerce raw strings into a validated :class:`ExperimentConfig`."""
    fields: dict[str, object] = {}
    for key, value in raw.items():
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            fields[key] = parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
    cfg = ExperimentConfig(**fields)
    cfg.validate()
    return cfg


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a config file and apply CLI overrides."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw = parse_config_text(text)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return build_config(raw)


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def resolved_config_text(cfg: ExperimentConfig, alpha: float) -> str:
    """Canonical round-trippable text of a config with the stepsize resolved."""
    lines = ["# confed-config v1 (resolved)"]
    for field in dataclasses.fields(ExperimentConfig):
        key = field.name
        value: object = getattr(cfg, key)
        if key == "alpha":
            value = alpha
        if key == "edge_prob" and cfg.topology != "random":
            continue
        if value is None:
            continue
        lines.append(f"{key}={_fmt(value)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class MetricsTrace:
    """Per-round metrics of one run (psi columns NaN where not logged)."""

    rounds: np.ndarray
    opg: np.ndarray
    vrsg_uploads: np.ndarray
    server_broadcasts: np.ndarray
    triggers: np.ndarray
    x_gap: np.ndarray
    mean_gap: np.ndarray
    table_gap: np.ndarray
    y_gap: np.ndarray
    consensus_margin: np.ndarray

    def __len__(self) -> int:
        return int(self.rounds.size)

    def validate(self) -> None:
        if np.any(np.diff(self.rounds) <= 0):
            raise TraceFormatError("round numbers must be strictly increasing")
        for name in ("vrsg_uploads", "server_broadcasts"):
            if np.any(np.diff(getattr(self, name)) < 0):
                raise TraceFormatError(f"{name} must be nondecreasing")

    def to_csv(self, path: str | Path) -> None:
        def cell(v: float) -> str:
            return "" if math.isnan(v) else f"{v:.17g}"

        lines = [TRACE_HEADER, ",".join(TRACE_COLUMNS)]
        for i in range(len(self)):
            lines.append(
                ",".join(
                    (
                        str(int(self.rounds[i])),
                        f"{self.opg[i]:.17g}",
                        str(int(self.vrsg_uploads[i])),
                        str(int(self.server_broadcasts[i])),
                        str(int(self.triggers[i])),
                        cell(self.x_gap[i]),
                        cell(self.mean_gap[i]),
                        cell(self.table_gap[i]),
                        cell(self.y_gap[i]),
                        f"{self.consensus_margin[i]:.17g}",
                    )
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "MetricsTrace":
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
        if not lines or lines[0].strip() != TRACE_HEADER:
            raise TraceFormatError(f"{path}: missing version header {TRACE_HEADER!r}")
        if len(lines) < 2 or tuple(lines[1].split(",")) != TRACE_COLUMNS:
            raise TraceFormatError(f"{path}: column set/order mismatch")
        cols: list[list[float]] = [[] for _ in TRACE_COLUMNS]
        for lineno, line in enumerate(lines[2:], start=3):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(TRACE_COLUMNS):
                raise TraceFormatError(f"{path}:{lineno}: wrong field count")
            for col, part in zip(cols, parts):
                col.append(float(part) if part != "" else float("nan"))
        arrays = [np.asarray(c, dtype=float) for c in cols]
        trace = cls(*arrays)
        trace.validate()
        return trace


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class Prepared:
    """Shared per-config artifacts: graph, data, curvature, optimum."""

    graph: ServerGraph
    mix: MixingMatrix
    ds: Dataset
    curv: Curvature
    alpha: float
    x_star: np.ndarray


@dataclass
class RunResult:
    config: ExperimentConfig
    alpha: float
    trace: MetricsTrace
    state: ClusterState
    x_star: np.ndarray
    reached: bool
    rate: RateFit | None
    prune: PruneReport | None
    trace_path: Path | None = None
    config_path: Path | None = None
    triggers_path: Path | None = None
    report_path: Path | None = None

    @property
    def rounds_run(self) -> int:
        return int(self.trace.rounds[-1])

    @property
    def final_opg(self) -> float:
        return float(self.trace.opg[-1])


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Build every run input that depends only on the config.

    Resolves ``alpha=None`` to the certified stepsize (trigger parameter
    0 for the algorithms without an event trigger).
    """
    cfg.validate()
    graph = build_graph(
        cfg.topology, cfg.n_servers, edge_prob=cfg.edge_prob, seed=cfg.seed
    )
    mix = mixing_matrix(graph, tau=cfg.tau)
    ds = synthesize_dataset(cfg.dataset_config(), seed=cfg.seed)
    curv = curvature(ds)
    if cfg.alpha is not None:
        alpha = cfg.alpha
    else:
        alpha = find_alpha_threshold(
            curv.mu,
            curv.lip,
            mix.sigma,
            cfg.rho if cfg.algorithm == "cfl-saga" else 0.0,
            cfg.n_servers,
            cfg.users_per_server,
            cfg.minibatches_per_user,
        )
    x_star = solve_centralized(ds, tol=SOLVE_TOL)
    return Prepared(graph=graph, mix=mix, ds=ds, curv=curv, alpha=alpha, x_star=x_star)


def _run_report_dict(result: RunResult) -> dict:
    report: dict[str, object] = {
        "schema": "confed-run-report v1",
        "algorithm": result.config.algorithm,
        "topology": result.config.topology,
        "seed": result.config.seed,
        "alpha": result.alpha,
        "reached": result.reached,
        "stop_gap": result.config.stop_gap,
        "rounds_run": result.rounds_run,
        "initial_opg": float(result.trace.opg[0]),
        "final_opg": result.final_opg,
        "vrsg_uploads_total": int(result.trace.vrsg_uploads[-1]),
        "server_broadcasts_total": int(result.trace.server_broadcasts[-1]),
    }
    if result.rate is not None:
        report["rate_fit"] = {
            "slope": result.rate.slope,
            "r_squared": result.rate.r_squared,
            "contraction": result.rate.contraction,
            "n_points": result.rate.n_points,
        }
    if result.prune is not None:
        p = result.prune
        report["prune_check"] = {
            "n_rounds": p.n_rounds,
            "avg_ratio": None if math.isnan(p.avg_ratio) else p.avg_ratio,
            "ratio_finite": p.ratio_finite,
            "non_trigger_fraction": p.non_trigger_fraction,
            "degenerate_rounds": p.degenerate_rounds,
            "rho_markov": None if math.isnan(p.rho_markov) else p.rho_markov,
            "l_bar": p.l_bar,
        }
    return report


def run(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    name: str | None = None,
    prebuilt: Prepared | None = None,
) -> RunResult:
    """Execute one experiment and (optionally) write its artifacts.

    With ``out_dir`` set, writes ``<name>.csv`` (the trace),
    ``<name>.config`` (the resolved config), ``<name>.report.json``,
    and — for the event-triggered algorithm — ``<name>.triggers.csv``
    with the per-round innovation/threshold totals.  ``prebuilt`` lets
    callers that share a config across runs skip the dataset synthesis
    and reference solve; it must have been built from an identical
    config (same seed included).
    """
    cfg.validate()
    pre = prebuilt if prebuilt is not None else prepare(cfg)
    ds, mix, alpha, x_star = pre.ds, pre.mix, pre.alpha, pre.x_star
    n, p = cfg.n_servers, cfg.users_per_server
    sqrt_n = math.sqrt(n)

    state = init_state(ds, mix, seed=cfg.seed, track_phi=cfg.d_metric)
    policy = TriggerPolicy(cfg.rho) if cfg.algorithm == "cfl-saga" else None

    log_psi = cfg.d_metric and cfg.psi_stride > 0
    nan = float("nan")

    rounds = [0]
    opg = [float(np.linalg.norm(state.x - x_star)) / sqrt_n]
    uploads = [0]
    broadcasts = [0]
    triggers = [0]
    margins = [0.0]
    x_gaps, mean_gaps, table_gaps, y_gaps = [nan], [nan], [nan], [nan]
    if log_psi:
        x_gaps[0], y_gaps[0] = 0.0, 0.0
        dev0 = state.x.mean(axis=0) - x_star
        mean_gaps[0] = float(dev0 @ dev0)
        table_gaps[0] = state.tables.table_gap(x_star)
    delta_win: list[float] = []
    thr_win: list[float] = []
    trig_win: list[int] = []

    reached = opg[0] <= cfg.stop_gap
    while not reached and state.round < cfg.max_rounds:
        rnd = state.round + 1
        want_psi = log_psi and rnd % cfg.psi_stride == 0
        pre_table_gap = state.tables.table_gap(x_star) if want_psi else nan

        if cfg.algorithm == "cfl-saga":
            info: RoundInfo = cfl_saga_round(
                state, ds, mix, alpha, policy, monitor=cfg.monitor
            )
        elif cfg.algorithm == "gt-saga":
            info = gt_saga_round(
                state, ds, mix, alpha, cfg.sample_count, monitor=cfg.monitor
            )
        else:
            info = gt_round(state, ds, mix, alpha, monitor=cfg.monitor)

        gap = float(np.linalg.norm(state.x - x_star)) / sqrt_n
        rounds.append(rnd)
        opg.append(gap)
        uploads.append(state.comm.vrsg_uploads)
        broadcasts.append(state.comm.server_broadcasts)
        triggers.append(int(info.triggers.sum()))
        margins.append(info.consensus_margin)
        if want_psi:
            dev = state.x.mean(axis=0) - x_star
            x_gaps.append(consensus_gap_sq(state.x))
            mean_gaps.append(float(dev @ dev))
            table_gaps.append(pre_table_gap)
            y_gaps.append(consensus_gap_sq(state.y))
        else:
            x_gaps.append(nan)
            mean_gaps.append(nan)
            table_gaps.append(nan)
            y_gaps.append(nan)
        if cfg.algorithm == "cfl-saga":
            delta_win.append(info.sum_delta_sq)
            thr_win.append(info.sum_thr_sq)
            trig_win.append(int(info.triggers.sum()))
        reached = gap <= cfg.stop_gap

    trace = MetricsTrace(
        rounds=np.asarray(rounds, dtype=float),
        opg=np.asarray(opg, dtype=float),
        vrsg_uploads=np.asarray(uploads, dtype=float),
        server_broadcasts=np.asarray(broadcasts, dtype=float),
        triggers=np.asarray(triggers, dtype=float),
        x_gap=np.asarray(x_gaps, dtype=float),
        mean_gap=np.asarray(mean_gaps, dtype=float),
        table_gap=np.asarray(table_gaps, dtype=float),
        y_gap=np.asarray(y_gaps, dtype=float),
        consensus_margin=np.asarray(margins, dtype=float),
    )

    rate: RateFit | None = None
    try:
        rate = linear_rate_fit(trace.rounds, trace.opg, window=(100, int(trace.rounds[-1])))
    except TheoryError:
        pass

    prune: PruneReport | None = None
    if cfg.algorithm == "cfl-saga" and delta_win:
        opg_arr = trace.opg[1:]  # aligned with the per-round windows
        late = opg_arr <= PRUNE_WINDOW_FRACTION * trace.opg[0]
        if late.any():
            l_bar = (
                table_lipschitz_ratio(state.tables, pre.curv.minibatch_lip, x_star)
                if state.tables.phi is not None
                else None
            )
            prune = ctus_prune_check(
                np.asarray(delta_win)[late],
                np.asarray(thr_win)[late],
                np.asarray(trig_win)[late],
                total_users=n * p,
                n_servers=n,
                l_bar=l_bar,
            )

    result = RunResult(
        config=cfg,
        alpha=alpha,
        trace=trace,
        state=state,
        x_star=x_star,
        reached=reached,
        rate=rate,
        prune=prune,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if name is None:
            tag = ""
            if cfg.algorithm == "cfl-saga":
                tag = f"-rho{cfg.rho:g}"
            elif cfg.algorithm == "gt-saga":
                tag = f"-m{cfg.sample_count}"
            name = f"{cfg.algorithm}{tag}-{cfg.topology}-seed{cfg.seed}"
        result.trace_path = out / f"{name}.csv"
        trace.to_csv(result.trace_path)
        result.config_path = out / f"{name}.config"
        result.config_path.write_text(resolved_config_text(cfg, alpha))
        if cfg.algorithm == "cfl-saga":
            lines = [TRIGGERS_HEADER, "round,sum_delta_sq,sum_thr_sq,triggers"]
            for i, (d, t, c) in enumerate(zip(delta_win, thr_win, trig_win), start=1):
                lines.append(f"{i},{d:.17g},{t:.17g},{c}")
            result.triggers_path = out / f"{name}.triggers.csv"
            result.triggers_path.write_text("\n".join(lines) + "\n")
        result.report_path = out / f"{name}.report.json"
        result.report_path.write_text(
            json.dumps(_run_report_dict(result), indent=2, sort_keys=True) + "\n"
        )

    return result


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("rho", "sr", "topology")


@dataclass
class SweepCell:
    """Aggregated outcome of one axis value over all seeds."""

    value: str
    n_seeds: int
    n_ok: int
    mean_rounds_to_target: float
    mean_uploads_to_target: float
    mean_trigger_fraction: float
    failed: bool


@dataclass
class SweepSummary:
    axis: str
    target_gap: float
    cells: list[SweepCell]

    def to_csv(self, path: str | Path) -> None:
        lines = [
            SWEEP_HEADER,
            "axis,value,n_seeds,n_ok,mean_rounds_to_target,"
            "mean_uploads_to_target,mean_trigger_fraction,failed",
        ]
        for c in self.cells:
            lines.append(
                f"{self.axis},{c.value},{c.n_seeds},{c.n_ok},"
                f"{c.mean_rounds_to_target:.17g},{c.mean_uploads_to_target:.17g},"
                f"{c.mean_trigger_fraction:.17g},{int(c.failed)}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def _cell_config(base: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    if axis == "rho":
        if base.algorithm != "cfl-saga":
            raise ConfigError("rho axis requires a cfl-saga base config")
        return dataclasses.replace(base, rho=float(value))
    if axis == "sr":
        if base.algorithm != "gt-saga":
            raise ConfigError("sr axis requires a gt-saga base config")
        count = max(1, round(float(value) * base.users_per_server))
        return dataclasses.replace(base, sample_count=count)
    if axis == "topology":
        if value not in GRAPH_KINDS:
            raise ConfigError(f"unknown topology {value!r}")
        return dataclasses.replace(base, topology=value)
    raise ConfigError(f"unknown sweep axis {axis!r} (expected one of {SWEEP_AXES})")


def sweep(
    base: ExperimentConfig,
    axis: str,
    values: list[str],
    seeds: list[int],
    out_dir: str | Path | None = None,
) -> SweepSummary:
    """Run the (axis value) x (seed) grid and aggregate per-value cells.

    A seed counts toward a cell's means only if its run converged to the
    base config's ``stop_gap``; any engine failure or unreached target
    marks the cell as failed but never aborts the sweep.  Per-run trace
    files are written only when ``out_dir`` is given (plus a
    ``sweep-<axis>.csv`` summary).
    """
    if not values:
        raise ConfigError("sweep needs a nonempty value list")
    if not seeds:
        raise ConfigError("sweep needs a nonempty seed list")
    base.validate()

    cells: list[SweepCell] = []
    for value in values:
        cfg_v = _cell_config(base, axis, str(value))
        rounds_ok: list[float] = []
        uploads_ok: list[float] = []
        fractions_ok: list[float] = []
        n_ok = 0
        for seed in seeds:
            cfg_s = dataclasses.replace(cfg_v, seed=int(seed))
            try:
                res = run(
                    cfg_s,
                    out_dir=out_dir,
                    name=f"sweep-{axis}-{value}-seed{seed}" if out_dir else None,
                )
            except Exception:
                continue
            if not res.reached:
                continue
            n_ok += 1
            hit = int(np.argmax(res.trace.opg <= cfg_s.stop_gap))
            rounds_ok.append(float(res.trace.rounds[hit]))
            uploads_ok.append(float(res.trace.vrsg_uploads[hit]))
            total_rounds = float(res.trace.rounds[-1])
            total_uploads = float(res.trace.vrsg_uploads[-1])
            fractions_ok.append(
                total_uploads
                / (total_rounds * cfg_s.n_servers * cfg_s.users_per_server)
                if total_rounds > 0
                else float("nan")
            )
        nan = float("nan")
        cells.append(
            SweepCell(
                value=str(value),
                n_seeds=len(seeds),
                n_ok=n_ok,
                mean_rounds_to_target=float(np.mean(rounds_ok)) if rounds_ok else nan,
                mean_uploads_to_target=float(np.mean(uploads_ok)) if uploads_ok else nan,
                mean_trigger_fraction=float(np.mean(fractions_ok)) if fractions_ok else nan,
                failed=n_ok < len(seeds),
            )
        )

    summary = SweepSummary(axis=axis, target_gap=base.stop_gap, cells=cells)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary.to_csv(out / f"sweep-{axis}.csv")
    return summary
