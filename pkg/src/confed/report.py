"""Post-run analysis: fits, accuracy tables, theory block, figures.

``report`` consumes one or more trace CSVs (as written by the run
harness) and emits a deterministic text + JSON summary — per-trace
log-linear rate fits, an uploads-to-accuracy table, the contraction
constants and certified stepsize recomputed from each trace's sibling
resolved config, and the trigger-pruning ratios from the companion
triggers file when one exists.  Alongside the delimited output it
renders two figures: optimality gap against rounds and against
cumulative user uploads.

Reports are content-addressed: nothing derived from file paths or
clock time goes into the text/JSON, so traces from identical
(config, seed) runs produce byte-identical reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .harness import (
    ExperimentConfig,
    MetricsTrace,
    TraceFormatError,
    build_config,
    parse_config_text,
)
from .problem import curvature, synthesize_dataset
from .theory import (
    TheoryError,
    compute_constants,
    ctus_prune_check,
    find_alpha_threshold,
    linear_rate_fit,
    spectral_radius,
    transition_matrix,
)
from .topology import build_graph, mixing_matrix

__all__ = ["ReportBundle", "report", "theory_report", "render_figures"]

#: Accuracy levels of the uploads-to-accuracy table.
ACCURACY_LEVELS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)

#: Fits skip this many initial rounds (transient before log-linear decay).
FIT_SKIP_ROUNDS = 100

#: Near-convergence window for prune ratios: opg below this fraction of
#: the initial gap.
PRUNE_WINDOW_FRACTION = 1e-3


@dataclass
class ReportBundle:
    """Everything ``report`` produced, plus where it was written."""

    data: dict
    text: str
    json_path: Path | None = None
    text_path: Path | None = None
    figure_paths: list[Path] | None = None


def _fit_block(trace: MetricsTrace) -> dict | None:
    hi = int(trace.rounds[-1])
    positive = trace.opg > 0
    try:
        fit = linear_rate_fit(
            trace.rounds[positive], trace.opg[positive], window=(FIT_SKIP_ROUNDS, hi)
        )
    except TheoryError:
        return None
    return {
        "slope": fit.slope,
        "r_squared": fit.r_squared,
        "contraction": fit.contraction,
        "n_points": fit.n_points,
        "window": [FIT_SKIP_ROUNDS, hi],
    }


def _accuracy_block(trace: MetricsTrace) -> list[dict]:
    rows = []
    for level in ACCURACY_LEVELS:
        hits = np.nonzero(trace.opg <= level)[0]
        if hits.size:
            i = int(hits[0])
            rows.append(
                {
                    "opg": level,
                    "round": int(trace.rounds[i]),
                    "vrsg_uploads": int(trace.vrsg_uploads[i]),
                }
            )
        else:
            rows.append({"opg": level, "round": None, "vrsg_uploads": None})
    return rows


def theory_report(cfg: ExperimentConfig) -> dict:
    """Contraction constants, rho(T), and certified stepsize for a config.

    Rebuilds the graph and dataset the config describes (both are pure
    functions of it), measures curvature, and evaluates the theory at
    the config's stepsize — or at the certified one when the config
    says ``auto``.
    """
    graph = build_graph(
        cfg.topology, cfg.n_servers, edge_prob=cfg.edge_prob, seed=cfg.seed
    )
    mix = mixing_matrix(graph, tau=cfg.tau)
    ds = synthesize_dataset(cfg.dataset_config(), seed=cfg.seed)
    curv = curvature(ds)
    rho_trigger = cfg.rho if cfg.algorithm == "cfl-saga" else 0.0
    alpha_cert = find_alpha_threshold(
        curv.mu,
        curv.lip,
        mix.sigma,
        rho_trigger,
        cfg.n_servers,
        cfg.users_per_server,
        cfg.minibatches_per_user,
    )
    alpha = cfg.alpha if cfg.alpha is not None else alpha_cert
    tc = compute_constants(
        curv.mu,
        curv.lip,
        mix.sigma,
        alpha,
        rho_trigger,
        cfg.n_servers,
        cfg.users_per_server,
        cfg.minibatches_per_user,
    )
    radius = spectral_radius(transition_matrix(tc))
    return {
        "mu": curv.mu,
        "lip": curv.lip,
        "sigma": mix.sigma,
        "alpha": alpha,
        "alpha_certified": alpha_cert,
        "rho_trigger": rho_trigger,
        "constants": {
            "c1": tc.c1,
            "c2": tc.c2,
            "c3": tc.c3,
            "b1": tc.b1,
            "b2": tc.b2,
            "b3": tc.b3,
            "b_bar": tc.b_bar,
            "a1": tc.a1,
            "a2": tc.a2,
            "a3": tc.a3,
            "a4": tc.a4,
        },
        "gamma": tc.gamma,
        "spectral_radius": radius,
        "contracts": bool(radius < 1.0),
    }


def _prune_block(
    triggers_path: Path, trace: MetricsTrace, cfg: ExperimentConfig | None
) -> dict | None:
    try:
        lines = triggers_path.read_text().splitlines()
    except OSError:
        return None
    if not lines or lines[0].strip() != "# confed-triggers v1":
        raise TraceFormatError(f"{triggers_path}: bad triggers header")
    data = [line.split(",") for line in lines[2:] if line.strip()]
    if not data:
        return None
    rounds = np.array([int(row[0]) for row in data])
    delta = np.array([float(row[1]) for row in data])
    thr = np.array([float(row[2]) for row in data])
    trig = np.array([int(row[3]) for row in data])

    # Align with the trace's opg to select the near-convergence window.
    opg_by_round = dict(zip(trace.rounds.astype(int).tolist(), trace.opg.tolist()))
    opg0 = float(trace.opg[0])
    late = np.array(
        [opg_by_round.get(int(r), math.inf) <= PRUNE_WINDOW_FRACTION * opg0 for r in rounds]
    )
    if not late.any():
        return {"applicable": False, "reason": "window precedes near-convergence"}
    if cfg is not None:
        total_users = cfg.n_servers * cfg.users_per_server
        n_servers = cfg.n_servers
    else:
        # Without a config the user count is unknown; fall back to the
        # largest per-round trigger count observed in the full-upload
        # sense (an underestimate only if no round uploaded everything).
        total_users = int(trig.max()) if trig.max() > 0 else 1
        n_servers = 1
    pr = ctus_prune_check(
        delta[late], thr[late], trig[late], total_users=total_users, n_servers=n_servers
    )
    return {
        "applicable": True,
        "n_rounds": pr.n_rounds,
        "avg_ratio": None if math.isnan(pr.avg_ratio) else pr.avg_ratio,
        "ratio_finite": pr.ratio_finite,
        "non_trigger_fraction": pr.non_trigger_fraction,
        "degenerate_rounds": pr.degenerate_rounds,
        "rho_markov": None if math.isnan(pr.rho_markov) else pr.rho_markov,
    }


def _format_text(data: dict) -> str:
    lines = ["confed report", "============="]
    for i, block in enumerate(data["traces"], start=1):
        lines.append(f"\ntrace {i}")
        lines.append(f"  rounds: {block['rounds']}   final opg: {block['final_opg']:.6e}")
        lines.append(
            f"  uploads: {block['vrsg_uploads_total']}   "
            f"broadcasts: {block['server_broadcasts_total']}"
        )
        fit = block.get("rate_fit")
        if fit:
            lines.append(
                f"  rate fit: slope {fit['slope']:.6e}  contraction "
                f"{fit['contraction']:.9f}  R^2 {fit['r_squared']:.6f}"
            )
        else:
            lines.append("  rate fit: unavailable")
        lines.append("  uploads to accuracy:")
        for row in block["uploads_to_accuracy"]:
            if row["round"] is None:
                lines.append(f"    opg <= {row['opg']:.0e}: not reached")
            else:
                lines.append(
                    f"    opg <= {row['opg']:.0e}: round {row['round']}, "
                    f"{row['vrsg_uploads']} uploads"
                )
        theory = block.get("theory")
        if theory:
            lines.append(
                f"  theory: mu {theory['mu']:.6g}  L {theory['lip']:.6g}  "
                f"sigma {theory['sigma']:.6g}"
            )
            lines.append(
                f"          rho(T) {theory['spectral_radius']:.12g} at alpha "
                f"{theory['alpha']:.6g} (certified alpha {theory['alpha_certified']:.6g})"
            )
            lines.append(f"          gamma {theory['gamma']:.12g}")
        prune = block.get("prune_check")
        if prune:
            if prune.get("applicable"):
                ratio = prune["avg_ratio"]
                ratio_s = "degenerate" if ratio is None else f"{ratio:.6g}"
                lines.append(
                    f"  prune check: avg ratio {ratio_s}  non-trigger fraction "
                    f"{prune['non_trigger_fraction']:.4f} over {prune['n_rounds']} rounds"
                )
            else:
                lines.append(f"  prune check: {prune['reason']}")
    return "\n".join(lines) + "\n"


def render_figures(traces: list[MetricsTrace], out_dir: Path) -> list[Path]:
    """Render gap-vs-round and gap-vs-uploads figures as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    specs = [
        ("report-opg-vs-round.png", "round", lambda t: t.rounds, "optimality gap vs. rounds"),
        (
            "report-opg-vs-uploads.png",
            "cumulative user uploads",
            lambda t: t.vrsg_uploads,
            "optimality gap vs. user uploads",
        ),
    ]
    paths = []
    for fname, xlabel, xsel, title in specs:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for i, trace in enumerate(traces, start=1):
            mask = trace.opg > 0
            ax.semilogy(xsel(trace)[mask], trace.opg[mask], label=f"trace {i}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("optimality gap")
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def report(
    trace_paths: list[str | Path],
    out_dir: str | Path | None = None,
    figures: bool = True,
) -> ReportBundle:
    """Analyze trace CSVs into a deterministic text/JSON report.

    For each trace, sibling files discovered by replacing the ``.csv``
    suffix — ``<stem>.config`` (resolved config) and
    ``<stem>.triggers.csv`` — enrich the report with the theory block
    and the pruning diagnostic.  With ``out_dir`` set, writes
    ``report.json``, ``report.txt`` and the two figures there.
    """
    if not trace_paths:
        raise TraceFormatError("report needs at least one trace file")
    blocks = []
    traces = []
    for path in trace_paths:
        path = Path(path)
        trace = MetricsTrace.from_csv(path)
        traces.append(trace)
        block: dict[str, object] = {
            "rounds": int(trace.rounds[-1]),
            "final_opg": float(trace.opg[-1]),
            "initial_opg": float(trace.opg[0]),
            "vrsg_uploads_total": int(trace.vrsg_uploads[-1]),
            "server_broadcasts_total": int(trace.server_broadcasts[-1]),
            "rate_fit": _fit_block(trace),
            "uploads_to_accuracy": _accuracy_block(trace),
        }
        cfg = None
        base = path.name[: -len(".csv")] if path.name.endswith(".csv") else path.name
        config_path = path.parent / (base + ".config")
        if config_path.exists():
            cfg = build_config(parse_config_text(config_path.read_text()))
            block["config"] = {
                "algorithm": cfg.algorithm,
                "topology": cfg.topology,
                "n_servers": cfg.n_servers,
                "seed": cfg.seed,
                "alpha": cfg.alpha,
                "rho": cfg.rho,
                "sample_count": cfg.sample_count,
            }
            block["theory"] = theory_report(cfg)
        triggers_path = path.parent / (base + ".triggers.csv")
        if triggers_path.exists():
            block["prune_check"] = _prune_block(triggers_path, trace, cfg)
        blocks.append(block)

    data = {"schema": "confed-report v1", "traces": blocks}
    text = _format_text(data)
    bundle = ReportBundle(data=data, text=text)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        bundle.json_path = out / "report.json"
        bundle.json_path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        bundle.text_path = out / "report.txt"
        bundle.text_path.write_text(text)
        if figures:
            bundle.figure_paths = render_figures(traces, out)
    return bundle
