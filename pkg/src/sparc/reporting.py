"""Run artifacts and report rendering.

Every run writes a self-contained output directory: a config echo that
reproduces the run, both accuracy matrices as CSV, a flat key-value
metrics summary, the parameter census, per-task loss traces, a run log
(including the stem/skip accounting assumptions), and a checkpoint for
continual runs. ``render_report`` reads such a directory back, prints
the headline metrics, and emits plot-data CSVs next to rendered PNG
figures.
"""

from __future__ import annotations

import os
import time
from typing import Dict, List, Optional

import numpy as np

from . import metrics as M
from .checkpoint import save_model
from .config import ExperimentConfig
from .engine import RunResult, architecture_for, resolve_dataset, run_continual, run_baseline
from .data import TaskStream, split_dataset, write_dataset_dir
from .errors import FormatError, ValidationError
from .model import analytic_census

CONFIG_FILE = "config.txt"
CLASS_MATRIX_FILE = "accuracy_class_il.csv"
TASK_MATRIX_FILE = "accuracy_task_il.csv"
METRICS_FILE = "metrics.csv"
CENSUS_FILE = "census.csv"
RUN_LOG_FILE = "run.log"
CHECKPOINT_FILE = "checkpoint.sprc"


def _fmt(value: float) -> str:
    return repr(float(value))


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _matrix_metrics(prefix: str, matrix: M.AccuracyMatrix) -> Dict[str, float]:
    out = {
        f"{prefix}_A_T": M.final_accuracy(matrix),
        f"{prefix}_avg_incremental": M.average_incremental_accuracy(matrix),
    }
    if matrix.num_stages >= 2:
        s = M.stability(matrix)
        p = M.plasticity(matrix)
        out[f"{prefix}_forgetting"] = M.forgetting(matrix)
        out[f"{prefix}_stability"] = s
        out[f"{prefix}_plasticity"] = p
        out[f"{prefix}_tradeoff"] = M.tradeoff(s, p)
    return out


def _metrics_csv(entries: Dict[str, float]) -> str:
    lines = ["key,value"]
    lines += [f"{key},{_fmt(value)}" for key, value in entries.items()]
    return "\n".join(lines) + "\n"


def read_metrics_csv(path: str) -> Dict[str, float]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0] != "key,value":
        raise FormatError(f"{path}: expected a key,value header", offset=0)
    out = {}
    for lineno, line in enumerate(lines[1:], 2):
        key, _, raw = line.partition(",")
        if not raw:
            raise FormatError(f"{path}: malformed metrics line {line!r}", offset=lineno)
        out[key] = float(raw)
    return out


def prepare_stream(config: ExperimentConfig, out_dir: Optional[str] = None) -> TaskStream:
    """Load (or generate) the dataset and split it into tasks.

    Synthetic datasets are also materialized into ``out_dir/dataset`` so
    a run directory stands alone.
    """
    train, test = resolve_dataset(config)
    if config.synthetic is not None and out_dir is not None:
        write_dataset_dir(os.path.join(out_dir, "dataset"), train, test)
    return split_dataset(train, test, config.num_tasks, config.seed)


def _assumption_lines(config: ExperimentConfig) -> List[str]:
    skip = (
        "task-specific pointwise projection (stride-matched)"
        if config.projection_skips
        else "parameter-free (stride-2 subsample + zero channel padding)"
    )
    return [
        "parameter accounting assumptions:",
        "  stem: one split depthwise-separable unit (3x3), input channels -> first layer width",
        f"  skip paths on shape change: {skip}",
        "  batch-norm running moments excluded from all counts",
    ]


def write_run_artifacts(
    out_dir: str,
    config: ExperimentConfig,
    result: RunResult,
    kind: str = "train",
    wallclock: float = 0.0,
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, CONFIG_FILE), config.echo())
    _write(os.path.join(out_dir, CLASS_MATRIX_FILE), result.class_il.to_csv())
    _write(os.path.join(out_dir, TASK_MATRIX_FILE), result.task_il.to_csv())

    entries: Dict[str, float] = {}
    entries.update(_matrix_metrics("class_il", result.class_il))
    entries.update(_matrix_metrics("task_il", result.task_il))

    census = result.model.count_parameters()
    log_lines = [f"kind = {kind}", "", config.echo().rstrip(), ""]
    log_lines += _assumption_lines(config)

    if kind == "train":
        for t, norm in enumerate(M.head_l2_norms(result.model), 1):
            entries[f"head_norm_{t}"] = norm
    entries["params_total"] = census.total
    entries["params_shared"] = census.shared
    for t, count in enumerate(census.per_task, 1):
        entries[f"params_task_{t}"] = count

    census_lines = ["component,count"]
    census_lines += [f"{name},{count}" for name, count in census.breakdown.items()]
    census_lines.append(f"total,{census.total}")
    _write(os.path.join(out_dir, CENSUS_FILE), "\n".join(census_lines) + "\n")

    for t, report in enumerate(result.reports, 1):
        trace = ["epoch,loss"]
        trace += [f"{e},{_fmt(loss)}" for e, loss in enumerate(report.losses, 1)]
        _write(os.path.join(out_dir, f"loss_task_{t}.csv"), "\n".join(trace) + "\n")
        log_lines.append(
            f"task {t}: {len(report.losses)} epochs, final loss "
            f"{report.losses[-1]:.6f}, {report.duration:.2f}s"
            + (
                f", head rescaled by {report.renorm_factor:.6f}"
                if report.renorm_factor is not None
                else ""
            )
        )

    _write(os.path.join(out_dir, METRICS_FILE), _metrics_csv(entries))
    log_lines.append(f"total wallclock: {wallclock:.2f}s")
    _write(os.path.join(out_dir, RUN_LOG_FILE), "\n".join(log_lines) + "\n")

    if kind == "train":
        save_model(result.model, os.path.join(out_dir, CHECKPOINT_FILE))


def run_train_command(config: ExperimentConfig, out_dir: str) -> RunResult:
    started = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    stream = prepare_stream(config, out_dir)
    result = run_continual(stream, config)
    # bias diagnostics need the task stream, so compute them here and
    # merge into the metrics file afterwards
    write_run_artifacts(out_dir, config, result, "train", time.perf_counter() - started)
    try:
        probabilities = M.task_probabilities(result.model, stream)
    except ValidationError:
        probabilities = None  # unbalanced test set: profile undefined
    if probabilities is not None:
        entries = read_metrics_csv(os.path.join(out_dir, METRICS_FILE))
        for t, prob in enumerate(probabilities, 1):
            entries[f"prob_task_{t}"] = prob
        _write(os.path.join(out_dir, METRICS_FILE), _metrics_csv(entries))
    return result


def run_baseline_command(kind: str, config: ExperimentConfig, out_dir: str) -> RunResult:
    started = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    stream = prepare_stream(config, out_dir)
    result = run_baseline(kind, stream, config)
    write_run_artifacts(out_dir, config, result, f"baseline-{kind}", time.perf_counter() - started)
    return result


# ---------------------------------------------------------------------------
# ablation grids
# ---------------------------------------------------------------------------


def _ablate_point(args):
    config_values, stream = args
    config = ExperimentConfig(**config_values)
    result = run_continual(stream, config)
    arch = architecture_for(config, stream)
    census = analytic_census(arch, [t.num_classes for t in stream.tasks])
    row = {
        "width_factor": config.width_factor,
        "depth": config.depth,
        "alpha": config.alpha,
        "params_total": census.total,
        "class_il_A_T": M.final_accuracy(result.class_il),
        "task_il_A_T": M.final_accuracy(result.task_il),
    }
    for stage in range(2, result.class_il.num_stages + 1):
        row[f"stability_after_task_{stage}"] = M.stability(result.class_il, stage)
    return row


def run_ablate_command(
    config: ExperimentConfig,
    out_dir: str,
    widths: Optional[List[float]] = None,
    depths: Optional[List[int]] = None,
    alphas: Optional[List[float]] = None,
    max_workers: int = 1,
) -> List[dict]:
    """One run per grid point; a width*depth grid or an alpha sweep."""
    if alphas and (widths or depths):
        raise ValidationError("ablate takes either --alphas or --widths/--depths, not both")
    if not alphas and not (widths and depths):
        raise ValidationError("ablate needs --alphas, or both --widths and --depths")

    from dataclasses import asdict

    points = []
    if alphas:
        for alpha in alphas:
            values = asdict(ExperimentConfig(**{**asdict(config), "alpha": alpha}))
            points.append(values)
    else:
        for width in widths:
            for depth in depths:
                values = asdict(config)
                values.update({"width_factor": width, "depth": depth, "filters_per_task": None})
                points.append(values)

    os.makedirs(out_dir, exist_ok=True)
    base_stream_config = ExperimentConfig(**points[0])
    stream = prepare_stream(base_stream_config, out_dir)

    jobs = [(values, stream) for values in points]
    if max_workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(_ablate_point, jobs))
    else:
        rows = [_ablate_point(job) for job in jobs]

    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)

    def cell(value) -> str:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return str(value)
        return str(value) if isinstance(value, int) else repr(value)

    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(cell(row[c]) if c in row else "" for c in columns))
    _write(os.path.join(out_dir, "ablation.csv"), "\n".join(lines) + "\n")
    _write(os.path.join(out_dir, CONFIG_FILE), config.echo())

    if alphas:
        _plot_alpha_stability(rows, os.path.join(out_dir, "stability_vs_alpha.png"))
    else:
        _plot_grid(rows, os.path.join(out_dir, "accuracy_vs_params.png"))
    return rows


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------


def _load_matrix(path: str) -> M.AccuracyMatrix:
    if not os.path.exists(path):
        raise FormatError(f"missing artifact {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return M.AccuracyMatrix.from_csv(fh.read())


def render_report(run_dir: str, out_dir: Optional[str] = None) -> str:
    """Summarize a run directory; writes plot CSVs and figures to out_dir."""
    out_dir = out_dir or run_dir.rstrip("/\\") + "-report"
    class_matrix = _load_matrix(os.path.join(run_dir, CLASS_MATRIX_FILE))
    task_matrix = _load_matrix(os.path.join(run_dir, TASK_MATRIX_FILE))
    metrics_path = os.path.join(run_dir, METRICS_FILE)
    if not os.path.exists(metrics_path):
        raise FormatError(f"missing artifact {metrics_path}")
    entries = read_metrics_csv(metrics_path)

    lines = [f"run report: {run_dir}", ""]
    lines.append(f"{'metric':<28}{'Class-IL':>14}{'Task-IL':>14}")
    for label, key in (
        ("final accuracy (A_T)", "A_T"),
        ("avg incremental accuracy", "avg_incremental"),
        ("forgetting", "forgetting"),
        ("stability", "stability"),
        ("plasticity", "plasticity"),
        ("stability/plasticity tradeoff", "tradeoff"),
    ):
        cells = []
        for prefix in ("class_il", "task_il"):
            value = entries.get(f"{prefix}_{key}")
            cells.append("-" if value is None else f"{value:.2f}")
        lines.append(f"{label:<28}{cells[0]:>14}{cells[1]:>14}")

    probs = _indexed(entries, "prob_task_")
    norms = _indexed(entries, "head_norm_")
    if probs:
        lines.append("")
        lines.append("task prediction probabilities: " + ", ".join(f"{p:.3f}" for p in probs))
    if norms:
        lines.append("head weight L2 norms: " + ", ".join(f"{v:.3f}" for v in norms))
    if "params_total" in entries:
        lines.append(f"parameters: total {int(entries['params_total'])}, "
                     f"shared {int(entries.get('params_shared', 0))}")
    text = "\n".join(lines) + "\n"

    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "report.txt"), text)
    for name, matrix in (("class_il", class_matrix), ("task_il", task_matrix)):
        _write(
            os.path.join(out_dir, f"accuracy_over_time_{name}.csv"),
            _accuracy_over_time_csv(matrix),
        )
        _plot_accuracy_over_time(
            matrix, name, os.path.join(out_dir, f"accuracy_over_time_{name}.png")
        )
    if probs:
        _write(
            os.path.join(out_dir, "task_probabilities.csv"),
            "task,probability\n"
            + "\n".join(f"{t},{_fmt(p)}" for t, p in enumerate(probs, 1))
            + "\n",
        )
        _plot_bars(
            probs,
            "task",
            "prediction probability",
            os.path.join(out_dir, "task_probabilities.png"),
        )
    if norms:
        _write(
            os.path.join(out_dir, "head_norms.csv"),
            "task,l2_norm\n"
            + "\n".join(f"{t},{_fmt(v)}" for t, v in enumerate(norms, 1))
            + "\n",
        )
        _plot_bars(norms, "task", "head weight L2 norm", os.path.join(out_dir, "head_norms.png"))
    return text


def _indexed(entries: Dict[str, float], prefix: str) -> List[float]:
    out = []
    t = 1
    while f"{prefix}{t}" in entries:
        out.append(entries[f"{prefix}{t}"])
        t += 1
    return out


def _accuracy_over_time_csv(matrix: M.AccuracyMatrix) -> str:
    width = len(matrix.rows[-1]) if matrix.rows else 0
    lines = ["stage," + ",".join(f"on_task_{j + 1}" for j in range(width))]
    for i, row in enumerate(matrix.rows, 1):
        cells = [_fmt(v) for v in row] + [""] * (width - len(row))
        lines.append(f"{i}," + ",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _plot_accuracy_over_time(matrix: M.AccuracyMatrix, label: str, path: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    width = len(matrix.rows[-1]) if matrix.rows else 0
    for j in range(width):
        stages = [i + 1 for i, row in enumerate(matrix.rows) if j < len(row)]
        values = [row[j] for row in matrix.rows if j < len(row)]
        ax.plot(stages, values, marker="o", label=f"task {j + 1}")
    ax.set_xlabel("tasks trained")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(f"per-task accuracy over time ({label})")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_bars(values: List[float], xlabel: str, ylabel: str, path: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([str(i) for i in range(1, len(values) + 1)], values)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_alpha_stability(rows: List[dict], path: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for row in rows:
        stages = []
        values = []
        stage = 2
        while f"stability_after_task_{stage}" in row:
            stages.append(stage)
            values.append(row[f"stability_after_task_{stage}"])
            stage += 1
        ax.plot(stages, values, marker="o", label=f"alpha={row['alpha']}")
    ax.set_xlabel("tasks trained")
    ax.set_ylabel("stability (%)")
    ax.set_title("stability vs consolidation rate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_grid(rows: List[dict], path: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row["params_total"] for row in rows]
    ys = [row["class_il_A_T"] for row in rows]
    ax.scatter(xs, ys)
    for row, x, y in zip(rows, xs, ys):
        ax.annotate(f"w={row['width_factor']},d={row['depth']}", (x, y), fontsize=7)
    ax.set_xlabel("parameters")
    ax.set_ylabel("Class-IL A_T (%)")
    ax.set_xscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
