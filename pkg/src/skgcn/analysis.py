"""Post-training inspection tools.

Two questions after a run: what did the adjacency residuals learn, and
where do two models disagree? `residual_report` ranks each layer's residual
entries by absolute value and summarizes sign structure, asymmetry, and
self-loop usage. `misclassification_diff` counts, per class, the samples
one model gets right and another gets wrong. Both export to plain CSV (and
DOT for graph tooling) so plotting stays outside this package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .graph import top_k_edges
from .model import Checkpoint


def asymmetry_score(matrix: np.ndarray) -> float:
    """||R - R^T||_F / ||R||_F; 0 for the zero matrix.

    0 exactly when R is symmetric; the maximum, 2, is reached by
    antisymmetric matrices (R^T == -R).
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"expected a square matrix, got {matrix.shape}")
    norm = np.linalg.norm(matrix)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(matrix - matrix.T) / norm)


@dataclass
class LayerResidualReport:
    layer: str
    top_edges: list[tuple[int, int, float]]
    asymmetry: float
    negative_fraction: float  # among the top-k edges
    self_loop_count: int  # among the top-k edges


@dataclass
class ResidualReport:
    layers: list[LayerResidualReport]
    k: int


def _top_k_no_self_loops(residual: np.ndarray, k: int) -> list[tuple[int, int, float]]:
    cells = [
        (i, j)
        for i in range(residual.shape[0])
        for j in range(residual.shape[1])
        if i != j
    ]
    cells.sort(key=lambda ij: (-abs(residual[ij]), ij))
    return [(i, j, float(residual[i, j])) for i, j in cells[:k]]


def residual_report(
    ck: Checkpoint, k_per_layer: int | None = None, exclude_self_loops: bool = False
) -> ResidualReport:
    """Summarize each layer's learned residual.

    k defaults to twice the topology's edge count — the directed-edge count
    of the skeleton itself, so the ranking is read against an equally sized
    reference set. Self-loop cells compete in the ranking unless excluded.
    """
    residual_names = sorted(name for name in ck.params if name.endswith(".residual"))
    if not residual_names:
        raise ValueError("checkpoint has no adjacency residuals; trained without a residual variant")
    if k_per_layer is None:
        k_per_layer = 2 * len(ck.topology.edges)
    layers = []
    for name in residual_names:
        residual = ck.params[name]
        k = min(k_per_layer, residual.size)
        if exclude_self_loops:
            k = min(k, residual.size - residual.shape[0])
            edges = _top_k_no_self_loops(residual, k)
        else:
            edges = top_k_edges(residual, k)
        negatives = sum(1 for _, _, v in edges if v < 0)
        loops = sum(1 for i, j, _ in edges if i == j)
        layers.append(
            LayerResidualReport(
                layer=name.removesuffix(".residual"),
                top_edges=edges,
                asymmetry=asymmetry_score(residual),
                negative_fraction=negatives / len(edges) if edges else 0.0,
                self_loop_count=loops,
            )
        )
    return ResidualReport(layers=layers, k=k_per_layer)


EDGE_CSV_HEADER = ["layer", "row", "col", "value", "sign"]


def edges_to_rows(report: ResidualReport) -> list[tuple[str, int, int, float, str]]:
    return [
        (layer.layer, i, j, v, "-" if v < 0 else "+")
        for layer in report.layers
        for i, j, v in layer.top_edges
    ]


def write_edges_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EDGE_CSV_HEADER)
        for layer, i, j, v, sign in rows:
            writer.writerow([layer, i, j, repr(float(v)), sign])


def read_edges_csv(path) -> list[tuple[str, int, int, float, str]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((row["layer"], int(row["row"]), int(row["col"]), float(row["value"]), row["sign"]))
    return out


def write_edges_dot(rows, path) -> None:
    """DOT digraph of the top edges; positive edges yellow, negative purple."""
    lines = ["digraph residual_edges {"]
    for layer, i, j, v, sign in rows:
        color = "purple" if sign == "-" else "yellow"
        lines.append(
            f'  "{layer}_{i}" -> "{layer}_{j}" [color="{color}", label="{v:.4g}"];'
        )
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def export_edges(report: ResidualReport, path, format: str = "csv") -> None:
    rows = edges_to_rows(report)
    if format == "csv":
        write_edges_csv(rows, path)
    elif format == "dot":
        write_edges_dot(rows, path)
    else:
        raise ValueError(f"unknown export format {format!r}")


# ---------------------------------------------------------------------------
# Misclassification diffs


@dataclass
class DiffReport:
    per_class: np.ndarray  # count of samples correct under A, wrong under B
    total: int
    top: list[tuple[int, int]]  # (class index, count), descending


def misclassification_diff(preds_a, preds_b, n_classes: int, top_m: int = 15) -> DiffReport:
    """Per-class counts of samples the first model classifies correctly and
    the second misclassifies. Both inputs are (sample_id, true, predicted)
    triples (or paths readable by training.read_predictions) over the same
    sample set."""
    from .training import read_predictions

    if isinstance(preds_a, (str, Path)):
        preds_a = read_predictions(preds_a)
    if isinstance(preds_b, (str, Path)):
        preds_b = read_predictions(preds_b)
    a = {sid: (true, pred) for sid, true, pred in preds_a}
    b = {sid: (true, pred) for sid, true, pred in preds_b}
    if len(a) != len(preds_a) or len(b) != len(preds_b):
        raise ValueError("duplicate sample ids in predictions")
    if set(a) != set(b):
        missing = set(a) ^ set(b)
        raise ValueError(f"prediction files cover different samples, e.g. {sorted(missing)[:3]}")
    counts = np.zeros(n_classes, dtype=int)
    for sid, (true, pred_a) in a.items():
        true_b, pred_b = b[sid]
        if true_b != true:
            raise ValueError(f"sample {sid!r} has conflicting true labels {true} vs {true_b}")
        if not 0 <= true < n_classes:
            raise ValueError(f"sample {sid!r} label {true} out of range for {n_classes} classes")
        if pred_a == true and pred_b != true:
            counts[true] += 1
    order = sorted(range(n_classes), key=lambda k: (-counts[k], k))
    top = [(k, int(counts[k])) for k in order[: max(0, top_m)]]
    return DiffReport(per_class=counts, total=int(counts.sum()), top=top)


def write_diff_csv(report: DiffReport, path, class_names=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "name", "count"])
        for k, count in report.top:
            name = class_names[k] if class_names else ""
            writer.writerow([k, name, count])
