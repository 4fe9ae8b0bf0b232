"""Delimited-text readers and writers for experiment artifacts.

All floats are rendered with 17 significant digits so that a rerun with the
same seed reproduces every output file byte for byte, and so that values
survive a write/read round trip exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .rkhs import Kernel
from .tree import TreeMarket


def fmt(x) -> str:
    """Render a number losslessly (17 significant digits for floats)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_table(path, header: Sequence[str], rows) -> Path:
    """Write rows of mixed str/number cells as CSV with a fixed line ending."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return path


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValueError(f"{path}: empty table")
    return rows


def write_kernel_csv(path, kernel: Kernel) -> Path:
    rows = [
        [label, *kernel.matrix[i]] for i, label in enumerate(kernel.labels)
    ]
    return write_table(path, ["label", *kernel.labels], rows)


def read_kernel_csv(path) -> Kernel:
    rows = _read_rows(path)
    labels = tuple(rows[0][1:])
    matrix = np.array([[float(c) for c in row[1:]] for row in rows[1:]])
    if len(rows) - 1 != len(labels):
        raise ValueError(f"{path}: kernel table is not square")
    return Kernel(labels, matrix)


def write_vectors_csv(path, labels: Sequence[str], vectors: dict) -> Path:
    rows = [[name, *vec] for name, vec in vectors.items()]
    return write_table(path, ["name", *labels], rows)


def read_vectors_csv(path) -> tuple[tuple[str, ...], dict]:
    """Returns (labels, {name: vector}) for named test vectors."""
    rows = _read_rows(path)
    labels = tuple(rows[0][1:])
    vectors = {
        row[0]: np.array([float(c) for c in row[1:]]) for row in rows[1:]
    }
    return labels, vectors


def write_tree_csv(path, tree: TreeMarket) -> Path:
    header = ["node", "parent", "prob", *tree.labels]
    rows = [
        [v, int(tree.parent[v]), tree.prob[v], *tree.prices[v]]
        for v in range(tree.n_nodes)
    ]
    return write_table(path, header, rows)


def read_tree_csv(path) -> TreeMarket:
    rows = _read_rows(path)
    labels = tuple(rows[0][3:])
    body = sorted(rows[1:], key=lambda row: int(row[0]))
    ids = [int(row[0]) for row in body]
    if ids != list(range(len(body))):
        raise ValueError(f"{path}: node ids must be 0..V-1")
    parent = np.array([int(row[1]) for row in body])
    prob = np.array([float(row[2]) for row in body])
    prices = np.array([[float(c) for c in row[3:]] for row in body])
    return TreeMarket(parent, prob, prices, labels)


def write_node_values_csv(path, values: Sequence[float], name="value") -> Path:
    rows = [[v, float(x)] for v, x in enumerate(values)]
    return write_table(path, ["node", name], rows)


def read_node_values_csv(path) -> np.ndarray:
    rows = _read_rows(path)
    body = sorted(rows[1:], key=lambda row: int(row[0]))
    return np.array([float(row[1]) for row in body])


def write_curve_csv(path, maturities, values) -> Path:
    rows = list(zip(maturities, values))
    return write_table(path, ["maturity", "value"], rows)


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path)
    body = [(float(r[0]), float(r[1])) for r in rows[1:]]
    maturities = np.array([m for m, _ in body])
    values = np.array([v for _, v in body])
    return maturities, values


def write_field_csv(path, times, maturities, field) -> Path:
    """Time-by-maturity grid: rows are time points, columns are maturities."""
    field = np.asarray(field)
    header = ["t", *(f"T={fmt(T)}" for T in maturities)]
    rows = [[t, *field[k]] for k, t in enumerate(times)]
    return write_table(path, header, rows)


def read_field_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (times, maturities, field) from a time-by-maturity grid."""
    rows = _read_rows(path)
    maturities = np.array([float(c.split("=", 1)[1]) for c in rows[0][1:]])
    times = np.array([float(row[0]) for row in rows[1:]])
    field = np.array([[float(c) for c in row[1:]] for row in rows[1:]])
    return times, maturities, field
