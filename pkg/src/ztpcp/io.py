"""Text formats for counts, observation sets and Kruskal models.

Counts and observation sets use FROSTT-style lines of 1-based indices
(followed by the count for tensors); ``#`` starts a comment.  Writers emit a
``# shape I1 I2 ...`` header which readers honour, so trailing all-zero
slices survive a round trip.  Models are JSON documents whose floats are
written with 17 significant digits, which reproduces every double exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensors import ContractError, KruskalModel, ObservationSet, Shape, SparseCountTensor


class FormatError(ValueError):
    pass


def _parse_lines(path, n_value_cols: int):
    shape = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                parts = text[1:].split()
                if parts and parts[0].lower() == "shape":
                    shape = tuple(int(p) for p in parts[1:])
                continue
            try:
                rows.append([int(tok) for tok in text.split()])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: expected integers, got {text!r}") from None
    if rows:
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise FormatError(f"{path}: inconsistent number of columns")
        if width <= n_value_cols:
            raise FormatError(f"{path}: lines need at least one index column")
        data = np.asarray(rows, dtype=np.int64)
    else:
        order = len(shape) if shape else 0
        data = np.empty((0, order + n_value_cols), dtype=np.int64)
    subs = data[:, : data.shape[1] - n_value_cols] - 1
    if subs.size and subs.min() < 0:
        raise FormatError(f"{path}: indices are 1-based; found an index < 1")
    if shape is None:
        if not len(subs):
            raise FormatError(f"{path}: empty file without a '# shape' header")
        shape = tuple(int(v) + 1 for v in subs.max(axis=0))
    return Shape(shape), subs, data[:, data.shape[1] - n_value_cols :]


def read_counts(path, shape=None) -> SparseCountTensor:
    """Read a sparse count tensor; explicit zero counts are dropped."""
    file_shape, subs, vals = _parse_lines(path, 1)
    shape = Shape.of(shape) if shape is not None else file_shape
    vals = vals[:, 0]
    if (vals < 0).any():
        raise FormatError(f"{path}: negative count")
    keep = vals > 0
    return SparseCountTensor(shape, subs[keep], vals[keep])


def write_counts(path, X: SparseCountTensor) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# shape " + " ".join(map(str, X.shape)) + "\n")
        np.savetxt(fh, np.column_stack([X.subs + 1, X.vals]), fmt="%d")


def read_observations(path, shape=None) -> ObservationSet:
    file_shape, subs, _ = _parse_lines(path, 0)
    shape = Shape.of(shape) if shape is not None else file_shape
    lin = shape.linearize(subs)
    if len(np.unique(lin)) != len(lin):
        raise FormatError(f"{path}: duplicate indices")
    return ObservationSet(shape, lin)


def write_observations(path, obs: ObservationSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# shape " + " ".join(map(str, obs.shape)) + "\n")
        np.savetxt(fh, obs.subs + 1, fmt="%d")


def _num(v: float) -> str:
    return format(float(v), ".17g")


def model_to_json(model: KruskalModel) -> str:
    factors = ",\n    ".join(
        "[" + ", ".join("[" + ", ".join(_num(v) for v in row) + "]" for row in A) + "]" for A in model.factors
    )
    return (
        "{\n"
        f'  "shape": [{", ".join(map(str, model.shape))}],\n'
        f'  "rank": {model.rank},\n'
        f'  "lambda": [{", ".join(_num(v) for v in model.weights)}],\n'
        f'  "factors": [\n    {factors}\n  ]\n'
        "}\n"
    )


def model_from_dict(doc: dict) -> KruskalModel:
    try:
        shape = Shape(tuple(doc["shape"]))
        weights = np.asarray(doc["lambda"], dtype=np.float64)
        factors = tuple(np.asarray(A, dtype=np.float64).reshape(I, -1) for A, I in zip(doc["factors"], shape))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model document: {exc}") from None
    if int(doc.get("rank", len(weights))) != len(weights):
        raise FormatError("rank does not match the number of weights")
    try:
        return KruskalModel(shape, weights, factors)
    except ContractError as exc:
        raise FormatError(str(exc)) from None


def write_model(path, model: KruskalModel) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def read_model(path) -> KruskalModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
