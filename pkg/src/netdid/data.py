"""Dataset containers for two-period panels, repeated cross-sections and staggered adoption.

Nodes files are CSVs whose first column is a node ID. IDs may be arbitrary
strings; they are mapped to dense indices in first-seen order and the mapping
is kept on the dataset (``ids``) so results can be reported in the original
labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .graph import Graph, read_edges_csv, write_edges_csv

__all__ = [
    "NEVER",
    "PanelDataset",
    "RcsDataset",
    "StaggeredPanel",
    "delta_y",
    "load_panel",
    "save_panel",
    "load_rcs",
    "save_rcs",
    "load_staggered",
    "save_staggered",
]

NEVER = -1

PANEL_COLUMNS = ("id", "d", "y_pre", "y_post")
RCS_COLUMNS = ("id", "d", "t", "y")


def _as_matrix(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(n, -1) if n else X.reshape(0, 0)
    return X


def _check_binary(name, v):
    bad = ~np.isin(v, (0, 1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"{name}[{i}] = {v[i]!r} is not binary")


def _check_finite(name, v):
    bad = ~np.isfinite(v)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise DataError(f"{name} has a missing or non-finite value at index {tuple(int(k) for k in idx)}")


def _check_length(name, v, n):
    if len(v) != n:
        raise DataError(f"{name} has length {len(v)}, expected {n} (graph size)")


@dataclass(frozen=True, eq=False)
class PanelDataset:
    graph: Graph
    X: np.ndarray
    D: np.ndarray
    Y_pre: np.ndarray
    Y_post: np.ndarray
    ids: tuple[str, ...] | None = None
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        n = self.graph.n
        X = _as_matrix(self.X, n)
        D = np.asarray(self.D)
        for name, v in (("X", X), ("D", D), ("Y_pre", self.Y_pre), ("Y_post", self.Y_post)):
            _check_length(name, v, n)
        _check_binary("D", D)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "D", D.astype(np.int64))
        for name in ("Y_pre", "Y_post"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("X", "Y_pre", "Y_post"):
            _check_finite(name, getattr(self, name))

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def p(self) -> int:
        return self.X.shape[1]


def delta_y(d: PanelDataset) -> np.ndarray:
    """Outcome change between the two periods."""
    return d.Y_post - d.Y_pre


@dataclass(frozen=True, eq=False)
class RcsDataset:
    graph: Graph
    X: np.ndarray
    D: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    ids: tuple[str, ...] | None = None
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        n = self.graph.n
        X = _as_matrix(self.X, n)
        for name, v in (("X", X), ("D", self.D), ("T", self.T), ("Y", self.Y)):
            _check_length(name, v, n)
        D, T = np.asarray(self.D), np.asarray(self.T)
        _check_binary("D", D)
        _check_binary("T", T)
        if T.size and (T.min() == T.max()):
            raise DataError("repeated cross-section needs units in both waves (T=0 and T=1)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "D", D.astype(np.int64))
        object.__setattr__(self, "T", T.astype(np.int64))
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float))
        _check_finite("X", X)
        _check_finite("Y", self.Y)

    @property
    def n(self) -> int:
        return self.graph.n


@dataclass(frozen=True, eq=False)
class StaggeredPanel:
    """Absorbing staggered adoption: ``adoption_time[i]`` in 1..T or ``NEVER``."""

    graph: Graph
    X: np.ndarray
    adoption_time: np.ndarray
    Y: np.ndarray
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        n = self.graph.n
        X = _as_matrix(self.X, n)
        a = np.asarray(self.adoption_time, dtype=np.int64)
        Y = np.asarray(self.Y, dtype=float)
        for name, v in (("X", X), ("adoption_time", a), ("Y", Y)):
            _check_length(name, v, n)
        if Y.ndim != 2:
            raise DataError("Y must be an n x T table")
        T = Y.shape[1]
        bad = (a != NEVER) & ((a < 1) | (a > T))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"adoption_time[{i}] = {a[i]} outside 1..{T}")
        if not (a == NEVER).any():
            raise DataError("staggered panel needs at least one never-treated unit")
        _check_finite("X", X)
        _check_finite("Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "adoption_time", a)
        object.__setattr__(self, "Y", Y)

    @property
    def periods(self) -> int:
        return self.Y.shape[1]

    def treated_at(self, t: int) -> np.ndarray:
        """Treatment status in period ``t`` (absorbing)."""
        a = self.adoption_time
        return ((a != NEVER) & (a <= t)).astype(np.int64)


# --------------------------------------------------------------------------- I/O


def _parse_float(path, lineno, col, raw):
    s = raw.strip()
    if s == "":
        raise DataError(f"{path}: row {lineno}, column {col}: missing value")
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"{path}: row {lineno}, column {col}: {s!r} is not a number") from None
    if math.isnan(v) or math.isinf(v):
        raise DataError(f"{path}: row {lineno}, column {col}: missing or non-finite value {s!r}")
    return v


def _parse_binary(path, lineno, col, raw):
    v = _parse_float(path, lineno, col, raw)
    if v not in (0.0, 1.0):
        raise DataError(f"{path}: row {lineno}, column {col}: value {raw.strip()!r} is not binary (0/1)")
    return int(v)


def _read_nodes(path, prefix):
    """Return (header, ids, rows) after structural checks."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"nodes file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if tuple(header[: len(prefix)]) != prefix:
            raise DataError(f"{path}: header must start with {','.join(prefix)}; got {','.join(header)}")
        ids, rows, seen = [], [], set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {len(header)}")
            key = row[0].strip()
            if key == "":
                raise DataError(f"{path}: row {lineno}, column id: missing node id")
            if key in seen:
                raise DataError(f"{path}: row {lineno}, column id: duplicate node id {key!r}")
            seen.add(key)
            ids.append(key)
            rows.append((lineno, row))
    return path, header, ids, rows


def _read_graph(edges_path, ids):
    edges_path = Path(edges_path)
    if not edges_path.exists():
        raise FileNotFoundError(f"edges file not found: {edges_path}")
    try:
        g, _ = read_edges_csv(edges_path, {k: i for i, k in enumerate(ids)})
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return g


def load_panel(nodes_path, edges_path) -> PanelDataset:
    path, header, ids, rows = _read_nodes(nodes_path, PANEL_COLUMNS)
    xcols = header[len(PANEL_COLUMNS) :]
    D, Y0, Y1, X = [], [], [], []
    for lineno, row in rows:
        D.append(_parse_binary(path, lineno, "d", row[1]))
        Y0.append(_parse_float(path, lineno, "y_pre", row[2]))
        Y1.append(_parse_float(path, lineno, "y_post", row[3]))
        X.append([_parse_float(path, lineno, c, v) for c, v in zip(xcols, row[4:])])
    g = _read_graph(edges_path, ids)
    X = np.asarray(X, dtype=float).reshape(len(ids), len(xcols))
    return PanelDataset(g, X, np.array(D), np.array(Y0), np.array(Y1), tuple(ids), tuple(xcols))


def _labels(ds):
    return list(ds.ids) if ds.ids is not None else [str(i) for i in range(ds.graph.n)]


def _xnames(ds, p):
    names = getattr(ds, "covariate_names", None)
    return list(names) if names else [f"x{k + 1}" for k in range(p)]


def save_panel(d: PanelDataset, nodes_path, edges_path) -> None:
    labels = _labels(d)
    with Path(nodes_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(PANEL_COLUMNS) + _xnames(d, d.p))
        for i in range(d.n):
            w.writerow([labels[i], int(d.D[i]), repr(float(d.Y_pre[i])), repr(float(d.Y_post[i]))]
                       + [repr(float(v)) for v in d.X[i]])
    write_edges_csv(d.graph, edges_path, labels)


def load_rcs(nodes_path, edges_path) -> RcsDataset:
    path, header, ids, rows = _read_nodes(nodes_path, RCS_COLUMNS)
    xcols = header[len(RCS_COLUMNS) :]
    D, T, Y, X = [], [], [], []
    for lineno, row in rows:
        D.append(_parse_binary(path, lineno, "d", row[1]))
        T.append(_parse_binary(path, lineno, "t", row[2]))
        Y.append(_parse_float(path, lineno, "y", row[3]))
        X.append([_parse_float(path, lineno, c, v) for c, v in zip(xcols, row[4:])])
    g = _read_graph(edges_path, ids)
    X = np.asarray(X, dtype=float).reshape(len(ids), len(xcols))
    return RcsDataset(g, X, np.array(D), np.array(T), np.array(Y), tuple(ids), tuple(xcols))


def save_rcs(d: RcsDataset, nodes_path, edges_path) -> None:
    labels = _labels(d)
    with Path(nodes_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(RCS_COLUMNS) + _xnames(d, d.X.shape[1]))
        for i in range(d.n):
            w.writerow([labels[i], int(d.D[i]), int(d.T[i]), repr(float(d.Y[i]))]
                       + [repr(float(v)) for v in d.X[i]])
    write_edges_csv(d.graph, edges_path, labels)


def load_staggered(nodes_path, edges_path) -> StaggeredPanel:
    path, header, ids, rows = _read_nodes(nodes_path, ("id", "adopt_time"))
    ycols = [h for h in header[2:] if h.startswith("y_")]
    xcols = header[2 + len(ycols) :]
    if header[2 : 2 + len(ycols)] != [f"y_{k + 1}" for k in range(len(ycols))] or not ycols:
        raise DataError(f"{path}: outcome columns must be y_1..y_T right after adopt_time")
    A, Y, X = [], [], []
    for lineno, row in rows:
        raw = row[1].strip()
        if raw == "":
            A.append(NEVER)
        else:
            v = _parse_float(path, lineno, "adopt_time", raw)
            if v != int(v) or not 1 <= v <= len(ycols):
                raise DataError(f"{path}: row {lineno}, column adopt_time: {raw!r} is not a period in 1..{len(ycols)}")
            A.append(int(v))
        Y.append([_parse_float(path, lineno, c, v) for c, v in zip(ycols, row[2 : 2 + len(ycols)])])
        X.append([_parse_float(path, lineno, c, v) for c, v in zip(xcols, row[2 + len(ycols) :])])
    g = _read_graph(edges_path, ids)
    X = np.asarray(X, dtype=float).reshape(len(ids), len(xcols))
    return StaggeredPanel(g, X, np.array(A), np.array(Y), tuple(ids))


def save_staggered(sp_: StaggeredPanel, nodes_path, edges_path) -> None:
    labels = _labels(sp_)
    T = sp_.periods
    with Path(nodes_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "adopt_time"] + [f"y_{k + 1}" for k in range(T)]
                   + [f"x{k + 1}" for k in range(sp_.X.shape[1])])
        for i in range(sp_.graph.n):
            a = sp_.adoption_time[i]
            w.writerow([labels[i], "" if a == NEVER else int(a)] + [repr(float(v)) for v in sp_.Y[i]]
                       + [repr(float(v)) for v in sp_.X[i]])
    write_edges_csv(sp_.graph, edges_path, labels)


def panel_from_arrays(graph: Graph, X: Sequence, D: Sequence, Y_pre: Sequence, Y_post: Sequence) -> PanelDataset:
    return PanelDataset(graph, np.asarray(X, dtype=float), np.asarray(D), np.asarray(Y_pre), np.asarray(Y_post))
