"""Sparse graph storage, Laplacian normalisation and dataset I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Literal, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatch,
    DuplicateEntry,
    DuplicateId,
    IndexOutOfRange,
    InconsistentNodeCount,
    InvalidProbability,
    IsolatedNodeWithoutSelfLoop,
    ParseError,
    UnknownLabelClass,
)

ScaleFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Canonical CSR matrix: sorted, duplicate-free columns per row."""

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        m = sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=(self.n_rows, self.n_cols)
        )
        m.has_sorted_indices = True
        return m

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    @cached_property
    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (COO row array)."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))

    def row_degree(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def transpose(self) -> "SparseMatrix":
        return from_scipy(self.csr_t)

    def check(self) -> None:
        rp, ci = self.row_ptr, self.col_idx
        assert rp.shape == (self.n_rows + 1,)
        assert rp[0] == 0 and rp[-1] == ci.shape[0] == self.values.shape[0]
        assert np.all(np.diff(rp) >= 0)
        if ci.size:
            assert ci.min() >= 0 and ci.max() < self.n_cols
            same_row = np.diff(self.row_ids) == 0
            assert np.all(np.diff(ci)[same_row] > 0)
        assert np.all(np.isfinite(self.values))
        assert np.all(self.values != 0)

    def same_as(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )


def _from_coo(rows, cols, vals, n_rows, n_cols, check_dupes=True) -> SparseMatrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if rows.size:
        if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
            raise IndexOutOfRange(f"entry outside {n_rows}x{n_cols}")
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if check_dupes and rows.size > 1:
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise DuplicateEntry(f"duplicate entry ({rows[k]}, {cols[k]})")
    keep = vals != 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=row_ptr[1:])
    return SparseMatrix(n_rows, n_cols, row_ptr, cols, vals)


def from_scipy(m: sp.spmatrix) -> SparseMatrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return SparseMatrix(
        m.shape[0],
        m.shape[1],
        m.indptr.astype(np.int64),
        m.indices.astype(np.int64),
        m.data.astype(np.float64),
    )


def build_csr(edges: Iterable[tuple[int, int, float]], n_rows: int, n_cols: int) -> SparseMatrix:
    edges = list(edges)
    if not edges:
        return _from_coo([], [], [], n_rows, n_cols)
    rows, cols, vals = zip(*edges)
    return _from_coo(rows, cols, vals, n_rows, n_cols)


def identity(n: int) -> SparseMatrix:
    idx = np.arange(n)
    return _from_coo(idx, idx, np.ones(n), n, n)


@dataclass(frozen=True)
class LaplacianConfig:
    norm_kind: Literal["sym", "rw"] = "rw"
    add_self_loops: bool = True

    def __post_init__(self):
        if self.norm_kind not in ("sym", "rw"):
            raise ValueError(f"unknown norm_kind {self.norm_kind!r}")


def normalize_laplacian(adj: SparseMatrix, cfg: LaplacianConfig = LaplacianConfig()) -> SparseMatrix:
    """Row-stochastic D^-1 A or symmetric D^-1/2 A D^-1/2 of the (self-looped) adjacency."""
    if adj.n_rows != adj.n_cols:
        raise DimensionMismatch("adjacency must be square")
    m = adj.csr.copy()
    m.data = np.ones_like(m.data)
    if cfg.add_self_loops:
        m = (m + sp.identity(adj.n_rows, format="csr")).tocsr()
    a = from_scipy(m)
    deg = a.row_degree().astype(np.float64)
    if np.any(deg == 0):
        i = int(np.flatnonzero(deg == 0)[0])
        raise IsolatedNodeWithoutSelfLoop(f"node {i} has no neighbours")
    r = a.row_ids
    if cfg.norm_kind == "rw":
        vals = 1.0 / deg[r]
    else:
        vals = 1.0 / np.sqrt(deg[r] * deg[a.col_idx])
    return SparseMatrix(a.n_rows, a.n_cols, a.row_ptr, a.col_idx, vals)


def spmm(L: SparseMatrix, H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] != L.n_cols:
        raise DimensionMismatch(f"L has {L.n_cols} columns, H has {H.shape[0]} rows")
    if L.nnz == 0:
        return np.zeros((L.n_rows,) + H.shape[1:])
    return np.asarray(L.csr @ H)


def spmm_t(L: SparseMatrix, G: np.ndarray) -> np.ndarray:
    """L^T @ G."""
    G = np.asarray(G, dtype=np.float64)
    if G.shape[0] != L.n_rows:
        raise DimensionMismatch(f"L has {L.n_rows} rows, G has {G.shape[0]} rows")
    if L.nnz == 0:
        return np.zeros((L.n_cols,) + G.shape[1:])
    return np.asarray(L.csr_t @ G)


def _check_ids(ids, n, what) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexOutOfRange(f"{what} id out of range [0, {n})")
    if np.unique(ids).size != ids.size:
        raise DuplicateId(f"duplicate {what} id")
    return ids


def restrict(
    L: SparseMatrix,
    rows: Sequence[int],
    cols: Sequence[int],
    scale: Optional[ScaleFn] = None,
) -> tuple[SparseMatrix, np.ndarray, np.ndarray]:
    """Submatrix L[rows, cols]; ``scale(global_row, global_col, value)`` rewrites entries.

    Returns the restricted matrix plus the row and column index maps
    (local position -> global id). Entries scaled to zero are dropped.
    """
    rows = _check_ids(rows, L.n_rows, "row")
    cols = _check_ids(cols, L.n_cols, "col")
    sub = L.csr[rows][:, cols].tocsr()
    sub.sort_indices()
    out = from_scipy(sub) if sub.nnz else _from_coo([], [], [], rows.size, cols.size)
    if scale is not None and out.nnz:
        vals = np.asarray(
            scale(rows[out.row_ids], cols[out.col_idx], out.values.copy()), dtype=np.float64
        )
        keep = vals != 0
        out = _from_coo(out.row_ids[keep], out.col_idx[keep], vals[keep], rows.size, cols.size, False)
    return out, rows, cols


def neighbors(L: SparseMatrix, ids: Sequence[int]) -> np.ndarray:
    """Sorted union of the row supports of ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return ids
    parts = [L.col_idx[L.row_ptr[i] : L.row_ptr[i + 1]] for i in ids]
    return np.unique(np.concatenate(parts))


# ---------------------------------------------------------------- datasets


@dataclass(eq=False)
class GraphDataset:
    adjacency: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.train_mask = np.asarray(self.train_mask, dtype=bool)
        self.val_mask = np.asarray(self.val_mask, dtype=bool)
        self.test_mask = np.asarray(self.test_mask, dtype=bool)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return self.adjacency.n_rows

    @property
    def label_mode(self) -> str:
        return "multi" if self.labels.ndim == 2 else "single"

    @property
    def n_classes(self) -> int:
        if self.label_mode == "multi":
            return int(self.labels.shape[1])
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def train_ids(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask)

    @property
    def val_ids(self) -> np.ndarray:
        return np.flatnonzero(self.val_mask)

    @property
    def test_ids(self) -> np.ndarray:
        return np.flatnonzero(self.test_mask)

    def validate(self) -> None:
        n = self.adjacency.n_rows
        a = self.adjacency
        if a.n_cols != n:
            raise DimensionMismatch("adjacency must be square")
        for what, arr in (("features", self.features), ("labels", self.labels)):
            if arr.shape[0] != n:
                raise InconsistentNodeCount(f"{what} has {arr.shape[0]} rows, graph has {n} nodes")
        for m in (self.train_mask, self.val_mask, self.test_mask):
            if m.shape != (n,):
                raise InconsistentNodeCount("mask length differs from node count")
        if np.any(self.train_mask & self.val_mask) or np.any(self.train_mask & self.test_mask) or np.any(
            self.val_mask & self.test_mask
        ):
            raise ValueError("split masks overlap")
        if np.any(a.row_ids == a.col_idx):
            raise ValueError("raw adjacency must have an empty diagonal")
        if (abs(a.csr - a.csr.T)).nnz:
            raise ValueError("adjacency must be symmetric")
        if not np.all(np.isfinite(self.features[self.train_mask])):
            raise ValueError("non-finite feature row for a training node")

    def equals(self, other: "GraphDataset") -> bool:
        return (
            self.adjacency.same_as(other.adjacency)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.train_mask, other.train_mask)
            and np.array_equal(self.val_mask, other.val_mask)
            and np.array_equal(self.test_mask, other.test_mask)
        )


def adjacency_from_edges(edges: Iterable[tuple[int, int]], n: int) -> SparseMatrix:
    """Symmetrised, deduplicated binary adjacency; self-loops rejected."""
    e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise IndexOutOfRange(f"edge endpoint outside [0, {n})")
    if np.any(e[:, 0] == e[:, 1]):
        raise ValueError("self-loop in edge list")
    both = np.concatenate([e, e[:, ::-1]])
    both = np.unique(both, axis=0) if both.size else both
    return _from_coo(both[:, 0], both[:, 1], np.ones(len(both)), n, n)


def _split_masks(rng, n, train_frac, val_frac):
    perm = rng.permutation(n)
    n_tr = int(round(train_frac * n))
    n_va = int(round(val_frac * n))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][perm[:n_tr]] = True
    masks[1][perm[n_tr : n_tr + n_va]] = True
    masks[2][perm[n_tr + n_va :]] = True
    return masks


def synth_sbm(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    label_mode: Literal["single", "multi"] = "single",
    seed: int = 0,
    feature_noise: float = 1.0,
    train_frac: float = 0.6,
    val_frac: float = 0.2,
) -> GraphDataset:
    """Stochastic block model with block-mean Gaussian features."""
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise InvalidProbability(f"need 0 <= p_out <= p_in <= 1, got {p_out}, {p_in}")
    if label_mode not in ("single", "multi"):
        raise ValueError(f"unknown label_mode {label_mode!r}")
    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    block = np.repeat(np.arange(blocks), nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    hit = rng.random(iu.size) < prob
    adj = adjacency_from_edges(zip(iu[hit], ju[hit]), n)

    means = rng.normal(size=(blocks, feature_dim))
    features = means[block] + feature_noise * rng.normal(size=(n, feature_dim))
    if label_mode == "single":
        labels = block.astype(np.int64)
    else:
        patterns = rng.random((blocks, blocks)) < 0.5
        patterns[np.arange(blocks), np.arange(blocks)] = True
        labels = patterns[block].astype(np.int64)
    tr, va, te = _split_masks(rng, n, train_frac, val_frac)
    return GraphDataset(
        adj, features, labels, tr, va, te,
        meta={"block": block, "p_in": p_in, "p_out": p_out, "seed": seed},
    )


# ---------------------------------------------------------------- file formats

_SPLIT_CODES = {"t": 0, "v": 1, "s": 2, "u": 3}


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _read_csv_matrix(path, dtype):
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for k, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                out.append([dtype(x) for x in row])
            except ValueError as exc:
                raise ParseError(str(exc), line=k, path=path) from None
    widths = {len(r) for r in out}
    if len(widths) > 1:
        raise ParseError("ragged CSV rows", path=path)
    return out


def load_dataset(edge_path, feature_path, label_path, split_path, label_mode=None) -> GraphDataset:
    """Read the four-file text format (edges TSV, features CSV, labels, split codes)."""
    feats = np.asarray(_read_csv_matrix(feature_path, float), dtype=np.float64)
    n = feats.shape[0]

    edges = []
    for k, line in enumerate(_read_lines(edge_path), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split("\t")
        if len(parts) != 2:
            raise ParseError("expected 'u<TAB>v' (weighted edges are not supported)", k, edge_path)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"bad node id in {s!r}", k, edge_path) from None
        if not (0 <= u < n and 0 <= v < n):
            raise InconsistentNodeCount(f"{edge_path}:{k}: node id beyond {n} feature rows")
        edges.append((u, v))

    raw_labels = [ln for ln in _read_lines(label_path) if ln.strip()]
    if label_mode is None:
        label_mode = "multi" if any("," in ln for ln in raw_labels) else "single"
    if label_mode == "multi":
        lab = np.asarray(_read_csv_matrix(label_path, int), dtype=np.int64)
        if lab.size and not np.isin(lab, (0, 1)).all():
            raise UnknownLabelClass("multi-label entries must be 0 or 1")
    else:
        vals = []
        for k, ln in enumerate(raw_labels, start=1):
            try:
                vals.append(int(ln))
            except ValueError:
                raise ParseError(f"bad label {ln!r}", k, label_path) from None
        lab = np.asarray(vals, dtype=np.int64)
        if lab.size and lab.min() < 0:
            raise UnknownLabelClass("negative class index")
    if lab.shape[0] != n:
        raise InconsistentNodeCount(f"{lab.shape[0]} labels for {n} nodes")

    codes = []
    for k, ln in enumerate(_read_lines(split_path), start=1):
        s = ln.strip()
        if not s:
            continue
        if s not in _SPLIT_CODES:
            raise ParseError(f"split code must be one of t/v/s/u, got {s!r}", k, split_path)
        codes.append(_SPLIT_CODES[s])
    codes = np.asarray(codes)
    if codes.shape[0] != n:
        raise InconsistentNodeCount(f"{codes.shape[0]} split codes for {n} nodes")

    return GraphDataset(
        adjacency_from_edges(edges, n), feats, lab, codes == 0, codes == 1, codes == 2
    )


def save_dataset(ds: GraphDataset, directory) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.txt" for k in ("edges", "features", "labels", "split")}
    a = ds.adjacency
    upper = a.row_ids < a.col_idx
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        fh.write("# u\tv\n")
        for u, v in zip(a.row_ids[upper], a.col_idx[upper]):
            fh.write(f"{u}\t{v}\n")
    with open(paths["features"], "w", encoding="utf-8") as fh:
        for row in ds.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        if ds.label_mode == "multi":
            for row in ds.labels:
                fh.write(",".join(str(int(x)) for x in row) + "\n")
        else:
            fh.write("".join(f"{int(y)}\n" for y in ds.labels))
    code = np.full(ds.n_nodes, "u")
    code[ds.train_mask], code[ds.val_mask], code[ds.test_mask] = "t", "v", "s"
    with open(paths["split"], "w", encoding="utf-8") as fh:
        fh.write("".join(c + "\n" for c in code))
    return paths


def load_dir(directory, label_mode=None) -> GraphDataset:
    d = Path(directory)
    return load_dataset(d / "edges.txt", d / "features.txt", d / "labels.txt", d / "split.txt", label_mode)
