"""Sparse graphs, normalisation, datasets, splits and label flipping."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import InvalidGraphError, InvalidInputError, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CsrGraph:
    """Undirected adjacency in CSR form. Self-loops are never stored.

    ``a_hat`` caches D^-1/2 (A + I) D^-1/2 once :func:`normalize_adjacency` ran.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    a_hat: sp.csr_matrix | None = field(default=None, repr=False)
    _mean_agg: list = field(default_factory=list, repr=False)

    @classmethod
    def from_edges(cls, n: int, src, dst, normalize: bool = True) -> "CsrGraph":
        """Build from an edge list; symmetrises, drops self-loops and duplicates."""
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise InvalidInputError("src and dst differ in length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise InvalidInputError("edge endpoint out of range")
        keep = src != dst
        s = np.concatenate([src[keep], dst[keep]])
        d = np.concatenate([dst[keep], src[keep]])
        a = sp.csr_matrix((np.ones(s.size), (s, d)), shape=(n, n))
        a.sum_duplicates()
        a.sort_indices()
        g = cls(n, a.indptr.astype(np.int64), a.indices.astype(np.int64))
        return normalize_adjacency(g) if normalize else g

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return int(self.indices.size // 2)

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix((np.ones(self.indices.size), self.indices, self.indptr), shape=(self.n, self.n))

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_list(self) -> np.ndarray:
        """(m, 2) array of undirected edges with src < dst."""
        rows = np.repeat(np.arange(self.n), self.degrees())
        sel = rows < self.indices
        return np.stack([rows[sel], self.indices[sel]], axis=1)

    def propagate(self, h: np.ndarray) -> np.ndarray:
        """Ã @ h."""
        if self.a_hat is None:
            raise InvalidGraphError("graph has no normalized adjacency; call normalize_adjacency")
        return self.a_hat @ h

    def mean_aggregator(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Row-normalised adjacency D^-1 A and its transpose; isolated rows are zero."""
        if not self._mean_agg:
            deg = self.degrees().astype(np.float64)
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
            vals = np.repeat(inv, self.degrees())
            m = sp.csr_matrix((vals, self.indices, self.indptr), shape=(self.n, self.n))
            self._mean_agg.extend([m, m.T.tocsr()])
        return self._mean_agg[0], self._mean_agg[1]

    def dense_a_hat(self) -> np.ndarray:
        if self.a_hat is None:
            raise InvalidGraphError("graph has no normalized adjacency")
        return self.a_hat.toarray()


def normalize_adjacency(graph: CsrGraph) -> CsrGraph:
    a = graph.adjacency()
    if a.diagonal().any():
        raise InvalidGraphError("self-loops must not be stored in the adjacency")
    if (a != a.T).nnz:
        raise InvalidGraphError("adjacency is not symmetric")
    d_tilde = graph.degrees().astype(np.float64) + 1.0
    inv_sqrt = 1.0 / np.sqrt(d_tilde)
    a_hat = (sp.diags(inv_sqrt) @ (a + sp.identity(graph.n, format="csr")) @ sp.diags(inv_sqrt)).tocsr()
    a_hat.sort_indices()
    return CsrGraph(graph.n, graph.indptr, graph.indices, a_hat)


def induced_subgraph(graph: CsrGraph, nodes) -> tuple[CsrGraph, np.ndarray]:
    """Subgraph on ``nodes`` (renormalised) and the old->new index map (-1 if dropped)."""
    nodes = np.asarray(nodes)
    if nodes.dtype == bool:
        nodes = np.flatnonzero(nodes)
    nodes = np.unique(nodes.astype(np.int64))
    if nodes.size == 0:
        raise InvalidInputError("induced_subgraph: empty node subset")
    sub = graph.adjacency()[nodes][:, nodes].tocsr()
    sub.sort_indices()
    g = normalize_adjacency(CsrGraph(int(nodes.size), sub.indptr.astype(np.int64), sub.indices.astype(np.int64)))
    mapping = np.full(graph.n, -1, dtype=np.int64)
    mapping[nodes] = np.arange(nodes.size)
    return g, mapping


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.x.shape[0]
        for name in ("train_mask", "val_mask", "test_mask"):
            m = getattr(self, name)
            if m.shape != (n,) or m.dtype != bool:
                raise InvalidInputError(f"{name} must be a boolean vector of length {n}")
        if (self.train_mask & self.val_mask).any() or (self.train_mask & self.test_mask).any() or (
            self.val_mask & self.test_mask
        ).any():
            raise InvalidInputError("masks overlap")
        if self.y.shape != (n,):
            raise InvalidInputError("label vector length mismatch")
        if not np.all(np.isfinite(self.x)):
            raise InvalidInputError("feature matrix has non-finite entries")
        if n and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise InvalidInputError("label outside [0, num_classes)")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def with_masks(self, train, val, test) -> "Dataset":
        return replace(self, train_mask=train, val_mask=val, test_mask=test)


@dataclass(frozen=True)
class SbmConfig:
    blocks: int = 2
    block_size: int = 50
    p_in: float = 0.1
    p_out: float = 0.01
    dim: int = 16
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.blocks < 1 or self.block_size < 1 or self.dim < 1:
            raise InvalidInputError("blocks, block_size and dim must be positive")
        if not (0.0 <= self.p_out <= self.p_in <= 1.0):
            raise InvalidInputError("need 0 <= p_out <= p_in <= 1")
        if self.separation < 0 or self.noise < 0:
            raise InvalidInputError("separation and noise must be non-negative")


def _bernoulli_positions(rng: np.random.Generator, total: int, p: float) -> np.ndarray:
    """Indices in [0, total) each kept independently with probability p (geometric skipping)."""
    if total <= 0 or p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(total, dtype=np.int64)
    out = []
    pos = -1
    while True:
        chunk = int(total * p + 4.0 * math.sqrt(total * p) + 16)
        gaps = rng.geometric(p, size=chunk)
        idx = pos + np.cumsum(gaps)
        done = idx[-1] >= total
        idx = idx[idx < total]
        out.append(idx)
        if done:
            break
        pos = int(idx[-1])
    return np.concatenate(out).astype(np.int64)


def _triangle_pairs(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map linear index k over strictly-lower-triangular pairs to (i, j), j < i."""
    i = np.floor((1.0 + np.sqrt(1.0 + 8.0 * k.astype(np.float64))) / 2.0).astype(np.int64)
    # repair float rounding near perfect squares
    i -= (i * (i - 1) // 2) > k
    i += ((i + 1) * i // 2) <= k
    j = k - i * (i - 1) // 2
    return i, j


def generate_sbm(config: SbmConfig, fractions=(0.6, 0.2, 0.2)) -> tuple[CsrGraph, Dataset]:
    """Undirected SBM with Gaussian features around equidistant class means."""
    rng = np.random.default_rng(config.seed)
    k, m = config.blocks, config.block_size
    n = k * m
    src, dst = [], []
    for a in range(k):
        for b in range(a, k):
            if a == b:
                pos = _bernoulli_positions(rng, m * (m - 1) // 2, config.p_in)
                i, j = _triangle_pairs(pos)
                src.append(a * m + i)
                dst.append(a * m + j)
            else:
                pos = _bernoulli_positions(rng, m * m, config.p_out)
                src.append(a * m + pos // m)
                dst.append(b * m + pos % m)
    src = np.concatenate(src) if src else np.empty(0, np.int64)
    dst = np.concatenate(dst) if dst else np.empty(0, np.int64)
    graph = CsrGraph.from_edges(n, src, dst)

    labels = np.repeat(np.arange(k), m)
    if config.dim >= k:
        means = np.eye(k, config.dim)
    else:
        dirs = rng.standard_normal((k, config.dim))
        means = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    x = config.separation * means[labels] + config.noise * rng.standard_normal((n, config.dim))
    train, val, test = make_splits(n, fractions, config.seed)
    return graph, Dataset(x, labels, train, val, test, k)


def make_splits(n: int, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise InvalidInputError("fractions must be three non-negative numbers")
    if sum(fractions) > 1.0 + 1e-12:
        raise InvalidInputError(f"split fractions sum to {sum(fractions)} > 1")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = [int(math.floor(f * n + 1e-9)) for f in fractions]
    masks = []
    start = 0
    for s in sizes:
        m = np.zeros(n, dtype=bool)
        m[perm[start : start + s]] = True
        masks.append(m)
        start += s
    return masks[0], masks[1], masks[2]


def flip_labels(dataset: Dataset, class_id: int, fraction: float, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Reassign a fraction of one class's train nodes to other random classes.

    Returns the corrupted dataset and the flipped node ids; original labels stay in
    ``dataset.y``.
    """
    if not 0 <= class_id < dataset.num_classes:
        raise InvalidInputError(f"class {class_id} outside [0, {dataset.num_classes})")
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError("fraction must lie in [0, 1]")
    pool = np.flatnonzero(dataset.train_mask & (dataset.y == class_id))
    count = int(math.floor(fraction * pool.size + 1e-9))
    if count == 0 or dataset.num_classes < 2:
        return dataset, np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(pool, size=count, replace=False))
    y = dataset.y.copy()
    shift = rng.integers(1, dataset.num_classes, size=count)
    y[chosen] = (class_id + shift) % dataset.num_classes
    return replace(dataset, y=y), chosen


def largest_component(graph: CsrGraph) -> np.ndarray:
    _, comp = connected_components(graph.adjacency(), directed=False)
    counts = np.bincount(comp)
    return np.flatnonzero(comp == np.argmax(counts))


def _restrict(graph: CsrGraph, x, y, nodes) -> tuple[CsrGraph, np.ndarray, np.ndarray]:
    sub, _ = induced_subgraph(graph, nodes)
    return sub, x[nodes], y[nodes]


def _open_text(path: Path):
    # newline="" keeps CRLF handling inside csv / explicit strip
    return open(path, "r", encoding="utf-8", newline="")


def _find_cora_files(path: Path) -> tuple[Path, Path]:
    if path.is_dir():
        return path / "cora.content", path / "cora.cites"
    base = str(path)
    for suffix in (".content", ".cites"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return Path(base + ".content"), Path(base + ".cites")


def load_cora(path, largest_cc: bool = True):
    content, cites = _find_cora_files(Path(path))
    ids: dict[str, int] = {}
    feats, labels_raw = [], []
    width = None
    with _open_text(content) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise ParseError("expected id, features, class", lineno, str(content))
            if width is None:
                width = len(parts) - 2
            elif len(parts) - 2 != width:
                raise ParseError(f"expected {width} features, got {len(parts) - 2}", lineno, str(content))
            try:
                feats.append([int(v) for v in parts[1:-1]])
            except ValueError:
                raise ParseError("non-integer feature value", lineno, str(content)) from None
            if parts[0] in ids:
                raise ParseError(f"duplicate node id {parts[0]}", lineno, str(content))
            ids[parts[0]] = len(ids)
            labels_raw.append(parts[-1])
    classes = sorted(set(labels_raw))
    cls_index = {c: i for i, c in enumerate(classes)}
    src, dst = [], []
    dropped = 0
    with _open_text(cites) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected 'cited citing'", lineno, str(cites))
            a, b = ids.get(parts[0]), ids.get(parts[1])
            if a is None or b is None:
                dropped += 1
                continue
            src.append(a)
            dst.append(b)
    if dropped:
        log.warning("cora: dropped %d citations with unknown endpoints", dropped)
    x = np.asarray(feats, dtype=np.float64)
    y = np.asarray([cls_index[c] for c in labels_raw], dtype=np.int64)
    graph = CsrGraph.from_edges(len(ids), src, dst)
    if largest_cc:
        graph, x, y = _restrict(graph, x, y, largest_component(graph))
    return graph, x, y, len(classes), dropped


def load_generic_csv(path):
    path = Path(path)
    nodes_file, edges_file = path / "nodes.csv", path / "edges.csv"
    ids: dict[str, int] = {}
    feats, labels_raw = [], []
    with _open_text(nodes_file) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2 or header[0].strip() != "id" or header[-1].strip() != "label":
            raise ParseError("header must be id,f0..f{d-1},label", 1, str(nodes_file))
        d = len(header) - 2
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ParseError(f"expected {d + 2} columns, got {len(row)}", lineno, str(nodes_file))
            nid = row[0].strip()
            if nid in ids:
                raise ParseError(f"duplicate node id {nid}", lineno, str(nodes_file))
            try:
                feats.append([float(v) for v in row[1:-1]])
            except ValueError:
                raise ParseError("non-numeric feature", lineno, str(nodes_file)) from None
            if not all(math.isfinite(v) for v in feats[-1]):
                raise ParseError("non-finite feature", lineno, str(nodes_file))
            ids[nid] = len(ids)
            labels_raw.append(row[-1].strip())
    src, dst = [], []
    with _open_text(edges_file) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src", "dst"]:
            raise ParseError("header must be src,dst", 1, str(edges_file))
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError("expected 2 columns", lineno, str(edges_file))
            a, b = ids.get(row[0].strip()), ids.get(row[1].strip())
            if a is None or b is None:
                raise ParseError(f"dangling edge endpoint {row}", lineno, str(edges_file))
            src.append(a)
            dst.append(b)
    if all(l.lstrip("-").isdigit() for l in labels_raw):
        y = np.asarray([int(l) for l in labels_raw], dtype=np.int64)
        if y.size and y.min() < 0:
            raise ParseError("negative integer label", None, str(nodes_file))
        num_classes = int(y.max()) + 1 if y.size else 0
    else:
        classes = sorted(set(labels_raw))
        y = np.asarray([classes.index(l) for l in labels_raw], dtype=np.int64)
        num_classes = len(classes)
    x = np.asarray(feats, dtype=np.float64).reshape(len(ids), -1)
    return CsrGraph.from_edges(len(ids), src, dst), x, y, num_classes


def load_dataset(
    fmt: str,
    path: str | os.PathLike,
    fractions=(0.6, 0.2, 0.2),
    seed: int = 0,
    largest_cc: bool | None = None,
) -> tuple[CsrGraph, Dataset]:
    """Load ``cora-raw`` or ``generic-csv`` data and attach seeded splits.

    ``largest_cc`` defaults to True for Cora and False for generic CSV.
    """
    if largest_cc is None:
        largest_cc = fmt == "cora-raw"
    if fmt == "cora-raw":
        graph, x, y, c, _ = load_cora(path, largest_cc=largest_cc)
    elif fmt == "generic-csv":
        graph, x, y, c = load_generic_csv(path)
        if largest_cc:
            graph, x, y = _restrict(graph, x, y, largest_component(graph))
    else:
        raise InvalidInputError(f"unknown dataset format {fmt!r}")
    train, val, test = make_splits(graph.n, fractions, seed)
    return graph, Dataset(x, y, train, val, test, c)
