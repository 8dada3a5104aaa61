"""GCN, GraphSAGE and MLP with hand-written backward passes, training, and checkpoints."""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import CheckpointError, InvalidInputError, TrainingError
from .graph import CsrGraph, Dataset, induced_subgraph
from .linalg import AdamState, ParameterSet, _as_mask, adam_step, masked_cross_entropy

log = logging.getLogger(__name__)

ARCHITECTURES = ("gcn", "sage", "mlp")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "gcn"
    layers: int = 2
    hidden: int = 32
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise InvalidInputError(f"unknown architecture {self.arch!r}")
        if self.layers < 1:
            raise InvalidInputError("layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError("dropout must lie in [0, 1)")
        if self.hidden < 1:
            raise InvalidInputError("hidden must be >= 1")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def layer_dims(config: ModelConfig, in_dim: int, out_dim: int) -> list[tuple[int, int]]:
    widths = [in_dim] + [config.hidden] * (config.layers - 1) + [out_dim]
    return list(zip(widths[:-1], widths[1:]))


def init_params(config: ModelConfig, in_dim: int, out_dim: int, zero_output: bool = False) -> ParameterSet:
    """Glorot-uniform weights, zero biases. GraphSAGE layers carry a root and a neighbour weight."""
    rng = np.random.default_rng(config.seed)
    params = ParameterSet()
    dims = layer_dims(config, in_dim, out_dim)
    for l, (fi, fo) in enumerate(dims):
        last = l == len(dims) - 1
        if config.arch == "sage":
            params.add(f"W_root{l}", np.zeros((fi, fo)) if last and zero_output else _glorot(rng, fi, fo))
            params.add(f"W_neigh{l}", np.zeros((fi, fo)) if last and zero_output else _glorot(rng, fi, fo))
        else:
            params.add(f"W{l}", np.zeros((fi, fo)) if last and zero_output else _glorot(rng, fi, fo))
        params.add(f"b{l}", np.zeros(fo))
    return params


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # post-dropout input of each layer
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of each layer
    masks: list[np.ndarray | None] = field(default_factory=list)  # dropout scale masks
    neigh: list[np.ndarray | None] = field(default_factory=list)  # sage: mean-aggregated inputs


def forward(
    config: ModelConfig,
    params: ParameterSet,
    graph: CsrGraph | None,
    x: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Raw logits. Hidden layers use relu; dropout hits hidden-layer inputs in train mode."""
    if config.arch != "mlp" and graph is None:
        raise InvalidInputError(f"{config.arch} requires a graph")
    if graph is not None and config.arch != "mlp" and graph.n != x.shape[0]:
        raise InvalidInputError(f"graph has {graph.n} nodes but x has {x.shape[0]} rows")
    first = params["W_root0" if config.arch == "sage" else "W0"]
    if x.shape[1] != first.shape[0]:
        raise InvalidInputError(f"feature width {x.shape[1]} != first layer input {first.shape[0]}")
    if train and config.dropout > 0 and rng is None:
        raise InvalidInputError("train-mode forward with dropout needs an rng")
    cache = ForwardCache()
    h = np.asarray(x, dtype=np.float64)
    for l in range(config.layers):
        mask = None
        if l > 0 and train and config.dropout > 0:
            keep = 1.0 - config.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        cache.masks.append(mask)
        cache.inputs.append(h)
        b = params[f"b{l}"]
        if config.arch == "gcn":
            z = graph.propagate(h @ params[f"W{l}"]) + b
            cache.neigh.append(None)
        elif config.arch == "sage":
            agg, _ = graph.mean_aggregator()
            nh = agg @ h
            z = h @ params[f"W_root{l}"] + nh @ params[f"W_neigh{l}"] + b
            cache.neigh.append(nh)
        else:
            z = h @ params[f"W{l}"] + b
            cache.neigh.append(None)
        cache.pre.append(z)
        h = z if l == config.layers - 1 else np.maximum(z, 0.0)
    return h, cache


def backward(
    config: ModelConfig, params: ParameterSet, graph: CsrGraph | None, cache: ForwardCache, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    dz = dlogits
    for l in reversed(range(config.layers)):
        if l < config.layers - 1:
            dz = dz * (cache.pre[l] > 0)
        h = cache.inputs[l]
        grads[f"b{l}"] = dz.sum(axis=0)
        if config.arch == "gcn":
            dhw = graph.propagate(dz)  # Ã is symmetric
            grads[f"W{l}"] = h.T @ dhw
            dh = dhw @ params[f"W{l}"].T if l > 0 else None
        elif config.arch == "sage":
            _, agg_t = graph.mean_aggregator()
            grads[f"W_root{l}"] = h.T @ dz
            grads[f"W_neigh{l}"] = cache.neigh[l].T @ dz
            dh = dz @ params[f"W_root{l}"].T + agg_t @ (dz @ params[f"W_neigh{l}"].T) if l > 0 else None
        else:
            grads[f"W{l}"] = h.T @ dz
            dh = dz @ params[f"W{l}"].T if l > 0 else None
        if dh is not None:
            if cache.masks[l] is not None:
                dh = dh * cache.masks[l]
            dz = dh
    return {k: grads[k] for k in params.names(trainable_only=True) if k in grads}


def loss_and_grads(
    config: ModelConfig,
    params: ParameterSet,
    graph: CsrGraph | None,
    dataset: Dataset,
    mask,
    train: bool = False,
    rng: np.random.Generator | None = None,
    labels: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Masked cross-entropy and gradients for every trainable tensor."""
    _as_mask(mask, dataset.n)
    logits, cache = forward(config, params, graph, dataset.x, train, rng)
    loss, dlogits = masked_cross_entropy(logits, dataset.y if labels is None else labels, mask)
    return loss, backward(config, params, graph, cache, dlogits)


def predict(config: ModelConfig, params: ParameterSet, graph: CsrGraph | None, x: np.ndarray) -> np.ndarray:
    return forward(config, params, graph, x, train=False)[0]


def accuracy(logits: np.ndarray, labels: np.ndarray, mask=None) -> float:
    """Fraction of masked rows whose argmax equals the label; ties go to the lowest class."""
    idx = np.arange(logits.shape[0]) if mask is None else _as_mask(mask, logits.shape[0])
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.01
    epochs: int = 200
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    test_acc: float


def train_full_batch(
    config: ModelConfig, graph: CsrGraph | None, dataset: Dataset, hyper: TrainHyper = TrainHyper()
) -> tuple[ParameterSet, list[EpochRecord]]:
    """Inductive full-batch training: fit on the train-node subgraph, select by full-graph val accuracy.

    ``graph`` may be None for an MLP.
    """
    train_idx = np.flatnonzero(dataset.train_mask)
    if train_idx.size == 0:
        raise InvalidInputError("empty train mask")
    params = init_params(config, dataset.x.shape[1], dataset.num_classes)
    history: list[EpochRecord] = []
    if hyper.epochs <= 0:
        return params, history
    sub = None if graph is None else induced_subgraph(graph, train_idx)[0]
    xs, ys = dataset.x[train_idx], dataset.y[train_idx]
    rng = np.random.default_rng(hyper.seed)
    state = AdamState(lr=hyper.lr)
    best, best_val = params.copy(), -1.0
    has_val = bool(dataset.val_mask.any())
    for epoch in range(1, hyper.epochs + 1):
        logits, cache = forward(config, params, sub, xs, train=True, rng=rng)
        loss, dlogits = masked_cross_entropy(logits, ys)
        if not np.isfinite(loss):
            raise TrainingError("non-finite training loss", epoch)
        adam_step(params, backward(config, params, sub, cache, dlogits), state)
        full = predict(config, params, graph, dataset.x)
        if not np.all(np.isfinite(full)):
            raise TrainingError("non-finite logits", epoch)
        rec = EpochRecord(
            epoch,
            loss,
            accuracy(full, dataset.y, dataset.train_mask),
            accuracy(full, dataset.y, dataset.val_mask) if has_val else float("nan"),
            accuracy(full, dataset.y, dataset.test_mask) if dataset.test_mask.any() else float("nan"),
        )
        history.append(rec)
        score = rec.val_acc if has_val else rec.train_acc
        if score > best_val:
            best_val, best = score, params.copy()
    return best, history


@dataclass
class EgnnModel:
    """Frozen GNN plus its cached logits, with a trainable MLP added on top."""

    gnn_config: ModelConfig
    gnn_params: ParameterSet
    frozen_logits: np.ndarray
    mlp_config: ModelConfig
    mlp_params: ParameterSet
    alpha: float = 0.1

    def __post_init__(self):
        if any(self.gnn_params.trainable.values()):
            raise InvalidInputError("EGNN requires a frozen GNN parameter set")
        if self.frozen_logits.flags.writeable:
            self.frozen_logits = np.array(self.frozen_logits, copy=True)
            self.frozen_logits.setflags(write=False)

    def with_mlp(self, mlp_params: ParameterSet) -> "EgnnModel":
        return EgnnModel(self.gnn_config, self.gnn_params, self.frozen_logits, self.mlp_config, mlp_params, self.alpha)


def stitch(
    gnn_config: ModelConfig,
    gnn_params: ParameterSet,
    graph: CsrGraph,
    x: np.ndarray,
    mlp_config: ModelConfig,
    alpha: float = 0.1,
    zero_output: bool = False,
) -> EgnnModel:
    """Freeze the GNN, cache its full-graph logits once, attach a fresh MLP."""
    frozen = gnn_params.frozen()
    logits = predict(gnn_config, frozen, graph, x)
    mlp = init_params(mlp_config, x.shape[1], logits.shape[1], zero_output=zero_output)
    return EgnnModel(gnn_config, frozen, logits, mlp_config, mlp, alpha)


def egnn_forward(model: EgnnModel, x: np.ndarray, nodes=None) -> np.ndarray:
    """H[nodes] + g(x[nodes]); never touches the graph."""
    n = model.frozen_logits.shape[0]
    if nodes is None:
        idx = np.arange(n)
    else:
        idx = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise InvalidInputError("node outside the frozen logits cache")
    g, _ = forward(model.mlp_config, model.mlp_params, None, x[idx])
    return model.frozen_logits[idx] + g


# ---------------------------------------------------------------- checkpoints

MAGIC = b"EGNN"
VERSION = 1


def _config_block(config: dict[str, str]) -> bytes:
    lines = []
    for k, v in config.items():
        if "=" in k or "\n" in k or "\n" in str(v):
            raise CheckpointError(f"config entry {k!r} cannot be encoded")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def save_tensors(path, tensors: dict[str, np.ndarray], config: dict[str, str]) -> None:
    """Write the binary container: magic, version, config block, tensors (f64 little-endian)."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    block = _config_block(config)
    buf.write(struct.pack("<I", len(block)))
    buf.write(block)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    pos = 0

    def take(k: int) -> bytes:
        nonlocal pos
        if pos + k > len(data):
            raise CheckpointError("checkpoint truncated")
        out = data[pos : pos + k]
        pos += k
        return out

    if take(4) != MAGIC:
        raise CheckpointError("bad magic bytes")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blen,) = struct.unpack("<I", take(4))
    try:
        text = take(blen).decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError("config block is not UTF-8") from None
    config: dict[str, str] = {}
    for line in text.split("\n") if text else []:
        if "=" not in line:
            raise CheckpointError(f"malformed config line {line!r}")
        k, v = line.split("=", 1)
        config[k] = v
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors, config


def _model_config_entries(prefix: str, config: ModelConfig) -> dict[str, str]:
    return {f"{prefix}.{k}": str(v) for k, v in asdict(config).items()}


def _model_config_from(prefix: str, entries: dict[str, str]) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        key = f"{prefix}.{f.name}"
        if key not in entries:
            raise CheckpointError(f"checkpoint missing config key {key}")
        raw = entries[key]
        kwargs[f.name] = raw if f.type in ("str", str) else (float(raw) if f.name == "dropout" else int(raw))
    return ModelConfig(**kwargs)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParameterSet
    meta: dict[str, str] = field(default_factory=dict)
    egnn: EgnnModel | None = None


def save_model(path, config: ModelConfig, params: ParameterSet, meta: dict[str, str] | None = None,
               egnn: EgnnModel | None = None) -> None:
    """Save a GNN (and optionally its stitched EGNN state) with provenance ``meta``."""
    entries = dict(meta or {})
    entries.update(_model_config_entries("model", config))
    entries["model.frozen"] = ",".join(k for k in params if not params.trainable[k])
    tensors = {f"gnn/{k}": v for k, v in params.tensors.items()}
    if egnn is not None:
        entries.update(_model_config_entries("mlp", egnn.mlp_config))
        entries["egnn.alpha"] = repr(egnn.alpha)
        tensors["frozen_logits"] = egnn.frozen_logits
        tensors.update({f"mlp/{k}": v for k, v in egnn.mlp_params.tensors.items()})
    save_tensors(path, tensors, entries)


def load_model(path) -> Checkpoint:
    tensors, entries = load_tensors(path)
    config = _model_config_from("model", entries)
    frozen = set(filter(None, entries.get("model.frozen", "").split(",")))
    params = ParameterSet()
    for k, v in tensors.items():
        if k.startswith("gnn/"):
            params.add(k[4:], v, trainable=k[4:] not in frozen)
    _check_shapes(config, params)
    meta = {k: v for k, v in entries.items() if not k.startswith(("model.", "mlp.", "egnn."))}
    egnn = None
    if "frozen_logits" in tensors:
        mlp_config = _model_config_from("mlp", entries)
        mlp = ParameterSet()
        for k, v in tensors.items():
            if k.startswith("mlp/"):
                mlp.add(k[4:], v)
        egnn = EgnnModel(config, params.frozen(), tensors["frozen_logits"], mlp_config, mlp,
                         float(entries.get("egnn.alpha", "0.1")))
    return Checkpoint(config, params, meta, egnn)


def _check_shapes(config: ModelConfig, params: ParameterSet) -> None:
    try:
        first = params["W_root0" if config.arch == "sage" else "W0"]
        last = params[f"b{config.layers - 1}"]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing tensor {exc}") from None
    ref = init_params(ModelConfig(config.arch, config.layers, config.hidden, 0.0, 0), first.shape[0], last.shape[0])
    if list(ref) != list(params):
        raise CheckpointError("tensor names disagree with the stored config")
    for k in ref:
        if ref[k].shape != params[k].shape:
            raise CheckpointError(f"shape of {k} is {params[k].shape}, config implies {ref[k].shape}")
