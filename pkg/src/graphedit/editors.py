"""Model editors (GD, simplified ENN, EGNN) and the single/sequential edit drivers.

Accuracies and drawdowns are fractions in [0, 1]; multiply by 100 for points.
Keys ending in ``_ms`` hold wall-clock timings and are the only non-deterministic
fields of a report.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EditError, InvalidInputError
from .graph import CsrGraph, Dataset, induced_subgraph
from .linalg import AdamState, ParameterSet, adam_step, kl_logits_grad, log_softmax_rows, masked_cross_entropy
from .models import (
    EgnnModel,
    ModelConfig,
    accuracy,
    backward,
    egnn_forward,
    forward,
    predict,
    stitch,
)

log = logging.getLogger(__name__)

EDITORS = ("gd", "enn", "egnn")


@dataclass(frozen=True)
class EditConfig:
    lr: float = 0.01
    budget: int = 100
    alpha: float = 0.1
    prepare_steps: int = 100
    prepare_batch: int = 0  # 0: every train node each step
    prepare_lr: float = 1e-3
    mlp_layers: int = 2
    mlp_hidden: int = 32
    zero_init_output: bool = True  # EGNN starts exactly at the frozen GNN
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise InvalidInputError("edit budget must be >= 1")
        if self.lr <= 0 or self.prepare_lr <= 0:
            raise InvalidInputError("learning rates must be positive")
        if self.alpha < 0:
            raise InvalidInputError("alpha must be non-negative")
        if self.prepare_steps < 0 or self.prepare_batch < 0:
            raise InvalidInputError("prepare_steps and prepare_batch must be non-negative")

    def mlp_config(self) -> ModelConfig:
        return ModelConfig("mlp", self.mlp_layers, self.mlp_hidden, 0.0, self.seed)


@dataclass
class EditOutcome:
    node: int
    label: int
    success: bool
    steps: int
    wall_ms: float
    acc_start: float  # test accuracy of the model the edit started from
    acc_before: float  # reference accuracy the drawdown is measured against
    acc_after: float
    drawdown: float  # acc_before - acc_after, signed


def _row_ce_grad(logits_row: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    loss, g = masked_cross_entropy(logits_row[None, :], np.array([label]))
    return loss, g[0]


def gd_edit(
    config: ModelConfig,
    params: ParameterSet,
    graph: CsrGraph,
    dataset: Dataset,
    node: int,
    label: int,
    edit: EditConfig,
    reference_acc: float | None = None,
) -> tuple[ParameterSet, EditOutcome]:
    """Adam on every trainable GNN tensor until the node is predicted as ``label``."""
    work = params.copy()
    state = AdamState(lr=edit.lr)
    test = dataset.test_mask
    steps = 0
    t0 = time.perf_counter()
    logits, cache = forward(config, work, graph, dataset.x)
    start_logits = logits
    while int(np.argmax(logits[node])) != label and steps < edit.budget:
        loss, grow = _row_ce_grad(logits[node], label)
        if not np.isfinite(loss):
            raise EditError(f"non-finite edit loss at step {steps} on node {node}")
        dlogits = np.zeros_like(logits)
        dlogits[node] = grow
        adam_step(work, backward(config, work, graph, cache, dlogits), state)
        steps += 1
        logits, cache = forward(config, work, graph, dataset.x)
        if not np.all(np.isfinite(logits[node])):
            raise EditError(f"non-finite logits after step {steps} on node {node}")
    wall = (time.perf_counter() - t0) * 1e3
    start = accuracy(start_logits, dataset.y, test)
    before = start if reference_acc is None else reference_acc
    after = accuracy(logits, dataset.y, test)
    success = int(np.argmax(logits[node])) == label
    return work, EditOutcome(int(node), int(label), success, steps, wall, start, before, after, before - after)


def enn_prepare(
    config: ModelConfig, params: ParameterSet, graph: CsrGraph, dataset: Dataset, edit: EditConfig
) -> ParameterSet:
    """First-order editability training.

    Each outer step samples a train node, simulates the first Adam step an editor
    would take toward its label, and descends train cross-entropy plus the
    sampled node's cross-entropy after that simulated step.
    """
    work = params.copy()
    if edit.prepare_steps == 0:
        return work
    train_idx = np.flatnonzero(dataset.train_mask)
    sub = None if graph is None else induced_subgraph(graph, train_idx)[0]
    xs, ys = dataset.x[train_idx], dataset.y[train_idx]
    rng = np.random.default_rng(edit.seed)
    state = AdamState(lr=edit.prepare_lr)
    for step in range(edit.prepare_steps):
        i = int(rng.integers(train_idx.size))
        logits, cache = forward(config, work, sub, xs)
        loss, dl = masked_cross_entropy(logits, ys)
        if not np.isfinite(loss):
            raise EditError(f"ENN preparation diverged at step {step}")
        outer = backward(config, work, sub, cache, dl)
        _, gi_row = _row_ce_grad(logits[i], int(ys[i]))
        dli = np.zeros_like(logits)
        dli[i] = gi_row
        gi = backward(config, work, sub, cache, dli)
        inner = work.copy()
        # a fresh Adam state's first step is lr * g / (|g| + eps)
        for k, g in gi.items():
            inner.tensors[k] -= edit.lr * g / (np.abs(g) + 1e-8)
        logits_in, cache_in = forward(config, inner, sub, xs)
        _, gi2_row = _row_ce_grad(logits_in[i], int(ys[i]))
        dli2 = np.zeros_like(logits_in)
        dli2[i] = gi2_row
        post = backward(config, inner, sub, cache_in, dli2)
        adam_step(work, {k: outer[k] + post[k] for k in outer}, state)
    return work


def egnn_prepare(
    gnn_config: ModelConfig, gnn_params: ParameterSet, graph: CsrGraph, dataset: Dataset, edit: EditConfig
) -> EgnnModel:
    """Stitch an MLP onto the frozen GNN and fit it with task loss + alpha * KL locality."""
    model = stitch(gnn_config, gnn_params, graph, dataset.x, edit.mlp_config(), edit.alpha, edit.zero_init_output)
    mlp = model.mlp_params
    train_idx = np.flatnonzero(dataset.train_mask)
    ref_logp = log_softmax_rows(model.frozen_logits)
    rng = np.random.default_rng(edit.seed)
    state = AdamState(lr=edit.prepare_lr)
    for step in range(edit.prepare_steps):
        if edit.prepare_batch and edit.prepare_batch < train_idx.size:
            batch = np.sort(rng.choice(train_idx, size=edit.prepare_batch, replace=False))
        else:
            batch = train_idx
        g, cache = forward(model.mlp_config, mlp, None, dataset.x[batch])
        z = model.frozen_logits[batch] + g
        task, dz = masked_cross_entropy(z, dataset.y[batch])
        kl, dkl = kl_logits_grad(z, ref_logp[batch])
        if not np.isfinite(task + kl.mean()):
            raise EditError(f"EGNN preparation diverged at step {step}")
        dz = dz + edit.alpha * dkl / batch.size
        adam_step(mlp, backward(model.mlp_config, mlp, None, cache, dz), state)
    return model


def egnn_accuracy(model: EgnnModel, dataset: Dataset, mask) -> float:
    idx = np.flatnonzero(mask)
    return accuracy(egnn_forward(model, dataset.x, idx), dataset.y[idx])


def egnn_edit(
    model: EgnnModel,
    dataset: Dataset,
    node: int,
    label: int,
    edit: EditConfig,
    reference_acc: float | None = None,
) -> tuple[EgnnModel, EditOutcome]:
    """Adam on the stitched MLP only, using the node's features and cached GNN logits."""
    mlp = model.mlp_params.copy()
    state = AdamState(lr=edit.lr)
    x_e = dataset.x[node : node + 1]
    h_e = model.frozen_logits[node]
    steps = 0
    t0 = time.perf_counter()
    g, cache = forward(model.mlp_config, mlp, None, x_e)
    z = h_e + g[0]
    while int(np.argmax(z)) != label and steps < edit.budget:
        loss, grow = _row_ce_grad(z, label)
        if not np.isfinite(loss):
            raise EditError(f"non-finite edit loss at step {steps} on node {node}")
        adam_step(mlp, backward(model.mlp_config, mlp, None, cache, grow[None, :]), state)
        steps += 1
        g, cache = forward(model.mlp_config, mlp, None, x_e)
        z = h_e + g[0]
    wall = (time.perf_counter() - t0) * 1e3
    edited = model.with_mlp(mlp)
    start = egnn_accuracy(model, dataset, dataset.test_mask)
    before = start if reference_acc is None else reference_acc
    after = egnn_accuracy(edited, dataset, dataset.test_mask)
    success = int(np.argmax(z)) == label
    return edited, EditOutcome(int(node), int(label), success, steps, wall, start, before, after, before - after)


# ------------------------------------------------------------------ drivers


@dataclass
class EditReport:
    editor: str
    dataset: str
    seed: int
    n_edits: int
    sr: float | None
    mean_dd: float | None
    std_dd: float | None
    mean_abs_dd: float | None
    mean_acc_before: float | None
    mean_acc_after: float | None
    std_acc_after: float | None
    mean_edit_ms: float | None
    reference_acc: float
    prepared_acc: float
    prepare_ms: float
    skipped: bool = False
    outcomes: list[EditOutcome] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def strip_timing(obj):
    """Drop every ``*_ms`` key recursively (for determinism comparisons)."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if not k.endswith("_ms")}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


@dataclass
class PreparedEditor:
    editor: str
    config: ModelConfig
    params: ParameterSet
    egnn: EgnnModel | None
    reference_acc: float
    prepared_acc: float
    prepare_ms: float


def prepare_editor(
    editor: str,
    config: ModelConfig,
    params: ParameterSet,
    graph: CsrGraph,
    dataset: Dataset,
    edit: EditConfig,
    egnn: EgnnModel | None = None,
) -> PreparedEditor:
    """Run the editor-specific preparation once. ``egnn`` reuses an already stitched model."""
    if editor not in EDITORS:
        raise InvalidInputError(f"unknown editor {editor!r}")
    reference = accuracy(predict(config, params, graph, dataset.x), dataset.y, dataset.test_mask)
    t0 = time.perf_counter()
    if editor == "gd":
        prepared, model, acc = params, None, reference
    elif editor == "enn":
        prepared = enn_prepare(config, params, graph, dataset, edit)
        model = None
        acc = accuracy(predict(config, prepared, graph, dataset.x), dataset.y, dataset.test_mask)
    else:
        model = egnn if egnn is not None else egnn_prepare(config, params, graph, dataset, edit)
        prepared = params
        acc = egnn_accuracy(model, dataset, dataset.test_mask)
    return PreparedEditor(editor, config, prepared, model, reference, acc, (time.perf_counter() - t0) * 1e3)


def select_targets(
    config: ModelConfig, params: ParameterSet, graph: CsrGraph, dataset: Dataset, n_edits: int, seed: int
) -> np.ndarray:
    """Seeded sample of validation nodes the trained GNN misclassifies."""
    logits = predict(config, params, graph, dataset.x)
    wrong = np.flatnonzero(dataset.val_mask & (np.argmax(logits, axis=1) != dataset.y))
    if wrong.size == 0 or n_edits <= 0:
        return np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return rng.choice(wrong, size=min(n_edits, wrong.size), replace=False).astype(np.int64)


def _apply(prep: PreparedEditor, graph, dataset, node, label, edit, state=None):
    if prep.editor == "egnn":
        return egnn_edit(state if state is not None else prep.egnn, dataset, node, label, edit, prep.reference_acc)
    return gd_edit(prep.config, state if state is not None else prep.params, graph, dataset, node, label, edit,
                   prep.reference_acc)


def _summary(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    a = np.asarray(values)
    return float(a.mean()), float(a.std())


def single_edit_experiment(
    editor: str,
    config: ModelConfig,
    params: ParameterSet,
    graph: CsrGraph,
    dataset: Dataset,
    n_edits: int,
    edit: EditConfig,
    dataset_name: str = "",
    threads: int = 1,
    prepared: PreparedEditor | None = None,
    targets: np.ndarray | None = None,
) -> EditReport:
    """Independent edits of misclassified validation nodes, each from a fresh model copy."""
    prep = prepared or prepare_editor(editor, config, params, graph, dataset, edit)
    if targets is None:
        targets = select_targets(config, params, graph, dataset, n_edits, edit.seed)
    report = EditReport(
        editor, dataset_name, edit.seed, int(len(targets)), None, None, None, None, None, None, None, None,
        prep.reference_acc, prep.prepared_acc, prep.prepare_ms, skipped=len(targets) == 0,
        config={**asdict(config), **{f"edit_{k}": v for k, v in asdict(edit).items()}},
    )
    if len(targets) == 0:
        if n_edits > 0:
            log.warning("no misclassified validation nodes; experiment skipped")
        return report

    def run(node):
        return _apply(prep, graph, dataset, int(node), int(dataset.y[node]), edit)[1]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, targets))
    else:
        outcomes = [run(t) for t in targets]
    report.outcomes = outcomes
    report.sr = float(np.mean([o.success for o in outcomes]))
    report.mean_dd, report.std_dd = _summary([o.drawdown for o in outcomes])
    report.mean_abs_dd = float(np.mean([abs(o.drawdown) for o in outcomes]))
    report.mean_acc_before = float(np.mean([o.acc_before for o in outcomes]))
    report.mean_acc_after, report.std_acc_after = _summary([o.acc_after for o in outcomes])
    report.mean_edit_ms = float(np.mean([o.wall_ms for o in outcomes]))
    return report


@dataclass
class SequentialTrace:
    editor: str
    seed: int
    reference_acc: float
    prepared_acc: float
    nodes: list[int] = field(default_factory=list)
    success: list[bool] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    acc: list[float] = field(default_factory=list)
    drawdown: list[float] = field(default_factory=list)
    step_ms: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def sequential_edit_experiment(
    editor: str,
    config: ModelConfig,
    params: ParameterSet,
    graph: CsrGraph,
    dataset: Dataset,
    n_edits: int,
    edit: EditConfig,
    prepared: PreparedEditor | None = None,
    targets: np.ndarray | None = None,
) -> SequentialTrace:
    """Edits applied cumulatively to one evolving model; test accuracy recorded after each."""
    prep = prepared or prepare_editor(editor, config, params, graph, dataset, edit)
    if targets is None:
        targets = select_targets(config, params, graph, dataset, n_edits, edit.seed)
    trace = SequentialTrace(
        editor, edit.seed, prep.reference_acc, prep.prepared_acc,
        config={**asdict(config), **{f"edit_{k}": v for k, v in asdict(edit).items()}},
    )
    state = prep.egnn if editor == "egnn" else prep.params
    for node in targets:
        state, out = _apply(prep, graph, dataset, int(node), int(dataset.y[node]), edit, state)
        trace.nodes.append(int(node))
        trace.success.append(out.success)
        trace.steps.append(out.steps)
        trace.acc.append(out.acc_after)
        trace.drawdown.append(prep.reference_acc - out.acc_after)
        trace.step_ms.append(out.wall_ms)
    return trace
