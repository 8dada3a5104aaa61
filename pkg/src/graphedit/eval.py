"""Label-flip generalisation experiment and the KL-locality landscape scanner."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .editors import EditConfig, _apply, prepare_editor
from .errors import InvalidInputError
from .graph import CsrGraph, Dataset, flip_labels
from .linalg import ParameterSet, _as_mask, mean_kl, softmax_rows
from .models import ModelConfig, TrainHyper, accuracy, egnn_forward, predict, train_full_batch

__all__ = [
    "accuracy",
    "GeneralizationRecord",
    "GeneralizationReport",
    "generalization_experiment",
    "LandscapeGrid",
    "landscape_scan",
    "write_landscape_csv",
]


@dataclass
class GeneralizationRecord:
    node: int
    flipped_to: int
    original: int
    success: bool
    steps: int
    sub_acc_before: float
    sub_acc_after: float
    overall_acc_before: float
    overall_acc_after: float


@dataclass
class GeneralizationReport:
    group_class: int
    flip_fraction: float
    editor: str
    n_edits: int
    sub_acc_before: float
    sub_acc_after: float
    overall_acc_before: float
    overall_acc_after: float
    records: list[GeneralizationRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def generalization_experiment(
    model_config: ModelConfig,
    graph: CsrGraph,
    dataset: Dataset,
    group_class: int,
    flip_fraction: float = 0.1,
    editor: str = "egnn",
    n_edits: int = 50,
    hyper: TrainHyper = TrainHyper(),
    edit: EditConfig = EditConfig(),
    seed: int = 0,
) -> GeneralizationReport:
    """Corrupt one class's train labels, retrain, then edit each flipped node back independently.

    Test labels are never corrupted; the subgroup is the test nodes of ``group_class``.
    """
    if not np.any(dataset.train_mask & (dataset.y == group_class)):
        raise InvalidInputError(f"class {group_class} has no train nodes")
    corrupted, flipped = flip_labels(dataset, group_class, flip_fraction, seed)
    params, _ = train_full_batch(model_config, graph, corrupted, hyper)
    sub_mask = dataset.test_mask & (dataset.y == group_class)
    prep = prepare_editor(editor, model_config, params, graph, corrupted, edit)

    def logits_of(state) -> np.ndarray:
        if editor == "egnn":
            return egnn_forward(state, dataset.x)
        return predict(model_config, state, graph, dataset.x)

    start = logits_of(prep.egnn if editor == "egnn" else prep.params)
    sub_before = accuracy(start, dataset.y, sub_mask) if sub_mask.any() else float("nan")
    all_before = accuracy(start, dataset.y, dataset.test_mask)
    report = GeneralizationReport(
        group_class, flip_fraction, editor, 0, sub_before, sub_before, all_before, all_before,
        config={**asdict(model_config), **{f"edit_{k}": v for k, v in asdict(edit).items()},
                "epochs": hyper.epochs, "lr": hyper.lr, "seed": seed},
    )
    for node in flipped[: max(n_edits, 0)]:
        original = int(dataset.y[node])
        state, out = _apply(prep, graph, corrupted, int(node), original, edit)
        after = logits_of(state)
        report.records.append(
            GeneralizationRecord(
                int(node), int(corrupted.y[node]), original, out.success, out.steps,
                sub_before, accuracy(after, dataset.y, sub_mask) if sub_mask.any() else float("nan"),
                all_before, accuracy(after, dataset.y, dataset.test_mask),
            )
        )
    if report.records:
        report.n_edits = len(report.records)
        report.sub_acc_after = float(np.mean([r.sub_acc_after for r in report.records]))
        report.overall_acc_after = float(np.mean([r.overall_acc_after for r in report.records]))
    return report


@dataclass
class LandscapeGrid:
    radius: float
    resolution: int
    pair: int
    coords: np.ndarray
    values: np.ndarray  # values[i, j] at a = coords[i], b = coords[j]
    d1: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    d2: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def center(self) -> float:
        c = self.resolution // 2
        return float(self.values[c, c])

    def mean(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(finite.mean()) if finite.size == self.values.size else float("inf")


def layer_normalized_direction(params: ParameterSet, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Gaussian direction with each tensor rescaled to the Frobenius norm of its parameter."""
    out = {}
    for name in params.names(trainable_only=True):
        ref = params[name]
        d = rng.standard_normal(ref.shape)
        nd = np.linalg.norm(d)
        out[name] = d * (np.linalg.norm(ref) / nd) if nd > 0 else d
    return out


def landscape_scan(
    logits_fn: Callable[[ParameterSet], np.ndarray],
    params: ParameterSet,
    mask,
    radius: float = 0.1,
    resolution: int = 25,
    n_pairs: int = 1,
    seed: int = 0,
    threads: int = 1,
    directions: list[tuple[dict, dict]] | None = None,
) -> list[LandscapeGrid]:
    """Mean KL between softmax outputs at theta* + a d1 + b d2 and at theta*, over a square grid.

    ``mask=None`` averages over every node.
    """
    if resolution < 3 or resolution % 2 == 0:
        raise InvalidInputError("resolution must be an odd integer >= 3")
    if radius < 0:
        raise InvalidInputError("radius must be non-negative")
    ref_logits = logits_fn(params)
    n = ref_logits.shape[0]
    idx = np.arange(n) if mask is None else _as_mask(mask, n)
    q = softmax_rows(ref_logits)
    c = resolution // 2
    coords = radius * (np.arange(resolution) - c) / c
    rng = np.random.default_rng(seed)
    if directions is None:
        directions = []
        for _ in range(n_pairs):
            d1 = layer_normalized_direction(params, rng)
            d2 = layer_normalized_direction(params, rng)
            directions.append((d1, d2))
    grids = []
    for k, (d1, d2) in enumerate(directions):

        def cell(ij, d1=d1, d2=d2):
            i, j = ij
            a, b = coords[i], coords[j]
            probe = params.copy()
            for name in d1:
                probe.tensors[name] = params[name] + a * d1[name] + b * d2[name]
            with np.errstate(all="ignore"):
                logits = logits_fn(probe)
            if not np.all(np.isfinite(logits[idx])):
                return np.inf
            return mean_kl(softmax_rows(logits[idx]), q[idx])

        cells = [(i, j) for i in range(resolution) for j in range(resolution)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                flat = list(pool.map(cell, cells))
        else:
            flat = [cell(ij) for ij in cells]
        grids.append(LandscapeGrid(radius, resolution, k, coords, np.asarray(flat).reshape(resolution, resolution),
                                   d1, d2))
    return grids


def write_landscape_csv(grid: LandscapeGrid, path) -> None:
    lines = ["a,b,kl"]
    for i, a in enumerate(grid.coords):
        for j, b in enumerate(grid.coords):
            lines.append(f"{a:.17g},{b:.17g},{grid.values[i, j]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def model_logits_fn(config: ModelConfig, graph: CsrGraph | None, x: np.ndarray) -> Callable[[ParameterSet], np.ndarray]:
    return lambda p: predict(config, p, graph, x)
