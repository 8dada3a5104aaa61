import csv
import math

import numpy as np
import pytest

from graphedit.editors import EditConfig
from graphedit.errors import InvalidInputError
from graphedit.eval import (
    generalization_experiment,
    landscape_scan,
    layer_normalized_direction,
    model_logits_fn,
    write_landscape_csv,
)
from graphedit.graph import SbmConfig, generate_sbm
from graphedit.linalg import ParameterSet
from graphedit.models import ModelConfig, TrainHyper, init_params, train_full_batch


@pytest.fixture(scope="module")
def trained_small():
    g, d = generate_sbm(SbmConfig(blocks=2, block_size=32, p_in=0.2, p_out=0.03, dim=6, separation=1.5, seed=7))
    cfg = ModelConfig("gcn", 2, 8, 0.0, seed=0)
    params, _ = train_full_batch(cfg, g, d, TrainHyper(0.01, 30, 0))
    return cfg, params, g, d


# ---------------------------------------------------------------- landscape


def test_direction_is_layer_normalized(trained_small):
    _, params, _, _ = trained_small
    d = layer_normalized_direction(params, np.random.default_rng(0))
    for name in params.names(trainable_only=True):
        assert np.linalg.norm(d[name]) == pytest.approx(np.linalg.norm(params[name]), rel=1e-12)


def test_center_cell_is_zero_and_values_nonnegative(trained_small):
    cfg, params, g, d = trained_small
    grids = landscape_scan(model_logits_fn(cfg, g, d.x), params, d.train_mask, radius=0.5, resolution=5, n_pairs=2)
    assert len(grids) == 2
    for grid in grids:
        assert grid.values.shape == (5, 5)
        assert grid.center <= 1e-12
        assert np.all(grid.values >= 0.0)
        assert grid.values.max() > 0.0


def test_radius_zero_gives_zero_grid(trained_small):
    cfg, params, g, d = trained_small
    (grid,) = landscape_scan(model_logits_fn(cfg, g, d.x), params, None, radius=0.0, resolution=3)
    assert np.all(grid.values == 0.0)


def test_negated_directions_reflect_the_grid(trained_small):
    cfg, params, g, d = trained_small
    fn = model_logits_fn(cfg, g, d.x)
    (grid,) = landscape_scan(fn, params, d.train_mask, radius=0.3, resolution=5, seed=4)
    neg = ({k: -v for k, v in grid.d1.items()}, {k: -v for k, v in grid.d2.items()})
    (flip,) = landscape_scan(fn, params, d.train_mask, radius=0.3, resolution=5, directions=[neg])
    np.testing.assert_allclose(flip.values, grid.values[::-1, ::-1], rtol=1e-10, atol=1e-15)


def test_scan_is_thread_count_invariant(trained_small):
    cfg, params, g, d = trained_small
    fn = model_logits_fn(cfg, g, d.x)
    a = landscape_scan(fn, params, d.train_mask, radius=0.2, resolution=5, n_pairs=2, seed=1)
    b = landscape_scan(fn, params, d.train_mask, radius=0.2, resolution=5, n_pairs=2, seed=1, threads=4)
    for ga, gb in zip(a, b):
        assert ga.values.tobytes() == gb.values.tobytes()


def test_resolution_and_radius_validation(trained_small):
    cfg, params, g, d = trained_small
    fn = model_logits_fn(cfg, g, d.x)
    for res in (2, 4, 1):
        with pytest.raises(InvalidInputError):
            landscape_scan(fn, params, None, resolution=res)
    with pytest.raises(InvalidInputError):
        landscape_scan(fn, params, None, radius=-0.1, resolution=3)


def test_nonfinite_logits_record_infinity():
    ps = ParameterSet()
    ps.add("w", np.array([1.0, 2.0]))

    def fn(p):
        # blows up away from the reference point
        scale = np.inf if abs(p["w"][0] - 1.0) > 1e-9 else 1.0
        return np.array([[p["w"][0], p["w"][1]]]) * scale

    (grid,) = landscape_scan(fn, ps, None, radius=1.0, resolution=3, seed=0)
    assert grid.center == 0.0
    assert np.isinf(grid.values[0, 0]) and np.isinf(grid.values[2, 2])
    assert grid.mean() == math.inf


def test_landscape_csv_format(trained_small, tmp_path):
    cfg, params, g, d = trained_small
    (grid,) = landscape_scan(model_logits_fn(cfg, g, d.x), params, d.train_mask, radius=0.1, resolution=3)
    path = tmp_path / "grid.csv"
    write_landscape_csv(grid, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["a", "b", "kl"]
    assert len(rows) == 1 + 9
    vals = np.array([[float(v) for v in r] for r in rows[1:]])
    np.testing.assert_array_equal(vals[:, 2], grid.values.ravel())  # 17 digits round-trip exactly
    assert vals[0, 0] == -0.1 and vals[-1, 1] == 0.1


# ---------------------------------------------------------------- generalization


@pytest.fixture(scope="module")
def four_class():
    return generate_sbm(SbmConfig(blocks=4, block_size=60, p_in=0.06, p_out=0.01, dim=12, separation=1.0, seed=3))


def test_flip_fraction_zero_is_a_noop(four_class):
    g, d = four_class
    rep = generalization_experiment(ModelConfig("gcn", 2, 8, 0.0, seed=0), g, d, 0, 0.0, "gd", 10,
                                    TrainHyper(0.01, 20, 0))
    assert rep.n_edits == 0 and rep.records == []
    assert rep.sub_acc_before == rep.sub_acc_after
    assert rep.overall_acc_before == rep.overall_acc_after


@pytest.mark.parametrize("editor", ["gd", "egnn"])
def test_generalization_means_are_rederivable(editor, four_class):
    g, d = four_class
    rep = generalization_experiment(ModelConfig("gcn", 2, 8, 0.0, seed=0), g, d, 1, 0.2, editor, 5,
                                    TrainHyper(0.01, 40, 0), EditConfig(prepare_steps=20), seed=2)
    assert 0 < rep.n_edits == len(rep.records) <= 5
    assert rep.sub_acc_after == pytest.approx(np.mean([r.sub_acc_after for r in rep.records]), abs=1e-15)
    assert rep.overall_acc_after == pytest.approx(np.mean([r.overall_acc_after for r in rep.records]), abs=1e-15)
    for r in rep.records:
        assert r.original == 1 and r.flipped_to != 1 and d.train_mask[r.node]
        for v in (r.sub_acc_before, r.sub_acc_after, r.overall_acc_before, r.overall_acc_after):
            assert 0.0 <= v <= 1.0
    out = rep.to_dict()
    for key in ("group_class", "flip_fraction", "n_edits", "sub_acc_before", "sub_acc_after", "overall_acc_before",
                "overall_acc_after", "records"):
        assert key in out


def test_generalization_requires_train_nodes_in_group(four_class):
    g, d = four_class
    from dataclasses import replace

    d2 = replace(d, train_mask=d.train_mask & (d.y != 2))
    with pytest.raises(InvalidInputError):
        generalization_experiment(ModelConfig("gcn", 1, 8, 0.0), g, d2, 2, 0.1)


def test_init_params_direction_has_all_tensors():
    cfg = ModelConfig("mlp", 2, 4, 0.0, seed=0)
    params = init_params(cfg, 3, 2)
    d = layer_normalized_direction(params, np.random.default_rng(1))
    assert set(d) == set(params.names(trainable_only=True))
