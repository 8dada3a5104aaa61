import numpy as np
import pytest

from graphedit.editors import (
    EditConfig,
    egnn_accuracy,
    egnn_edit,
    egnn_prepare,
    enn_prepare,
    gd_edit,
    prepare_editor,
    select_targets,
    sequential_edit_experiment,
    single_edit_experiment,
    strip_timing,
)
from graphedit.errors import InvalidInputError
from graphedit.graph import SbmConfig, generate_sbm
from graphedit.models import ModelConfig, TrainHyper, egnn_forward, predict, train_full_batch


@pytest.fixture(scope="module")
def trained():
    g, d = generate_sbm(SbmConfig(blocks=4, block_size=80, p_in=0.05, p_out=0.01, dim=16, separation=1.0, seed=1))
    cfg = ModelConfig("gcn", 2, 16, 0.1, seed=0)
    params, _ = train_full_batch(cfg, g, d, TrainHyper(0.01, 100, 0))
    return cfg, params, g, d


def _wrong_node(cfg, params, g, d):
    logits = predict(cfg, params, g, d.x)
    margin = logits[np.arange(d.n), np.argmax(logits, 1)] - logits[np.arange(d.n), d.y]
    return int(np.argmax(margin))  # most confidently wrong node


def test_edit_config_validation():
    with pytest.raises(InvalidInputError):
        EditConfig(budget=0)
    with pytest.raises(InvalidInputError):
        EditConfig(lr=0.0)
    with pytest.raises(InvalidInputError):
        EditConfig(alpha=-1.0)


def test_gd_edit_noop_when_correct(trained):
    cfg, params, g, d = trained
    logits = predict(cfg, params, g, d.x)
    node = int(np.flatnonzero(np.argmax(logits, 1) == d.y)[0])
    new, out = gd_edit(cfg, params, g, d, node, int(d.y[node]), EditConfig())
    assert out.success and out.steps == 0 and out.drawdown == 0.0
    assert all(new[k].tobytes() == params[k].tobytes() for k in params)


def test_gd_edit_tiny_budget_fails(trained):
    cfg, params, g, d = trained
    node = _wrong_node(cfg, params, g, d)
    new, out = gd_edit(cfg, params, g, d, node, int(d.y[node]), EditConfig(lr=1e-9, budget=1))
    assert not out.success and out.steps == 1
    # one Adam step moves every entry by at most ~lr
    delta = max(float(np.max(np.abs(new[k] - params[k]))) for k in params)
    assert delta <= 1e-9 * (1 + 1e-6)


def test_gd_edit_success_is_consistent(trained):
    cfg, params, g, d = trained
    node = _wrong_node(cfg, params, g, d)
    new, out = gd_edit(cfg, params, g, d, node, int(d.y[node]), EditConfig(budget=10_000))
    assert out.success and 0 < out.steps <= 10_000
    assert int(np.argmax(predict(cfg, new, g, d.x)[node])) == d.y[node]
    assert out.drawdown == pytest.approx(out.acc_before - out.acc_after)


def test_enn_prepare_zero_steps_and_determinism(trained):
    cfg, params, g, d = trained
    same = enn_prepare(cfg, params, g, d, EditConfig(prepare_steps=0))
    assert all(same[k].tobytes() == params[k].tobytes() for k in params)
    a = enn_prepare(cfg, params, g, d, EditConfig(prepare_steps=5, seed=3))
    b = enn_prepare(cfg, params, g, d, EditConfig(prepare_steps=5, seed=3))
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != params[k].tobytes() for k in a)


def test_egnn_zero_init_zero_steps_is_exact(trained):
    cfg, params, g, d = trained
    model = egnn_prepare(cfg, params, g, d, EditConfig(prepare_steps=0, zero_init_output=True))
    assert egnn_forward(model, d.x).tobytes() == predict(cfg, params, g, d.x).tobytes()


def test_egnn_large_alpha_keeps_predictions(trained):
    cfg, params, g, d = trained
    model = egnn_prepare(cfg, params, g, d, EditConfig(alpha=1e6))
    frozen = np.argmax(predict(cfg, params, g, d.x), 1)
    composed = np.argmax(egnn_forward(model, d.x), 1)
    assert np.mean(frozen == composed) >= 0.99


def test_egnn_prepare_keeps_accuracy(trained):
    cfg, params, g, d = trained
    model = egnn_prepare(cfg, params, g, d, EditConfig())
    base = float(np.mean(np.argmax(predict(cfg, params, g, d.x), 1)[d.test_mask] == d.y[d.test_mask]))
    assert abs(egnn_accuracy(model, d, d.test_mask) - base) <= 0.02


def test_egnn_edit_touches_only_the_mlp(trained):
    cfg, params, g, d = trained
    model = egnn_prepare(cfg, params, g, d, EditConfig())
    gnn_before = {k: model.gnn_params[k].tobytes() for k in model.gnn_params}
    logits_before = model.frozen_logits.tobytes()
    node = _wrong_node(cfg, params, g, d)
    edited, out = egnn_edit(model, d, node, int(d.y[node]), EditConfig(budget=1000))
    assert out.success
    assert int(np.argmax(egnn_forward(edited, d.x, [node])[0])) == d.y[node]
    for m in (model, edited):
        assert {k: m.gnn_params[k].tobytes() for k in m.gnn_params} == gnn_before
        assert m.frozen_logits.tobytes() == logits_before
    # the original model's MLP is not mutated either
    assert any(edited.mlp_params[k].tobytes() != model.mlp_params[k].tobytes() for k in model.mlp_params)


def test_egnn_edit_noop_when_correct(trained):
    cfg, params, g, d = trained
    model = egnn_prepare(cfg, params, g, d, EditConfig())
    composed = np.argmax(egnn_forward(model, d.x), 1)
    node = int(np.flatnonzero(composed == d.y)[0])
    _, out = egnn_edit(model, d, node, int(d.y[node]), EditConfig())
    assert out.success and out.steps == 0 and out.drawdown == 0.0


def test_select_targets_are_misclassified_val_nodes(trained):
    cfg, params, g, d = trained
    t = select_targets(cfg, params, g, d, 10, seed=2)
    pred = np.argmax(predict(cfg, params, g, d.x), 1)
    assert len(t) > 0 and len(set(t.tolist())) == len(t)
    assert np.all(d.val_mask[t]) and np.all(pred[t] != d.y[t])
    np.testing.assert_array_equal(t, select_targets(cfg, params, g, d, 10, seed=2))


def test_single_experiment_empty_and_report_fields(trained):
    cfg, params, g, d = trained
    rep = single_edit_experiment("gd", cfg, params, g, d, 0, EditConfig())
    assert rep.n_edits == 0 and rep.sr is None and rep.skipped
    rep = single_edit_experiment("gd", cfg, params, g, d, 8, EditConfig())
    assert rep.n_edits == len(rep.outcomes) == 8
    assert rep.sr == pytest.approx(np.mean([o.success for o in rep.outcomes]))
    assert 0.0 <= rep.sr <= 1.0
    assert rep.mean_dd == pytest.approx(np.mean([o.drawdown for o in rep.outcomes]))
    assert rep.mean_abs_dd >= abs(rep.mean_dd) - 1e-15
    for o in rep.outcomes:
        assert o.steps <= 100
        assert o.acc_before == rep.reference_acc


@pytest.mark.parametrize("editor", ["gd", "enn", "egnn"])
def test_single_experiment_deterministic_and_thread_safe(editor, trained):
    cfg, params, g, d = trained
    edit = EditConfig(prepare_steps=20)
    a = single_edit_experiment(editor, cfg, params, g, d, 6, edit)
    b = single_edit_experiment(editor, cfg, params, g, d, 6, edit, threads=3)
    assert strip_timing(a.to_dict()) == strip_timing(b.to_dict())


def test_unknown_editor(trained):
    cfg, params, g, d = trained
    with pytest.raises(InvalidInputError):
        prepare_editor("mend", cfg, params, g, d, EditConfig())


def test_sequential_single_step_equals_single_edit(trained):
    cfg, params, g, d = trained
    targets = select_targets(cfg, params, g, d, 1, seed=0)
    rep = single_edit_experiment("gd", cfg, params, g, d, 1, EditConfig(), targets=targets)
    tr = sequential_edit_experiment("gd", cfg, params, g, d, 1, EditConfig(), targets=targets)
    assert tr.nodes == [rep.outcomes[0].node]
    assert tr.acc == [rep.outcomes[0].acc_after]
    assert tr.drawdown == [rep.outcomes[0].drawdown]


def test_sequential_egnn_keeps_gnn_frozen(trained):
    cfg, params, g, d = trained
    prep = prepare_editor("egnn", cfg, params, g, d, EditConfig())
    before = {k: prep.egnn.gnn_params[k].tobytes() for k in prep.egnn.gnn_params}
    tr = sequential_edit_experiment("egnn", cfg, params, g, d, 10, EditConfig(), prepared=prep)
    assert len(tr.nodes) == 10
    assert {k: prep.egnn.gnn_params[k].tobytes() for k in prep.egnn.gnn_params} == before
    assert all(params[k].flags.writeable for k in params)  # caller's tensors untouched and unfrozen


@pytest.mark.parametrize("editor", ["gd", "enn", "egnn"])
def test_large_budget_always_succeeds(editor, trained):
    cfg, params, g, d = trained
    rep = single_edit_experiment(editor, cfg, params, g, d, 10, EditConfig(budget=10_000, prepare_steps=20))
    assert rep.sr == 1.0


def test_enn_prepares_a_graph_free_mlp(trained):
    _, _, _, d = trained
    cfg = ModelConfig("mlp", 2, 8, 0.0, seed=0)
    params, _ = train_full_batch(cfg, None, d, TrainHyper(0.01, 5, 0))
    out = enn_prepare(cfg, params, None, d, EditConfig(prepare_steps=2))
    assert set(out.names()) == set(params.names())
