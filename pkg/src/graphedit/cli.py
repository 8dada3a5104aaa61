"""Command-line entry point: ``graphedit <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every artifact embeds the resolved run configuration, including the seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, merge
from .editors import prepare_editor, sequential_edit_experiment, single_edit_experiment
from .errors import GraphEditError
from .eval import generalization_experiment, landscape_scan, model_logits_fn, write_landscape_csv
from .graph import generate_sbm, load_dataset
from .models import accuracy, forward, load_model, predict, save_model, train_full_batch
from .theory import binomial_band, locality_compare, oversmoothing_check, taylor_convergence

log = logging.getLogger("graphedit")

SUBCOMMANDS = ("train", "edit", "edit-seq", "generalize", "landscape", "theory", "gen-synthetic",
               "export-embeddings")
NEEDS_MODEL = ("edit", "edit-seq", "landscape", "export-embeddings")


# ------------------------------------------------------------------ helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n", encoding="utf-8")


def build_data(cfg: RunConfig):
    if cfg.dataset == "sbm":
        return generate_sbm(cfg.sbm_config(), cfg.fractions)
    return load_dataset(cfg.dataset, cfg.data_path, cfg.fractions, cfg.seed, cfg.largest_cc)


def _mask(cfg: RunConfig, data):
    return {"train": data.train_mask, "val": data.val_mask, "test": data.test_mask,
            "all": np.ones(data.n, dtype=bool)}[cfg.landscape_mask]


def resolve(args) -> tuple[RunConfig, object]:
    """Checkpoint config (if any), then the config file, then explicit flags."""
    cfg = RunConfig()
    ckpt = None
    if args.command in NEEDS_MODEL:
        if not args.model:
            raise ConfigError(f"{args.command} requires --model", "model")
        if not Path(args.model).is_file():
            raise ConfigError(f"model file {args.model!r} not found", "model")
        ckpt = load_model(args.model)
        stored = ckpt.meta.get("run_config")
        if stored:
            cfg = merge(cfg, json.loads(stored))
    if args.config:
        cfg = merge(cfg, load_config(args.config))
    flags = {"seed": args.seed, "editor": args.editor, "n_edits": args.n_edits, "threads": args.threads}
    cfg = merge(cfg, {k: v for k, v in flags.items() if v is not None})
    return cfg.validate(), ckpt


# -------------------------------------------------------------- subcommands


def cmd_train(cfg: RunConfig, out: Path, ckpt) -> str:
    graph, data = build_data(cfg)
    t0 = time.perf_counter()
    params, history = train_full_batch(cfg.model_config(), graph, data, cfg.hyper())
    train_ms = (time.perf_counter() - t0) * 1e3
    logits = predict(cfg.model_config(), params, graph, data.x)
    test_acc = accuracy(logits, data.y, data.test_mask) if data.test_mask.any() else float("nan")
    val_acc = accuracy(logits, data.y, data.val_mask) if data.val_mask.any() else float("nan")
    save_model(out / "model.ckpt", cfg.model_config(), params,
               meta={"run_config": json.dumps(cfg.to_dict(), sort_keys=True), "seed": str(cfg.seed)})
    write_json(out / "train_history.json", {
        "config": cfg.to_dict(), "seed": cfg.seed, "n_nodes": graph.n, "n_edges": graph.num_edges,
        "test_acc": test_acc, "val_acc": val_acc, "train_ms": train_ms,
        "history": [asdict(r) for r in history],
    })
    return f"train: {cfg.arch} n={graph.n} test_acc={test_acc:.4f} val_acc={val_acc:.4f} -> {out / 'model.ckpt'}"


def _prepared(cfg, ckpt, graph, data):
    egnn = ckpt.egnn if cfg.editor == "egnn" else None
    return prepare_editor(cfg.editor, ckpt.config, ckpt.params, graph, data, cfg.edit_config(), egnn)


def cmd_edit(cfg: RunConfig, out: Path, ckpt) -> str:
    graph, data = build_data(cfg)
    prep = _prepared(cfg, ckpt, graph, data)
    report = single_edit_experiment(cfg.editor, ckpt.config, ckpt.params, graph, data, cfg.n_edits,
                                    cfg.edit_config(), cfg.dataset, cfg.threads, prepared=prep)
    doc = report.to_dict()
    doc["config"] = cfg.to_dict()
    write_json(out / "edit_report.json", doc)
    if prep.egnn is not None and ckpt.egnn is None:
        save_model(out / "egnn_model.ckpt", ckpt.config, ckpt.params, meta=dict(ckpt.meta), egnn=prep.egnn)
    if report.skipped:
        return f"edit: {cfg.editor} skipped (no misclassified validation nodes)"
    return (f"edit: {cfg.editor} n={report.n_edits} sr={report.sr:.3f} mean_dd={100 * report.mean_dd:.2f}pts "
            f"mean_ms={report.mean_edit_ms:.2f} -> {out / 'edit_report.json'}")


def cmd_edit_seq(cfg: RunConfig, out: Path, ckpt) -> str:
    graph, data = build_data(cfg)
    prep = _prepared(cfg, ckpt, graph, data)
    trace = sequential_edit_experiment(cfg.editor, ckpt.config, ckpt.params, graph, data, cfg.n_edits,
                                       cfg.edit_config(), prepared=prep)
    doc = trace.to_dict()
    doc["config"] = cfg.to_dict()
    write_json(out / "edit_seq_report.json", doc)
    last = f"{100 * trace.drawdown[-1]:.2f}pts" if trace.drawdown else "n/a"
    return f"edit-seq: {cfg.editor} n={len(trace.nodes)} final_dd={last} -> {out / 'edit_seq_report.json'}"


def cmd_generalize(cfg: RunConfig, out: Path, ckpt) -> str:
    graph, data = build_data(cfg)
    report = generalization_experiment(cfg.model_config(), graph, data, cfg.group_class, cfg.flip_fraction,
                                       cfg.editor, cfg.n_edits, cfg.hyper(), cfg.edit_config(), cfg.seed)
    doc = report.to_dict()
    doc["config"] = cfg.to_dict()
    doc["seed"] = cfg.seed
    write_json(out / "generalization_report.json", doc)
    return (f"generalize: {cfg.editor} class={cfg.group_class} edits={report.n_edits} "
            f"sub {report.sub_acc_before:.3f}->{report.sub_acc_after:.3f} "
            f"overall {report.overall_acc_before:.3f}->{report.overall_acc_after:.3f}")


def cmd_landscape(cfg: RunConfig, out: Path, ckpt) -> str:
    graph, data = build_data(cfg)
    fn = model_logits_fn(ckpt.config, graph, data.x)
    grids = landscape_scan(fn, ckpt.params, _mask(cfg, data), cfg.landscape_radius, cfg.landscape_resolution,
                           cfg.landscape_pairs, cfg.seed, cfg.threads)
    for g in grids:
        write_landscape_csv(g, out / f"landscape_{g.pair:02d}.csv")
    write_json(out / "landscape_summary.json", {
        "config": cfg.to_dict(), "seed": cfg.seed, "arch": ckpt.config.arch,
        "pairs": [{"pair": g.pair, "mean_kl": g.mean(), "center_kl": g.center, "max_kl": float(g.values.max())}
                  for g in grids],
    })
    means = ", ".join(f"{g.mean():.3g}" for g in grids)
    return f"landscape: {ckpt.config.arch} pairs={len(grids)} mean_kl=[{means}]"


def cmd_theory(cfg: RunConfig, out: Path, ckpt) -> str:
    sbm = cfg.theory_sbm()
    small = replace(sbm, block_size=25)
    taylor = {}
    for variant in ("gcn", "mlp"):
        reps = taylor_convergence(small, variant, l2=cfg.theory_l2)
        taylor[variant] = [{"delta_norm": float(np.linalg.norm(r.delta)), "exact": r.exact, "taylor": r.taylor,
                            "taylor_unhalved": r.taylor_unhalved, "ratio": r.ratio, "node": r.node}
                           for r in reps]
    graph, data = generate_sbm(sbm)
    over = oversmoothing_check(graph, data.x)
    homo = locality_compare(sbm, cfg.theory_trials, cfg.theory_step, cfg.seed, match_scale=cfg.theory_match_scale,
                            l2=cfg.theory_l2)
    null_sbm = cfg.theory_null_sbm()
    null = locality_compare(null_sbm, cfg.theory_trials, cfg.theory_step, cfg.seed,
                            match_scale=cfg.theory_match_scale, l2=cfg.theory_l2)
    homo.write_csv(out / "theory_locality.csv")
    null.write_csv(out / "theory_locality_null.csv")
    lo, hi = binomial_band(max(len(null.rows), 1))
    write_json(out / "theory_report.json", {
        "config": cfg.to_dict(), "seed": cfg.seed, "taylor": taylor,
        "oversmoothing": {"lam": over.lam, "components": over.components, "d_x": over.d_x, "d_ax": over.d_ax,
                          "slack": over.slack},
        "locality": {"win_rate": homo.win_rate, "trials": len(homo.rows), "skipped": homo.skipped},
        "locality_null": {"win_rate": null.win_rate, "trials": len(null.rows), "skipped": null.skipped,
                          "band": [lo, hi], "p_in": null_sbm.p_in, "p_out": null_sbm.p_out},
    })
    return (f"theory: win_rate={homo.win_rate:.2f} null_win_rate={null.win_rate:.2f} band=[{lo:.2f},{hi:.2f}] "
            f"oversmoothing_slack={over.slack:.3g}")


def cmd_gen_synthetic(cfg: RunConfig, out: Path, ckpt) -> str:
    graph, data = generate_sbm(cfg.sbm_config(), cfg.fractions)
    d = data.x.shape[1]
    lines = ["id," + ",".join(f"f{i}" for i in range(d)) + ",label"]
    for i in range(graph.n):
        lines.append(f"{i}," + ",".join(f"{v:.17g}" for v in data.x[i]) + f",{int(data.y[i])}")
    (out / "nodes.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    edges = graph.edge_list()
    (out / "edges.csv").write_text("src,dst\n" + "".join(f"{s},{t}\n" for s, t in edges), encoding="utf-8")
    write_json(out / "synthetic_meta.json", {"config": cfg.to_dict(), "seed": cfg.seed, "n_nodes": graph.n,
                                             "n_edges": graph.num_edges, "num_classes": data.num_classes})
    return f"gen-synthetic: n={graph.n} edges={graph.num_edges} -> {out}"


def cmd_export_embeddings(cfg: RunConfig, out: Path, ckpt) -> str:
    graph, data = build_data(cfg)
    logits, cache = forward(ckpt.config, ckpt.params, graph, data.x)
    emb = cache.inputs[-1] if ckpt.config.layers > 1 else logits
    split = np.full(data.n, "none", dtype=object)
    split[data.train_mask], split[data.val_mask], split[data.test_mask] = "train", "val", "test"
    lines = ["id,label,split," + ",".join(f"h{i}" for i in range(emb.shape[1]))]
    for i in range(data.n):
        lines.append(f"{i},{int(data.y[i])},{split[i]}," + ",".join(f"{v:.17g}" for v in emb[i]))
    (out / "embeddings.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_json(out / "embeddings_meta.json", {"config": cfg.to_dict(), "seed": cfg.seed, "dim": emb.shape[1],
                                              "layer": "last hidden" if ckpt.config.layers > 1 else "logits"})
    return f"export-embeddings: {data.n}x{emb.shape[1]} -> {out / 'embeddings.csv'}"


COMMANDS = {
    "train": cmd_train,
    "edit": cmd_edit,
    "edit-seq": cmd_edit_seq,
    "generalize": cmd_generalize,
    "landscape": cmd_landscape,
    "theory": cmd_theory,
    "gen-synthetic": cmd_gen_synthetic,
    "export-embeddings": cmd_export_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphedit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat JSON run configuration")
        s.add_argument("--out", default=".", help="output directory (created if missing)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--editor", choices=("gd", "enn", "egnn"))
        s.add_argument("--n-edits", type=int, dest="n_edits")
        s.add_argument("--threads", type=int)
        s.add_argument("--model", help="checkpoint written by train")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, ckpt = resolve(args)
    except ConfigError as exc:
        print(f"graphedit {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (GraphEditError, OSError) as exc:
        print(f"graphedit {args.command}: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        print(COMMANDS[args.command](cfg, out, ckpt))
    except ConfigError as exc:
        print(f"graphedit {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (GraphEditError, OSError, ValueError) as exc:
        print(f"graphedit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
