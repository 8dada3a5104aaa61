"""Train GCN, GraphSAGE and MLP, then run 50 independent edits with each editor.

Usage: python3 scripts/edit_benchmark.py [--cora DIR] [--seed N] [--n-edits N] [--out FILE]
Without --cora the Cora-sized SBM stand-in is used.
"""

import argparse
import json
from dataclasses import replace

from graphedit.editors import EDITORS, EditConfig, single_edit_experiment, strip_timing
from graphedit.graph import SbmConfig, generate_sbm, load_dataset
from graphedit.models import ModelConfig, TrainHyper, accuracy, predict, train_full_batch

STAND_IN = SbmConfig(blocks=7, block_size=355, p_in=0.0093, p_out=0.0012, dim=64, separation=2.0, noise=1.0)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cora", help="directory holding cora.content and cora.cites")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-edits", type=int, default=50)
    ap.add_argument("--out", default="edit_benchmark.json")
    args = ap.parse_args()

    if args.cora:
        graph, data = load_dataset("cora-raw", args.cora, seed=args.seed)
    else:
        graph, data = generate_sbm(replace(STAND_IN, seed=args.seed))
    hyper = TrainHyper(0.01, 200, args.seed)
    rows = []
    for arch in ("gcn", "sage", "mlp"):
        cfg = ModelConfig(arch, 2, 32, 0.1, seed=args.seed)
        g = None if arch == "mlp" else graph
        params, _ = train_full_batch(cfg, g, data, hyper)
        acc = accuracy(predict(cfg, params, g, data.x), data.y, data.test_mask)
        for editor in EDITORS:
            rep = single_edit_experiment(editor, cfg, params, g, data, args.n_edits, EditConfig(seed=args.seed))
            rows.append({"arch": arch, "test_acc": acc, **strip_timing(rep.to_dict()),
                         "mean_edit_ms": rep.mean_edit_ms})
            sr = "n/a" if rep.sr is None else f"{rep.sr:.2f}"
            dd = "n/a" if rep.mean_dd is None else f"{100 * rep.mean_dd:6.2f}"
            print(f"{arch:5s} acc={100 * acc:5.1f} {editor:5s} n={rep.n_edits:3d} sr={sr} dd={dd} pts")
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, default=float)


if __name__ == "__main__":
    main()
