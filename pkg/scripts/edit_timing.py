"""Per-edit wall time of GD vs EGNN on a large SBM (default 50k nodes, ~1M edges).

Usage: python3 scripts/edit_timing.py [--blocks N] [--block-size N] [--edits N]
"""

import argparse

from graphedit.editors import EditConfig, single_edit_experiment
from graphedit.graph import SbmConfig, generate_sbm
from graphedit.models import ModelConfig, TrainHyper, train_full_batch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=10)
    ap.add_argument("--block-size", type=int, default=5000)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--edits", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    g, d = generate_sbm(SbmConfig(args.blocks, args.block_size, 0.005, 0.0003, 64, 0.3, 1.0, seed=args.seed))
    print(f"graph: {g.n} nodes, {g.num_edges} edges")
    cfg = ModelConfig("gcn", 2, 32, 0.1, seed=args.seed)
    params, _ = train_full_batch(cfg, g, d, TrainHyper(0.01, args.epochs, args.seed))
    ms = {}
    for editor in ("gd", "egnn"):
        rep = single_edit_experiment(editor, cfg, params, g, d, args.edits, EditConfig(seed=args.seed))
        ms[editor] = rep.mean_edit_ms
        print(f"{editor:5s} n={rep.n_edits} sr={rep.sr} mean edit {rep.mean_edit_ms:.1f} ms "
              f"(prepare {rep.prepare_ms:.0f} ms)")
    print(f"egnn/gd time ratio {ms['egnn'] / ms['gd']:.3f}")


if __name__ == "__main__":
    main()
