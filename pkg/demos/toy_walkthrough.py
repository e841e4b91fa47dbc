"""Walk through the toy task stage by stage and print what each stage produced.

    python demos/toy_walkthrough.py [--quick] [--out DIR]

``--quick`` shrinks the model and agent budgets so the script finishes
several times faster; the default settings take a few minutes on one core.
"""

import argparse
import json

import numpy as np

from midl_rl import pipeline
from midl_rl.config import RunConfig
from midl_rl.world_model import load_ensemble, toy_kl_truth_to_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs-demo")
    args = ap.parse_args()

    cfg = RunConfig().with_seed(args.seed)
    if args.quick:
        cfg = cfg.replace("model", epochs=60, n_models=3, n_elites=2, hidden=64, layers=2, lr=1e-3)
        cfg = cfg.replace("agent", iterations=500, rollout_every=100, rollout_count=200)
        cfg = cfg.replace("discriminator", warmup=300)
    paths = pipeline.prepare(cfg, args.out)
    print("run directory:", paths.root)

    data = pipeline.gen_data(cfg, paths)
    tails = float(np.mean(np.abs(data.actions) > 0.7))
    print(f"dataset: {len(data)} transitions, {tails:.1%} of actions with |a| > 0.7")

    pipeline.train_model(cfg, paths)
    ens = load_ensemble(paths.model)
    for a in (0.0, 0.5, 0.9):
        kl = toy_kl_truth_to_model(ens, np.zeros((1, 1)), np.full((1, 1), a))[0]
        print(f"model error at a={a:+.1f}: KL(truth || elite) averaged over elites = {kl:.3f}")

    def progress(rec):
        if (rec["iter"] + 1) % 250 == 0:
            print(f"  iter {rec['iter'] + 1}: Q offline {rec['mean_q_offline']:.2f}, "
                  f"Q model {rec['mean_q_model']:.2f}, alpha {rec['alpha']:.4f}")

    pipeline.train_agent(cfg, paths, progress)
    print("evaluation:", json.dumps(pipeline.evaluate_stage(cfg, paths)))
    summary = pipeline.emit_diagnostics(paths)
    print("diagnostics:", json.dumps(summary))
    print("panels written to", paths.diagnostics)


if __name__ == "__main__":
    main()
