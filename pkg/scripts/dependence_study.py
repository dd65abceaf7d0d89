"""Dependence metrics on the mixture process: copula model vs product model.

Trains both bundled mixture configs (skippable once models exist), then runs
the standalone metric subcommands against the saved models: tail event
classification at two thresholds, tail dependence curves, mutual information
by quadrature, and the pairwise bivariate log-likelihood win table comparing
the two models plus the diagonal Gaussian baseline.
"""
import argparse
import os

from monde.cli import main as cli_main

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MODELS = ("mixture_copula", "mixture_pumonde")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/dependence",
                    help="directory that receives one subdirectory per model")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the seed of both configs")
    ap.add_argument("--skip-train", action="store_true",
                    help="reuse model.json files already present under --root")
    args = ap.parse_args(argv)

    seed = [] if args.seed is None else ["--seed", str(args.seed)]
    outs = {name: os.path.join(args.root, name) for name in MODELS}

    for name, out in outs.items():
        cfg = ["--config", os.path.join(REPO, "configs", name + ".json")]
        model = ["--model", os.path.join(out, "model.json")]
        if not args.skip_train:
            print(f"== train {name} ==", flush=True)
            rc = cli_main(["train", *cfg, "--out", out, *seed])
            if rc != 0:
                return rc
        for sub in ("tail-classify", "tail-dep", "mi"):
            print(f"== {sub} {name} ==", flush=True)
            rc = cli_main([sub, *cfg, "--out", out, *seed, *model])
            if rc != 0:
                return rc

    print("== pairwise-ll ==", flush=True)
    rc = cli_main(["pairwise-ll",
                   "--config", os.path.join(REPO, "configs", "mixture_copula.json"),
                   "--out", os.path.join(args.root, "pairwise"),
                   *seed,
                   "--model", os.path.join(outs["mixture_copula"], "model.json"),
                   "--model", os.path.join(outs["mixture_pumonde"], "model.json")])
    if rc == 0:
        print(f"artifacts under {args.root}", flush=True)
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
