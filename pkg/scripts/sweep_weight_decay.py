#!/usr/bin/env python3
"""Stability probe: inductive unseen accuracy over a weight-decay grid.

Trains the base model once per (mean, precision) weight-decay cell on a
fixed synthetic world and prints the accuracy grid plus its spread.  A
well-behaved configuration keeps the spread within a few points.
"""
import argparse
import itertools

from zslada.base_model import build_base_model, pretrain
from zslada.metrics import inductive_accuracy
from zslada.profiles import pretrain_config
from zslada.synthetic import SyntheticWorldSpec, make_synthetic_world


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=19, help="world seed")
    ap.add_argument("--model-seed", type=int, default=11)
    ap.add_argument("--profile", default="synth-small")
    ap.add_argument("--grid", type=float, nargs="+",
                    default=[1e-5, 1e-4, 1e-3],
                    help="weight-decay values, crossed for mean and precision nets")
    return ap.parse_args()


def main():
    args = parse_args()
    spec = SyntheticWorldSpec(S=8, U=4, d=16, attr_dim=4,
                              samples_per_class=500, seed=args.seed)
    world = make_synthetic_world(spec)

    import dataclasses
    accs = {}
    for mean_wd, prec_wd in itertools.product(args.grid, args.grid):
        cfg = dataclasses.replace(pretrain_config(args.profile, seed=args.model_seed),
                                  mean_weight_decay=mean_wd,
                                  prec_weight_decay=prec_wd)
        model = build_base_model(world.attributes, spec.d,
                                 profile=args.profile, seed=args.model_seed)
        model, _ = pretrain(model, world.dataset, cfg)
        acc = inductive_accuracy(model, world.dataset).mean_per_class_acc
        accs[(mean_wd, prec_wd)] = acc
        print(f"mean_wd={mean_wd:g} prec_wd={prec_wd:g}  acc={acc:.4f}")

    spread = max(accs.values()) - min(accs.values())
    print(f"spread (best - worst): {spread:.4f}")


if __name__ == "__main__":
    main()
