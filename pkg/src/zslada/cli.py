"""Subcommand front-end: synthesize worlds, pretrain, adapt, evaluate, export.

Precedence for every setting is profile defaults, then the ``--config``
JSON file, then explicit flags.  Each run writes a resolved-config
snapshot next to its outputs so it can be replayed byte-for-byte.
Exit codes: 0 success, 2 user/config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .ada import VARIANTS, adapt, augment_batch, load_ada_state, save_ada_state
from .base_model import (load_base_model, pretrain, pseudo_labels,
                         sample_class, save_base_model)
from .data import DatasetBundle, export_embeddings, load_dataset
from .errors import ConfigError, DataError, NonFiniteGradient, NumericalDivergence, ZsladaError
from .metrics import (eval_workers, inductive_accuracy, m1_accuracy, m2_accuracy,
                      write_report_csv)
from .nn.mlp import forward_eval
from .profiles import PROFILE_NAMES, ada_profile, build_base_model, pretrain_config
from .synthetic import SyntheticWorldSpec, make_synthetic_world, save_synthetic_world

METRIC_CHOICES = ("inductive", "m1", "m2", "all")

# flag spelling uses dashes; config files and the library use underscores
_VARIANT_FLAGS = {v.replace("_", "-"): v for v in VARIANTS}


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError("MISSING_FILE", f"no such file: {path}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return payload


def _out_dir(args, cfg: dict, command: str) -> Path:
    # Path("") renders as "." and would pass a truthiness check on the Path
    raw = args.out or cfg.get("out")
    if not raw:
        raise ConfigError(f"{command} needs --out DIR")
    return Path(raw)


def _write_snapshot(out_dir: Path, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _load_bundle(cfg: dict) -> DatasetBundle:
    if cfg.get("data"):
        return load_dataset(cfg["data"])
    if cfg.get("world"):
        spec = SyntheticWorldSpec.from_dict(cfg["world"])
        world = make_synthetic_world(spec)
        return world.bundle
    raise ConfigError("need a dataset: pass --data DIR or a 'world' spec in --config")


def _world_spec(cfg: dict, seed: int | None) -> SyntheticWorldSpec:
    payload = cfg.get("world")
    if payload is None:
        # bare spec file: drop run-level keys, keep world keys ("seed" is both,
        # and in a bare spec it belongs to the world)
        payload = {k: v for k, v in cfg.items()
                   if k not in ("data", "profile", "out", "ada", "pretrain",
                                "eval", "base", "ada_state", "metric")}
    if not payload:
        raise ConfigError("synth needs a world spec in --config")
    spec = SyntheticWorldSpec.from_dict(payload)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    return spec


def _merge(profile_cfg, file_dict: dict | None):
    if not file_dict:
        return profile_cfg
    known = {f.name for f in dataclasses.fields(profile_cfg)}
    bad = sorted(set(file_dict) - known)
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join(bad)}")
    return dataclasses.replace(profile_cfg, **file_dict)


def cmd_synth(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    spec = _world_spec(cfg, args.seed)
    out = _out_dir(args, cfg, "synth")
    world = make_synthetic_world(spec)
    save_synthetic_world(out, world)
    _write_snapshot(out, {"command": "synth", "world": spec.to_dict(),
                          "out": str(out)})
    print(f"world written to {out} "
          f"({spec.n_classes} classes, {spec.samples_per_class} samples/class)")
    return 0


def _report_lines(report) -> list[str]:
    lines = []
    for cid, acc in sorted(report.per_class_acc.items()):
        lines.append(f"  class {cid}: {acc:.4f} (n={report.n_per_class[cid]})")
    lines.append(f"  mean per-class: {report.mean_per_class_acc:.4f}")
    return lines


def cmd_pretrain(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    profile = args.profile or cfg.get("profile") or "synth-small"
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_dir(args, cfg, "pretrain")
    bundle = _load_bundle({**cfg, **({"data": args.data} if args.data else {})})
    train_cfg = _merge(pretrain_config(profile, seed=seed), cfg.get("pretrain"))

    ckpt = out / "base_model.ckpt"
    if ckpt.exists():
        model = load_base_model(ckpt, bundle.attributes)
        print(f"loaded existing checkpoint {ckpt}")
    else:
        model = build_base_model(bundle.attributes, bundle.dataset.dim,
                                 profile=profile, seed=seed)
        model, trace = pretrain(model, bundle.dataset, train_cfg)
        out.mkdir(parents=True, exist_ok=True)
        save_base_model(ckpt, model)
        with open(out / "loss_trace.csv", "w") as fh:
            fh.write("epoch,train_loglik,heldout_loglik\n")
            for epoch, tr, he in trace:
                fh.write(f"{epoch},{tr!r},{he!r}\n")
    report = inductive_accuracy(model, bundle.dataset)
    write_report_csv(report, out / "report_inductive.csv")
    _write_snapshot(out, {"command": "pretrain", "profile": profile,
                          "seed": seed, "data": cfg.get("data") or args.data,
                          "world": cfg.get("world"),
                          "pretrain": dataclasses.asdict(train_cfg),
                          "out": str(out)})
    print("inductive per-class unseen accuracy:")
    print("\n".join(_report_lines(report)))
    return 0


def _fmt_metric(value) -> str:
    return "NA" if value is None else f"{value:.4f}"


def cmd_adapt(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    profile = args.profile or cfg.get("profile") or "synth-small"
    out = _out_dir(args, cfg, "adapt")
    bundle = _load_bundle({**cfg, **({"data": args.data} if args.data else {})})
    base_path = args.base or cfg.get("base")
    if not base_path:
        raise ConfigError("adapt needs --base PATH to a pretrained checkpoint")
    model = load_base_model(base_path, bundle.attributes)

    ada_cfg = _merge(ada_profile(profile), cfg.get("ada"))
    if args.variant:
        ada_cfg = dataclasses.replace(ada_cfg, variant=_VARIANT_FLAGS[args.variant])
    if args.seed is not None:
        # default stays the config/profile seed (100) when the flag is unset
        ada_cfg = dataclasses.replace(ada_cfg, seed=args.seed)

    rep = pseudo_labels(model, bundle.dataset)
    state, log = adapt(model, bundle.dataset, ada_cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_ada_state(out / "ada_state.ckpt", state, ada_cfg)
    with open(out / "training_log.csv", "w") as fh:
        fh.write("iter,L_adv_T,L_adv_S,L_cyc,L_clf_T,L_clf_S,phase\n")
        for row in log:
            vals = ",".join(repr(float(v)) for v in row[1:6])
            fh.write(f"{row[0]},{vals},{row[6]}\n")

    eval_cfg = cfg.get("eval", {})
    n_samples = int(eval_cfg.get("n_samples", 10000))
    eval_seed = int(eval_cfg.get("seed", 0))
    m1 = m2 = None
    if state.variant != "cyclegan_wo":
        m1 = m1_accuracy(state, bundle.dataset).mean_per_class_acc
    if state.variant != "std_da":
        m2 = m2_accuracy(state, model, bundle.dataset,
                         n_samples=n_samples, seed=eval_seed).mean_per_class_acc
    agreement = rep.mean_agreement
    with open(out / "summary.csv", "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"pseudo_label_agreement,{'NA' if agreement is None else repr(agreement)}\n")
        fh.write(f"M1,{'NA' if m1 is None else repr(m1)}\n")
        fh.write(f"M2,{'NA' if m2 is None else repr(m2)}\n")
    _write_snapshot(out, {"command": "adapt", "profile": profile,
                          "data": cfg.get("data") or args.data,
                          "world": cfg.get("world"), "base": str(base_path),
                          "ada": ada_cfg.to_dict(), "out": str(out),
                          "eval": {"n_samples": n_samples, "seed": eval_seed}})
    agree_s = "NA" if agreement is None else f"{agreement:.4f}"
    print(f"variant {state.variant}, final phase {state.phase}")
    print(f"pseudo-label agreement: {agree_s}")
    print(f"M1: {_fmt_metric(m1)}")
    print(f"M2: {_fmt_metric(m2)}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    out = _out_dir(args, cfg, "eval")
    metric = args.metric or cfg.get("metric") or "all"
    if metric not in METRIC_CHOICES:
        raise ConfigError(f"unknown metric {metric!r}, expected one of {METRIC_CHOICES}")
    bundle = _load_bundle({**cfg, **({"data": args.data} if args.data else {})})
    base_path = args.base or cfg.get("base")
    if not base_path:
        raise ConfigError("eval needs --base PATH")
    model = load_base_model(base_path, bundle.attributes)
    state = None
    ada_path = args.ada or cfg.get("ada_state")
    if ada_path:
        state, _ = load_ada_state(ada_path)
    eval_cfg = cfg.get("eval", {})
    n_samples = int(eval_cfg.get("n_samples", 10000))
    eval_seed = int(eval_cfg.get("seed", 0))

    wanted = ("inductive", "m1", "m2") if metric == "all" else (metric,)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in wanted:
        if name == "inductive":
            report = inductive_accuracy(model, bundle.dataset)
        else:
            if state is None:
                if metric == "all":
                    print(f"{name}: NA (no adapted checkpoint given)")
                    continue
                raise ConfigError(f"--metric {name} needs --ada PATH")
            try:
                if name == "m1":
                    report = m1_accuracy(state, bundle.dataset)
                else:
                    report = m2_accuracy(state, model, bundle.dataset,
                                         n_samples=n_samples, seed=eval_seed)
            except ConfigError:
                if metric == "all":
                    print(f"{name}: NA (variant {state.variant})")
                    continue
                raise
        path = out / f"report_{name}.csv"
        write_report_csv(report, path)
        written.append(path.name)
        print(f"{name} mean per-class: {report.mean_per_class_acc:.4f}")
    _write_snapshot(out, {"command": "eval", "metric": metric,
                          "data": cfg.get("data") or args.data,
                          "world": cfg.get("world"), "base": str(base_path),
                          "ada_state": str(ada_path) if ada_path else None,
                          "eval": {"n_samples": n_samples, "seed": eval_seed},
                          "out": str(out), "reports": written})
    return 0


def cmd_export(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    out = _out_dir(args, cfg, "export")
    bundle = _load_bundle({**cfg, **({"data": args.data} if args.data else {})})
    base_path = args.base or cfg.get("base")
    if not base_path:
        raise ConfigError("export needs --base PATH")
    model = load_base_model(base_path, bundle.attributes)
    state = None
    ada_path = args.ada or cfg.get("ada_state")
    if ada_path:
        state, _ = load_ada_state(ada_path)

    eval_cfg = cfg.get("eval", {})
    n = int(eval_cfg.get("n_samples", 200))
    seed = int(eval_cfg.get("seed", 0))
    unseen = model.attribute_table.unseen_ids
    X, labels = bundle.dataset.test_rows()
    if labels is None:
        labels = pseudo_labels(model, bundle.dataset).labels
    matrices = {"real": X}
    label_map = {"real": labels}
    gen_blocks, gen_labels = [], []
    for c in unseen:
        draw = sample_class(model, c, n, seed=seed)
        gen_blocks.append(draw)
        gen_labels.extend([c] * n)
    generated = np.vstack(gen_blocks)
    gen_labels = np.asarray(gen_labels, dtype=np.int64)
    matrices["generated"] = generated
    label_map["generated"] = gen_labels
    if state is not None:
        index_of = {c: j for j, c in enumerate(state.unseen_ids)}
        idx = np.asarray([index_of[c] for c in gen_labels], dtype=np.int64)
        transformed = forward_eval(state.g_t,
                                   augment_batch(generated, idx, len(state.unseen_ids)))
        matrices["transformed"] = transformed
        label_map["transformed"] = gen_labels
    out.mkdir(parents=True, exist_ok=True)
    path = out / "embeddings.csv"
    export_embeddings(matrices, label_map, path)
    _write_snapshot(out, {"command": "export", "data": cfg.get("data") or args.data,
                          "world": cfg.get("world"), "base": str(base_path),
                          "ada_state": str(ada_path) if ada_path else None,
                          "eval": {"n_samples": n, "seed": seed}, "out": str(out)})
    print(f"embeddings written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zslada",
        description="attribute-conditioned zero-shot classifier with "
                    "cycle-consistent adversarial adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_variant=False, with_metric=False, with_ckpts=False):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory")
        p.add_argument("--profile", choices=PROFILE_NAMES)
        p.add_argument("--data", help="dataset directory")
        if with_ckpts:
            p.add_argument("--base", help="pretrained base-model checkpoint")
            p.add_argument("--ada", help="adapted-state checkpoint")
        if with_variant:
            p.add_argument("--variant", choices=sorted(_VARIANT_FLAGS))
        if with_metric:
            p.add_argument("--metric", choices=METRIC_CHOICES)

    p = sub.add_parser("synth", help="write a synthetic benchmark world")
    common(p)
    p.set_defaults(fn=cmd_synth)
    p = sub.add_parser("pretrain", help="fit the attribute-conditioned Gaussians")
    common(p)
    p.set_defaults(fn=cmd_pretrain)
    p = sub.add_parser("adapt", help="adversarial adaptation on unlabeled test data")
    common(p, with_variant=True)
    p.add_argument("--base", help="pretrained base-model checkpoint")
    p.set_defaults(fn=cmd_adapt)
    p = sub.add_parser("eval", help="write per-class accuracy reports")
    common(p, with_metric=True, with_ckpts=True)
    p.set_defaults(fn=cmd_eval)
    p = sub.add_parser("export", help="dump real/generated/transformed embeddings")
    common(p, with_ckpts=True)
    p.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        eval_workers()  # fail fast on a bad ZSLADA_THREADS value
        return args.fn(args)
    except (NumericalDivergence, NonFiniteGradient) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ZsladaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # contract: never panic to the shell
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
