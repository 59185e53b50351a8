"""Command-line entry point.

Exit codes: 0 success, 1 validation/usage error, 2 runtime or divergence
error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .data import (
    ContainerError,
    SyntheticSpec,
    ValidationError,
    build_preset,
    load_dataset,
    load_proxies,
    save_dataset,
    save_proxies,
    write_sidecar,
)
from .evaluation import evaluate, identification_quality, report_csv
from .pipeline import (
    DEFAULT_TAU,
    EMBEDDING_SCALE_RECIPE,
    infer_pseudo_groups,
    proxy_init,
    run_ppa,
    train_biased,
    train_erm,
    train_gt_gla,
    train_jtt,
)
from .probe import DivergenceError, TrainConfig, save_model

METHODS = ("erm", "jtt", "ppa", "gt-gla")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        warmup_lr=args.lr / 20.0,  # keep the warmup ratio of the default recipe
        seed=args.seed,
    )


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def _load_inputs(args, need_proxies: bool):
    ds = load_dataset(args.features)
    proxies = None
    if args.proxies:
        proxies = load_proxies(args.proxies)
    elif need_proxies:
        raise ValidationError("--proxies is required for this method")
    return ds, proxies


def cmd_gen(args) -> int:
    if args.spec:
        raw = json.loads(Path(args.spec).read_text())
        raw["seed"] = args.seed
        raw["n_per_group"] = {k: tuple(map(tuple, v)) for k, v in raw["n_per_group"].items()}
        spec = SyntheticSpec(**raw)
        from .data import generate_synthetic

        ds, proxies = generate_synthetic(spec)
        name = Path(args.spec).stem
    else:
        ds, proxies, spec = build_preset(args.preset, args.seed)
        name = args.preset
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    feat_path = prefix.with_suffix(".ppaf")
    prox_path = prefix.with_suffix(".ppaz")
    save_dataset(ds, feat_path)
    save_proxies(proxies, prox_path)
    provenance = f"synthetic {name} seed={args.seed}"
    write_sidecar(feat_path, ["class_0", "class_1"], ["attr_0", "attr_1"], provenance, features_l2_normalized=False)
    write_sidecar(prox_path, ["class_0", "class_1"], None, provenance)
    print(json.dumps({"features": str(feat_path), "proxies": str(prox_path), "n": ds.n, "dim": ds.dim}))
    return 0


def cmd_train(args) -> int:
    need_proxies = args.method in ("ppa",)
    ds, proxies = _load_inputs(args, need_proxies)
    normalize = args.normalize == "on"
    if args.select is None:
        args.select = "avg" if args.method == "erm" else "wga"
    cfg = _train_config(args)
    cfg_payload = {
        "command": "train",
        "method": args.method,
        "tau": args.tau,
        "seed": args.seed,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch": args.batch,
        "normalize": normalize,
        "noise": args.noise,
        "lambda": getattr(args, "lambda_", None),
        "select": args.select,
        "features": _file_digest(args.features),
        "proxies": _file_digest(args.proxies) if args.proxies else None,
    }
    run_dir = Path(args.out) / _config_hash(cfg_payload)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = dict(cfg_payload)
    if args.method == "erm":
        scorer, epoch_idx, _ = train_erm(ds, cfg, normalize=normalize, select=args.select)
        manifest["selected_epoch"] = epoch_idx + 1
    elif args.method == "jtt":
        stage1, _, _ = train_erm(ds, cfg, normalize=normalize, select="last")
        scorer, epoch_idx, error_set = train_jtt(ds, stage1, args.lambda_, cfg, normalize=normalize, select=args.select)
        manifest["selected_epoch"] = epoch_idx + 1
        manifest["error_set_size"] = int(error_set.sum())
    elif args.method == "ppa":
        run = run_ppa(
            ds,
            proxies,
            tau=args.tau,
            cfg=cfg,
            normalize=normalize,
            project=not args.no_projection,
            noise_fraction=args.noise,
            select=args.select,
        )
        if run.manifest["proxy_rank"] < ds.class_count:
            print(
                f"warning: proxies span only {run.manifest['proxy_rank']} of {ds.class_count} directions",
                file=sys.stderr,
            )
        scorer = run.classifier.scorer
        manifest.update(run.manifest)
    else:  # gt-gla
        _, classifier, epoch_idx = train_gt_gla(ds, args.tau, cfg, normalize=normalize, select=args.select)
        scorer = classifier.scorer
        manifest["selected_epoch"] = epoch_idx + 1
    report = evaluate(scorer, ds, split="test", group_metrics=ds.attributes is not None)
    save_model(scorer, run_dir / "model.json", provenance={k: v for k, v in cfg_payload.items() if v is not None})
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    (run_dir / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    if report.per_group_accuracy:
        (run_dir / "report.csv").write_text(report_csv(report))
    summary = {
        "run_dir": str(run_dir),
        "test_average_accuracy": report.average_accuracy,
        "test_worst_group_accuracy": report.worst_group_accuracy,
    }
    print(json.dumps(summary))
    return 0


def _sweep_point(ds, proxies, tau, cfg, normalize, select):
    run = run_ppa(ds, proxies, tau=tau, cfg=cfg, normalize=normalize, select=select)
    report = evaluate(run.classifier.scorer, ds, split="test", group_metrics=ds.attributes is not None)
    return tau, report


def cmd_sweep_tau(args) -> int:
    ds, proxies = _load_inputs(args, need_proxies=True)
    normalize = args.normalize == "on"
    if args.select is None:
        args.select = "wga"
    cfg = _train_config(args)
    grid = [float(t) for t in args.tau_grid.split(",")]
    workers = max(1, int(os.environ.get("PPA_THREADS", "4")))
    rows = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_sweep_point, ds, proxies, tau, cfg, normalize, args.select) for tau in grid]
        for fut in futures:
            rows.append(fut.result())
    rows.sort(key=lambda r: r[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["tau,worst_group_accuracy,average_accuracy"]
    for tau, rep in rows:
        lines.append(f"{tau},{rep.worst_group_accuracy:.6f},{rep.average_accuracy:.6f}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    (out / "sweep.gp").write_text(
        'set datafile separator ","\nset key autotitle columnhead\n'
        'plot "sweep.csv" using 1:2 with linespoints, "" using 1:3 with linespoints\n'
    )
    print(json.dumps({"sweep_csv": str(out / "sweep.csv"), "points": [[t, r.worst_group_accuracy, r.average_accuracy] for t, r in rows]}))
    return 0


def cmd_verify(args) -> int:
    names = list(verify_mod.SUITES) if args.check == "all" else [args.check]
    records = verify_mod.run_suites(names, args.seeds)
    if args.json:
        print(json.dumps([{"check": n, "passed": p, "detail": d} for n, p, d in records], indent=2))
    else:
        width = max(len(n) for n, _, _ in records)
        for n, p, d in records:
            print(f"{n:<{width}}  {'PASS' if p else 'FAIL'}  {d}")
    return 0 if all(p for _, p, _ in records) else 3


def cmd_identify(args) -> int:
    ds, proxies = _load_inputs(args, need_proxies=True)
    if ds.attributes is None:
        raise ValidationError("identification requires ground-truth attributes")
    normalize = args.normalize == "on"
    cfg = _train_config(args)
    _, _, erm_result = train_erm(ds, cfg, normalize=normalize, select="last")
    erm_val = evaluate(erm_result.scorer, ds, split="val", group_metrics=True)
    # comparator stage-1: plain cross-entropy from the proxy head on raw
    # features, on the bias-preserving (embedding-scale) schedule
    comparator_cfg = replace(EMBEDDING_SCALE_RECIPE, seed=args.seed)
    plain, _, _ = train_biased(
        ds, proxies, comparator_cfg, normalize=normalize, project=False, loss_kind="ce",
        init=proxy_init(proxies, normalize),
    )
    projected, _, _ = train_biased(ds, proxies, cfg, normalize=normalize, project=True)
    out = {}
    for name, biased in (("plain_erm", plain), ("projected", projected)):
        grouping = infer_pseudo_groups(biased, ds)
        report = identification_quality(grouping.pseudo_attribute, ds, erm_val)
        out[name] = report.to_json_dict()
    print(json.dumps(out, indent=2))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "identify.json").write_text(json.dumps(out, indent=2) + "\n")
    return 0


def cmd_inspect(args) -> int:
    raw_magic = Path(args.path).read_bytes()[:4]
    if raw_magic == b"PPAZ":
        z = load_proxies(args.path)
        print(json.dumps({"kind": "proxies", "classes": z.k, "dim": z.dim, "class_names": z.class_names}))
        return 0
    ds = load_dataset(args.path)
    splits = {name: int(ds.split_indices(name).size) for name in ("train", "val", "test")}
    print(
        json.dumps(
            {
                "kind": "features",
                "n": ds.n,
                "dim": ds.dim,
                "classes": ds.class_count,
                "attribute_count": ds.attribute_count,
                "has_attributes": ds.attributes is not None,
                "splits": splits,
                "meta": ds.meta,
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ppa", description="Group-robust linear probing over precomputed features")
    sub = parser.add_subparsers(dest="command", required=True)

    defaults = TrainConfig()

    def add_common(p, proxies_required=False):
        p.add_argument("--features", required=True, help="PPAF feature container")
        p.add_argument("--proxies", required=proxies_required, help="PPAZ class-proxy container")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epochs", type=int, default=defaults.epochs)
        p.add_argument("--lr", type=float, default=defaults.learning_rate)
        p.add_argument("--batch", type=int, default=defaults.batch_size)
        p.add_argument("--normalize", choices=("on", "off"), default="on")
        p.add_argument(
            "--select",
            choices=("wga", "avg", "last"),
            default=None,
            help="checkpoint selection; default: avg for erm, wga otherwise",
        )

    g = sub.add_parser("gen", help="write a synthetic benchmark to disk")
    g.add_argument("--preset", choices=("synthetic-waterbirds", "synthetic-balanced", "synthetic-celeba-like"))
    g.add_argument("--spec", help="JSON file with synthetic spec fields")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output path prefix")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one method end to end")
    add_common(t)
    t.add_argument("--method", choices=METHODS, required=True)
    t.add_argument("--tau", type=float, default=DEFAULT_TAU)
    t.add_argument("--noise", type=float, default=0.0, help="pseudo-label noise fraction")
    t.add_argument("--lambda", dest="lambda_", type=float, default=50.0, help="JTT upweight")
    t.add_argument("--no-projection", action="store_true", help="ablation: skip the proxy projection")
    t.add_argument("--out", required=True, help="output directory (run subdir named by config hash)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep-tau", help="train the pipeline across a tau grid")
    add_common(s, proxies_required=True)
    s.add_argument("--tau-grid", default="0.8,0.9,1.0,1.1,1.2")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep_tau)

    v = sub.add_parser("verify", help="run numerical certificates")
    v.add_argument("--check", choices=tuple(verify_mod.SUITES) + ("all",), default="all")
    v.add_argument("--seeds", type=int, default=50, help="number of cases / seeds per suite")
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("identify", help="minority-identification quality of biased heads")
    add_common(i, proxies_required=True)
    i.add_argument("--out")
    i.set_defaults(func=cmd_identify)

    x = sub.add_parser("inspect", help="validate a container and print its summary")
    x.add_argument("path")
    x.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValidationError, ContainerError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
