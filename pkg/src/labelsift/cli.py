"""Command-line entry point: every stage individually plus the full loop."""

import argparse
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import detect as det
from . import mixfit, nn, pipeline, relabel, uncertainty as unc


class UsageError(Exception):
    pass


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return cfg


def _fmt_of(path: str) -> str:
    return "binary" if path.endswith((".bin", ".lsft")) else "csv"


def cmd_gen(args) -> int:
    ds = data_mod.make_blobs(args.n_per_class, args.classes, args.dim,
                             args.separation, args.seed)
    data_mod.save_dataset(ds, args.out, _fmt_of(args.out))
    print(f"wrote {ds.n} images ({ds.num_classes} classes, dim {ds.dim}) to {args.out}")
    return 0


def cmd_corrupt(args) -> int:
    ds = data_mod.load_dataset(args.data, _fmt_of(args.data))
    spec = data_mod.NoiseSpec(args.pattern, args.rate, args.seed)
    noisy = data_mod.inject_noise(ds, spec)
    data_mod.save_dataset(noisy, args.out, _fmt_of(args.out))
    changed = int((noisy.given_labels != noisy.true_labels).sum())
    print(f"flipped {changed} of {noisy.n} labels ({args.pattern}, rate {args.rate})")
    return 0


def _model_config(cfg: dict, dataset, seed: int) -> nn.ModelConfig:
    model = dict(cfg.get("model", {}))
    model.setdefault("layer_sizes", [dataset.dim, 64, dataset.num_classes])
    model.setdefault("seed", seed)
    return nn.ModelConfig(**{k: tuple(v) if k == "layer_sizes" else v
                             for k, v in model.items()})


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ds = data_mod.load_dataset(args.data, _fmt_of(args.data))
    model_cfg = _model_config(cfg, ds, args.seed)
    gold = None
    gold_size = int(cfg.get("gold_size", 0))
    if gold_size > 0:
        gold = data_mod.draw_gold_subset(ds, gold_size, args.seed)
    members, traces = nn.train_ensemble(
        ds, model_cfg, args.members, args.passes, trace_seed=args.seed,
        gold=gold, statistic=args.statistic)
    os.makedirs(args.out, exist_ok=True)
    for m in members:
        nn.save_member(m, os.path.join(args.out, f"member{m.member_index}.lsnn"))
    nn.save_traces_csv(traces, os.path.join(args.out, "traces.csv"))
    snapshots = np.stack([t.mean_softmax for t in traces])
    np.save(os.path.join(args.out, "snapshots.npy"), snapshots)
    if traces[0].scores is not None:
        scores_per_epoch = np.stack([t.scores for t in traces])
        np.save(os.path.join(args.out, "epoch_scores.npy"), scores_per_epoch)
    print(f"trained {len(members)} members for {model_cfg.epochs} epochs -> {args.out}")
    return 0


def cmd_score(args) -> int:
    members = [nn.load_member(p) for p in sorted(
        os.path.join(args.model_dir, f) for f in os.listdir(args.model_dir)
        if f.endswith(".lsnn"))]
    if not members:
        raise UsageError(f"no checkpoints in {args.model_dir}")
    ds = data_mod.load_dataset(args.data, _fmt_of(args.data))
    tensor = nn.predict_ensemble(members, ds.features, args.passes, args.seed)
    vec = unc.compute_statistic(tensor, args.statistic)
    unc.save_scores(vec, args.out)
    print(f"wrote {len(vec.scores)} {args.statistic} scores to {args.out}")
    return 0


def cmd_fit(args) -> int:
    vec = unc.load_scores(args.scores)
    fit = mixfit.fit_beta_mixture(vec)
    mixfit.save_fit(fit, args.out)
    print(f"fit converged in {len(fit.log_likelihood)} iterations -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    vec = unc.load_scores(args.scores)
    if args.rule == "top":
        detection = det.detect_top_fraction(unc.to_uncertainty(vec), args.p)
    else:
        fit = mixfit.load_fit(args.fit) if args.fit else mixfit.fit_beta_mixture(vec)
        if args.rule == "posterior":
            detection = det.detect_by_mixture(vec, fit, posterior_cutoff=args.cutoff)
        else:
            detection = det.detect_by_mixture(vec, fit, posterior_cutoff=None,
                                              contamination_target=args.target)
    det.save_detection_csv(detection, vec, args.out)
    print(f"detected {len(detection)} of {len(vec.scores)} images -> {args.out}")
    return 0


def _read_detection_ids(path) -> np.ndarray:
    import csv as _csv
    with open(path, newline="") as fh:
        rows = list(_csv.reader(fh))
    return np.array([int(r[0]) for r in rows[1:] if r[2] == "1"], dtype=np.int64)


def cmd_relabel(args) -> int:
    ds = data_mod.load_dataset(args.data, _fmt_of(args.data))
    ids = _read_detection_ids(args.detection)
    detection = det.DetectionSet(ids, rule="from_file", statistic="")
    if args.mode == "oracle":
        new_ds, outcome = relabel.relabel_oracle(detection, ds)
    else:
        snapshots = np.load(args.snapshots)
        traces = [nn.EpochTrace(epoch=e, mean_softmax=snapshots[e],
                                unc_all_passes=0.0, unc_within_member=0.0,
                                train_acc=0.0)
                  for e in range(len(snapshots))]
        new_ds, outcome = relabel.relabel_predicted(detection, traces, args.epoch, ds)
    data_mod.save_dataset(new_ds, args.out, _fmt_of(args.out))
    changed = int((new_ds.given_labels != ds.given_labels).sum())
    print(f"relabeled {changed} images ({args.mode}) -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    data_cfg = cfg.get("data", {})
    if "path" in data_cfg:
        ds = data_mod.load_dataset(data_cfg["path"],
                                   data_cfg.get("format", _fmt_of(data_cfg["path"])))
    else:
        blobs = data_cfg.get("blobs", {})
        ds = data_mod.make_blobs(
            blobs.get("n_per_class", 100), blobs.get("classes", 10),
            blobs.get("dim", 32), blobs.get("separation", 6.0), args.seed)
    model_cfg = _model_config(cfg, ds, args.seed)
    noise_cfg = cfg.get("noise", {})
    noise = data_mod.NoiseSpec(noise_cfg.get("pattern", "symmetric"),
                               noise_cfg.get("rate", 0.4),
                               noise_cfg.get("seed", args.seed))
    pipe_cfg = dict(cfg.get("pipeline", {}))
    config = pipeline.PipelineConfig(noise=noise, model=model_cfg,
                                     master_seed=args.seed, **pipe_cfg)
    report = pipeline.run_pipeline(ds, config, out_dir=args.out)
    if report.failure:
        print(f"pipeline failed: {report.failure}", file=sys.stderr)
        return 2
    for r in report.records:
        print(f"iter {r.iteration}: acc={r.test_acc:.3f} noisy={r.noisy_count} "
              f"prop={r.noise_prop:.3f} "
              f"prec={'-' if r.det_precision is None else f'{r.det_precision:.3f}'}")
    return 0


def cmd_report(args) -> int:
    records = pipeline.load_records_csv(os.path.join(args.artifacts, "records.csv"))
    print("iter,acc,noisy_count,noise_prop,det_precision,det_recall,relabel_epoch")
    for r in records:
        print(f"{r.iteration},{r.test_acc},{r.noisy_count},{r.noise_prop},"
              f"{'' if r.det_precision is None else r.det_precision},"
              f"{'' if r.det_recall is None else r.det_recall},"
              f"{'' if r.relabel_epoch is None else r.relabel_epoch}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelsift",
                                     description="Uncertainty-based noisy-label "
                                                 "detection and relabeling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False):
        p.add_argument("--seed", type=int, default=0)
        if config:
            p.add_argument("--config", default=None)
            p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("gen", help="generate a synthetic blobs dataset")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("corrupt", help="inject label noise")
    p.add_argument("--data", required=True)
    p.add_argument("--pattern", choices=["symmetric", "pair"], default="symmetric")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", help="train a synchronized ensemble with traces")
    p.add_argument("--data", required=True)
    p.add_argument("--members", type=int, default=5)
    p.add_argument("--passes", type=int, default=25)
    p.add_argument("--statistic", default="mean_max_softmax",
                   choices=sorted(unc.STATISTICS))
    p.add_argument("--out", required=True)
    common(p, config=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="compute an uncertainty statistic")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--passes", type=int, default=25)
    p.add_argument("--statistic", default="mean_max_softmax",
                   choices=sorted(unc.STATISTICS))
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit", help="fit the two-beta mixture to scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("detect", help="turn scores into a detected set")
    p.add_argument("--scores", required=True)
    p.add_argument("--rule", choices=["top", "posterior", "contamination"],
                   default="top")
    p.add_argument("--p", type=float, default=0.10)
    p.add_argument("--cutoff", type=float, default=0.5)
    p.add_argument("--target", type=float, default=0.05)
    p.add_argument("--fit", default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("relabel", help="apply predicted or oracle relabels")
    p.add_argument("--data", required=True)
    p.add_argument("--detection", required=True)
    p.add_argument("--mode", choices=["predicted", "oracle"], default="predicted")
    p.add_argument("--snapshots", default=None,
                   help="epoch-mean softmax .npy from `train` (predicted mode)")
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_relabel)

    p = sub.add_parser("run", help="run the full iterative pipeline")
    p.add_argument("--out", required=True)
    common(p, config=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-render records from an artifact dir")
    p.add_argument("--artifacts", required=True)
    common(p)
    p.set_defaults(func=cmd_report)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
