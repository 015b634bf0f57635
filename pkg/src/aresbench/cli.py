"""``ares`` command-line entry point.

Every subcommand reads one config (TOML or a previous run's manifest),
writes its artifacts into a fresh output directory and finishes with a
``manifest.json`` recording the resolved config plus sha256 digests of every
input and output file. Output directories are append-only: a run refuses to
write into a directory that already holds files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, parallel, svg
from .attacks import preset, run_attack
from .curves import build_curve, mean_corruption_error, min_epsilon_search, severity_curve
from .data import DatasetSpec, DatasetSplits, LabeledDataset, dump_png, generate_dataset, load_dataset
from .errors import AresError, ConfigError, MissingArtifactError
from .freq import frequency_bias
from .report import emit_report
from .training import TrainConfig, train
from .transfer import transfer_matrix
from .zoo import ModelSpec, build_model, load_weights

COMMANDS = ("gen-data", "train", "attack", "curve", "corrupt", "mce", "transfer", "freq", "report")


class Run:
    """Tracks the inputs read and outputs written by one subcommand."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.inputs = {}
        self.outputs = {}

    def read(self, path):
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"input {path} does not exist")
        self.inputs[str(path)] = cfgmod.sha256_file(path)
        return path

    def write_text(self, name, text):
        self._write(name, text.encode("utf-8"))

    def write_bytes(self, name, data):
        self._write(name, data)

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def _write(self, name, data):
        path = self.out / name
        if path.exists():
            raise AresError(f"refusing to overwrite existing artifact {path}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.outputs[name] = cfgmod.sha256_file(path)

    def manifest(self):
        return {"command": self.command, "config": self.cfg, "inputs": self.inputs,
                "outputs": self.outputs, "threads": parallel.get_threads(), "version": __version__}


def _dataset(run: Run, split: str, samples=None) -> LabeledDataset:
    d = run.cfg["dataset"]
    if d["path"]:
        ds = load_dataset(run.read(Path(d["path"]) / f"{split}.ares"))
    else:
        splits = generate_dataset(_dataset_spec(run.cfg))
        ds = splits.test if split == "test" else splits.train
    return ds.subset(samples) if samples else ds


def _dataset_spec(cfg) -> DatasetSpec:
    d = cfg["dataset"]
    return DatasetSpec(d["class_count"], tuple(d["image_shape"]), d["train_size"], d["test_size"], cfg["seed"])


def _weights(run: Run, key="weights"):
    path = run.cfg["model"][key]
    if not path:
        raise ConfigError(f"[model] {key} is required for '{run.command}'")
    return load_weights(run.read(path))


def cmd_gen_data(run: Run):
    splits = generate_dataset(_dataset_spec(run.cfg))
    run.write_bytes("train.ares", splits.train.to_bytes())
    run.write_bytes("test.ares", splits.test.to_bytes())
    counts = {s: np.bincount(ds.labels, minlength=ds.spec.class_count).tolist()
              for s, ds in (("train", splits.train), ("test", splits.test))}
    run.write_json("dataset.json", {"spec": splits.train.spec.to_dict(), "class_counts": counts})
    n = run.cfg["dataset"]["png_preview"]
    if n:
        dump_png(splits.test, run.out / "preview", limit=n)
        for p in sorted((run.out / "preview").iterdir()):
            run.outputs[f"preview/{p.name}"] = cfgmod.sha256_file(p)


def cmd_train(run: Run):
    m = run.cfg["model"]
    spec = ModelSpec(m["family"], tuple(run.cfg["dataset"]["image_shape"]), run.cfg["dataset"]["class_count"],
                     m["width"], run.cfg["seed"])
    splits = DatasetSplits(_dataset(run, "train"), _dataset(run, "test"))
    tc = TrainConfig(seed=run.cfg["seed"], **run.cfg["train"])
    result = train(build_model(spec), splits, tc)
    run.write_bytes("weights.ares", result.final.to_bytes())
    if result.ema is not None:
        run.write_bytes("ema_weights.ares", result.ema.to_bytes())
    rows = ["epoch,loss,clean_acc,robust_acc" + (",ema_clean_acc,ema_robust_acc" if result.ema else "")]
    for h in result.history:
        vals = [h["epoch"], h["loss"], h["clean_acc"], h["robust_acc"]]
        if result.ema:
            vals += [h["ema_clean_acc"], h["ema_robust_acc"]]
        rows.append(",".join("" if v is None else repr(v) for v in vals))
    run.write_text("history.csv", "\n".join(rows) + "\n")
    run.write_json("train.json", {"model": spec.to_dict(), "digest": result.final.digest(),
                                  "training_tag": result.final.training_tag, "final": result.history[-1]
                                  if result.history else None})


def cmd_attack(run: Run):
    a = run.cfg["attack"]
    model = _weights(run)
    ds = _dataset(run, "test", a["samples"])
    overrides = {k: a[k] for k in ("epsilon", "steps", "step_size") if a[k] is not None}
    result = {"model": model.digest(), "preset": a["preset"], "samples": len(ds),
              "clean": parallel.accuracy(model, ds.images, ds.labels), "methods": {}}
    for method in a["methods"]:
        spec = preset(a["preset"], method, seed=run.cfg["seed"], **overrides)
        res = run_attack(model, ds.images, ds.labels, spec)
        result["methods"][method] = {"accuracy": parallel.accuracy(model, res.adversarial, ds.labels),
                                     "attack_tag": spec.digest(), "spec": spec.to_dict()}
    run.write_json("attack.json", result)


def cmd_curve(run: Run):
    c = run.cfg["curve"]
    model = _weights(run)
    ds = _dataset(run, "test", c["samples"])
    extra = {} if c["method"] == "FGSM" else {"steps": c["steps"]}
    template = preset("whitebox-l2" if c["norm"] == "L2" else "whitebox-linf", c["method"],
                      random_start=False, seed=run.cfg["seed"], **extra)
    records = min_epsilon_search(model, ds.images, ds.labels, template, c["eps_max"], c["tol"])
    grid = c["grid"] or [k * c["eps_max"] / 32 for k in range(33)]
    curve = build_curve(records, grid, template.digest())
    run.write_text("curve.csv", curve.to_csv())
    run.write_json("records.json", {"attack": template.to_dict(), "eps_max": c["eps_max"], "tol": c["tol"],
                                    "records": [r.to_dict() for r in records]})
    run.write_text("curve.svg", svg.line_plot({model.training_tag: (curve.epsilon_grid, curve.accuracy)},
                                              title=f"Robustness curve ({c['method']})",
                                              xlabel="perturbation budget", ylabel="accuracy"))


def cmd_corrupt(run: Run):
    c = run.cfg["corrupt"]
    model = _weights(run)
    ds = _dataset(run, "test", c["samples"])
    accs = severity_curve(model, ds, c["kinds"], seed=run.cfg["seed"])
    rows = ["severity,accuracy"] + [f"{s},{a!r}" for s, a in enumerate(accs)]
    run.write_text("severity.csv", "\n".join(rows) + "\n")
    run.write_text("severity.svg", svg.line_plot({model.training_tag: (list(range(6)), accs)},
                                                 title="Accuracy vs corruption severity",
                                                 xlabel="severity", ylabel="accuracy"))


def cmd_mce(run: Run):
    c = run.cfg["mce"]
    model = _weights(run)
    baseline = _weights(run, "baseline")
    ds = _dataset(run, "test", c["samples"])
    report = mean_corruption_error(model, ds, baseline, c["kinds"], seed=run.cfg["seed"])
    run.write_text("mce.json", report.to_json())


def cmd_transfer(run: Run):
    t = run.cfg["transfer"]
    if len(t["models"]) < 2:
        raise ConfigError("[transfer] models needs at least two weight files")
    models = [load_weights(run.read(p)) for p in t["models"]]
    labels = t["labels"] or [f"{m.spec.family}-{m.training_tag}-{i}" for i, m in enumerate(models)]
    if len(labels) != len(models):
        raise ConfigError("[transfer] labels must match models one to one")
    ds = _dataset(run, "test", t["samples"])
    spec = preset(t["preset"], t["method"], seed=run.cfg["seed"])
    matrix = transfer_matrix(models, ds, spec, labels)
    run.write_text("transfer.csv", matrix.to_csv())
    run.write_text("transfer.json", matrix.to_json())
    run.write_text("transfer.svg", svg.heatmap(matrix.robust_accuracy, labels, labels,
                                               title=f"Target accuracy under {t['method']} transfer"))


def cmd_freq(run: Run):
    f = run.cfg["freq"]
    model = _weights(run)
    ds = _dataset(run, "test", f["samples"])
    report = frequency_bias(model, ds, f["grid"])
    run.write_text("freq.json", report.to_json())
    run.write_text("acc_lpb.csv", report.to_csv())
    run.write_text("acc_lpb.svg", svg.line_plot({model.training_tag: (report.bandwidth_grid, report.acc_lpb)},
                                                title="ACC-LPB", xlabel="low-pass bandwidth",
                                                ylabel="normalized accuracy", ylim=(0.0, 1.0)))


def cmd_report(run: Run):
    bundle = run.cfg["report"]["bundle"]
    if not bundle:
        raise ConfigError("[report] bundle is required")
    html, used = emit_report(bundle, exclude=run.out)
    for p in used:
        run.read(p)
    run.write_text("report.html", html)


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "attack": cmd_attack, "curve": cmd_curve,
    "corrupt": cmd_corrupt, "mce": cmd_mce, "transfer": cmd_transfer, "freq": cmd_freq, "report": cmd_report,
}


def _verify_inputs(manifest):
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists():
            raise MissingArtifactError(f"manifest input {path} is missing")
        if cfgmod.sha256_file(path) != digest:
            raise MissingArtifactError(f"manifest input {path} changed since the recorded run")


def execute(command: str, config_path, out=None, threads=1, seed=None, env=None) -> Path:
    """Run one subcommand and return its output directory."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown subcommand {command!r}; expected one of {list(COMMANDS)}")
    cfg, manifest = cfgmod.load(config_path)
    if manifest is not None:
        if manifest["command"] != command:
            raise ConfigError(f"manifest records '{manifest['command']}', not '{command}'")
        _verify_inputs(manifest)
    cfg = cfgmod.apply_overrides(cfg, seed=seed, out=out, env=env)
    if not cfg["out"]:
        raise ConfigError(f"no output directory: pass --out, set {cfgmod.OUT_ENV} or put 'out' in the config")
    out_dir = Path(cfg["out"])
    if out_dir.exists() and any(out_dir.iterdir()):
        raise AresError(f"output directory {out_dir} is not empty; runs never overwrite artifacts")
    out_dir.mkdir(parents=True, exist_ok=True)
    previous = parallel.get_threads()
    parallel.set_threads(threads)
    try:
        run = Run(command, cfg)
        HANDLERS[command](run)
        (out_dir / "manifest.json").write_text(json.dumps(run.manifest(), indent=2, sort_keys=True) + "\n")
    finally:
        parallel.set_threads(previous)
    return out_dir


def _parser():
    p = argparse.ArgumentParser(prog="ares", description="Desk-scale adversarial robustness benchmark.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        s = sub.add_parser(name, help=HANDLERS[name].__doc__ or name)
        s.add_argument("--config", required=True, help="TOML config or a manifest.json to rerun")
        s.add_argument("--out", help="output directory (must be new or empty)")
        s.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
        s.add_argument("--seed", type=int, help="override the config seed")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if not args.command:
        _parser().print_help(sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        out = execute(args.command, args.config, args.out, args.threads, args.seed)
    except (AresError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    print(f"{args.command}: wrote {out} in {time.perf_counter() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
