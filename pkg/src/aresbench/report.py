"""Consolidated HTML report over a directory of finished runs.

Each immediate subdirectory of the bundle is one run holding a
``manifest.json``. The page embeds every SVG inline and renders the metric
files as tables; nothing depends on wall-clock time, so regenerating from
unchanged inputs gives the same bytes.
"""

from __future__ import annotations

import json
from html import escape
from pathlib import Path

from .errors import MissingArtifactError

EXPECTED = {
    "gen-data": ["dataset.json"],
    "train": ["history.csv", "train.json"],
    "attack": ["attack.json"],
    "curve": ["curve.csv", "curve.svg"],
    "corrupt": ["severity.csv", "severity.svg"],
    "mce": ["mce.json"],
    "transfer": ["transfer.csv", "transfer.svg"],
    "freq": ["freq.json", "acc_lpb.csv", "acc_lpb.svg"],
}

_CSS = """body{font-family:sans-serif;max-width:1000px;margin:2em auto;color:#222}
table{border-collapse:collapse;margin:0.5em 0 1.5em}
td,th{border:1px solid #bbb;padding:3px 8px;text-align:right}
th{background:#eee}td:first-child,th:first-child{text-align:left}
figure{display:inline-block;margin:0.5em}figcaption{font-size:small;color:#555}"""


def _expected_listing():
    return "; ".join(f"{cmd}: manifest.json + {', '.join(files)}" for cmd, files in EXPECTED.items())


def _pct(v):
    return "" if v is None else f"{100 * float(v):.2f}"


def _table(header, rows):
    out = ["<table><tr>" + "".join(f"<th>{escape(h)}</th>" for h in header) + "</tr>"]
    for r in rows:
        out.append("<tr>" + "".join(f"<td>{escape(str(c))}</td>" for c in r) + "</tr>")
    return "\n".join(out) + "</table>"


def _figure(path: Path, caption):
    return f"<figure>{path.read_text()}<figcaption>{escape(caption)}</figcaption></figure>"


def collect_runs(bundle_dir, exclude=None):
    bundle = Path(bundle_dir)
    if not bundle.is_dir():
        raise MissingArtifactError(f"bundle directory {bundle} does not exist; expected run directories "
                                   f"with {_expected_listing()}")
    skip = Path(exclude).resolve() if exclude else None
    runs = []
    for d in sorted(p for p in bundle.iterdir() if p.is_dir()):
        if skip is not None and d.resolve() == skip:
            continue
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise MissingArtifactError(f"run directory {d} has no manifest.json")
        manifest = json.loads(mpath.read_text())
        if manifest.get("command") == "report":
            continue
        for name in EXPECTED.get(manifest.get("command"), []):
            if not (d / name).exists():
                raise MissingArtifactError(f"run {d.name} ({manifest['command']}) is missing {name}")
        runs.append((d, manifest))
    if not runs:
        raise MissingArtifactError(f"no finished runs under {bundle}; expected run directories with "
                                   f"{_expected_listing()}")
    return runs


def emit_report(bundle_dir, exclude=None) -> tuple[str, list[Path]]:
    """Return the HTML page and the list of files it was built from."""
    runs = collect_runs(bundle_dir, exclude)
    used = []
    by_cmd = {}
    for d, m in runs:
        by_cmd.setdefault(m["command"], []).append((d, m))
        used.append(d / "manifest.json")
        used += [d / n for n in EXPECTED.get(m["command"], [])]

    parts = ["<!DOCTYPE html>", "<html><head><meta charset=\"utf-8\"><title>Robustness report</title>",
             f"<style>{_CSS}</style></head><body>", "<h1>Robustness report</h1>"]
    parts.append(_table(["run", "command", "seed", "outputs"],
                        [(d.name, m["command"], m["config"]["seed"], len(m["outputs"])) for d, m in runs]))

    if "train" in by_cmd:
        parts.append("<h2>Training</h2>")
        rows = []
        for d, m in by_cmd["train"]:
            info = json.loads((d / "train.json").read_text())
            fin = info["final"] or {}
            rows.append((d.name, info["model"]["family"], info["training_tag"], _pct(fin.get("clean_acc")),
                         _pct(fin.get("robust_acc"))))
        parts.append(_table(["run", "family", "training", "Clean Acc", "PGD-10 Acc"], rows))

    if "attack" in by_cmd:
        parts.append("<h2>White-box attacks</h2>")
        rows, extra_methods = [], []
        for d, m in by_cmd["attack"]:
            extra_methods += [k for k in json.loads((d / "attack.json").read_text())["methods"]
                              if k not in ("FGSM", "PGD") and k not in extra_methods]
        for d, m in by_cmd["attack"]:
            a = json.loads((d / "attack.json").read_text())
            meth = a["methods"]
            row = [d.name, a["preset"], _pct(a["clean"]),
                   _pct(meth.get("FGSM", {}).get("accuracy")), _pct(meth.get("PGD", {}).get("accuracy"))]
            row += [_pct(meth.get(k, {}).get("accuracy")) for k in extra_methods]
            rows.append(row)
        parts.append(_table(["run", "preset", "Clean Acc", "FGSM", "PGD100"] + extra_methods, rows))

    for cmd, title, figs in (("curve", "Robustness curves", ["curve.svg"]),
                             ("corrupt", "Corruption severity", ["severity.svg"]),
                             ("freq", "Frequency bias", ["acc_lpb.svg"]),
                             ("transfer", "Transferability", ["transfer.svg"])):
        if cmd not in by_cmd:
            continue
        parts.append(f"<h2>{title}</h2>")
        if cmd == "freq":
            rows = []
            for d, m in by_cmd[cmd]:
                f = json.loads((d / "freq.json").read_text())
                rows.append((d.name, f"{f['f_bias']:.3f}", f["n_prime"], _pct(f["clean_accuracy"])))
            parts.append(_table(["run", "f_bias", "N'", "Clean Acc"], rows))
        for d, m in by_cmd[cmd]:
            for fig in figs:
                parts.append(_figure(d / fig, d.name))

    if "mce" in by_cmd:
        parts.append("<h2>Corruption error</h2>")
        for d, m in by_cmd["mce"]:
            r = json.loads((d / "mce.json").read_text())
            kinds = sorted(r["per_corruption_ce"])
            parts.append(f"<p>{escape(d.name)}: mCE = {r['mce']:.4f} "
                         f"(baseline {escape(r['baseline_tag'])})</p>")
            parts.append(_table(["kind", "CE", "baseline CE"],
                                [(k, _pct(r["per_corruption_ce"][k]), _pct(r["baseline_ce"][k])) for k in kinds]))

    parts.append("</body></html>")
    return "\n".join(parts) + "\n", used
