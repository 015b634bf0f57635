import hashlib
import json
from pathlib import Path

import pytest

from aresbench import cli
from aresbench.config import ConfigError, load
from aresbench.errors import AresError, MissingArtifactError

METRIC_FILES = {
    "gen-data": ["train.ares", "test.ares", "dataset.json"],
    "train": ["weights.ares", "history.csv", "train.json"],
    "attack": ["attack.json"],
    "curve": ["curve.csv", "records.json", "curve.svg"],
    "corrupt": ["severity.csv", "severity.svg"],
    "mce": ["mce.json"],
    "transfer": ["transfer.csv", "transfer.json", "transfer.svg"],
    "freq": ["freq.json", "acc_lpb.csv", "acc_lpb.svg"],
}

BASE = """
seed = 3

[dataset]
class_count = 4
image_shape = [3, 16, 16]
train_size = 32
test_size = 16
"""


def write_config(path: Path, body: str) -> Path:
    path.write_text(BASE + body)
    return path


@pytest.fixture(scope="module")
def chained(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfgs = tmp_path_factory.mktemp("cfgs")
    data = f'path = "{root / "gen-data"}"'

    def cfg(name, body):
        p = cfgs / f"{name}.toml"
        p.write_text(BASE + data + "\n" + body)
        return p

    (cfgs / "gen.toml").write_text(BASE + "png_preview = 2\n")
    cli.execute("gen-data", cfgs / "gen.toml", out=root / "gen-data")
    cli.execute("train", cfg("train", "[train]\nepochs = 4\nbatch_size = 8\nlr = 0.05\n"), out=root / "train")
    cli.execute("train", cfg("train2", "[model]\nfamily = \"PatchMLP\"\n[train]\nepochs = 1\nbatch_size = 16\n"),
                out=root / "train2")
    w = root / "train" / "weights.ares"
    w2 = root / "train2" / "weights.ares"
    model = f'[model]\nweights = "{w}"\n'
    cli.execute("attack", cfg("attack", model + "[attack]\nmethods = [\"FGSM\", \"PGD\", \"MIM\"]\nsamples = 8\n"),
                out=root / "attack")
    cli.execute("curve", cfg("curve", model + "[curve]\nsteps = 3\nsamples = 6\n"), out=root / "curve")
    cli.execute("corrupt", cfg("corrupt", model + "[corrupt]\nsamples = 6\n"), out=root / "corrupt")
    cli.execute("mce", cfg("mce", model + f'baseline = "{w2}"\n[mce]\nsamples = 8\n'), out=root / "mce")
    cli.execute("transfer", cfg("transfer", f'[transfer]\nmodels = ["{w}", "{w2}"]\nsamples = 6\n'),
                out=root / "transfer")
    cli.execute("freq", cfg("freq", model + "[freq]\nsamples = 16\n"), out=root / "freq")
    return root


def test_every_subcommand_writes_its_artifacts(chained):
    for cmd, files in METRIC_FILES.items():
        d = chained / cmd
        manifest = json.loads((d / "manifest.json").read_text())
        assert manifest["command"] == cmd
        for f in files:
            assert (d / f).exists(), (cmd, f)
            assert manifest["outputs"][f] == hashlib.sha256((d / f).read_bytes()).hexdigest()
    assert len(list((chained / "gen-data" / "preview").glob("*.png"))) == 2


@pytest.mark.parametrize("cmd", list(METRIC_FILES))
@pytest.mark.parametrize("threads", [1, 3])
def test_rerun_from_manifest_is_byte_identical(chained, tmp_path, cmd, threads):
    src = chained / cmd
    out = cli.execute(cmd, src / "manifest.json", out=tmp_path / "again", threads=threads)
    for f in METRIC_FILES[cmd]:
        assert (out / f).read_bytes() == (src / f).read_bytes(), (cmd, f)


def test_runs_never_overwrite(chained):
    with pytest.raises(AresError, match="not empty"):
        cli.execute("attack", chained / "attack" / "manifest.json", out=chained / "attack")


def test_manifest_for_another_command_is_rejected(chained, tmp_path):
    with pytest.raises(ConfigError):
        cli.execute("freq", chained / "attack" / "manifest.json", out=tmp_path / "x")


def test_changed_input_is_detected(chained, tmp_path):
    manifest = json.loads((chained / "attack" / "manifest.json").read_text())
    path = next(iter(manifest["inputs"]))
    manifest["inputs"][path] = "0" * 64
    m = tmp_path / "manifest.json"
    m.write_text(json.dumps(manifest))
    with pytest.raises(MissingArtifactError, match="changed"):
        cli.execute("attack", m, out=tmp_path / "x")


def test_out_priority(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('out = "from-config"\n' + BASE)
    resolved, _ = load(cfg)
    assert resolved["out"] == str(tmp_path / "from-config")
    env = {"ARES_OUT": str(tmp_path / "from-env")}
    assert cli.execute("gen-data", cfg, env=env) == tmp_path / "from-env"
    assert cli.execute("gen-data", cfg, out=tmp_path / "from-flag", env=env) == tmp_path / "from-flag"
    assert cli.execute("gen-data", cfg, env={}) == tmp_path / "from-config"


def test_seed_override_changes_data(tmp_path):
    cfg = write_config(tmp_path / "c.toml", "")
    a = cli.execute("gen-data", cfg, out=tmp_path / "a")
    b = cli.execute("gen-data", cfg, out=tmp_path / "b", seed=4)
    assert (a / "test.ares").read_bytes() != (b / "test.ares").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["config"]["seed"] == 4


def test_unknown_key_is_a_structured_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.toml", "[attack]\nepsilonn = 0.1\n")
    code = cli.main(["attack", "--config", str(cfg), "--out", str(tmp_path / "o")])
    err = json.loads(capsys.readouterr().err)
    assert code == 2 and err["error"] == "ConfigError" and "epsilonn" in err["message"]


def test_missing_weights_is_a_structured_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.toml", f'[model]\nweights = "{tmp_path / "nope.ares"}"\n')
    code = cli.main(["freq", "--config", str(cfg), "--out", str(tmp_path / "o")])
    err = json.loads(capsys.readouterr().err)
    assert code == 1 and err["error"] == "MissingArtifactError" and err["command"] == "freq"


def test_bad_toml_and_missing_out(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1")
    with pytest.raises(ConfigError):
        load(bad)
    with pytest.raises(ConfigError, match="ARES_OUT"):
        cli.execute("gen-data", write_config(tmp_path / "c.toml", ""), env={})


def test_main_success_message(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.toml", "")
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "gen-data: wrote" in capsys.readouterr().out
