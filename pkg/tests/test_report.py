import shutil

import pytest

from aresbench import cli
from aresbench.errors import MissingArtifactError
from aresbench.report import collect_runs, emit_report

BASE = """
seed = 1

[dataset]
class_count = 4
image_shape = [3, 16, 16]
train_size = 32
test_size = 16
"""


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    cfg = tmp_path_factory.mktemp("cfg")
    (cfg / "gen.toml").write_text(BASE)
    cli.execute("gen-data", cfg / "gen.toml", out=root / "data")
    (cfg / "train.toml").write_text(BASE + f'path = "{root / "data"}"\n[train]\nepochs = 1\nbatch_size = 16\n')
    cli.execute("train", cfg / "train.toml", out=root / "train")
    model = f'path = "{root / "data"}"\n[model]\nweights = "{root / "train" / "weights.ares"}"\n'
    (cfg / "attack.toml").write_text(BASE + model + "[attack]\nsamples = 8\n")
    cli.execute("attack", cfg / "attack.toml", out=root / "attack")
    (cfg / "freq.toml").write_text(BASE + model + "[freq]\nsamples = 8\n")
    cli.execute("freq", cfg / "freq.toml", out=root / "freq")
    return root


def test_report_has_tables_and_inline_figures(bundle):
    html, used = emit_report(bundle)
    assert "Clean Acc" in html and "FGSM" in html and "PGD100" in html
    assert "<svg" in html and "f_bias" in html
    assert bundle / "freq" / "acc_lpb.svg" in used


def test_regeneration_is_byte_identical(bundle, tmp_path):
    (tmp_path / "r.toml").write_text(f'[report]\nbundle = "{bundle}"\n')
    a = cli.execute("report", tmp_path / "r.toml", out=tmp_path / "a")
    b = cli.execute("report", a / "manifest.json", out=tmp_path / "b")
    assert (a / "report.html").read_bytes() == (b / "report.html").read_bytes()


def test_report_run_inside_bundle_is_skipped(bundle, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(bundle, copy)
    (tmp_path / "r.toml").write_text(f'[report]\nbundle = "{copy}"\n')
    cli.execute("report", tmp_path / "r.toml", out=copy / "report")
    html, _ = emit_report(copy)
    assert html == emit_report(bundle)[0].replace(str(bundle), str(copy))


def test_empty_bundle_lists_expected_artifacts(tmp_path):
    with pytest.raises(MissingArtifactError, match="curve.csv"):
        collect_runs(tmp_path)
    with pytest.raises(MissingArtifactError, match="does not exist"):
        collect_runs(tmp_path / "missing")


def test_missing_artifact_is_named(bundle, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(bundle, copy)
    (copy / "freq" / "acc_lpb.csv").unlink()
    with pytest.raises(MissingArtifactError, match="acc_lpb.csv"):
        emit_report(copy)
    (copy / "attack" / "manifest.json").unlink()
    with pytest.raises(MissingArtifactError, match="manifest.json"):
        collect_runs(copy)


def test_cli_reports_missing_bundle(tmp_path, capsys):
    (tmp_path / "r.toml").write_text(f'[report]\nbundle = "{tmp_path / "nope"}"\n')
    assert cli.main(["report", "--config", str(tmp_path / "r.toml"), "--out", str(tmp_path / "o")]) == 1
    assert "MissingArtifactError" in capsys.readouterr().err
