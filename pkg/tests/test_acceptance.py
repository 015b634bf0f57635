"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line (echoed in the terminal summary)
before asserting. Trained models come from a session cache: dataset seed 0,
training seeds 0, 1 and 2, the default recipe plus the trick variants.
Run just this file with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time

import numpy as np
import pytest

from aresbench import cli, parallel
from aresbench.attacks import METHODS, check_constraints, preset, run_attack
from aresbench.curves import (
    NotFooled,
    MinEpsRecord,
    build_curve,
    error_rate,
    linear_scan_epsilon,
    mean_corruption_error,
    min_epsilon_search,
    records_agree,
)
from aresbench.data import DatasetSpec, generate_dataset
from aresbench.freq import b_max, dft2, frequency_bias, idft2, lowpass
from aresbench.tensor import finite_diff_check, one_hot, relu_margin
from aresbench.training import TrainConfig, train
from aresbench.transfer import family_means, transfer_matrix, whitebox_accuracy
from aresbench.zoo import ModelSpec, build_model

from conftest import ACCEPTANCE_LINES, LAYER_KINDS, layer_stack, random_params

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
VARIANTS = {
    "normal": ("SmallCNN", {}),
    "at": ("SmallCNN", {"adversarial": True}),
    "at_mixup": ("SmallCNN", {"adversarial": True, "mixup_alpha": 0.2}),
    "at_wd": ("SmallCNN", {"adversarial": True, "weight_decay": 0.1}),
    "mlp": ("PatchMLP", {}),
}

_models = {}
_train_seconds = {}


def verdict(n, ok, detail, started):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail} [{time.perf_counter() - started:.1f}s]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="session")
def splits():
    return generate_dataset(DatasetSpec(train_size=2000, test_size=500, seed=0))


@pytest.fixture(scope="session")
def trained(splits):
    """Lazily trained model cache keyed by (variant, seed)."""

    def get(variant, seed):
        key = (variant, seed)
        if key not in _models:
            family, kw = VARIANTS[variant]
            t0 = time.perf_counter()
            _models[key] = train(build_model(ModelSpec(family, seed=seed)), splits,
                                 TrainConfig(seed=seed, eval_samples=0, **kw)).final
            _train_seconds[key] = time.perf_counter() - t0
        return _models[key]

    return get


def pgd100_accuracy(model, x, y):
    spec = preset("whitebox-linf", "PGD", seed=0)
    return parallel.accuracy(model, run_attack(model, x, y, spec).adversarial, y)


def majority(flags):
    return sum(flags) * 2 > len(flags)


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for kind in LAYER_KINDS:
        layers, shape = layer_stack(kind)
        checked, draw = 0, 0
        while checked < 20:
            rng = np.random.default_rng([101, draw])
            draw += 1
            params = random_params(layers, rng)
            x = rng.uniform(-1, 1, (2,) + shape)
            if relu_margin(layers, params, x) < 1e-3:
                continue
            worst = max(worst, finite_diff_check(layers, params, x, one_hot(rng.integers(0, 3, 2), 3)))
            checked += 1
    for family in ("SmallCNN", "PatchMLP"):
        checked, draw = 0, 0
        while checked < 20:
            model = build_model(ModelSpec(family, (3, 8, 8), 3, seed=draw))
            rng = np.random.default_rng([102, draw])
            draw += 1
            x = rng.uniform(0, 1, (2, 3, 8, 8))
            if relu_margin(model.layers, model.tensors, x) < 1e-4:
                continue
            worst = max(worst, finite_diff_check(model.layers, model.tensors, x,
                                                 one_hot(rng.integers(0, 3, 2), 3), coords=40, seed=draw))
            checked += 1
    elapsed = time.perf_counter() - t0
    verdict(1, worst < 1e-6 and elapsed < 60,
            f"worst FD relative error {worst:.2e} over 6 layers and 2 families x 20 instances", t0)


def test_criterion_02_attack_constraints(splits, trained):
    t0 = time.perf_counter()
    model = trained("normal", 0)
    x, y = splits.test.images[:100], splits.test.labels[:100]
    bad = []
    for name in ("whitebox-linf", "whitebox-l2", "blackbox-linf"):
        for method in METHODS:
            spec = preset(name, method, seed=1)
            adv = run_attack(model, x, y, spec).adversarial
            if not check_constraints(x, adv, spec.norm, spec.epsilon).all():
                bad.append(f"{name}/{method}")
    elapsed = time.perf_counter() - t0
    verdict(2, not bad and elapsed < 300,
            f"21 preset/method pairs on 100 samples, violations: {bad or 'none'}", t0)


def test_criterion_03_attack_strength_ordering(splits, trained):
    model = trained("normal", 0)
    t0 = time.perf_counter()
    x, y = splits.test.images, splits.test.labels
    clean = parallel.accuracy(model, x, y)
    fgsm = parallel.accuracy(model, run_attack(model, x, y, preset("whitebox-linf", "FGSM")).adversarial, y)
    pgd = pgd100_accuracy(model, x, y)
    ok = pgd <= fgsm - 0.02 and fgsm <= clean - 0.04 and time.perf_counter() - t0 < 300
    verdict(3, ok, f"normal SmallCNN clean {clean:.3f}, FGSM {fgsm:.3f}, PGD100 {pgd:.3f}", t0)


@pytest.fixture(scope="session")
def curve_records(splits, trained):
    model = trained("normal", 0)
    x, y = splits.test.images[:200], splits.test.labels[:200]
    template = preset("whitebox-linf", "PGD", steps=10, random_start=False, seed=0)
    t0 = time.perf_counter()
    bis = min_epsilon_search(model, x, y, template, tol=1 / 510)
    scan = linear_scan_epsilon(model, x, y, template, tol=1 / 510)
    return model, x, y, bis, scan, time.perf_counter() - t0


def test_criterion_04_bisection_matches_linear_scan(curve_records):
    t0 = time.perf_counter()
    _, _, _, bis, scan, elapsed = curve_records
    agree = np.mean([records_agree(a, b, 1 / 510) for a, b in zip(bis, scan)])
    verdict(4, agree >= 0.95 and elapsed < 600,
            f"agreement {agree:.3f} on {len(bis)} samples (search + scan {elapsed:.0f}s)", t0)


def test_criterion_05_curve_invariants(curve_records):
    t0 = time.perf_counter()
    model, x, y, bis, _, _ = curve_records
    curve = build_curve(bis, np.linspace(0, 32 / 255, 33))
    starts_clean = curve.accuracy[0] == parallel.accuracy(model, x, y)
    monotone = all(b <= a for a, b in zip(curve.accuracy, curve.accuracy[1:]))
    hand = [MinEpsRecord(0, 0.0, False), MinEpsRecord(1, 2 / 255, True),
            MinEpsRecord(2, 10 / 255, True), MinEpsRecord(3, NotFooled, True)]
    hand_acc = build_curve(hand, [0, 4 / 255, 16 / 255]).accuracy
    ok = starts_clean and monotone and hand_acc == (0.75, 0.5, 0.25)
    verdict(5, ok, f"accuracy(0) equals clean: {starts_clean}, non-increasing: {monotone}, hand case {hand_acc}",
            t0)


def test_criterion_06_mce_identity(splits):
    t0 = time.perf_counter()
    baseline = train(build_model(ModelSpec.baseline()), splits, TrainConfig(seed=0, eval_samples=0)).final
    report = mean_corruption_error(baseline, splits.test, baseline)
    hand = error_rate(np.array([[0, 0], [1, 0]]), np.array([0, 1]))
    ok = abs(report.mce - 1.0) <= 1e-12 and hand == 0.75
    verdict(6, ok, f"mCE(BaselineRef vs itself) = {report.mce!r}, hand CE = {hand}", t0)


def test_criterion_07_adversarial_training_effect(splits, trained):
    t0 = time.perf_counter()
    normal, at = trained("normal", 0), trained("at", 0)
    x, y = splits.test.images, splits.test.labels
    rob_n, rob_a = pgd100_accuracy(normal, x, y), pgd100_accuracy(at, x, y)
    clean_n, clean_a = parallel.accuracy(normal, x, y), parallel.accuracy(at, x, y)
    total = time.perf_counter() - t0 + _train_seconds[("normal", 0)] + _train_seconds[("at", 0)]
    ok = rob_a - rob_n >= 0.20 and clean_a < clean_n and total < 1200
    verdict(7, ok, f"PGD100 AT {rob_a:.3f} vs normal {rob_n:.3f}; clean AT {clean_a:.3f} vs normal {clean_n:.3f}; "
                   f"{total:.0f}s with training", t0)


def test_criterion_08_trick_ablation(splits, trained):
    t0 = time.perf_counter()
    x, y = splits.test.images, splits.test.labels
    rows, mix_ok, wd_ok = [], [], []
    for s in SEEDS:
        base, mix, wd = (pgd100_accuracy(trained(v, s), x, y) for v in ("at", "at_mixup", "at_wd"))
        mix_ok.append(mix >= base)
        wd_ok.append(wd <= base)
        rows.append(f"seed {s}: base {base:.3f} mixup {mix:.3f} wd0.1 {wd:.3f}")
    ok = majority(mix_ok) and majority(wd_ok)
    verdict(8, ok, "; ".join(rows), t0)


def test_criterion_09_frequency_suite(splits, trained):
    t0 = time.perf_counter()
    x = splits.test.images[:50]
    round_trip = max(np.abs(idft2(dft2(img[c])).real - img[c]).max() for img in x for c in range(3))
    top = b_max(32, 32)
    identity = np.array_equal(lowpass(x, top), x)
    rows, lower = [], []
    at_b_max_is_one = True
    for s in SEEDS:
        fb_n = frequency_bias(trained("normal", s), splits.test)
        fb_a = frequency_bias(trained("at", s), splits.test)
        at_b_max_is_one &= fb_n.acc_lpb[-1] == 1.0 and fb_a.acc_lpb[-1] == 1.0
        lower.append(fb_a.f_bias < fb_n.f_bias)
        rows.append(f"seed {s}: f_bias AT {fb_a.f_bias:.2f} vs normal {fb_n.f_bias:.2f}")
    ok = round_trip < 1e-10 and identity and at_b_max_is_one and majority(lower)
    verdict(9, ok, f"round trip {round_trip:.1e}, identity at b_max {identity}, ACC-LPB(b_max)=1 "
                   f"{at_b_max_is_one}; " + "; ".join(rows), t0)


def test_criterion_10_transfer_suite(splits, trained):
    t0 = time.perf_counter()
    data = splits.test.subset(200)
    attack = preset("blackbox-linf", "MIM", seed=0)
    rows, cross_wins, diag_exact = [], [], True
    for s in SEEDS:
        other = (s + 1) % 3
        models = [trained("normal", s), trained("normal", other), trained("mlp", s), trained("mlp", other)]
        matrix = transfer_matrix(models, data, attack)
        diag_exact &= all(matrix.robust_accuracy[i, i] == whitebox_accuracy(m, data, attack)
                          for i, m in enumerate(models))
        cross, within = family_means(matrix, ["cnn", "cnn", "mlp", "mlp"])
        cross_wins.append(cross > within)
        rows.append(f"seed {s}: cross {cross:.3f} vs within {within:.3f}")
    verdict(10, diag_exact and majority(cross_wins), f"diagonal equals white-box: {diag_exact}; " + "; ".join(rows),
            t0)


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    base = ("seed = 5\n[dataset]\nclass_count = 4\nimage_shape = [3, 16, 16]\n"
            "train_size = 48\ntest_size = 24\n")
    root, cfgs = tmp_path / "runs", tmp_path / "cfg"
    cfgs.mkdir()

    def run(cmd, name, body=""):
        path = cfgs / f"{name}.toml"
        path.write_text(base + (f'path = "{root / "data"}"\n' if cmd != "gen-data" else "") + body)
        cli.execute(cmd, path, out=root / name, threads=2)

    run("gen-data", "data")
    run("train", "train", "[train]\nepochs = 2\nbatch_size = 16\nadversarial = true\nema_beta = 0.9\n")
    run("train", "train_mlp", "[model]\nfamily = \"PatchMLP\"\n[train]\nepochs = 2\nbatch_size = 16\n")
    w, w2 = root / "train" / "weights.ares", root / "train_mlp" / "weights.ares"
    model = f'[model]\nweights = "{w}"\n'
    run("attack", "attack", model + "[attack]\nmethods = [\"FGSM\", \"PGD\", \"DIM\", \"VMIFGSM\"]\nsamples = 12\n")
    run("curve", "curve", model + "[curve]\nsteps = 5\nsamples = 12\n")
    run("corrupt", "corrupt", model + "[corrupt]\nsamples = 12\n")
    run("mce", "mce", model + f'baseline = "{w2}"\n[mce]\nsamples = 12\n')
    run("transfer", "transfer", f'[transfer]\nmodels = ["{w}", "{w2}"]\nmethod = "TIM"\nsamples = 12\n')
    run("freq", "freq", model + "[freq]\nsamples = 12\n")
    (cfgs / "report.toml").write_text(f'[report]\nbundle = "{root}"\n')
    cli.execute("report", cfgs / "report.toml", out=root / "report")

    mismatched, compared = [], 0
    for d in sorted(root.iterdir()):
        manifest = json.loads((d / "manifest.json").read_text())
        for threads in (1, 4):
            again = cli.execute(manifest["command"], d / "manifest.json", out=tmp_path / f"re-{d.name}-{threads}",
                                threads=threads)
            for name in manifest["outputs"]:
                compared += 1
                if (again / name).read_bytes() != (d / name).read_bytes():
                    mismatched.append(f"{d.name}/{name}@{threads}")
    verdict(11, not mismatched, f"{compared} artifact reruns across 9 subcommands at 1 and 4 threads, "
                                f"mismatches: {mismatched or 'none'}", t0)
