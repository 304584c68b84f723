"""Release gate: ten numbered criteria with frozen tolerances.

Each test measures first, then registers a one-line PASS/FAIL verdict
(echoed in the terminal summary by conftest) and asserts on it. The
expensive training run is shared: criterion 6 owns it, criterion 8
replays frames against its network, criterion 10 repeats it in full and
compares the artifacts.
"""
import hashlib
import math
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

import conftest
from helpers import naive_dft, rel_err, two_element_snapshots

from fert.cli import run_stream
from fert.config import default_config, derive_params
from fert.dsp import MtiState, angle_grid, capon_spectrum, doppler_fft, mti, range_fft
from fert.errors import FertError
from fert.formats import (
    LABELS,
    Recording,
    read_features,
    read_model,
    read_recording,
    write_features,
    write_model,
    write_recording,
)
from fert.nn import (
    BatchNorm2d,
    Conv2d,
    FertNet,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    ReLU,
    cross_entropy,
)
from fert.nn.gradcheck import check_gradients, module_decisions
from fert.simulate import (
    Scatterer,
    generate_dataset,
    load_templates,
    scene_for_class,
    synth_recording,
    template_noise_floor,
)
from fert.training import TrainConfig, ablation_e_respd, run_experiment

CFG = default_config()
TRAIN_CFG = TrainConfig(epochs=3, lr=0.01, momentum=0.9, batch_size=32, seed=0, window=200)


def verdict(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.verdicts[num] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def run_a(tmp_path_factory):
    """Criterion 6's full run: dataset generation, training, held-out eval."""
    t0 = time.perf_counter()
    out = tmp_path_factory.mktemp("acceptance_run_a")
    manifest = generate_dataset(CFG, out, per_class=8, n_frames=260, seed=0)
    net, _, report = run_experiment(manifest, CFG, TRAIN_CFG)
    wall = time.perf_counter() - t0
    model = out / "model.ferm"
    write_model(model, net.state())
    sha = hashlib.sha256(model.read_bytes()).hexdigest()
    return SimpleNamespace(net=net, report=report, model_sha=sha, wall_s=wall)


# ---------------------------------------------------------------- 1: DFT oracle

def test_c01_fft_matches_direct_dft():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for n in (64, 128):
        for _ in range(100):
            x = rng.standard_normal((3, 8, n))
            centered = x - x.mean(axis=-1, keepdims=True)
            want = naive_dft(centered * np.hanning(n))[..., : n // 2]
            worst = max(worst, rel_err(range_fft(x), want))
    for n in (64, 128):
        # the longer frame period keeps 128 chirps inside one frame
        cfg = replace(CFG, n_chirps=n, frame_period=0.1)
        shape = (cfg.n_rx, n, cfg.n_samples // 2)
        for _ in range(100):
            prof = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            spec = naive_dft(prof * np.hanning(n)[None, :, None], axis=1)
            want = np.abs(np.fft.fftshift(spec, axes=1)).mean(axis=0).T
            worst = max(worst, rel_err(doppler_fft(prof, cfg).data, want))
    wall = time.perf_counter() - t0
    verdict(
        1,
        worst < 1e-5 and wall < 10.0,
        f"range/doppler transforms vs direct O(N^2) DFT, N=64 and 128, 100 inputs "
        f"each: max rel err {worst:.2e} (limit 1e-5), {wall:.1f} s (limit 10)",
    )


# ---------------------------------------------------------------- 2: MTI

def _zero_doppler_and_peaks(rec: Recording) -> dict:
    """Zero-Doppler energy and off-zero per-frame peaks, with and without MTI."""
    dc = CFG.n_chirps // 2
    state = MtiState()
    stats = {"with": [0.0, []], "without": [0.0, []]}
    for frame in rec.frames:
        prof = range_fft(frame)
        filtered, state = mti(prof, state)
        for key, p in (("without", prof), ("with", filtered)):
            img = doppler_fft(p, CFG).data
            stats[key][0] += float((img[:, dc] ** 2).sum())
            stats[key][1].append(float(np.delete(img, dc, axis=1).max()))
    return stats


def test_c02_mti_clutter_rejection_and_passband():
    t0 = time.perf_counter()
    static = synth_recording(
        CFG, [Scatterer(base_range=0.5)], 50, 0.05, np.random.default_rng(202)
    )
    moving = synth_recording(
        CFG,
        [Scatterer(base_range=0.4, drift_velocity=0.5)],
        50,
        0.05,
        np.random.default_rng(203),
    )
    s = _zero_doppler_and_peaks(static)
    suppression_db = 10.0 * math.log10(s["without"][0] / s["with"][0])
    m = _zero_doppler_and_peaks(moving)
    ratios = np.asarray(m["without"][1]) / np.asarray(m["with"][1])
    peak_loss_db = float(20.0 * np.log10(ratios).max())
    wall = time.perf_counter() - t0
    verdict(
        2,
        suppression_db >= 40.0 and peak_loss_db <= 3.0 and wall < 10.0,
        f"static scene zero-Doppler suppression {suppression_db:.1f} dB (limit >= 40), "
        f"0.5 m/s scatterer worst Doppler-peak loss {peak_loss_db:.3f} dB (limit <= 3), "
        f"{wall:.1f} s (limit 10)",
    )


# ---------------------------------------------------------------- 3: Capon

def test_c03_capon_argmax_and_scale_invariance():
    t0 = time.perf_counter()
    grid = angle_grid()
    ratio = CFG.antenna_spacing / derive_params(CFG).wavelength
    cases = hits = 0
    scale_ok = True
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        for angle in (-30.0, 0.0, 30.0):
            snaps = two_element_snapshots(angle, ratio, 64, snr_db=20.0, rng=rng)
            power, degenerate = capon_spectrum(snaps, ratio, grid)
            assert not degenerate
            got = int(np.argmax(power))
            want = int(np.argmin(np.abs(grid - angle)))
            cases += 1
            hits += abs(got - want) <= 1
            rescaled, _ = capon_spectrum(snaps * 37.5, ratio, grid)
            scale_ok = scale_ok and int(np.argmax(rescaled)) == got
    wall = time.perf_counter() - t0
    verdict(
        3,
        hits == cases and scale_ok and wall < 10.0,
        f"sources at -30/0/+30 deg, 20 dB SNR, 64 snapshots: argmax within 1 bin in "
        f"{hits}/{cases} runs (20 seeds x 3 angles), scale-invariant argmax "
        f"{scale_ok}, {wall:.1f} s (limit 10)",
    )


# ---------------------------------------------------------------- 4: gradients

def _op_suite(seed: int):
    """Every differentiable layer under a random-projection loss."""
    rng = np.random.default_rng(seed)
    bn_eval = BatchNorm2d(3, dtype=np.float64)
    bn_eval._buffers["running_mean"] = rng.standard_normal(3)
    bn_eval._buffers["running_var"] = rng.uniform(0.5, 2.0, 3)
    return [
        ("conv3x3", Conv2d(2, 3, rng, dtype=np.float64), (2, 2, 6, 6), True),
        ("conv1x1s2", Conv2d(3, 2, rng, kernel=1, stride=2, padding=0, dtype=np.float64), (2, 3, 6, 6), True),
        ("conv3x3s2", Conv2d(2, 2, rng, stride=2, dtype=np.float64), (2, 2, 6, 8), True),
        ("batchnorm", BatchNorm2d(3, dtype=np.float64), (4, 3, 5, 5), True),
        ("batchnorm_eval", bn_eval, (2, 3, 4, 4), False),
        ("relu", ReLU(), (2, 3, 6, 6), True),
        ("maxpool", MaxPool2x2(), (2, 2, 6, 6), True),
        ("gap", GlobalAvgPool(), (2, 3, 6, 6), True),
        ("linear", Linear(10, 4, rng, dtype=np.float64), (3, 10), True),
    ]


def _projection_check(module, x, rng, train, n_coords=None):
    proj = rng.standard_normal(module.forward(x, train).shape)

    def loss_fn():
        return float((module.forward(x, train) * proj).sum())

    module.zero_grad()
    module.forward(x, train)
    dx = module.backward(proj)
    triples = [("x", x, dx)]
    triples += [(name, t.data, t.grad) for name, t in module.named_parameters()]
    return check_gradients(
        loss_fn, triples, rng, n_coords=n_coords,
        decisions=lambda: module_decisions(module),
    )


def _full_net_check(seed: int):
    """Reduced classifier, one probed coordinate per parameter tensor."""
    rng = np.random.default_rng(seed)
    net = FertNet(stage_blocks=(1,), rng=seed, dtype=np.float64)
    x = rng.standard_normal((2, 4, 64, 64))
    labels = rng.integers(0, 4, 2)

    def loss_fn():
        return cross_entropy(net.forward(x, train=True), labels)[0]

    net.zero_grad()
    _, dlogits = cross_entropy(net.forward(x, train=True), labels)
    net.backward(dlogits)
    triples = [(name, t.data, t.grad) for name, t in net.named_parameters()]
    return check_gradients(
        loss_fn, triples, rng, n_coords=1,
        decisions=lambda: module_decisions(net),
    )


def _loss_check(seed: int):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, 5)
    _, grad = cross_entropy(logits, labels)

    def loss_fn():
        return cross_entropy(logits, labels)[0]

    return check_gradients(loss_fn, [("logits", logits, grad)], rng)


def test_c04_gradient_suite():
    t0 = time.perf_counter()
    worst = loss_worst = 0.0
    checked = skipped = 0
    for seed in range(5):
        rng = np.random.default_rng(400 + seed)
        for name, module, shape, train in _op_suite(400 + seed):
            # 16 sampled coordinates per tensor; the unit suite checks ops
            # exhaustively, this run just has to fit the time budget
            rep = _projection_check(module, rng.standard_normal(shape), rng, train, n_coords=16)
            worst = max(worst, rep.max_rel_err)
            checked += rep.checked
            skipped += rep.skipped
        rep = _full_net_check(400 + seed)
        worst = max(worst, rep.max_rel_err)
        checked += rep.checked
        skipped += rep.skipped
        loss_worst = max(loss_worst, _loss_check(400 + seed).max_rel_err)
    wall = time.perf_counter() - t0
    verdict(
        4,
        worst < 1e-3 and loss_worst < 1e-6 and wall < 120.0,
        f"central differences over every layer plus the reduced classifier, 5 seeds: "
        f"max rel err {worst:.2e} (limit 1e-3), loss grad {loss_worst:.2e} "
        f"(limit 1e-6), {checked} coords checked / {skipped} skipped at kinks, "
        f"{wall:.0f} s (limit 120)",
    )


# ---------------------------------------------------------------- 5: loss anchor

def test_c05_uniform_logits_loss_anchor():
    loss, _ = cross_entropy(np.zeros((8, 4)), np.arange(8) % 4)
    err = abs(loss - math.log(4.0))
    verdict(
        5,
        err < 1e-9,
        f"uniform logits over 4 classes: loss {loss:.9f} vs ln 4, |err| {err:.1e} (limit 1e-9)",
    )


# ---------------------------------------------------------------- 6: accuracy

def test_c06_synthetic_accuracy(run_a):
    r = run_a.report
    ok = r.average >= 90.0 and r.per_class["noface"] >= 99.0 and run_a.wall_s < 900.0
    verdict(
        6,
        ok,
        f"8 recordings/class (6 train / 2 test), window 200, 3 epochs, batch 32: "
        f"macro {r.average:.2f}% (limit >= 90), noface {r.per_class['noface']:.2f}% "
        f"(limit >= 99), {run_a.wall_s:.0f} s (limit 900)",
    )


# ---------------------------------------------------------------- 7: ablation

def test_c07_integration_ablation(tmp_path):
    t0 = time.perf_counter()
    manifest = generate_dataset(CFG, tmp_path, per_class=3, n_frames=216, seed=0)
    result = ablation_e_respd(manifest, CFG, TRAIN_CFG, off_window=1)
    wall = time.perf_counter() - t0
    delta = result["deltas"]["average"]
    verdict(
        7,
        delta >= 5.0 and wall < 1800.0,
        f"identical seeds, window 200 macro {result['on']['average']:.2f}% vs "
        f"window 1 macro {result['off']['average']:.2f}%: delta {delta:+.2f} points "
        f"(limit >= 5), {wall:.0f} s combined (limit 1800)",
    )


# ---------------------------------------------------------------- 8: latency

def test_c08_realtime_budget(run_a):
    rng = np.random.default_rng(808)
    templates = load_templates()
    rec = synth_recording(
        CFG,
        scene_for_class("smile", rng, templates),
        400,
        template_noise_floor(templates, "smile"),
        rng,
        label="smile",
    )
    result = run_stream(rec, CFG, run_a.net, window=200, realtime=False)
    pct = result.percentiles()
    verdict(
        8,
        pct["p50"] < 50.0 and result.deadline_misses == 0,
        f"400-frame replay, per-frame preprocessing+inference: p50 {pct['p50']:.1f} / "
        f"p95 {pct['p95']:.1f} / p99 {pct['p99']:.1f} ms (median limit 50), "
        f"{result.deadline_misses} deadline misses (limit 0), "
        f"{len(result.predictions)} windows classified",
    )


# ---------------------------------------------------------------- 9: formats

def _random_recording(rng, seed) -> Recording:
    shape = (
        int(rng.integers(1, 4)),
        int(rng.integers(1, 4)),
        int(rng.integers(2, 9)),
        int(rng.integers(2, 17)),
    )
    label = (None, *LABELS)[int(rng.integers(0, 5))]
    return Recording(
        frames=rng.standard_normal(shape).astype(np.float32), label=label, seed=seed
    )


def _random_features(rng):
    shape = (int(rng.integers(1, 4)), 4, int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    label = (None, *LABELS)[int(rng.integers(0, 5))]
    return rng.standard_normal(shape).astype(np.float32), label


def _random_tensors(rng) -> dict:
    out = {}
    for i in range(int(rng.integers(1, 5))):
        rank = int(rng.integers(1, 5))
        shape = tuple(int(rng.integers(1, 5)) for _ in range(rank))
        out[f"layer{i}.t{int(rng.integers(0, 100))}"] = (
            rng.standard_normal(shape).astype(np.float32)
        )
    return out


def test_c09_format_round_trips_and_exit_codes(tmp_path):
    t0 = time.perf_counter()
    mismatches = []
    for seed in range(50):
        rng = np.random.default_rng(900 + seed)

        rec = _random_recording(rng, seed)
        a, b = tmp_path / "a.ferd", tmp_path / "b.ferd"
        write_recording(a, rec)
        write_recording(b, read_recording(a))
        if a.read_bytes() != b.read_bytes():
            mismatches.append(f"ferd seed {seed}")

        windows, label = _random_features(rng)
        a, b = tmp_path / "a.ferf", tmp_path / "b.ferf"
        write_features(a, windows, label)
        write_features(b, *read_features(a))
        if a.read_bytes() != b.read_bytes():
            mismatches.append(f"ferf seed {seed}")

        a, b = tmp_path / "a.ferm", tmp_path / "b.ferm"
        write_model(a, _random_tensors(rng))
        write_model(b, read_model(a))
        if a.read_bytes() != b.read_bytes():
            mismatches.append(f"ferm seed {seed}")

    exit_codes = []
    for suffix, reader in ((".ferd", read_recording), (".ferf", read_features), (".ferm", read_model)):
        intact = (tmp_path / ("a" + suffix)).read_bytes()
        corruptions = {
            2: None,  # missing file
            3: bytes([intact[0] ^ 0xFF]) + intact[1:],  # bad magic
            4: intact[:-3],  # truncated payload
        }
        for want, blob in corruptions.items():
            victim = tmp_path / ("corrupt" + suffix)
            if blob is None:
                victim.unlink(missing_ok=True)
            else:
                victim.write_bytes(blob)
            with pytest.raises(FertError) as exc:
                reader(victim)
            exit_codes.append((suffix, want, exc.value.exit_code))
    bad_codes = [e for e in exit_codes if e[1] != e[2]]
    wall = time.perf_counter() - t0
    verdict(
        9,
        not mismatches and not bad_codes,
        f"150 write-read-write cycles byte-identical (50 seeds per format, "
        f"{len(mismatches)} mismatches); missing/bad-magic/truncated map to exit "
        f"codes 2/3/4 in all three formats ({len(bad_codes)} wrong), {wall:.1f} s",
    )


# ---------------------------------------------------------------- 10: determinism

def test_c10_repeat_run_determinism(run_a, tmp_path_factory):
    t0 = time.perf_counter()
    out = tmp_path_factory.mktemp("acceptance_run_b")
    manifest = generate_dataset(CFG, out, per_class=8, n_frames=260, seed=0)
    net, _, report = run_experiment(manifest, CFG, TRAIN_CFG)
    model = out / "model.ferm"
    write_model(model, net.state())
    sha = hashlib.sha256(model.read_bytes()).hexdigest()
    wall = time.perf_counter() - t0
    same_matrix = bool(np.array_equal(report.matrix, run_a.report.matrix))
    same_model = sha == run_a.model_sha
    verdict(
        10,
        same_matrix and same_model,
        f"full repeat of criterion 6: confusion matrices identical {same_matrix}, "
        f"model sha256 identical {same_model}, {wall:.0f} s",
    )
