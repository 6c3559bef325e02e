"""Acceptance suite: one recorded PASS/FAIL line per criterion."""

import json
import struct
import time

import numpy as np
import pytest

from spectrack.bench import TRAIN_SEEDS, fit_weights, make_suite
from spectrack.cli import main
from spectrack.errors import FormatError
from spectrack.io import load_volume, save_volume, write_sequence
from spectrack.learning import TrainConfig, combiner_gradient, train_combiner
from spectrack.metrics import evaluate, iou
from spectrack.spectral import (
    CombinerWeights,
    SpectralParams,
    build_dense_adjacency,
    oracle_step,
    spectral_iteration,
)
from spectrack.tracking import track_median, track_sequence
from spectrack.volume import BBox, l2_normalize


def test_oracle_equivalence(criterion):
    start = time.perf_counter()
    worst = 0.0
    n = 120
    for seed in range(n):
        rng = np.random.default_rng(seed)
        T, H, W = (int(v) for v in rng.integers(1, [5, 9, 9]))
        params = SpectralParams(
            alpha=float(rng.choice([0.5, 1.0, 2.0])),
            p=float(rng.choice([0.5, 1.0, 2.0])),
            radius_t=1,
            radius_s=1,
        )
        s, f, x = (rng.random((T, H, W)).astype(np.float32) for _ in range(3))
        M = build_dense_adjacency(s, f, params)
        for _ in range(3):
            fast = spectral_iteration(x, s, f, params)
            dense = oracle_step(x, M)
            worst = max(worst, float(np.max(np.abs(fast - dense))))
            x = fast
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 30
    criterion("1 oracle equivalence", ok, f"{n} instances, max diff {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_eigenvector_convergence(criterion):
    start = time.perf_counter()
    worst = 1.0
    n = 24
    for seed in range(n):
        rng = np.random.default_rng(1000 + seed)
        T, H, W = (int(v) for v in rng.integers(1, [5, 9, 9]))
        params = SpectralParams(alpha=1.0, p=float(rng.choice([0.5, 1.0, 2.0])), radius_t=1, radius_s=1)
        s = (0.1 + 0.9 * rng.random((T, H, W))).astype(np.float32)
        f = np.full((T, H, W), 0.5, dtype=np.float32)
        x = rng.random((T, H, W)).astype(np.float32) + 0.1
        for _ in range(200):
            x = spectral_iteration(x, s, f, params)
        M = build_dense_adjacency(s, f, params)
        vals, vecs = np.linalg.eigh(M.entries)
        lead = vecs[:, np.argmax(vals)]
        cos = abs(float(np.dot(l2_normalize(x).ravel().astype(np.float64), lead)))
        worst = min(worst, cos)
    elapsed = time.perf_counter() - start
    ok = worst >= 1 - 1e-6 and elapsed < 60
    criterion("2 eigenvector convergence", ok, f"{n} instances, min cos {worst:.9f}, {elapsed:.1f}s")
    assert ok


def _loss(cs, w, b, gt):
    z = np.tensordot(w, cs.astype(np.float64), axes=1) + b
    p = 1.0 / (1.0 + np.exp(-z))
    return float(np.mean(-(gt * np.log(p) + (1 - gt) * np.log(1 - p))))


def test_gradient_correctness(criterion):
    h = 1e-4
    worst = 0.0
    n = 60
    for seed in range(n):
        rng = np.random.default_rng(seed)
        C = int(rng.integers(1, 6))
        shape = tuple(int(v) for v in rng.integers(1, [4, 7, 7]))
        cs = rng.random((C,) + shape).astype(np.float32)
        gt = (rng.random(shape) < 0.4).astype(np.float32)
        w, b = rng.normal(size=C), float(rng.normal())
        gw, gb = combiner_gradient(cs, CombinerWeights(w, b), gt)
        analytic = np.append(gw, gb)
        theta = np.append(w, b)
        numeric = np.zeros_like(theta)
        for i in range(len(theta)):
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            numeric[i] = (_loss(cs, up[:-1], up[-1], gt) - _loss(cs, dn[:-1], dn[-1], gt)) / (2 * h)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(rel))
    ok = worst < 1e-4
    criterion("3 gradient correctness", ok, f"{n} instances, max rel err {worst:.2e}")
    assert ok


def test_convex_descent(criterion):
    rng = np.random.default_rng(7)
    data = [
        (rng.random((4, 3, 8, 8)).astype(np.float32), (rng.random((3, 8, 8)) < 0.3).astype(np.float32))
        for _ in range(3)
    ]
    _, history = train_combiner(data, TrainConfig(learning_rate=1e-2, epochs=100))
    rises = np.diff(history)
    ok = len(history) == 101 and bool(np.all(rises <= 1e-9))
    criterion("4 convex descent", ok, f"100 epochs, max step change {rises.max():+.2e}")
    assert ok


def test_metric_exactness(criterion):
    a = BBox(0, 0, 10, 10)
    checks = [
        iou(a, a) == 1.0,
        iou(a, BBox(20, 20, 30, 30)) == 0.0,
        iou(a, BBox(0, 5, 10, 15)) == 1 / 3,
    ]
    gt = [BBox(t, 2 * t, t + 6, 2 * t + 5) for t in range(12)]
    r = evaluate(gt, gt)
    checks += [r.ao == 1, r.sr50 == 1, r.sr75 == 1, r.prec == 1, r.auc == 100 / 101]
    ok = all(checks)
    criterion("5 metric exactness", ok, f"auc {r.auc!r}")
    assert ok


def test_synthetic_ensemble_gain(criterion):
    train = make_suite(TRAIN_SEEDS)
    full_w = fit_weights(train)[0]
    plain_w = fit_weights(train, spectral=False)[0]
    wins, lines = 0, []
    for seq in make_suite():
        frames = list(seq.channels)
        full = evaluate(track_sequence(frames, seq.init, full_w), seq.gt).ao
        plain = evaluate(track_sequence(frames, seq.init, plain_w, spectral=False), seq.gt).ao
        med = evaluate(track_median(frames, seq.init), seq.gt).ao
        wins += full >= med and full >= plain
        lines.append(f"{full:.3f}/{plain:.3f}/{med:.3f}")
    ok = wins >= 8
    criterion("6 synthetic ensemble gain", ok, f"{wins}/10 sequences (full/no-refine/median: {' '.join(lines)})")
    assert ok


def test_ablation_harness(criterion, tmp_path, capsys):
    manifests = [str(write_sequence(s, tmp_path / f"s{i}")) for i, s in enumerate(make_suite())]
    train = [str(write_sequence(s, tmp_path / f"t{i}")) for i, s in enumerate(make_suite(TRAIN_SEEDS))]
    argv = ["ablate", "--iters", "1..5", "--channels-subsets", "best-1,top-3,all-5,median"]
    for m in manifests:
        argv += ["--manifest", m]
    for m in train:
        argv += ["--train", m]
    start = time.perf_counter()
    code = main(argv)
    elapsed = time.perf_counter() - start
    rows = json.loads(capsys.readouterr().out)["rows"]
    names = {r["name"] for r in rows}
    expected = {f"{s}/iter{n}" for s in ("best-1", "top-3", "all-5") for n in range(1, 6)}
    expected |= {"median", "no-refinement"}
    ok = code == 0 and names == expected and elapsed < 300
    criterion("7 ablation harness", ok, f"{len(rows)} rows, {elapsed:.1f}s")
    assert ok


CORRUPTIONS = {
    "magic": lambda r: b"XXXX" + r[4:],
    "version": lambda r: r[:4] + struct.pack("<H", 7) + r[6:],
    "dtype": lambda r: r[:6] + b"\x03" + r[7:],
    "header": lambda r: r[:12],
    "payload length": lambda r: r[:-1],
    "dims": lambda r: r[:7] + struct.pack("<3I", 0, 2, 2) + r[19:],
}


def test_format_fidelity(criterion, tmp_path):
    rng = np.random.default_rng(99)
    path = tmp_path / "v.sfvl"
    identical = 0
    for _ in range(1000):
        shape = tuple(int(v) for v in rng.integers(1, [6, 10, 10]))
        v = (rng.standard_normal(shape) * 10.0 ** rng.integers(-30, 30)).astype(np.float32)
        save_volume(v, path)
        identical += load_volume(path).tobytes() == v.tobytes()
    rejected = 0
    for field, mutate in CORRUPTIONS.items():
        save_volume(np.ones((2, 2, 2)), path)
        path.write_bytes(mutate(path.read_bytes()))
        try:
            load_volume(path)
        except FormatError as exc:
            rejected += exc.field == field
    ok = identical == 1000 and rejected == len(CORRUPTIONS)
    criterion("8 format fidelity", ok, f"{identical}/1000 round-trips, {rejected}/{len(CORRUPTIONS)} corrupt headers")
    assert ok
