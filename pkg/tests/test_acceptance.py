"""Acceptance criteria 1-11, one recorded PASS/FAIL line each.

Criteria 8-10 train small models; criterion 9 takes roughly 15-20 minutes on
one CPU core.
"""
import time
from dataclasses import replace
from pathlib import Path

from conftest import record
from entangled import checks
from entangled.harness.cli import main
from entangled.harness.config import load
from entangled.harness.sweep import sweep
from entangled.harness.train import fit, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _timed(fn, *args):
    t0 = time.perf_counter()
    ok, detail = fn(*args)
    return ok, detail, time.perf_counter() - t0


def test_criterion_01_dense_spectrum():
    ok, detail, t = _timed(checks.check_spectrum, checks.Constructors())
    ok = ok and t < 5.0
    record(1, ok, f"{detail}; {t:.2f}s (limit 5s)")
    assert ok


def test_criterion_02_orthogonality():
    ok, detail, t = _timed(checks.check_orthogonality, checks.Constructors())
    ok = ok and t < 30.0
    record(2, ok, f"{detail}; {t:.2f}s (limit 30s)")
    assert ok


def test_criterion_03_identity_reduction():
    ok, detail, t = _timed(checks.check_identity_reduction, 50)
    ok = ok and t < 60.0
    record(3, ok, f"{detail} (limits 1e-15 / 1e-12); {t:.2f}s (limit 60s)")
    assert ok


def test_criterion_04_jacobian():
    ok, detail, _ = _timed(checks.check_jacobian, 10)
    record(4, ok, f"{detail} (limit 1e-12)")
    assert ok


def test_criterion_05_gradients():
    ok, detail, t = _timed(checks.check_gradients, 20, 1e-4)
    ok = ok and t < 300.0
    record(5, ok, f"{detail}; {t:.1f}s (limit 300s)")
    assert ok


def test_criterion_06_sandwich():
    ok, detail, t = _timed(checks.check_sandwich, checks.Constructors(), 1000)
    ok = ok and t < 30.0
    record(6, ok, f"{detail}; {t:.2f}s (limit 30s)")
    assert ok


def test_criterion_07_kernel_mass():
    ok, detail, _ = _timed(checks.check_mass, checks.Constructors())
    record(7, ok, detail)
    assert ok


def test_criterion_08_gamma_zero_lstm_trains():
    cfg = load(CONFIGS / "copy_lstm_none.ini")
    assert cfg.entanglement.kind == "none" and len(cfg.seeds) == 3
    drops, times = [], []
    for seed in cfg.seeds:
        t0 = time.process_time()
        metrics, _ = fit(cfg, seed)
        times.append(time.process_time() - t0)
        first, last = metrics.epochs[0].train_loss, metrics.epochs[-1].train_loss
        drops.append(1.0 - last / first)
        assert not metrics.failed
    ok = min(drops) >= 0.5 and max(times) < 180.0
    record(8, ok, f"loss reduction per seed {[round(d, 3) for d in drops]} (>= 0.5); "
                  f"max CPU {max(times):.1f}s (limit 180s)")
    assert ok


def test_criterion_09_directional_trend(tmp_path):
    cfg = load(CONFIGS / "digits_cnn_trend.ini")
    assert cfg.depth == 6 and len(cfg.seeds) == 5
    t0 = time.process_time()
    cells, rows = sweep(cfg, out_dir=tmp_path)
    cpu = time.process_time() - t0
    acc = {r["spec"]: r["mean_acc"] for r in rows}
    base, channel, spatial = acc["identity"], acc["channel(gamma=1,k=1)"], acc["spatial(gamma=0.1,k=3)"]
    ok = channel < base and spatial >= base - 0.005 and cpu < 1800.0
    record(9, ok, f"mean acc baseline {base:.4f}, channel g=1 {channel:.4f}, spatial g=0.1 {spatial:.4f}; "
                  f"CPU {cpu / 60:.1f} min (limit 30)")
    assert not any(c.failed for c in cells)
    assert ok


def test_criterion_10_determinism(tmp_path):
    cfg = replace(load(CONFIGS / "spiral_mlp.ini"), epochs=5)
    train(cfg, 7, tmp_path / "a")
    train(cfg, 7, tmp_path / "b")
    same_metrics = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    same_ckpt = (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    kernels = []
    for name in ("k1", "k2"):
        assert main(["make-kernel", "--kind", "orthogonal_channel", "--channels", "8", "--spec-seed", "11",
                     "--out", str(tmp_path / name)]) == 0
        kernels.append((tmp_path / name).read_bytes())
    ok = same_metrics and same_ckpt and kernels[0] == kernels[1]
    record(10, ok, f"metrics csv identical={same_metrics}, checkpoint identical={same_ckpt}, "
                   f"kernel file identical={kernels[0] == kernels[1]}")
    assert ok


def test_criterion_11_check_command(capsys):
    clean = main(["check"])
    perturbed = {kind: main(["check", "--perturb", kind]) for kind in checks.PERTURBABLE}
    capsys.readouterr()
    ok = clean == 0 and all(code == 1 for code in perturbed.values())
    record(11, ok, f"clean exit {clean}; perturbed exits {perturbed}")
    assert ok
