import math
from dataclasses import replace

import numpy as np
import pytest

from entangled import autodiff as ad
from entangled.entangle import EntanglementSpec
from entangled.formats import load_checkpoint
from entangled.harness import data as D
from entangled.harness.config import (ConfigError, ExperimentConfig, OptimizerConfig, dumps, loads,
                                      parse_spec)
from entangled.harness.models import build_model, model_from_checkpoint
from entangled.harness.optim import Adam, SGDMomentum, clip_grad_norm
from entangled.harness.sweep import SweepCell, summarize, sweep
from entangled.harness.train import RunMetrics, fit, train

TINY = ExperimentConfig(task="spiral2d", model="res_mlp", depth=2, width=8, epochs=2, batch_size=16,
                        n_train=64, n_test=32, optimizer=OptimizerConfig("sgd_momentum", 0.01, 0.9))


# ---------------------------------------------------------------- data

@pytest.mark.parametrize("task", D.TASKS)
def test_datasets_are_deterministic(task):
    a = D.gen_dataset(task, 3, n_train=20, n_test=10)
    b = D.gen_dataset(task, 3, n_train=20, n_test=10)
    c = D.gen_dataset(task, 4, n_train=20, n_test=10)
    assert np.array_equal(a.train.x, b.train.x) and np.array_equal(a.test.y, b.test.y)
    assert not np.array_equal(a.train.x, c.train.x)
    assert len(a.train) == 20 and len(a.test) == 10
    assert a.train.y.min() >= 0 and a.train.y.max() < a.n_classes


def test_spiral_is_balanced_and_shaped():
    d = D.spiral2d(0)
    assert d.train.x.shape == (1000, 2) and d.test.x.shape == (500, 2)
    assert abs(d.train.y.mean() - 0.5) < 0.01


def test_image_and_sequence_shapes():
    img = D.digits_lite(0, 30, 10)
    assert img.train.x.shape == (30, 14, 14, 1) and img.layout == "image"
    seq = D.seq_pixel(0, 30, 10)
    assert seq.train.x.shape == (30, 196, 1)
    perm = D.permuted_seq_pixel(0, 30, 10)
    assert np.allclose(np.sort(perm.train.x, axis=1), np.sort(D.seq_pixel(0, 30, 10).train.x, axis=1))


def test_copy_memory_structure():
    d = D.copy_memory(0, 50, 10)
    tokens = d.train.x.argmax(-1)
    length = D.COPY_T + 2 * D.COPY_K
    assert tokens.shape == (50, length)
    assert np.array_equal(d.train.y[:, -D.COPY_K:], tokens[:, :D.COPY_K])
    assert np.all(d.train.y[:, :-D.COPY_K] == D.BLANK)
    assert np.all(tokens[:, length - D.COPY_K - 1] == D.DELIM)
    assert d.score_from == length - D.COPY_K and d.per_step


def test_unknown_task():
    with pytest.raises(D.DatasetError):
        D.gen_dataset("mnist", 0)


# ---------------------------------------------------------------- config

def test_config_roundtrip():
    cfg = replace(TINY, sweep_specs=(parse_spec("kind=dense gamma=0.25"), parse_spec("kind=orthogonal seed=4")),
                  entanglement=EntanglementSpec("channel", 0.5, kernel_size=3), model="res_cnn",
                  task="digits_lite")
    assert loads(dumps(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[experiment]\ntask = spiral2d\nwidht = 3\n",
    "[experimnt]\ntask = spiral2d\n",
    "[experiment]\ntask = spiral2d\nmodel = lstm\n",
    "[experiment]\ntask = spiral2d\n[entanglement]\nkind = dense\ngamma = 2\n",
    "[experiment]\ntask = spiral2d\ndepth = zero\n",
    "[experiment]\ntask = spiral2d\n[sweep]\nspecs = kind=dense gama=0.1\n",
    "no sections at all",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_config_defaults_and_digest():
    cfg = loads("[experiment]\ntask = copy_memory\nmodel = lstm\n")
    assert cfg.optimizer.name == "adam"
    assert cfg.digest() == replace(cfg, seeds=(5, 6), output_dir="x").digest()
    assert cfg.digest() != replace(cfg, width=7).digest()


# ---------------------------------------------------------------- optim

def test_sgd_and_adam_minimise_quadratic():
    for opt_cls, kw in ((SGDMomentum, {"lr": 0.05}), (Adam, {"lr": 0.1})):
        p = ad.parameter(np.array([3.0, -2.0]))
        opt = opt_cls([p], **kw)
        for _ in range(300):
            p.grad = None
            ad.backward(ad.sum_(ad.mul(p, p)))
            opt.step()
        assert np.linalg.norm(p.data) < 1e-2


def test_clip_grad_norm():
    a, b = ad.parameter(np.zeros(2)), ad.parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert np.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2)) == pytest.approx(1.0)


# ---------------------------------------------------------------- models / training

@pytest.mark.parametrize("model,task,spec", [
    ("res_mlp", "spiral2d", EntanglementSpec("dense", 0.1)),
    ("res_mlp", "digits_lite", EntanglementSpec("orthogonal", seed=1)),
    ("res_cnn", "digits_lite", EntanglementSpec("channel_spatial", 0.3)),
    ("transformer", "digits_lite", EntanglementSpec("spatial", 0.2)),
    ("transformer", "copy_memory", EntanglementSpec("channel", 0.2)),
    ("lstm", "seq_pixel", EntanglementSpec("dense", 0.1)),
    ("lstm", "copy_memory", EntanglementSpec("none")),
])
def test_model_forward_shapes(model, task, spec):
    data = D.gen_dataset(task, 0, 4, 2)
    cfg = ExperimentConfig(task=task, model=model, depth=2, width=4, entanglement=spec)
    m = build_model(cfg, data, 0)
    out = m.forward(data.train.x[:3])
    want = (3, data.train.y.shape[1], data.n_classes) if data.per_step else (3, data.n_classes)
    assert out.shape == want


def test_fit_is_deterministic_and_records_epoch_zero():
    m1, _ = fit(TINY, 0)
    m2, _ = fit(TINY, 0)
    assert [r.epoch for r in m1.epochs] == [0, 1, 2]
    assert m1.epochs == m2.epochs
    assert m1.operator_hash_before == m1.operator_hash_after


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_recorded():
    cfg = replace(TINY, optimizer=OptimizerConfig("sgd_momentum", 1e6, 0.9), epochs=5)
    m, _ = fit(cfg, 0)
    assert m.status.startswith("diverged@epoch") and m.failed
    assert len(m.epochs) < 6


def test_train_writes_outputs_and_checkpoint_reloads(tmp_path):
    metrics = train(TINY, 1, tmp_path)
    assert (tmp_path / "metrics.csv").read_text().startswith("epoch,train_loss,train_acc,test_acc\n")
    assert (tmp_path / "run.json").exists()
    blocks, tensors, meta = load_checkpoint((tmp_path / "final.ckpt").read_text())
    model = model_from_checkpoint(meta["model"], blocks, tensors)
    data = D.gen_dataset(TINY.task, 1, TINY.n_train, TINY.n_test)
    _, trained = fit(TINY, 1, data)
    assert np.array_equal(model.forward(data.test.x).data, trained.forward(data.test.x).data)
    assert metrics.best_test_acc >= metrics.epochs[0].test_acc - 1e-12


def test_summary_statistics():
    cells = []
    for seed, acc in enumerate([0.5, 0.7, 0.9]):
        m = RunMetrics(seed, "h")
        m.epochs = [type("R", (), {"test_acc": acc})()]
        cells.append(SweepCell(0, EntanglementSpec(), seed, m))
    cells.append(SweepCell(1, EntanglementSpec("none"), 0, error="boom"))
    rows = summarize(cells, 2)
    assert rows[0]["mean_acc"] == pytest.approx(0.7) and rows[0]["std_acc"] == pytest.approx(0.2)
    assert rows[1]["failures"] == 1 and math.isnan(rows[1]["mean_acc"])


def test_sweep_records_failures_and_continues(tmp_path, monkeypatch):
    import entangled.harness.sweep as S

    real_fit = S.fit

    def flaky(cfg, seed, data=None):
        if cfg.entanglement.kind == "none":
            raise RuntimeError("injected")
        return real_fit(cfg, seed, data)

    monkeypatch.setattr(S, "fit", flaky)
    cells, rows = sweep(replace(TINY, epochs=1), specs=[EntanglementSpec(), EntanglementSpec("none")],
                        seeds=[0, 1], out_dir=tmp_path)
    assert [r["failures"] for r in rows] == [0, 2]
    assert (tmp_path / "summary.csv").exists()
    assert len(list((tmp_path / "runs").iterdir())) == 2
