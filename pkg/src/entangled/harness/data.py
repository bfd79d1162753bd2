"""Synthetic, seed-deterministic datasets.

All generators draw from ``numpy.random.default_rng`` seeded with
``[seed, stream]`` so that every task has its own reproducible stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TASKS = ("spiral2d", "digits_lite", "seq_pixel", "permuted_seq_pixel", "copy_memory")

_STREAMS = {"spiral2d": 11, "digits_lite": 12, "permutation": 13, "copy_memory": 14}

IMAGE_SIZE = 14
COPY_SYMBOLS = 8
COPY_K = 3
COPY_T = 50
BLANK = COPY_SYMBOLS
DELIM = COPY_SYMBOLS + 1


class DatasetError(ValueError):
    pass


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class Dataset:
    """Train/test splits plus the metadata a model needs to fit them.

    ``layout`` is ``vector`` ``(N, F)``, ``image`` ``(N, H, W, C)`` or
    ``sequence`` ``(N, L, F)``. With ``per_step`` the labels are ``(N, L)``
    and accuracy is scored on steps ``score_from`` onwards.
    """

    task: str
    train: Split
    test: Split
    n_classes: int
    layout: str
    per_step: bool = False
    score_from: int = 0

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.train.x.shape[1:]


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAMS[stream]])


def spiral2d(seed: int, n_train: int = 1000, n_test: int = 500, noise: float = 0.1) -> Dataset:
    """Two interleaved spirals of 1.5 turns, radius up to 2, Gaussian noise ``noise``."""
    rng = _rng(seed, "spiral2d")

    def draw(n):
        labels = np.arange(n) % 2
        rng.shuffle(labels)
        t = rng.uniform(0.05, 1.0, n)
        angle = 3.0 * np.pi * t + np.pi * labels
        pts = 2.0 * t[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        pts += rng.normal(0.0, noise, pts.shape)
        return Split(pts, labels.astype(np.int64))

    return Dataset("spiral2d", draw(n_train), draw(n_test), 2, "vector")


# Glyph strokes on a unit box, (x0, y0, x1, y1), y pointing down.
_A, _B, _C, _D = (0.2, 0.1), (0.8, 0.1), (0.2, 0.5), (0.8, 0.5)
_E, _F = (0.2, 0.9), (0.8, 0.9)
_GLYPHS = {
    0: [(_A, _B), (_B, _F), (_F, _E), (_E, _A)],
    1: [((0.5, 0.1), (0.5, 0.9)), ((0.3, 0.3), (0.5, 0.1))],
    2: [(_A, _B), (_B, _D), (_D, _C), (_C, _E), (_E, _F)],
    3: [(_A, _B), (_B, _F), (_F, _E), (_C, _D)],
    4: [(_A, _C), (_C, _D), (_B, _F)],
    5: [(_B, _A), (_A, _C), (_C, _D), (_D, _F), (_F, _E)],
    6: [(_B, _A), (_A, _E), (_E, _F), (_F, _D), (_D, _C)],
    7: [(_A, _B), (_B, (0.4, 0.9))],
    8: [(_A, _B), (_B, _F), (_F, _E), (_E, _A), (_C, _D)],
    9: [(_D, _C), (_C, _A), (_A, _B), (_B, _F), (_F, _E)],
}


def render_glyphs(labels: np.ndarray, rng: np.random.Generator, size: int = IMAGE_SIZE,
                  noise: float = 0.25) -> np.ndarray:
    """Render digit strokes with random affine jitter, stroke width and pixel noise."""
    n = len(labels)
    max_seg = max(len(s) for s in _GLYPHS.values())
    seg = np.zeros((n, max_seg, 4))
    present = np.zeros((n, max_seg), dtype=bool)
    for d, strokes in _GLYPHS.items():
        rows = labels == d
        for j, (p0, p1) in enumerate(strokes):
            seg[rows, j] = (*p0, *p1)
            present[rows, j] = True
    # random similarity transform about the glyph centre, plus shear
    angle = rng.uniform(-0.25, 0.25, n)
    scale = rng.uniform(0.75, 1.05, n)
    shear = rng.uniform(-0.2, 0.2, n)
    shift = rng.uniform(-0.1, 0.1, (n, 2))
    cos, sin = np.cos(angle) * scale, np.sin(angle) * scale
    pts = seg.reshape(n, max_seg, 2, 2) - 0.5
    px = pts[..., 0] + shear[:, None, None] * pts[..., 1]
    py = pts[..., 1]
    tx = cos[:, None, None] * px - sin[:, None, None] * py + 0.5 + shift[:, 0, None, None]
    ty = sin[:, None, None] * px + cos[:, None, None] * py + 0.5 + shift[:, 1, None, None]
    p0 = np.stack([tx[..., 0], ty[..., 0]], -1) * size
    p1 = np.stack([tx[..., 1], ty[..., 1]], -1) * size
    coords = np.stack(np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="xy"), -1)
    grid = coords.reshape(1, 1, -1, 2)
    a, b = p0[:, :, None, :], p1[:, :, None, :]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, -1), 1e-12)
    t = np.clip(np.sum((grid - a) * ab, -1) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    dist2 = np.sum((grid - closest) ** 2, -1)
    dist2 = np.where(present[:, :, None], dist2, np.inf)
    width = rng.uniform(0.6, 1.1, n)[:, None]
    img = np.exp(-dist2.min(axis=1) / (2.0 * width**2))
    img += rng.normal(0.0, noise, img.shape)
    return img.reshape(n, size, size, 1)


def digits_lite(seed: int, n_train: int = 5000, n_test: int = 1000) -> Dataset:
    """Ten-class 14x14 glyph images, one channel."""
    rng = _rng(seed, "digits_lite")

    def draw(n):
        labels = np.arange(n) % 10
        rng.shuffle(labels)
        return Split(render_glyphs(labels, rng), labels.astype(np.int64))

    train = draw(n_train)
    test = draw(n_test)
    return Dataset("digits_lite", train, test, 10, "image")


def pixel_permutation(seed: int, length: int = IMAGE_SIZE * IMAGE_SIZE) -> np.ndarray:
    return _rng(seed, "permutation").permutation(length)


def seq_pixel(seed: int, n_train: int = 5000, n_test: int = 1000, permutation=None) -> Dataset:
    """``digits_lite`` read pixel by pixel as length-196 sequences of one feature.

    ``permutation`` reorders the time axis identically for train and test.
    """
    base = digits_lite(seed, n_train, n_test)

    def flat(split):
        x = split.x.reshape(len(split), -1, 1)
        if permutation is not None:
            x = x[:, np.asarray(permutation)]
        return Split(x, split.y)

    task = "seq_pixel" if permutation is None else "permuted_seq_pixel"
    return Dataset(task, flat(base.train), flat(base.test), 10, "sequence")


def permuted_seq_pixel(seed: int, n_train: int = 5000, n_test: int = 1000, permutation=None) -> Dataset:
    perm = pixel_permutation(seed) if permutation is None else permutation
    return seq_pixel(seed, n_train, n_test, permutation=perm)


def copy_memory(seed: int, n_train: int = 2000, n_test: int = 500, k: int = COPY_K,
                delay: int = COPY_T) -> Dataset:
    """Recall ``k`` symbols after ``delay`` blank steps.

    Inputs are one-hot over ``COPY_SYMBOLS`` symbols, blank and delimiter; the
    sequence has ``delay + 2k`` steps. Targets are blank everywhere except the
    last ``k`` steps, which must reproduce the first ``k`` inputs. The
    delimiter marks the step just before that recall window.
    """
    rng = _rng(seed, "copy_memory")
    length = delay + 2 * k

    def draw(n):
        symbols = rng.integers(0, COPY_SYMBOLS, (n, k))
        tokens = np.full((n, length), BLANK)
        tokens[:, :k] = symbols
        tokens[:, length - k - 1] = DELIM
        targets = np.full((n, length), BLANK)
        targets[:, length - k:] = symbols
        x = np.eye(COPY_SYMBOLS + 2)[tokens]
        return Split(x, targets.astype(np.int64))

    return Dataset("copy_memory", draw(n_train), draw(n_test), COPY_SYMBOLS + 1, "sequence",
                   per_step=True, score_from=length - k)


def gen_dataset(task: str, seed: int, n_train: int | None = None, n_test: int | None = None) -> Dataset:
    """Build the train/test splits of ``task`` for ``seed`` (sizes overridable)."""
    builders = {
        "spiral2d": spiral2d,
        "digits_lite": digits_lite,
        "seq_pixel": seq_pixel,
        "permuted_seq_pixel": permuted_seq_pixel,
        "copy_memory": copy_memory,
    }
    if task not in builders:
        raise DatasetError(f"unknown task {task!r}; expected one of {TASKS}")
    kwargs = {}
    if n_train is not None:
        kwargs["n_train"] = n_train
    if n_test is not None:
        kwargs["n_test"] = n_test
    return builders[task](seed, **kwargs)
