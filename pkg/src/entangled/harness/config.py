"""Experiment configuration: flat ``key = value`` sections parsed with configparser.

Example::

    [experiment]
    task = spiral2d
    model = res_mlp
    depth = 4
    width = 32
    epochs = 30
    batch_size = 32
    seeds = 0, 1, 2
    output_dir = runs/spiral

    [entanglement]
    kind = dense
    gamma = 0.1

    [optimizer]
    name = sgd_momentum
    lr = 0.05
    momentum = 0.9

    [sweep]
    specs = kind=identity; kind=dense gamma=0.1; kind=none

Unknown sections or keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..entangle import EntanglementSpec, SpecError
from .data import TASKS

MODELS = ("res_mlp", "res_cnn", "transformer", "lstm")
OPTIMIZERS = ("sgd_momentum", "adam")
COMPATIBLE = {
    "res_mlp": ("spiral2d", "digits_lite"),
    "res_cnn": ("digits_lite",),
    "transformer": ("digits_lite", "seq_pixel", "permuted_seq_pixel", "copy_memory"),
    "lstm": ("seq_pixel", "permuted_seq_pixel", "copy_memory"),
}
DEFAULT_LR = {"sgd_momentum": 0.05, "adam": 5e-4}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "sgd_momentum"
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "spiral2d"
    model: str = "res_mlp"
    depth: int = 4
    width: int = 32
    hidden: int | None = None
    entanglement: EntanglementSpec = field(default_factory=EntanglementSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 10
    batch_size: int = 32
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    n_train: int | None = None
    n_test: int | None = None
    lstm_mode: str = "gated"
    residual_gain: float = 1.0
    checkpoint_every: int = 0
    sweep_specs: tuple[EntanglementSpec, ...] = ()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.task not in COMPATIBLE[self.model]:
            raise ConfigError(f"model {self.model} cannot run task {self.task}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.width < 1:
            raise ConfigError("width must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any(not 0 <= s < 2**64 for s in self.seeds):
            raise ConfigError("seeds must be unsigned 64-bit integers")
        if self.optimizer.name not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer.name!r}")
        if self.optimizer.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.model == "res_mlp" and self.entanglement.kind in ("spatial", "channel_spatial"):
            raise ConfigError("spatial entanglement needs a convolutional or sequence model")

    def with_entanglement(self, spec: EntanglementSpec) -> "ExperimentConfig":
        return replace(self, entanglement=spec)

    def digest(self) -> str:
        """Short stable hash of everything that affects a run except seeds and output."""
        d = asdict(self)
        for key in ("seeds", "output_dir", "sweep_specs"):
            d.pop(key)
        return hashlib.sha256(repr(sorted(d.items())).encode()).hexdigest()[:12]


def parse_spec(text: str) -> EntanglementSpec:
    """``kind=dense gamma=0.1`` style spec; unspecified fields keep their defaults."""
    items = {}
    for item in text.split():
        if "=" not in item:
            raise ConfigError(f"bad spec token {item!r}; expected key=value")
        k, v = item.split("=", 1)
        items[k] = v
    unknown = set(items) - {"kind", "gamma", "k", "kernel_size", "c", "n", "seed"}
    if unknown:
        raise ConfigError(f"unknown spec keys {sorted(unknown)}")
    try:
        k = items.get("kernel_size", items.get("k"))
        return EntanglementSpec(
            kind=items.get("kind", "identity"),
            gamma=float(items.get("gamma", 0.0)),
            kernel_size=None if k in (None, "-") else int(k),
            seed=int(items.get("seed", 0)),
        )
    except (SpecError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


_SECTIONS = {
    "experiment": {"task", "model", "depth", "width", "hidden", "epochs", "batch_size", "seeds",
                   "output_dir", "n_train", "n_test", "lstm_mode", "residual_gain", "checkpoint_every"},
    "entanglement": {"kind", "gamma", "kernel_size", "seed"},
    "optimizer": {"name", "lr", "momentum", "clip_norm"},
    "sweep": {"specs"},
}


def loads(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(parser[section]) - _SECTIONS[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    ex = parser["experiment"]
    try:
        ent = parser["entanglement"] if parser.has_section("entanglement") else {}
        ks = ent.get("kernel_size")
        spec = EntanglementSpec(
            kind=ent.get("kind", "identity"),
            gamma=float(ent.get("gamma", 0.0)),
            kernel_size=int(ks) if ks else None,
            seed=int(ent.get("seed", 0)),
        )
        opt = parser["optimizer"] if parser.has_section("optimizer") else {}
        name = opt.get("name", "adam" if ex.get("model") == "lstm" else "sgd_momentum")
        optimizer = OptimizerConfig(
            name=name,
            lr=float(opt.get("lr", DEFAULT_LR.get(name, 0.05))),
            momentum=float(opt.get("momentum", 0.9)),
            clip_norm=float(opt.get("clip_norm", 0.0)),
        )
        sweep = ()
        if parser.has_section("sweep") and parser["sweep"].get("specs", "").strip():
            sweep = tuple(parse_spec(s) for s in parser["sweep"]["specs"].split(";") if s.strip())

        def opt_int(key):
            v = ex.get(key)
            return int(v) if v not in (None, "") else None

        return ExperimentConfig(
            task=ex.get("task", "spiral2d"),
            model=ex.get("model", "res_mlp"),
            depth=int(ex.get("depth", 4)),
            width=int(ex.get("width", 32)),
            hidden=opt_int("hidden"),
            entanglement=spec,
            optimizer=optimizer,
            epochs=int(ex.get("epochs", 10)),
            batch_size=int(ex.get("batch_size", 32)),
            seeds=tuple(int(s) for s in ex.get("seeds", "0").replace(",", " ").split()),
            output_dir=ex.get("output_dir", "runs"),
            n_train=opt_int("n_train"),
            n_test=opt_int("n_test"),
            lstm_mode=ex.get("lstm_mode", "gated"),
            residual_gain=float(ex.get("residual_gain", 1.0)),
            checkpoint_every=int(ex.get("checkpoint_every", 0)),
            sweep_specs=sweep,
        )
    except (SpecError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def dumps(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` back to the file format (round-trips through :func:`loads`)."""
    spec = cfg.entanglement
    lines = [
        "[experiment]",
        f"task = {cfg.task}",
        f"model = {cfg.model}",
        f"depth = {cfg.depth}",
        f"width = {cfg.width}",
    ]
    if cfg.hidden is not None:
        lines.append(f"hidden = {cfg.hidden}")
    lines += [
        f"epochs = {cfg.epochs}",
        f"batch_size = {cfg.batch_size}",
        "seeds = " + ", ".join(str(s) for s in cfg.seeds),
        f"output_dir = {cfg.output_dir}",
    ]
    if cfg.n_train is not None:
        lines.append(f"n_train = {cfg.n_train}")
    if cfg.n_test is not None:
        lines.append(f"n_test = {cfg.n_test}")
    lines += [
        f"lstm_mode = {cfg.lstm_mode}",
        f"residual_gain = {cfg.residual_gain!r}",
        f"checkpoint_every = {cfg.checkpoint_every}",
        "",
        "[entanglement]",
        f"kind = {spec.kind}",
        f"gamma = {spec.gamma!r}",
    ]
    if spec.kernel_size is not None:
        lines.append(f"kernel_size = {spec.kernel_size}")
    lines += [
        f"seed = {spec.seed}",
        "",
        "[optimizer]",
        f"name = {cfg.optimizer.name}",
        f"lr = {cfg.optimizer.lr!r}",
        f"momentum = {cfg.optimizer.momentum!r}",
        f"clip_norm = {cfg.optimizer.clip_norm!r}",
    ]
    if cfg.sweep_specs:
        lines += ["", "[sweep]", "specs = " + "; ".join(spec_token(s) for s in cfg.sweep_specs)]
    return "\n".join(lines) + "\n"


def spec_token(spec: EntanglementSpec) -> str:
    parts = [f"kind={spec.kind}"]
    if spec.gamma:
        parts.append(f"gamma={spec.gamma!r}")
    if spec.kernel_size is not None:
        parts.append(f"k={spec.kernel_size}")
    if spec.seed:
        parts.append(f"seed={spec.seed}")
    return " ".join(parts)
