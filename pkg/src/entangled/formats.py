"""Plain-text containers for kernels and block checkpoints.

Kernel file::

    ENTANGLE-KERNEL v1
    <shape, space separated>
    kind=... gamma=... k=... c=... n=... seed=...
    <one value per line, row-major, 17 significant digits>

Checkpoint file::

    ENTANGLE-CKPT v1
    @meta key=value ...
    @block <index> kind=<kind> width=<w> hidden=<h> mode=<lstm mode>
    @spec <index> kind=... gamma=... ...
    @tensor <name> <shape...>
    <values, one per line>

Tensor names are ``block<i>.<param>`` for block parameters and free-form
otherwise (e.g. ``head.w``).
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .entangle import EntanglementSpec

KERNEL_HEADER = "ENTANGLE-KERNEL v1"
CKPT_HEADER = "ENTANGLE-CKPT v1"
_BLOCK_TENSOR = re.compile(r"block\d+\.")


class FormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return "%.17g" % v


def dump_kernel(array: np.ndarray, spec: EntanglementSpec) -> str:
    array = np.asarray(array, dtype=np.float64)
    lines = [KERNEL_HEADER, " ".join(str(s) for s in array.shape), spec.to_text()]
    lines.extend(_fmt(v) for v in array.ravel())
    return "\n".join(lines) + "\n"


def load_kernel(text: str) -> tuple[np.ndarray, EntanglementSpec]:
    lines = text.splitlines()
    if len(lines) < 3 or lines[0].strip() != KERNEL_HEADER:
        raise FormatError("not an ENTANGLE-KERNEL v1 file")
    shape = tuple(int(s) for s in lines[1].split())
    spec = EntanglementSpec.from_text(lines[2])
    values = np.array([float(v) for v in lines[3:] if v.strip()])
    if values.size != int(np.prod(shape)):
        raise FormatError(f"expected {int(np.prod(shape))} values, found {values.size}")
    return values.reshape(shape), spec


def write_kernel(path, array: np.ndarray, spec: EntanglementSpec) -> Path:
    path = Path(path)
    path.write_text(dump_kernel(array, spec), encoding="utf-8")
    return path


def read_kernel(path) -> tuple[np.ndarray, EntanglementSpec]:
    return load_kernel(Path(path).read_text(encoding="utf-8"))


def dump_checkpoint(blocks, tensors: dict[str, np.ndarray] | None = None,
                    meta: dict[str, str] | None = None) -> str:
    """Serialise blocks (and any extra named tensors) to checkpoint text."""
    lines = [CKPT_HEADER]
    if meta:
        lines.append("@meta " + " ".join(f"{k}={v}" for k, v in meta.items()))
    body = []
    for i, block in enumerate(blocks):
        lines.append(f"@block {i} kind={block.kind} width={block.width} "
                     f"hidden={block.hidden if block.hidden is not None else '-'} mode={block.lstm_mode}")
        lines.append(f"@spec {i} {block.entanglement.to_text()}")
        for name, t in block.params.items():
            body.append((f"block{i}.{name}", t.data))
    for name, arr in (tensors or {}).items():
        body.append((name, np.asarray(arr, dtype=np.float64)))
    for name, arr in body:
        lines.append(f"@tensor {name} " + " ".join(str(s) for s in arr.shape))
        lines.extend(_fmt(v) for v in arr.ravel())
    return "\n".join(lines) + "\n"


def load_checkpoint(text: str):
    """Parse checkpoint text into ``(blocks, tensors, meta)``.

    ``blocks`` are :class:`~entangled.blocks.BlockParams` with trainable
    parameters restored; ``tensors`` holds every non-block tensor.
    """
    from . import autodiff as ad
    from .blocks import BlockParams

    lines = text.splitlines()
    if not lines or lines[0].strip() != CKPT_HEADER:
        raise FormatError("not an ENTANGLE-CKPT v1 file")
    meta: dict[str, str] = {}
    headers: dict[int, dict[str, str]] = {}
    specs: dict[int, EntanglementSpec] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        tag, _, rest = line.partition(" ")
        if tag == "@meta":
            meta.update(item.split("=", 1) for item in rest.split())
        elif tag == "@block":
            idx, _, fields = rest.partition(" ")
            headers[int(idx)] = dict(item.split("=", 1) for item in fields.split())
        elif tag == "@spec":
            idx, _, fields = rest.partition(" ")
            specs[int(idx)] = EntanglementSpec.from_text(fields)
        elif tag == "@tensor":
            parts = rest.split()
            name, shape = parts[0], tuple(int(s) for s in parts[1:])
            count = int(np.prod(shape)) if shape else 1
            values = np.array([float(v) for v in lines[i:i + count]])
            if values.size != count:
                raise FormatError(f"tensor {name} is truncated")
            arrays[name] = values.reshape(shape)
            i += count
        else:
            raise FormatError(f"unexpected line {line!r}")
    blocks = []
    for idx in sorted(headers):
        h = headers[idx]
        prefix = f"block{idx}."
        params = {k[len(prefix):]: ad.parameter(v) for k, v in arrays.items() if k.startswith(prefix)}
        hidden = None if h.get("hidden", "-") == "-" else int(h["hidden"])
        blocks.append(BlockParams(h["kind"], int(h["width"]), specs[idx], params, hidden,
                                  h.get("mode", "gated")))
    extra = {k: v for k, v in arrays.items() if not _BLOCK_TENSOR.match(k)}
    return blocks, extra, meta
