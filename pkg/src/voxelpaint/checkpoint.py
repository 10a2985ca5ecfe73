"""Single-file checkpoint container shared by denoisers and codecs.

Layout: magic "VPCK", u8 format version, u32 JSON header length, UTF-8 JSON
header, then one f64 little-endian payload per tensor in header order.
When optimizer state is included, each tensor's Adam moment buffers (m, v)
follow in the same order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import __version__
from .autodiff import Module, Parameter
from .volume import atomic_write_bytes

MAGIC = b"VPCK"
FORMAT_VERSION = 1


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    kind: str                      # "denoiser" | "codec"
    config: dict
    config_hash: str
    tool_version: str
    iteration: int
    tensors: dict                  # name -> f64 array
    optimizer: dict | None         # name -> {"m","v","steps"}


def save_checkpoint(path: str, kind: str, config: dict, module: Module,
                    iteration: int = 0, config_hash: str = "",
                    include_optimizer: bool = True) -> None:
    named = list(module.named_parameters())
    header = {
        "kind": kind,
        "config": config,
        "config_hash": config_hash,
        "tool_version": __version__,
        "iteration": iteration,
        "tensors": [{"name": n, "shape": list(p.data.shape)} for n, p in named],
        "optimizer": {"steps": [p.steps for _, p in named]} if include_optimizer else None,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<B", FORMAT_VERSION),
              struct.pack("<I", len(head)), head]
    for _, p in named:
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    if include_optimizer:
        for _, p in named:
            chunks.append(np.ascontiguousarray(p.m, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(p.v, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<B", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (head_len,) = struct.unpack_from("<I", raw, 5)
    try:
        header = json.loads(raw[9:9 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc

    offset = 9 + head_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor payload")
        tensors[entry["name"]] = np.frombuffer(
            raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end

    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = {}
        steps = header["optimizer"]["steps"]
        for entry, step in zip(header["tensors"], steps):
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            m = np.frombuffer(raw[offset:offset + 8 * n], dtype="<f8").reshape(shape).copy()
            offset += 8 * n
            v = np.frombuffer(raw[offset:offset + 8 * n], dtype="<f8").reshape(shape).copy()
            offset += 8 * n
            optimizer[entry["name"]] = {"m": m, "v": v, "steps": int(step)}
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")

    return Checkpoint(kind=header["kind"], config=header["config"],
                      config_hash=header.get("config_hash", ""),
                      tool_version=header.get("tool_version", ""),
                      iteration=int(header.get("iteration", 0)),
                      tensors=tensors, optimizer=optimizer)


def restore_parameters(module: Module, ckpt: Checkpoint) -> None:
    """Assign checkpoint tensors (and Adam state, if present) by name."""
    named = dict(module.named_parameters())
    missing = set(named) - set(ckpt.tensors)
    extra = set(ckpt.tensors) - set(named)
    if missing or extra:
        raise CheckpointError(
            f"parameter mismatch: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]}")
    for name, p in named.items():
        data = ckpt.tensors[name]
        if data.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {data.shape} vs {p.data.shape}")
        p.data[...] = data
        if ckpt.optimizer is not None:
            state = ckpt.optimizer[name]
            p.m[...] = state["m"]
            p.v[...] = state["v"]
            p.steps = state["steps"]
