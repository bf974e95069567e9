"""Versioned binary checkpoint: named float64 tensors plus a JSON manifest.

Layout (all integers little-endian):
  magic "KDCKPT\\0\\0" | u32 version | u64 manifest length | manifest JSON
  u32 tensor count | per tensor: u32 name length, name, u32 ndim,
  u64 dims..., raw float64 data

The writer is fully deterministic, so identical models produce
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import constant
from .errors import IntegrityError
from .kan import SplineGrid
from .models import DiagnosisModel, build_model

MAGIC = b"KDCKPT\x00\x00"
FORMAT_VERSION = 1


def _grid_of(model: DiagnosisModel) -> SplineGrid:
    nets = model.kan_networks()
    if nets:
        first = next(iter(nets.values()))
        return first.layers[0].grid
    return SplineGrid()


def _input_norm_of(model: DiagnosisModel) -> str:
    nets = model.kan_networks()
    if nets:
        return next(iter(nets.values())).input_norm
    return "none"


def _model_manifest(model: DiagnosisModel, seed: int, epochs: int) -> dict:
    grid = _grid_of(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "variant": model.variant,
        "seed": seed,
        "epochs": epochs,
        "grid": {
            "lo": grid.lo,
            "hi": grid.hi,
            "intervals": grid.intervals,
            "degree": grid.degree,
        },
        "input_norm": _input_norm_of(model),
        "trained": model.trained,
    }
    if hasattr(model, "bank"):
        bank = model.bank
        manifest["dims"] = {"N": bank.N, "M": bank.M, "K": bank.K, "D": bank.D}
    else:
        manifest["dims"] = {"N": model.N, "M": model.M, "K": model.K, "D": model.D}
    if model.variant in ("KA2NCDe", "KA2NCDkan"):
        manifest["k_heads"] = model.k_heads
    if model.variant == "NCD":
        manifest["hidden"] = [fc.weight.values.shape[1] for fc in model.fc_out[:-1]]
    if model.variant == "DINA":
        manifest["gumbel_tau"] = model.gumbel_tau
    return manifest


def _q_of(model: DiagnosisModel) -> np.ndarray:
    if hasattr(model, "bank"):
        return model.bank.Q
    return model.Q


def save_checkpoint(model: DiagnosisModel, path: str | Path,
                    seed: int = 0, epochs: int = 0) -> None:
    manifest = _model_manifest(model, seed, epochs)
    tensors = dict(model.named_parameters())
    tensors["data.Q"] = constant(_q_of(model))
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob += struct.pack("<Q", len(mbytes))
    blob += mbytes
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name].values, dtype="<f8")
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def _read_exact(buf: bytes, offset: int, n: int) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise IntegrityError("checkpoint truncated")
    return buf[offset : offset + n], offset + n


def read_raw(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (manifest, name -> array) without building a model."""
    buf = Path(path).read_bytes()
    chunk, off = _read_exact(buf, 0, len(MAGIC))
    if chunk != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    chunk, off = _read_exact(buf, off, 4)
    version = struct.unpack("<I", chunk)[0]
    if version != FORMAT_VERSION:
        raise IntegrityError(
            f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )
    chunk, off = _read_exact(buf, off, 8)
    mlen = struct.unpack("<Q", chunk)[0]
    chunk, off = _read_exact(buf, off, mlen)
    try:
        manifest = json.loads(chunk.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt manifest: {exc}") from exc
    chunk, off = _read_exact(buf, off, 4)
    count = struct.unpack("<I", chunk)[0]
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        chunk, off = _read_exact(buf, off, 4)
        nlen = struct.unpack("<I", chunk)[0]
        chunk, off = _read_exact(buf, off, nlen)
        name = chunk.decode("utf-8")
        chunk, off = _read_exact(buf, off, 4)
        ndim = struct.unpack("<I", chunk)[0]
        chunk, off = _read_exact(buf, off, 8 * ndim)
        shape = struct.unpack(f"<{ndim}Q", chunk)
        size = int(np.prod(shape)) if ndim else 1
        chunk, off = _read_exact(buf, off, 8 * size)
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
    return manifest, tensors


def load_checkpoint(path: str | Path) -> DiagnosisModel:
    """Rebuild the model and restore every parameter bit-exactly."""
    manifest, tensors = read_raw(path)
    if "data.Q" not in tensors:
        raise IntegrityError(f"{path}: checkpoint is missing the Q matrix")
    Q = tensors.pop("data.Q")
    dims = manifest["dims"]
    grid_cfg = manifest["grid"]
    grid = SplineGrid(
        lo=grid_cfg["lo"], hi=grid_cfg["hi"],
        intervals=grid_cfg["intervals"], degree=grid_cfg["degree"],
    )
    hidden = tuple(manifest.get("hidden", (256, 128)))
    model = build_model(
        manifest["variant"],
        dims["N"],
        Q,
        rng=np.random.default_rng(0),
        dim=dims["D"],
        k_heads=manifest.get("k_heads", 2),
        hidden=hidden if len(hidden) == 2 else (256, 128),
        grid=grid,
        input_norm=manifest.get("input_norm", "none"),
        gumbel_tau=manifest.get("gumbel_tau", 1.0),
    )
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        raise IntegrityError(
            f"{path}: parameter names do not match (missing {missing}, extra {extra})"
        )
    for name, arr in tensors.items():
        if params[name].values.shape != arr.shape:
            raise IntegrityError(
                f"{path}: tensor {name} has shape {arr.shape}, "
                f"expected {params[name].values.shape}"
            )
        params[name].values = arr
    model.trained = bool(manifest.get("trained", False))
    return model
