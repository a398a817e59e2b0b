"""
Versioned parameter checkpoints.

Blob layout (little-endian):
    magic b"HEICKPT\\0" | u32 version | u32 tensor count
    per tensor: u32 name length | name (utf-8) | u32 ndim | u32 dims...
    payload: every tensor as row-major float64, in table order
A JSON manifest (<blob>.json) lists names, shapes and byte offsets.
"""
import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping

import numpy as np
import torch
from torch import nn

from app.config import Config
from app.errors import HEIError
from app.logger import get_logger
from app.utils import atomic_write_json, read_json

logger = get_logger(__name__)

MAGIC = b"HEICKPT\0"
VERSION = 1


class CheckpointError(HEIError):
    """Unreadable or incompatible checkpoint."""


def manifest_path(path: str) -> str:
    return path + ".json"


def save_checkpoint(tensors: Mapping[str, torch.Tensor], path: str) -> Dict:
    """Write blob + manifest. Accepts a state_dict or any name -> tensor map."""
    names = list(tensors.keys())
    arrays = [np.ascontiguousarray(tensors[n].detach().cpu().numpy(), dtype="<f8") for n in names]

    header = bytearray(MAGIC)
    header += struct.pack("<II", VERSION, len(names))
    for name, arr in zip(names, arrays):
        encoded = name.encode("utf-8")
        header += struct.pack("<I", len(encoded)) + encoded
        header += struct.pack("<I", arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""

    entries = []
    offset = len(header)
    for name, arr in zip(names, arrays):
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": int(arr.nbytes)})
        offset += arr.nbytes

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(header))
        for arr in arrays:
            fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)

    manifest = {
        "magic": MAGIC.rstrip(b"\0").decode("ascii"),
        "version": VERSION,
        "tool_version": Config.TOOL_VERSION,
        "dtype": "float64",
        "tensors": entries,
    }
    atomic_write_json(manifest_path(path), manifest)
    logger.debug(f"Saved checkpoint {path} ({len(names)} tensors)")
    return manifest


def load_checkpoint(path: str) -> "OrderedDict[str, torch.Tensor]":
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    table = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
        pos += 4 * ndim
        table.append((name, tuple(shape)))

    out: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += size * 8
        out[name] = torch.from_numpy(arr.copy())
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")

    if os.path.exists(manifest_path(path)):
        manifest = read_json(manifest_path(path))
        listed = [entry["name"] for entry in manifest.get("tensors", [])]
        if listed != list(out):
            raise CheckpointError(f"{path}: manifest does not match blob tensor table")
    return out


def load_into(module: nn.Module, path: str) -> nn.Module:
    """Load a checkpoint into a module, casting to the module's dtype."""
    state = load_checkpoint(path)
    current = module.state_dict()
    missing = set(current) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    module.load_state_dict({k: v.to(current[k].dtype) for k, v in state.items() if k in current})
    return module
