"""Checkpoint container: one binary file, named blocks, JSON header.

Layout: magic ``EMSC``, u32 container version, u64 header length, the
UTF-8 JSON header, then the raw little-endian block payloads back to
back. The header carries the model kind, its architecture config and
hash, seeds, step counters, RNG state, and the block directory (name,
dtype, shape, offset). Arrays round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch

from .errors import ArchitectureMismatchError, CorpusError

MAGIC = b"EMSC"
CONTAINER_VERSION = 1


def config_hash(config: Mapping) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def save_blocks(path: str | Path, header: dict, blocks: Mapping[str, np.ndarray]) -> None:
    directory = []
    payloads = []
    offset = 0
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        directory.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    full = dict(header)
    full["blocks"] = directory
    head = json.dumps(full, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CONTAINER_VERSION, len(head)))
        fh.write(head)
        for raw in payloads:
            fh.write(raw)


def load_blocks(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CorpusError(f"not a checkpoint file: {path}")
    version, head_len = struct.unpack("<IQ", raw[4:16])
    if version != CONTAINER_VERSION:
        raise CorpusError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + head_len].decode("utf-8"))
    base = 16 + head_len
    blocks: dict[str, np.ndarray] = {}
    for entry in header.pop("blocks", []):
        start = base + entry["offset"]
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]), count=count, offset=start)
        blocks[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, blocks


def module_to_blocks(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def blocks_to_module(
    module: torch.nn.Module, blocks: Mapping[str, np.ndarray], prefix: str
) -> None:
    state = {}
    want = module.state_dict()
    for name, tensor in want.items():
        key = f"{prefix}.{name}"
        if key not in blocks:
            raise ArchitectureMismatchError(f"checkpoint lacks block {key!r}")
        arr = blocks[key]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ArchitectureMismatchError(
                f"block {key!r} has shape {tuple(arr.shape)}, model expects "
                f"{tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(tensor.dtype)
    module.load_state_dict(state)


def expect_kind(header: dict, kinds: Iterable[str]) -> None:
    kind = header.get("kind")
    if kind not in set(kinds):
        raise ArchitectureMismatchError(
            f"checkpoint kind {kind!r} not usable here (expected one of {sorted(kinds)})"
        )
