"""Versioned, self-describing checkpoint files for the reward head.

Layout (little-endian): 8-byte magic, u32 version, u32 header length, a
canonical-JSON header (architecture, training-config snapshot, update
counter, rng state, array manifest), then the float64 arrays in manifest
order, then a u64 checksum over everything preceding it. The encoding is
a pure function of the checkpoint value, so save -> load -> save yields
identical bytes and, with the rng state restored, a resumed run replays
the exact update stream of an uninterrupted one.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CorruptCheckpoint, IncompatibleArchitecture
from ..ioutil import canonical_json, sha256_file_hex
from .adamw import AdamWState
from .head import HeadArchitecture, HeadParameters

MAGIC = b"CRKCKP01"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    architecture: HeadArchitecture
    parameters: HeadParameters
    optimizer: AdamWState
    update_count: int
    rng_state: dict
    config: dict

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.parameters.weights, self.parameters.biases)):
            out.append((f"w{i}", w))
            out.append((f"b{i}", b))
        for i in range(len(self.optimizer.m_w)):
            out.append((f"adam_m_w{i}", self.optimizer.m_w[i]))
            out.append((f"adam_v_w{i}", self.optimizer.v_w[i]))
            out.append((f"adam_m_b{i}", self.optimizer.m_b[i]))
            out.append((f"adam_v_b{i}", self.optimizer.v_b[i]))
        return out


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write the checkpoint; returns the sha256 hex digest of the file."""
    arrays = ckpt.arrays()
    header = {
        "architecture": ckpt.architecture.to_dict(),
        "config": ckpt.config,
        "update_count": ckpt.update_count,
        "optimizer_step": ckpt.optimizer.step,
        "rng_state": ckpt.rng_state,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    header_bytes = canonical_json(header).encode("utf-8")

    hasher = hashlib.sha256()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:

        def emit(data: bytes):
            hasher.update(data)
            f.write(data)

        emit(MAGIC)
        emit(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        emit(header_bytes)
        for _, a in arrays:
            emit(np.ascontiguousarray(a, dtype="<f8").tobytes())
        f.write(struct.pack("<Q", struct.unpack("<Q", hasher.digest()[:8])[0]))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return sha256_file_hex(path)


def load_checkpoint(path, architecture: HeadArchitecture | None = None) -> Checkpoint:
    """Read a checkpoint, optionally insisting it match ``architecture``."""
    import json

    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 24 or data[:8] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a reward-head checkpoint")
    version, header_len = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported checkpoint version {version}")
    header_end = 16 + header_len
    if len(data) < header_end + 8:
        raise CorruptCheckpoint(f"{path}: truncated header")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    computed = struct.unpack("<Q", hashlib.sha256(data[:-8]).digest()[:8])[0]
    if stored != computed:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")

    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
        arch = HeadArchitecture.from_dict(header["architecture"])
    except Exception as e:
        raise CorruptCheckpoint(f"{path}: bad header: {e}") from None
    if architecture is not None and arch != architecture:
        raise IncompatibleArchitecture(
            f"checkpoint holds {arch.to_dict()}, caller expects {architecture.to_dict()}"
        )

    offset = header_end
    loaded: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(data) - 8:
            raise CorruptCheckpoint(f"{path}: payload ends before array {spec['name']}")
        loaded[spec["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(data) - 8:
        raise CorruptCheckpoint(f"{path}: {len(data) - 8 - offset} unexpected payload bytes")

    n_layers = arch.layer_count
    try:
        params = HeadParameters(
            [loaded[f"w{i}"] for i in range(n_layers)],
            [loaded[f"b{i}"] for i in range(n_layers)],
        )
        opt = AdamWState(params)
        opt.m_w = [loaded[f"adam_m_w{i}"] for i in range(n_layers)]
        opt.v_w = [loaded[f"adam_v_w{i}"] for i in range(n_layers)]
        opt.m_b = [loaded[f"adam_m_b{i}"] for i in range(n_layers)]
        opt.v_b = [loaded[f"adam_v_b{i}"] for i in range(n_layers)]
        opt.step = int(header["optimizer_step"])
    except KeyError as e:
        raise CorruptCheckpoint(f"{path}: missing array {e}") from None
    if not params.matches(arch):
        raise IncompatibleArchitecture(
            f"{path}: stored arrays do not fit the declared architecture"
        )

    return Checkpoint(
        architecture=arch,
        parameters=params,
        optimizer=opt,
        update_count=int(header["update_count"]),
        rng_state=header["rng_state"],
        config=header["config"],
    )


def checkpoint_file_hash(path) -> str:
    return sha256_file_hex(path)
