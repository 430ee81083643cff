"""Binary model checkpoints.

Layout: magic bytes, a little-endian uint32 header length, a JSON header
(format version, architecture echo, class-name mapping, seed, precision,
architecture hash, free-form metadata), then every parameter tensor followed
by every buffer tensor in declaration order, each as a uint32 rank, uint32
extents, and raw little-endian float32 data.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import ArchitectureConfig, Network

MAGIC = b"PVFN\x01"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def arch_hash(config: ArchitectureConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_checkpoint(path, network: Network, meta: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": network.config.to_dict(),
        "arch_sha256": arch_hash(network.config),
        "seed": network.seed,
        "precision": "float32",
    }
    if meta:
        header.update(meta)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in network.parameters() + network.buffers():
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: expected {n} bytes for {what}")
    return data


def load_checkpoint(path) -> tuple[Network, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {header.get('format_version')}")
        config = ArchitectureConfig.from_dict(header["architecture"])
        if header["arch_sha256"] != arch_hash(config):
            raise CheckpointError("architecture hash does not match the stored config")
        network = Network(config, seed=header.get("seed", 0))
        for name, arr in network.parameters() + network.buffers():
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"{name} shape"))
            if shape != arr.shape:
                raise CheckpointError(f"parameter {name}: stored shape {shape} does not match {arr.shape}")
            raw = _read_exact(fh, 4 * int(np.prod(shape)), f"{name} data")
            network.set_parameter(name, np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last tensor")
    return network, header
