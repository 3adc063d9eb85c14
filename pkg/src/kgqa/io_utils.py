"""Deterministic binary container, hashing, and run-manifest helpers.

All on-disk artifacts share one container layout so every snapshot is
reproducible byte for byte:

    magic   8 bytes  b"KGQABIN1"
    hlen    8 bytes  little-endian uint64, length of the header JSON
    header  hlen bytes of UTF-8 JSON:
              {"kind": ..., "version": 1, "meta": {...},
               "blocks": [{"name", "dtype", "shape"}, ...]}
    blocks  raw little-endian C-order bytes, in header order

"bytes" blocks carry raw byte strings (shape = [length]); every other dtype
is a numpy array.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"KGQABIN1"

_DTYPES = {
    "float64": np.dtype("<f8"),
    "float32": np.dtype("<f4"),
    "uint32": np.dtype("<u4"),
    "int64": np.dtype("<i8"),
}


class ContainerError(ValueError):
    """Raised for unreadable or mismatched binary artifacts."""


def canonical_json(obj) -> str:
    """JSON with sorted keys and fixed separators, safe to hash."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    """Stable hash of a config-like dict (first 16 hex chars)."""
    return sha256_bytes(canonical_json(obj).encode("utf-8"))[:16]


def write_container(path: str | Path, kind: str, meta: dict, blocks: dict) -> None:
    """Write named blocks (numpy arrays or bytes) under a JSON header.

    Block order follows insertion order of ``blocks`` and is part of the
    format, so callers must pass blocks in a fixed order.
    """
    entries = []
    payloads = []
    for name, value in blocks.items():
        if isinstance(value, bytes):
            entries.append({"name": name, "dtype": "bytes", "shape": [len(value)]})
            payloads.append(value)
        else:
            arr = np.asarray(value)
            dtype = str(arr.dtype)
            if dtype not in _DTYPES:
                raise ContainerError(f"unsupported block dtype {dtype!r} for {name!r}")
            arr = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
            entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
            payloads.append(arr.tobytes())
    header = canonical_json(
        {"kind": kind, "version": 1, "meta": meta, "blocks": entries}
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for payload in payloads:
            f.write(payload)


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict, dict]:
    """Read back (meta, blocks); verifies magic and, if given, the kind."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ContainerError(f"{path}: not a kgqa binary artifact")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if kind is not None and header["kind"] != kind:
            raise ContainerError(
                f"{path}: expected kind {kind!r}, found {header['kind']!r}"
            )
        blocks = {}
        for entry in header["blocks"]:
            if entry["dtype"] == "bytes":
                blocks[entry["name"]] = f.read(entry["shape"][0])
            else:
                dt = _DTYPES[entry["dtype"]]
                n = int(np.prod(entry["shape"])) if entry["shape"] else 1
                raw = f.read(n * dt.itemsize)
                # copy: frombuffer views are read-only and callers mutate
                blocks[entry["name"]] = (
                    np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).copy()
                )
    return header["meta"], blocks


def write_manifest(out_path: str | Path, command: str, cfg_hash: str,
                   inputs: dict[str, str | Path], seed: int | None,
                   version: str) -> Path:
    """Write `<out>.manifest.json` recording how an output was produced."""
    manifest = {
        "command": command,
        "config_hash": cfg_hash,
        "inputs": {
            str(name): sha256_file(p) for name, p in sorted(inputs.items()) if p
        },
        "seed": seed,
        "package_version": version,
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return path


def stable_seed(*parts) -> int:
    """Derive a reproducible 64-bit seed from arbitrary string/int parts."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
