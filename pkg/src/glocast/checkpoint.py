"""Self-describing binary checkpoints with byte-identical round trips.

Layout: magic, 8-byte little-endian header length, UTF-8 JSON header
(kind, metadata, array manifest), then the raw C-order float64 bytes of
every array in manifest order. json.dumps uses sorted keys and fixed
separators, and no timestamps are stored, so writing the same state
twice produces identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .errors import CheckpointError
from .tcn import TcnConfig, TcnNetwork

MAGIC = b"GLCAST01"


def save_bundle(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_bundle(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a glocast checkpoint")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    offset = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=np.float64, count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    return header["kind"], header["meta"], arrays


def network_meta(net: TcnNetwork) -> dict:
    return asdict(net.config) | {"channels": list(net.config.channels)}


def pack_network(net: TcnNetwork, prefix: str = "") -> dict[str, np.ndarray]:
    arrays = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}w{i}"] = w
        arrays[f"{prefix}b{i}"] = b
    if net.config.use_residual:
        for i, s in enumerate(net.skip_weights):
            arrays[f"{prefix}s{i}"] = s
    return arrays


def unpack_network(meta: dict, arrays: dict[str, np.ndarray], prefix: str = "") -> TcnNetwork:
    config = TcnConfig(
        kernel_size=int(meta["kernel_size"]),
        channels=tuple(int(c) for c in meta["channels"]),
        input_channels=int(meta["input_channels"]),
        use_residual=bool(meta["use_residual"]),
    )
    weights = [arrays[f"{prefix}w{i}"] for i in range(config.depth)]
    biases = [arrays[f"{prefix}b{i}"] for i in range(config.depth)]
    skips = None
    if config.use_residual:
        skips = [arrays[f"{prefix}s{i}"] for i in range(config.depth)]
    return TcnNetwork(config, weights, biases, skips)


def save_network(path, net: TcnNetwork, seed: int | None = None, extra: dict | None = None) -> None:
    """Network checkpoint: config, full-precision parameters, RNG seed."""
    meta = {"net": network_meta(net), "seed": seed}
    if extra:
        meta.update(extra)
    save_bundle(path, "tcn", meta, pack_network(net))


def load_network(path) -> tuple[TcnNetwork, dict]:
    kind, meta, arrays = load_bundle(path)
    if kind != "tcn":
        raise CheckpointError(f"expected a tcn checkpoint, found {kind!r}")
    return unpack_network(meta["net"], arrays), meta
