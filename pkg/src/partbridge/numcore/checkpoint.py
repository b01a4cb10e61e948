"""Shared checkpoint format for every trained network.

Layout: one JSON header line (ordered parameter names + shapes + dtype +
free-form meta), then the raw little-endian float32 payload in header
order. Round-trips float32 arrays bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_TAG = "partbridge-ckpt-v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, named_arrays: list[tuple[str, np.ndarray]], meta: dict | None = None) -> None:
    header = {
        "format": FORMAT_TAG,
        "dtype": "float32",
        "params": [{"name": n, "shape": list(a.shape)} for n, a in named_arrays],
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for _, a in named_arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: bad checkpoint header") from exc
        if header.get("format") != FORMAT_TAG:
            raise CheckpointError(f"{path}: not a {FORMAT_TAG} file")
        payload = fh.read()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 4
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: trailing bytes in payload")
    return arrays, header["meta"]


def checkpoint_meta(path) -> dict:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
    return header["meta"]
