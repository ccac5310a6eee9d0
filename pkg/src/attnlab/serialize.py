"""Checkpoint manifests: a flat JSON object mapping parameter names to
shape plus base64-encoded little-endian float64 payloads."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    payload = a.astype("<f8", copy=False).tobytes()
    return {
        "shape": list(a.shape),
        "dtype": "<f8",
        "data": base64.b64encode(payload).decode("ascii"),
    }


def decode_array(d: dict) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise ValidationError(f"unsupported dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return a.reshape([int(s) for s in d["shape"]])


def save_manifest(arrays: dict[str, np.ndarray], path: str | Path, meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "arrays": {k: encode_array(v) for k, v in sorted(arrays.items())}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    arrays = {k: decode_array(v) for k, v in doc["arrays"].items()}
    return arrays, doc.get("meta", {})
