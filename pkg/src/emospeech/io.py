"""Manifest + binary-blob container used for checkpoints and corpora.

``<prefix>.manifest.json`` lists every entry (key, shape, byte offset,
component tag) plus free-form metadata; ``<prefix>.bin`` holds the entries'
values back to back as little-endian float64 in manifest order.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ContractError

FORMAT_NAME = "emospeech-container"
FORMAT_VERSION = 1


def container_paths(prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".manifest.json"), prefix.with_name(prefix.name + ".bin")


def save_container(prefix, entries: Iterable[tuple[str, np.ndarray, str]], meta: dict | None = None) -> tuple[Path, Path]:
    manifest_path, blob_path = container_paths(prefix)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    records = []
    offset = 0
    with open(blob_path, "wb") as blob:
        for key, array, component in entries:
            data = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
            blob.write(data.tobytes())
            records.append({"key": key, "shape": list(data.shape), "offset": offset, "component": component})
            offset += data.nbytes
    manifest = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "meta": meta or {}, "entries": records}
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest_path, blob_path


def load_container(prefix):
    """Return ``(arrays, components, meta)`` with arrays keyed in manifest order."""
    manifest_path, blob_path = container_paths(prefix)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise ContractError(f"{manifest_path}: unsupported container format {manifest.get('format')!r} "
                            f"v{manifest.get('version')}")
    blob = blob_path.read_bytes()
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    components: dict[str, str] = {}
    for rec in manifest["entries"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = rec["offset"]
        if start + 8 * count > len(blob):
            raise ContractError(f"{blob_path}: entry {rec['key']} runs past end of blob")
        arrays[rec["key"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64)
        components[rec["key"]] = rec["component"]
    return arrays, components, manifest.get("meta", {})
