"""Manifest + raw blob tensor files.

``<stem>.json`` holds the format version, per-entry name/dtype/shape/offset
and free-form metadata; ``<stem>.bin`` holds the little-endian payload of
every entry back to back.
"""
import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..errors import CheckpointError
from .store import qualified_name

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: ("float32", "<f4"),
    torch.float64: ("float64", "<f8"),
    torch.int64: ("int64", "<i8"),
}
_BY_NAME = {name: (dtype, code) for dtype, (name, code) in _DTYPES.items()}


def _paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    stem = Path(path)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_tensors(path: Union[str, Path], tensors: Mapping[str, torch.Tensor],
                 metadata: Optional[Dict[str, Any]] = None) -> Path:
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(blob_path, "wb") as blob:
        for name, tensor in tensors.items():
            if tensor.dtype not in _DTYPES:
                raise CheckpointError(f"cannot store '{name}' with dtype {tensor.dtype}")
            dtype_name, code = _DTYPES[tensor.dtype]
            payload = tensor.detach().cpu().contiguous().numpy().astype(code, copy=False).tobytes()
            blob.write(payload)
            entries.append({
                "name": name,
                "dtype": dtype_name,
                "shape": list(tensor.shape),
                "offset": offset,
                "nbytes": len(payload),
            })
            offset += len(payload)

    manifest = {
        "format_version": FORMAT_VERSION,
        "blob": blob_path.name,
        "entries": entries,
        "metadata": metadata or {},
    }
    with open(manifest_path, "w") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True))
    logger.debug("✅ Wrote %d tensors to %s", len(entries), manifest_path)
    return manifest_path


def load_tensors(path: Union[str, Path]) -> Tuple["OrderedDict[str, torch.Tensor]", Dict[str, Any]]:
    manifest_path, _ = _paths(path)
    if not manifest_path.is_file():
        raise CheckpointError(f"checkpoint manifest not found: {manifest_path}")
    with open(manifest_path, "r") as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")

    blob_bytes = (manifest_path.parent / manifest["blob"]).read_bytes()
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for entry in manifest["entries"]:
        if entry["dtype"] not in _BY_NAME:
            raise CheckpointError(f"unknown dtype '{entry['dtype']}' for '{entry['name']}'")
        dtype, code = _BY_NAME[entry["dtype"]]
        chunk = blob_bytes[entry["offset"]: entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"blob truncated while reading '{entry['name']}'")
        array = np.frombuffer(chunk, dtype=code).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(array.copy()).to(dtype)
    return tensors, manifest.get("metadata", {})


def save_checkpoint(module: nn.Module, path: Union[str, Path], namespace: str,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    tensors = OrderedDict(
        (qualified_name(namespace, name), t) for name, t in module.state_dict().items()
    )
    return save_tensors(path, tensors, {"namespace": namespace, **(metadata or {})})


def load_checkpoint(module: nn.Module, path: Union[str, Path], namespace: str) -> Dict[str, Any]:
    """Load weights into ``module``; every tensor must match by name and shape."""
    tensors, metadata = load_tensors(path)
    expected = module.state_dict()
    mismatched = []
    missing = []
    state = OrderedDict()
    for name, current in expected.items():
        key = qualified_name(namespace, name)
        if key not in tensors:
            missing.append(key)
            continue
        stored = tensors[key]
        if tuple(stored.shape) != tuple(current.shape):
            mismatched.append(f"{key}: checkpoint {tuple(stored.shape)} vs model {tuple(current.shape)}")
            continue
        state[name] = stored.to(current.dtype)
    if mismatched or missing:
        details = "; ".join(mismatched + [f"{k}: missing from checkpoint" for k in missing])
        raise CheckpointError(f"checkpoint {path} does not fit the model: {details}")
    module.load_state_dict(state)
    return metadata
