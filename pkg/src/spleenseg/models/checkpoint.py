"""Flat binary tensor archives and model checkpoint directories.

The archive format (TARC) is deliberately minimal and deterministic:
identical tensors produce identical bytes, so checkpoint equality can be
asserted with a file hash. Layout: 8-byte ASCII magic "TARC0001",
little-endian u32 header length, UTF-8 JSON header listing tensors as
{name, dtype, shape} in sorted-name order, then the raw little-endian
payloads concatenated in the same order.

A model checkpoint is a directory holding spec.json (the architecture
record plus a kind tag) and weights.tarc (the state dict).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .gcn import GcnGenerator, GeneratorSpec
from .patchgan import DiscriminatorSpec, PatchDiscriminator

TARC_MAGIC = b"TARC0001"

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("<u1"),
}
_DTYPE_NAMES = {np.dtype(v.str.lstrip("<|")): k for k, v in _DTYPES.items()}


class ArchiveError(Exception):
    pass


def _to_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.dtype not in _DTYPE_NAMES:
        raise ArchiveError(f"unsupported dtype {arr.dtype}")
    return arr


def save_tensors(path, tensors: dict) -> None:
    """Write named tensors to a TARC archive, sorted by name."""
    items = [(name, _to_array(t)) for name, t in sorted(tensors.items())]
    header = [
        {"name": name, "dtype": _DTYPE_NAMES[arr.dtype], "shape": list(arr.shape)}
        for name, arr in items
    ]
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(TARC_MAGIC)
        f.write(np.uint32(len(hdr)).astype("<u4").tobytes())
        f.write(hdr)
        for _, arr in items:
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(TARC_MAGIC) + 4 or raw[: len(TARC_MAGIC)] != TARC_MAGIC:
        raise ArchiveError(f"{path}: not a TARC archive")
    off = len(TARC_MAGIC)
    (hlen,) = np.frombuffer(raw[off : off + 4], dtype="<u4")
    off += 4
    header = json.loads(raw[off : off + int(hlen)].decode("utf-8"))
    off += int(hlen)
    out = {}
    for entry in header:
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if off + nbytes > len(raw):
            raise ArchiveError(f"{path}: truncated payload for {entry['name']}")
        out[entry["name"]] = np.frombuffer(raw[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise ArchiveError(f"{path}: {len(raw) - off} trailing bytes")
    return out


def state_dict_tensors(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: _to_array(v) for k, v in model.state_dict().items()}


def save_model(directory, model: torch.nn.Module) -> Path:
    """Write spec.json + weights.tarc for a generator or discriminator."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(model, GcnGenerator):
        kind = "generator"
    elif isinstance(model, PatchDiscriminator):
        kind = "discriminator"
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    (directory / "spec.json").write_text(
        json.dumps({"kind": kind, "spec": model.spec.to_dict()}, indent=2, sort_keys=True)
    )
    save_tensors(directory / "weights.tarc", state_dict_tensors(model))
    return directory


def _load_state(model: torch.nn.Module, directory: Path) -> None:
    arrays = load_tensors(directory / "weights.tarc")
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state)


def load_generator(directory) -> GcnGenerator:
    directory = Path(directory)
    meta = json.loads((directory / "spec.json").read_text())
    if meta["kind"] != "generator":
        raise ArchiveError(f"{directory}: checkpoint holds a {meta['kind']}")
    model = GcnGenerator(GeneratorSpec.from_dict(meta["spec"]))
    _load_state(model, directory)
    return model


def load_discriminator(directory) -> PatchDiscriminator:
    directory = Path(directory)
    meta = json.loads((directory / "spec.json").read_text())
    if meta["kind"] != "discriminator":
        raise ArchiveError(f"{directory}: checkpoint holds a {meta['kind']}")
    model = PatchDiscriminator(DiscriminatorSpec.from_dict(meta["spec"]))
    _load_state(model, directory)
    return model
