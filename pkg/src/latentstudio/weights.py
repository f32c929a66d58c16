"""GVMW weight-file serialization.

Layout (little-endian): magic ``GVMW``, u32 version (=1), u32 tensor
count; then per tensor a u16 name length, the UTF-8 name, a u8 rank,
rank u32 extents and the raw float32 data. Round trips are bit exact.

The network role and architecture descriptor ride along as one reserved
tensor (``meta/arch``) so a file is self-describing.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .models import (
    ArchDescriptor,
    NetworkParams,
    ROLES,
    build_network,
)

MAGIC = b"GVMW"
VERSION = 1
META_NAME = "meta/arch"


class WeightsError(Exception):
    """Base class for weight-file problems."""


class BadMagicError(WeightsError):
    pass


class VersionMismatchError(WeightsError):
    pass


class CorruptFileError(WeightsError):
    pass


class ShapeMismatchError(WeightsError):
    pass


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptFileError(f"truncated file while reading {what}")
    return data


def write_tensors(path, tensors: dict):
    """Write a name -> float32 array mapping in GVMW layout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise WeightsError(f"tensor name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise WeightsError(f"tensor rank too large: {name!r}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path) -> dict:
    path = Path(path)
    tensors = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise BadMagicError(f"{path.name}: not a GVMW file")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise VersionMismatchError(f"{path.name}: version {version}, expected {VERSION}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"dims of {name!r}"))
            n_items = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, 4 * n_items, f"data of {name!r}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if fh.read(1):
            raise CorruptFileError(f"{path.name}: trailing bytes after last tensor")
    return tensors


def _meta_tensor(params: NetworkParams) -> np.ndarray:
    d = params.descriptor
    return np.array(
        [d.resolution, d.latent_dim, d.base_channels, ROLES.index(params.role)],
        dtype=np.float32,
    )


def _meta_decode(arr: np.ndarray):
    if arr.shape != (4,):
        raise CorruptFileError(f"malformed {META_NAME} tensor")
    res, dim, base, role_code = (int(v) for v in arr)
    if not 0 <= role_code < len(ROLES):
        raise CorruptFileError(f"unknown role code {role_code} in {META_NAME}")
    return ROLES[role_code], ArchDescriptor(res, dim, base)


def save_params(params: NetworkParams, path):
    tensors = {META_NAME: _meta_tensor(params)}
    tensors.update(params.tensors)
    write_tensors(path, tensors)


def load_params(path, expect: ArchDescriptor | None = None) -> NetworkParams:
    """Load a bundle, validating every tensor against the architecture.

    When ``expect`` is given the file must match that descriptor; shape
    validation then names the first offending tensor.
    """
    tensors = read_tensors(path)
    if META_NAME not in tensors:
        raise CorruptFileError(f"{Path(path).name}: missing {META_NAME} tensor")
    role, descriptor = _meta_decode(tensors.pop(META_NAME))
    check_against = expect if expect is not None else descriptor
    reference = build_network(role, check_against).state_dict()
    for name, ref in reference.items():
        if name not in tensors:
            raise ShapeMismatchError(f"missing tensor {name!r} for {role} at {check_against}")
        got = tuple(tensors[name].shape)
        if got != tuple(ref.shape):
            raise ShapeMismatchError(
                f"tensor {name!r}: file shape {got}, descriptor requires {tuple(ref.shape)}"
            )
    extras = set(tensors) - set(reference)
    if extras:
        raise ShapeMismatchError(f"unexpected tensors in file: {sorted(extras)}")
    return NetworkParams(role=role, descriptor=check_against, tensors=tensors)
