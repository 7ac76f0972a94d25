"""Binary container for complex arrays (channel tensors and codebooks).

Layout::

    b"BSIM1" | uint32 LE header length | UTF-8 JSON header | payload

The payload is little-endian float64 with real and imaginary parts
interleaved, in C order.  The header records the format version, a ``kind``
tag, the array shape, the generator seed and, when available, the scenario
config with its hash.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .channel import ChannelTensor, ScenarioConfig

MAGIC = b"BSIM1"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    """Raised for malformed, truncated or mismatched dataset files."""


class ConfigMismatchError(DatasetError):
    pass


def _write(path, array, header):
    array = np.ascontiguousarray(array, dtype=np.complex128)
    header = dict(header, version=FORMAT_VERSION, shape=list(array.shape))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = array.astype("<c16", copy=False).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise DatasetError(f"{path}: not a BSIM1 file (bad magic or truncated)")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if len(raw) < start + hlen:
        raise DatasetError(f"{path}: corrupt file, header truncated")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported version {header.get('version')!r}")
    shape = tuple(int(s) for s in header.get("shape", ()))
    expected = int(np.prod(shape, dtype=np.int64)) * 16
    payload = raw[start + hlen:]
    if len(payload) != expected:
        raise DatasetError(
            f"{path}: corrupt file, payload has {len(payload)} bytes, header implies {expected}")
    array = np.frombuffer(payload, dtype="<c16").astype(np.complex128).reshape(shape)
    return header, array


def save_dataset(tensor, path):
    """Write a :class:`ChannelTensor` to ``path``."""
    header = {"kind": "channel", "seed": tensor.seed}
    if tensor.config is not None:
        header["config"] = tensor.config.to_dict()
        header["config_hash"] = tensor.config.config_hash()
    _write(path, tensor.h, header)


def load_dataset(path, config=None, expected_shape=None):
    """Read a channel tensor written by :func:`save_dataset`.

    Parameters
    ----------
    config : ScenarioConfig, optional
        If given, its hash must match the one stored in the header.
    expected_shape : tuple, optional
        If given, the stored shape must match.
    """
    header, array = _read(path)
    if header.get("kind") != "channel":
        raise DatasetError(f"{path}: holds a {header.get('kind')!r}, not a channel tensor")
    if expected_shape is not None and tuple(expected_shape) != array.shape:
        raise DatasetError(f"{path}: shape {array.shape} != expected {tuple(expected_shape)}")
    stored_cfg = header.get("config")
    if config is not None:
        if header.get("config_hash") != config.config_hash():
            raise ConfigMismatchError(
                f"{path}: config hash {header.get('config_hash')} does not match "
                f"supplied config {config.config_hash()}")
    cfg = ScenarioConfig.from_dict(stored_cfg) if stored_cfg is not None else None
    return ChannelTensor(h=array, seed=header.get("seed"), config=cfg)


def save_codebook(codebook, path):
    """Write a codebook; its kind tag goes in the header."""
    header = {"kind": "codebook", "codebook_kind": codebook.kind, "seed": None}
    header.update(codebook.header_extras())
    _write(path, codebook.words, header)


def load_codebook(path):
    from .codebooks import codebook_from_header

    header, array = _read(path)
    if header.get("kind") != "codebook":
        raise DatasetError(f"{path}: holds a {header.get('kind')!r}, not a codebook")
    return codebook_from_header(header, array)
