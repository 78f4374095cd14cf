"""Read and write echoset corpora from Python.

A corpus directory holds ``manifest.json`` and one directory per sample with
``input.ustn`` (float32, shape [6, nz, nx]), ``target.ustn`` (float32,
[nz, nx]) and ``meta.json``. Predictions are float32 [nz, nx] tensors stored
as ``<sample>/prediction.ustn`` or ``<dir>/<id>.ustn``; ``echoset estimate
--corpus`` scores them.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "UstnFormatError",
    "encode_ustn",
    "decode_ustn",
    "read_ustn",
    "write_ustn",
    "Sample",
    "Corpus",
]

MAGIC = b"USTN"
VERSION = 1
MAX_DIMS = 8
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<c8")}
_CODES = {np.dtype("<f4"): 1, np.dtype("<c8"): 2}


class UstnFormatError(ValueError):
    """Malformed tensor bytes; the message names the byte offset."""


def _fail(origin: str, offset: int, what: str) -> None:
    raise UstnFormatError(f"{origin}: {what} (at byte offset {offset})")


def encode_ustn(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.dtype.kind == "c":
        a = a.astype("<c8", copy=False)
    elif a.dtype.kind in "fiub":
        a = a.astype("<f4", copy=False)
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    if a.ndim > MAX_DIMS:
        raise ValueError(f"at most {MAX_DIMS} dimensions")
    head = MAGIC + bytes([VERSION, _CODES[a.dtype], a.ndim])
    head += b"".join(struct.pack("<Q", d) for d in a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def decode_ustn(data: bytes, origin: str = "<memory>") -> np.ndarray:
    n = len(data)
    if n < 4:
        _fail(origin, n, f"truncated header: expected at least 7 bytes, got {n}")
    if data[:4] != MAGIC:
        _fail(origin, 0, 'bad magic, expected "USTN"')
    if n < 7:
        _fail(origin, n, f"truncated header: expected at least 7 bytes, got {n}")
    if data[4] != VERSION:
        _fail(origin, 4, f"unsupported version {data[4]}")
    if data[5] not in _DTYPES:
        _fail(origin, 5, f"unknown dtype code {data[5]}")
    dtype = _DTYPES[data[5]]
    ndim = data[6]
    if ndim > MAX_DIMS:
        _fail(origin, 6, f"ndim {ndim} exceeds {MAX_DIMS}")
    hdr = 7 + 8 * ndim
    if n < hdr:
        _fail(origin, n, f"truncated header: expected {hdr} bytes, got {n}")
    dims = struct.unpack_from(f"<{ndim}Q", data, 7) if ndim else ()
    payload = dtype.itemsize
    for k, d in enumerate(dims):
        payload *= d
        if payload >= 1 << 64:
            _fail(origin, 7 + 8 * k, "dimension overflow: payload size exceeds 2^64 bytes")
    expected = hdr + payload
    if n < expected:
        _fail(origin, n, f"truncated payload: expected {expected} bytes, got {n}")
    if n > expected:
        _fail(origin, expected, f"trailing data: expected {expected} bytes, got {n}")
    return np.frombuffer(data, dtype=dtype, offset=hdr).reshape(dims).copy()


def read_ustn(path: str | os.PathLike) -> np.ndarray:
    p = Path(path)
    return decode_ustn(p.read_bytes(), str(p))


def write_ustn(path: str | os.PathLike, array: np.ndarray) -> None:
    """Atomic: the bytes go to a sibling temporary file that is then renamed."""
    p = Path(path)
    tmp = p.with_name(f"{p.name}.tmp-{os.getpid()}")
    tmp.write_bytes(encode_ustn(array))
    os.replace(tmp, p)


@dataclass
class Sample:
    id: str
    input: np.ndarray  # float32 [6, nz, nx]; planes named by meta["input"]["planes"]
    target: np.ndarray  # float32 [nz, nx], m/s
    meta: dict

    @property
    def iq(self) -> np.ndarray:
        """Complex64 [3, nz, nx], one image per steering angle in plane order."""
        return (self.input[0::2] + 1j * self.input[1::2]).astype(np.complex64)


class Corpus:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.manifest = json.loads((self.root / "manifest.json").read_text())
        if self.manifest.get("format") != "echoset-corpus":
            raise UstnFormatError(f"{self.root / 'manifest.json'}: not an echoset corpus manifest")

    @property
    def ids(self) -> list[str]:
        return [s["id"] for s in self.manifest["samples"]]

    @property
    def train(self) -> list[str]:
        return list(self.manifest["train"])

    @property
    def val(self) -> list[str]:
        return list(self.manifest["val"])

    def classes(self) -> dict[str, str]:
        return {s["id"]: s["class"] for s in self.manifest["samples"]}

    def load(self, sample_id: str) -> Sample:
        d = self.root / sample_id
        meta = json.loads((d / "meta.json").read_text())
        x = read_ustn(d / "input.ustn")
        y = read_ustn(d / "target.ustn")
        if x.ndim != 3 or x.shape[0] != 6 or x.dtype != np.float32:
            raise UstnFormatError(f"{d / 'input.ustn'}: expected float32 tensor of shape [6, nz, nx]")
        if y.shape != x.shape[1:] or y.dtype != np.float32:
            raise UstnFormatError(f"{d / 'target.ustn'}: expected float32 tensor of shape [nz, nx]")
        return Sample(sample_id, x, y, meta)

    def __iter__(self) -> Iterator[Sample]:
        for i in self.ids:
            yield self.load(i)

    def __len__(self) -> int:
        return len(self.manifest["samples"])

    def write_prediction(self, sample_id: str, estimate: np.ndarray, directory: str | os.PathLike | None = None) -> Path:
        est = np.asarray(estimate, dtype=np.float32)
        if est.ndim != 2:
            raise ValueError("prediction must be a 2-D map [nz, nx]")
        path = (Path(directory) / f"{sample_id}.ustn") if directory else (self.root / sample_id / "prediction.ustn")
        write_ustn(path, est)
        return path
