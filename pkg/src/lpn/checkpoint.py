"""Binary checkpoint files.

Layout (all integers little-endian)::

    bytes 0..7     magic  b"LPNCKPT1"
    bytes 8..15    uint64 length L of the JSON header
    bytes 16..16+L UTF-8 JSON header
    remainder      float64 little-endian parameter blocks, concatenated in
                   the order H1, b1, W2, H2, b2, ..., WK, HK, bK, w, b

The header holds ``format_version``, ``arch`` (input_dim, hidden_widths,
alpha, beta), ``seed``, ``blocks`` (name and shape of every block, in file
order) and a free-form ``meta`` dict.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .icnn import IcnnArch, IcnnParams

MAGIC = b"LPNCKPT1"
FORMAT_VERSION = 1


def save_checkpoint(params: IcnnParams, path, seed: int | None = None, meta: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "arch": params.arch.to_dict(),
        "seed": seed,
        "blocks": [{"name": name, "shape": list(shape)} for name, shape in params.arch.layout()],
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(params.theta.astype("<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
    return header


def _read_header(fh):
    if fh.read(8) != MAGIC:
        raise ValueError("not an LPN checkpoint (bad magic)")
    (length,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(length).decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    return header, 16 + length


def load_checkpoint(path) -> tuple[IcnnParams, dict]:
    """Parameters and the decoded header."""
    data = Path(path).read_bytes()
    header, offset = _read_header(io.BytesIO(data))
    arch = IcnnArch.from_dict(header["arch"])
    expected = [(b["name"], tuple(b["shape"])) for b in header["blocks"]]
    if expected != arch.layout():
        raise ValueError("checkpoint block list does not match its architecture")
    theta = np.frombuffer(data, dtype="<f8", offset=offset)
    if theta.size != arch.num_params:
        raise ValueError(f"checkpoint holds {theta.size} values, architecture needs {arch.num_params}")
    return IcnnParams(arch, theta.astype(np.float64)), header
