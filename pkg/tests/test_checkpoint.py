import json
import struct

import numpy as np
import pytest

from conftest import random_model
from lpn.checkpoint import MAGIC, load_checkpoint, read_header, save_checkpoint


def test_roundtrip_is_bit_exact(tmp_path):
    p = random_model(4, widths=(7, 3, 5), seed=2)
    save_checkpoint(p, tmp_path / "m.ckpt", seed=11, meta={"note": "x"})
    q, header = load_checkpoint(tmp_path / "m.ckpt")
    assert q.arch == p.arch
    assert np.array_equal(q.theta, p.theta)
    assert header["seed"] == 11 and header["meta"] == {"note": "x"}


def test_layout_on_disk(tmp_path):
    p = random_model(2, widths=(3,), seed=0)
    save_checkpoint(p, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == MAGIC
    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + length])
    assert [b["name"] for b in header["blocks"]] == ["H1", "b1", "w", "b"]
    body = np.frombuffer(raw[16 + length:], dtype="<f8")
    assert np.array_equal(body, p.theta)
    assert read_header(tmp_path / "m.ckpt") == header


def test_bad_files(tmp_path):
    (tmp_path / "junk").write_bytes(b"NOTACKPT" + bytes(8))
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "junk")
    p = random_model(2, widths=(3,), seed=0)
    save_checkpoint(p, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="values"):
        load_checkpoint(tmp_path / "short")
    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + length])
    header["format_version"] = 99
    new = json.dumps(header).encode()
    (tmp_path / "v99").write_bytes(MAGIC + struct.pack("<Q", len(new)) + new + raw[16 + length:])
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "v99")
