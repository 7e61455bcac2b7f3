import json

import numpy as np
import pytest

from shearfilm.equilibrium import FlowState
from shearfilm.io import HEADER_SIZE, CheckpointWriter, read_field, write_field


class TestFieldDump:
    def test_volume_round_trip(self, tmp_path, grid8):
        f = np.random.default_rng(0).standard_normal(grid8.shape)
        write_field(tmp_path / "f.sflb", f, grid8)
        g, meta = read_field(tmp_path / "f.sflb")
        np.testing.assert_array_equal(f, g)
        assert meta["N3"] == grid8.N3 and meta["b"] == grid8.b

    def test_surface_round_trip(self, tmp_path, grid8):
        f = np.arange(64.0).reshape(8, 8)
        write_field(tmp_path / "s.sflb", f, grid8)
        g, meta = read_field(tmp_path / "s.sflb")
        np.testing.assert_array_equal(f, g)
        assert meta["N3"] == 1

    def test_layout_x1_fastest(self, tmp_path, grid8):
        f = np.arange(64.0).reshape(8, 8)
        write_field(tmp_path / "s.sflb", f, grid8)
        raw = (tmp_path / "s.sflb").read_bytes()
        data = np.frombuffer(raw[HEADER_SIZE:], dtype="<f8")
        assert data[1] == f[1, 0]

    def test_bad_magic(self, tmp_path, grid8):
        write_field(tmp_path / "s.sflb", np.zeros(grid8.surface_shape), grid8)
        raw = bytearray((tmp_path / "s.sflb").read_bytes())
        raw[:4] = b"XXXX"
        (tmp_path / "s.sflb").write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="magic"):
            read_field(tmp_path / "s.sflb")

    def test_shape_mismatch(self, tmp_path, grid8):
        with pytest.raises(ValueError):
            write_field(tmp_path / "x.sflb", np.zeros((3, 3)), grid8)


class TestCheckpointWriter:
    def test_manifest(self, tmp_path, grid8):
        w = CheckpointWriter(tmp_path / "ck", grid8)
        w(FlowState.zeros(grid8), 0)
        w(FlowState.zeros(grid8, t=0.5), 10)
        manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        assert [e["step"] for e in manifest["snapshots"]] == [0, 10]
        eta, _ = read_field(tmp_path / "ck" / manifest["snapshots"][1]["files"]["eta"])
        assert eta.shape == grid8.surface_shape
