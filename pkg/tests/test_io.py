import numpy as np
import pytest

from pairshape import io
from pairshape.detector import FrameBlock
from pairshape.fields import ComplexGrid, GridSpec, PhaseMask
from pairshape.propagation import G2Tensor


def test_grid_round_trip(tmp_path, rng):
    s = GridSpec(8, pitch=12.5e-6, wavelength=810e-9, focal_eff=0.3)
    f = ComplexGrid(s, rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)))
    io.write_grid(tmp_path / "f.bpg1", f)
    g = io.read_grid(tmp_path / "f.bpg1")
    assert isinstance(g, ComplexGrid) and np.array_equal(g.data, f.data)
    assert (g.spec.pitch, g.spec.wavelength, g.spec.focal_eff) == (12.5e-6, 810e-9, 0.3)
    m = PhaseMask(s, rng.uniform(0, 6, (8, 8)))
    io.write_grid(tmp_path / "m.bpg1", m)
    back = io.read_grid(tmp_path / "m.bpg1")
    assert isinstance(back, PhaseMask) and np.array_equal(back.theta, m.theta)
    with pytest.raises(TypeError):
        io.write_grid(tmp_path / "x", np.zeros(3))


def test_g2_round_trip_and_layout(tmp_path, rng):
    g = G2Tensor(GridSpec(4), rng.random((16, 16)))
    p = tmp_path / "g.bpg2"
    io.write_g2(p, g)
    raw = p.read_bytes()
    assert raw[:4] == b"BPG2" and int.from_bytes(raw[4:8], "little") == 4
    assert len(raw) == 8 + 8 * 256
    assert np.array_equal(io.read_g2(p).data, g.data)


def test_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE" + bytes(8))
    for fn in (io.read_grid, io.read_g2, io.frames_header):
        with pytest.raises(io.FormatError):
            fn(p)
    p.write_bytes(b"BPG2" + (4).to_bytes(4, "little") + bytes(10))
    with pytest.raises(io.FormatError):
        io.read_g2(p)
    p.write_bytes(b"BPF1" + (2).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"\x01\x00")
    with pytest.raises(io.FormatError):
        io.frames_header(p)


def test_frames_round_trip_and_blocks(tmp_path, rng):
    data = rng.integers(0, 500, (11, 4, 4)).astype(np.uint16)
    p = tmp_path / "s.bpf1"
    io.write_frames(p, FrameBlock(4, data))
    raw = p.read_bytes()
    assert raw[:4] == b"BPF1" and len(raw) == 14 + 11 * 16 * 2
    assert io.frames_header(p) == (4, 11)
    assert np.array_equal(io.read_frames(p).data, data)
    sizes = [b.shape[0] for b in io.iter_frames(p, 5)]
    assert sizes == [5, 6]
    assert np.array_equal(np.concatenate(list(io.iter_frames(p, 5))), data)
    with pytest.raises(ValueError):
        list(io.iter_frames(p, 1))


def test_frame_writer_streams(tmp_path, rng):
    p = tmp_path / "w.bpf1"
    with io.FrameWriter(p, 3) as w:
        w.write(rng.integers(0, 5, (4, 3, 3)))
        w.write(rng.integers(0, 5, (6, 3, 3)))
        with pytest.raises(ValueError):
            w.write(np.zeros((2, 4, 4)))
    assert io.frames_header(p) == (3, 10)


def test_csv_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    io.write_csv(p, ["a", "b"], [(np.int64(1), np.float64(0.1)), (2, 1 / 3)])
    r = io.read_csv(p)
    assert r[0] == {"a": "1", "b": "0.1"}
    assert float(r[1]["b"]) == 1 / 3
