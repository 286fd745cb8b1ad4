import numpy as np
import pytest

from pairshape.detector import (DetectorModel, FrameBlock, apply_smear, iter_blocks,
                                synthesize_block)
from pairshape.fields import GridSpec, PhaseMask, make_biphoton, make_envelope, Disk
from pairshape.propagation import G2Tensor, propagate_pairs_analytic


def nf_truth(n=8):
    s = GridSpec(n)
    return propagate_pairs_analytic(make_biphoton(s, "NF", make_envelope(s, Disk(n / 4))),
                                    PhaseMask.flat(s))


def test_model_validation():
    for kw in ({"pairs_per_frame": -1}, {"stray_rate": -0.1}, {"readout_noise": -1},
               {"quantum_efficiency": 0}, {"quantum_efficiency": 1.1},
               {"smear_fraction": 1.0}, {"smear_fraction": -0.1}):
        with pytest.raises(ValueError):
            DetectorModel(**kw)


def test_frame_block_validation():
    with pytest.raises(ValueError):
        FrameBlock(4, np.zeros((1, 4, 4)))
    with pytest.raises(ValueError):
        FrameBlock(4, np.zeros((3, 4, 5)))
    with pytest.raises(ValueError):
        FrameBlock(2, -np.ones((2, 2, 2)))


def test_empty_source_gives_zero_frames():
    b = synthesize_block(nf_truth(), DetectorModel(pairs_per_frame=0), 50)
    assert b.m == 50 and not b.data.any()


def test_unnormalised_truth_rejected():
    t = nf_truth()
    with pytest.raises(ValueError):
        synthesize_block(G2Tensor(t.spec, 2 * t.data), DetectorModel(), 4)
    with pytest.raises(ValueError):
        synthesize_block(t, DetectorModel(), 1)


def test_seed_determinism_and_slicing():
    t = nf_truth()
    model = DetectorModel(pairs_per_frame=3, stray_rate=1, readout_noise=0.5, seed=7)
    a = synthesize_block(t, model, 40)
    b = synthesize_block(t, model, 40, workers=4)
    assert np.array_equal(a.data, b.data)
    tail = synthesize_block(t, model, 10, start=30)
    assert np.array_equal(a.data[30:], tail.data)
    other = synthesize_block(t, DetectorModel(pairs_per_frame=3, stray_rate=1,
                                              readout_noise=0.5, seed=8), 40)
    assert not np.array_equal(a.data, other.data)


def test_iter_blocks_matches_single_block():
    t = nf_truth()
    model = DetectorModel(seed=3)
    whole = synthesize_block(t, model, 25).data
    parts = np.concatenate([b.data for b in iter_blocks(t, model, 25, 10)])
    assert np.array_equal(whole, parts)


def test_mean_counts_per_frame():
    model = DetectorModel(pairs_per_frame=5, stray_rate=2, seed=2)
    frames = 10_000
    b = synthesize_block(nf_truth(), model, frames)
    totals = b.data.reshape(frames, -1).sum(axis=1)
    mean = 2 * 5 + 2
    var = 4 * 5 + 2  # 2 x Poisson(mu) plus Poisson(stray)
    assert abs(totals.mean() - mean) < 3 * np.sqrt(var / frames)


def test_pairs_stay_in_frame():
    # each pair lands on a diagonal pixel pair, so with one pair per frame at most
    # two photons show up and they share a pixel
    s = GridSpec(4)
    g = np.zeros((16, 16))
    g[5, 5] = 1.0
    b = synthesize_block(G2Tensor(s, g), DetectorModel(pairs_per_frame=2, seed=4), 500)
    flat = b.data.reshape(500, -1)
    assert np.all(flat.sum(axis=1) % 2 == 0)
    assert np.all(flat[:, np.arange(16) != 5] == 0)


def test_pair_histogram_converges_to_truth():
    t = nf_truth(4)
    frames = 100_000
    model = DetectorModel(pairs_per_frame=5, seed=11)
    b = synthesize_block(t, model, frames)
    x = b.data.reshape(frames, -1).astype(float)
    # cross-pixel coincidences per frame minus the accidental estimate
    hist = (x.T @ x) / frames - np.outer(x.mean(0), x.mean(0))
    hist /= model.pairs_per_frame * 2
    g = t.data + t.data.T
    g = g / 2
    off = ~np.eye(16, dtype=bool)
    top = np.argsort(np.where(off, g, 0).ravel())[::-1][:10]
    rel = np.abs(hist.ravel()[top] - g.ravel()[top]) / g.ravel()[top]
    assert rel.max() < 0.05


def test_quantum_efficiency_thins_counts():
    b = synthesize_block(nf_truth(), DetectorModel(pairs_per_frame=5, quantum_efficiency=0.5,
                                                   seed=5), 4000)
    assert b.data.sum() / 4000 == pytest.approx(5.0, rel=0.05)


def test_readout_noise_clamped_and_integer():
    b = synthesize_block(nf_truth(), DetectorModel(pairs_per_frame=0, readout_noise=3,
                                                   seed=6), 20)
    assert b.data.dtype == np.uint16 and b.data.min() == 0 and b.data.max() > 0


def test_smear_single_photon():
    f = np.zeros((1, 6, 6))
    f[0, 2, 3] = 1
    out = apply_smear(f, 0.5)[0]
    assert np.all(out[np.arange(6) != 2] == 0)
    assert np.all(out[2, :3] == 0) and np.all(out[2, 3:] > 0)
    assert out[2, 3:].tolist() == [0.5, 0.25, 0.125]
    assert np.array_equal(apply_smear(f, 0.0), f)
