import numpy as np
import pytest

from pairshape.detector import DetectorModel, synthesize_block
from pairshape.estimator import (MINUS, NEIGHBOR_MEAN, PLUS, ZERO, EmptyAccumulatorError,
                                 G2Accumulator, Projection, accumulate_block, finalize,
                                 fix_artifacts, peak_snr, project, project_minus, project_plus,
                                 project_profile)
from pairshape.fields import Disk, GridSpec, PhaseMask, make_biphoton, make_envelope, make_grating
from pairshape.propagation import G2Tensor, pair_profile, propagate_pairs_analytic


def test_constant_frames_cancel():
    acc = G2Accumulator(4)
    accumulate_block(acc, np.full((5, 4, 4), 3.0))
    assert np.allclose(acc.real(), 9) and np.allclose(acc.accidental(), 9)
    assert np.allclose(finalize(acc).data, 0)


def test_two_frame_example(oracle):
    acc = G2Accumulator(2)
    frames = np.array([[[1, 0], [0, 0]], [[0, 1], [0, 0]]], dtype=float)
    acc.update(frames)
    assert np.array_equal(acc.real(), np.array(oracle["two_frame_R"]))
    assert np.array_equal(acc.accidental(), np.array(oracle["two_frame_A"]))


def test_accumulator_errors():
    acc = G2Accumulator(4)
    with pytest.raises(EmptyAccumulatorError):
        finalize(acc)
    with pytest.raises(ValueError):
        acc.update(np.zeros((4, 2, 2)))
    with pytest.raises(ValueError):
        acc.update(np.zeros((1, 3, 3)))


def test_symmetry_and_counters(rng):
    acc = G2Accumulator(4)
    for k in range(3):
        acc.update(rng.poisson(2, (7, 4, 4)))
        assert np.max(np.abs(acc.R - acc.R.T)) < 1e-9
        assert np.max(np.abs(acc.A - acc.A.T)) < 1e-9
        assert acc.frames_processed == 7 * (k + 1) and acc.blocks_processed == k + 1


def test_uncorrelated_frames_give_small_g2(rng):
    n, m, blocks = 4, 2000, 10
    acc = G2Accumulator(n)
    per_block = []
    for _ in range(blocks):
        x = rng.poisson(1.0, (m, n, n))
        acc.update(x)
        b = G2Accumulator(n).update(x)
        per_block.append(finalize(b).data)
    g = finalize(acc).data
    sigma = np.std(per_block, axis=0, ddof=1) / np.sqrt(blocks)
    off = ~np.eye(n * n, dtype=bool)
    assert np.all(np.abs(g[off]) < 5 * sigma[off])


def test_targeted_pair_is_global_max(rng):
    n = 4
    x = rng.poisson(0.3, (3000, n * n)).astype(float)
    hits = rng.random(3000) < 0.5
    x[hits, 3] += 1
    x[hits, 12] += 1
    g = finalize(G2Accumulator(n).update(x.reshape(-1, n, n))).data
    off = np.where(np.eye(n * n, dtype=bool), -np.inf, g)
    assert set(np.unravel_index(np.argmax(off), g.shape)) == {3, 12}


def test_block_size_invariance_within_block(rng):
    x = rng.poisson(1.0, (200, 4, 4)).astype(float)
    a, b = G2Accumulator(4), G2Accumulator(4)
    for k in range(0, 200, 10):
        a.update(x[k:k + 10])
    for k in range(0, 200, 100):
        b.update(x[k:k + 100])
    assert np.max(np.abs(a.real() - b.real())) < 1e-9
    # within-block accidentals differ only through the block edges
    rel = np.abs(a.accidental() - b.accidental()).max() / np.abs(b.accidental()).max()
    assert rel < 2 * 20 / 200


def test_span_blocks_is_cut_independent(rng):
    x = rng.poisson(1.0, (120, 4, 4)).astype(float)
    a, b = G2Accumulator(4, span_blocks=True), G2Accumulator(4, span_blocks=True)
    for k in range(0, 120, 10):
        a.update(x[k:k + 10])
    for k in range(0, 120, 40):
        b.update(x[k:k + 40])
    assert np.max(np.abs(finalize(a).data - finalize(b).data)) < 1e-9


def test_linearity_over_stacks(rng):
    x1 = rng.poisson(1.0, (300, 4, 4))
    x2 = rng.poisson(2.0, (100, 4, 4))
    both = G2Accumulator(4).update(x1).update(x2)
    g1 = finalize(G2Accumulator(4).update(x1)).data
    g2 = finalize(G2Accumulator(4).update(x2)).data
    assert np.max(np.abs(finalize(both).data - (300 * g1 + 100 * g2) / 400)) < 1e-9
    merged = G2Accumulator(4).update(x1).merge(G2Accumulator(4).update(x2))
    assert np.max(np.abs(finalize(merged).data - finalize(both).data)) < 1e-12


@pytest.mark.parametrize("workers", [2, 4, 8])
def test_worker_count_invariance(workers, rng):
    x = rng.poisson(1.0, (257, 4, 4))
    a = G2Accumulator(4).update(x)
    b = G2Accumulator(4).update(x, workers=workers)
    assert np.max(np.abs(a.R - b.R)) < 1e-12 and np.max(np.abs(a.A - b.A)) < 1e-12


def test_monte_carlo_recovers_plus_peak():
    s = GridSpec(8)
    st = make_biphoton(s, "NF", make_envelope(s, Disk(2)))
    truth = propagate_pairs_analytic(st, PhaseMask.flat(s))
    acc = G2Accumulator(8)
    for k in range(0, 100_000, 10_000):
        acc.update(synthesize_block(truth, DetectorModel(pairs_per_frame=5, seed=3),
                                    10_000, start=k).data)
    g = fix_artifacts(finalize(acc))
    est = project_plus(g)
    ref = project_plus(fix_artifacts(truth))
    assert np.unravel_index(np.argmax(est.data), est.data.shape) == \
        np.unravel_index(np.argmax(ref.data), ref.data.shape)
    assert est.data.max() / est.data.sum() == pytest.approx(ref.data.max() / ref.data.sum(),
                                                            rel=0.1)


def test_fix_artifacts_policies(rng):
    s = GridSpec(4)
    g = rng.random((16, 16))
    g = G2Tensor(s, g + g.T)
    poisoned = g.data.copy()
    np.fill_diagonal(poisoned, 1e6)
    fixed = fix_artifacts(G2Tensor(s, poisoned), NEIGHBOR_MEAN)
    # neighbour mean of (r1, r1): entries (r1, r1 + d) for unit steps d
    g4 = g.as_4d()
    i, j = 1, 1
    neigh = [g4[i, j, i + a, j + b] for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
    assert fixed.as_4d()[i, j, i, j] == pytest.approx(np.mean(neigh))
    assert fixed.data.max() < 10
    z = fix_artifacts(g, ZERO, same_row=True).as_4d()
    for r in range(4):
        assert np.all(z[r, :, r, :] == 0)
    with pytest.raises(ValueError):
        fix_artifacts(g, "median")


def test_smear_band_removed():
    s = GridSpec(8)
    truth = propagate_pairs_analytic(make_biphoton(s, "FF", make_envelope(s, Disk(3))),
                                     PhaseMask.flat(s))
    frames = synthesize_block(truth, DetectorModel(pairs_per_frame=5, smear_fraction=0.2,
                                                   seed=9), 20_000)
    g = finalize(G2Accumulator(8).update(frames.data))
    ref = project_minus(truth).data
    raw = project_minus(fix_artifacts(g)).data
    mean = project_minus(fix_artifacts(g, same_row=True)).data
    zero = project_minus(fix_artifacts(g, ZERO, same_row=True)).data
    o = 7
    bg = np.mean(np.abs(raw[o + 2:o + 5, o - 3:o + 4]))

    def streak(c):
        return np.mean(np.abs(c - ref)[o, o + 1:o + 4])

    assert streak(raw) > 2 * bg
    assert streak(zero) < 2 * bg
    assert streak(mean) < 0.3 * streak(raw)


def test_projection_examples():
    n = 4
    s = GridSpec(n)
    eye = G2Tensor(s, np.eye(n * n) / (n * n))
    cm = project_minus(eye)
    assert cm.data.shape == (7, 7) and cm.value_at(0, 0) == pytest.approx(1)
    anti = np.zeros((n, n, n, n))
    for i in range(n):
        for j in range(n):
            anti[i, j, (n - i) % n, (n - j) % n] = 1
    cp = project_plus(G2Tensor(s, anti.reshape(n * n, n * n) / anti.sum()))
    assert cp.value_at(0, 0) == pytest.approx(cp.data.max())
    uni = G2Tensor(s, np.ones((n * n, n * n)))
    tri = n - np.abs(np.arange(2 * n - 1) - (n - 1))
    assert np.array_equal(project_minus(uni).data, np.outer(tri, tri) * n * n / n / n)
    assert np.array_equal(project_plus(uni).data, np.outer(tri, tri) * 1.0)


def test_projection_mass_and_dispatch(rng):
    s = GridSpec(4)
    g = G2Tensor(s, rng.random((16, 16)))
    for kind in (PLUS, MINUS):
        p = project(g, kind)
        assert p.data.sum() == pytest.approx(g.data.sum(), abs=1e-9)
        assert p.normalized().data.sum() == pytest.approx(1)
    with pytest.raises(ValueError):
        project(g, "diag")


def test_ff_minus_centrosymmetric(rng):
    s = GridSpec(8)
    st = make_biphoton(s, "FF", make_envelope(s, Disk(3)))
    c = project_minus(propagate_pairs_analytic(st, PhaseMask(s, rng.uniform(0, 6, (8, 8))))).data
    assert np.max(np.abs(c - c[::-1, ::-1])) < 1e-10


@pytest.mark.parametrize("config", ["NF", "FF"])
def test_project_profile_matches_tensor(config, rng):
    s = GridSpec(8)
    st = make_biphoton(s, config, make_envelope(s, Disk(3)))
    m = PhaseMask(s, rng.uniform(0, 6, (8, 8)))
    prof = pair_profile(st, m)
    fast = project_profile(prof)
    slow = project(prof.to_g2(), fast.kind)
    assert np.max(np.abs(fast.data - slow.data / slow.data.sum())) < 1e-12


def test_nf_grating_first_orders():
    s = GridSpec(32)
    st = make_biphoton(s, "NF", make_envelope(s, Disk(14)))
    p = project_profile(pair_profile(st, make_grating(s, 8, np.pi / 2)))
    assert p.value_at(0, 4) > 10 * p.value_at(0, 0)
    assert p.value_at(0, -4) > 10 * p.value_at(0, 0)


def test_peak_snr():
    d = np.zeros((15, 15))
    d[::2, ::2] = 0.1
    d[7, 9] = 5.0
    (di, dj), v, snr = peak_snr(Projection(PLUS, d, 8))
    assert (di, dj) == (-1, 1) and v == 5.0 and snr > 10
