import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pairshape.estimator import G2Accumulator, finalize, project_minus, project_plus
from pairshape.fields import Disk, GridSpec, PhaseMask, make_biphoton, make_envelope
from pairshape.propagation import propagate_g2_full, propagate_pairs_analytic
from pairshape.slm_calibration import PixelResponse, invert_response

N = 8
SPEC = GridSpec(N)
phases = arrays(np.float64, (N, N), elements=st.floats(0, 2 * np.pi))
settings.register_profile("repo", max_examples=25, deadline=None)
settings.load_profile("repo")


@given(phases, st.sampled_from(["NF", "FF"]))
def test_analytic_matches_full_and_conserves(theta, config):
    state = make_biphoton(SPEC, config, make_envelope(SPEC, Disk(3)))
    m = PhaseMask(SPEC, theta)
    a = propagate_pairs_analytic(state, m).data
    assert abs(a.sum() - 1) < 1e-10
    assert np.max(np.abs(a - propagate_g2_full(state, m).data)) < 1e-10


@given(phases, st.floats(-10, 10))
def test_ff_global_offset_and_centrosymmetry(theta, c):
    state = make_biphoton(SPEC, "FF", make_envelope(SPEC, Disk(3)))
    a = propagate_pairs_analytic(state, PhaseMask(SPEC, theta))
    b = propagate_pairs_analytic(state, PhaseMask(SPEC, theta + c))
    assert np.max(np.abs(a.data - b.data)) < 1e-12
    cm = project_minus(a).data
    assert np.max(np.abs(cm - cm[::-1, ::-1])) < 1e-10


@given(arrays(np.float64, (16, 16), elements=st.floats(-1, 1)))
def test_projection_mass(g):
    from pairshape.propagation import G2Tensor
    t = G2Tensor(GridSpec(4), g)
    assert abs(project_plus(t).data.sum() - g.sum()) < 1e-9
    assert abs(project_minus(t).data.sum() - g.sum()) < 1e-9


@given(arrays(np.int64, (30, 4, 4), elements=st.integers(0, 20)), st.integers(2, 15))
def test_accumulator_symmetric_and_real_block_invariant(frames, block):
    a = G2Accumulator(4)
    for k in range(0, 30, block):
        chunk = frames[k:k + block]
        if chunk.shape[0] >= 2:
            a.update(chunk)
    assert np.max(np.abs(a.R - a.R.T)) < 1e-9 and np.max(np.abs(a.A - a.A.T)) < 1e-9
    used = a.frames_processed
    ref = G2Accumulator(4).update(frames[:used]) if used == 30 else None
    if ref is not None:
        assert np.max(np.abs(a.real() - ref.real())) < 1e-9
    assert np.all(np.isfinite(finalize(a).data))


@given(st.floats(0.0, 0.8), st.floats(1.0, 1.1))
def test_inverse_monotone_round_trip(bend, scale):
    # bend * 255 / g_2pi <= 1 keeps the concave response monotone up to level 255
    g2pi = 230 / scale
    resp = PixelResponse.concave(g2pi, bend) if bend > 0 else PixelResponse.linear(g2pi)
    inv = invert_response(resp)
    ys = np.linspace(0, 2 * np.pi, 40)
    gs = inv(ys)
    assert np.all(np.diff(gs) > 0)
    assert np.max(np.abs(resp(gs) - ys)) < 1e-9
