import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ckn import dataio, synth
from ckn.dataio import MaskParams
from ckn.synth import VideoClip


def test_subtract_mean_constant_clip():
    frame = np.full((4, 5, 1), 0.7)
    clip = VideoClip(np.stack([frame] * 6))
    out, mean = dataio.subtract_mean(clip)
    np.testing.assert_allclose(out.frames, 0, atol=1e-15)
    np.testing.assert_allclose(mean, frame, rtol=1e-15)


def test_subtract_mean_two_frames():
    clip = VideoClip(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
    out, mean = dataio.subtract_mean(clip)
    np.testing.assert_array_equal(out.frames.ravel(), [-1.0, 1.0])
    assert mean.item() == 2.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 6), st.integers(1, 6), st.just(1)),
              elements=st.floats(-1e3, 1e3)))
def test_mean_subtraction_properties(frames):
    clip = VideoClip(frames)
    out, mean = dataio.subtract_mean(clip)
    assert np.all(np.abs(out.frames.mean(axis=0)) <= 1e-6 * (1 + np.abs(frames).max()))
    back = dataio.add_mean(out, mean)
    np.testing.assert_allclose(back.frames, frames, atol=1e-6 * (1 + np.abs(frames).max()))


def test_normalize_range():
    clip = synth.generate("waves", 20)
    out = dataio.normalize(clip)
    assert out.frames.min() == pytest.approx(-1) and out.frames.max() == pytest.approx(1)
    flat = dataio.normalize(VideoClip(np.ones((3, 2, 2, 1))))
    assert not flat.frames.any()


def test_stack_frames_layout():
    frames = np.arange(5, dtype=float).reshape(5, 1, 1, 1)
    st3 = dataio.stack_frames(frames, 3)
    assert st3.shape == (3, 1, 1, 3)
    np.testing.assert_array_equal(st3[1, 0, 0], [1, 2, 3])


# -------------------------------------------------------------------- masking


def test_no_squares_is_identity():
    x = np.random.default_rng(0).normal(size=(16, 16, 2))
    out = dataio.apply_masks(x, MaskParams(min_squares=0, max_squares=0), 3)
    np.testing.assert_array_equal(out, x)


def test_masking_is_deterministic_given_seed():
    x = np.random.default_rng(0).normal(size=(64, 64, 1))
    a = dataio.apply_masks(x, MaskParams(), np.random.default_rng(11))
    b = dataio.apply_masks(x, MaskParams(), np.random.default_rng(11))
    assert a.tobytes() == b.tobytes()


def test_default_mask_fraction_bounds():
    rng = np.random.default_rng(0)
    x = np.ones((64, 64, 1))
    fracs = []
    for _ in range(500):
        out = dataio.apply_masks(x, MaskParams(), rng)
        fracs.append(np.mean(out == 0))
    assert min(fracs) >= 0.01 and max(fracs) <= 0.27


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 40), st.integers(8, 40), st.integers(1, 3))
def test_masks_only_touch_squares(seed, h, w, c):
    params = MaskParams(min_squares=1, max_squares=4, fill_value=-5.0)
    x = np.random.default_rng(seed).uniform(0, 1, size=(h, w, c))
    squares = dataio.draw_squares(h, w, params, np.random.default_rng(seed))
    out = dataio.apply_masks(x, params, np.random.default_rng(seed))
    inside = np.zeros((h, w), bool)
    for r, col, side in squares:
        assert 0 <= r and r + side <= h and 0 <= col and col + side <= w
        inside[r : r + side, col : col + side] = True
    np.testing.assert_array_equal(out[~inside], x[~inside])
    assert np.all(out[inside] == -5.0)
    base = min(h, w)
    for _, _, side in squares:
        assert round(0.1 * base) - 1 <= side <= round(0.3 * base) + 1


def test_mask_params_validation():
    with pytest.raises(ValueError):
        MaskParams(min_squares=3, max_squares=2)
    with pytest.raises(ValueError):
        MaskParams(min_side_frac=0.0)


# ------------------------------------------------------------------- snippets


def test_snippet_count():
    clip = VideoClip(np.zeros((100, 8, 8, 1)))
    assert len(dataio.make_snippets(clip, T=3, stack=1, stride=1)) == 97


@settings(max_examples=30, deadline=None)
@given(st.integers(6, 60), st.integers(1, 5), st.integers(1, 3), st.integers(1, 4))
def test_snippet_count_formula(n, T, stack, stride):
    if n < stack + T:
        return
    clip = VideoClip(np.zeros((n, 2, 2, 1)))
    snips = dataio.make_snippets(clip, T=T, stack=stack, stride=stride)
    assert len(snips) == (n - stack - T) // stride + 1


def test_stacked_snippets_and_targets_unmasked():
    frames = np.random.default_rng(1).normal(size=(30, 16, 16, 1))
    clip = VideoClip(frames)
    snips = dataio.make_snippets(clip, T=5, stack=3, params=MaskParams(), rng=4)
    s = snips[2]
    assert s.inputs.shape == (6, 16, 16, 3)
    assert s.masked_input_0.shape == (16, 16, 3)
    # input j holds frames start+j .. start+j+2 on channels
    np.testing.assert_array_equal(s.inputs[5, ..., 2], frames[2 + 5 + 2, ..., 0])
    np.testing.assert_array_equal(s.inputs[1:], dataio.stack_frames(frames, 3)[3:8])
    changed = s.masked_input_0 != s.inputs[0]
    assert changed.any()
    assert np.all(s.masked_input_0[changed] == 0)


def test_snippets_reject_bad_horizon():
    clip = VideoClip(np.zeros((10, 2, 2, 1)))
    with pytest.raises(ValueError):
        dataio.make_snippets(clip, T=0)
    with pytest.raises(ValueError):
        dataio.make_snippets(clip, T=9, stack=3)


def test_dataset_batches():
    clip = VideoClip(np.random.default_rng(0).normal(size=(40, 16, 16, 1)))
    ds = dataio.SnippetDataset([clip, clip], T=3, stack=1)
    assert len(ds) == 2 * 37
    masked, x = ds.batch([0, 5, 40], MaskParams(), np.random.default_rng(0))
    assert masked.shape == (3, 16, 16, 1) and x.shape == (3, 4, 16, 16, 1)
    assert x.dtype == np.float32
    np.testing.assert_array_equal(x[1, 0], clip.frames[5].astype(np.float32))


def test_preprocessor_matches_prepare_and_inverts():
    clip = synth.generate("waves", 30)
    pre = dataio.Preprocessor.fit([clip])
    a = pre.apply(clip)
    b, _ = dataio.prepare(clip)
    np.testing.assert_allclose(a.frames, b.frames, atol=1e-12)
    np.testing.assert_allclose(pre.invert(a.frames), clip.frames, atol=1e-12)
    back = dataio.Preprocessor.from_dict(pre.to_dict())
    np.testing.assert_allclose(back.apply(clip).frames, a.frames, atol=1e-12)


def test_preprocessor_pools_several_clips():
    c1 = VideoClip(np.zeros((4, 2, 2, 1)))
    c2 = VideoClip(np.full((2, 2, 2, 1), 3.0))
    pre = dataio.Preprocessor.fit([c1, c2])
    assert (pre.lo, pre.hi) == (0.0, 3.0)
    # six frames: four at -1, two at +1
    np.testing.assert_allclose(pre.mean_frame, -1 / 3)
