import numpy as np
import pytest

from unitface import numerics as nx
from unitface.face import (ARKIT_NAMES, BlendshapeClip, FaceDecoder, decode_face, face_hidden, frame_count,
                           resample)
from unitface.units import AlignmentError, UnitSequence

D = 32


@pytest.fixture
def dec():
    return FaceDecoder(nx.make_rng(0), 16, D, D, 4, fusion_depth=2, encoder_layers=2)


def _gh(T, seed=0):
    return np.random.default_rng(seed).normal(size=(T, D))


def test_resample_examples():
    E = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(resample(E, 4), E)
    e = np.array([[0.0, 2.0], [4.0, 6.0]])
    np.testing.assert_array_equal(resample(e, 3), [[0.0, 2.0], [2.0, 4.0], [4.0, 6.0]])
    np.testing.assert_array_equal(resample(e[:1], 5), np.tile(e[:1], (5, 1)))
    np.testing.assert_array_equal(resample(e, 1), e[:1])
    with pytest.raises(ValueError):
        resample(e, 0)


def test_resample_matches_scalar_interpolation():
    E = np.random.default_rng(1).normal(size=(7, 2))
    T_y = 12
    out = resample(E, T_y)
    for j in range(T_y):
        x = j * 6 / 11
        for c in range(2):
            assert out[j, c] == pytest.approx(np.interp(x, np.arange(7), E[:, c]), abs=1e-14)


def test_frame_count_examples():
    assert frame_count(10, 12.5, 25.0) == 20
    assert frame_count(1, 12.5, 25.0) == 2
    assert frame_count(9, 25.0, 25.0) == 9
    assert frame_count(1, 100.0, 25.0) == 1
    with pytest.raises(ValueError):
        frame_count(3, 0.0, 25.0)


def test_arkit_names():
    assert len(ARKIT_NAMES) == len(set(ARKIT_NAMES)) == 52
    assert "jawOpen" in ARKIT_NAMES


def test_clip_shape_and_range(dec):
    units = UnitSequence([1, 2, 3, 15, 0])
    clip = decode_face(units, _gh(5), dec)
    assert clip.coeffs.shape == (10, 52)
    assert np.all((clip.coeffs > 0) & (clip.coeffs < 1))
    again = decode_face(units, _gh(5), dec)
    np.testing.assert_array_equal(clip.coeffs, again.coeffs)


def test_zero_head_gives_half(dec):
    dec.head.W.value[...] = 0.0
    dec.head.b.value[...] = 0.0
    clip = decode_face(UnitSequence([4, 5]), _gh(2), dec)
    np.testing.assert_array_equal(clip.coeffs, 0.5)


def test_face_hidden_identity_and_length(dec):
    dec.fusion.zero_values()
    units = UnitSequence([3, 7, 7, 1])
    Hf = face_hidden(units, _gh(4), dec)
    assert Hf.shape[0] == frame_count(4)
    np.testing.assert_array_equal(Hf, resample(dec.unit_emb.value[[3, 7, 7, 1]], 8))


def test_alignment_error(dec):
    with pytest.raises(AlignmentError):
        decode_face(UnitSequence([1, 2, 3]), _gh(2), dec)


def test_every_frame_sees_every_unit(dec):
    a = decode_face(UnitSequence([1, 2, 3, 4, 5, 6]), _gh(6), dec).coeffs
    b = decode_face(UnitSequence([1, 2, 3, 4, 5, 9]), _gh(6), dec).coeffs
    # the last unit changed; the first frame moves through bidirectional attention
    assert np.all(np.abs(a - b).max(axis=1) > 0)


def test_periodicity_pathway(dec):
    dec.fusion.zero_values()
    for blk in dec.encoder.blocks:
        blk.zero_residual()
    # one source unit is copied to every frame, so every H_f row is equal
    y = dec.forward([0], _gh(1), 60)[0]
    assert y.shape[0] == 60
    for t in range(35):
        np.testing.assert_array_equal(y[t], y[t + 25])
    assert not np.array_equal(y[0], y[1])


def test_clip_validation():
    with pytest.raises(nx.ShapeError):
        BlendshapeClip(np.zeros((3, 51)))
    with pytest.raises(ValueError):
        BlendshapeClip(np.zeros((3, 52)), fps=0)


def test_face_decoder_gradients():
    from unitface.verify import grad_face_decoder

    for seed in (0, 1, 2):
        rep = grad_face_decoder(seed)
        assert rep.passed, rep.worst()
