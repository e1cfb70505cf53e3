import numpy as np
import pytest

from unitface.evaluation import LatencyRecord, RatingSheet, default_rig
from unitface.face import ARKIT_NAMES, BlendshapeClip
from unitface.formats import (CLIP_HEADER, FormatError, format_clip, format_report, format_rig, format_units,
                              parse_clip, parse_rig, parse_units, read_clip, read_latency, read_ratings, read_rig,
                              read_units, write_clip, write_ratings, write_rig, write_units)


def test_units_round_trip(tmp_path):
    seqs = [("a", (1, 2, 3)), ("b-2", ()), ("c", (63,))]
    write_units(tmp_path / "u.txt", seqs)
    assert (tmp_path / "u.txt").read_text() == "a 1 2 3\nb-2\nc 63\n"
    back = read_units(tmp_path / "u.txt")
    assert back == seqs
    assert format_units(back) == format_units(seqs)


def test_units_errors():
    with pytest.raises(FormatError, match=":3:"):
        parse_units("a 1\n# note\nb x\n", "f.txt")
    with pytest.raises(FormatError, match=":2:"):
        parse_units("a 1\na 2\n", "f.txt")
    with pytest.raises(FormatError, match=":1:"):
        parse_units("a -1\n", "f.txt")
    with pytest.raises(ValueError):
        format_units([("has space", (1,))])


def test_clip_round_trip_is_byte_identical(tmp_path):
    clip = BlendshapeClip(np.random.default_rng(0).random((5, 52)))
    write_clip(tmp_path / "c.csv", clip)
    text = (tmp_path / "c.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "# fps=25" and lines[1] == CLIP_HEADER
    assert lines[1].split(",")[2:] == list(ARKIT_NAMES)
    assert lines[3].startswith("1,0.04,")
    back = read_clip(tmp_path / "c.csv")
    np.testing.assert_allclose(back.coeffs, clip.coeffs, rtol=1e-8)
    assert format_clip(back) == text


def test_clip_errors():
    good = format_clip(BlendshapeClip(np.full((2, 52), 0.5)))
    with pytest.raises(FormatError, match=":1:"):
        parse_clip(good.replace("# fps=25", "# fps=0"), "c.csv")
    with pytest.raises(FormatError, match=":2:"):
        parse_clip(good.replace("jawOpen", "jawShut"), "c.csv")
    lines = good.splitlines()
    with pytest.raises(FormatError, match=":4:"):
        parse_clip("\n".join(lines[:3] + [lines[3].rsplit(",", 1)[0]]), "c.csv")
    with pytest.raises(FormatError, match=":4:"):
        parse_clip("\n".join(lines[:3] + ["5" + lines[3][1:]]), "c.csv")
    with pytest.raises(FormatError):
        parse_clip("\n".join(lines[:2]), "c.csv")


def test_rig_round_trip(tmp_path):
    rig = default_rig(4)
    write_rig(tmp_path / "r.json", rig)
    back = read_rig(tmp_path / "r.json")
    np.testing.assert_array_equal(back.deltas, rig.deltas)
    np.testing.assert_array_equal(back.base, rig.base)
    assert back.lip_indices == rig.lip_indices
    assert format_rig(back) == (tmp_path / "r.json").read_text()
    with pytest.raises(FormatError):
        parse_rig('{"base": []}')
    with pytest.raises(FormatError):
        parse_rig("{nope")


def test_ratings_round_trip(tmp_path):
    sheet = RatingSheet.from_counts([(5, 2, 1), (0, 8, 0)])
    write_ratings(tmp_path / "s.csv", sheet)
    assert read_ratings(tmp_path / "s.csv").pairs == sheet.pairs
    (tmp_path / "bad.csv").write_text("pair_id,rater_id,label\np1,r1,A\np1,r1,B\n")
    with pytest.raises(FormatError, match=":3:"):
        read_ratings(tmp_path / "bad.csv")
    (tmp_path / "bad2.csv").write_text("pair,rater,label\n")
    with pytest.raises(FormatError, match=":1:"):
        read_ratings(tmp_path / "bad2.csv")


def test_latency_file(tmp_path):
    (tmp_path / "l.csv").write_text("t_e2e,t_speech,t_first_unit,t_face_extra\n4.316,2.0,0.029,0.012\n")
    assert read_latency(tmp_path / "l.csv") == [LatencyRecord(4.316, 2.0, 0.029, 0.012)]
    (tmp_path / "m.csv").write_text("t_e2e,t_speech,t_first_unit,t_face_extra\n1,1,5,0\n")
    with pytest.raises(FormatError, match=":2:"):
        read_latency(tmp_path / "m.csv")


def test_report_format():
    assert format_report([("wer", 1 / 3), ("utterances", 2)]) == "metric,value\nwer,0.3333333333333333\nutterances,2.0\n"
