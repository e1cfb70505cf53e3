"""Plain-text file formats: units, blendshape clips, rigs, ratings, latency, reports."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .evaluation import LatencyRecord, MetricError, RatingSheet, Rig, normalize_label
from .face import ARKIT_NAMES, NUM_BLENDSHAPES, BlendshapeClip


class FormatError(ValueError):
    pass


def _fail(path, line: int | None, msg: str):
    where = f"{path}" if line is None else f"{path}:{line}"
    raise FormatError(f"{where}: {msg}")


def _write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


# --------------------------------------------------------------------------
# units: "<id> u1 u2 ..." per line
# --------------------------------------------------------------------------

def format_units(seqs: Iterable[tuple[str, Sequence[int]]]) -> str:
    lines = []
    for sid, units in seqs:
        sid = str(sid)
        if not sid or any(c.isspace() for c in sid):
            raise ValueError(f"sequence id {sid!r} must be non-empty without whitespace")
        lines.append(" ".join([sid, *(str(int(u)) for u in units)]))
    return "".join(line + "\n" for line in lines)


def parse_units(text: str, path="<units>") -> list[tuple[str, tuple[int, ...]]]:
    out = []
    seen = set()
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        sid, *rest = line.split()
        if sid in seen:
            _fail(path, n, f"duplicate sequence id {sid!r}")
        seen.add(sid)
        try:
            units = tuple(int(x) for x in rest)
        except ValueError:
            _fail(path, n, "unit ids must be decimal integers")
        if any(u < 0 for u in units):
            _fail(path, n, "unit ids must be non-negative")
        out.append((sid, units))
    return out


def write_units(path, seqs) -> None:
    _write_text(path, format_units(seqs))


def read_units(path) -> list[tuple[str, tuple[int, ...]]]:
    return parse_units(Path(path).read_text(encoding="utf-8"), path)


# --------------------------------------------------------------------------
# blendshape clip CSV
# --------------------------------------------------------------------------

CLIP_HEADER = "frame,time_sec," + ",".join(ARKIT_NAMES)


def _g9(x: float) -> str:
    return format(float(x), ".9g")


def format_clip(clip: BlendshapeClip) -> str:
    lines = [f"# fps={clip.fps:g}", CLIP_HEADER]
    for t, row in enumerate(clip.coeffs):
        lines.append(",".join([str(t), _g9(t / clip.fps), *(_g9(v) for v in row)]))
    return "\n".join(lines) + "\n"


def parse_clip(text: str, path="<clip>") -> BlendshapeClip:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# fps="):
        _fail(path, 1, "expected a leading '# fps=<rate>' line")
    try:
        fps = float(lines[0][len("# fps="):])
    except ValueError:
        _fail(path, 1, "bad fps value")
    if not (math.isfinite(fps) and fps > 0):
        _fail(path, 1, "fps must be positive")
    if len(lines) < 2 or lines[1] != CLIP_HEADER:
        _fail(path, 2, "header must be frame,time_sec followed by the 52 coefficient names in order")
    rows = []
    for n, line in enumerate(lines[2:], 3):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != NUM_BLENDSHAPES + 2:
            _fail(path, n, f"expected {NUM_BLENDSHAPES + 2} columns, got {len(cells)}")
        try:
            frame = int(cells[0])
            vals = [float(c) for c in cells[2:]]
        except ValueError:
            _fail(path, n, "non-numeric cell")
        if frame != len(rows):
            _fail(path, n, f"frame index {frame}, expected {len(rows)}")
        rows.append(vals)
    if not rows:
        _fail(path, None, "clip has no frames")
    return BlendshapeClip(np.array(rows), fps)


def write_clip(path, clip: BlendshapeClip) -> None:
    _write_text(path, format_clip(clip))


def read_clip(path) -> BlendshapeClip:
    return parse_clip(Path(path).read_text(encoding="utf-8"), path)


# --------------------------------------------------------------------------
# rig JSON
# --------------------------------------------------------------------------

def format_rig(rig: Rig) -> str:
    doc = {"base": rig.base.tolist(), "deltas": rig.deltas.tolist(), "lip_indices": list(rig.lip_indices)}
    return json.dumps(doc, sort_keys=True) + "\n"


def parse_rig(text: str, path="<rig>") -> Rig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        _fail(path, e.lineno, f"invalid JSON ({e.msg})")
    if not isinstance(doc, dict) or set(doc) != {"base", "deltas", "lip_indices"}:
        _fail(path, None, "rig must have exactly the keys base, deltas, lip_indices")
    try:
        return Rig(np.array(doc["base"], dtype=np.float64), np.array(doc["deltas"], dtype=np.float64),
                   tuple(doc["lip_indices"]))
    except (MetricError, ValueError, TypeError) as e:
        _fail(path, None, str(e))


def write_rig(path, rig: Rig) -> None:
    _write_text(path, format_rig(rig))


def read_rig(path) -> Rig:
    return parse_rig(Path(path).read_text(encoding="utf-8"), path)


# --------------------------------------------------------------------------
# CSV tables: ratings, latency records, metric reports
# --------------------------------------------------------------------------

def _csv_rows(path, columns: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(columns):
            _fail(path, 1, f"header must be {','.join(columns)}")
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(columns):
                _fail(path, reader.line_num, f"expected {len(columns)} columns, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def read_ratings(path) -> RatingSheet:
    """Rows ``pair_id,rater_id,label``; pairs keep first-appearance order."""
    pairs: dict[str, dict[str, str]] = {}
    for n, (pid, rid, label) in _csv_rows(path, ("pair_id", "rater_id", "label")):
        try:
            label = normalize_label(label)
        except MetricError as e:
            _fail(path, n, str(e))
        ratings = pairs.setdefault(pid, {})
        if rid in ratings:
            _fail(path, n, f"rater {rid!r} rated pair {pid!r} twice")
        ratings[rid] = label
    if not pairs:
        _fail(path, None, "no ratings")
    counts = {len(r) for r in pairs.values()}
    if len(counts) != 1:
        _fail(path, None, "pairs have different numbers of ratings")
    return RatingSheet([tuple(r[k] for k in sorted(r)) for r in pairs.values()])


def write_ratings(path, sheet: RatingSheet) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair_id", "rater_id", "label"])
    for i, pair in enumerate(sheet.pairs):
        for j, label in enumerate(pair):
            w.writerow([f"p{i:03d}", f"r{j:02d}", label])
    _write_text(path, buf.getvalue())


LATENCY_COLUMNS = ("t_e2e", "t_speech", "t_first_unit", "t_face_extra")


def read_latency(path) -> list[LatencyRecord]:
    out = []
    for n, row in _csv_rows(path, LATENCY_COLUMNS):
        try:
            out.append(LatencyRecord(*(float(x) for x in row)))
        except (ValueError, MetricError) as e:
            _fail(path, n, str(e))
    return out


def format_report(rows: Sequence[tuple[str, float]]) -> str:
    return "metric,value\n" + "".join(f"{k},{float(v)!r}\n" for k, v in rows)


def write_report(path, rows) -> None:
    _write_text(path, format_report(rows))


def read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def format_kv(d: dict[str, object]) -> str:
    return "".join(f"{k}={v}\n" for k, v in d.items())

