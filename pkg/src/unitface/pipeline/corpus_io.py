"""Corpus directories: a ``corpus.txt`` manifest plus one text file per sample.

Sample file::

    kind s2s
    tokens question 12 40 9
    matrix features 27 16
    <27 rows of 16 floats, %.17g>

Floats are written with 17 significant digits, so reading a sample back
gives the exact same array.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..formats import FormatError
from .corpus import (KINDS, AsrSample, FaceSample, S2SSample, SyntheticCorpus, T2TSample, Teachers,
                     TtsSample)

MANIFEST = "corpus.txt"
_FIELDS = {
    "asr": (AsrSample, {"features": "matrix", "transcript": "tokens"}),
    "tts": (TtsSample, {"text": "tokens", "units": "tokens"}),
    "face": (FaceSample, {"text": "tokens", "units": "tokens", "clip": "matrix"}),
    "s2s": (S2SSample, {"features": "matrix", "question": "tokens", "response": "tokens",
                        "units": "tokens", "clip": "matrix"}),
    "t2t": (T2TSample, {"prompt": "tokens", "response": "tokens"}),
}


def format_sample(kind: str, sample) -> str:
    lines = [f"kind {kind}"]
    for name, typ in _FIELDS[kind][1].items():
        v = getattr(sample, name)
        if typ == "tokens":
            lines.append(" ".join(["tokens", name, *(str(int(t)) for t in v)]))
        else:
            lines.append(f"matrix {name} {v.shape[0]} {v.shape[1]}")
            lines.extend(" ".join("%.17g" % x for x in row) for row in v)
    return "\n".join(lines) + "\n"


def parse_sample(text: str, path="<sample>"):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("kind "):
        raise FormatError(f"{path}:1: expected 'kind <name>'")
    kind = lines[0][5:].strip()
    if kind not in _FIELDS:
        raise FormatError(f"{path}:1: unknown kind {kind!r}")
    cls, fields = _FIELDS[kind]
    values = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        n = i + 1
        if not parts:
            i += 1
            continue
        if len(parts) < 2 or parts[1] not in fields or parts[0] != fields[parts[1]]:
            raise FormatError(f"{path}:{n}: unexpected line {lines[i][:40]!r}")
        name = parts[1]
        try:
            if parts[0] == "tokens":
                values[name] = tuple(int(x) for x in parts[2:])
                i += 1
            else:
                rows, cols = int(parts[2]), int(parts[3])
                block = lines[i + 1:i + 1 + rows]
                if len(block) != rows:
                    raise FormatError(f"{path}:{n}: matrix {name} is truncated")
                arr = np.array([[float(x) for x in r.split()] for r in block], dtype=np.float64)
                if arr.shape != (rows, cols):
                    raise FormatError(f"{path}:{n}: matrix {name} is not {rows}x{cols}")
                values[name] = arr
                i += 1 + rows
        except (ValueError, IndexError):
            raise FormatError(f"{path}:{n}: malformed {parts[0]} line") from None
    missing = set(fields) - set(values)
    if missing:
        raise FormatError(f"{path}: missing fields {sorted(missing)}")
    return kind, cls(**values)


def _manifest(corpus: SyntheticCorpus) -> str:
    t = corpus.teachers
    d = {"seed": corpus.seed, "vocab_text": t.vocab_text, "vocab_units": t.vocab_units, "d_enc": t.d_enc,
         "unit_rate": repr(t.unit_rate), "fps": repr(t.fps)}
    d.update({f"size_{k}": len(corpus.kind(k)) for k in KINDS})
    return "".join(f"{k}={v}\n" for k, v in d.items())


def write_corpus(directory, corpus: SyntheticCorpus) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for kind in KINDS:
        sub = root / kind
        sub.mkdir(exist_ok=True)
        for i, sample in enumerate(corpus.kind(kind)):
            (sub / f"{i:05d}.txt").write_text(format_sample(kind, sample), encoding="utf-8", newline="\n")
    (root / MANIFEST).write_text(_manifest(corpus), encoding="utf-8", newline="\n")


def read_corpus(directory) -> SyntheticCorpus:
    root = Path(directory)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise FormatError(f"{mpath}: corpus manifest not found")
    meta = {}
    for n, line in enumerate(mpath.read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            k, sep, v = line.partition("=")
            if not sep:
                raise FormatError(f"{mpath}:{n}: expected key=value")
            meta[k.strip()] = v.strip()
    try:
        teachers = Teachers.build(int(meta["seed"]), int(meta["vocab_text"]), int(meta["vocab_units"]),
                                  int(meta["d_enc"]), float(meta["unit_rate"]), float(meta["fps"]))
        sizes = {k: int(meta[f"size_{k}"]) for k in KINDS}
    except (KeyError, ValueError) as e:
        raise FormatError(f"{mpath}: bad or missing manifest entry ({e})") from None
    corpus = SyntheticCorpus(int(meta["seed"]), teachers)
    for kind in KINDS:
        for i in range(sizes[kind]):
            p = root / kind / f"{i:05d}.txt"
            if not p.is_file():
                raise FormatError(f"{p}: sample file missing")
            got, sample = parse_sample(p.read_text(encoding="utf-8"), p)
            if got != kind:
                raise FormatError(f"{p}: holds a {got} sample, expected {kind}")
            corpus.kind(kind).append(sample)
    return corpus
