"""Seeded synthetic corpus standing in for the real instruction data.

Three fixed teachers give every data kind learnable structure:

* text → units: every content token owns a fixed pair of units, so a
  token unigram expands to a unit bigram;
* units → face: a fixed affine map of one-hot unit indicators over a
  3-unit window, squashed by a sigmoid, resampled to frame rate and
  smoothed with a 3-frame moving average;
* text → speech features: each token owns a Gaussian mean vector; its frames
  are noisy draws around it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..face import NUM_BLENDSHAPES, frame_count, resample
from ..numerics import make_rng, sigmoid
from ..semantic import FIRST_WORD

KINDS = ("asr", "tts", "face", "s2s", "t2t")
DEFAULT_SIZES = {"asr": 256, "tts": 256, "face": 128, "s2s": 128, "t2t": 64}
UNITS_PER_TOKEN = 2
WINDOW = 3
# the centre unit dominates; neighbours add coarticulation-like spill
WINDOW_SCALE = (0.25, 1.0, 0.25)

# stream keys for make_rng
_TEACHER, _SAMPLES = 1, 2


@dataclass
class AsrSample:
    features: np.ndarray
    transcript: tuple[int, ...]


@dataclass
class TtsSample:
    text: tuple[int, ...]
    units: tuple[int, ...]


@dataclass
class FaceSample:
    text: tuple[int, ...]
    units: tuple[int, ...]
    clip: np.ndarray


@dataclass
class S2SSample:
    features: np.ndarray
    question: tuple[int, ...]
    response: tuple[int, ...]
    units: tuple[int, ...]
    clip: np.ndarray


@dataclass
class T2TSample:
    prompt: tuple[int, ...]
    response: tuple[int, ...]


@dataclass
class Teachers:
    vocab_text: int
    vocab_units: int
    d_enc: int
    unit_rate: float
    fps: float
    word_units: np.ndarray      # (vocab_text, 2)
    token_means: np.ndarray     # (vocab_text, d_enc)
    face_weight: np.ndarray     # (WINDOW, vocab_units, 52)
    face_bias: np.ndarray       # (52,)
    t2t_map: np.ndarray         # permutation of token ids

    @classmethod
    def build(cls, seed: int, vocab_text: int, vocab_units: int, d_enc: int,
              unit_rate: float = 12.5, fps: float = 25.0) -> "Teachers":
        rng = make_rng(seed, _TEACHER)
        word_units = rng.integers(0, vocab_units, size=(vocab_text, UNITS_PER_TOKEN))
        token_means = rng.normal(0.0, 1.0, size=(vocab_text, d_enc))
        face_weight = rng.normal(0.0, 1.0, size=(WINDOW, vocab_units, NUM_BLENDSHAPES))
        face_weight *= np.asarray(WINDOW_SCALE)[:, None, None]
        face_bias = rng.normal(0.0, 1.0, size=NUM_BLENDSHAPES)
        perm = np.arange(vocab_text)
        perm[FIRST_WORD:] = FIRST_WORD + rng.permutation(vocab_text - FIRST_WORD)
        return cls(vocab_text, vocab_units, d_enc, unit_rate, fps, word_units, token_means,
                   face_weight, face_bias, perm)

    def units_for(self, text) -> tuple[int, ...]:
        return tuple(int(u) for u in self.word_units[list(text)].reshape(-1))

    def clip_for(self, units) -> np.ndarray:
        units = np.asarray(units, dtype=np.int64)
        T_u = len(units)
        pre = np.tile(self.face_bias, (T_u, 1))
        half = WINDOW // 2
        for o in range(-half, half + 1):
            src = np.arange(T_u) + o
            ok = (src >= 0) & (src < T_u)
            pre[ok] += self.face_weight[o + half, units[src[ok]]]
        per_unit = sigmoid(pre)
        frames = resample(per_unit, frame_count(T_u, self.unit_rate, self.fps))
        padded = np.concatenate([frames[:1], frames, frames[-1:]], axis=0)
        return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0

    def features_for(self, text, rng: np.random.Generator) -> np.ndarray:
        rows = []
        for tok in text:
            n = int(rng.integers(4, 7))
            rows.append(self.token_means[tok] + 0.1 * rng.normal(size=(n, self.d_enc)))
        return np.concatenate(rows, axis=0)

    def respond(self, prompt) -> tuple[int, ...]:
        return tuple(int(t) for t in self.t2t_map[list(prompt)[::-1]])


@dataclass
class SyntheticCorpus:
    seed: int
    teachers: Teachers
    asr: list[AsrSample] = field(default_factory=list)
    tts: list[TtsSample] = field(default_factory=list)
    face: list[FaceSample] = field(default_factory=list)
    s2s: list[S2SSample] = field(default_factory=list)
    t2t: list[T2TSample] = field(default_factory=list)

    def kind(self, name: str) -> list:
        if name not in KINDS:
            raise KeyError(f"unknown data kind {name!r}")
        return getattr(self, name)

    def sizes(self) -> dict[str, int]:
        return {k: len(self.kind(k)) for k in KINDS}


def generate_corpus(seed: int, sizes: dict[str, int] | None = None, *, vocab_text: int = 128,
                    vocab_units: int = 64, d_enc: int = 16, unit_rate: float = 12.5, fps: float = 25.0,
                    min_len: int = 8, max_len: int = 24) -> SyntheticCorpus:
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    for k, n in sizes.items():
        if k not in KINDS:
            raise ValueError(f"unknown data kind {k!r}")
        if n < 1:
            raise ValueError(f"size for {k} must be >= 1, got {n}")
    if not 1 <= min_len <= max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    teachers = Teachers.build(seed, vocab_text, vocab_units, d_enc, unit_rate, fps)
    corpus = SyntheticCorpus(seed, teachers)

    for kind_idx, kind in enumerate(KINDS):
        rng = make_rng(seed, _SAMPLES, kind_idx)

        def text():
            n = int(rng.integers(min_len, max_len + 1))
            return tuple(int(t) for t in rng.integers(FIRST_WORD, vocab_text, size=n))

        out = corpus.kind(kind)
        for _ in range(sizes.get(kind, 0)):
            if kind == "asr":
                t = text()
                out.append(AsrSample(teachers.features_for(t, rng), t))
            elif kind == "tts":
                t = text()
                out.append(TtsSample(t, teachers.units_for(t)))
            elif kind == "face":
                t = text()
                u = teachers.units_for(t)
                out.append(FaceSample(t, u, teachers.clip_for(u)))
            elif kind == "s2s":
                q = text()
                r = teachers.respond(q)
                u = teachers.units_for(r)
                out.append(S2SSample(teachers.features_for(q, rng), q, r, u, teachers.clip_for(u)))
            else:
                p = text()
                out.append(T2TSample(p, teachers.respond(p)))
    return corpus
