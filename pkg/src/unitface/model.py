"""All trainable groups plus their shared configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import numerics as nx
from .face import BlendshapeClip, FaceDecoder
from .numerics import Parameter
from .positional import PeriodicRopeConfig
from .semantic import (TASK_TTS, Reasoner, SpeechFeatures, SpeechProjector, TokenSequence,
                       build_unified_input, reason)
from .units import GeneratorTrace, UnitGenerator, UnitSequence, generate_units

# every group named by the training schedule; the first and last have no
# parameters here (the speech encoder and waveform decoder are external)
GROUPS = ("speech_encoder", "speech_projector", "reasoner", "unit_generator", "face_decoder", "speech_decoder")
PARAM_GROUPS = ("speech_projector", "reasoner", "unit_generator", "face_decoder")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_text: int = 128
    vocab_units: int = 64
    d_enc: int = 16
    d_model: int = 64
    heads: int = 4
    reasoner_layers: int = 2
    d_gen: int = 64
    gen_layers: int = 2
    gen_fusion_layers: int = 2
    d_face: int = 64
    face_fusion_layers: int = 2
    face_encoder_layers: int = 6
    unit_rate: float = 12.5
    fps: float = 25.0
    rope_period: int = 25
    rope_alpha: float = 1.0
    rope_base: float = 10_000.0
    init_seed: int = 0

    def __post_init__(self):
        for name in ("d_model", "d_gen", "d_face"):
            if getattr(self, name) % self.heads:
                raise ConfigError(f"{name}={getattr(self, name)} is not divisible by heads={self.heads}")
        if self.vocab_text < 16:
            raise ConfigError("vocab_text must be at least 16 (8 reserved ids)")

    def to_dict(self) -> dict[str, str]:
        return {f.name: repr(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = float(d[f.name]) if f.type == "float" else int(d[f.name])
        return cls(**kw)


def desk_config(**kw) -> ModelConfig:
    """The d=32 configuration used by tests and the acceptance run."""
    base = dict(d_model=32, d_gen=32, d_face=32, heads=4, face_encoder_layers=2)
    base.update(kw)
    return ModelConfig(**base)


class OmniModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = nx.make_rng(cfg.init_seed)
        self.speech_projector = SpeechProjector(rng, cfg.d_enc, cfg.d_model)
        self.reasoner = Reasoner(rng, cfg.vocab_text, cfg.d_model, cfg.heads, cfg.reasoner_layers)
        self.unit_generator = UnitGenerator(rng, cfg.vocab_text, cfg.vocab_units, cfg.d_model, cfg.d_gen,
                                            cfg.heads, cfg.gen_layers, cfg.gen_fusion_layers)
        rope = PeriodicRopeConfig(cfg.rope_period, cfg.rope_alpha, cfg.rope_base)
        self.face_decoder = FaceDecoder(rng, cfg.vocab_units, cfg.d_gen, cfg.d_face, cfg.heads,
                                        cfg.face_fusion_layers, cfg.face_encoder_layers, rope,
                                        cfg.unit_rate, cfg.fps)

    def group(self, name: str):
        return getattr(self, name)

    def params(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for g in PARAM_GROUPS:
            out.update(self.group(g).params(f"{g}/"))
        return out

    def group_params(self, name: str) -> dict[str, Parameter]:
        if name not in PARAM_GROUPS:
            return {}
        return self.group(name).params(f"{name}/")

    def set_trainable(self, groups) -> None:
        groups = set(groups)
        for g in PARAM_GROUPS:
            self.group(g).set_trainable(g in groups)

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self.params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays in; validates every name and shape before touching anything."""
        params = self.params()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(f"checkpoint parameters do not match model (missing {sorted(missing)[:3]}, "
                              f"unexpected {sorted(extra)[:3]})")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ConfigError(f"parameter {k}: checkpoint shape {state[k].shape} != model shape {p.shape}")
        for k, p in params.items():
            p.value[...] = state[k]

    # -- inference ---------------------------------------------------------

    def tts_context(self, text) -> np.ndarray:
        """Reasoner hidden states for ``text`` read back under the TTS instruction."""
        X = build_unified_input(TokenSequence([TASK_TTS, *text]), None, self.reasoner)
        return self.reasoner.response_fwd(X, list(text))[1]

    def generator_hidden(self, text, H: np.ndarray, units) -> np.ndarray:
        Ht, _ = self.unit_generator.condition_fwd(text, H)
        return self.unit_generator.units_fwd(Ht, units)[1]

    def generate(self, prompt: TokenSequence, speech: SpeechFeatures | None = None, *,
                 max_tokens: int = 32, max_units: int = 96, seed: int | None = None):
        """Prompt (and optional speech) → response tokens, units and a blendshape clip."""
        s = None if speech is None else self.speech_projector.forward(speech.frames)[0]
        X = build_unified_input(prompt, s, self.reasoner)
        out = reason(X, self.reasoner, max_tokens, seed)
        Ht, _ = self.unit_generator.condition_fwd(out.tokens.ids, out.hidden)
        trace: GeneratorTrace = generate_units(Ht, self.unit_generator, max_units,
                                               None if seed is None else seed + 1, self.cfg.unit_rate)
        if len(trace.units) == 0:
            return out.tokens, trace.units, None
        clip = self.decode_clip(trace.units, trace.hidden)
        return out.tokens, trace.units, clip

    def decode_clip(self, units: UnitSequence, gen_hidden: np.ndarray) -> BlendshapeClip:
        T_y = self.face_decoder.frames_for(len(units))
        return BlendshapeClip(self.face_decoder.forward(units.units, gen_hidden, T_y)[0], self.cfg.fps)

    def face_from_units(self, units: UnitSequence) -> BlendshapeClip:
        """Face decoding for externally supplied units.

        Generator context comes from a teacher-forced pass over the units with
        a neutral (empty-text) conditioning prefix.
        """
        units.check_vocab(self.cfg.vocab_units)
        H = self.tts_context([TASK_TTS])
        gh = self.generator_hidden([TASK_TTS], H, units.units)
        return self.decode_clip(units, gh)
