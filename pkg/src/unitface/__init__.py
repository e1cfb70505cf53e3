"""Joint speech-unit and blendshape generation with gated token-as-query fusion."""

__version__ = "0.1.0"
