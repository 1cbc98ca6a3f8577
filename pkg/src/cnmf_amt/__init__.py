"""Semi-supervised piano transcription with convolutive NMF templates."""

__version__ = "0.1.0"
