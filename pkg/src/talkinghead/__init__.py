"""Audio-driven talking-face pipeline with learned head pose."""

__version__ = "0.1.0"
