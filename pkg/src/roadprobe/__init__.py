"""roadprobe: systematic blind-spot testing of car detectors on synthetic road scenes."""

__version__ = "0.1.0"
