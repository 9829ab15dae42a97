"""Per-title bitrate ladders: two-step ground truth, BD metrics and a resolution predictor."""

__version__ = "0.1.0"
