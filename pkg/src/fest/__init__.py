"""Framework tooling for infrared small-target segmentation: loss, fusion, post-processing, evaluation."""

__version__ = "0.1.0"
