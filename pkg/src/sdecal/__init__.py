"""Monte-Carlo calibration and optimal control of SDEs via discrete adjoints."""

__version__ = "0.1.0"
