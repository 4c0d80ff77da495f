"""GAN-based bootstrap for stationary time series, with block-bootstrap baselines."""

__version__ = "0.1.0"
