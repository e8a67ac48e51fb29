"""Cross-spectral iris matching with conditional and coupled GANs on a numpy autodiff core."""

__version__ = "0.1.0"
