"""OverlapGAN: class-overlap-aware conditional GAN training on Gaussian mixtures."""

__version__ = "0.1.0"
__app_name__ = "OverlapGAN"
