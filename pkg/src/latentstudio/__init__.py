"""latentstudio: interactive image editing on a learned latent image manifold."""

__version__ = "0.1.0"
