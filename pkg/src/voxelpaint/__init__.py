"""voxelpaint: desk-scale diffusion inpainting of synthetic 3D volumes."""

__version__ = "0.1.0"
