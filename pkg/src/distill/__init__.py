"""Score distillation of a toy diffusion prior into a voxel field, with dynamic FreeU and guidance scaling."""

__version__ = "0.1.0"
