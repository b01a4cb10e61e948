"""Image-based part manipulation of man-made shapes.

A desk-scale pipeline bridging an image-generator latent space and a
part-based 3D shape attribute space: procedural dataset, per-part feature
VAEs, a toy image generator with optimization-based inversion, forward and
backward latent mapping networks, and the three part-level edits (replace,
resize, change view) plus texture-transfer helpers and an HTTP service.
"""

__version__ = "0.1.0"
