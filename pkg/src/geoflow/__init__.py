"""Desk-scale laboratory for editing-model-style dense geometry estimation.

Covers BF16 label quantization, consistent-velocity flow matching, joint
depth/normal supervision over width-concatenated tokens, and the standard
affine-invariant depth / surface-normal metrics, all on synthetic scenes.
"""

__version__ = "0.1.0"
