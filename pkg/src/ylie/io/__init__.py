"""Image files and checkpoints."""

from .atomic import atomic_write_bytes, atomic_write_text
from .checkpoint import (BadMagicError, ConfigMismatchError, CRCError, CheckpointError, ShapeMismatchError,
                         TruncatedError, VersionError, load_checkpoint, save_checkpoint)
from .images import ImageFormatError, load_image, save_image

__all__ = ["atomic_write_bytes", "atomic_write_text", "BadMagicError", "ConfigMismatchError", "CRCError",
           "CheckpointError", "ShapeMismatchError", "TruncatedError", "VersionError", "load_checkpoint",
           "save_checkpoint", "ImageFormatError", "load_image", "save_image"]
