"""YUV-domain lightweight low-light image enhancement on a numpy autodiff core."""

__version__ = "0.1.0"
