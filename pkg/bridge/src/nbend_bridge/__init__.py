"""Activation export bridge: torch generator -> NBT dump directory."""

__version__ = "0.1.0"
