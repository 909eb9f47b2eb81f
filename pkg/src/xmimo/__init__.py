"""xmimo: system-level simulator and channel analyzer for 7 GHz extreme-MIMO."""

__version__ = "0.1.0"
