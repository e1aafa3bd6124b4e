"""Spike-based sound-source localization.

Multichannel audio from a small mic array is turned into per-pair coincidence
spike patterns (multi-tone phase coding) and decoded to an azimuth by a
spiking neural network; a GCC-PHAT path provides a classical cross-check.
"""

__version__ = "0.1.0"
