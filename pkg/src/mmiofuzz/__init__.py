"""Firmware fuzzing on a small emulated microcontroller.

Peripheral reads are fed from the fuzz input with per-register playback
control, and edge coverage keeps interrupt and program contexts apart.
"""

__version__ = "0.1.0"
