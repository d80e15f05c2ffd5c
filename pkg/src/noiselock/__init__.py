"""Simulator of quantum noise locking.

Squeezed-vacuum (or coherent-fringe) photocurrent noise is read out through a
bandpass, envelope detector and lock-in to form a phase error signal, which a
servo feeds back onto the relative phase.
"""

__version__ = "0.1.0"
