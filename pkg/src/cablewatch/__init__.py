"""Diagnostics workbench for soft faults in buried signalling cables.

Three detectors (S-parameter CFR, modem SNR and multitone reflectometry) are
simulated, calibrated and fused into a single health index.
"""

__version__ = "0.1.0"
