"""Device-free human state estimation from simulated multi-static UWB CIRs."""

__version__ = "0.1.0"
