"""Network-coded TCP simulator: GF(256) coding, congestion control, and a discrete-event testbed."""
__version__ = "0.1.0"
