"""Anonymous rate-limited publication: commitments, approval proofs, limiter, peers and a simulator."""

__version__ = "0.1.0"
