"""Arbitrary-precision determinant and signed-minor series in one
Gaussian-elimination pass, with deterministic parallel and out-of-core
execution, independent verification oracles, zeta-based matrix generators,
and an empirical accuracy-loss study harness."""

__version__ = "0.1.0"
