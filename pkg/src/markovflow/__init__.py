"""Markov partitions for the geodesic flow on compact quotients of PSL(2,R)."""

__version__ = "0.1.0"
