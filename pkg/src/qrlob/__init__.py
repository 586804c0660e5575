"""Queue-based Markov models of the limit order book."""
__version__ = "0.1.0"
