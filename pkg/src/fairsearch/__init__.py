"""Sequential search under ex-ante constraints: Pandora's box, JMS, and randomized index policies."""

__version__ = "0.1.0"
