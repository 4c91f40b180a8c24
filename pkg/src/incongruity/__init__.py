"""Toolkit for detecting incongruent news headlines.

Builds labeled headline/body corpora, trains hierarchical dual-encoder
detectors on them, and serves incongruence scores over HTTP.
"""

__version__ = "0.1.0"
