"""Desk-scale laboratory for transformer sublayer reordering.

Compose, sample, and train toy transformer stacks described by ordering
strings, analyze how sublayer placement relates to performance, and measure
attention distance between trained models.
"""

__version__ = "0.1.0"
