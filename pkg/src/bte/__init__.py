"""Barrier-to-Exit analysis toolkit.

Computes the Barrier-to-Exit preference-change metric from large rating
corpora and fits a crossed random-intercepts growth model over the resulting
events, with a synthetic feedback-loop generator as ground-truth oracle.
"""

__version__ = "0.1.0"
