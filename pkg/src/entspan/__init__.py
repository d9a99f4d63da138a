"""Active-learning toolkit for sequence labeling.

Entity-targeted span selection over CRF marginals, partial-likelihood
training on span-annotated data, cross-lingual seed-data transfer, span F1
evaluation with paired-bootstrap significance, a simulation harness, and an
annotation HTTP service.
"""

__version__ = "0.1.0"
