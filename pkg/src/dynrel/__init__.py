"""Time-aware entity relatedness: learning to rank candidates from navigation data.

Three channels score a (source, candidate, rival) triple: content
(trigraph-hashed text), graph (matching histograms over node embeddings) and
time (convolutional page-view encoder with decay attention). Their scores are
summed and trained pairwise against navigation-derived preferences.
"""

__version__ = "0.1.0"
