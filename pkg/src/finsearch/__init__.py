"""Desk-scale financial passage retrieval: corpus pipeline, contrastive
encoder, hybrid (vector + BM25) search service, and evaluation harness."""

__version__ = "0.1.0"
