"""Precedent-backed legal judgment prediction pipeline.

Small per-task classifiers propose candidate labels, a dual-encoder
retriever picks one stored precedent per candidate, and an LLM backend
(remote or deterministic mock) makes the final call for the chained
sub-tasks: law article, then charge, then prison term.
"""

__version__ = "0.1.0"
