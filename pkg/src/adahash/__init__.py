"""Self-adaptive similarity-graph hashing over precomputed feature vectors."""

__version__ = "0.1.0"
