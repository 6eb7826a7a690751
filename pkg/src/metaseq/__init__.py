"""Multi-channel CNN + BiLSTM metaphor tagger and embedding-space diagnostics."""

__version__ = "0.1.0"
