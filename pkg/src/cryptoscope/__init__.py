"""Crypto API usage extraction and crypto-feature malware classification."""

__version__ = "0.1.0"
