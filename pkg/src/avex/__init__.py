"""Multi-attribute value extraction with adaptively generated CRF decoders."""

__version__ = "0.1.0"
