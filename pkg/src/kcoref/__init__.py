"""Knowledge-augmented end-to-end coreference resolution at desk scale."""

__version__ = "0.1.0"
