"""Offline item-text encoder emitting the embeddings JSON for the fit toolchain."""

from .encode import MINI_ENCODER, SentenceEncoder, embed_items, record_to_item

__version__ = "0.1.0"

__all__ = ["MINI_ENCODER", "SentenceEncoder", "embed_items", "record_to_item"]
