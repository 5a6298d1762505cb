"""Sentence encoding of item texts with a transformer checkpoint.

Texts are tokenised, passed through the encoder, and mean-pooled over
non-padding positions (the standard sentence-embedding recipe); vectors are
optionally L2-normalised, which is cosmetic for cosine similarity. Encoding
is deterministic for a fixed checkpoint: the model runs in eval mode on a
single CPU thread.

The bundled "mini-deterministic-v1" checkpoint is a tiny randomly
initialised transformer shipped for offline schema/determinism testing; its
similarities carry no semantic meaning. Point --encoder at a pretrained
sentence-encoder checkpoint (hub id or local path) for real use.
"""

import os
from dataclasses import dataclass
from importlib import resources

MINI_ENCODER = "mini-deterministic-v1"


class EncoderResolutionError(RuntimeError):
    """The requested encoder checkpoint cannot be loaded."""


class ItemTextError(ValueError):
    """An item record is unusable (empty text, missing options)."""


@dataclass
class ItemTexts:
    """One item's text segments; stem already includes any help text."""

    item_id: str
    time: int
    stem: str
    correct: str
    distractors: list

    def validate(self) -> None:
        if not self.stem.strip():
            raise ItemTextError(f"item {self.item_id!r} (time {self.time}): empty stem text")
        if not self.correct.strip():
            raise ItemTextError(f"item {self.item_id!r} (time {self.time}): empty correct option")
        if not self.distractors:
            raise ItemTextError(f"item {self.item_id!r} (time {self.time}): no distractors")
        for m, text in enumerate(self.distractors):
            if not text.strip():
                raise ItemTextError(
                    f"item {self.item_id!r} (time {self.time}): empty distractor {m + 1}")


def record_to_item(record: dict, index: int) -> ItemTexts:
    for key in ("item_id", "time", "stem", "correct", "distractors"):
        if key not in record:
            raise ItemTextError(f"items[{index}]: missing field {key!r}")
    stem = str(record["stem"])
    help_text = str(record.get("help_text", "") or "")
    if help_text:
        stem = f"{stem} {help_text}"
    item = ItemTexts(item_id=str(record["item_id"]), time=int(record["time"]),
                     stem=stem, correct=str(record["correct"]),
                     distractors=[str(d) for d in record["distractors"]])
    item.validate()
    return item


def _mini_encoder_path() -> str:
    return str(resources.files("item_embedder").joinpath("assets/mini-encoder-v1"))


class SentenceEncoder:
    """Mean-pooled transformer encoder over a local or hub checkpoint."""

    def __init__(self, encoder_id: str, normalize: bool = True, batch_size: int = 16):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.encoder_id = encoder_id
        self.normalize = normalize
        self.batch_size = batch_size
        path = _mini_encoder_path() if encoder_id == MINI_ENCODER else encoder_id
        local_only = encoder_id == MINI_ENCODER or os.path.isdir(path)
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(path, local_files_only=local_only)
            self.model = AutoModel.from_pretrained(path, local_files_only=local_only)
        except Exception as exc:
            raise EncoderResolutionError(
                f"cannot load encoder {encoder_id!r}: {exc}; pass a local checkpoint "
                f"directory, a resolvable hub id, or {MINI_ENCODER!r}"
            ) from exc
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)

    def encode(self, texts: list) -> list:
        """List of texts -> list of embedding vectors (python floats)."""
        torch = self._torch
        torch.set_num_threads(1)  # bit-stable CPU inference
        out = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = texts[start:start + self.batch_size]
                enc = self.tokenizer(batch, padding=True, truncation=True,
                                     max_length=256, return_tensors="pt")
                hidden = self.model(**enc).last_hidden_state
                mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
                if self.normalize:
                    pooled = pooled / pooled.norm(dim=1, keepdim=True).clamp(min=1e-12)
                out.extend(vec.tolist() for vec in pooled.to(torch.float64))
        return out

    def metadata(self) -> dict:
        return {
            "name": self.encoder_id,
            "dim": self.dim,
            "pooling": "mean",
            "normalized": self.normalize,
            "batch_size": self.batch_size,
        }


def embed_items(items: list, encoder: SentenceEncoder) -> dict:
    """Encode every text segment; returns the embeddings payload.

    Vectors depend only on their own text, never on record order or on the
    other segments in the batch layout (padding is masked out of pooling).
    """
    payload_items = []
    for item in items:
        segments = [item.stem, item.correct] + list(item.distractors)
        vectors = encoder.encode(segments)
        payload_items.append({
            "item_id": item.item_id,
            "time": item.time,
            "stem": vectors[0],
            "correct": vectors[1],
            "distractors": vectors[2:],
        })
    return {"encoder": encoder.metadata(), "items": payload_items}
