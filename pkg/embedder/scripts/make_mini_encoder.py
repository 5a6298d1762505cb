"""Build the bundled miniature transformer checkpoint.

Creates a tiny randomly-initialised BERT (seeded, so regeneration is
reproducible) with a character-level WordPiece vocabulary and saves it under
src/item_embedder/assets/mini-encoder-v1. The checkpoint exists so the tool
can run fully offline and deterministically; it is NOT a trained model and
its similarities carry no semantic meaning.
"""

import pathlib
import string

import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

TARGET = pathlib.Path(__file__).resolve().parents[1] / "src" / "item_embedder" / "assets" / "mini-encoder-v1"


def build_vocab() -> list:
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    chars = list(string.ascii_lowercase + string.digits + string.punctuation) + [" "]
    continuations = [f"##{c}" for c in chars]
    return specials + chars + continuations


def main() -> None:
    TARGET.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab()
    (TARGET / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tokenizer = BertTokenizerFast(vocab_file=str(TARGET / "vocab.txt"), do_lower_case=True)
    tokenizer.save_pretrained(TARGET)

    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=256,
    )
    torch.manual_seed(70405)
    model = BertModel(config)
    model.eval()
    model.save_pretrained(TARGET)
    print(f"wrote miniature checkpoint to {TARGET}")


if __name__ == "__main__":
    main()
