"""CLI: encode item texts into the embeddings JSON the fitting tool consumes.

Exit codes: 0 success, 2 configuration error, 3 data error (bad records),
4 encoder resolution failure, 5 internal error.
"""

import argparse
import json
import os
import sys
import tempfile

from .encode import (
    MINI_ENCODER,
    EncoderResolutionError,
    ItemTextError,
    SentenceEncoder,
    embed_items,
    record_to_item,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="item-embedder",
        description="Encode item texts with a transformer sentence encoder",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("embed", help="items.json -> embeddings.json")
    p.add_argument("--items", required=True, help="input items.json")
    p.add_argument("--encoder", default=MINI_ENCODER,
                   help=f"checkpoint id or local path (default: bundled {MINI_ENCODER})")
    p.add_argument("--out", required=True, help="embeddings.json output")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--no-normalize", action="store_true",
                   help="skip L2 normalisation (cosines are unaffected either way)")
    p.add_argument("--force", action="store_true", help="overwrite existing output")
    return parser


def _atomic_write_json(path: str, payload: dict) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_embed(args) -> int:
    if os.path.exists(args.out) and not args.force:
        print(f"config error: refusing to overwrite {args.out}; pass --force",
              file=sys.stderr)
        return 2
    try:
        with open(args.items) as handle:
            payload = json.load(handle)
    except FileNotFoundError:
        print(f"data error: missing items file: {args.items}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"data error: {args.items}: invalid JSON at line {exc.lineno}", file=sys.stderr)
        return 3
    records = payload.get("items")
    if not isinstance(records, list) or not records:
        print(f"data error: {args.items}: expected a non-empty 'items' array",
              file=sys.stderr)
        return 3

    try:
        items = [record_to_item(record, i) for i, record in enumerate(records)]
    except ItemTextError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3

    try:
        encoder = SentenceEncoder(args.encoder, normalize=not args.no_normalize,
                                  batch_size=args.batch_size)
    except EncoderResolutionError as exc:
        print(f"encoder resolution error: {exc}", file=sys.stderr)
        return 4

    out = embed_items(items, encoder)
    _atomic_write_json(args.out, out)
    n_segments = sum(2 + len(item.distractors) for item in items)
    print(f"wrote {args.out}: {len(items)} items, {n_segments} segments, "
          f"encoder {encoder.encoder_id} (dim {encoder.dim})")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"embed": cmd_embed}[args.command](args)
    except Exception as exc:  # pragma: no cover - unexpected failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
