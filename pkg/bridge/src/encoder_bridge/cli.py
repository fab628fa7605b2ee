"""Export CLI: JSONL examples in, engine-format artifacts out.

The default encoder is the deterministic hashed stand-in (useful for
pipeline plumbing and tests); real checkpoints go through
`encoder_bridge.encoders.TorchEncoder` via the API.
"""

from __future__ import annotations

import argparse
import sys

from .encoders import HashedTokenEncoder
from .export import encode_and_export, load_examples_jsonl


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="encoder-bridge")
    subs = parser.add_subparsers(dest="command", required=True)
    p = subs.add_parser("export", help="encode examples and write engine artifacts")
    p.add_argument("--input", required=True, help="JSONL examples")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--labels", help="comma-separated head vocabulary "
                                    "(default: labels observed in the input, sorted)")
    p.add_argument("--negative-label")
    p.add_argument("--hidden-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    examples, parse_failures = load_examples_jsonl(args.input)
    if args.labels:
        label_names = [v for v in args.labels.split(",") if v]
    else:
        label_names = sorted({e.label for e in examples if e.label is not None})
    if not label_names:
        print("error: no labels given and none observed in the input", file=sys.stderr)
        return 1
    encoder = HashedTokenEncoder(
        label_names, hidden_size=args.hidden_size, seed=args.seed
    )
    result = encode_and_export(
        examples,
        encoder,
        args.out_dir,
        split=args.split,
        negative_label=args.negative_label,
        prior_failures=parse_failures,
    )
    print(
        f"exported {result.exported} records ({len(result.failures)} failures) "
        f"-> {result.manifest_path}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
