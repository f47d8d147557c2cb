"""fieldextract CLI: `extract` a capture, `labels` for a label list."""

import argparse
import sys
from pathlib import Path

from .extract import ExtractionManifest, encode_labels, extract_features
from .formats import ExtractError


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fieldextract",
        description="Convert posed RGB-D captures into the field engine's formats.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="emit frame_%05d.{rgb,depth,feat}.vlft + sidecars")
    p.add_argument("--source", required=True, help="native capture directory")
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=390)
    p.add_argument("--width", type=int, default=520)
    p.add_argument("--backend", choices=["clip", "hashed"], default="hashed")
    p.add_argument("--model-dir", help="local pretrained weights (clip backend)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("labels", help="encode label names into labels.tsv")
    p.add_argument("--names", help="comma-separated label names")
    p.add_argument("--names-file", help="one label per line")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["clip", "hashed"], default="hashed")
    p.add_argument("--model-dir")
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "extract":
            manifest = ExtractionManifest(
                source_dir=args.source,
                out_dir=args.out,
                target_height=args.height,
                target_width=args.width,
                backend=args.backend,
                model_dir=args.model_dir,
                seed=args.seed,
            )
            written = extract_features(manifest)
            print(f"wrote {len(written)} feature maps under {args.out}", file=sys.stderr)
        else:
            if args.names:
                names = [n.strip() for n in args.names.split(",") if n.strip()]
            elif args.names_file:
                names = [l.strip() for l in Path(args.names_file).read_text().splitlines()
                         if l.strip()]
            else:
                raise ExtractError("labels needs --names or --names-file")
            encode_labels(names, args.out, backend=args.backend,
                          model_dir=args.model_dir, seed=args.seed)
            print(f"wrote {len(names)} label embeddings to {args.out}", file=sys.stderr)
        code = 0
    except (ExtractError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
