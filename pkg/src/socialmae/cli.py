"""``socialmae`` command-line entry point."""
from __future__ import annotations

import argparse
import sys

from .errors import SocialMAEError
from .harness import cmd_ablate, cmd_eval, cmd_finetune, cmd_pretrain, cmd_synth, load_config

COMMANDS = ("synth", "pretrain", "finetune", "eval", "ablate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socialmae", description="masked-autoencoder trajectory experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--resume", help="checkpoint to resume training from")
    parser.add_argument("--from-scratch", action="store_true", help="fine-tune without a pre-trained encoder")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--checkpoint", help="pre-trained checkpoint (finetune) or model to evaluate (eval)")
    parser.add_argument("--verify", action="store_true", help="synth: check existing files against the manifest")
    return parser


def run(args: argparse.Namespace) -> str:
    cfg, text = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if changes:
        cfg = cfg.replace(**changes)

    if args.command == "synth":
        written = cmd_synth(cfg, verify=args.verify)
        verb = "verified" if args.verify else "wrote"
        return "\n".join(f"{verb} {role}: {path}" for role, path in written.items())
    if args.command == "pretrain":
        result = cmd_pretrain(cfg, text, resume=args.resume)
        return f"pretrain loss {result.losses[-1]:.6g}; checkpoint {result.checkpoint}"
    if args.command == "finetune":
        result = cmd_finetune(cfg, text, args.checkpoint, args.from_scratch, resume=args.resume)
        return f"finetune loss {result.losses[-1]:.6g}; checkpoint {result.checkpoint}"
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint).to_json()
    doc = cmd_ablate(cfg)
    return "\n".join(f"{doc['axis']}={row['value']}: {doc['metric']} {row['metric']:.6g}" for row in doc["rows"])


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        print(run(args))
    except (SocialMAEError, ValueError, FileNotFoundError) as exc:
        print(f"socialmae {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
