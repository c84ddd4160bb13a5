"""Command-line interface.

Subcommands: gen-data, split, train, eval, acoustic-map, inspect.
Configuration comes from an optional JSON config file, overridden by
flags. Exit status: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import RoomEchoError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def make_logger(as_json: bool):
    def log(event: str, **fields):
        if as_json:
            print(json.dumps({"event": event, **fields}, sort_keys=True))
        else:
            body = " ".join(f"{k}={v}" for k, v in fields.items())
            print(f"[{event}] {body}".rstrip())
    return log


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def build_parser() -> _Parser:
    p = _Parser(prog="roomecho",
                description="RIR simulation, prediction, and evaluation toolkit")
    p.add_argument("--config", help="JSON config file with per-command defaults")
    p.add_argument("--json", action="store_true", help="machine-readable JSON logs")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (overrides ROOMECHO_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a simulated RIR dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--rooms", type=int, default=15,
                   help="total room count (divided evenly across categories)")
    g.add_argument("--sources", type=int, default=8)
    g.add_argument("--receivers", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("split", help="write a train/test split")
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=["seen", "unseen"], required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the predictor")
    t.add_argument("--data", required=True)
    t.add_argument("--split", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--k", type=int, default=4)
    t.add_argument("--steps", type=int, default=600)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--width", choices=["tiny", "desk", "default"], default="desk")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", default=None,
                   help="checkpoint path (no extension) to continue from")

    e = sub.add_parser("eval", help="evaluate a predictor on a split")
    e.add_argument("--data", required=True)
    e.add_argument("--split", required=True)
    e.add_argument("--method", required=True,
                   choices=["oracle", "random-across", "random-same",
                            "nearest", "linear", "model"])
    e.add_argument("--k", type=int, default=8)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--max-examples", type=int, default=None)
    e.add_argument("--no-align", action="store_true",
                   help="disable time-shift alignment in baselines")

    m = sub.add_parser("acoustic-map", help="dense C50 map over a room")
    m.add_argument("--data", required=True)
    m.add_argument("--room", required=True)
    m.add_argument("--method", default="nearest",
                   choices=["oracle", "nearest", "linear", "model"])
    m.add_argument("--k", type=int, default=8)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--resolution", type=float, default=0.5)
    m.add_argument("--receiver", type=int, default=0)
    m.add_argument("--checkpoint", default=None)
    m.add_argument("--out", required=True)

    i = sub.add_parser("inspect", help="summarize a manifest/report/checkpoint")
    i.add_argument("path")
    return p


def _apply_config_defaults(args, file_cfg: dict):
    section = file_cfg.get(args.command.replace("-", "_"), {})
    for key, value in section.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and _flag_left_at_default(args, attr):
            setattr(args, attr, value)
    return args


_DEFAULT_SENTINELS: dict = {}


def _flag_left_at_default(args, attr) -> bool:
    # flags explicitly passed on argv win over the config file
    return attr not in _DEFAULT_SENTINELS.get(id(args), set())


def _track_explicit_flags(argv, args):
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token[2:].split("=")[0].replace("-", "_"))
    _DEFAULT_SENTINELS[id(args)] = explicit


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _track_explicit_flags(argv, args)
    try:
        args = _apply_config_defaults(args, _load_config_file(args.config))
        log = make_logger(args.json)
        return _dispatch(args, log)
    except (RoomEchoError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"roomecho: error: {exc}", file=sys.stderr)
        return 2
    finally:
        _DEFAULT_SENTINELS.pop(id(args), None)


def _dispatch(args, log) -> int:
    if args.command == "gen-data":
        return _cmd_gen(args, log)
    if args.command == "split":
        return _cmd_split(args, log)
    if args.command == "train":
        return _cmd_train(args, log)
    if args.command == "eval":
        return _cmd_eval(args, log)
    if args.command == "acoustic-map":
        return _cmd_map(args, log)
    if args.command == "inspect":
        return _cmd_inspect(args, log)
    raise ValueError(f"unknown command {args.command!r}")


def _cmd_gen(args, log) -> int:
    from .dataset import DEFAULT_CATEGORIES, GenConfig, generate_dataset
    n_cat = len(DEFAULT_CATEGORIES)
    if args.rooms % n_cat:
        print(f"roomecho: error: --rooms must be a multiple of {n_cat} "
              f"(one share per category)", file=sys.stderr)
        return 1
    cfg = GenConfig(rooms_per_category=args.rooms // n_cat,
                    n_sources=args.sources, n_receivers=args.receivers,
                    seed=args.seed)
    manifest = generate_dataset(cfg, args.out, threads=args.threads, log=log)
    log("done", manifest=str(Path(args.out) / "manifest.json"),
        rooms=len(manifest["rooms"]), rirs=len(manifest["rir_index"]))
    return 0


def _cmd_split(args, log) -> int:
    from .dataset import Dataset, make_split, save_split
    data = Dataset(args.data)
    split = make_split(data, args.mode, args.seed)
    save_split(args.out, split)
    log("split_written", out=args.out, mode=split.mode,
        train_rooms=len(split.train_rooms), test_rooms=len(split.test_rooms))
    return 0


def _cmd_train(args, log) -> int:
    from .dataset import Dataset, load_split
    from .training import TrainConfig, model_config_for, train
    data = Dataset(args.data)
    split = load_split(args.split)
    tcfg = TrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                       seed=args.seed, k_refs=args.k, width=args.width)
    mcfg = model_config_for(tcfg)
    ckpt = train(data, split, mcfg, tcfg, args.out, resume_from=args.resume,
                 threads=args.threads, log=log)
    log("checkpoint_written", path=str(ckpt))
    return 0


def _cmd_eval(args, log) -> int:
    from .dataset import Dataset, load_split
    from .evaluation import evaluate
    data = Dataset(args.data)
    split = load_split(args.split)
    report = evaluate(data, split, args.method, args.k, args.seed,
                      out_dir=args.out, checkpoint=args.checkpoint,
                      align=not args.no_align, max_examples=args.max_examples,
                      log=log)
    log("aggregates", **{k: v for k, v in report.aggregates.items()
                         if not isinstance(v, dict)})
    return 0


def _cmd_map(args, log) -> int:
    from .dataset import Dataset
    from .evaluation import acoustic_map
    data = Dataset(args.data)
    acoustic_map(data, args.room, args.method, args.k, args.seed,
                 resolution=args.resolution, receiver_idx=args.receiver,
                 out_dir=args.out, checkpoint=args.checkpoint, log=log)
    log("map_written", out=args.out)
    return 0


def _cmd_inspect(args, log) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "manifest.json"
    doc = json.loads(path.read_text())
    if "rir_index" in doc:
        summary = {
            "kind": "dataset_manifest",
            "rooms": len(doc["rooms"]),
            "rirs": len(doc["rir_index"]),
            "seed": doc["generator_seed"],
            "config_hash": doc["config_hash"],
            "categories": sorted({r["category"] for r in doc["rooms"]}),
        }
    elif "params" in doc:
        summary = {
            "kind": "checkpoint",
            "parameters": int(sum(
                int(np.prod(e["shape"])) if e["shape"] else 1
                for e in doc["params"] if not e["name"].startswith("extra")
            )),
            "tensors": len(doc["params"]),
            "config": doc["config"],
        }
    elif "aggregates" in doc:
        summary = {
            "kind": "eval_report",
            "method": doc["method"],
            "k": doc["k"],
            "split_mode": doc["split_mode"],
            "aggregates": {k: v for k, v in doc["aggregates"].items()
                           if not isinstance(v, dict)},
        }
    elif "train_rooms" in doc:
        summary = {
            "kind": "split",
            "mode": doc["mode"],
            "train_rooms": len(doc["train_rooms"]),
            "test_rooms": len(doc["test_rooms"]),
        }
    else:
        summary = {"kind": "unknown", "keys": sorted(doc)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
