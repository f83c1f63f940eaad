"""Command-line client for the hashing service.

Every subcommand builds a JSON request and posts it to the service app --
in-process over an ASGI transport by default, or to a running server when
--server is given. Exit codes: 0 success, 1 usage error, 2 data/format
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_KIND_EXITS = {"usage": EXIT_USAGE, "data": EXIT_DATA, "numeric": EXIT_NUMERIC}


class _UsageExit(Exception):
    def __init__(self, message: str):
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract wants 1 with the message on stderr
    def error(self, message):
        raise _UsageExit(message)


def _post_inprocess(path: str, payload: dict) -> httpx.Response:
    import asyncio

    from .service import app  # deferred: keeps --help fast

    async def call():
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://adahash.internal", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(call())


def _post(server: str | None, path: str, payload: dict) -> dict:
    if server:
        with httpx.Client(base_url=server, timeout=3600.0) as client:
            response = client.post(path, json=payload)
    else:
        response = _post_inprocess(path, payload)
    body = response.json()
    if response.status_code != 200:
        detail = body.get("detail")
        if isinstance(detail, dict) and "kind" in detail:
            kind, message = detail["kind"], detail["message"]
        else:
            kind, message = "usage", json.dumps(detail)
        raise SystemExit(_fail(message, _KIND_EXITS.get(kind, EXIT_DATA)))
    return body


def _fail(message: str, code: int) -> int:
    print(f"adahash: error: {message}", file=sys.stderr)
    return code


def _print_result(payload: dict) -> None:
    for key, value in payload.items():
        if isinstance(value, dict):
            print(f"{key}:")
            for k, v in value.items():
                print(f"  {k}: {v}")
        else:
            print(f"{key}: {value}")


def _add_train_params(p: argparse.ArgumentParser, include_and: bool = True) -> None:
    p.add_argument("--bits", type=int, default=16, help="code length in bits")
    p.add_argument("--k1", type=int, default=None, help="feature-space neighbor count")
    p.add_argument("--k2", type=int, default=None, help="neighbor-row neighbor count")
    p.add_argument("--tau", type=float, default=1.0, help="weighting temperature")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0, help="quantization weight")
    p.add_argument("--gamma", type=float, default=0.0, help="graph refresh threshold factor")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=10, help="epochs per round")
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--eta", type=float, default=1e-4, help="learning rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pic", choices=["pic", "pic0", "picminus"], default="pic")
    p.add_argument("--pic-grad", choices=["frozen", "through"], default="frozen")
    if include_and:
        p.add_argument("--and", dest="and_enabled", choices=["on", "off"], default="on",
                       help="adaptive graph refresh between rounds")
    p.add_argument("--symmetrize", action="store_true",
                   help="union-symmetrize the initial graph (effect is reported)")
    p.add_argument("--hidden", type=int, default=1000, help="hidden layer width")


_PIC_WIRE = {"pic": "pic", "pic0": "pic0", "picminus": "pic_minus"}


def _train_payload(args) -> dict:
    return {
        "bits": args.bits,
        "k1": args.k1,
        "k2": args.k2,
        "tau": args.tau,
        "lambda": args.lam,
        "gamma": args.gamma,
        "rounds": args.rounds,
        "epochs": args.epochs,
        "batch": args.batch,
        "eta": args.eta,
        "seed": args.seed,
        "pic": _PIC_WIRE[args.pic],
        "pic_grad": args.pic_grad,
        "and": getattr(args, "and_enabled", "on") == "on",
        "symmetrize": args.symmetrize,
        "hidden": args.hidden,
        "threads": args.threads,
    }


def build_parser() -> _Parser:
    parser = _Parser(prog="adahash", description=__doc__)
    parser.add_argument("--version", action="version", version=f"adahash {__version__}")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; default runs in-process")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for parallel stages (default: machine parallelism)")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic clustered dataset")
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--per-cluster", type=int, default=200)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--spread", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--query-fraction", type=float, default=0.1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("graph", help="build and score the initial similarity graph")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--k1", type=int, default=None)
    p.add_argument("--k2", type=int, default=None)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train the hash head over the adaptive graph")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--config", default=None,
                   help="key=value config file; explicit flags override it")
    _add_train_params(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint with retrieval metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--map-n", type=int, default=5000, help="0 means untruncated")
    p.add_argument("--prec-n", type=int, default=100)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("ablate", help="run the weighting/refresh ablation grid")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--grid", default="pic0,pic,picminus",
                   help="comma-separated pic modes")
    p.add_argument("--and", dest="and_grid", default="on,off",
                   help="comma-separated refresh states to sweep (on,off)")
    p.add_argument("--map-n", type=int, default=100)
    p.add_argument("--prec-n", type=int, default=100)
    _add_train_params(p, include_and=False)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)

    return parser


def _load_config_file(path: str, parser_defaults: dict) -> dict:
    """key=value lines; '#' starts a comment; keys mirror the long flags."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise _UsageExit(f"{path}:{lineno}: expected key=value, got '{text}'")
            key, value = (part.strip() for part in text.split("=", 1))
            key = key.replace("-", "_")
            if key not in parser_defaults:
                raise _UsageExit(f"{path}:{lineno}: unknown config key '{key}'")
            values[key] = value
    return values


_CONFIG_CASTS = {
    "bits": int, "k1": int, "k2": int, "tau": float, "lam": float, "lambda": float,
    "gamma": float, "rounds": int, "epochs": int, "batch": int, "eta": float,
    "seed": int, "hidden": int,
}


def _apply_config_file(args, argv_flags: set) -> None:
    if not getattr(args, "config", None):
        return
    defaults = {
        "bits", "k1", "k2", "tau", "lam", "gamma", "rounds", "epochs", "batch",
        "eta", "seed", "pic", "pic_grad", "and_enabled", "symmetrize", "hidden",
    }
    raw = _load_config_file(args.config, {k: None for k in defaults | {"lambda", "and"}})
    for key, value in raw.items():
        dest = {"lambda": "lam", "and": "and_enabled"}.get(key, key)
        if dest in argv_flags:
            continue  # explicit flags win
        if dest == "symmetrize":
            setattr(args, dest, value.lower() in ("1", "true", "yes", "on"))
        elif dest == "pic":
            if value not in _PIC_WIRE:
                raise _UsageExit(f"config key 'pic': expected one of {sorted(_PIC_WIRE)}")
            setattr(args, dest, value)
        elif dest == "pic_grad":
            if value not in ("frozen", "through"):
                raise _UsageExit("config key 'pic_grad': expected frozen or through")
            setattr(args, dest, value)
        elif dest == "and_enabled":
            if value not in ("on", "off"):
                raise _UsageExit("config key 'and': expected on or off")
            setattr(args, dest, value)
        else:
            cast = _CONFIG_CASTS.get(key, str)
            try:
                setattr(args, dest, cast(value))
            except ValueError:
                raise _UsageExit(f"config key '{key}': cannot parse '{value}'") from None


def _flags_given(argv) -> set:
    flags = set()
    for token in argv:
        if token.startswith("--"):
            name = token[2:].split("=", 1)[0].replace("-", "_")
            flags.add({"lambda": "lam", "and": "and_enabled"}.get(name, name))
    return flags


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit as exc:
        parser.print_usage(sys.stderr)
        return _fail(str(exc), EXIT_USAGE)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "synth":
            result = _post(args.server, "/v1/synth", {
                "out_dir": args.out_dir,
                "clusters": args.clusters,
                "per_cluster": args.per_cluster,
                "dim": args.dim,
                "spread": args.spread,
                "seed": args.seed,
                "query_fraction": args.query_fraction,
            })
        elif args.command == "graph":
            result = _post(args.server, "/v1/graph", {
                "out_dir": args.out_dir,
                "features": args.features,
                "labels": args.labels,
                "k1": args.k1,
                "k2": args.k2,
                "gamma": args.gamma,
                "symmetrize": args.symmetrize,
                "threads": args.threads,
            })
        elif args.command == "train":
            _apply_config_file(args, _flags_given(argv))
            payload = _train_payload(args)
            payload.update({
                "out_dir": args.out_dir,
                "features": args.features,
                "labels": args.labels,
                "split": args.split,
            })
            result = _post(args.server, "/v1/train", payload)
        elif args.command == "eval":
            result = _post(args.server, "/v1/eval", {
                "out_dir": args.out_dir,
                "checkpoint": args.checkpoint,
                "features": args.features,
                "labels": args.labels,
                "split": args.split,
                "map_n": args.map_n,
                "prec_n": args.prec_n,
            })
        elif args.command == "ablate":
            payload = _train_payload(args)
            try:
                modes = [_PIC_WIRE[m.strip()] for m in args.grid.split(",") if m.strip()]
            except KeyError as exc:
                return _fail(f"unknown pic mode in --grid: {exc.args[0]}", EXIT_USAGE)
            and_states = []
            for token in args.and_grid.split(","):
                token = token.strip()
                if token not in ("on", "off"):
                    return _fail(f"--and-grid entries must be on/off, got '{token}'", EXIT_USAGE)
                and_states.append(token == "on")
            payload.update({
                "out_dir": args.out_dir,
                "features": args.features,
                "labels": args.labels,
                "split": args.split,
                "grid_modes": modes,
                "grid_and": and_states,
                "map_n": args.map_n,
                "prec_n": args.prec_n,
            })
            result = _post(args.server, "/v1/ablate", payload)
        elif args.command == "serve":
            import uvicorn

            from .service import app

            uvicorn.run(app, host=args.host, port=args.port)
            return EXIT_OK
        else:  # unreachable with the parser above
            return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_DATA
    except _UsageExit as exc:
        return _fail(str(exc), EXIT_USAGE)

    _print_result(result)
    return EXIT_OK


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
