"""Command-line entry points: demo recording, episode runs, suite
evaluation, memory maintenance, serving the HTTP API, cassette replay.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import memory
from .core import RunConfig, Setup, config_from_json
from .errors import S2PError
from .gateway import OracleContext, make_backend
from .harness import (SuiteSpec, format_table, make_scene, run_episode,
                      run_suite, write_report)
from .service import DEFAULT_PORT, create_app, start_demo


def _shared_flags(config_required: bool = False,
                  config_help: str = "JSON run-config file",
                  ) -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", metavar="PATH",
                        required=config_required, help=config_help)
    parent.add_argument("--seed", type=int, default=None,
                        help="override the evaluation seed")
    parent.add_argument("--backend", default=None,
                        choices=("oracle", "random", "http"),
                        help="override the planning backend")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2p",
        description="retrieval-augmented navigation planning toolkit")
    shared = _shared_flags()
    suite_shared = _shared_flags(config_required=True,
                                 config_help="JSON suite-spec file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[shared],
                       help="run one episode, print its result as JSON")
    p.add_argument("--setup", required=True, choices=("tpv", "fpv"))
    p.add_argument("--store", metavar="DIR",
                   help="experiential memory to recall from")
    p.add_argument("--k", type=int, default=None,
                   help="in-context demonstrations per query")
    p.add_argument("--scenario", default="",
                   help="restrict recall to one provenance tag")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[suite_shared],
                       help="run an evaluation suite, write report files")
    p.add_argument("--out", metavar="DIR", default="eval-out")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", parents=[suite_shared],
                       help="re-run a suite offline from a recorded cassette")
    p.add_argument("--cassette", required=True, metavar="PATH")
    p.add_argument("--out", metavar="DIR", default="replay-out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("record", parents=[shared],
                       help="serve the API with a live demo session")
    p.add_argument("--setup", required=True, choices=("tpv", "fpv"))
    p.add_argument("--store", required=True, metavar="DIR")
    p.add_argument("--scenario", default="H",
                   choices=[s.value for s in memory.Scenario],
                   help="provenance tag stored with the episodes")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("serve", parents=[shared],
                       help="serve the API without starting a session")
    p.add_argument("--store", metavar="DIR")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("memory", help="inspect or maintain a store")
    msub = p.add_subparsers(dest="memory_command", required=True)
    m = msub.add_parser("ls", help="list episodes and counts")
    m.add_argument("--store", required=True, metavar="DIR")
    m.set_defaults(func=cmd_memory_ls)
    m = msub.add_parser("import", help="append another store's episodes")
    m.add_argument("--store", required=True, metavar="DIR")
    m.add_argument("--from", dest="source", required=True, metavar="DIR")
    m.set_defaults(func=cmd_memory_import)
    m = msub.add_parser("embed", help="recompute embeddings from frames")
    m.add_argument("--store", required=True, metavar="DIR")
    m.set_defaults(func=cmd_memory_embed)

    return parser


def _load_run_config(args) -> RunConfig:
    if args.config:
        cfg = config_from_json(Path(args.config).read_text())
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.backend is not None:
        cfg = replace(cfg, backend=args.backend)
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k_icl=args.k)
    return cfg


def _load_suite_spec(args) -> SuiteSpec:
    spec = SuiteSpec.from_json_dict(
        json.loads(Path(args.config).read_text()))
    if args.seed is not None:
        spec = replace(spec, seeds=tuple(args.seed + i
                                         for i in range(len(spec.seeds))))
    if args.backend is not None:
        spec = replace(spec, backend=args.backend)
    return spec


def cmd_run(args) -> int:
    cfg = _load_run_config(args)
    store = memory.load(args.store) if args.store else None
    embedder = memory.make_embedder(store.embedder_id) if store else None
    scene = make_scene(Setup(args.setup), cfg.seed)
    ctx = OracleContext()
    backend = make_backend(cfg.backend, cfg.seed, ctx)
    result = run_episode(scene, backend, ctx, cfg, store, embedder,
                         scenario=args.scenario)
    print(json.dumps(asdict(result), indent=2))
    return 0


def _run_and_report(spec: SuiteSpec, out_dir: str, workers: int) -> int:
    report = run_suite(spec, workers=workers)
    paths = write_report(report, out_dir)
    print(format_table([report.row]))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_eval(args) -> int:
    return _run_and_report(_load_suite_spec(args), args.out, args.workers)


def cmd_replay(args) -> int:
    spec = replace(_load_suite_spec(args), backend="http",
                   cassette=args.cassette, cassette_mode="replay")
    return _run_and_report(spec, args.out, workers=1)


def _open_store(root: str) -> memory.MemoryStore:
    root = Path(root)
    if (root / "manifest.json").exists():
        return memory.load(root)
    return memory.init_store(root, memory.make_embedder("hist96"))


def _serve(app, port: int) -> None:
    import uvicorn
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


def cmd_record(args) -> int:
    store = _open_store(args.store)
    app = create_app(store=store)
    start_demo(app, Setup(args.setup), store, seed=args.seed or 0,
               scenario=memory.Scenario(args.scenario), auto_restart=True)
    print(f"recording {args.setup} demos into {args.store} "
          f"on port {args.port}", file=sys.stderr)
    _serve(app, args.port)
    return 0


def cmd_serve(args) -> int:
    store = _open_store(args.store) if args.store else None
    app = create_app(store=store)
    _serve(app, args.port)
    return 0


def cmd_memory_ls(args) -> int:
    store = memory.load(args.store)
    for ep in store.episodes:
        print(f"{ep['episode_id']}  setup={ep['setup']}  "
              f"scenario={ep['scenario']}  samples={ep['n_samples']}")
    print(f"total: {len(store.samples)} samples in "
          f"{len(store.episodes)} episodes "
          f"({store.embedder_id}, d={store.dim})")
    return 0


def cmd_memory_import(args) -> int:
    dest = _open_store(args.store)
    source = memory.load(args.source)
    n = memory.import_store(dest, source)
    print(f"imported {n} samples from {args.source}")
    return 0


def cmd_memory_embed(args) -> int:
    store = memory.load(args.store)
    embedder = memory.make_embedder(store.embedder_id)
    n = memory.reembed(store, embedder)
    print(f"recomputed {n} embeddings with {embedder.id}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except S2PError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileExistsError as err:
        print(f"error: already exists: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
