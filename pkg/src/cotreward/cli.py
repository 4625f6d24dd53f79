"""Command-line entry point: run, summarize, decompose-cache, label-audit.

Exit codes:
    0  success
    1  unexpected error
    2  bad arguments or config
    3  missing fixture or unknown task
    4  unparseable model output
    5  transport failure talking to an external model
    6  summary lists incomplete runs
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .clients import OpenAICompatibleClient
from .decomposer import DecompositionCache, Decomposer
from .errors import InvalidArgumentError, NotFoundError, ParseError, TransportError
from .experiment import load_config, run, summarize
from .successlabel import QUERY, AuditLog, context_prompt, label_oracle, label_vlm
from .toyenv import Env, EnvState, get_task, load_trajectory_records, seed_from

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NOT_FOUND, EXIT_PARSE, EXIT_TRANSPORT, EXIT_INCOMPLETE = range(7)

log = logging.getLogger("cotreward")


def _client(args):
    if not args.model:
        raise InvalidArgumentError("--model is required for live queries")
    return OpenAICompatibleClient(args.model, base_url=args.base_url)


def cmd_run(args):
    spec = load_config(args.config)
    out = run(spec, args.out, workers=args.workers)
    print(f"run written to {out}")
    return _report(summarize(out))


def cmd_summarize(args):
    return _report(summarize(args.run_dir))


def _report(summary):
    for r in summary.rows:
        print(f"{r['task']:14s} {r['method']:14s} {r['ablation']:28s} "
              f"{r['mean_success']:.3f} +- {r['std_success']:.3f}  n={r['n_seeds']}  {r['status']}")
    ratio = summary.improvement["mean_ratio"]
    print("improvement ratio:", "undefined" if ratio is None else f"{ratio:.3f}")
    if summary.incomplete:
        print(f"{len(summary.incomplete)} incomplete row(s)", file=sys.stderr)
        return EXIT_INCOMPLETE
    return EXIT_OK


def cmd_decompose_cache(args):
    cache = DecompositionCache(args.cache)
    if args.list:
        for task in cache.tasks():
            print(task)
        return EXIT_OK
    if not args.task:
        raise InvalidArgumentError("give --task or --list")
    client = _client(args) if args.live else None
    dec = Decomposer(cache, client=client).decompose(args.task, "live" if args.live else "fixture")
    print(json.dumps(dec.to_record(), indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_label_audit(args):
    records = load_trajectory_records(args.trajectories)
    audit = AuditLog(args.out)
    rng = np.random.default_rng(seed_from("label-audit", args.seed))
    client = _client(args) if args.labeler == "vlm" else None
    failures = 0
    for rec in records:
        final = EnvState.from_dict(rec["observations"][-1])
        task = rec["task_id"]
        tid = rec.get("traj_id", "")
        if args.labeler == "vlm":
            # The toy world has no pixels; the final frame's JSON stands in for the image.
            payload = json.dumps(rec["frames"][-1], sort_keys=True)
            try:
                decision = label_vlm(payload, context_prompt(task), QUERY, client)
            except ParseError as exc:
                audit.write(tid, None, error=f"parse: {exc}")
                failures += 1
                continue
        else:
            truth = Env(get_task(task).task_id).success(final)
            rate = args.error_rate if args.labeler == "oracle_noised" else 0.0
            decision = label_oracle(final, truth, rate, rng)
        audit.write(tid, decision)
    print(f"labeled {len(records) - failures}/{len(records)} trajectories -> {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cotreward", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config into a directory")
    r.add_argument("config")
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", help="recompute summary.csv, curves.csv and improvement.json")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_summarize)

    d = sub.add_parser("decompose-cache", help="inspect or extend the sub-goal cache")
    d.add_argument("--task", help="task instruction, e.g. 'open the door'")
    d.add_argument("--list", action="store_true")
    d.add_argument("--live", action="store_true", help="query a language model on a cache miss")
    d.add_argument("--cache", help="JSONL cache path (default: packaged fixtures)")
    d.add_argument("--model")
    d.add_argument("--base-url", default="https://api.openai.com/v1")
    d.set_defaults(func=cmd_decompose_cache)

    a = sub.add_parser("label-audit", help="label dumped trajectories and write an audit log")
    a.add_argument("trajectories")
    a.add_argument("--out", required=True)
    a.add_argument("--labeler", choices=("oracle", "oracle_noised", "vlm"), default="oracle")
    a.add_argument("--error-rate", type=float, default=0.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--model")
    a.add_argument("--base-url", default="https://api.openai.com/v1")
    a.set_defaults(func=cmd_label_audit)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotFoundError, FileNotFoundError) as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
