# cli.py
"""
pregraph command line.

    pregraph gen --kind transfer --size 512 --seed 0
    pregraph pretrain --task context --data graphs.jsonl --set encoder.layers=5
    pregraph finetune --data graphs.jsonl --split split.json --init encoder.ckpt --seeds 5

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence. Failures print one line to stderr:

    error=<kind> reason="<message>"
"""
import argparse
import json
import logging
import sys

from dotenv import load_dotenv

from utils.config import resolve
from utils.errors import PregraphError, UsageError

logger = logging.getLogger("pregraph")

SPLIT_RULES = ("scaffold", "species", "random")
TASKS = ("context", "mask", "edgepred", "supervised")
ARCHITECTURES = ("gin", "gcn", "graphsage")
BENCHMARKS = ("context-classes", "masked-rule", "transfer", "ppi-ego")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value config file, or a previous run.json")
    common.add_argument("--seed", type=int, help="shorthand for train.seed")
    common.add_argument("--out", help="output root (default: $PREGRAPH_OUT or runs/)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable; wins over --config")
    common.add_argument("--workers", type=int, help="shorthand for run.workers")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="pregraph", description="Pre-training and fine-tuning graph neural networks.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("parse", parents=[common], help="SMILES CSV → graph JSONL")
    p.add_argument("--data", required=True, help="CSV with a smiles column")

    p = sub.add_parser("scaffold", parents=[common], help="emit scaffold keys")
    p.add_argument("--data", required=True)

    p = sub.add_parser("split", parents=[common], help="scaffold, species or random split")
    p.add_argument("--data", required=True)
    p.add_argument("--rule", choices=SPLIT_RULES)

    p = sub.add_parser("gen", parents=[common], help="planted benchmarks")
    p.add_argument("--kind", choices=BENCHMARKS)
    p.add_argument("--size", type=int)

    p = sub.add_parser("pretrain", parents=[common], help="pre-train an encoder")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--data")
    p.add_argument("--valid", help="held-out graphs for the objective's metric")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--downstream-test", dest="downstream_test", help="downstream dataset for the leakage gate")
    p.add_argument("--split", help="split of --downstream-test; its test part is checked")

    p = sub.add_parser("finetune", parents=[common], help="fine-tune on a labelled split")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--init")
    p.add_argument("--seeds", type=int)

    p = sub.add_parser("eval", parents=[common], help="ROC-AUC of a fine-tuned checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--split")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--model", choices=ARCHITECTURES)
    p.add_argument("--precision", choices=("single", "double"))
    p.add_argument("--objective", choices=TASKS + ("all",))

    p = sub.add_parser("inspect", parents=[common], help="checkpoint summary")
    p.add_argument("--ckpt")
    return parser


COMMON_KEYS = ("config", "seed", "out", "overrides", "workers", "log_level", "command")


def _previous_run(path):
    """Command and arguments stored in a run.json, or None for flat configs."""
    if not path or not path.endswith(".json"):
        return None
    try:
        with open(path) as f:
            record = json.load(f)
    except (OSError, json.JSONDecodeError):
        return None
    return record if isinstance(record, dict) and "command" in record else None


def parse_run(argv) -> tuple:
    """(command, command args, RunConfig, resolved flat config) for argv."""
    ns = build_parser().parse_args(argv)
    args = {k: v for k, v in vars(ns).items() if k not in COMMON_KEYS}

    previous = _previous_run(ns.config)
    if previous is not None:
        if previous["command"] != ns.command:
            raise UsageError(f"{ns.config} records a {previous['command']!r} run, not {ns.command!r}")
        for key, value in previous.get("args", {}).items():
            if args.get(key) is None:
                args[key] = value

    overrides = list(ns.overrides)
    if ns.seed is not None:
        overrides.append(f"train.seed={ns.seed}")
    if ns.workers is not None:
        overrides.append(f"run.workers={ns.workers}")
    if ns.out is not None:
        overrides.append(f"run.out={ns.out}")
    config, flat = resolve(ns.config, overrides)
    return ns.command, args, config, flat


def _configure_logging(argv):
    level = "INFO"
    if "--log-level" in argv:
        i = argv.index("--log-level")
        if i + 1 < len(argv):
            level = argv[i + 1]
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    load_dotenv()
    _configure_logging(argv)
    try:
        command, args, config, flat = parse_run(argv)
        # heavy imports after argument parsing
        from dispatch_run import dispatch
        from run_base import RunBase

        dispatch(RunBase(command, args, config, flat))
    except PregraphError as e:
        reason = str(e).replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
        print(f'error={e.kind} reason="{reason}"', file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
