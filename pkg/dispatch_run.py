# dispatch_run.py
import importlib
import logging
import os

import numpy as np
import pandas as pd

from chem_parse import EMPTY_SCAFFOLD_KEY, murcko_scaffold, parse_smiles, render_smiles
from data_io import (
    SplitAssignment, assert_disjoint, generate_planted_benchmark, ingest_csv, load_checkpoint, load_graphs,
    random_split, read_checkpoint, save_checkpoint, scaffold_split, species_split, write_jsonl,
)
from data_io.checkpoint import load_head
from data_io.formats import manifest_path, sha256_file
from data_io.splits import scaffold_keys
from gnn import Encoder, EncoderConfig
from numkernel import grad_check, precision
from pretrain import (
    AttributeMasking, ContextConfig, ContextPrediction, EdgePrediction, MaskConfig, SupervisedHead,
    apply_mask, build_context_pairs, context_loss, edgepred_loss, masking_loss, supervised_loss,
)
from run_base import RunBase
from traineval import evaluate, finetune, pretrain_run, run_seeds, summarize_seeds
from utils.errors import ConfigurationError, DataError, DivergenceError, UsageError

logger = logging.getLogger(__name__)

# --------------------------------------------------------------------------------------
# Objective routing
# --------------------------------------------------------------------------------------
OBJECTIVE_MODULE_MAP = {
    "context": ("pretrain.context_prediction", "ContextPrediction"),
    "mask": ("pretrain.attribute_masking", "AttributeMasking"),
    "edgepred": ("pretrain.edge_prediction", "EdgePrediction"),
    "supervised": ("pretrain.supervised", "SupervisedMultiTask"),
}

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_SMILES = ("CCO", "CC(=O)N", "c1ccncc1", "CC(C)CO", "OCC(N)C=O", "C1CCOC1")
GRADCHECK_LABELS = ([1, 0], [0, -1], [1, 1], [0, 0], [-1, 1], [1, 0])


def objective_class(task: str):
    if task not in OBJECTIVE_MODULE_MAP:
        raise UsageError(f"unknown pre-training task {task!r}; expected one of {sorted(OBJECTIVE_MODULE_MAP)}")
    module_name, class_name = OBJECTIVE_MODULE_MAP[task]
    module = importlib.import_module(module_name)
    return getattr(module, class_name)


def objective_settings(task: str, run: RunBase, graphs):
    if task == "context":
        return run.config.context
    if task == "mask":
        return run.config.mask
    if task == "supervised":
        widths = {len(g.labels) for g in graphs if g.labels is not None}
        return {"num_tasks": widths.pop() if len(widths) == 1 else 0}
    return {}


# --------------------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------------------
def _require(run: RunBase, name: str) -> str:
    value = run.args.get(name)
    if value is None:
        raise UsageError(f"{run.command} needs --{name.replace('_', '-')}")
    if isinstance(value, str) and not os.path.exists(value):
        raise DataError(f"file not found: {value}")
    return value


def _load(run: RunBase, name: str = "data") -> tuple:
    return load_graphs(_require(run, name), run.run_id, run.run_dir)


def _build_encoder(run: RunBase, domain: str, seed: int) -> tuple:
    """Fresh encoder from `encoder.*`, or the one stored in `--init`.
    Returns (encoder, init checkpoint hash or None)."""
    init = run.args.get("init")
    if init:
        encoder, ckpt = load_checkpoint(_require(run, "init"), rng=np.random.default_rng(seed))
        init_hash = ckpt.content_hash
    else:
        encoder, init_hash = Encoder(run.config.encoder, np.random.default_rng(seed)), None
    if encoder.vocab.name != domain:
        raise ConfigurationError(f"encoder domain {encoder.vocab.name!r} does not match {domain!r} data")
    return encoder, init_hash


def _leakage_gate(run: RunBase, graphs):
    """Supervised pre-training must not see any downstream test graph."""
    path = run.args.get("downstream_test")
    if not path:
        raise ConfigurationError("supervised pre-training needs --downstream-test to prove disjointness")
    downstream, _ = load_graphs(_require(run, "downstream_test"))
    if run.args.get("split"):
        split = SplitAssignment.load(_require(run, "split"))
        split.check_covers(len(downstream))
        downstream = [downstream[i] for i in split.test]
    assert_disjoint(graphs, downstream, "supervised pre-training set")
    print(f"✅ Leakage gate passed: {len(graphs)} pre-training graphs vs {len(downstream)} downstream test graphs")


# --------------------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------------------
def cmd_parse(run: RunBase) -> dict:
    src = _require(run, "data")
    graphs, tasks = ingest_csv(src, run.run_id, run.run_dir)
    out = run.path("graphs.jsonl")
    write_jsonl(out, graphs, tasks, provenance={"source": os.path.basename(src), "source_sha256": sha256_file(src)})
    run.record_artifact(out)
    run.record_artifact(manifest_path(out))
    print(f"✅ Parsed {len(graphs)} molecules ({len(tasks)} tasks) → {out}")
    return {"graphs": len(graphs), "tasks": tasks}


def cmd_scaffold(run: RunBase) -> dict:
    graphs, _ = _load(run)
    if graphs[0].vocab.name != "molecule":
        raise DataError("scaffolds are defined for molecules only")
    rows = []
    for i, (g, key) in enumerate(zip(graphs, scaffold_keys(graphs))):
        scaffold = murcko_scaffold(g)
        rows.append({"index": i, "name": g.name or "", "scaffold_key": key,
                     "scaffold_smiles": render_smiles(scaffold) if key != EMPTY_SCAFFOLD_KEY else ""})
    out = run.path("scaffolds.csv")
    pd.DataFrame(rows).to_csv(out, index=False)
    run.record_artifact(out)
    distinct = len({r["scaffold_key"] for r in rows})
    print(f"✅ {len(rows)} molecules, {distinct} distinct scaffolds → {out}")
    return {"molecules": len(rows), "scaffolds": distinct}


def cmd_split(run: RunBase) -> dict:
    cfg = run.config.data
    rule = run.args.get("rule") or cfg.rule
    graphs, _ = _load(run)
    if rule == "scaffold":
        split = scaffold_split(graphs, cfg.fracs)
    elif rule == "species":
        split = species_split(graphs, cfg.target_species, cfg.species_train_frac, run.seed)
    elif rule == "random":
        split = random_split(len(graphs), cfg.fracs, run.seed)
    else:
        raise UsageError(f"unknown split rule {rule!r}")
    split.check_covers(len(graphs))
    out = run.path("split.json")
    split.save(out)
    run.record_artifact(out)
    print(f"✅ {rule} split {split.sizes()} → {out}")
    return {"rule": rule, "sizes": split.sizes()}


def cmd_gen(run: RunBase) -> dict:
    kind = run.args.get("kind")
    if not kind:
        raise UsageError("gen needs --kind")
    size = int(run.args.get("size") or 512)
    bench = generate_planted_benchmark(kind, size, run.seed)
    provenance = {"generator": kind, "size": size, "seed": run.seed}

    out = run.path("graphs.jsonl")
    write_jsonl(out, bench.graphs, bench.task_names, provenance=provenance)
    run.record_artifact(out)
    run.record_artifact(manifest_path(out))
    if bench.split is not None:
        split_path = run.path("split.json")
        bench.split.save(split_path)
        run.record_artifact(split_path)
    if bench.pretrain_graphs:
        pre = run.path("pretrain.jsonl")
        write_jsonl(pre, bench.pretrain_graphs, bench.pretrain_task_names, provenance={**provenance, "role": "pretrain"})
        run.record_artifact(pre)
        run.record_artifact(manifest_path(pre))
    if bench.motifs is not None:
        run.write_json("motifs.json", {"motifs": [int(m) for m in bench.motifs]})
    print(f"✅ Generated {kind} benchmark with {len(bench.graphs)} graphs → {run.run_dir}")
    return {"kind": kind, "graphs": len(bench.graphs)}


def cmd_pretrain(run: RunBase) -> dict:
    task = run.args.get("task") or run.config.train.objective
    graphs, _ = _load(run)
    valid = _load(run, "valid")[0] if run.args.get("valid") else None
    if task == "supervised":
        _leakage_gate(run, graphs)

    domain = graphs[0].vocab.name
    encoder, init_hash = _build_encoder(run, domain, run.seed)
    objective = objective_class(task)(encoder, objective_settings(task, run, graphs), np.random.default_rng([run.seed, 7]))
    run.update_progress(f"🧪 pre-training {task}", {"objective": task, "graphs": len(graphs)}, 1)

    curves = pretrain_run(objective, graphs, run.config.train, valid, run_key=run.run_id)
    curves_path = run.path("curves.csv")
    curves.to_csv(curves_path)
    run.record_artifact(curves_path)

    ckpt = run.path("encoder.ckpt")
    digest = save_checkpoint(ckpt, objective.retained, provenance={
        "objective": task, "dataset_sha256": sha256_file(run.args["data"]), "init_checkpoint": init_hash,
        "config_hash": run.config_hash, "seed": run.seed, "epochs": len(curves),
    })
    run.record_artifact(ckpt)
    print(f"✅ Pre-trained {task} encoder ({encoder.num_parameters()} parameters) → {ckpt} [{digest[:12]}]")
    return {"objective": task, "checkpoint": digest, "epochs": len(curves),
            "final_train_loss": curves.rows[-1]["train_loss"] if curves.rows else None}


def cmd_finetune(run: RunBase) -> dict:
    graphs, task_names = _load(run)
    split = SplitAssignment.load(_require(run, "split"))
    split.check_covers(len(graphs))
    domain = graphs[0].vocab.name
    n_seeds = int(run.args.get("seeds") or 1)
    if n_seeds < 1:
        raise UsageError("--seeds must be at least 1")
    seeds = [run.seed + i for i in range(n_seeds)]
    workers = run.config.run.workers
    run.update_progress(f"🎯 fine-tuning {n_seeds} seed(s)", {"completed": 0, "total": n_seeds}, 1)

    def one_seed(seed: int) -> dict:
        encoder, init_hash = _build_encoder(run, domain, seed)
        cfg = run.config.train.model_copy(update={"seed": seed, "progress": run.config.train.progress and n_seeds == 1})
        result = finetune(encoder, graphs, split, cfg, workers=workers if n_seeds == 1 else 1,
                          run_key=f"{run.run_id}/seed_{seed}", init_hash=init_hash, task_names=task_names)
        curves_path = run.path(f"seed_{seed}", "curves.csv")
        result.curves.to_csv(curves_path)
        run.record_artifact(curves_path)
        run.write_json(os.path.join(f"seed_{seed}", "report.json"), result.report)
        best = run.path(f"seed_{seed}", "best.ckpt")
        save_checkpoint(best, result.encoder, heads={"head": result.head},
                        provenance={"objective": "finetune", "seed": seed, "init_checkpoint": init_hash,
                                    "best_epoch": result.best_epoch, "config_hash": run.config_hash})
        run.record_artifact(best)
        run.mark_step_complete(f"seed {seed} test AUC {result.report['mean_auc']}")
        return result.report

    if n_seeds == 1:
        reports = {seeds[0]: one_seed(seeds[0])}
        run.write_json("report.json", reports[seeds[0]])
    else:
        reports = run_seeds(one_seed, seeds, max_concurrent=workers, run_id=run.run_id, log_root=run.run_dir)
    summary = summarize_seeds(reports)
    if not summary["completed"]:
        raise DataError(f"no seed finished with an evaluable test set; see {run.run_dir}/fail_logs")
    run.write_json("summary.json", summary)
    print(f"✅ Fine-tuned {summary['completed']}/{n_seeds} seeds: test AUC {summary['mean_auc']:.4f} "
          f"± {summary['std_auc']:.4f}")
    return summary


def cmd_eval(run: RunBase) -> dict:
    encoder, ckpt = load_checkpoint(_require(run, "ckpt"))
    head = load_head(ckpt, "head")
    graphs, task_names = _load(run)
    if run.args.get("split"):
        split = SplitAssignment.load(_require(run, "split"))
        split.check_covers(len(graphs))
        graphs = [graphs[i] for i in split.test]
    report = evaluate(encoder, head, graphs, workers=run.config.run.workers)
    payload = {**report.to_dict(task_names), "checkpoint": ckpt.content_hash, "graphs": len(graphs)}
    run.write_json("eval.json", payload)
    mean = "undefined" if report.mean is None else f"{report.mean:.4f}"
    print(f"✅ Evaluated {len(graphs)} graphs: mean AUC {mean} over {report.evaluable} tasks")
    return payload


# ---- gradient check ----
def _gradcheck_graphs():
    return [parse_smiles(s).replace(labels=y) for s, y in zip(GRADCHECK_SMILES, GRADCHECK_LABELS)]


def _supervised_case(config, graphs, rng):
    encoder = Encoder(config, rng)
    head = SupervisedHead(config.output_dim, len(GRADCHECK_LABELS[0]), rng)
    return (lambda: supervised_loss(encoder, head, graphs, train=True, dropout_rate=0.0),
            encoder.store.merge(head.store))


def _context_case(config, graphs, rng):
    settings = ContextConfig(K=config.layers, r1=1, r2=3, context_layers=2)
    objective = ContextPrediction(Encoder(config, rng), settings, rng)
    pairs = build_context_pairs(graphs, rng, settings)
    return (lambda: context_loss(objective.encoder, objective.context_encoder, pairs, train=True, dropout_rate=0.0),
            objective.parameters())


def _mask_case(config, graphs, rng):
    settings = MaskConfig(rate=0.3)
    objective = AttributeMasking(Encoder(config, rng), settings, rng)
    masked, targets = zip(*(apply_mask(g, settings, rng) for g in graphs))
    return (lambda: masking_loss(objective.encoder, objective.head, list(masked), list(targets), settings,
                                 train=True, dropout_rate=0.0),
            objective.parameters())


def _edgepred_case(config, graphs, rng):
    objective = EdgePrediction(Encoder(config, rng), {}, rng)
    return (lambda: edgepred_loss(objective.encoder, graphs, np.random.default_rng(0), train=True, dropout_rate=0.0),
            objective.parameters())


GRADCHECK_CASES = {
    "supervised": _supervised_case,
    "context": _context_case,
    "mask": _mask_case,
    "edgepred": _edgepred_case,
}


def gradcheck_errors(architecture: str = "gin", objectives=None, seed: int = 0, eps: float = 1e-4) -> dict:
    """Worst relative error per objective for a 2-layer encoder on small
    molecules. Call under the precision the check should run in."""
    config = EncoderConfig(architecture=architecture, layers=2, width=8, mlp_hidden=16)
    graphs = _gradcheck_graphs()
    errors = {}
    for name in objectives or GRADCHECK_CASES:
        loss_fn, store = GRADCHECK_CASES[name](config, graphs, np.random.default_rng([seed, len(errors)]))
        errors[name] = grad_check(loss_fn, store, eps=eps, seed=seed)
        logger.info("[GRADCHECK] %s/%s max relative error %.3e", architecture, name, errors[name])
    return errors


def cmd_gradcheck(run: RunBase) -> dict:
    model = run.args.get("model") or run.config.encoder.architecture
    mode = run.args.get("precision") or "double"
    objective = run.args.get("objective") or "all"
    names = list(GRADCHECK_CASES) if objective == "all" else [objective]
    with precision(mode):
        errors = gradcheck_errors(model, names, seed=run.seed)
    worst = max(errors.values())
    run.write_json("gradcheck.json", {"model": model, "precision": mode, "errors": errors, "max_relative_error": worst})
    print(f"max_relative_error={worst:.3e}")
    if worst >= GRADCHECK_TOLERANCE:
        raise DivergenceError(f"gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE}")
    return {"max_relative_error": worst, "errors": errors}


def cmd_inspect(run: RunBase) -> dict:
    ckpt = read_checkpoint(_require(run, "ckpt"))
    header = ckpt.header
    summary = {
        "format_version": header["format_version"],
        "config": header["config"],
        "num_parameters": header["num_parameters"],
        "content_hash": header["content_hash"],
        "shapes": {p["name"]: p["shape"] for p in header["params"]},
        "heads": header.get("heads", {}),
        "provenance": header.get("provenance", {}),
    }
    run.write_json("inspect.json", summary)
    cfg = header["config"]
    print(f"📦 format v{summary['format_version']} {cfg['architecture']} layers={cfg['layers']} width={cfg['width']} "
          f"domain={cfg['domain']}")
    print(f"   parameters={summary['num_parameters']} arrays={len(summary['shapes'])} hash={summary['content_hash']}")
    for name, shape in summary["shapes"].items():
        print(f"   {name} {tuple(shape)}")
    print(f"   provenance={summary['provenance']}")
    return summary


COMMAND_MAP = {
    "parse": cmd_parse,
    "scaffold": cmd_scaffold,
    "split": cmd_split,
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


def dispatch(run: RunBase) -> dict:
    """Run one command inside its run directory; run.json is written on
    success and on failure."""
    handler = COMMAND_MAP.get(run.command)
    if handler is None:
        raise UsageError(f"unknown command {run.command!r}")
    try:
        summary = handler(run)
    except Exception as e:
        run.update_progress(f"❌ {type(e).__name__}: {e}")
        run.finish(status="failed", summary={"error": type(e).__name__, "reason": str(e)})
        raise
    run.update_progress(f"✅ {run.command} complete", step_percent=100)
    run.finish(summary=summary)
    return summary
