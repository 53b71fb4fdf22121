# traineval.py
"""
Training loops for pre-training and fine-tuning, ROC-AUC evaluation with
validation-based model selection, per-epoch curves and the multi-seed
protocol.
"""
import logging
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import rankdata
from tqdm import tqdm

from gnn import Encoder
from numkernel import Tape, adam_step
from pretrain.base import PretrainObjective
from pretrain.supervised import SupervisedHead, graph_logits, label_matrix, supervised_loss
from shared_state import merge_progress
from utils.errors import DivergenceError, EmptyInputError, UndefinedMetricError, log_failure

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["epoch", "train_loss", "train_metric", "valid_metric", "seconds", "valid_loss"]
METRIC_SAMPLE = 256      # graphs used for the per-epoch train metric of pre-training


class TrainConfig(BaseModel):
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(32, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    lr: float = Field(0.001, gt=0.0)
    seed: int = 0
    objective: str = "supervised"
    eval_every: int = Field(1, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    freeze_batchnorm: bool = False
    eval_train: bool = True
    progress: bool = True


# ---- curves ----
@dataclass
class Curves:
    rows: list = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, train_metric=None, valid_metric=None,
               seconds: float = 0.0, valid_loss=None):
        self.rows.append({"epoch": epoch, "train_loss": train_loss, "train_metric": train_metric,
                          "valid_metric": valid_metric, "seconds": round(seconds, 4), "valid_loss": valid_loss})

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=CURVE_COLUMNS)

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.6f")

    @classmethod
    def from_csv(cls, path: str) -> "Curves":
        frame = pd.read_csv(path)
        frame = frame.astype(object).where(frame.notna(), None)
        return cls(rows=frame.to_dict(orient="records"))


def epochs_to_reach(curves: Curves, threshold: float) -> Optional[int]:
    """First epoch whose validation metric is >= threshold, or None."""
    for row in curves.rows:
        if row["valid_metric"] is not None and row["valid_metric"] >= threshold:
            return int(row["epoch"])
    return None


# ---- metrics ----
def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    positive = labels == 1
    P = int(positive.sum())
    N = int((labels == 0).sum())
    if P == 0 or N == 0:
        raise UndefinedMetricError(f"ROC-AUC undefined with {P} positives and {N} negatives")
    keep = (labels == 0) | positive
    ranks = rankdata(scores[keep], method="average")
    return float((ranks[positive[keep]].sum() - P * (P + 1) / 2.0) / (P * N))


@dataclass
class EvalReport:
    per_task: list                 # AUC per task; None where undefined
    mean: Optional[float]          # over evaluable tasks only
    scores: np.ndarray

    @property
    def evaluable(self) -> int:
        return sum(a is not None for a in self.per_task)

    def to_dict(self, task_names: Optional[Sequence[str]] = None) -> dict:
        names = list(task_names) if task_names else [f"task_{t}" for t in range(len(self.per_task))]
        return {"per_task": dict(zip(names, self.per_task)), "mean": self.mean, "evaluable_tasks": self.evaluable}


def evaluate(encoder: Encoder, head: SupervisedHead, graphs, workers: int = 1, chunk_size: int = 256) -> EvalReport:
    """ROC-AUC per task on eval-mode logits. Chunks may run on several worker
    threads; results are merged by chunk index."""
    graphs = list(graphs)
    if not graphs:
        raise EmptyInputError("nothing to evaluate")
    labels = label_matrix(graphs, head.num_tasks)
    chunks = [graphs[i:i + chunk_size] for i in range(0, len(graphs), chunk_size)]

    def run(chunk):
        return graph_logits(encoder, head, chunk).data

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    scores = np.concatenate(parts)

    per_task = []
    for t in range(labels.shape[1]):
        observed = labels[:, t] != -1
        try:
            per_task.append(roc_auc(scores[observed, t], labels[observed, t]))
        except UndefinedMetricError:
            logger.debug("[EVAL] task %d is single-class; excluded from the mean", t)
            per_task.append(None)
    defined = [a for a in per_task if a is not None]
    return EvalReport(per_task, float(np.mean(defined)) if defined else None, scores)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _require_steps(losses: list, epoch: int, what: str):
    if not losses:
        raise EmptyInputError(f"{what}: epoch {epoch} had no batch with a usable loss; nothing was trained")


def _bar(cfg: TrainConfig, desc: str):
    # tqdm disables itself off a TTY when disable=None
    return tqdm(range(1, cfg.epochs + 1), desc=desc, disable=None if cfg.progress else True, leave=False)


# ---- fine-tuning ----
@dataclass
class FinetuneResult:
    curves: Curves
    report: dict
    encoder: Encoder
    head: SupervisedHead
    best_epoch: int


def _state(encoder: Encoder, head: SupervisedHead) -> dict:
    out = {k: v.copy() for k, v in encoder.state_arrays().items()}
    out.update(head.store.snapshot())
    return out


def _restore(encoder: Encoder, head: SupervisedHead, state: dict):
    encoder.load_state({k: v for k, v in state.items() if k.startswith(encoder.prefix + ".")})
    head.store.restore({k: v for k, v in state.items() if k in head.store})


def finetune(encoder: Encoder, graphs, split, cfg: TrainConfig, head: Optional[SupervisedHead] = None,
             workers: int = 1, run_key: str = "finetune", init_hash: Optional[str] = None,
             task_names: Optional[Sequence[str]] = None) -> FinetuneResult:
    """End-to-end training of encoder + fresh linear heads. The reported test
    metric is the one at the epoch with the best validation mean; ties keep the
    earliest epoch and epoch 0 is the untrained model."""
    graphs = list(graphs)
    parts = {name: [graphs[i] for i in getattr(split, name)] for name in ("train", "valid", "test")}
    for name, part in parts.items():
        if not part:
            raise EmptyInputError(f"empty {name} split")
    num_tasks = label_matrix(parts["train"]).shape[1]
    init_rng = np.random.default_rng([cfg.seed, 0])
    head = head or SupervisedHead(encoder.config.output_dim, num_tasks, init_rng, prefix="head")
    store = encoder.store.merge(head.store)
    order_rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng([cfg.seed, 1])

    def score(report):
        return -np.inf if report.mean is None else report.mean

    valid = evaluate(encoder, head, parts["valid"], workers)
    test = evaluate(encoder, head, parts["test"], workers)
    best = {"epoch": 0, "valid": valid, "test": test, "state": _state(encoder, head)}
    if valid.mean is None:
        logger.warning("[FINETUNE] no evaluable validation task; model selection keeps epoch 0")

    curves = Curves()
    steps = 0
    for epoch in _bar(cfg, "finetune"):
        t0 = time.time()
        losses = []
        for idx in _batches(order_rng.permutation(len(parts["train"])), cfg.batch_size):
            batch = [parts["train"][i] for i in idx]
            try:
                with Tape() as tape:
                    loss = supervised_loss(encoder, head, batch, train=True, rng=drop_rng,
                                           dropout_rate=cfg.dropout, freeze_batchnorm=cfg.freeze_batchnorm)
                    grads = tape.gradient(loss, store.params)
            except EmptyInputError as e:
                logger.warning("[FINETUNE] epoch %d: batch of %d graphs skipped: %s", epoch, len(batch), e)
                continue
            adam_step(store, grads, lr=cfg.lr)
            losses.append(loss.item())
            steps += 1
            if cfg.max_steps and steps >= cfg.max_steps:
                break
        _require_steps(losses, epoch, "fine-tuning")

        train_metric = evaluate(encoder, head, parts["train"], workers).mean if cfg.eval_train else None
        valid_metric = valid_loss = None
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            valid = evaluate(encoder, head, parts["valid"], workers)
            valid_metric = valid.mean
            try:
                valid_loss = supervised_loss(encoder, head, parts["valid"]).item()
            except EmptyInputError:
                valid_loss = None
            if score(valid) > score(best["valid"]):
                best = {"epoch": epoch, "valid": valid, "test": evaluate(encoder, head, parts["test"], workers),
                        "state": _state(encoder, head)}
        train_loss = float(np.mean(losses)) if losses else None
        curves.append(epoch, train_loss, train_metric, valid_metric, time.time() - t0, valid_loss)
        merge_progress(run_key, f"[FINETUNE] epoch {epoch}/{cfg.epochs}", 100.0 * epoch / cfg.epochs,
                       {"epoch": epoch, "train_loss": train_loss, "valid_metric": valid_metric})
        logger.info("[FINETUNE] epoch=%d train_loss=%s valid=%s", epoch, train_loss, valid_metric)
        if cfg.max_steps and steps >= cfg.max_steps:
            break

    _restore(encoder, head, best["state"])
    report = {
        "test": best["test"].to_dict(task_names),
        "mean_auc": best["test"].mean,
        "valid_mean_auc": best["valid"].mean,
        "best_epoch": best["epoch"],
        "seed": cfg.seed,
        "init_checkpoint": init_hash,
    }
    return FinetuneResult(curves, report, encoder, head, best["epoch"])


# ---- pre-training ----
def objective_metric(objective: PretrainObjective, graphs, rng: np.random.Generator, batch_size: int) -> Optional[float]:
    values = []
    for start in range(0, len(graphs), batch_size):
        try:
            values.append(objective.batch_metric(graphs[start:start + batch_size], rng))
        except EmptyInputError:
            continue
    return float(np.mean(values)) if values else None


def objective_loss(objective: PretrainObjective, graphs, rng: np.random.Generator, batch_size: int) -> Optional[float]:
    values = []
    for start in range(0, len(graphs), batch_size):
        try:
            values.append(objective.batch_loss(graphs[start:start + batch_size], rng, train=False).item())
        except EmptyInputError:
            continue
    return float(np.mean(values)) if values else None


def pretrain_run(objective: PretrainObjective, graphs, cfg: TrainConfig, valid_graphs=None,
                 run_key: str = "pretrain") -> Curves:
    """Minibatch Adam on the objective's loss. Metrics on held-out graphs use
    an rng stream fixed per run so epochs are comparable."""
    graphs = list(graphs)
    if not graphs:
        raise EmptyInputError("empty pre-training dataset")
    objective.check_graphs(graphs)
    store = objective.parameters()
    order_rng = np.random.default_rng(cfg.seed)
    step_rng = np.random.default_rng([cfg.seed, 1])
    sample = graphs[:METRIC_SAMPLE]

    curves = Curves()
    steps = 0
    for epoch in _bar(cfg, f"pretrain:{objective.name}"):
        t0 = time.time()
        losses = []
        for idx in _batches(order_rng.permutation(len(graphs)), cfg.batch_size):
            batch = [graphs[i] for i in idx]
            try:
                with Tape() as tape:
                    loss = objective.batch_loss(batch, step_rng, train=True, dropout_rate=cfg.dropout)
                    grads = tape.gradient(loss, store.params)
            except EmptyInputError as e:
                logger.warning("[PRETRAIN] %s epoch %d: batch of %d graphs skipped: %s",
                               objective.name, epoch, len(batch), e)
                continue
            adam_step(store, grads, lr=cfg.lr)
            losses.append(loss.item())
            steps += 1
            if cfg.max_steps and steps >= cfg.max_steps:
                break
        _require_steps(losses, epoch, f"{objective.name} pre-training")

        train_metric = valid_metric = valid_loss = None
        if cfg.eval_train:
            train_metric = objective_metric(objective, sample, np.random.default_rng([cfg.seed, 2]), cfg.batch_size)
        if valid_graphs and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            valid_metric = objective_metric(objective, list(valid_graphs), np.random.default_rng([cfg.seed, 3]), cfg.batch_size)
            valid_loss = objective_loss(objective, list(valid_graphs), np.random.default_rng([cfg.seed, 3]), cfg.batch_size)
        train_loss = float(np.mean(losses)) if losses else None
        curves.append(epoch, train_loss, train_metric, valid_metric, time.time() - t0, valid_loss)
        merge_progress(run_key, f"[PRETRAIN] epoch {epoch}/{cfg.epochs}", 100.0 * epoch / max(cfg.epochs, 1),
                       {"objective": objective.name, "epoch": epoch, "steps": steps, "train_loss": train_loss})
        logger.info("[PRETRAIN] %s epoch=%d steps=%d loss=%s metric=%s valid=%s",
                    objective.name, epoch, steps, train_loss, train_metric, valid_metric)
        if cfg.max_steps and steps >= cfg.max_steps:
            break
    return curves


# ---- multi-seed protocol ----
def summarize_seeds(reports: dict) -> dict:
    """mean/std of test AUC over the seeds that finished."""
    values = [r["mean_auc"] for r in reports.values() if r and r.get("mean_auc") is not None]
    return {
        "seeds": sorted(reports),
        "completed": len(values),
        "mean_auc": float(np.mean(values)) if values else None,
        "std_auc": float(np.std(values)) if values else None,
        "per_seed": {str(s): (r or {}).get("mean_auc") for s, r in sorted(reports.items())},
    }


def run_seeds(fn: Callable[[int], dict], seeds: Sequence[int], max_concurrent: int = 1,
              run_id: str = "seeds", log_root: str = ".") -> dict:
    """Run `fn(seed)` for every seed with bounded concurrency. A failing seed is
    logged to fail_logs and the others continue; returns {seed: report or None}.
    If every seed diverged, the first seed's DivergenceError is re-raised."""
    semaphore = threading.Semaphore(max(1, max_concurrent))
    reports, errors = {}, {}
    lock = threading.Lock()

    def run_with_semaphore(seed):
        with semaphore:
            error = None
            try:
                result = fn(seed)
            except Exception as e:
                logger.error("[SEEDS] seed %s failed: %s", seed, e)
                log_failure(run_id, f"seed_{seed}", "seed_failed",
                            {"error": str(e), "traceback": traceback.format_exc()}, root=log_root)
                result, error = None, e
            with lock:
                reports[seed] = result
                if error is not None:
                    errors[seed] = error

    with ThreadPoolExecutor(max_workers=len(seeds) or 1) as executor:
        for seed in seeds:
            executor.submit(run_with_semaphore, seed)
    if seeds and len(errors) == len(seeds) and all(isinstance(e, DivergenceError) for e in errors.values()):
        raise errors[min(errors)]
    return dict(sorted(reports.items()))
