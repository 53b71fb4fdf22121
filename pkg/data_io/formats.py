# formats.py
"""
Dataset files: one graph per JSON line, a manifest next to it, and ingestion
of MoleculeNet-style SMILES CSVs.
"""
import hashlib
import json
import logging
import os
import threading
from contextlib import contextmanager
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel

from chem_parse import MOLECULE_VOCAB, parse_smiles
from graph_core import PROTEIN_VOCAB, AttributedGraph, Vocab
from utils.errors import DataError, EmptyInputError, InvalidArgumentError, LeakageError, log_failure

logger = logging.getLogger(__name__)

VOCABS = {"molecule": MOLECULE_VOCAB, "protein": PROTEIN_VOCAB}
MANIFEST_SUFFIX = ".manifest.json"

_path_locks = {}
_locks_guard = threading.Lock()


@contextmanager
def locked_path(path: str):
    """Exclusive in-process lock per output path. Other processes are not
    excluded; atomic_write's rename keeps their readers from seeing partial files."""
    key = os.path.abspath(path)
    with _locks_guard:
        lock = _path_locks.setdefault(key, threading.Lock())
    with lock:
        yield


def atomic_write(path: str, data: bytes):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    with locked_path(path):
        tmp = f"{path}.tmp.{os.getpid()}.{threading.get_ident()}"
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---- graph records ----
def graph_to_record(g: AttributedGraph) -> dict:
    record = {
        "n": g.num_nodes,
        "node_attrs": g.node_attrs.tolist(),
        "edges": [[int(u), int(v), a.tolist()] for (u, v), a in zip(g.edges, g.edge_attrs)],
    }
    if g.center is not None:
        record["center"] = g.center
    if g.labels is not None:
        record["labels"] = g.labels.tolist()
    if g.species is not None:
        record["species"] = g.species
    if g.name is not None:
        record["name"] = g.name
    return record


def graph_from_record(record: dict, vocab: Vocab) -> AttributedGraph:
    try:
        edges = record.get("edges", [])
        return AttributedGraph(
            num_nodes=int(record["n"]),
            node_attrs=record["node_attrs"],
            edges=[e[:2] for e in edges],
            edge_attrs=[e[2] for e in edges],
            vocab=vocab,
            center=record.get("center"),
            labels=record.get("labels"),
            species=record.get("species"),
            name=record.get("name"),
        )
    except (KeyError, TypeError, IndexError) as e:
        raise InvalidArgumentError(f"malformed graph record: {e}") from None


def graph_line(g: AttributedGraph) -> str:
    return json.dumps(graph_to_record(g), separators=(",", ":"), sort_keys=True)


def graph_fingerprint(g: AttributedGraph) -> str:
    """Content identity used by the leakage gate: structure, attributes, center
    and species. Labels and names are ignored; edge order is irrelevant."""
    record = graph_to_record(g)
    for key in ("name", "labels"):
        record.pop(key, None)
    record["edges"] = sorted(record["edges"])
    return sha256_bytes(json.dumps(record, separators=(",", ":"), sort_keys=True).encode())


def assert_disjoint(pretrain_graphs, test_graphs, what: str = "pre-training set"):
    test = {graph_fingerprint(g) for g in test_graphs}
    clash = [i for i, g in enumerate(pretrain_graphs) if graph_fingerprint(g) in test]
    if clash:
        raise LeakageError(f"{what} contains {len(clash)} downstream test graphs (first index {clash[0]})")
    logger.info("[LEAKAGE] %s is disjoint from %d test graphs", what, len(test))


# ---- manifests ----
class DatasetManifest(BaseModel):
    domain: str
    graph_count: int
    task_count: int
    task_names: list = []
    vocab: dict
    provenance: dict = {}
    content_hash: str


def manifest_path(dataset_path: str) -> str:
    return dataset_path + MANIFEST_SUFFIX


def write_jsonl(path: str, graphs, task_names=None, provenance: Optional[dict] = None) -> DatasetManifest:
    graphs = list(graphs)
    payload = "".join(graph_line(g) + "\n" for g in graphs).encode()
    domain = graphs[0].vocab.name if graphs else "molecule"
    widths = {len(g.labels) for g in graphs if g.labels is not None}
    if len(widths) > 1:
        raise InvalidArgumentError(f"inconsistent label widths {sorted(widths)}")
    task_count = widths.pop() if widths else 0
    names = list(task_names) if task_names else [f"task_{t}" for t in range(task_count)]
    if len(names) != task_count:
        raise InvalidArgumentError(f"{len(names)} task names for {task_count} tasks")
    manifest = DatasetManifest(domain=domain, graph_count=len(graphs), task_count=task_count, task_names=names,
                               vocab=VOCABS[domain].to_dict(), provenance=provenance or {},
                               content_hash=sha256_bytes(payload))
    atomic_write(path, payload)
    atomic_write(manifest_path(path), (json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n").encode())
    logger.info("[DATA] wrote %d graphs to %s", len(graphs), path)
    return manifest


def read_manifest(dataset_path: str) -> Optional[DatasetManifest]:
    path = manifest_path(dataset_path)
    if not os.path.exists(path):
        return None
    with open(path) as f:
        return DatasetManifest(**json.load(f))


def read_jsonl(path: str, domain: Optional[str] = None, run_id: Optional[str] = None,
               log_root: str = ".") -> list:
    """Graphs of a JSONL file. Domain comes from the argument, else the manifest,
    else molecule. With `run_id`, bad lines are logged and skipped; otherwise
    they raise. A file that no longer matches its manifest hash is rejected."""
    if not os.path.exists(path):
        raise DataError(f"dataset not found: {path}")
    manifest = read_manifest(path)
    if manifest and sha256_file(path) != manifest.content_hash:
        raise DataError(f"{path} does not match the content hash in its manifest; the file changed after writing")
    domain = domain or (manifest.domain if manifest else "molecule")
    vocab = VOCABS[domain]
    graphs = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                graphs.append(graph_from_record(json.loads(line), vocab))
            except (json.JSONDecodeError, InvalidArgumentError) as e:
                if run_id is None:
                    raise DataError(f"{path}:{lineno}: {e}") from None
                log_failure(run_id, f"{os.path.basename(path)}:{lineno}", "invalid_graph", {"error": str(e)}, root=log_root)
    if manifest and manifest.graph_count != len(graphs):
        logger.warning("[DATA] manifest lists %d graphs, %s has %d", manifest.graph_count, path, len(graphs))
    return graphs


# ---- SMILES CSV ingestion ----
def ingest_csv(path: str, run_id: str = "ingest", log_root: str = ".") -> tuple:
    """(graphs, task names) from a CSV with a `smiles` column; every other
    numeric column is a task with values 0/1, empty meaning missing (-1).
    Unparsable rows are logged and skipped."""
    if not os.path.exists(path):
        raise DataError(f"CSV not found: {path}")
    frame = pd.read_csv(path, dtype={"smiles": str}, keep_default_na=True)
    if "smiles" not in frame.columns:
        raise DataError(f"{path} has no 'smiles' column")
    tasks = [c for c in frame.columns if c != "smiles" and pd.api.types.is_numeric_dtype(frame[c])]
    graphs = []
    for row, record in enumerate(frame.to_dict(orient="records")):
        text = record["smiles"]
        labels = [-1 if pd.isna(record[t]) else int(record[t]) for t in tasks]
        try:
            g = parse_smiles("" if pd.isna(text) else text)
            graphs.append(g.replace(labels=labels if tasks else None, name=text))
        except (DataError, InvalidArgumentError) as e:
            logger.warning("[INGEST] row %d skipped: %s", row, e)
            log_failure(run_id, f"row_{row}", "smiles_parse", {"smiles": str(text), "error": str(e)}, root=log_root)
    if not graphs:
        raise EmptyInputError(f"no parsable molecules in {path}")
    logger.info("[INGEST] %d/%d molecules parsed from %s (%d tasks)", len(graphs), len(frame), path, len(tasks))
    return graphs, tasks


def load_graphs(path: str, run_id: Optional[str] = None, log_root: str = ".") -> tuple:
    """CSV or JSONL by extension; returns (graphs, task names)."""
    if path.endswith(".csv"):
        return ingest_csv(path, run_id or "ingest", log_root)
    graphs = read_jsonl(path, run_id=run_id, log_root=log_root)
    manifest = read_manifest(path)
    names = manifest.task_names if manifest else []
    return graphs, names
