import os
import json
import time
import logging

from dotenv import load_dotenv

from data_io.formats import atomic_write, sha256_file
from shared_state import get_progress, merge_progress
from utils.config import RunConfig, config_hash
from utils.errors import log_failure

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_OUT = "runs"
# output placement does not change what a run computes
UNHASHED_KEYS = ("run.out",)


class RunBase:
    """One CLI invocation: resolved config, run directory, progress record,
    artifact hashes and the closing run.json."""

    def __init__(self, command: str, args: dict, config: RunConfig, flat: dict):
        self.command = command
        self.args = {k: v for k, v in sorted(args.items()) if v is not None}
        self.config = config
        self.flat = flat
        self.seed = config.train.seed

        hashed = {k: v for k, v in flat.items() if k not in UNHASHED_KEYS}
        hashed.update({f"{command}.{k}": str(v) for k, v in self.args.items()})
        self.config_hash = config_hash(hashed)
        self.run_id = f"{command}-{self.config_hash[:12]}"

        root = config.run.out or os.getenv("PREGRAPH_OUT") or DEFAULT_OUT
        self.run_dir = os.path.join(root, self.run_id)
        os.makedirs(self.run_dir, exist_ok=True)
        self.artifacts = {}
        self.started = time.time()

        self.write_config()
        logger.info("[RUN] %s → %s (seed %d)", command, self.run_dir, self.seed)
        self.update_progress(f"{command} started", {"command": command, "run_dir": self.run_dir}, 0)

    # ---- paths and artifacts ----
    def path(self, *parts: str) -> str:
        full = os.path.join(self.run_dir, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def record_artifact(self, path: str) -> str:
        digest = sha256_file(path)
        self.artifacts[os.path.relpath(path, self.run_dir)] = digest
        return digest

    def write_json(self, name: str, payload: dict) -> str:
        path = self.path(name)
        atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n").encode())
        self.record_artifact(path)
        return path

    def write_config(self):
        """Resolved config, serialised before anything executes."""
        text = "".join(f"{k}={v}\n" for k, v in self.flat.items())
        atomic_write(os.path.join(self.run_dir, "config.txt"), text.encode())

    # ---- progress ----
    def update_progress(self, message: str, metadata: dict = None, step_percent: float = None):
        current = merge_progress(self.run_id, message, step_percent, metadata)
        logger.info("[UPDATE] %s → %s (%s%%)", self.run_id, message, current["percent"])

    def mark_step_complete(self, message: str, extra_meta: dict = None):
        meta = get_progress(self.run_id).get("meta", {})
        completed = int(meta.get("completed", 0)) + 1
        total = int(meta.get("total", 1)) or 1
        percent = int(completed / total * 100)
        merge_progress(self.run_id, message, percent, {"completed": completed, "total": total, **(extra_meta or {})})
        logger.info("[DONE] %s: %s%% (%d/%d) → %s", self.run_id, percent, completed, total, message)

    def log_failure(self, item_id: str, reason: str, details: dict = None) -> str:
        return log_failure(self.run_id, item_id, reason, details, root=self.run_dir)

    # ---- closing record ----
    def finish(self, status: str = "ok", summary: dict = None) -> str:
        record = {
            "command": self.command,
            "args": self.args,
            "config": self.flat,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "status": status,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.started)),
            "wall_seconds": round(time.time() - self.started, 3),
            "artifacts": dict(sorted(self.artifacts.items())),
            "progress": get_progress(self.run_id),
            "summary": summary or {},
        }
        path = os.path.join(self.run_dir, "run.json")
        atomic_write(path, (json.dumps(record, indent=2, sort_keys=True, default=str) + "\n").encode())
        return path
