# errors.py
import json, os, time


class PregraphError(Exception):
    """Base class; `kind` and `exit_code` drive the CLI's one-line error report."""
    kind = "error"
    exit_code = 1


class InvalidArgumentError(PregraphError, ValueError):
    kind = "invalid_argument"
    exit_code = 1


class ConfigurationError(PregraphError):
    kind = "configuration"
    exit_code = 1


class UsageError(PregraphError):
    kind = "usage"
    exit_code = 1


class DataError(PregraphError):
    kind = "data"
    exit_code = 2


class SmilesParseError(DataError):
    kind = "smiles_parse"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EmptyInputError(DataError):
    kind = "empty_input"


class LeakageError(DataError):
    kind = "leakage"


class UndefinedMetricError(DataError):
    kind = "undefined_metric"


class CheckpointError(DataError):
    kind = "checkpoint"


class VersionMismatchError(CheckpointError):
    kind = "version_mismatch"


class HashMismatchError(CheckpointError):
    kind = "hash_mismatch"


class ShapeMismatchError(CheckpointError):
    kind = "shape_mismatch"


class DivergenceError(PregraphError):
    kind = "divergence"
    exit_code = 3


def log_failure(run_id: str, item_id: str, reason: str, details: dict = None, root: str = "."):
    """Append one failure record to <root>/fail_logs/<run_id>.jsonl and keep going."""
    folder = os.path.join(root, "fail_logs")
    os.makedirs(folder, exist_ok=True)
    path = os.path.join(folder, f"{run_id}.jsonl")
    with open(path, "a") as f:
        f.write(json.dumps({
            "ts": int(time.time()),
            "item_id": str(item_id),
            "reason": reason,
            "details": details or {}
        }) + "\n")
    return path
