import threading
import json

# In-memory run progress: run key -> JSON record {"message", "percent", "meta"}
_progress_store = {}
_progress_lock = threading.Lock()

IDLE = {"message": "pending", "percent": 0, "meta": {}}


def get_progress(run_key: str) -> dict:
    with _progress_lock:
        value = _progress_store.get(run_key)
        if value:
            return json.loads(value)
    return json.loads(json.dumps(IDLE))


def merge_progress(run_key: str, message: str, percent: float = None, meta: dict = None) -> dict:
    """Update message and meta in one locked step; percent never goes backwards."""
    with _progress_lock:
        value = _progress_store.get(run_key)
        current = json.loads(value) if value else json.loads(json.dumps(IDLE))
        if percent is not None:
            current["percent"] = max(current.get("percent", 0), min(100, round(percent, 2)))
        current["message"] = message
        current["meta"] = {**current.get("meta", {}), **(meta or {})}
        _progress_store[run_key] = json.dumps(current, default=str)
    return current


def delete_progress(run_key: str):
    with _progress_lock:
        _progress_store.pop(run_key, None)
