# validators.py
import numpy as np

LABEL_VALUES = (-1, 0, 1)   # missing / negative / positive


def _attrs_ok(attrs: np.ndarray, sizes) -> bool:
    if attrs.size == 0:
        return True
    if attrs.ndim != 2 or attrs.shape[1] != len(sizes):
        return False
    return bool((attrs >= 0).all() and (attrs < np.asarray(sizes)).all())


def validate_graph(num_nodes, node_attrs, edges, edge_attrs, vocab, center=None, labels=None) -> dict:
    """Return {'ok': bool, 'problems': {field: reason}}"""
    problems = {}
    if num_nodes < 0:
        problems["num_nodes"] = "negative"
    if node_attrs.shape[0] != num_nodes:
        problems["node_attrs"] = "row_count"
    elif not _attrs_ok(node_attrs, vocab.node_sizes):
        problems["node_attrs"] = "out_of_vocab"

    if len(edges):
        if edges.min() < 0 or edges.max() >= num_nodes:
            problems["edges"] = "endpoint_out_of_range"
        elif (edges[:, 0] == edges[:, 1]).any():
            problems["edges"] = "stored_self_loop"
        else:
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            if len(set(zip(lo.tolist(), hi.tolist()))) != len(edges):
                problems["edges"] = "duplicate_edge"
    if edge_attrs.shape[0] != len(edges):
        problems["edge_attrs"] = "row_count"
    elif not _attrs_ok(edge_attrs, vocab.edge_sizes):
        problems["edge_attrs"] = "out_of_vocab"

    if center is not None and not (0 <= center < num_nodes):
        problems["center"] = "out_of_range"
    if labels is not None and not np.isin(labels, LABEL_VALUES).all():
        problems["labels"] = "not_ternary"
    return {"ok": len(problems) == 0, "problems": problems}
