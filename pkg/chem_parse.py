# chem_parse.py
"""
Minimal SMILES reader for the molecule feature set (atomic number, chirality
tag, bond type, bond direction), a renderer for round trips, Bemis–Murcko
scaffold extraction and a canonical scaffold key for grouping.
"""
import hashlib
import logging
from collections import deque

import numpy as np

from graph_core import AttributedGraph, Vocab
from utils.errors import InvalidArgumentError, SmilesParseError

logger = logging.getLogger(__name__)

ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {sym: i + 1 for i, sym in enumerate(ELEMENTS)}

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "b", "c", "n", "o", "p", "s")

# Node slot 0: atomic number 1..118 stored as index 0..117, mask = 118.
# Node slot 1: chirality tag, mask = 4.
CHIRAL_UNSPECIFIED, CHIRAL_CW, CHIRAL_CCW, CHIRAL_OTHER = 0, 1, 2, 3
# Edge slot 0: bond type, self-loop = 4, mask = 5.
BOND_SINGLE, BOND_DOUBLE, BOND_TRIPLE, BOND_AROMATIC = 0, 1, 2, 3
# Edge slot 1: bond direction, self-loop = 3, mask = 4.
DIR_NONE, DIR_ENDUPRIGHT, DIR_ENDDOWNRIGHT = 0, 1, 2

MOLECULE_VOCAB = Vocab("molecule", node_sizes=(len(ELEMENTS) + 1, 5), edge_sizes=(6, 5))

BOND_SYMBOLS = {"-": (BOND_SINGLE, DIR_NONE), "=": (BOND_DOUBLE, DIR_NONE), "#": (BOND_TRIPLE, DIR_NONE),
                ":": (BOND_AROMATIC, DIR_NONE), "/": (BOND_SINGLE, DIR_ENDUPRIGHT),
                "\\": (BOND_SINGLE, DIR_ENDDOWNRIGHT)}

EMPTY_SCAFFOLD_KEY = "scaffold:empty"


class _Reader:
    """Single pass over the text; atoms, bonds and ring closures are collected
    as plain lists and turned into an AttributedGraph at the end."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms = []          # (atomic number, chirality, aromatic)
        self.bonds = {}          # (u, v) -> (type, direction)
        self.rings = {}          # ring number -> (atom, bond or None, offset)

    def fail(self, message: str, offset: int = None):
        raise SmilesParseError(message, self.pos if offset is None else offset)

    def peek(self, k: int = 0) -> str:
        i = self.pos + k
        return self.text[i] if i < len(self.text) else ""

    def read_bracket_atom(self):
        start = self.pos
        end = self.text.find("]", start)
        if end < 0:
            self.fail("unclosed bracket atom", start)
        body = self.text[start + 1:end]
        i = 0
        if body[:1].isdigit():
            self.fail("isotopes are not supported", start + 1)
        symbol = None
        for cand in sorted(AROMATIC_BRACKET, key=len, reverse=True):
            if body.startswith(cand):
                symbol, aromatic = cand.capitalize(), True
                break
        if symbol is None:
            two, one = body[:2], body[:1]
            if len(two) == 2 and two[1].islower() and two in ATOMIC_NUMBER:
                symbol = two
            elif one in ATOMIC_NUMBER:
                symbol = one
            else:
                self.fail(f"unknown element in [{body}]", start + 1)
            aromatic = False
        i = len(symbol)

        chirality = CHIRAL_UNSPECIFIED
        if body[i:i + 2] == "@@":
            chirality, i = CHIRAL_CW, i + 2
        elif body[i:i + 1] == "@":
            i += 1
            chirality = CHIRAL_CCW
            if body[i:i + 2] in ("TH", "AL", "SP", "TB", "OH"):
                chirality = CHIRAL_OTHER
                i += 2
                while i < len(body) and body[i].isdigit():
                    i += 1

        if body[i:i + 1] == "H":
            i += 1
            while i < len(body) and body[i].isdigit():
                i += 1

        if i < len(body) and body[i] in "+-":
            sign = body[i]
            i += 1
            if i < len(body) and body[i].isdigit():
                while i < len(body) and body[i].isdigit():
                    i += 1
            else:
                while i < len(body) and body[i] == sign:
                    i += 1
        if i != len(body):
            self.fail(f"invalid bracket atom syntax [{body}]", start + 1 + i)

        self.pos = end + 1
        return ATOMIC_NUMBER[symbol], chirality, aromatic

    def read_atom(self):
        ch = self.peek()
        if ch == "[":
            return self.read_bracket_atom()
        for sym in ORGANIC_SUBSET:
            if self.text.startswith(sym, self.pos):
                self.pos += len(sym)
                return ATOMIC_NUMBER[sym], CHIRAL_UNSPECIFIED, False
        if ch in AROMATIC_ORGANIC:
            self.pos += 1
            return ATOMIC_NUMBER[ch.upper()], CHIRAL_UNSPECIFIED, True
        return None

    def default_bond(self, u: int, v: int):
        if self.atoms[u][2] and self.atoms[v][2]:
            return BOND_AROMATIC, DIR_NONE
        return BOND_SINGLE, DIR_NONE

    def add_bond(self, u: int, v: int, bond, offset: int):
        key = (min(u, v), max(u, v))
        if u == v or key in self.bonds:
            self.fail("duplicate bond or self bond", offset)
        self.bonds[key] = bond if bond is not None else self.default_bond(u, v)

    def parse(self) -> AttributedGraph:
        if not self.text:
            self.fail("empty SMILES", 0)
        prev = None
        pending_bond = None
        bond_offset = 0
        stack = []
        while self.pos < len(self.text):
            ch = self.peek()
            start = self.pos
            if ch == "(":
                if prev is None or pending_bond is not None:
                    self.fail("branch without a preceding atom")
                stack.append(prev)
                self.pos += 1
            elif ch == ")":
                if not stack or pending_bond is not None:
                    self.fail("unbalanced ')'")
                prev = stack.pop()
                self.pos += 1
            elif ch in BOND_SYMBOLS:
                if prev is None or pending_bond is not None:
                    self.fail(f"unexpected bond '{ch}'")
                pending_bond, bond_offset = BOND_SYMBOLS[ch], start
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.fail("ring closure without a preceding atom")
                if ch == "%":
                    digits = self.text[self.pos + 1:self.pos + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        self.fail("ring number after '%' needs two digits")
                    number = int(digits)
                    self.pos += 3
                else:
                    number = int(ch)
                    self.pos += 1
                if number in self.rings:
                    other, bond, _ = self.rings.pop(number)
                    if bond is not None and pending_bond is not None and bond != pending_bond:
                        self.fail("conflicting ring closure bonds", start)
                    self.add_bond(other, prev, pending_bond or bond, start)
                else:
                    self.rings[number] = (prev, pending_bond, start)
                pending_bond = None
            elif ch in ".$":
                self.fail(f"'{ch}' is outside the supported SMILES subset")
            else:
                atom = self.read_atom()
                if atom is None:
                    self.fail(f"unexpected character '{ch}'")
                self.atoms.append(atom)
                idx = len(self.atoms) - 1
                if prev is not None:
                    self.add_bond(prev, idx, pending_bond, bond_offset)
                prev, pending_bond = idx, None

        if pending_bond is not None:
            self.fail("dangling bond at end of input", len(self.text))
        if stack:
            self.fail("unbalanced '('", len(self.text))
        if self.rings:
            self.fail(f"unclosed ring bond {sorted(self.rings)[0]}", len(self.text))

        edges = sorted(self.bonds)
        return AttributedGraph(
            num_nodes=len(self.atoms),
            node_attrs=[[z - 1, chir] for z, chir, _ in self.atoms],
            edges=edges,
            edge_attrs=[list(self.bonds[e]) for e in edges],
            vocab=MOLECULE_VOCAB,
            name=self.text,
        )


def parse_smiles(text: str) -> AttributedGraph:
    if any(ord(c) > 127 for c in text):
        raise SmilesParseError("non-ASCII character", next(i for i, c in enumerate(text) if ord(c) > 127))
    return _Reader(text.strip()).parse()


# --------------------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------------------
def _atom_token(z: int, chirality: int, aromatic: bool) -> str:
    sym = ELEMENTS[z - 1]
    if aromatic:
        sym = sym.lower()
    bare = (sym in AROMATIC_ORGANIC) if aromatic else (sym in ORGANIC_SUBSET)
    if chirality == CHIRAL_UNSPECIFIED and bare:
        return sym
    tag = {CHIRAL_UNSPECIFIED: "", CHIRAL_CW: "@@", CHIRAL_CCW: "@", CHIRAL_OTHER: "@SP1"}[chirality]
    return f"[{sym}{tag}]"


def _bond_token(bond, both_aromatic: bool) -> str:
    kind, direction = bond
    if direction == DIR_ENDUPRIGHT:
        return "/"
    if direction == DIR_ENDDOWNRIGHT:
        return "\\"
    if kind == BOND_AROMATIC:
        return "" if both_aromatic else ":"
    if kind == BOND_SINGLE:
        return "-" if both_aromatic else ""
    return {BOND_DOUBLE: "=", BOND_TRIPLE: "#"}[kind]


def render_smiles(g: AttributedGraph) -> str:
    """Depth-first rendering from node 0; parse(render(g)) is isomorphic to g."""
    if g.num_nodes == 0:
        return ""
    bonds = {(int(u), int(v)): tuple(int(x) for x in a) for (u, v), a in zip(g.edges, g.edge_attrs)}
    bond = lambda u, v: bonds[(min(u, v), max(u, v))]
    aromatic = [False] * g.num_nodes
    for (u, v), (kind, _) in bonds.items():
        if kind == BOND_AROMATIC:
            aromatic[u] = aromatic[v] = True

    # spanning tree first, so ring closures are known before emission
    order, parent, children = [], {0: None}, {i: [] for i in range(g.num_nodes)}
    stack = [0]
    seen = set()
    while stack:
        u = stack.pop()
        if u in seen:
            continue
        seen.add(u)
        order.append(u)
        if parent[u] is not None:
            children[parent[u]].append(u)
        for w in reversed(g.neighbors(u)[0].tolist()):
            if w not in seen:
                parent[w] = u
                stack.append(w)
    if len(seen) != g.num_nodes:
        raise InvalidArgumentError("cannot render a disconnected graph")
    rank = {u: i for i, u in enumerate(order)}
    closures = {u: [] for u in order}
    for (u, v) in bonds:
        if parent.get(v) != u and parent.get(u) != v:
            a, b = (u, v) if rank[u] < rank[v] else (v, u)
            closures[a].append((b, "open"))
            closures[b].append((a, "close"))

    free, assigned = list(range(1, 100)), {}

    def ring_label(n: int) -> str:
        return str(n) if n < 10 else f"%{n}"

    def emit(u: int) -> str:
        out = [_atom_token(int(g.node_attrs[u, 0]) + 1, int(g.node_attrs[u, 1]), aromatic[u])]
        for other, kind in sorted(closures[u], key=lambda t: rank[t[0]]):
            key = (min(u, other), max(u, other))
            if kind == "open":
                n = free.pop(0)
                assigned[key] = n
                out.append(_bond_token(bond(u, other), aromatic[u] and aromatic[other]) + ring_label(n))
            else:
                n = assigned.pop(key)
                free.append(n)
                free.sort()
                out.append(ring_label(n))
        kids = children[u]
        for i, w in enumerate(kids):
            piece = _bond_token(bond(u, w), aromatic[u] and aromatic[w]) + emit(w)
            out.append(piece if i == len(kids) - 1 else f"({piece})")
        return "".join(out)

    return emit(0)


# --------------------------------------------------------------------------------------
# Scaffolds
# --------------------------------------------------------------------------------------
def ring_edges(g: AttributedGraph) -> np.ndarray:
    """Boolean per edge: the endpoints stay connected once the edge is removed."""
    in_ring = np.zeros(g.num_edges, dtype=bool)
    for e, (u, v) in enumerate(g.edges.tolist()):
        seen, queue = {u}, deque([u])
        while queue and v not in seen:
            x = queue.popleft()
            for w, eid in zip(*[a.tolist() for a in g.neighbors(x)]):
                if eid != e and w not in seen:
                    seen.add(w)
                    queue.append(w)
        in_ring[e] = v in seen
    return in_ring


def murcko_scaffold(mol: AttributedGraph) -> AttributedGraph:
    """Ring systems plus linkers: prune non-ring atoms of degree <= 1 to a fixpoint."""
    in_ring_edge = ring_edges(mol)
    ring_atom = np.zeros(mol.num_nodes, dtype=bool)
    ring_atom[mol.edges[in_ring_edge].ravel()] = True

    alive = np.ones(mol.num_nodes, dtype=bool)
    degree = mol.degree().copy()
    queue = deque(i for i in range(mol.num_nodes) if degree[i] <= 1 and not ring_atom[i])
    while queue:
        u = queue.popleft()
        if not alive[u]:
            continue
        alive[u] = False
        for w in mol.neighbors(u)[0].tolist():
            if alive[w]:
                degree[w] -= 1
                if degree[w] <= 1 and not ring_atom[w]:
                    queue.append(w)

    keep = np.flatnonzero(alive)
    remap = {int(p): i for i, p in enumerate(keep)}
    mask = alive[mol.edges[:, 0]] & alive[mol.edges[:, 1]] if mol.num_edges else np.zeros(0, dtype=bool)
    edges = [[remap[int(u)], remap[int(v)]] for u, v in mol.edges[mask]]
    return AttributedGraph(
        num_nodes=len(keep),
        node_attrs=mol.node_attrs[keep],
        edges=edges,
        edge_attrs=mol.edge_attrs[mask],
        vocab=mol.vocab,
        name=mol.name,
    )


def canonical_key(g: AttributedGraph) -> str:
    """Isomorphism-invariant key from iterated neighborhood colour refinement.

    Isomorphic graphs always share a key, but colour refinement cannot
    separate every pair of non-isomorphic ones: regular-looking fused and
    linked ring systems such as decalin (C1CCC2CCCCC2C1) and bicyclopentyl
    (C1CCC(C1)C2CCCC2) get the same key. Such scaffolds then land in one split
    group. No two distinct scaffolds in data/corpus.csv collide.
    """
    if g.num_nodes == 0:
        return EMPTY_SCAFFOLD_KEY

    def compress(signatures):
        palette = {sig: i for i, sig in enumerate(sorted(set(signatures)))}
        return [palette[s] for s in signatures]

    adjacency = [[] for _ in range(g.num_nodes)]
    for (u, v), attrs in zip(g.edges.tolist(), g.edge_attrs.tolist()):
        adjacency[u].append((v, tuple(attrs)))
        adjacency[v].append((u, tuple(attrs)))

    colors = compress([tuple(row) for row in g.node_attrs.tolist()])
    for _ in range(g.num_nodes):
        colors = compress([
            (colors[v], tuple(sorted((colors[w], attrs) for w, attrs in adjacency[v])))
            for v in range(g.num_nodes)
        ])

    node_part = sorted((colors[v], tuple(g.node_attrs[v].tolist())) for v in range(g.num_nodes))
    edge_part = sorted((min(colors[u], colors[v]), max(colors[u], colors[v]), tuple(a))
                       for (u, v), a in zip(g.edges.tolist(), g.edge_attrs.tolist()))
    digest = hashlib.sha256(repr((node_part, edge_part)).encode()).hexdigest()
    return f"scaffold:{g.num_nodes}:{g.num_edges}:{digest[:32]}"


def scaffold_key_for_smiles(text: str) -> str:
    return canonical_key(murcko_scaffold(parse_smiles(text)))
