"""Molecular graphs from SMILES, atom/bond features, scaffolds and splits.

The parser covers the organic subset, bracket atoms, ring closures,
branches and dot-separated fragments. Stereo markers are accepted and
discarded; hydrogens stay implicit. Scaffolds are computed by pruning
non-ring side chains and serialized through a canonical writer so that
isomorphic scaffolds share one key string.
"""

from __future__ import annotations

import csv
import hashlib
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

BOND_ORDERS = ("single", "double", "triple", "aromatic")

# one-hot element vocabulary; the trailing slot absorbs anything else
ELEMENT_VOCAB = (
    "C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B",
    "Si", "Se", "As", "Na", "K", "Li", "Ca", "Mg", "Zn", "Fe",
    "Cu", "Mn", "Al", "Sn", "Hg", "Cr", "Pt", "other",
)
MAX_DEGREE = 5
CHARGE_RANGE = (-2, 2)
NODE_DIM = len(ELEMENT_VOCAB) + (MAX_DEGREE + 1) + 5 + 1  # 40
EDGE_DIM = len(BOND_ORDERS)

TOX21_TASKS = (
    "NR-AR", "NR-AR-LBD", "NR-AhR", "NR-Aromatase", "NR-ER", "NR-ER-LBD",
    "NR-PPAR-gamma", "SR-ARE", "SR-ATAD5", "SR-HSE", "SR-MMP", "SR-p53",
)

# default CSV column names per dataset
DATASET_COLUMNS = {
    "bace": ("mol", ("Class",)),
    "bbbp": ("smiles", ("p_np",)),
    "hiv": ("smiles", ("HIV_active",)),
    "tox21": ("smiles", TOX21_TASKS),
}


class SmilesError(DataError):
    """Parse failure; ``offset`` is the byte position of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class Atom:
    symbol: str           # title case; aromaticity carried separately
    charge: int = 0
    aromatic: bool = False
    h_count: int = 0      # explicit bracket count only


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: str

    def __post_init__(self):
        if self.order not in BOND_ORDERS:
            raise ValueError(f"bad bond order {self.order!r}")


@dataclass
class MoleculeGraph:
    """Undirected heavy-atom graph; no self-loops, no duplicate bonds."""

    atoms: list[Atom]
    bonds: list[Bond]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(len(self.atoms), dtype=np.int64)
        for b in self.bonds:
            deg[b.i] += 1
            deg[b.j] += 1
        return deg

    def adjacency(self) -> list[list[tuple[int, str]]]:
        adj: list[list[tuple[int, str]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.i].append((b.j, b.order))
            adj[b.j].append((b.i, b.order))
        for row in adj:
            row.sort()
        return adj


# ---------------------------------------------------------------------------
# SMILES parsing

_ORGANIC_TWO = ("Cl", "Br")
_ORGANIC_ONE = set("BCNOPSFI")
_AROMATIC_ORGANIC = set("bcnops")
_BRACKET_AROMATIC = {"b", "c", "n", "o", "p", "s", "se", "as"}
_BOND_CHARS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic",
               "/": "single", "\\": "single"}


def _default_order(a: Atom, b: Atom) -> str:
    return "aromatic" if a.aromatic and b.aromatic else "single"


def _parse_bracket(s: str, start: int) -> tuple[Atom, int]:
    """Parse one [...] atom starting at the '['; returns (atom, end index)."""
    end = s.find("]", start)
    if end < 0:
        raise SmilesError("unclosed bracket atom", start)
    body = s[start + 1:end]
    pos = 0

    def err(msg):
        raise SmilesError(msg, start + 1 + pos)

    while pos < len(body) and body[pos].isdigit():  # isotope, discarded
        pos += 1
    aromatic = False
    sym = ""
    if pos < len(body) and body[pos].isupper():
        sym = body[pos]
        pos += 1
        # uppercase + lowercase = a two-letter element symbol
        if pos < len(body) and body[pos].islower():
            sym += body[pos]
            pos += 1
    elif pos < len(body) and body[pos].islower():
        two = body[pos:pos + 2]
        if two in _BRACKET_AROMATIC:
            sym, pos, aromatic = two.capitalize(), pos + 2, True
        elif body[pos] in _BRACKET_AROMATIC:
            sym, pos, aromatic = body[pos].upper(), pos + 1, True
        else:
            err(f"unknown element token {body[pos]!r}")
    else:
        err("missing element symbol in bracket")
    while pos < len(body) and body[pos] == "@":  # chirality, discarded
        pos += 1
    h_count = 0
    if pos < len(body) and body[pos] == "H":
        pos += 1
        h_count = 1
        digits = ""
        while pos < len(body) and body[pos].isdigit():
            digits += body[pos]
            pos += 1
        if digits:
            h_count = int(digits)
    charge = 0
    if pos < len(body) and body[pos] in "+-":
        sign = 1 if body[pos] == "+" else -1
        mark = body[pos]
        pos += 1
        digits = ""
        while pos < len(body) and body[pos].isdigit():
            digits += body[pos]
            pos += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while pos < len(body) and body[pos] == mark:
                charge += sign
                pos += 1
    if pos < len(body) and body[pos] == ":":  # atom map, discarded
        pos += 1
        if pos >= len(body) or not body[pos].isdigit():
            err("atom map without number")
        while pos < len(body) and body[pos].isdigit():
            pos += 1
    if pos != len(body):
        err(f"unexpected character {body[pos]!r} in bracket atom")
    return Atom(sym, charge, aromatic, h_count), end


def parse_smiles(s: str) -> MoleculeGraph:
    """Parse a SMILES string into a MoleculeGraph.

    Dot-separated fragments stay in one graph as separate components.
    Raises SmilesError (a DataError) with a byte offset on malformed input.
    """
    if not s:
        raise SmilesError("empty SMILES string", 0)
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    seen_pairs: set[frozenset] = set()
    prev: Optional[int] = None
    pending: Optional[tuple[str, int]] = None  # (order, offset)
    stack: list[tuple[Optional[int], int]] = []  # (prev, '(' offset)
    rings: dict[int, tuple[int, Optional[str], int]] = {}  # digit -> (atom, order, offset)

    def add_bond(i: int, j: int, order: Optional[str], offset: int):
        if i == j:
            raise SmilesError("ring closure bonds an atom to itself", offset)
        pair = frozenset((i, j))
        if pair in seen_pairs:
            raise SmilesError("duplicate bond between the same atoms", offset)
        seen_pairs.add(pair)
        if order is None:
            order = _default_order(atoms[i], atoms[j])
        bonds.append(Bond(i, j, order))

    def attach(idx: int, offset: int):
        nonlocal prev, pending
        if prev is not None:
            order = pending[0] if pending else None
            add_bond(prev, idx, order, offset)
        pending = None
        prev = idx

    def close_ring(digit: int, offset: int):
        nonlocal pending
        if prev is None:
            raise SmilesError("ring digit before any atom", offset)
        here_order = pending[0] if pending else None
        pending = None
        if digit in rings:
            other, open_order, _ = rings.pop(digit)
            if open_order is not None and here_order is not None \
                    and open_order != here_order:
                raise SmilesError("conflicting bond orders on ring closure",
                                  offset)
            add_bond(other, prev, here_order or open_order, offset)
        else:
            rings[digit] = (prev, here_order, offset)

    i = 0
    n = len(s)
    while i < n:
        c = s[i]
        if c == "[":
            atom, end = _parse_bracket(s, i)
            atoms.append(atom)
            attach(len(atoms) - 1, i)
            i = end + 1
        elif s[i:i + 2] in _ORGANIC_TWO:
            atoms.append(Atom(s[i:i + 2]))
            attach(len(atoms) - 1, i)
            i += 2
        elif c in _ORGANIC_ONE:
            atoms.append(Atom(c))
            attach(len(atoms) - 1, i)
            i += 1
        elif c in _AROMATIC_ORGANIC:
            atoms.append(Atom(c.upper(), aromatic=True))
            attach(len(atoms) - 1, i)
            i += 1
        elif c in _BOND_CHARS:
            if pending is not None:
                raise SmilesError("two bond symbols in a row", i)
            if prev is None:
                raise SmilesError("bond symbol before any atom", i)
            pending = (_BOND_CHARS[c], i)
            i += 1
        elif c.isdigit():
            close_ring(int(c), i)
            i += 1
        elif c == "%":
            if i + 2 >= n or not s[i + 1:i + 3].isdigit():
                raise SmilesError("%% ring closure needs two digits", i)
            close_ring(int(s[i + 1:i + 3]), i)
            i += 3
        elif c == "(":
            if prev is None:
                raise SmilesError("branch before any atom", i)
            if pending is not None:
                raise SmilesError("bond symbol before '('", pending[1])
            stack.append((prev, i))
            i += 1
        elif c == ")":
            if not stack:
                raise SmilesError("unbalanced parentheses", i)
            if pending is not None:
                raise SmilesError("dangling bond before ')'", pending[1])
            prev = stack.pop()[0]
            i += 1
        elif c == ".":
            if pending is not None:
                raise SmilesError("bond symbol before '.'", pending[1])
            prev = None
            i += 1
        else:
            raise SmilesError(f"unexpected character {c!r}", i)
    if pending is not None:
        raise SmilesError("dangling bond at end of string", pending[1])
    if stack:
        raise SmilesError("unbalanced parentheses", stack[-1][1])
    if rings:
        digit, (_, _, offset) = min(rings.items(), key=lambda kv: kv[1][2])
        raise SmilesError(f"unclosed ring digit {digit}", offset)
    return MoleculeGraph(atoms, bonds)


# ---------------------------------------------------------------------------
# featurization


@dataclass
class FeaturizedGraph:
    node_x: np.ndarray       # (|V|, NODE_DIM)
    edge_x: np.ndarray       # (2|E|, EDGE_DIM)
    edge_index: np.ndarray   # (2|E|, 2) int64 columns (src, dst)
    graph_id: int = 0


def featurize(m: MoleculeGraph, graph_id: int = 0) -> FeaturizedGraph:
    """One-hot atom and bond features; both bond directions materialized.

    Directed edges come out sorted by (dst, src) so downstream segment
    reductions see a canonical order.
    """
    n = len(m.atoms)
    node_x = np.zeros((n, NODE_DIM), dtype=np.float64)
    deg = m.degrees()
    lo, hi = CHARGE_RANGE
    for idx, atom in enumerate(m.atoms):
        col = ELEMENT_VOCAB.index(atom.symbol) \
            if atom.symbol in ELEMENT_VOCAB else len(ELEMENT_VOCAB) - 1
        node_x[idx, col] = 1.0
        d = min(int(deg[idx]), MAX_DEGREE)
        node_x[idx, len(ELEMENT_VOCAB) + d] = 1.0
        q = min(max(atom.charge, lo), hi)
        node_x[idx, len(ELEMENT_VOCAB) + MAX_DEGREE + 1 + (q - lo)] = 1.0
        node_x[idx, NODE_DIM - 1] = 1.0 if atom.aromatic else 0.0
    pairs = []
    feats = []
    for b in m.bonds:
        row = np.zeros(EDGE_DIM, dtype=np.float64)
        row[BOND_ORDERS.index(b.order)] = 1.0
        pairs.append((b.i, b.j))
        feats.append(row)
        pairs.append((b.j, b.i))
        feats.append(row)
    if pairs:
        edge_index = np.array(pairs, dtype=np.int64)
        edge_x = np.stack(feats)
        key = np.lexsort((edge_index[:, 0], edge_index[:, 1]))
        edge_index = edge_index[key]
        edge_x = edge_x[key]
    else:
        edge_index = np.zeros((0, 2), dtype=np.int64)
        edge_x = np.zeros((0, EDGE_DIM), dtype=np.float64)
    return FeaturizedGraph(node_x, edge_x, edge_index, graph_id)


# ---------------------------------------------------------------------------
# canonical serialization

_CANON_BUDGET = 100_000


class _BudgetExceeded(Exception):
    pass


def _subgraph(m: MoleculeGraph, keep: Sequence[int]) -> MoleculeGraph:
    keep = sorted(keep)
    remap = {old: new for new, old in enumerate(keep)}
    atoms = [m.atoms[i] for i in keep]
    bonds = [Bond(remap[b.i], remap[b.j], b.order)
             for b in m.bonds if b.i in remap and b.j in remap]
    return MoleculeGraph(atoms, bonds)


def _components(m: MoleculeGraph) -> list[list[int]]:
    adj = m.adjacency()
    seen = [False] * len(m.atoms)
    comps = []
    for start in range(len(m.atoms)):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        frontier = [start]
        while frontier:
            u = frontier.pop()
            for v, _ in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    frontier.append(v)
        comps.append(sorted(comp))
    return comps


def _wl_colors(g: MoleculeGraph) -> list[int]:
    """Iterative neighborhood refinement; returns a stable color per atom."""
    adj = g.adjacency()
    deg = g.degrees()
    keys = [
        (a.symbol, a.charge, a.aromatic, int(deg[i]),
         tuple(sorted(o for _, o in adj[i])))
        for i, a in enumerate(g.atoms)
    ]
    rank = {k: r for r, k in enumerate(sorted(set(keys)))}
    colors = [rank[k] for k in keys]
    while True:
        keys = [
            (colors[i], tuple(sorted((o, colors[j]) for j, o in adj[i])))
            for i in range(len(g.atoms))
        ]
        rank = {k: r for r, k in enumerate(sorted(set(keys)))}
        new = [rank[k] for k in keys]
        if len(set(new)) == len(set(colors)):
            return new
        colors = new


_WRITABLE_PLAIN = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
_WRITABLE_AROMATIC = {"B", "C", "N", "O", "P", "S"}


def _atom_token(a: Atom) -> str:
    sym = a.symbol.lower() if a.aromatic else a.symbol
    plain = a.charge == 0 and (
        (a.aromatic and a.symbol in _WRITABLE_AROMATIC)
        or (not a.aromatic and a.symbol in _WRITABLE_PLAIN))
    if plain:
        return sym
    if a.charge == 0:
        q = ""
    elif a.charge == 1:
        q = "+"
    elif a.charge == -1:
        q = "-"
    else:
        q = f"{a.charge:+d}"
    return f"[{sym}{q}]"


def _bond_token(order: str, a: Atom, b: Atom) -> str:
    both = a.aromatic and b.aromatic
    if order == "single":
        return "-" if both else ""
    if order == "aromatic":
        return "" if both else ":"
    return "=" if order == "double" else "#"


def _ring_digit(k: int) -> str:
    if k <= 9:
        return str(k)
    if k <= 99:
        return f"%{k:02d}"
    raise _BudgetExceeded  # pathological ring count, fall back to hashing


def _canon_component(g: MoleculeGraph, budget: list[int]) -> str:
    n = len(g.atoms)
    if n == 1:
        return _atom_token(g.atoms[0])
    adj = g.adjacency()
    colors = _wl_colors(g)
    cmin = min(colors[i] for i in range(n))
    roots = [i for i in range(n) if colors[i] == cmin]

    visited = [False] * n
    disc = [-1] * n
    children: list[list[tuple[int, str]]] = [[] for _ in range(n)]
    # ring marks: per atom, list of (closure id, order, open end flag, other)
    marks: list[list[tuple[int, str, bool, int]]] = [[] for _ in range(n)]
    used: set[frozenset] = set()
    state = {"clock": 0, "closures": 0}
    best: list[Optional[str]] = [None]

    def assemble(u: int) -> str:
        out = [_atom_token(g.atoms[u])]
        for cid, order, is_open, other in marks[u]:
            tok = _bond_token(order, g.atoms[u], g.atoms[other]) if is_open else ""
            out.append(tok + _ring_digit(cid + 1))
        kids = children[u]
        for pos, (v, order) in enumerate(kids):
            inner = _bond_token(order, g.atoms[u], g.atoms[v]) + assemble(v)
            out.append(inner if pos == len(kids) - 1 else f"({inner})")
        return "".join(out)

    def enter(u: int) -> list:
        """Mark u visited, record ring closures found here; return undo log."""
        undo: list = []
        visited[u] = True
        disc[u] = state["clock"]
        state["clock"] += 1
        undo.append(("visit", u))
        back = sorted(
            ((disc[v], v, order) for v, order in adj[u]
             if visited[v] and frozenset((u, v)) not in used),
            key=lambda t: t[0])
        for _, v, order in back:
            used.add(frozenset((u, v)))
            cid = state["closures"]
            state["closures"] += 1
            marks[v].append((cid, order, True, u))
            marks[u].append((cid, order, False, v))
            undo.append(("ring", u, v))
        return undo

    def undo_all(undo: list):
        for entry in reversed(undo):
            if entry[0] == "visit":
                visited[entry[1]] = False
                state["clock"] -= 1
            else:
                _, u, v = entry
                used.discard(frozenset((u, v)))
                marks[v].pop()
                marks[u].pop()
                state["closures"] -= 1

    def step(path: list[int], root: int):
        budget[0] -= 1
        if budget[0] <= 0:
            raise _BudgetExceeded
        if not path:
            s = assemble(root)
            if best[0] is None or s < best[0]:
                best[0] = s
            return
        u = path[-1]
        unvis = sorted({v for v, _ in adj[u] if not visited[v]})
        if not unvis:
            tail = path.pop()
            step(path, root)
            path.append(tail)
            return
        pick = min(colors[v] for v in unvis)
        for v in unvis:
            if colors[v] != pick:
                continue
            order = next(o for w, o in adj[u] if w == v)
            used.add(frozenset((u, v)))  # tree bond, not a ring closure
            undo = enter(v)
            children[u].append((v, order))
            path.append(v)
            step(path, root)
            path.pop()
            children[u].pop()
            undo_all(undo)
            used.discard(frozenset((u, v)))

    old_limit = sys.getrecursionlimit()
    if old_limit < 4 * n + 200:
        sys.setrecursionlimit(4 * n + 200)
    for root in roots:
        undo = enter(root)
        step([root], root)
        undo_all(undo)
    return best[0]


def _wl_fingerprint(m: MoleculeGraph) -> str:
    colors = _wl_colors(m)
    atom_part = sorted(
        (colors[i], a.symbol, a.charge, a.aromatic)
        for i, a in enumerate(m.atoms))
    bond_part = sorted(
        (min(colors[b.i], colors[b.j]), max(colors[b.i], colors[b.j]), b.order)
        for b in m.bonds)
    digest = hashlib.sha256(repr((atom_part, bond_part)).encode()).hexdigest()
    return f"wl:{len(m.atoms)}:{len(m.bonds)}:{digest[:32]}"


def canonical_form(m: MoleculeGraph) -> str:
    """Deterministic, atom-order-independent serialization of a graph.

    Components are canonicalized separately, sorted, and joined with dots.
    Ties in the refinement coloring are resolved by trying every tied root
    and DFS continuation and keeping the lexicographically smallest string.
    Graphs symmetric enough to exhaust the search budget fall back to a
    refinement-hash key (still order-independent, but not parseable).
    """
    if not m.atoms:
        return ""
    budget = [_CANON_BUDGET]
    try:
        parts = sorted(_canon_component(_subgraph(m, comp), budget)
                       for comp in _components(m))
        return ".".join(parts)
    except _BudgetExceeded:
        return _wl_fingerprint(m)


# ---------------------------------------------------------------------------
# scaffolds


def murcko_scaffold(m: MoleculeGraph) -> str:
    """Ring-and-linker scaffold key; acyclic molecules give "".

    Atoms of degree 1 or 0 (never part of a ring) are deleted repeatedly
    until a fixed point; what survives is exactly the rings plus the paths
    connecting them.
    """
    keep = set(range(len(m.atoms)))
    adj = {i: set() for i in keep}
    for b in m.bonds:
        adj[b.i].add(b.j)
        adj[b.j].add(b.i)
    while True:
        prune = [i for i in keep if len(adj[i]) <= 1]
        if not prune:
            break
        for i in prune:
            for j in adj[i]:
                adj[j].discard(i)
            adj[i].clear()
            keep.discard(i)
    if not keep:
        return ""
    return canonical_form(_subgraph(m, keep))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class LoadReport:
    n_rows: int = 0
    n_kept: int = 0
    n_parse_failures: int = 0
    n_all_missing: int = 0


@dataclass
class LabeledDataset:
    name: str
    smiles: list[str]
    labels: np.ndarray          # (N, T) float64, NaN where missing
    task_names: tuple[str, ...]
    report: LoadReport = field(default_factory=LoadReport)

    def __len__(self) -> int:
        return len(self.smiles)

    @property
    def n_tasks(self) -> int:
        return int(self.labels.shape[1])


def _parse_label(cell: str, path: str, row: int, col: str) -> float:
    cell = cell.strip()
    if cell == "":
        return np.nan
    try:
        v = float(cell)
    except ValueError:
        raise DataError(
            f"{path}: row {row} column {col!r}: label {cell!r} "
            "is not 0, 1 or empty") from None
    if v not in (0.0, 1.0):
        raise DataError(
            f"{path}: row {row} column {col!r}: label {cell!r} "
            "is not 0, 1 or empty")
    return v


def load_dataset(path: str, smiles_col: str, label_cols: Sequence[str],
                 name: str = "") -> LabeledDataset:
    """Load a CSV of SMILES plus binary labels (empty cell = missing).

    Rows whose SMILES fail to parse, and rows with every label missing,
    are dropped and counted in the attached report.
    """
    label_cols = tuple(label_cols)
    report = LoadReport()
    smiles: list[str] = []
    rows: list[list[float]] = []
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read dataset file {path}: {e}") from None
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for col in (smiles_col, *label_cols):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}; "
                                f"header has {header}")
        for lineno, record in enumerate(reader, start=2):
            report.n_rows += 1
            values = [_parse_label(record[c] or "", path, lineno, c)
                      for c in label_cols]
            if all(np.isnan(v) for v in values):
                report.n_all_missing += 1
                continue
            raw = (record[smiles_col] or "").strip()
            try:
                parse_smiles(raw)
            except SmilesError:
                report.n_parse_failures += 1
                continue
            smiles.append(raw)
            rows.append(values)
    report.n_kept = len(smiles)
    labels = np.array(rows, dtype=np.float64).reshape(len(smiles),
                                                      len(label_cols))
    return LabeledDataset(name or path, smiles, labels, label_cols, report)


# ---------------------------------------------------------------------------
# scaffold split


@dataclass
class ScaffoldSplit:
    train: np.ndarray           # int64 indices, ascending
    valid: np.ndarray
    test: np.ndarray
    keys: list[str]             # scaffold key per dataset index
    seed: int
    quotas: tuple[int, int, int]
    overrun: int                # molecules placed in train past its quota
    warnings: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "sizes": [int(len(self.train)), int(len(self.valid)),
                      int(len(self.test))],
            "quotas": list(self.quotas),
            "n_scaffolds": len(set(self.keys)),
            "overrun": self.overrun,
            "warnings": list(self.warnings),
        }


def scaffold_split(ds: LabeledDataset,
                   ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                   seed: int = 0) -> ScaffoldSplit:
    """Group molecules by scaffold key and deal groups into train/valid/test.

    Groups are ordered by (size descending, key ascending); a seeded shuffle
    is applied within each run of equal-size groups, so the seed changes
    membership without ever letting one scaffold straddle two sets. Each
    group goes to the first of train, valid, test still under its quota;
    when all are full the group lands in train and counts as overrun.
    """
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    keys = [murcko_scaffold(parse_smiles(s)) for s in ds.smiles]
    groups: dict[str, list[int]] = {}
    for idx, key in enumerate(keys):
        groups.setdefault(key, []).append(idx)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    rng = np.random.default_rng(seed)
    start = 0
    while start < len(ordered):
        stop = start
        while stop < len(ordered) \
                and len(ordered[stop][1]) == len(ordered[start][1]):
            stop += 1
        if stop - start > 1:
            run = ordered[start:stop]
            perm = rng.permutation(stop - start)
            ordered[start:stop] = [run[p] for p in perm]
        start = stop
    n = len(ds)
    quotas = tuple(int(round(r * n)) for r in ratios)
    sets: tuple[list[int], ...] = ([], [], [])
    overrun = 0
    for _, members in ordered:
        placed = False
        for k in range(3):
            if len(sets[k]) < quotas[k]:
                sets[k].extend(members)
                placed = True
                break
        if not placed:
            sets[0].extend(members)
            overrun += len(members)
    warnings = []
    if not sets[1]:
        warnings.append("validation set is empty")
    if not sets[2]:
        warnings.append("test set is empty")
    if overrun:
        warnings.append(f"{overrun} molecules overran the train quota")
    return ScaffoldSplit(
        train=np.array(sorted(sets[0]), dtype=np.int64),
        valid=np.array(sorted(sets[1]), dtype=np.int64),
        test=np.array(sorted(sets[2]), dtype=np.int64),
        keys=keys,
        seed=seed,
        quotas=quotas,
        overrun=overrun,
        warnings=warnings,
    )
