"""Rooted phylogenies with branch lengths.

A tree is stored as parallel arrays indexed by node id: parent pointer,
branch length (length of the edge above each node), and label.  The root
has parent -1 and branch length 0.  Tips are nodes without children.

Newick support is limited to the plain dialect used by this package:
unquoted labels, decimal branch lengths, no comments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NewickParseError

# characters with structural meaning inside a Newick string
_NEWICK_SPECIALS = set("();,:")


class Phylogeny:
    """Rooted tree with branch lengths and unique node labels.

    Parameters
    ----------
    parent : sequence of int
        ``parent[i]`` is the node id of node ``i``'s parent, -1 for the root.
    branch_length : sequence of float
        Length of the edge above each node; ignored (forced to 0) at the root.
    labels : sequence of str
        One label per node.  Labels must be unique; tip labels must be
        non-empty.
    missing_length_warning : bool
        Set by the parser when any branch length was absent from the input
        and defaulted to zero.
    """

    def __init__(self, parent, branch_length, labels, missing_length_warning=False):
        self.parent = np.asarray(parent, dtype=np.int64).copy()
        self.branch_length = np.asarray(branch_length, dtype=float).copy()
        self.labels = [str(s) for s in labels]
        self.missing_length_warning = bool(missing_length_warning)
        self._index()

    def _index(self):
        n = self.parent.shape[0]
        if n == 0:
            raise ValueError("tree must have at least one node")
        if self.branch_length.shape != (n,) or len(self.labels) != n:
            raise ValueError("parent, branch_length and labels must have equal length")

        roots = np.flatnonzero(self.parent < 0)
        if roots.size != 1:
            raise ValueError(f"tree must have exactly one root, found {roots.size}")
        self.root = int(roots[0])
        self.branch_length[self.root] = 0.0
        if np.any(self.branch_length < 0):
            raise ValueError("branch lengths must be non-negative")
        if np.any(self.parent >= n):
            raise ValueError("parent id out of range")

        children: list[list[int]] = [[] for _ in range(n)]
        for i in range(n):
            p = int(self.parent[i])
            if p >= 0:
                children[p].append(i)
        self._children = children

        # preorder walk doubles as the cycle / connectivity check
        order = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(children[node]))
        if len(order) != n:
            raise ValueError("tree is not connected (cycle or orphan nodes)")
        self._preorder = np.array(order, dtype=np.int64)

        self.tip_flags = np.array([len(c) == 0 for c in children], dtype=bool)
        self.tips = np.flatnonzero(self.tip_flags)

        for t in self.tips:
            if not self.labels[t]:
                raise ValueError(f"tip node {t} has an empty label")
        self._label_index: dict[str, int] = {}
        for i, lab in enumerate(self.labels):
            if not lab:
                continue
            if lab in self._label_index:
                raise ValueError(f"duplicate node label {lab!r}")
            self._label_index[lab] = i

        # root distances and integer depths, in one preorder pass
        depth = np.zeros(n, dtype=float)
        level = np.zeros(n, dtype=np.int64)
        for node in self._preorder[1:]:
            p = self.parent[node]
            depth[node] = depth[p] + self.branch_length[node]
            level[node] = level[p] + 1
        self.root_distance = depth
        self._level = level

    # -- basic accessors -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.parent.shape[0]

    @property
    def n_tips(self) -> int:
        return int(self.tips.shape[0])

    @property
    def tip_labels(self) -> list[str]:
        return [self.labels[i] for i in self.tips]

    def children(self, node: int) -> list[int]:
        return self._children[node]

    def is_tip(self, node: int) -> bool:
        return bool(self.tip_flags[node])

    def preorder(self) -> np.ndarray:
        """Node ids, parents before children."""
        return self._preorder

    def node(self, label: str) -> int:
        """Node id carrying ``label``; KeyError when absent."""
        return self._label_index[label]

    def has_label(self, label: str) -> bool:
        return label in self._label_index

    def mrca(self, a: int, b: int) -> int:
        """Most recent common ancestor of nodes ``a`` and ``b``."""
        self._check_node(a)
        self._check_node(b)
        while self._level[a] > self._level[b]:
            a = int(self.parent[a])
        while self._level[b] > self._level[a]:
            b = int(self.parent[b])
        while a != b:
            a = int(self.parent[a])
            b = int(self.parent[b])
        return a

    def _check_node(self, node: int):
        if not 0 <= node < self.n_nodes:
            raise ValueError(f"node id {node} out of range")

    def __repr__(self):
        return f"Phylogeny(n_tips={self.n_tips}, n_nodes={self.n_nodes})"


# -- distances ----------------------------------------------------------


def patristic_distance(t: Phylogeny, a: int, b: int) -> float:
    """Sum of branch lengths along the path between two nodes."""
    m = t.mrca(a, b)
    return float(t.root_distance[a] + t.root_distance[b] - 2.0 * t.root_distance[m])


def patristic_matrix(t: Phylogeny, nodes=None) -> np.ndarray:
    """Symmetric matrix of path distances between the given nodes.

    ``nodes`` defaults to the tips in id order.
    """
    ids = t.tips if nodes is None else np.asarray(nodes, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("need at least one node")
    for i in ids:
        t._check_node(int(i))
    m = ids.shape[0]
    out = np.zeros((m, m), dtype=float)
    for i in range(m):
        for j in range(i + 1, m):
            d = patristic_distance(t, int(ids[i]), int(ids[j]))
            out[i, j] = d
            out[j, i] = d
    return out


def patristic_percentile(t: Phylogeny, q: float) -> float:
    """Percentile (linear interpolation) of the tip-pair distance set."""
    if not 0.0 <= q <= 100.0:
        raise ValueError("percentile must lie in [0, 100]")
    if t.n_tips < 2:
        raise ValueError("need at least two tips")
    d = patristic_matrix(t)
    iu = np.triu_indices(t.n_tips, k=1)
    return float(np.percentile(d[iu], q))


# -- Newick -------------------------------------------------------------


def parse_newick(text: str) -> Phylogeny:
    """Parse a single Newick tree.

    Unlabeled internal nodes receive a generated label ``anc_<i>`` where
    ``i`` is the node's preorder index.  A missing branch length defaults
    to zero and sets ``missing_length_warning`` on the result.  Structural
    problems raise :class:`NewickParseError` with the character offset.
    """
    s = text
    n_chars = len(s)
    pos = 0

    def skip_ws(p):
        while p < n_chars and s[p].isspace():
            p += 1
        return p

    def read_label(p):
        start = p
        while p < n_chars and (not s[p].isspace()) and s[p] not in _NEWICK_SPECIALS:
            p += 1
        return s[start:p], p

    parent: list[int] = []
    lengths: list[float | None] = []
    labels: list[str] = []
    label_pos: dict[str, int] = {}

    def new_node(par):
        parent.append(par)
        lengths.append(None)
        labels.append("")
        return len(parent) - 1

    pos = skip_ws(pos)
    if pos >= n_chars:
        raise NewickParseError("empty input", 0)

    root = new_node(-1)
    cur = root
    # nodes whose child list is still open
    open_stack: list[int] = []
    state = "node"  # expecting a node next, vs expecting , ) : or ;

    while True:
        pos = skip_ws(pos)
        if pos >= n_chars:
            raise NewickParseError("unexpected end of input, missing ';'", n_chars)
        ch = s[pos]

        if state == "node":
            if ch == "(":
                open_stack.append(cur)
                cur = new_node(cur)
                pos += 1
                continue
            if ch in "),;":
                raise NewickParseError(f"expected a node, found {ch!r}", pos)
            if ch == ":":
                # anonymous node with a length only
                state = "after"
                continue
            lab, pos = read_label(pos)
            if lab in label_pos:
                raise NewickParseError(f"duplicate label {lab!r}", pos - len(lab))
            label_pos[lab] = pos - len(lab)
            labels[cur] = lab
            state = "after"
            continue

        # state == "after": label and children of cur are settled
        if ch == ":":
            pos += 1
            pos = skip_ws(pos)
            start = pos
            while pos < n_chars and (not s[pos].isspace()) and s[pos] not in _NEWICK_SPECIALS:
                pos += 1
            token = s[start:pos]
            try:
                val = float(token)
            except ValueError:
                raise NewickParseError(f"invalid branch length {token!r}", start) from None
            if not np.isfinite(val) or val < 0:
                raise NewickParseError(f"invalid branch length {token!r}", start)
            if lengths[cur] is not None:
                raise NewickParseError("branch length given twice", start)
            lengths[cur] = val
            continue
        if ch == ",":
            if not open_stack:
                raise NewickParseError("',' outside parentheses", pos)
            cur = new_node(open_stack[-1])
            pos += 1
            state = "node"
            continue
        if ch == ")":
            if not open_stack:
                raise NewickParseError("unbalanced ')'", pos)
            cur = open_stack.pop()
            pos += 1
            # optional label, then optional length, handled by this state
            pos = skip_ws(pos)
            if pos < n_chars and s[pos] not in _NEWICK_SPECIALS and not s[pos].isspace():
                lab, pos = read_label(pos)
                if lab in label_pos:
                    raise NewickParseError(f"duplicate label {lab!r}", pos - len(lab))
                label_pos[lab] = pos - len(lab)
                labels[cur] = lab
            continue
        if ch == ";":
            if open_stack:
                raise NewickParseError("unbalanced '(', missing ')'", pos)
            pos += 1
            break
        if ch == "(":
            raise NewickParseError("unexpected '(' after a completed node", pos)
        raise NewickParseError(f"unexpected character {ch!r}", pos)

    pos = skip_ws(pos)
    if pos < n_chars:
        raise NewickParseError("trailing characters after ';'", pos)

    missing = any(
        lengths[i] is None for i in range(len(lengths)) if parent[i] >= 0
    )
    bl = [0.0 if v is None else v for v in lengths]

    # generated labels for unlabeled internal nodes, by preorder index
    order = _preorder_of(parent)
    pre_index = {node: i for i, node in enumerate(order)}
    has_children = [False] * len(parent)
    for i, p in enumerate(parent):
        if p >= 0:
            has_children[p] = True
    for i in range(len(parent)):
        if has_children[i] and not labels[i]:
            gen = f"anc_{pre_index[i]}"
            if gen in label_pos:
                raise NewickParseError(
                    f"generated label {gen!r} collides with an input label", label_pos[gen]
                )
            labels[i] = gen

    try:
        return Phylogeny(parent, bl, labels, missing_length_warning=missing)
    except ValueError as exc:
        raise NewickParseError(str(exc), 0) from None


def _preorder_of(parent) -> list[int]:
    n = len(parent)
    children: list[list[int]] = [[] for _ in range(n)]
    root = -1
    for i, p in enumerate(parent):
        if p < 0:
            root = i
        else:
            children[p].append(i)
    order = []
    stack = [root]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(reversed(children[node]))
    return order


def write_newick(t: Phylogeny) -> str:
    """Serialize to Newick; ``parse_newick`` round-trips the result.

    Internal labels that equal the generated form ``anc_<preorder-index>``
    for their own position are left out of the string; the parser
    regenerates them identically, so the round trip stays exact.
    """
    order = t.preorder()
    pre_index = {int(node): i for i, node in enumerate(order)}
    parts: list[str] = [""] * t.n_nodes
    for node in order[::-1]:
        node = int(node)
        lab = t.labels[node]
        if t.is_tip(node):
            body = lab
        else:
            if lab == f"anc_{pre_index[node]}":
                lab = ""
            inner = ",".join(parts[c] for c in t.children(node))
            body = f"({inner}){lab}"
        if node == t.root:
            parts[node] = f"{body};"
        else:
            parts[node] = f"{body}:{float(t.branch_length[node])!r}"
    return parts[t.root]


# -- branch length samplers ----------------------------------------------


class BranchLengthSampler:
    """Draws strictly positive branch lengths."""

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LogNormalLengths(BranchLengthSampler):
    """Lengths are exp of a normal draw; the package default."""

    mu: float = -1.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def sample(self, rng, size):
        return rng.lognormal(self.mu, self.sigma, size)


@dataclass(frozen=True)
class ConstantLength(BranchLengthSampler):
    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("constant branch length must be positive")

    def sample(self, rng, size):
        return np.full(size, self.value, dtype=float)


class EmpiricalLengths(BranchLengthSampler):
    """Resamples lengths uniformly from a newline-delimited file of values."""

    def __init__(self, path):
        self.path = str(path)
        vals = np.loadtxt(self.path, dtype=float, ndmin=1)
        if vals.size == 0:
            raise ValueError(f"no branch lengths in {self.path}")
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise ValueError(f"branch lengths in {self.path} must be finite and positive")
        self.values = vals

    def sample(self, rng, size):
        return rng.choice(self.values, size=size, replace=True)


# -- random trees and subtrees -------------------------------------------


def generate_random_tree(n_tips: int, sampler: BranchLengthSampler | None = None,
                         seed: int = 0) -> Phylogeny:
    """Random binary tree on ``n_tips`` tips.

    Topology grows by repeatedly splitting a uniformly chosen current tip
    (a Yule process).  Branch lengths are then drawn from ``sampler``, by
    default :class:`LogNormalLengths` with mu -1 and sigma 1.  Tips are
    labeled t1..tN in node id order, internal nodes anc_<preorder index>.
    """
    if n_tips < 2:
        raise ValueError("need at least two tips")
    if sampler is None:
        sampler = LogNormalLengths()
    rng = np.random.default_rng(seed)

    parent = [-1, 0, 0]
    open_tips = [1, 2]
    while len(open_tips) < n_tips:
        k = int(rng.integers(len(open_tips)))
        node = open_tips[k]
        a = len(parent)
        parent.append(node)
        parent.append(node)
        open_tips[k] = a
        open_tips.append(a + 1)

    n = len(parent)
    bl = sampler.sample(rng, n)
    bl[0] = 0.0

    has_children = [False] * n
    for i, p in enumerate(parent):
        if p >= 0:
            has_children[p] = True
    order = _preorder_of(parent)
    pre_index = {node: i for i, node in enumerate(order)}
    labels = [""] * n
    tip_counter = 0
    for i in range(n):
        if has_children[i]:
            labels[i] = f"anc_{pre_index[i]}"
        else:
            tip_counter += 1
            labels[i] = f"t{tip_counter}"
    return Phylogeny(parent, bl, labels)


def induced_subtree(t: Phylogeny, tips) -> Phylogeny:
    """Smallest tree connecting the chosen tips.

    The subtree is rooted at the most recent common ancestor of the chosen
    tips.  Internal nodes left with a single child are removed and their
    branch lengths summed, so patristic distances between the chosen tips
    are preserved exactly.  Labels carry over unchanged.
    """
    chosen = [int(i) for i in tips]
    if len(chosen) < 2:
        raise ValueError("need at least two tips")
    if len(set(chosen)) != len(chosen):
        raise ValueError("duplicate tip ids")
    for i in chosen:
        t._check_node(i)
        if not t.is_tip(i):
            raise ValueError(f"node {i} is not a tip")

    n = t.n_nodes
    counts = np.zeros(n, dtype=np.int64)
    counts[chosen] = 1
    for node in t.preorder()[::-1]:
        node = int(node)
        p = int(t.parent[node])
        if p >= 0:
            counts[p] += counts[node]
    total = len(chosen)

    # descend from the root to the common ancestor of all chosen tips
    lca = t.root
    while True:
        down = [c for c in t.children(lca) if counts[c] == total]
        if len(down) == 1 and counts[lca] == total:
            lca = down[0]
        else:
            break

    chosen_set = set(chosen)

    def retained(node):
        if node == lca or node in chosen_set:
            return True
        live = sum(1 for c in t.children(node) if counts[c] > 0)
        return live >= 2

    new_id: dict[int, int] = {}
    new_parent: list[int] = []
    new_bl: list[float] = []
    new_labels: list[str] = []

    # walk the original preorder restricted to the lca subtree so parents
    # are assigned before their retained descendants
    stack = [lca]
    while stack:
        node = stack.pop()
        if counts[node] == 0:
            continue
        if retained(node):
            if node == lca:
                par, dist = -1, 0.0
            else:
                dist = float(t.branch_length[node])
                up = int(t.parent[node])
                while up not in new_id:
                    dist += float(t.branch_length[up])
                    up = int(t.parent[up])
                par = new_id[up]
            new_id[node] = len(new_parent)
            new_parent.append(par)
            new_bl.append(dist)
            new_labels.append(t.labels[node])
        stack.extend(reversed(t.children(node)))

    return Phylogeny(new_parent, new_bl, new_labels)
