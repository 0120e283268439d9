"""Discourse trees, split-decision sequences and Parseval scoring."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

NUCLEARITY = ("NN", "NS", "SN")
HEIGHT_BUCKETS = ("1", "2", "3", "4", "5", "6", "7", ">=8")
EDU_BUCKETS = ((1, 5), (6, 10), (11, 15), (16, 20), (21, 25), (26, 30))
METRICS = ("bare", "nuc", "rel", "full")


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class Leaf:
    edu: int


@dataclass(frozen=True)
class Node:
    """Internal node.  ``nuclearity`` is NN/NS/SN for binary nodes; n-ary
    nodes may carry one N/S letter per child instead."""

    children: tuple
    nuclearity: str
    relation: str | None = None

    @property
    def left(self):
        return self.children[0]

    @property
    def right(self):
        return self.children[-1]

    @property
    def is_binary(self) -> bool:
        return len(self.children) == 2


DiscourseTree = Union[Leaf, Node]


def binary(left, right, nuclearity: str, relation: str | None = None) -> Node:
    return Node((left, right), nuclearity, relation)


@dataclass(frozen=True)
class SplitDecision:
    left_boundary: int
    right_boundary: int
    split: int
    nuclearity: str | None = None
    relation: str | None = None

    def __post_init__(self):
        if not self.left_boundary < self.split < self.right_boundary:
            raise TreeError(f"split {self.split} not strictly inside ({self.left_boundary}, {self.right_boundary})")

    @property
    def span(self) -> tuple:
        return (self.left_boundary, self.right_boundary)


def leaves(t: DiscourseTree) -> list:
    out, stack = [], [t]
    while stack:
        n = stack.pop()
        if isinstance(n, Leaf):
            out.append(n.edu)
        else:
            stack.extend(reversed(n.children))
    return out


def n_leaves(t: DiscourseTree) -> int:
    return len(leaves(t))


def internal_nodes(t: DiscourseTree) -> list:
    """Internal nodes in pre-order, each as ``(start, end, node)`` with an
    exclusive end (EDU boundaries)."""
    out = []

    def walk(n, start):
        if isinstance(n, Leaf):
            return start + 1
        entry = [start, None, n]
        out.append(entry)
        pos = start
        for c in n.children:
            pos = walk(c, pos)
        entry[1] = pos
        return pos

    walk(t, 0)
    return [tuple(e) for e in out]


def height(t: DiscourseTree) -> int:
    if isinstance(t, Leaf):
        return 0
    return 1 + max(height(c) for c in t.children)


def validate(t: DiscourseTree, require_binary: bool = False, require_labels: bool = False) -> int:
    """Check leaf order 0..N-1 and node shapes; returns N."""
    found = leaves(t)
    if found != list(range(len(found))):
        raise TreeError(f"leaves must read 0..{len(found) - 1} left to right, got {found}")
    for start, end, node in internal_nodes(t):
        k = len(node.children)
        if k < 2:
            raise TreeError(f"node over ({start}, {end}) has {k} child(ren)")
        if require_binary and k != 2:
            raise TreeError(f"node over ({start}, {end}) is not binary")
        nuc = node.nuclearity
        if k == 2 and nuc not in NUCLEARITY:
            raise TreeError(f"node over ({start}, {end}) has nuclearity {nuc!r}")
        if k > 2 and not (nuc in NUCLEARITY or (len(nuc) == k and set(nuc) <= {"N", "S"} and "N" in nuc)):
            raise TreeError(f"{k}-ary node over ({start}, {end}) has nuclearity {nuc!r}")
        if require_labels and not node.relation:
            raise TreeError(f"node over ({start}, {end}) has no relation label")
    return len(found)


def _child_roles(nuc: str, k: int) -> str:
    if len(nuc) == k:
        return nuc
    if nuc == "NN":
        return "N" * k
    if nuc == "NS":
        return "N" + "S" * (k - 1)
    if nuc == "SN":
        return "S" * (k - 1) + "N"
    raise TreeError(f"cannot expand nuclearity {nuc!r} over {k} children")


def binarize_right(t: DiscourseTree) -> DiscourseTree:
    """Right-branching binarisation: children c1..ck become c1 over (c2 over (... ck)).

    Introduced nodes keep the original relation.  Nuclearity follows the
    per-child roles: the left child keeps its own role and the right group is
    a nucleus iff it contains one (an all-satellite group is labelled NN).
    """
    if isinstance(t, Leaf):
        return t
    validate(t)
    return _binarize(t)


def _binarize(t):
    if isinstance(t, Leaf):
        return t
    kids = [_binarize(c) for c in t.children]
    if len(kids) == 2:
        return Node(tuple(kids), t.nuclearity, t.relation)
    roles = _child_roles(t.nuclearity, len(kids))
    node = kids[-1]
    for i in range(len(kids) - 2, -1, -1):
        rest = roles[i + 1:]
        if i == len(kids) - 2:
            right_role = rest
        else:
            right_role = "N" if "N" in rest else "S"
        label = roles[i] + right_role
        if label == "SS":
            label = "NN"
        node = Node((kids[i], node), label, t.relation)
    return node


def tree_to_decisions(t: DiscourseTree) -> list:
    """Split decisions in pre-order, left span before right span."""
    out = []
    for start, end, node in internal_nodes(t):
        if not node.is_binary:
            raise TreeError(f"node over ({start}, {end}) is not binary")
        split = start + n_leaves(node.left)
        out.append(SplitDecision(start, end, split, node.nuclearity, node.relation))
    return out


def decisions_to_tree(decisions: Sequence[SplitDecision], n_edus: int) -> DiscourseTree:
    """Rebuild a binary tree, checking that the decisions partition (0, n_edus)
    recursively in the order the stack decoder emits them."""
    if n_edus < 1:
        raise TreeError("a tree needs at least one EDU")
    if n_edus == 1:
        if decisions:
            raise TreeError("single-EDU tree takes no decisions")
        return Leaf(0)
    pending = [(0, n_edus)]
    by_span = {}
    for i, d in enumerate(decisions):
        if not pending:
            raise TreeError(f"decision {i} over {d.span} after the partition was complete")
        frame = pending.pop()
        if d.span != frame:
            raise TreeError(f"decision {i} covers {d.span}, expected span {frame}")
        l, m, r = d.left_boundary, d.split, d.right_boundary
        if r - m >= 2:
            pending.append((m, r))
        if m - l >= 2:
            pending.append((l, m))
        by_span[frame] = d
    if pending:
        raise TreeError(f"no decision for span {pending[-1]}")

    def build(l, r):
        if r - l == 1:
            return Leaf(l)
        d = by_span[(l, r)]
        return Node((build(l, d.split), build(d.split, r)), d.nuclearity, d.relation)

    return build(0, n_edus)


def right_branching(n: int, nuclearity="NS", relation="rel") -> DiscourseTree:
    t = Leaf(n - 1)
    for i in range(n - 2, -1, -1):
        t = binary(Leaf(i), t, nuclearity, relation)
    return t


def left_branching(n: int, nuclearity="NS", relation="rel") -> DiscourseTree:
    t = Leaf(0)
    for i in range(1, n):
        t = binary(t, Leaf(i), nuclearity, relation)
    return t


def all_shapes(n: int, start: int = 0) -> list:
    """Every binary tree shape over leaves start..start+n-1 (Catalan(n-1) of them)."""
    if n == 1:
        return [Leaf(start)]
    out = []
    for k in range(1, n):
        for left in all_shapes(k, start):
            for right in all_shapes(n - k, start + k):
                out.append(binary(left, right, "NS", "rel"))
    return out


def shape_key(t: DiscourseTree) -> str:
    if isinstance(t, Leaf):
        return "*"
    return "(" + " ".join(shape_key(c) for c in t.children) + ")"


# --- Parseval ---------------------------------------------------------------

@dataclass
class TreeCounts:
    """Per-tree Parseval counts over non-root internal nodes."""

    bare: int = 0
    nuc: int = 0
    rel: int = 0
    full: int = 0
    gold: int = 0
    pred: int = 0
    n_edus: int = 0
    # per-node details for the breakdown tables
    gold_nodes: list = field(default_factory=list)   # (height, nuclearity, matched flags dict)
    pred_nuclearity: list = field(default_factory=list)

    def matched(self, metric: str) -> int:
        return getattr(self, metric)


def _spans(t: DiscourseTree) -> dict:
    """Non-root internal spans, keyed by inclusive (first_edu, last_edu)."""
    out = {}
    for start, end, node in internal_nodes(t):
        if start == 0 and end == n_leaves(t):
            continue
        out[(start, end - 1)] = node
    return out


def parseval(pred: DiscourseTree, gold: DiscourseTree) -> TreeCounts:
    """Standard Parseval counts, root span excluded.

    A span matches on ``nuc`` (``rel``) when the span and its nuclearity
    (relation) agree; ``full`` requires span, nuclearity and relation.
    """
    n = n_leaves(gold)
    if n_leaves(pred) != n:
        raise TreeError(f"leaf count mismatch: predicted {n_leaves(pred)}, gold {n}")
    ps, gs = _spans(pred), _spans(gold)
    counts = TreeCounts(gold=len(gs), pred=len(ps), n_edus=n)
    for span, g in gs.items():
        p = ps.get(span)
        flags = {
            "bare": p is not None,
            "nuc": p is not None and p.nuclearity == g.nuclearity,
            "rel": p is not None and p.relation == g.relation,
        }
        flags["full"] = flags["nuc"] and flags["rel"]
        for k, v in flags.items():
            if v:
                setattr(counts, k, getattr(counts, k) + 1)
        counts.gold_nodes.append((height(g), g.nuclearity, flags))
    counts.pred_nuclearity = [p.nuclearity for p in ps.values()]
    return counts


def _f1(matched: int, pred: int, gold: int) -> float:
    if pred + gold == 0:
        return 100.0  # nothing to get wrong
    return 200.0 * matched / (pred + gold)


@dataclass
class EvalReport:
    micro: dict
    macro: dict
    by_height: dict        # bucket -> {"gold": n, metric: matched}
    by_nuclearity: dict    # class -> {"gold", "pred", "matched", "f1"}
    by_edu_count: dict     # "a-b" -> {"trees", "gold", metric f1 ...}
    n_trees: int
    n_spans: int

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "n_spans": self.n_spans,
            "micro": self.micro,
            "macro": self.macro,
            "by_height": self.by_height,
            "by_nuclearity": self.by_nuclearity,
            "by_edu_count": self.by_edu_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"trees: {self.n_trees}   scored spans: {self.n_spans}", ""]
        lines.append(f"{'':8}" + "".join(f"{m:>8}" for m in METRICS))
        for name, scores in (("micro", self.micro), ("macro", self.macro)):
            lines.append(f"{name:8}" + "".join(f"{scores[m]:8.1f}" for m in METRICS))
        lines += ["", "by gold node height (matched / gold)"]
        lines.append(f"{'height':8}{'gold':>6}" + "".join(f"{m:>6}" for m in METRICS))
        for b in HEIGHT_BUCKETS:
            row = self.by_height[b]
            lines.append(f"{b:8}{row['gold']:6d}" + "".join(f"{row[m]:6d}" for m in METRICS))
        lines += ["", "nuclearity F1 by class"]
        lines.append("".join(f"{c:>8}" for c in NUCLEARITY))
        lines.append("".join(f"{self.by_nuclearity[c]['f1']:8.1f}" for c in NUCLEARITY))
        lines += ["", "micro F1 by EDU count"]
        lines.append(f"{'edus':8}{'trees':>6}" + "".join(f"{m:>8}" for m in METRICS))
        for key, row in self.by_edu_count.items():
            lines.append(f"{key:8}{row['trees']:6d}" + "".join(f"{row[m]:8.1f}" for m in METRICS))
        return "\n".join(lines) + "\n"


def _height_bucket(h: int) -> str:
    return str(h) if h < 8 else ">=8"


def _edu_bucket(n: int) -> str:
    for lo, hi in EDU_BUCKETS:
        if lo <= n <= hi:
            return f"{lo}-{hi}"
    return f">{EDU_BUCKETS[-1][1]}"


def aggregate_report(counts: Iterable[TreeCounts]) -> EvalReport:
    """Micro (pooled) and macro (mean per tree) F1 plus breakdown tables.

    Trees without scorable spans (two EDUs or fewer) contribute nothing to
    the macro average.
    """
    counts = list(counts)
    if not counts:
        raise ValueError("aggregate_report needs at least one tree")
    gold = sum(c.gold for c in counts)
    pred = sum(c.pred for c in counts)
    micro = {m: _f1(sum(c.matched(m) for c in counts), pred, gold) for m in METRICS}
    scored = [c for c in counts if c.gold + c.pred > 0]
    macro = {m: (sum(_f1(c.matched(m), c.pred, c.gold) for c in scored) / len(scored) if scored else 0.0)
             for m in METRICS}

    by_height = {b: {"gold": 0, **{m: 0 for m in METRICS}} for b in HEIGHT_BUCKETS}
    nuc_gold, nuc_pred, nuc_match = defaultdict(int), defaultdict(int), defaultdict(int)
    for c in counts:
        for h, nuc, flags in c.gold_nodes:
            row = by_height[_height_bucket(h)]
            row["gold"] += 1
            for m in METRICS:
                row[m] += int(flags[m])
            nuc_gold[nuc] += 1
            if flags["nuc"]:
                nuc_match[nuc] += 1
        for nuc in c.pred_nuclearity:
            nuc_pred[nuc] += 1
    by_nuc = {k: {"gold": nuc_gold[k], "pred": nuc_pred[k], "matched": nuc_match[k],
                  "f1": _f1(nuc_match[k], nuc_pred[k], nuc_gold[k])} for k in NUCLEARITY}

    groups = defaultdict(list)
    for c in counts:
        groups[_edu_bucket(c.n_edus)].append(c)
    keys = [f"{lo}-{hi}" for lo, hi in EDU_BUCKETS] + [f">{EDU_BUCKETS[-1][1]}"]
    by_edu = {}
    for key in keys:
        group = groups.get(key)
        if not group:
            continue
        g = sum(c.gold for c in group)
        p = sum(c.pred for c in group)
        by_edu[key] = {"trees": len(group), "gold": g,
                       **{m: _f1(sum(c.matched(m) for c in group), p, g) for m in METRICS}}
    return EvalReport(micro, macro, by_height, by_nuc, by_edu, len(counts), gold)
