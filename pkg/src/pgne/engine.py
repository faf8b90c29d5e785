"""Execution core for transition membrane systems with polarization.

A system is a static description: a labeled membrane tree, initial region
contents, a rule list, and a strict partial order of rule priorities.  The
engine compiles that description once (resolving labels to region indices,
extending the priority order to a total order, precomputing the transitive
higher-priority sets) and then drives configurations forward step by step.

Step semantics, fixed here and relied on by every test in the suite:

  * A transition applies rules in a parallel and maximal way: the chosen
    multiset of rule applications cannot be extended by any further
    application against the step's starting resources.
  * Selection is greedy in a fixed total order that extends the declared
    priority order, tie-broken by declaration order.  This makes runs
    deterministic and replayable without changing which behaviors are
    reachable for confluent systems.
  * Priorities are strong: a rule is skipped while some transitively
    higher-priority rule could still fire against the remaining resources.
  * Applicability is gated by the charges membranes had at the start of
    the step; charge changes are staged and committed after all object
    rewriting, and each membrane's charge may be changed by at most one
    rule application per step.
  * Objects produced during a step become visible only at the next step.

The region surrounding the skin is modeled as an explicit pseudo-region
with the reserved label "@env", so output expelled through the skin can be
inspected like any other region.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .symbols import Multiset, Sym

NEUTRAL = 0
PLUS = 1
MINUS = -1

CHARGES = (NEUTRAL, PLUS, MINUS)
ENV_LABEL = "@env"

_CHARGE_TEXT = {NEUTRAL: "0", PLUS: "+", MINUS: "-"}
_TEXT_CHARGE = {"0": NEUTRAL, "+": PLUS, "-": MINUS}


def charge_text(c: int) -> str:
    return _CHARGE_TEXT[c]


def charge_from_text(t: str) -> int:
    try:
        return _TEXT_CHARGE[t]
    except KeyError:
        raise ValueError(f"not a charge: {t!r}")


class StructureError(Exception):
    """Raised when a system description violates a structural invariant."""


# ============================================================
# Static description
# ============================================================


@dataclass
class MembraneNode:
    """One membrane: a unique label, its children, and its initial content."""

    label: str
    children: List["MembraneNode"] = field(default_factory=list)
    contents: Multiset = field(default_factory=Multiset)
    charge: int = NEUTRAL


@dataclass
class ChildPattern:
    """Nested bracket of a two-level rule: one named child of the target."""

    label: str
    pre: int = NEUTRAL
    post: int = NEUTRAL
    consume: Dict[Sym, int] = field(default_factory=dict)
    produce: Dict[Sym, int] = field(default_factory=dict)


@dataclass
class RuleSpec:
    """One evolution rule.

    The target membrane is named by label (labels are unique, so a rule
    addresses exactly one membrane).  `consume_out`/`produce_out` act on
    the region surrounding the target, `consume_in`/`produce_in` on the
    target's own region, and `child` optionally on one named child.
    """

    id: str
    target: str
    pre: int = NEUTRAL
    post: int = NEUTRAL
    consume_out: Dict[Sym, int] = field(default_factory=dict)
    produce_out: Dict[Sym, int] = field(default_factory=dict)
    consume_in: Dict[Sym, int] = field(default_factory=dict)
    produce_in: Dict[Sym, int] = field(default_factory=dict)
    child: Optional[ChildPattern] = None

    def charge_changing(self) -> bool:
        if self.post != self.pre:
            return True
        return self.child is not None and self.child.post != self.child.pre

    def consumes_nothing(self) -> bool:
        if self.consume_out or self.consume_in:
            return False
        return not (self.child and self.child.consume)


@dataclass
class PSystem:
    """A complete static system: tree, rules, and priority pairs."""

    tree: MembraneNode
    rules: List[RuleSpec]
    priority: List[Tuple[str, str]] = field(default_factory=list)
    name: str = ""

    def labels(self) -> List[str]:
        out: List[str] = []

        def walk(node: MembraneNode) -> None:
            out.append(node.label)
            for ch in node.children:
                walk(ch)

        walk(self.tree)
        return out


# ============================================================
# Compilation
# ============================================================


class CRule:
    """A rule resolved against the region table, ready for the hot loop."""

    __slots__ = (
        "spec", "id", "order", "rank", "target", "parent", "pre", "post",
        "child", "child_pre", "child_post", "needs", "gives", "locks",
        "cap1", "higher", "target_label",
    )

    def __init__(self, spec: RuleSpec, rank: int, target: int, parent: int,
                 child: int) -> None:
        self.spec = spec
        self.id = spec.id
        self.rank = rank
        self.order = -1
        self.target = target
        self.parent = parent
        self.pre = spec.pre
        self.post = spec.post
        self.child = child
        self.child_pre = spec.child.pre if spec.child else NEUTRAL
        self.child_post = spec.child.post if spec.child else NEUTRAL
        self.target_label = spec.target
        # Flat (region, symbol, count) triples; order irrelevant.
        needs: List[Tuple[int, Sym, int]] = []
        gives: List[Tuple[int, Sym, int]] = []
        for s, n in spec.consume_out.items():
            needs.append((parent, s, n))
        for s, n in spec.consume_in.items():
            needs.append((target, s, n))
        for s, n in spec.produce_out.items():
            gives.append((parent, s, n))
        for s, n in spec.produce_in.items():
            gives.append((target, s, n))
        if spec.child:
            for s, n in spec.child.consume.items():
                needs.append((child, s, n))
            for s, n in spec.child.produce.items():
                gives.append((child, s, n))
        self.needs = tuple(needs)
        self.gives = tuple(gives)
        locks = []
        if spec.post != spec.pre:
            locks.append(target)
        if spec.child and spec.child.post != spec.child.pre:
            locks.append(child)
        self.locks = tuple(locks)
        self.cap1 = bool(locks)
        self.higher: Tuple["CRule", ...] = ()

    def fireable(self, avail: List[Dict[Sym, int]], charges: Sequence[int],
                 locked: List[bool]) -> bool:
        """True if one application could fire right now.

        Resource test runs against `avail` (residual start-of-step
        resources); charge test against start-of-step charges; a rule
        whose charge change hits an already locked membrane cannot fire.
        """
        if charges[self.target] != self.pre:
            return False
        if self.child >= 0 and charges[self.child] != self.child_pre:
            return False
        for r, s, n in self.needs:
            if avail[r].get(s, 0) < n:
                return False
        for r in self.locks:
            if locked[r]:
                return False
        return True

    def max_count(self, avail: List[Dict[Sym, int]]) -> int:
        k = None
        for r, s, n in self.needs:
            fit = avail[r].get(s, 0) // n
            if k is None or fit < k:
                if fit == 0:
                    return 0
                k = fit
        return k if k is not None else 0

    def __repr__(self) -> str:
        return f"<rule {self.id} @ {self.target_label}>"


class CompiledSystem:
    """A PSystem lowered to index arrays plus the derived total order."""

    def __init__(self, sys: PSystem) -> None:
        self.source = sys
        self.region_labels: List[str] = [ENV_LABEL]
        self.parents: List[int] = [-1]
        self.label_index: Dict[str, int] = {ENV_LABEL: 0}
        self._initial: List[Dict[Sym, int]] = [{}]
        self._initial_charges: List[int] = [NEUTRAL]

        def walk(node: MembraneNode, parent: int) -> None:
            if node.label == ENV_LABEL:
                raise StructureError(f"label {ENV_LABEL!r} is reserved")
            if node.label in self.label_index:
                raise StructureError(f"duplicate membrane label {node.label!r}")
            idx = len(self.region_labels)
            self.label_index[node.label] = idx
            self.region_labels.append(node.label)
            self.parents.append(parent)
            self._initial.append(dict(node.contents.counts))
            self._initial_charges.append(node.charge)
            for ch in node.children:
                walk(ch, idx)

        walk(sys.tree, 0)
        self.n_regions = len(self.region_labels)

        # Resolve rules.
        self.rules: List[CRule] = []
        by_id: Dict[str, CRule] = {}
        for rank, spec in enumerate(sys.rules):
            if spec.id in by_id:
                raise StructureError(f"duplicate rule id {spec.id!r}")
            if spec.consumes_nothing():
                raise StructureError(f"rule {spec.id}: consumes nothing")
            t = self.label_index.get(spec.target)
            if t is None:
                raise StructureError(f"rule {spec.id}: unknown label {spec.target!r}")
            child = -1
            if spec.child is not None:
                child = self.label_index.get(spec.child.label, -1)
                if child < 0:
                    raise StructureError(
                        f"rule {spec.id}: unknown child label {spec.child.label!r}")
                if self.parents[child] != t:
                    raise StructureError(
                        f"rule {spec.id}: {spec.child.label!r} is not a child "
                        f"of {spec.target!r}")
            cr = CRule(spec, rank, t, self.parents[t], child)
            self.rules.append(cr)
            by_id[spec.id] = cr

        # Priority edges, total order, transitive higher sets.
        n = len(self.rules)
        adj: List[List[int]] = [[] for _ in range(n)]
        radj: List[List[int]] = [[] for _ in range(n)]
        indeg = [0] * n
        for hi, lo in sys.priority:
            if hi == lo:
                raise StructureError(f"priority pair {hi} > {lo} is reflexive")
            try:
                a, b = by_id[hi].rank, by_id[lo].rank
            except KeyError as miss:
                raise StructureError(f"priority names unknown rule {miss.args[0]!r}")
            adj[a].append(b)
            radj[b].append(a)
            indeg[b] += 1

        heap = [i for i in range(n) if indeg[i] == 0]
        heapq.heapify(heap)
        order: List[int] = []
        indeg2 = list(indeg)
        while heap:
            i = heapq.heappop(heap)
            order.append(i)
            for j in adj[i]:
                indeg2[j] -= 1
                if indeg2[j] == 0:
                    heapq.heappush(heap, j)
        if len(order) != n:
            raise StructureError("priority relation contains a cycle")
        self.ordered: List[CRule] = []
        for pos, rank in enumerate(order):
            cr = self.rules[rank]
            cr.order = pos
            self.ordered.append(cr)

        # Transitive closure of "strictly higher priority than".
        memo: Dict[int, frozenset] = {}

        def above(i: int) -> frozenset:
            got = memo.get(i)
            if got is not None:
                return got
            acc = set()
            stack = list(radj[i])
            while stack:
                j = stack.pop()
                if j in acc:
                    continue
                acc.add(j)
                done = memo.get(j)
                if done is not None:
                    acc |= done
                else:
                    stack.extend(radj[j])
            out = frozenset(acc)
            memo[i] = out
            return out

        for cr in self.rules:
            cr.higher = tuple(self.rules[j] for j in sorted(above(cr.rank)))

        # Candidate buckets keyed by (target region, pre charge).
        self.buckets: Dict[Tuple[int, int], List[CRule]] = {}
        for cr in self.ordered:
            self.buckets.setdefault((cr.target, cr.pre), []).append(cr)

    def comparable(self, a: CRule, b: CRule) -> bool:
        return a in b.higher or b in a.higher

    def initial_configuration(
            self,
            contents: Optional[Mapping[str, Mapping[Sym, int] | Multiset]] = None,
    ) -> "Configuration":
        """Fresh start state; `contents` overrides initial region multisets."""
        cont = [dict(c) for c in self._initial]
        if contents is not None:
            for label, ms in contents.items():
                idx = self.label_index.get(label)
                if idx is None:
                    raise StructureError(f"unknown label {label!r}")
                items = ms.counts if isinstance(ms, Multiset) else ms
                cont[idx] = {s: n for s, n in items.items() if n > 0}
        return Configuration(self, cont, list(self._initial_charges), 0)


def compile_system(sys: PSystem) -> CompiledSystem:
    return CompiledSystem(sys)


# ============================================================
# Dynamic state
# ============================================================


class Configuration:
    """Instantaneous state: per-region contents and charges, plus a step count."""

    __slots__ = ("csys", "contents", "charges", "step")

    def __init__(self, csys: CompiledSystem, contents: List[Dict[Sym, int]],
                 charges: List[int], step: int) -> None:
        self.csys = csys
        self.contents = contents
        self.charges = charges
        self.step = step

    def copy(self) -> "Configuration":
        return Configuration(self.csys, [dict(c) for c in self.contents],
                             list(self.charges), self.step)

    def region(self, label: str) -> Dict[Sym, int]:
        idx = self.csys.label_index.get(label)
        if idx is None:
            raise StructureError(f"unknown label {label!r}")
        return self.contents[idx]

    def charge(self, label: str) -> int:
        idx = self.csys.label_index.get(label)
        if idx is None:
            raise StructureError(f"unknown label {label!r}")
        return self.charges[idx]

    def equal_state(self, other: "Configuration") -> bool:
        return self.contents == other.contents and self.charges == other.charges


def read_region(cfg: Configuration, label: str,
                base: Optional[str] = None) -> Multiset:
    """Filtered copy of one region's contents; cfg is left untouched."""
    raw = cfg.region(label)
    out = Multiset()
    for s, n in raw.items():
        if base is None or s.base == base:
            out.counts[s] = n
    return out


# ============================================================
# Stepping
# ============================================================


@dataclass
class Ambiguity:
    """Two priority-incomparable rules competed for one symbol in one region."""

    step: int
    region: str
    symbol: Sym
    winner: str
    loser: str


StepRecord = List[Tuple[CRule, int]]


def maximal_step(cfg: Configuration, strict: bool = False,
                 ambiguities: Optional[List[Ambiguity]] = None) -> StepRecord:
    """Advance cfg by one transition in place.

    Returns the applications performed as (rule, count) pairs in selection
    order; an empty record means no rule was applicable (cfg unchanged,
    step counter not advanced).
    """
    csys = cfg.csys
    charges = cfg.charges
    avail = [dict(c) for c in cfg.contents]
    pre = None
    consumers: Dict[Tuple[int, Sym], List[CRule]] = {}
    if strict:
        pre = [dict(c) for c in avail]

    # Candidates: rules whose (target, pre charge) bucket is live now.
    cand: List[CRule] = []
    for idx in range(csys.n_regions):
        got = csys.buckets.get((idx, charges[idx]))
        if got:
            cand.extend(got)
    cand.sort(key=lambda r: r.order)

    locked = [False] * csys.n_regions
    charge_next = list(charges)
    deltas: Dict[Tuple[int, Sym], int] = {}
    record: StepRecord = []

    for cr in cand:
        if cr.child >= 0 and charges[cr.child] != cr.child_pre:
            continue
        if cr.cap1 and any(locked[r] for r in cr.locks):
            continue
        k = cr.max_count(avail)
        if strict and pre is not None:
            k_solo = 1 if cr.fireable(pre, charges, [False] * csys.n_regions) else 0
            if k_solo and k == 0:
                # Starved by earlier consumption; flag incomparable culprits.
                for r, s, n in cr.needs:
                    if avail[r].get(s, 0) < n:
                        for culprit in consumers.get((r, s), ()):
                            if culprit is not cr and not csys.comparable(culprit, cr):
                                if ambiguities is not None:
                                    ambiguities.append(Ambiguity(
                                        cfg.step, csys.region_labels[r], s,
                                        culprit.id, cr.id))
        if k == 0:
            continue
        blocked = False
        for h in cr.higher:
            if h.fireable(avail, charges, locked):
                blocked = True
                break
        if blocked:
            continue
        if cr.cap1:
            k = 1
        for r, s, n in cr.needs:
            left = avail[r][s] - n * k
            if left:
                avail[r][s] = left
            else:
                del avail[r][s]
            if strict:
                consumers.setdefault((r, s), []).append(cr)
        for r, s, n in cr.gives:
            deltas[(r, s)] = deltas.get((r, s), 0) + n * k
        if cr.post != cr.pre:
            charge_next[cr.target] = cr.post
            locked[cr.target] = True
        if cr.child >= 0 and cr.child_post != cr.child_pre:
            charge_next[cr.child] = cr.child_post
            locked[cr.child] = True
        record.append((cr, k))

    if not record:
        return record

    for (r, s), n in deltas.items():
        avail[r][s] = avail[r].get(s, 0) + n
    cfg.contents = avail
    cfg.charges = charge_next
    cfg.step += 1
    return record


# ============================================================
# Runs and traces
# ============================================================


@dataclass
class Trace:
    """The full story of a run: per-step applications, optional snapshots."""

    records: List[StepRecord]
    snapshots: List[Configuration]
    final: Configuration
    halted: bool
    halt_reason: str
    ambiguities: List[Ambiguity]

    @property
    def steps(self) -> int:
        return len(self.records)

    def fired(self, rule_id: str, step: int) -> int:
        """Application count of rule_id at 1-based transition `step`."""
        if step < 1 or step > len(self.records):
            return 0
        for cr, k in self.records[step - 1]:
            if cr.id == rule_id:
                return k
        return 0

    def rule_ids(self, step: int) -> List[str]:
        return [cr.id for cr, _ in self.records[step - 1]]


def run(sys: PSystem | CompiledSystem, max_steps: int,
        trace_mode: str = "records",
        initial: Optional[Mapping[str, Mapping[Sym, int] | Multiset]] = None,
        strict: bool = False) -> Trace:
    """Drive a system to quiescence or to the step budget.

    trace_mode: "records" keeps per-step rule applications only; "full"
    additionally snapshots every configuration (memory-heavy, test use).
    """
    if max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    csys = sys if isinstance(sys, CompiledSystem) else compile_system(sys)
    cfg = csys.initial_configuration(initial)
    snapshots: List[Configuration] = []
    records: List[StepRecord] = []
    ambiguities: List[Ambiguity] = []
    full = trace_mode == "full"
    if full:
        snapshots.append(cfg.copy())
    halted = False
    for _ in range(max_steps):
        rec = maximal_step(cfg, strict=strict, ambiguities=ambiguities)
        if not rec:
            halted = True
            break
        records.append(rec)
        if full:
            snapshots.append(cfg.copy())
    else:
        # Budget spent; check whether the system happens to be quiet anyway.
        probe = cfg.copy()
        halted = not maximal_step(probe)
    reason = "quiescent" if halted else "budget"
    return Trace(records, snapshots, cfg, halted, reason, ambiguities)


def apply_record(cfg: Configuration, record: StepRecord) -> None:
    """Replay one recorded step onto cfg without any selection logic."""
    avail = cfg.contents
    charge_next = list(cfg.charges)
    deltas: Dict[Tuple[int, Sym], int] = {}
    for cr, k in record:
        for r, s, n in cr.needs:
            left = avail[r].get(s, 0) - n * k
            if left < 0:
                raise StructureError(
                    f"replay of {cr.id} x{k}: insufficient {s} in "
                    f"{cfg.csys.region_labels[r]}")
            if left:
                avail[r][s] = left
            else:
                avail[r].pop(s, None)
        for r, s, n in cr.gives:
            deltas[(r, s)] = deltas.get((r, s), 0) + n * k
        if cr.post != cr.pre:
            charge_next[cr.target] = cr.post
        if cr.child >= 0 and cr.child_post != cr.child_pre:
            charge_next[cr.child] = cr.child_post
    for (r, s), n in deltas.items():
        avail[r][s] = avail[r].get(s, 0) + n
    cfg.charges = charge_next
    cfg.step += 1


def replay_matches(trace: Trace) -> bool:
    """Verify snapshot t + record t reproduces snapshot t+1 (full traces)."""
    if not trace.snapshots:
        raise ValueError("replay needs a full trace")
    for t, rec in enumerate(trace.records):
        work = trace.snapshots[t].copy()
        apply_record(work, rec)
        if not work.equal_state(trace.snapshots[t + 1]):
            return False
    return True


def export_trace_text(trace: Trace) -> str:
    """Line-oriented trace: step index then rule_id@label×count entries."""
    lines = []
    for t, rec in enumerate(trace.records, start=1):
        entries = sorted(f"{cr.id}@{cr.target_label}x{k}" for cr, k in rec)
        lines.append(f"{t} " + " ".join(entries))
    return "\n".join(lines) + ("\n" if lines else "")
