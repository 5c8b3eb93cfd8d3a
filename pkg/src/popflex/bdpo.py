"""Block-decomposed partial-order plans and greedy block deordering.

Blocks are frozen once created: a compound block carries its own internal
causal links, demotion/promotion commitments, and closure over its children,
plus precondition/effect/consumed/produced/deleted fact sets computed from
the children.  The plan mutates only its outermost level (the root context),
which mirrors the flat POP representation but over block ids.

Deordering scans the committed orderings and tries to strip each one of all
its reasons by encapsulating spans of blocks, following the four removal
rules (producer rebinding for PC, producer-side and restorer-side wrapping
for CD, and consumer bundling for DP).
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .pop import (CD, DP, GOAL_ID, INIT_ID, PC, CycleDetected, FlexScore,
                  PartialOrderPlan, Reason, closure_from_edges,
                  reason_sort_key)
from .task import (Fact, OperatorDef, PlanningTask, SequentialPlan,
                   ValidationReport, cons_prod_del)

logger = logging.getLogger(__name__)

INIT_BLOCK = 0
GOAL_BLOCK = 1


@dataclass(frozen=True)
class Block:
    """Immutable node of the block forest."""
    id: int
    members: frozenset[int]            # step ids, all nesting levels
    step: Optional[int] = None         # set iff primitive
    children: tuple[int, ...] = ()     # block ids, compound only
    ilinks: dict = field(default_factory=dict)        # (child, Fact) -> child
    iresolutions: dict = field(default_factory=dict)  # (child, child) -> frozenset
    iclosure: dict = field(default_factory=dict)      # child -> frozenset
    pre: frozenset[Fact] = frozenset()
    eff: frozenset[Fact] = frozenset()
    cons: frozenset[Fact] = frozenset()
    prod: frozenset[Fact] = frozenset()
    dels: frozenset[Fact] = frozenset()
    cost: int = 0
    pos: int = 0

    @property
    def primitive(self) -> bool:
        return self.step is not None

    def size(self) -> int:
        return len(self.members)


class BdpoPlan:
    """POP plus a laminar block family; orderings live between root blocks."""

    def __init__(self, task: PlanningTask):
        self.task = task
        self.steps: dict[int, OperatorDef] = {}
        self.blocks: dict[int, Block] = {}      # every block, any level
        self.roots: set[int] = set()
        self.links: dict[tuple[int, Fact], int] = {}   # (consumer, fact) -> producer
        self.resolutions: dict[tuple[int, int], set[Reason]] = {}
        self.closure: dict[int, set[int]] = {}
        self.next_step_id = 2
        self.next_block_id = 2

    # -- bookkeeping ---------------------------------------------------------

    def clone(self) -> "BdpoPlan":
        other = BdpoPlan(self.task)
        other.steps = dict(self.steps)
        other.blocks = dict(self.blocks)
        other.roots = set(self.roots)
        other.links = dict(self.links)
        other.resolutions = {k: set(v) for k, v in self.resolutions.items()}
        other.closure = {k: set(v) for k, v in self.closure.items()}
        other.next_step_id = self.next_step_id
        other.next_block_id = self.next_block_id
        return other

    def adopt(self, other: "BdpoPlan") -> None:
        self.steps = other.steps
        self.blocks = other.blocks
        self.roots = other.roots
        self.links = other.links
        self.resolutions = other.resolutions
        self.closure = other.closure
        self.next_step_id = other.next_step_id
        self.next_block_id = other.next_block_id

    def fresh_step_id(self) -> int:
        sid = self.next_step_id
        self.next_step_id += 1
        return sid

    def fresh_block_id(self) -> int:
        bid = self.next_block_id
        self.next_block_id += 1
        return bid

    def snapshot(self) -> tuple:
        """Hashable deep image, used to assert failure paths change nothing."""
        return (
            tuple(sorted((s, op.name) for s, op in self.steps.items())),
            tuple(sorted((b, blk.members) for b, blk in self.blocks.items())),
            tuple(sorted(self.roots)),
            tuple(sorted(self.links.items())),
            tuple(sorted((pair, tuple(sorted(rs)))
                         for pair, rs in self.resolutions.items() if rs)),
        )

    def real_roots(self) -> list[int]:
        return sorted((b for b in self.roots if b not in (INIT_BLOCK, GOAL_BLOCK)),
                      key=self.pos_key)

    def real_step_ids(self) -> list[int]:
        return sorted(s for s in self.steps if s not in (INIT_ID, GOAL_ID))

    def pos_key(self, bid: int) -> tuple[int, int]:
        return (1 if bid == GOAL_BLOCK else 0, self.blocks[bid].pos)

    def block_of_step(self, step_id: int) -> int:
        for b in self.roots:
            if step_id in self.blocks[b].members:
                return b
        raise KeyError(step_id)

    # -- block construction --------------------------------------------------

    def make_primitive(self, step_id: int, bid: Optional[int] = None) -> int:
        if bid is None:
            bid = self.fresh_block_id()
        op = self.steps[step_id]
        cons, prod, dels = cons_prod_del(op, self.task.domain_sizes())
        self.blocks[bid] = Block(
            id=bid, members=frozenset([step_id]), step=step_id,
            pre=cons, eff=prod, cons=cons, prod=prod, dels=dels,
            cost=op.cost, pos=step_id)
        return bid

    def make_compound(self, children: Iterable[int],
                      ilinks: dict, iresolutions: dict) -> int:
        """Freeze a set of existing blocks into a new compound block."""
        children = tuple(sorted(children, key=self.pos_key))
        bid = self.fresh_block_id()
        edges = {(p, c) for (c, _), p in ilinks.items()}
        edges |= set(iresolutions)
        iclosure = closure_from_edges(children, sorted(edges))
        members = frozenset().union(*(self.blocks[c].members for c in children))
        pre, eff = self._compound_pre_eff(children, ilinks, iclosure)
        cons = pre
        by_var: dict[int, set[int]] = {}
        for f in eff:
            by_var.setdefault(f.var, set()).add(f.val)
        prod = frozenset(f for f in eff
                         if len(by_var[f.var]) == 1 and f not in cons)
        cons_vars: dict[int, set[int]] = {}
        for f in cons:
            cons_vars.setdefault(f.var, set()).add(f.val)
        dels = set()
        for var, vals in sorted(by_var.items()):
            sizes = self.task.domain_size(var)
            for d in range(sizes):
                if d in vals and len(vals) == 1:
                    continue
                if var in cons_vars and d not in cons_vars[var]:
                    continue
                if any(d2 != d for d2 in vals):
                    dels.add(Fact(var, d))
        self.blocks[bid] = Block(
            id=bid, members=members, children=children,
            ilinks=dict(ilinks),
            iresolutions={k: frozenset(v) for k, v in iresolutions.items() if v},
            iclosure={k: frozenset(v) for k, v in iclosure.items()},
            pre=pre, eff=eff, cons=cons, prod=prod, dels=frozenset(dels),
            cost=sum(self.blocks[c].cost for c in children),
            pos=min(self.blocks[c].pos for c in children))
        return bid

    def _compound_pre_eff(self, children, ilinks, iclosure):
        pre = set()
        for c in children:
            for f in self.blocks[c].pre:
                if (c, f) not in ilinks:
                    pre.add(f)
        eff = set()
        for c in children:
            for f in self.blocks[c].eff:
                killed = any(
                    c2 in iclosure[c] and any(
                        g.var == f.var and g.val != f.val
                        for g in self.blocks[c2].eff)
                    for c2 in children)
                if not killed:
                    eff.add(f)
        return frozenset(pre), frozenset(eff)

    # -- ordering ------------------------------------------------------------

    def commitment_edges(self) -> list[tuple[int, int]]:
        edges = {(p, c) for (c, _), p in self.links.items() if p != c}
        edges |= {pair for pair, rs in self.resolutions.items() if rs}
        for b in self.roots:
            if b != INIT_BLOCK:
                edges.add((INIT_BLOCK, b))
            if b != GOAL_BLOCK:
                edges.add((b, GOAL_BLOCK))
        return sorted(edges)

    def rebuild_closure(self) -> None:
        self.closure = closure_from_edges(self.roots, self.commitment_edges())

    def ordered(self, a: int, b: int) -> bool:
        return b in self.closure[a]

    def reasons(self) -> dict[tuple[int, int], set[Reason]]:
        out: dict[tuple[int, int], set[Reason]] = {}
        for (c, f), p in self.links.items():
            out.setdefault((p, c), set()).add(Reason(PC, f))
        for pair, rs in self.resolutions.items():
            if rs:
                out.setdefault(pair, set()).update(rs)
        return out

    def threats(self) -> list[tuple[int, tuple[int, Fact, int]]]:
        """All (deleter, link) conflicts, resolved or not."""
        out = []
        for (c, f), p in sorted(self.links.items()):
            for t in sorted(self.roots):
                if t in (p, c, INIT_BLOCK, GOAL_BLOCK):
                    continue
                if f in self.blocks[t].dels:
                    out.append((t, (p, f, c)))
        return out

    def unresolved_threats(self) -> list[tuple[int, tuple[int, Fact, int]]]:
        return [(t, link) for t, link in self.threats()
                if not self.ordered(t, link[0]) and not self.ordered(link[2], t)]

    def refresh(self) -> None:
        """Re-derive demotion/promotion commitments from the current threats,
        keeping each threat's direction as the current closure has it, then
        rebuild the closure from scratch.  Stale commitments drop out."""
        new_res: dict[tuple[int, int], set[Reason]] = {}
        for t, (p, f, c) in self.threats():
            if self.ordered(t, p):
                new_res.setdefault((t, p), set()).add(Reason(DP, f))
            elif self.ordered(c, t):
                new_res.setdefault((c, t), set()).add(Reason(CD, f))
            # else: left unresolved; validate() reports it
        self.resolutions = new_res
        self.rebuild_closure()

    # -- metrics -------------------------------------------------------------

    def ordered_step_pairs(self) -> int:
        total = 0
        roots = self.real_roots()
        for i, a in enumerate(roots):
            for b in roots[i + 1:]:
                if self.ordered(a, b) or self.ordered(b, a):
                    total += self.blocks[a].size() * self.blocks[b].size()
        for bid in sorted(self.live_blocks()):
            b = self.blocks[bid]
            if b.primitive or bid in (INIT_BLOCK, GOAL_BLOCK):
                continue
            kids = b.children
            for i, x in enumerate(kids):
                for y in kids[i + 1:]:
                    if y in b.iclosure[x] or x in b.iclosure[y]:
                        total += self.blocks[x].size() * self.blocks[y].size()
        return total

    def _descendant_blocks(self, bid: int) -> set[int]:
        out = set()
        stack = [bid]
        while stack:
            b = stack.pop()
            out.add(b)
            stack.extend(self.blocks[b].children)
        return out

    def live_blocks(self) -> set[int]:
        out: set[int] = set()
        for r in self.roots:
            out |= self._descendant_blocks(r)
        return out

    def flex(self) -> FlexScore:
        n = len(self.real_step_ids())
        total = n * (n - 1) // 2
        return FlexScore(total - self.ordered_step_pairs(), total)

    def cost(self) -> int:
        return sum(self.steps[s].cost for s in self.real_step_ids())

    # -- validation ----------------------------------------------------------

    def validate(self) -> ValidationReport:
        try:
            self.rebuild_closure()
        except CycleDetected as exc:
            return ValidationReport(False, reason=str(exc))
        live = self.live_blocks()
        for (c, f), p in sorted(self.links.items()):
            if c not in self.roots or p not in self.roots:
                return ValidationReport(False, reason=f"dangling link {p}->{c}")
            blk = self.blocks[p]
            if f not in blk.eff or f in blk.dels:
                return ValidationReport(False, reason=f"{p} does not supply {f}")
            if p != INIT_BLOCK and not self.ordered(p, c):
                return ValidationReport(False, reason=f"link {p}->{c} unordered")
        for b in sorted(self.roots, key=self.pos_key):
            if b == INIT_BLOCK:
                continue
            for f in sorted(self.blocks[b].pre):
                if (b, f) not in self.links:
                    return ValidationReport(
                        False, reason=f"block {b}: no producer for {f}")
        for t, (p, f, c) in self.unresolved_threats():
            return ValidationReport(
                False, reason=f"block {t} threatens {p}-{f}->{c}")
        for bid in sorted(live):
            blk = self.blocks[bid]
            if blk.primitive or bid in (INIT_BLOCK, GOAL_BLOCK):
                continue
            report = self._validate_interior(blk)
            if not report:
                return report
        return ValidationReport(True)

    def _validate_interior(self, blk: Block) -> ValidationReport:
        for c in blk.children:
            for f in sorted(self.blocks[c].pre):
                p = blk.ilinks.get((c, f))
                if p is None:
                    if f not in blk.pre:
                        return ValidationReport(
                            False,
                            reason=f"block {blk.id}: child {c} lacks {f}")
                    continue
                pb = self.blocks[p]
                if f not in pb.eff or f in pb.dels:
                    return ValidationReport(
                        False, reason=f"block {blk.id}: {p} can't supply {f}")
        for (c, f), p in sorted(blk.ilinks.items()):
            for t in blk.children:
                if t in (p, c):
                    continue
                if f in self.blocks[t].dels \
                        and p not in blk.iclosure[t] \
                        and t not in blk.iclosure[c]:
                    return ValidationReport(
                        False,
                        reason=f"block {blk.id}: {t} threatens {p}-{f}->{c}")
        return ValidationReport(True)

    def check_laminar(self) -> bool:
        live = sorted(self.live_blocks())
        for i, a in enumerate(live):
            ma = self.blocks[a].members
            for b in live[i + 1:]:
                mb = self.blocks[b].members
                inter = ma & mb
                if inter and not (ma <= mb or mb <= ma):
                    return False
        return True

    def check_contiguity(self) -> bool:
        flat = self.flat_closure()
        for bid in sorted(self.live_blocks()):
            members = self.blocks[bid].members
            outside = [s for s in self.steps if s not in members
                       and s not in (INIT_ID, GOAL_ID)]
            for s in outside:
                before = any(m in flat.get(s, ()) for m in members)
                after = any(s in flat.get(m, ()) for m in members)
                if before and after:
                    return False
        return True

    def flat_closure(self) -> dict[int, set[int]]:
        """Step-level strict descendants implied by the block structure."""
        out: dict[int, set[int]] = {s: set() for s in self.steps}

        def expand(bid: int) -> None:
            blk = self.blocks[bid]
            if blk.primitive:
                return
            for x in blk.children:
                for y in blk.children:
                    if y in blk.iclosure[x]:
                        for sx in self.blocks[x].members:
                            out[sx] |= self.blocks[y].members
                expand(x)

        roots = sorted(self.roots, key=self.pos_key)
        for a in roots:
            for b in roots:
                if a != b and self.ordered(a, b):
                    for sa in self.blocks[a].members:
                        out[sa] |= self.blocks[b].members
            expand(a)
        for s in self.steps:
            if s != INIT_ID:
                out[INIT_ID].add(s)
            if s != GOAL_ID:
                out[s].add(GOAL_ID)
        return out

    # -- linearization -------------------------------------------------------

    def linearize(self, seed: int = 0) -> SequentialPlan:
        rng = random.Random(seed)
        steps = self._linearize_context(self.real_roots(),
                                        lambda a, b: self.ordered(a, b), rng)
        return SequentialPlan([self.task.operator_index(self.steps[s].name)
                               for s in steps])

    def _linearize_context(self, blocks: list[int], before, rng) -> list[int]:
        out: list[int] = []
        remaining = list(blocks)
        while remaining:
            ready = sorted((b for b in remaining
                            if not any(before(o, b) for o in remaining if o != b)),
                           key=self.pos_key)
            pick = rng.choice(ready)
            remaining.remove(pick)
            out.extend(self._linearize_block(pick, rng))
        return out

    def _linearize_block(self, bid: int, rng) -> list[int]:
        blk = self.blocks[bid]
        if blk.primitive:
            return [blk.step]
        return self._linearize_context(
            list(blk.children), lambda a, b: b in blk.iclosure[a], rng)

    def all_linearizations(self, cap: int = 50000) -> Iterator[SequentialPlan]:
        count = 0

        def contexts(blocks: list[int], before) -> Iterator[list[int]]:
            if not blocks:
                yield []
                return
            for b in sorted(blocks, key=self.pos_key):
                if any(before(o, b) for o in blocks if o != b):
                    continue
                rest = [o for o in blocks if o != b]
                for head in expand(b):
                    for tail in contexts(rest, before):
                        yield head + tail

        def expand(bid: int) -> Iterator[list[int]]:
            blk = self.blocks[bid]
            if blk.primitive:
                yield [blk.step]
                return
            yield from contexts(list(blk.children),
                                lambda a, b: b in blk.iclosure[a])

        for steps in contexts(self.real_roots(),
                              lambda a, b: self.ordered(a, b)):
            count += 1
            if count > cap:
                raise RuntimeError("too many linearizations")
            yield SequentialPlan([self.task.operator_index(self.steps[s].name)
                                  for s in steps])

    # -- exports -------------------------------------------------------------

    def to_json(self) -> dict:
        def block_json(bid: int) -> dict:
            blk = self.blocks[bid]
            data: dict = {"id": bid, "cost": blk.cost}
            if blk.primitive:
                data["step"] = blk.step
                data["name"] = self.steps[blk.step].name
            else:
                data["children"] = [block_json(c) for c in blk.children]
            return data

        reasons = self.reasons()
        return {
            "steps": {str(s): self.steps[s].name for s in sorted(self.steps)},
            "blocks": [block_json(b) for b in
                       sorted(self.roots, key=self.pos_key)],
            "links": [{"producer": p, "fact": list(f), "consumer": c}
                      for (c, f), p in sorted(self.links.items())],
            "orderings": [{"before": a, "after": b,
                           "reasons": sorted(f"{r.kind}({r.fact.var},{r.fact.val})"
                                             for r in rs)}
                          for (a, b), rs in sorted(reasons.items())],
        }

    def to_dot(self) -> str:
        lines = ["digraph bdpo {", "  rankdir=TB;", "  compound=true;"]

        def emit_block(bid: int, indent: str) -> None:
            blk = self.blocks[bid]
            if blk.primitive:
                lines.append(
                    f'{indent}s{blk.step} [label="{self.steps[blk.step].name}", shape=box];')
                return
            lines.append(f"{indent}subgraph cluster_{bid} {{")
            lines.append(f'{indent}  label="b{bid}";')
            for c in blk.children:
                emit_block(c, indent + "  ")
            lines.append(f"{indent}}}")

        for b in sorted(self.roots, key=self.pos_key):
            if b in (INIT_BLOCK, GOAL_BLOCK):
                lines.append(f'  s{self.blocks[b].step} '
                             f'[label="{self.steps[self.blocks[b].step].name}", shape=ellipse];')
            else:
                emit_block(b, "  ")
        for (a, b), rs in sorted(self.reasons().items()):
            label = ", ".join(f"{r.kind}({r.fact.var}={r.fact.val})"
                              for r in sorted(rs, key=reason_sort_key))
            sa = self._anchor_step(a)
            sb = self._anchor_step(b)
            attrs = [f'label="{label}"']
            if not self.blocks[a].primitive:
                attrs.append(f"ltail=cluster_{a}")
            if not self.blocks[b].primitive:
                attrs.append(f"lhead=cluster_{b}")
            lines.append(f'  s{sa} -> s{sb} [{", ".join(attrs)}];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def _anchor_step(self, bid: int) -> int:
        blk = self.blocks[bid]
        if blk.primitive:
            return blk.step
        return min(blk.members)


# ---------------------------------------------------------------------------
# construction from a flat POP


def init_bdpo(pop: PartialOrderPlan) -> BdpoPlan:
    """One primitive block per step; orderings mirror the step orderings."""
    plan = BdpoPlan(pop.task)
    plan.steps = dict(pop.steps)
    plan.next_step_id = max(pop.steps, default=1) + 1
    step_block: dict[int, int] = {}
    for s in sorted(pop.steps):
        if s == INIT_ID:
            bid = plan.make_primitive(s, INIT_BLOCK)
        elif s == GOAL_ID:
            bid = plan.make_primitive(s, GOAL_BLOCK)
        else:
            bid = plan.make_primitive(s)
        step_block[s] = bid
        plan.roots.add(bid)
    for (c, f), p in pop.links.items():
        plan.links[(step_block[c], f)] = step_block[p]
    for (a, b), rs in pop.resolutions.items():
        plan.resolutions[(step_block[a], step_block[b])] = set(rs)
    plan.rebuild_closure()
    return plan


def block_profile(plan: BdpoPlan, bid: int) -> Block:
    return plan.blocks[bid]


# ---------------------------------------------------------------------------
# candidate producers


def candidate_producers(plan: BdpoPlan, fact: Fact, consumer: int,
                        exclude: frozenset[int] = frozenset()) -> list[int]:
    """Blocks already ordered before `consumer` whose effect holds `fact`
    with no deleter that could fall between, earliest first."""
    out = []
    for p in sorted(plan.roots, key=plan.pos_key):
        if p == consumer or p == GOAL_BLOCK or p in exclude:
            continue
        if fact not in plan.blocks[p].eff:
            continue
        if p != INIT_BLOCK and not plan.ordered(p, consumer):
            continue
        blocked = False
        for t in sorted(plan.roots):
            if t in (consumer, GOAL_BLOCK) or t in exclude:
                continue
            if fact not in plan.blocks[t].dels:
                continue
            if not plan.ordered(consumer, t) and not plan.ordered(t, p):
                blocked = True
                break
        if not blocked:
            out.append(p)
    minimal = [p for p in out
               if not any(q != p and plan.ordered(q, p) for q in out)]
    return sorted(minimal, key=plan.pos_key)


def earliest_candidate_producer(plan: BdpoPlan, fact: Fact,
                                consumer: int) -> Optional[int]:
    cands = candidate_producers(plan, fact, consumer)
    return cands[0] if cands else None


def earliest_producer_for_insert(plan: BdpoPlan, fact: Fact, consumer: int,
                                 exclude: frozenset[int] = frozenset()
                                 ) -> Optional[int]:
    """Earliest fact supplier for a freshly inserted block.

    Conflicting deleters are not filtered here; they surface as threats and
    are handled by the substitution's resolution loop.  Blocks ordered after
    the consumer are unusable (the link would close a cycle).
    """
    cands = []
    for p in sorted(plan.roots, key=plan.pos_key):
        if p == consumer or p == GOAL_BLOCK or p in exclude:
            continue
        if fact not in plan.blocks[p].eff or fact in plan.blocks[p].dels:
            continue
        if plan.ordered(consumer, p):
            continue
        cands.append(p)
    minimal = [p for p in cands
               if not any(q != p and plan.ordered(q, p) for q in cands)]
    minimal.sort(key=plan.pos_key)
    return minimal[0] if minimal else None


# ---------------------------------------------------------------------------
# wrapping spans of root blocks into compound blocks


def between_closure(plan: BdpoPlan, seed: set[int]) -> set[int]:
    """Close a root-block set under ordered-betweenness."""
    span = set(seed)
    changed = True
    while changed:
        changed = False
        for x in sorted(plan.roots, key=plan.pos_key):
            if x in span or x in (INIT_BLOCK, GOAL_BLOCK):
                continue
            above = any(plan.ordered(a, x) for a in span)
            below = any(plan.ordered(x, b) for b in span)
            if above and below:
                span.add(x)
                changed = True
    return span


def wrap_blocks(plan: BdpoPlan, span: set[int]) -> int:
    """Encapsulate a betweenness-closed set of root blocks in a new block.

    Root-level links and commitments among span members move inside the new
    block; boundary-crossing links re-point to it (keeping, per consumed
    fact, the earliest external producer).  Returns the new block id.
    """
    assert span <= plan.roots and len(span) >= 2
    ilinks = {}
    iresolutions = {}
    for (c, f), p in sorted(plan.links.items()):
        if c in span and p in span:
            ilinks[(c, f)] = p
    for (a, b), rs in sorted(plan.resolutions.items()):
        if a in span and b in span and rs:
            iresolutions[(a, b)] = set(rs)
    bid = plan.make_compound(sorted(span, key=plan.pos_key), ilinks, iresolutions)

    new_links: dict[tuple[int, Fact], int] = {}
    for (c, f), p in sorted(plan.links.items()):
        if c in span and p in span:
            continue
        nc = bid if c in span else c
        np = bid if p in span else p
        if nc == np:
            continue
        key = (nc, f)
        if key in new_links:
            prev = new_links[key]
            np = min(prev, np, key=plan.pos_key)
        new_links[key] = np
    new_res: dict[tuple[int, int], set[Reason]] = {}
    for (a, b), rs in sorted(plan.resolutions.items()):
        na = bid if a in span else a
        nb = bid if b in span else b
        if na == nb or not rs:
            continue
        new_res.setdefault((na, nb), set()).update(rs)

    plan.links = new_links
    plan.resolutions = new_res
    plan.roots -= span
    plan.roots.add(bid)
    plan.rebuild_closure()
    plan.refresh()
    return bid


# ---------------------------------------------------------------------------
# Rule-based reason removal and the greedy deordering loop


def _span_ok(plan: BdpoPlan, span: set[int], forbidden: tuple[int, ...]) -> bool:
    if INIT_BLOCK in span or GOAL_BLOCK in span:
        return False
    return not any(b in span for b in forbidden)


def _apply_wrap(plan: BdpoPlan, span: set[int]) -> Optional[BdpoPlan]:
    work = plan.clone()
    try:
        wrap_blocks(work, span)
    except CycleDetected:
        return None
    return work


def _pc_candidates(plan: BdpoPlan, edge: tuple[int, int], fact: Fact
                   ) -> Iterator[BdpoPlan]:
    """Rebind the consumer to an earlier producer after wrapping the source
    together with an earlier consumer of the same fact."""
    b_i, b_j = edge
    anchors = []
    for b_c in sorted(plan.roots, key=plan.pos_key):
        if b_c in (INIT_BLOCK, GOAL_BLOCK) or b_c == b_i:
            continue
        if not plan.ordered(b_c, b_i):
            continue
        if fact not in plan.blocks[b_c].pre:
            continue
        span = between_closure(plan, {b_c, b_i})
        if not _span_ok(plan, span, (b_j,)):
            continue
        anchors.append((len(span), plan.pos_key(b_c), span))
    for _, _, span in sorted(anchors, key=lambda t: (t[0], t[1])):
        work = _apply_wrap(plan, span)
        if work is None:
            continue
        wrapped = work.block_of_step(
            min(plan.blocks[next(iter(span))].members))
        if (wrapped, fact) not in work.links:
            continue
        b_p = work.links[(wrapped, fact)]
        if b_p not in candidate_producers(work, fact, b_j):
            continue
        work.links[(b_j, fact)] = b_p
        try:
            work.rebuild_closure()
        except CycleDetected:
            continue
        work.refresh()
        yield work


def _cd_candidates(plan: BdpoPlan, edge: tuple[int, int], fact: Fact
                   ) -> Iterator[BdpoPlan]:
    """Wrap the consumer with an internal producer (producer side), else wrap
    the deleter with a later restorer (deleter side)."""
    b_i, b_j = edge
    producer_side = []
    for b_p in sorted(plan.roots, key=plan.pos_key):
        if b_p in (INIT_BLOCK, GOAL_BLOCK):
            continue
        if fact not in plan.blocks[b_p].prod or not plan.ordered(b_p, b_i):
            continue
        span = between_closure(plan, {b_p, b_i})
        if not _span_ok(plan, span, (b_j,)):
            continue
        producer_side.append((len(span), plan.pos_key(b_p), span))
    for _, _, span in sorted(producer_side, key=lambda t: (t[0], t[1])):
        work = _apply_wrap(plan, span)
        if work is None:
            continue
        wrapped = work.block_of_step(min(plan.blocks[b_i].members))
        if fact in work.blocks[wrapped].cons:
            continue
        work.refresh()
        yield work

    deleter_side = []
    for b_p in sorted(plan.roots, key=plan.pos_key):
        if b_p in (INIT_BLOCK, GOAL_BLOCK):
            continue
        if fact not in plan.blocks[b_p].prod or not plan.ordered(b_j, b_p):
            continue
        span = between_closure(plan, {b_j, b_p})
        if not _span_ok(plan, span, (b_i,)):
            continue
        deleter_side.append((len(span), plan.pos_key(b_p), span))
    for _, _, span in sorted(deleter_side, key=lambda t: (t[0], t[1])):
        work = _apply_wrap(plan, span)
        if work is None:
            continue
        wrapped = work.block_of_step(min(plan.blocks[b_j].members))
        if fact in work.blocks[wrapped].dels:
            continue
        work.refresh()
        yield work


def _dp_candidates(plan: BdpoPlan, edge: tuple[int, int], fact: Fact
                   ) -> Iterator[BdpoPlan]:
    """Bundle the producer with every block it feeds the fact to."""
    b_i, b_j = edge
    consumers = {c for (c, f), p in plan.links.items()
                 if p == b_j and f == fact}
    if not consumers:
        return
    if GOAL_BLOCK in consumers or INIT_BLOCK in consumers:
        return
    span = between_closure(plan, consumers | {b_j})
    if len(span) < 2 or not _span_ok(plan, span, (b_i,)):
        return
    work = _apply_wrap(plan, span)
    if work is None:
        return
    wrapped = work.block_of_step(min(plan.blocks[b_j].members))
    if any(p == wrapped and f == fact for (c, f), p in work.links.items()):
        return
    work.refresh()
    yield work


def _reason_candidates(plan: BdpoPlan, edge: tuple[int, int], reason: Reason
                       ) -> Iterator[BdpoPlan]:
    if reason.kind == PC:
        yield from _pc_candidates(plan, edge, reason.fact)
    elif reason.kind == CD:
        yield from _cd_candidates(plan, edge, reason.fact)
    else:
        yield from _dp_candidates(plan, edge, reason.fact)


def try_remove_reason(plan: BdpoPlan, edge: tuple[int, int],
                      reason: Reason) -> bool:
    """Attempt one reason removal via its matching rule; mutates the plan on
    success and leaves it untouched on failure."""
    if reason not in plan.reasons().get(edge, set()):
        raise ValueError(f"{reason} not on edge {edge}")
    si = min(plan.blocks[edge[0]].members)
    sj = min(plan.blocks[edge[1]].members)
    for work in _reason_candidates(plan, edge, reason):
        a2 = work.block_of_step(si)
        b2 = work.block_of_step(sj)
        if reason in work.reasons().get((a2, b2), set()):
            continue
        if not work.validate():
            continue
        plan.adopt(work)
        return True
    return False


_MAX_CASCADE_DEPTH = 32


def _attempt_edge(plan: BdpoPlan, si: int, sj: int,
                  depth: int = 0) -> Optional[BdpoPlan]:
    """Depth-first removal of every reason on the (evolving) edge between the
    blocks containing steps si and sj.  Returns the transformed plan or None."""
    if depth > _MAX_CASCADE_DEPTH:
        return None
    a = plan.block_of_step(si)
    b = plan.block_of_step(sj)
    if a == b:
        return None
    reasons = plan.reasons().get((a, b), set())
    if not reasons:
        return plan
    reason = min(reasons, key=reason_sort_key)
    for work in _reason_candidates(plan, (a, b), reason):
        a2 = work.block_of_step(si)
        b2 = work.block_of_step(sj)
        if a2 == b2:
            continue
        if reason in work.reasons().get((a2, b2), set()):
            continue
        if not work.validate():
            continue
        result = _attempt_edge(work, si, sj, depth + 1)
        if result is not None:
            return result
    return None


def _scan_edges(plan: BdpoPlan, pure_dp_only: bool) -> list[tuple[int, int]]:
    out = []
    for (a, b), rs in plan.reasons().items():
        if a in (INIT_BLOCK, GOAL_BLOCK) or b in (INIT_BLOCK, GOAL_BLOCK):
            continue
        if not rs:
            continue
        if pure_dp_only and any(r.kind != DP for r in rs):
            continue
        out.append((a, b))
    return sorted(out, key=lambda e: (plan.pos_key(e[0]), plan.pos_key(e[1])))


def block_deorder(plan: BdpoPlan) -> BdpoPlan:
    """Greedy fixpoint of reason removal over the committed orderings.

    Pure-DP edges are tried first and commit whenever flex does not drop
    (bundling a producer with its consumers is enabling even when no pair is
    freed yet); every other edge commits only on a strict flex gain.  After
    each commit the scan restarts from the top.
    """
    plan = plan.clone()
    plan.rebuild_closure()
    while True:
        committed = False
        for wave, strict in (("dp", False), ("all", True)):
            before = plan.flex().unordered_pairs
            for a, b in _scan_edges(plan, pure_dp_only=(wave == "dp")):
                si = min(plan.blocks[a].members)
                sj = min(plan.blocks[b].members)
                result = _attempt_edge(plan, si, sj)
                if result is None:
                    continue
                after = result.flex().unordered_pairs
                if (after > before) if strict else (after >= before):
                    plan = result
                    committed = True
                    break
            if committed:
                break
        if not committed:
            return plan
