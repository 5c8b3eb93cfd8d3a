"""Replacing a block of a BDPO plan with another subplan.

The substituting block may come from outside the plan (a candidate subplan,
inserted and wired to the earliest producers of its preconditions) or from
inside it.  Causal links previously supported by the replaced block are
re-pointed to the substitute, which must produce the corresponding facts.
Threats raised by the exchange are resolved by demotion, promotion, or, when
either would close a cycle and the conflicting pair involves the substitute,
by substituting the conflicting block away as well.  Failure leaves the
input plan untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .bdpo import (BdpoPlan, GOAL_BLOCK, INIT_BLOCK,
                   earliest_producer_for_insert)
from .pop import (CD, DP, GOAL_ID, INIT_ID, CycleDetected, PartialOrderPlan,
                  Reason)
from .task import Fact, OperatorDef

logger = logging.getLogger(__name__)

UNBOUND_PRECONDITION = "UnboundPrecondition"
MISSING_PRODUCT = "MissingProduct"
UNRESOLVABLE_THREAT = "UnresolvableThreat"
EMPTY_CANDIDATE = "EmptyCandidate"


@dataclass(frozen=True)
class CandidateBlock:
    """A partial-order subplan offered as a replacement block."""
    ops: tuple[OperatorDef, ...]
    links: tuple[tuple[int, Fact, int], ...]      # (producer idx, fact, consumer idx)
    resolutions: tuple[tuple[int, int, Reason], ...]
    cost: int

    def __len__(self) -> int:
        return len(self.ops)

    def op_names(self) -> tuple[str, ...]:
        return tuple(sorted(op.name for op in self.ops))


def candidate_from_pop(pop: PartialOrderPlan) -> CandidateBlock:
    """Strip the synthetic endpoints from a POP and renumber its steps.

    Links from the init step disappear; the facts they supplied surface in
    the block's precondition.
    """
    real = pop.real_steps()
    index = {s: i for i, s in enumerate(real)}
    links = tuple(sorted(
        (index[p], f, index[c])
        for (c, f), p in pop.links.items()
        if p not in (INIT_ID, GOAL_ID) and c not in (INIT_ID, GOAL_ID)))
    resolutions = tuple(sorted(
        (index[a], index[b], r)
        for (a, b), rs in pop.resolutions.items()
        for r in sorted(rs)
        if a not in (INIT_ID, GOAL_ID) and b not in (INIT_ID, GOAL_ID)))
    return CandidateBlock(
        ops=tuple(pop.steps[s] for s in real),
        links=links,
        resolutions=resolutions,
        cost=sum(pop.steps[s].cost for s in real))


@dataclass
class SubstitutionOutcome:
    plan: BdpoPlan
    success: bool
    reason: str = ""
    trace: list[str] = field(default_factory=list)
    new_block: Optional[int] = None

    def to_json(self) -> str:
        import json
        return json.dumps({"success": self.success, "reason": self.reason,
                           "trace": self.trace}, indent=2) + "\n"


def _materialize(plan: BdpoPlan, cand: CandidateBlock) -> int:
    """Install the candidate as a fresh root block with fresh step ids."""
    step_ids = []
    child_ids = []
    for op in cand.ops:
        sid = plan.fresh_step_id()
        plan.steps[sid] = op
        step_ids.append(sid)
    for sid in step_ids:
        child_ids.append(plan.make_primitive(sid))
    if len(child_ids) == 1:
        bid = child_ids[0]
        plan.roots.add(bid)
        return bid
    ilinks = {(child_ids[c], f): child_ids[p] for p, f, c in cand.links}
    iresolutions: dict[tuple[int, int], set[Reason]] = {}
    for a, b, r in cand.resolutions:
        iresolutions.setdefault((child_ids[a], child_ids[b]), set()).add(r)
    bid = plan.make_compound(child_ids, ilinks, iresolutions)
    plan.roots.add(bid)
    return bid


def detect_threats(plan: BdpoPlan) -> list[tuple[int, tuple[int, Fact, int]]]:
    """Unresolved (deleter, causal link) conflicts in the current plan."""
    return plan.unresolved_threats()


def _delete_block(plan: BdpoPlan, bid: int) -> None:
    doomed_steps = set(plan.blocks[bid].members)
    for sub in sorted(plan._descendant_blocks(bid)):
        plan.blocks.pop(sub, None)
    plan.roots.discard(bid)
    for s in doomed_steps:
        plan.steps.pop(s, None)
    plan.links = {(c, f): p for (c, f), p in plan.links.items()
                  if c != bid and p != bid}
    plan.resolutions = {pair: rs for pair, rs in plan.resolutions.items()
                        if bid not in pair}


def substitute(plan: BdpoPlan, old: int,
               new: CandidateBlock | int,
               _new_marker: Optional[int] = None,
               _depth: int = 0) -> SubstitutionOutcome:
    """Replace block `old` with `new`, preserving plan validity.

    `new` is either a CandidateBlock (external) or the id of a block already
    in the plan (internal).  On failure the returned plan is the input,
    untouched.
    """
    if _depth > 8:
        return SubstitutionOutcome(plan, False, UNRESOLVABLE_THREAT,
                                   ["recursion limit"])
    if old not in plan.roots or old in (INIT_BLOCK, GOAL_BLOCK):
        raise ValueError(f"block {old} is not a replaceable root block")

    trace: list[str] = []
    work = plan.clone()

    external = not isinstance(new, int)
    if external and len(new) == 0:
        # empty replacement: a pure deletion, allowed when the old block
        # supplies nothing
        if any(p == old for p in work.links.values()):
            return SubstitutionOutcome(plan, False, MISSING_PRODUCT, trace)
        _delete_block(work, old)
        try:
            work.rebuild_closure()
        except CycleDetected:
            return SubstitutionOutcome(plan, False, UNRESOLVABLE_THREAT, trace)
        work.refresh()
        outcome = _resolve_all_threats(work, None, trace, _depth)
        if outcome is not None:
            return SubstitutionOutcome(plan, False, outcome, trace)
        if not work.validate():
            return SubstitutionOutcome(plan, False, UNRESOLVABLE_THREAT, trace)
        trace.append(f"deleted block {old}")
        return SubstitutionOutcome(work, True, EMPTY_CANDIDATE, trace)

    if external:
        b_new = _materialize(work, new)
        work.rebuild_closure()
        trace.append(f"inserted candidate as block {b_new}")
        for fact in sorted(work.blocks[b_new].pre):
            producer = earliest_producer_for_insert(
                work, fact, b_new, exclude=frozenset([old]))
            if producer is None:
                return SubstitutionOutcome(plan, False, UNBOUND_PRECONDITION,
                                           trace + [f"no producer for {fact}"])
            work.links[(b_new, fact)] = producer
            work.rebuild_closure()
            trace.append(f"link {producer} -{fact}-> {b_new}")
    else:
        b_new = new
        if b_new not in work.roots:
            raise ValueError(f"block {b_new} is not in the plan")

    marker = b_new if _new_marker is None else _new_marker

    # re-point every causal link the old block supports
    supported = sorted((c, f) for (c, f), p in work.links.items() if p == old)
    for c, f in supported:
        if c == b_new:
            continue
        if f not in work.blocks[b_new].prod:
            return SubstitutionOutcome(plan, False, MISSING_PRODUCT,
                                       trace + [f"{b_new} cannot produce {f}"])
        work.links[(c, f)] = b_new
        trace.append(f"relink {b_new} -{f}-> {c}")

    _delete_block(work, old)
    try:
        work.rebuild_closure()
    except CycleDetected:
        return SubstitutionOutcome(plan, False, UNRESOLVABLE_THREAT,
                                   trace + ["cycle after relinking"])
    work.refresh()

    failure = _resolve_all_threats(work, marker, trace, _depth)
    if failure is not None:
        return SubstitutionOutcome(plan, False, failure, trace)

    work.refresh()
    report = work.validate()
    if not report:
        logger.debug("substitution left an invalid plan: %s", report.reason)
        return SubstitutionOutcome(plan, False, UNRESOLVABLE_THREAT,
                                   trace + [report.reason])
    return SubstitutionOutcome(work, True, "", trace, new_block=marker)


def _resolve_all_threats(work: BdpoPlan, marker: Optional[int],
                         trace: list[str], depth: int) -> Optional[str]:
    """Demotion first, promotion second, internal substitution last.

    Mutates `work`; returns a failure code or None when every threat is
    resolved.
    """
    guard = 0
    while True:
        guard += 1
        if guard > 10000:
            return UNRESOLVABLE_THREAT
        threats = work.unresolved_threats()
        if not threats:
            return None
        threats.sort(key=lambda item: (work.pos_key(item[1][0]),
                                       work.pos_key(item[1][2]),
                                       work.pos_key(item[0])))
        t, (p, f, c) = threats[0]
        if not work.ordered(t, c):
            edge, reason = (c, t), Reason(CD, f)
        else:
            edge, reason = (t, p), Reason(DP, f)
        if not work.ordered(edge[1], edge[0]):
            work.resolutions.setdefault(edge, set()).add(reason)
            work.rebuild_closure()
            trace.append(f"resolved {t} vs {p}-{f}->{c} via {reason}")
            continue
        # both orderings would close a cycle: internal substitution, only
        # when the conflicting pair involves the substitute block and the
        # victim is an ordinary block
        if marker is not None and t == marker \
                and c not in (INIT_BLOCK, GOAL_BLOCK):
            inner = substitute(work, c, t, _new_marker=marker,
                               _depth=depth + 1)
        elif marker is not None and c == marker \
                and t not in (INIT_BLOCK, GOAL_BLOCK):
            inner = substitute(work, t, c, _new_marker=marker,
                               _depth=depth + 1)
        else:
            return UNRESOLVABLE_THREAT
        if not inner.success:
            return UNRESOLVABLE_THREAT
        trace.extend(inner.trace)
        work.adopt(inner.plan)
