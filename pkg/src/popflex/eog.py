"""Order generalization: turn a valid sequential plan into a POP.

For every consumed fact the earliest producer with no intervening deleter is
committed as the causal link; afterwards every pair of steps in sequence
order receives demotion/promotion commitments wherever one step's deletions
conflict with the other's links.
"""

from __future__ import annotations

from .pop import CD, DP, GOAL_ID, INIT_ID, InvalidInput, PartialOrderPlan, Reason
from .task import PlanningTask, SequentialPlan, validate_sequential


def eog(task: PlanningTask, plan: SequentialPlan) -> PartialOrderPlan:
    """Deorder a valid sequential plan; output orderings are a subset of
    the input's total order."""
    report = validate_sequential(task, plan)
    if not report:
        raise InvalidInput(report.reason)

    pop = PartialOrderPlan(task)
    pop.install_synthetics()
    seq = [INIT_ID]
    for op_idx in plan.steps:
        seq.append(pop.add_step(task.operators[op_idx]))
    seq.append(GOAL_ID)

    profiles = {s: pop.profile(s) for s in seq}

    # earliest producer with no intervening deleter, for every consumed fact
    for i, consumer in enumerate(seq):
        cons, _, _ = profiles[consumer]
        for fact in sorted(cons):
            for k in range(i):
                producer = seq[k]
                if fact not in profiles[producer][1]:
                    continue
                if any(fact in profiles[seq[j]][2] for j in range(k + 1, i)):
                    continue
                pop.links[(consumer, fact)] = producer
                break

    # demotion (consumer before deleter) and promotion (deleter before
    # producer) commitments, oriented with the input sequence
    producer_links: dict[int, set] = {}
    for (c, f), p in pop.links.items():
        producer_links.setdefault(p, set()).add(f)
    for i, a in enumerate(seq):
        if a in (INIT_ID, GOAL_ID):
            continue
        cons_a, _, del_a = profiles[a]
        consumed_linked = {f for (c, f) in pop.links if c == a}
        for b in seq[i + 1:]:
            if b in (INIT_ID, GOAL_ID):
                continue
            del_b = profiles[b][2]
            reasons = set()
            for f in sorted(consumed_linked & del_b):
                if pop.links.get((a, f)) != b:
                    reasons.add(Reason(CD, f))
            for f in sorted(del_a & producer_links.get(b, set())):
                reasons.add(Reason(DP, f))
            if reasons:
                pop.resolutions.setdefault((a, b), set()).update(reasons)

    pop.rebuild_closure()
    return pop
