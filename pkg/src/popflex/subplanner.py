"""Cost-bounded satisficing search for replacement subplans.

Greedy best-first search under an additive delete-relaxation heuristic,
pruning paths whose accumulated cost exceeds the bound.  The search keeps
going after the first solution, banning already-emitted operator multisets,
so several alternative subplans come out; results are sorted by cost and
then by operator index sequence, which makes the whole thing deterministic.

With max_plans=None the solver switches to exhaustive loop-free enumeration,
which on tiny tasks yields exactly the set of cost-bounded plans that never
revisit a state.  An external planner can be plugged in through a subprocess
hook speaking SAS+ in, plan files out.
"""

from __future__ import annotations

import glob as globmod
import heapq
import logging
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass
from typing import Optional

from .task import (PlanningTask, SequentialPlan, State, apply_op,
                   emit_sas, parse_plan, validate_sequential)

logger = logging.getLogger(__name__)

PLANNER_CMD_ENV = "POPFLEX_PLANNER_CMD"


@dataclass
class Subtask:
    base: PlanningTask
    init: State
    goal: dict[int, int]
    cost_bound: int
    max_len: int
    time_bound: float = 5.0
    max_plans: Optional[int] = 10
    max_expansions: int = 20000

    def as_task(self) -> PlanningTask:
        return PlanningTask(self.base.variables, self.base.operators,
                            dict(self.init), dict(self.goal),
                            metric=self.base.metric)


def _h_add(task: PlanningTask, state: State, goal: dict[int, int]
           ) -> Optional[int]:
    """Additive delete-relaxation estimate; None when the goal is unreachable
    even ignoring deletes."""
    INF = float("inf")
    cost: dict = {}
    for v, d in state.items():
        cost[(v, d)] = 0
    changed = True
    while changed:
        changed = False
        for op in task.operators:
            total = 0
            for f in op.pre:
                c = cost.get((f.var, f.val))
                if c is None:
                    total = None
                    break
                total += c
            if total is None:
                continue
            new_cost = total + op.cost
            for f in op.eff:
                old = cost.get((f.var, f.val), INF)
                if new_cost < old:
                    cost[(f.var, f.val)] = new_cost
                    changed = True
    total = 0
    for v, d in sorted(goal.items()):
        c = cost.get((v, d))
        if c is None:
            return None
        total += c
    return total


def _goal_satisfied(state: State, goal: dict[int, int]) -> bool:
    return all(state.get(v) == d for v, d in goal.items())


def solve_subtask(st: Subtask) -> list[SequentialPlan]:
    """Plans for the subtask, valid and within the cost bound, cheapest first."""
    cmd = os.environ.get(PLANNER_CMD_ENV)
    if cmd:
        return _solve_external(st, cmd)
    if st.max_plans is None:
        plans = _enumerate_exhaustive(st)
    else:
        plans = _solve_gbfs(st)
    plans.sort(key=lambda p: (p.cost(st.base), tuple(p.steps)))
    return plans


def _applicable(task: PlanningTask, state: State) -> list[int]:
    out = []
    for i, op in enumerate(task.operators):
        if all(state.get(f.var) == f.val for f in op.pre):
            out.append(i)
    return out


def _solve_gbfs(st: Subtask) -> list[SequentialPlan]:
    task = st.as_task()
    deadline = time.monotonic() + st.time_bound
    h0 = _h_add(task, st.init, st.goal)
    if h0 is None:
        return []
    found: list[SequentialPlan] = []
    banned: set[tuple] = set()
    counter = 0
    start_key = tuple(sorted(st.init.items()))
    heap: list[tuple] = [(h0, 0, counter, st.init, [])]
    best_g: dict[tuple, int] = {start_key: 0}
    expansions = 0
    while heap:
        if len(found) >= (st.max_plans or 0):
            break
        expansions += 1
        if expansions > st.max_expansions:
            break
        if expansions % 256 == 0 and time.monotonic() > deadline:
            break
        h, g, _, state, path = heapq.heappop(heap)
        if _goal_satisfied(state, st.goal):
            key = tuple(sorted(path))
            if key not in banned:
                banned.add(key)
                found.append(SequentialPlan(list(path)))
            # keep searching for alternatives from other queue entries
        if len(path) >= st.max_len:
            continue
        for op_idx in _applicable(task, state):
            op = task.operators[op_idx]
            g2 = g + op.cost
            if g2 > st.cost_bound:
                continue
            state2 = apply_op(op, state)
            key2 = tuple(sorted(state2.items()))
            prev = best_g.get(key2)
            if prev is not None and g2 >= prev:
                continue
            best_g[key2] = g2
            h2 = _h_add(task, state2, st.goal)
            if h2 is None:
                continue
            counter += 1
            heapq.heappush(heap, (h2, g2, counter, state2, path + [op_idx]))
    if _goal_satisfied(st.init, st.goal):
        empty = SequentialPlan([])
        if tuple() not in banned:
            found.append(empty)
    return found


def _enumerate_exhaustive(st: Subtask) -> list[SequentialPlan]:
    task = st.as_task()
    found: list[SequentialPlan] = []
    seen_states = {tuple(sorted(st.init.items()))}

    def rec(state: State, path: list[int], g: int) -> None:
        if _goal_satisfied(state, st.goal):
            found.append(SequentialPlan(list(path)))
        if len(path) >= st.max_len:
            return
        for op_idx in _applicable(task, state):
            op = task.operators[op_idx]
            g2 = g + op.cost
            if g2 > st.cost_bound:
                continue
            state2 = apply_op(op, state)
            key = tuple(sorted(state2.items()))
            if key in seen_states:
                continue
            seen_states.add(key)
            path.append(op_idx)
            rec(state2, path, g2)
            path.pop()
            seen_states.discard(key)

    rec(dict(st.init), [], 0)
    return found


def _solve_external(st: Subtask, cmd: str) -> list[SequentialPlan]:
    """Run a planner subprocess on the subtask.

    The command may reference {sas} (task file path) and {plans} (output
    prefix); plan files are collected as <prefix>* in IPC plan format.
    """
    task = st.as_task()
    plans: list[SequentialPlan] = []
    with tempfile.TemporaryDirectory(prefix="popflex-planner-") as tmp:
        sas_path = os.path.join(tmp, "task.sas")
        plan_prefix = os.path.join(tmp, "plan")
        with open(sas_path, "w", encoding="utf-8") as fh:
            fh.write(emit_sas(task))
        command = cmd.format(sas=sas_path, plans=plan_prefix)
        try:
            subprocess.run(command, shell=True, cwd=tmp,
                           timeout=st.time_bound,
                           capture_output=True, check=False)
        except subprocess.TimeoutExpired:
            logger.warning("external planner timed out after %.1fs",
                           st.time_bound)
        for path in sorted(globmod.glob(plan_prefix + "*")):
            with open(path, encoding="utf-8") as fh:
                try:
                    plan = parse_plan(fh.read(), task)
                except Exception:
                    continue
            if not validate_sequential(task, plan):
                continue
            if plan.cost(task) > st.cost_bound or len(plan.steps) > st.max_len:
                continue
            plans.append(plan)
    unique: dict[tuple, SequentialPlan] = {}
    for p in plans:
        unique.setdefault(tuple(p.steps), p)
    return list(unique.values())
