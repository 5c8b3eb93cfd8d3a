"""Bundled tasks: the two-lift elevator walkthrough, micro instances for
each deordering rule and threat shape, a loosely coupled scaling task, and
a random task generator used by the property and acceptance suites.

The elevator has three floors; lift e1 serves all of them while lift e2
only shuttles between the bottom two, so p1's trip to the top floor stays
an e1 job and the only profitable substitution moves p2's leg onto e2.
"""

from __future__ import annotations

import random
from typing import Optional

from .task import (OperatorDef, PlanningTask, SequentialPlan, Variable,
                   apply_op, make_operator, parse_plan)

FLOORS = ["n1", "n2", "n3"]


def elevator_task(two_lifts: bool = True) -> PlanningTask:
    """The worked elevator instance: p1 from n2 to n3, p2 from n1 to n2,
    lift e1 starting at n3 and (optionally) lift e2 starting at n1."""
    lifts = {"e1": FLOORS}
    if two_lifts:
        lifts["e2"] = ["n1", "n2"]

    variables = []
    var_idx = {}
    for lift, floors in lifts.items():
        var_idx[lift] = len(variables)
        variables.append(Variable(f"lift-{lift}",
                                  tuple(f"at-{f}" for f in floors)))
    passengers = ["p1", "p2"]
    for p in passengers:
        var_idx[p] = len(variables)
        values = tuple(f"at-{f}" for f in FLOORS) + tuple(
            f"in-{lift}" for lift in lifts)
        variables.append(Variable(f"pos-{p}", values))

    def floor_val(f: str) -> int:
        return FLOORS.index(f)

    def ploc(p: str, where: str) -> int:
        names = variables[var_idx[p]].values
        return names.index(where)

    ops = []
    for lift, floors in lifts.items():
        lv = var_idx[lift]
        for lo, hi in zip(floors, floors[1:]):
            ops.append(make_operator(
                f"move_up {lift} {lo} {hi}",
                [(lv, floors.index(lo))], [(lv, floors.index(hi))]))
            ops.append(make_operator(
                f"move_down {lift} {hi} {lo}",
                [(lv, floors.index(hi))], [(lv, floors.index(lo))]))
    for p in passengers:
        pv = var_idx[p]
        for lift, floors in lifts.items():
            lv = var_idx[lift]
            for f in floors:
                ops.append(make_operator(
                    f"board {p} {f} {lift}",
                    [(lv, floors.index(f)), (pv, ploc(p, f"at-{f}"))],
                    [(pv, ploc(p, f"in-{lift}"))]))
                ops.append(make_operator(
                    f"leave {p} {f} {lift}",
                    [(lv, floors.index(f)), (pv, ploc(p, f"in-{lift}"))],
                    [(pv, ploc(p, f"at-{f}"))]))

    init = {var_idx["e1"]: floor_val("n3"),
            var_idx["p1"]: ploc("p1", "at-n2"),
            var_idx["p2"]: ploc("p2", "at-n1")}
    if two_lifts:
        init[var_idx["e2"]] = 0  # at-n1
    goal = {var_idx["p1"]: ploc("p1", "at-n3"),
            var_idx["p2"]: ploc("p2", "at-n2")}
    return PlanningTask(variables, ops, init, goal)


ELEVATOR_PLAN_TEXT = """\
(move_down e1 n3 n2)
(board p1 n2 e1)
(move_up e1 n2 n3)
(leave p1 n3 e1)
(move_down e1 n3 n2)
(move_down e1 n2 n1)
(board p2 n1 e1)
(move_up e1 n1 n2)
(leave p2 n2 e1)
"""


def elevator_plan(task: PlanningTask) -> SequentialPlan:
    return parse_plan(ELEVATOR_PLAN_TEXT, task)


# ---------------------------------------------------------------------------
# micro tasks, one knob each


def chain_task(length: int = 4) -> tuple[PlanningTask, SequentialPlan]:
    """A fully serialized dependent chain: step k consumes step k-1's product."""
    variables = [Variable("stage", tuple(f"s{i}" for i in range(length + 1)))]
    ops = [make_operator(f"advance {i}", [(0, i)], [(0, i + 1)])
           for i in range(length)]
    task = PlanningTask(variables, ops, {0: 0}, {0: length})
    return task, SequentialPlan(list(range(length)))


def independent_task(n: int = 3) -> tuple[PlanningTask, SequentialPlan]:
    """n steps over disjoint variables; already maximally flexible."""
    variables = [Variable(f"v{i}", ("off", "on")) for i in range(n)]
    ops = [make_operator(f"set {i}", [(i, 0)], [(i, 1)]) for i in range(n)]
    task = PlanningTask(variables, ops, {i: 0 for i in range(n)},
                        {i: 1 for i in range(n)})
    return task, SequentialPlan(list(range(n)))


def produce_consume_task() -> tuple[PlanningTask, SequentialPlan]:
    variables = [Variable("res", ("no", "yes")), Variable("done", ("no", "yes"))]
    ops = [make_operator("produce", [(0, 0)], [(0, 1)]),
           make_operator("consume", [(0, 1)], [(1, 1)])]
    task = PlanningTask(variables, ops, {0: 0, 1: 0}, {1: 1})
    return task, SequentialPlan([0, 1])


def inverse_pair_task() -> tuple[PlanningTask, SequentialPlan]:
    """A toggle that flips a switch on and back off for no reason, between
    two useful steps."""
    variables = [Variable("switch", ("off", "on")),
                 Variable("a", ("0", "1")),
                 Variable("b", ("0", "1"))]
    ops = [make_operator("work-a", [(1, 0)], [(1, 1)]),
           make_operator("toggle-on", [(0, 0)], [(0, 1)]),
           make_operator("toggle-off", [(0, 1)], [(0, 0)]),
           make_operator("work-b", [(2, 0)], [(2, 1)])]
    task = PlanningTask(variables, ops, {0: 0, 1: 0, 2: 0},
                        {1: 1, 2: 1})
    return task, SequentialPlan([0, 1, 2, 3])


def scaling_task(chains: int = 75, depth: int = 4
                 ) -> tuple[PlanningTask, SequentialPlan]:
    """Loosely coupled chains; the plan interleaves them round-robin."""
    variables = [Variable(f"c{i}", tuple(f"s{j}" for j in range(depth + 1)))
                 for i in range(chains)]
    ops = []
    for i in range(chains):
        for j in range(depth):
            ops.append(make_operator(f"step {i} {j}", [(i, j)], [(i, j + 1)]))
    task = PlanningTask(variables, ops,
                        {i: 0 for i in range(chains)},
                        {i: depth for i in range(chains)})
    steps = [i * depth + j for j in range(depth) for i in range(chains)]
    return task, SequentialPlan(steps)


# ---------------------------------------------------------------------------
# random valid tasks built by forward simulation


def random_task(seed: int, max_vars: int = 8, max_steps: int = 12,
                unit_costs: bool = False
                ) -> tuple[PlanningTask, SequentialPlan]:
    """Generate a task together with a valid plan for it.

    Operators are invented while random-walking forward from a random
    initial state, so the recorded walk is valid by construction; operators
    get reused when applicable to keep repetitions possible.
    """
    rng = random.Random(seed)
    n_vars = rng.randint(2, max_vars)
    sizes = [rng.randint(2, 4) for _ in range(n_vars)]
    variables = [Variable(f"v{i}", tuple(f"d{j}" for j in range(sizes[i])))
                 for i in range(n_vars)]
    init = {i: rng.randrange(sizes[i]) for i in range(n_vars)}

    ops: list[OperatorDef] = []
    seen: dict[tuple, int] = {}
    state = dict(init)
    steps: list[int] = []
    n_steps = rng.randint(1, max_steps)
    while len(steps) < n_steps:
        reuse = ops and rng.random() < 0.3
        op_idx: Optional[int] = None
        if reuse:
            applicable = [i for i, op in enumerate(ops)
                          if all(state.get(f.var) == f.val for f in op.pre)]
            if applicable:
                op_idx = rng.choice(applicable)
        if op_idx is None:
            pre_vars = rng.sample(range(n_vars),
                                  rng.randint(0, min(2, n_vars)))
            pre = [(v, state[v]) for v in pre_vars]
            n_eff = rng.randint(1, min(2, n_vars))
            eff_vars = rng.sample(range(n_vars), n_eff)
            eff = [(v, rng.randrange(sizes[v])) for v in eff_vars]
            cost = 1 if unit_costs else rng.randint(1, 4)
            key = (tuple(sorted(pre)), tuple(sorted(eff)), cost)
            if key in seen:
                op_idx = seen[key]
            else:
                op_idx = len(ops)
                seen[key] = op_idx
                ops.append(make_operator(f"op{op_idx}", pre, eff, cost))
        steps.append(op_idx)
        state = apply_op(ops[op_idx], state)

    goal_vars = rng.sample(range(n_vars), rng.randint(1, n_vars))
    goal = {v: state[v] for v in goal_vars}
    task = PlanningTask(variables, ops, init, goal)
    return task, SequentialPlan(steps)


def micro_corpus() -> dict[str, tuple[PlanningTask, SequentialPlan]]:
    """Named task/plan pairs for the CLI corpus and the determinism check."""
    out: dict[str, tuple[PlanningTask, SequentialPlan]] = {}
    t = elevator_task(two_lifts=True)
    out["elevator2"] = (t, elevator_plan(t))
    t1 = elevator_task(two_lifts=False)
    out["elevator1"] = (t1, elevator_plan(t1))
    out["chain4"] = chain_task(4)
    out["independent3"] = independent_task(3)
    out["produce-consume"] = produce_consume_task()
    out["inverse-pair"] = inverse_pair_task()
    for seed in (11, 23, 37, 41):
        out[f"random{seed}"] = random_task(seed)
    return out
