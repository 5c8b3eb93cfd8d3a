import sys
import textwrap

from popflex.corpus import chain_task, elevator_task
from popflex.subplanner import (PLANNER_CMD_ENV, Subtask, solve_subtask)
from popflex.task import (PlanningTask, Variable, make_operator,
                          validate_sequential)


def test_elevator_second_lift_subplan_found():
    task = elevator_task()
    p2 = next(i for i, v in enumerate(task.variables) if v.name == "pos-p2")
    goal = {p2: task.variables[p2].values.index("at-n2")}
    st = Subtask(base=task, init=dict(task.init), goal=goal,
                 cost_bound=4, max_len=16)
    plans = solve_subtask(st)
    assert plans
    names = [tuple(p.names(task)) for p in plans]
    assert ("board p2 n1 e2", "move_up e2 n1 n2", "leave p2 n2 e2") in names
    # cheapest first
    costs = [p.cost(task) for p in plans]
    assert costs == sorted(costs)
    for p in plans:
        assert p.cost(task) <= 4
        assert validate_sequential(st.as_task(), p)


def test_goal_in_init_yields_empty_plan_first():
    task, _ = chain_task(3)
    st = Subtask(base=task, init={0: 1}, goal={0: 1}, cost_bound=2, max_len=4)
    plans = solve_subtask(st)
    assert plans and plans[0].steps == []


def test_unreachable_goal_gives_no_plans():
    task, _ = chain_task(3)
    st = Subtask(base=task, init={0: 2}, goal={0: 0}, cost_bound=5, max_len=6)
    assert solve_subtask(st) == []


def test_cost_bound_is_respected():
    task, _ = chain_task(5)
    st = Subtask(base=task, init={0: 0}, goal={0: 5}, cost_bound=4, max_len=10)
    assert solve_subtask(st) == []


def _branching_task():
    # two routes of different cost to the same goal
    variables = [Variable("loc", ("a", "b", "c"))]
    ops = [make_operator("cheap a->c", [(0, 0)], [(0, 2)], cost=3),
           make_operator("a->b", [(0, 0)], [(0, 1)], cost=1),
           make_operator("b->c", [(0, 1)], [(0, 2)], cost=1)]
    return PlanningTask(variables, ops, {0: 0}, {0: 2})


def test_multiple_plans_in_cost_order():
    task = _branching_task()
    st = Subtask(base=task, init=dict(task.init), goal=dict(task.goal),
                 cost_bound=3, max_len=4, max_plans=10)
    plans = solve_subtask(st)
    assert [p.cost(task) for p in plans] == [2, 3]


def test_exhaustive_mode_matches_enumeration_oracle():
    task = _branching_task()
    st = Subtask(base=task, init=dict(task.init), goal=dict(task.goal),
                 cost_bound=5, max_len=3, max_plans=None)
    got = {tuple(p.steps) for p in solve_subtask(st)}

    # oracle: depth-first over loop-free operator sequences
    def enumerate_plans(state, path, g, visited):
        out = []
        if all(state.get(v) == d for v, d in task.goal.items()):
            out.append(tuple(path))
        if len(path) >= st.max_len:
            return out
        for i, op in enumerate(task.operators):
            if not all(state.get(f.var) == f.val for f in op.pre):
                continue
            if g + op.cost > st.cost_bound:
                continue
            from popflex.task import apply_op
            nxt = apply_op(op, state)
            key = tuple(sorted(nxt.items()))
            if key in visited:
                continue
            out += enumerate_plans(nxt, path + [i], g + op.cost,
                                   visited | {key})
        return out

    expected = set(enumerate_plans(dict(task.init), [], 0,
                                   {tuple(sorted(task.init.items()))}))
    assert got == expected


def test_determinism():
    task = elevator_task()
    p2 = next(i for i, v in enumerate(task.variables) if v.name == "pos-p2")
    goal = {p2: task.variables[p2].values.index("at-n2")}
    st = Subtask(base=task, init=dict(task.init), goal=goal,
                 cost_bound=4, max_len=12)
    a = [tuple(p.steps) for p in solve_subtask(st)]
    b = [tuple(p.steps) for p in solve_subtask(st)]
    assert a == b


def test_external_planner_hook(tmp_path, monkeypatch):
    task, _ = chain_task(2)
    script = tmp_path / "fake-planner.py"
    script.write_text(textwrap.dedent("""\
        import sys
        sas, prefix = sys.argv[1], sys.argv[2]
        with open(prefix + ".1", "w") as fh:
            fh.write("(advance 0)\\n(advance 1)\\n")
        with open(prefix + ".2", "w") as fh:
            fh.write("(not a real line\\n")
        """))
    monkeypatch.setenv(PLANNER_CMD_ENV,
                       f"{sys.executable} {script} {{sas}} {{plans}}")
    st = Subtask(base=task, init={0: 0}, goal={0: 2}, cost_bound=4, max_len=4)
    plans = solve_subtask(st)
    assert len(plans) == 1
    assert plans[0].steps == [0, 1]
