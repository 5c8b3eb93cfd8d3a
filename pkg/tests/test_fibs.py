from fractions import Fraction

import pytest

from popflex.bdpo import block_deorder, init_bdpo
from popflex.corpus import (chain_task, elevator_plan, elevator_task,
                            independent_task, inverse_pair_task, random_task)
from popflex.eog import eog
from popflex.fibs import (AcceptanceCriteria, FibsConfig,
                          backward_justify, build_subtask, fibs,
                          greedy_justify, reduce_plan, resolve,
                          substitution_deorder, try_remove_block)
from popflex.task import SequentialPlan, validate_sequential

CFG = FibsConfig(max_plans=5, max_expansions=4000)


def elevator_bd():
    task = elevator_task()
    return task, block_deorder(init_bdpo(eog(task, elevator_plan(task))))


def var_of(task, name):
    return next(i for i, v in enumerate(task.variables) if v.name == name)


def val_of(task, var, value_name):
    return task.variables[var].values.index(value_name)


def test_build_subtask_for_p2_block():
    task, plan = elevator_bd()
    first = next(b for b in plan.real_roots()
                 if plan.blocks[b].primitive
                 and plan.steps[plan.blocks[b].step].name == "move_down e1 n3 n2")
    p2_block = next(b for b in plan.real_roots()
                    if any(plan.steps[s].name == "board p2 n1 e1"
                           for s in plan.blocks[b].members))
    st = build_subtask(task, plan, first, p2_block, CFG)
    lift1 = var_of(task, "lift-e1")
    lift2 = var_of(task, "lift-e2")
    p2 = var_of(task, "pos-p2")
    assert st.init[lift1] == val_of(task, lift1, "at-n3")
    assert st.init[lift2] == val_of(task, lift2, "at-n1")
    assert st.init[p2] == val_of(task, p2, "at-n1")
    assert st.goal == {p2: val_of(task, p2, "at-n2")}
    assert st.cost_bound == 4


def test_build_subtask_goal_of_goal_feeder():
    task, plan = elevator_bd()
    p1_block = next(b for b in plan.real_roots()
                    if any(plan.steps[s].name == "leave p1 n3 e1"
                           for s in plan.blocks[b].members))
    board = next(b for b in plan.real_roots()
                 if plan.blocks[b].primitive
                 and plan.steps[plan.blocks[b].step].name == "board p1 n2 e1")
    st = build_subtask(task, plan, board, p1_block, CFG)
    p1 = var_of(task, "pos-p1")
    assert st.goal[p1] == val_of(task, p1, "at-n3")


def test_resolve_replaces_p2_block_with_second_lift():
    task, plan = elevator_bd()
    first = next(b for b in plan.real_roots()
                 if plan.blocks[b].primitive
                 and plan.steps[plan.blocks[b].step].name == "move_down e1 n3 n2")
    p2_block = next(b for b in plan.real_roots()
                    if any(plan.steps[s].name == "board p2 n1 e1"
                           for s in plan.blocks[b].members))
    out, ok = resolve(task, plan, first, p2_block,
                      AcceptanceCriteria("rfo"), CFG)
    assert ok
    assert out.flex().frac > plan.flex().frac
    assert out.cost() <= plan.cost()
    names = {out.steps[s].name for s in out.real_step_ids()}
    assert "board p2 n1 e2" in names


def test_resolve_fails_on_flat_flex():
    task, seq = independent_task(3)
    plan = init_bdpo(eog(task, seq))
    a, b = plan.real_roots()[:2]
    # no ordering between any pair: resolve must refuse (nothing to gain)
    out, ok = resolve(task, plan, a, b, AcceptanceCriteria("rfo"), CFG)
    assert not ok


def test_resolve_fails_on_unsolvable_subtask():
    task, seq = chain_task(4)
    plan = init_bdpo(eog(task, seq))
    roots = plan.real_roots()
    out, ok = resolve(task, plan, roots[0], roots[1],
                      AcceptanceCriteria("rfo"), CFG)
    assert not ok and out is plan


def test_substitution_deorder_identity_when_nothing_improvable():
    task, seq = chain_task(4)
    plan = init_bdpo(eog(task, seq))
    out, attempted, accepted = substitution_deorder(
        task, plan, AcceptanceCriteria("rfo"), CFG)
    assert accepted == 0
    assert out.flex().value == plan.flex().value


def test_fibs_single_step_plan():
    task, _ = chain_task(1)
    out, reports = fibs(task, SequentialPlan([0]), CFG)
    assert out.flex().value == 1.0
    assert [r.phase for r in reports] == ["EOG", "SD1", "BD", "SD2"]


def test_fibs_independent_plan_flat_from_the_start():
    task, seq = independent_task(3)
    out, reports = fibs(task, seq, CFG)
    assert reports[0].flex_after == 1.0
    assert all(r.flex_after == 1.0 for r in reports)


def test_fibs_rfo_monotone_on_randoms():
    cfg = FibsConfig(max_plans=3, max_expansions=2000, reduce="gj")
    for seed in range(25):
        task, seq = random_task(seed)
        out, reports = fibs(task, seq, cfg)
        assert out.validate()
        flexes = [r.flex_after for r in reports
                  if r.phase in ("EOG", "SD1", "BD", "SD2")]
        assert all(b >= a - 1e-12 for a, b in zip(flexes, flexes[1:]))
        costs = [r.cost_after for r in reports]
        assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_fibs_rco_accepts_only_cost_improvements():
    crit = AcceptanceCriteria("rco")
    assert crit.accepts(Fraction(1, 2), 5, Fraction(1, 4), 4)
    assert crit.accepts(Fraction(1, 2), 5, Fraction(3, 4), 5)
    assert not crit.accepts(Fraction(1, 2), 5, Fraction(3, 4), 6)
    assert not crit.accepts(Fraction(1, 2), 5, Fraction(1, 2), 5)


def test_rfo_criteria():
    crit = AcceptanceCriteria("rfo")
    assert crit.accepts(Fraction(1, 2), 5, Fraction(3, 4), 5)
    assert not crit.accepts(Fraction(1, 2), 5, Fraction(3, 4), 6)
    assert not crit.accepts(Fraction(1, 2), 5, Fraction(1, 2), 4)


# ---------------------------------------------------------------------------
# justification


def test_backward_justify_all_goal_chains():
    task, plan = elevator_bd()
    assert backward_justify(plan) == set()


def test_backward_justify_misses_internal_blocks():
    # the trailing move_down sits inside a compound block, so the outer-block
    # marking cannot see it
    task, plan = elevator_bd()
    inner_names = set()
    for b in plan.real_roots():
        blk = plan.blocks[b]
        if not blk.primitive:
            inner_names |= {plan.steps[s].name for s in blk.members}
    assert "move_down e1 n3 n2" in inner_names
    assert backward_justify(plan) == set()


def test_backward_justify_catches_dangling_root():
    task, seq = inverse_pair_task()
    pop = eog(task, seq)
    plan = init_bdpo(pop)
    redundant = backward_justify(plan)
    names = {task.operators[plan.blocks[b].step and 0].name
             for b in redundant} if False else \
        {plan.steps[plan.blocks[b].step].name for b in redundant}
    assert names == {"toggle-on", "toggle-off"}


def test_reduce_bj_removes_danglers():
    task, seq = inverse_pair_task()
    plan = init_bdpo(eog(task, seq))
    out = reduce_plan(plan, "bj")
    names = {out.steps[s].name for s in out.real_step_ids()}
    assert names == {"work-a", "work-b"}
    assert out.validate()


def _elevator_after_second_lift_substitution():
    """The walkthrough state in which the trailing lift move turns redundant:
    the p2 pipeline has been moved onto the second lift."""
    from popflex.substitution import candidate_from_pop, substitute
    from popflex.task import PlanningTask

    task, plan = elevator_bd()
    target = next(b for b in plan.real_roots()
                  if any(plan.steps[s].name == "board p2 n1 e1"
                         for s in plan.blocks[b].members))
    p2 = var_of(task, "pos-p2")
    sub_task = PlanningTask(task.variables, task.operators, dict(task.init),
                            {p2: val_of(task, p2, "at-n2")})
    sub_plan = SequentialPlan([task.operator_index(n) for n in
                               ("board p2 n1 e2", "move_up e2 n1 n2",
                                "leave p2 n2 e2")])
    outcome = substitute(plan, target, candidate_from_pop(eog(sub_task,
                                                              sub_plan)))
    assert outcome.success
    return task, outcome.plan


def test_trailing_move_down_not_redundant_before_substitution():
    # the p2 pipeline still runs on lift e1 and needs the lift back down
    task, plan = elevator_bd()
    redundant_steps = set()
    for b in greedy_justify(plan):
        redundant_steps |= {plan.steps[s].name
                            for s in plan.blocks[b].members}
    assert "move_down e1 n3 n2" not in redundant_steps


def test_greedy_justify_finds_trailing_move_down_after_substitution():
    task, plan = _elevator_after_second_lift_substitution()
    redundant_steps = set()
    for b in greedy_justify(plan):
        redundant_steps |= {plan.steps[s].name
                            for s in plan.blocks[b].members}
    assert "move_down e1 n3 n2" in redundant_steps


def test_reduce_gj_on_substituted_elevator():
    task, plan = _elevator_after_second_lift_substitution()
    assert plan.cost() == 8
    out = reduce_plan(plan, "gj")
    assert out.cost() == 7
    assert out.validate()
    counts = [out.steps[s].name for s in out.real_step_ids()]
    assert counts.count("move_down e1 n3 n2") == 1
    score = out.flex()
    assert (score.total_pairs - score.unordered_pairs,
            score.total_pairs) == (9, 21)
    for lin in out.all_linearizations():
        assert validate_sequential(task, lin)


def test_greedy_justify_empty_on_perfectly_justified_plan():
    task, seq = chain_task(4)
    plan = init_bdpo(eog(task, seq))
    assert greedy_justify(plan) == set()


def test_greedy_justify_removes_inverse_block():
    task, seq = inverse_pair_task()
    plan = block_deorder(init_bdpo(eog(task, seq)))
    out = reduce_plan(plan, "gj")
    names = {out.steps[s].name for s in out.real_step_ids()}
    assert names == {"work-a", "work-b"}
    assert out.validate()


def test_try_remove_block_keeps_needed_blocks():
    task, seq = chain_task(3)
    plan = init_bdpo(eog(task, seq))
    for b in plan.real_roots():
        assert try_remove_block(plan, b) is None


def test_time_limit_stops_substitution_phases_cleanly():
    task = elevator_task()
    seq = elevator_plan(task)
    cfg = FibsConfig(time_limit=0.0, reduce="gj")
    out, reports = fibs(task, seq, cfg)
    # substitution phases give up immediately, deordering still runs
    by_phase = {r.phase: r for r in reports}
    assert by_phase["SD1"].accepted == 0
    assert by_phase["SD2"].accepted == 0
    assert abs(by_phase["BD"].flex_after - 16 / 36) < 1e-9
    assert out.validate()


def test_fibs_rco_pipeline_on_randoms():
    cfg = FibsConfig(criteria=AcceptanceCriteria("rco"), reduce="gj",
                     max_plans=3, max_expansions=1500)
    for seed in range(15):
        task, seq = random_task(seed)
        out, reports = fibs(task, seq, cfg)
        assert out.validate()
        costs = [r.cost_after for r in reports]
        assert all(b <= a for a, b in zip(costs, costs[1:]))
