"""Weighted partial MaxSAT encoding of minimum plan reordering.

Propositional variables: one inclusion variable per step, one ordering
variable per ordered step pair, and one causal-link variable per
(producer, fact, consumer) triple.  Hard clauses pin transitivity, endpoint
placement, precondition support, and threat freedom; soft unit clauses
penalize each ordering (weight 1) and, in cost-minimizing mode, each
included operator (weight cost + n^2 + 1, which dominates every possible
ordering total).  Without cost minimization every original operator is
forced into the target plan, which keeps the encoding a pure reordering.

A structured exhaustive optimizer and a plain enumeration oracle cover tiny
instances; larger instances are emit-only (solve the file externally).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .pop import GOAL_ID, INIT_ID, PartialOrderPlan, closure_from_edges
from .task import Fact, PlanningTask, SequentialPlan, cons_prod_del

MAX_ENCODE_STEPS = 200


class EncodingTooLarge(Exception):
    """Step count beyond the transitivity-clause budget."""


class TooLarge(Exception):
    """Instance beyond the enumeration oracle's reach."""


class InvalidModel(Exception):
    """Model violates a hard clause or decodes to an unsupported plan."""


@dataclass
class VarCatalog:
    x: dict[int, int] = field(default_factory=dict)
    tau: dict[tuple[int, int], int] = field(default_factory=dict)
    gamma: dict[tuple[int, Fact, int], int] = field(default_factory=dict)
    rev: dict[int, tuple] = field(default_factory=dict)
    steps: list[int] = field(default_factory=list)

    def new_var(self, tag: tuple) -> int:
        idx = len(self.rev) + 1
        self.rev[idx] = tag
        return idx

    @property
    def n_vars(self) -> int:
        return len(self.rev)


@dataclass
class Wcnf:
    hard: list[tuple[int, ...]] = field(default_factory=list)
    soft: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)
    n_vars: int = 0

    @property
    def top(self) -> int:
        return sum(w for w, _ in self.soft) + 1

    def add_hard(self, *lits: int) -> None:
        assert lits
        self.hard.append(tuple(lits))

    def add_soft(self, weight: int, *lits: int) -> None:
        assert lits and weight > 0
        self.soft.append((weight, tuple(lits)))

    def to_dimacs(self) -> str:
        top = self.top
        lines = [f"p wcnf {self.n_vars} {len(self.hard) + len(self.soft)} {top}"]
        for clause in self.hard:
            lines.append(" ".join(str(l) for l in (top,) + clause + (0,)))
        for weight, clause in self.soft:
            lines.append(" ".join(str(l) for l in (weight,) + clause + (0,)))
        return "\n".join(lines) + "\n"


def parse_dimacs_wcnf(text: str) -> Wcnf:
    wcnf = Wcnf()
    top = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("p"):
            parts = line.split()
            assert parts[1] == "wcnf"
            wcnf.n_vars = int(parts[2])
            top = int(parts[4])
            continue
        nums = [int(x) for x in line.split()]
        assert nums[-1] == 0
        weight, lits = nums[0], tuple(nums[1:-1])
        if weight == top:
            wcnf.hard.append(lits)
        else:
            wcnf.soft.append((weight, lits))
    return wcnf


def model_from_v_line(text: str) -> set[int]:
    """True variables from a DIMACS 'v ...' solution line."""
    true_vars = set()
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("v"):
            line = line[1:]
        for tok in line.split():
            lit = int(tok)
            if lit > 0:
                true_vars.add(lit)
    return true_vars


def encode_mr(task: PlanningTask, pop: PartialOrderPlan, mclcp: bool = False
              ) -> tuple[Wcnf, VarCatalog]:
    """Emit the reordering encoding for the given plan's steps."""
    steps = sorted(pop.steps)
    if len(steps) - 2 > MAX_ENCODE_STEPS:
        raise EncodingTooLarge(
            f"{len(steps) - 2} steps exceed the {MAX_ENCODE_STEPS}-step cap")
    cat = VarCatalog(steps=steps)
    profiles = {s: pop.profile(s) for s in steps}

    for s in steps:
        cat.x[s] = cat.new_var(("x", s))
    for a in steps:
        for b in steps:
            if a != b:
                cat.tau[(a, b)] = cat.new_var(("tau", a, b))
    for c in steps:
        if c == INIT_ID:
            continue
        cons_c = profiles[c][0]
        for f in sorted(cons_c):
            for p in steps:
                if p == c or p == GOAL_ID:
                    continue
                if f in profiles[p][1]:
                    cat.gamma[(p, f, c)] = cat.new_var(("gamma", p, f, c))

    wcnf = Wcnf()

    # transitivity over every ordered triple
    for a, b, c in itertools.permutations(steps, 3):
        wcnf.add_hard(-cat.tau[(a, b)], -cat.tau[(b, c)], cat.tau[(a, c)])
    # synthetic endpoints are always in
    wcnf.add_hard(cat.x[INIT_ID])
    wcnf.add_hard(cat.x[GOAL_ID])
    # included steps sit between the endpoints
    for s in steps:
        if s in (INIT_ID, GOAL_ID):
            continue
        wcnf.add_hard(-cat.x[s], cat.tau[(INIT_ID, s)])
        wcnf.add_hard(-cat.x[s], cat.tau[(s, GOAL_ID)])
    wcnf.add_hard(cat.tau[(INIT_ID, GOAL_ID)])
    # support: every consumed fact of an included step has a causal link
    for c in steps:
        if c == INIT_ID:
            continue
        for f in sorted(profiles[c][0]):
            producers = [p for p in steps
                         if (p, f, c) in cat.gamma]
            support = [cat.gamma[(p, f, c)] for p in producers]
            wcnf.add_hard(-cat.x[c], *support)
            for p in producers:
                g = cat.gamma[(p, f, c)]
                wcnf.add_hard(-g, cat.tau[(p, c)])
                wcnf.add_hard(-g, cat.x[p])
    # threat freedom: deleters fall outside every link's span
    for (p, f, c), g in sorted(cat.gamma.items()):
        for t in steps:
            if t in (p, c, INIT_ID):
                continue
            if f in profiles[t][2]:
                wcnf.add_hard(-g, -cat.x[t],
                              cat.tau[(t, p)], cat.tau[(c, t)])
    # soft: each ordering costs 1
    for (a, b), v in sorted(cat.tau.items()):
        wcnf.add_soft(1, -v)
    if mclcp:
        k = len(steps) ** 2 + 1
        for s in steps:
            if s in (INIT_ID, GOAL_ID):
                continue
            wcnf.add_soft(pop.steps[s].cost + k, -cat.x[s])
    else:
        for s in steps:
            if s in (INIT_ID, GOAL_ID):
                continue
            wcnf.add_hard(cat.x[s])

    wcnf.n_vars = cat.n_vars
    return wcnf, cat


def check_model(wcnf: Wcnf, true_vars: set[int]) -> int:
    """Violated-soft weight of a model; raises on a broken hard clause."""

    def satisfied(clause: tuple[int, ...]) -> bool:
        return any((l > 0) == (abs(l) in true_vars) for l in clause)

    for clause in wcnf.hard:
        if not satisfied(clause):
            raise InvalidModel(f"hard clause {clause} violated")
    return sum(w for w, clause in wcnf.soft if not satisfied(clause))


def decode_model(true_vars: set[int], cat: VarCatalog, task: PlanningTask,
                 pop: PartialOrderPlan, wcnf: Optional[Wcnf] = None
                 ) -> PartialOrderPlan:
    """Rebuild a POP from a model; hard clauses are re-checked first."""
    if wcnf is not None:
        check_model(wcnf, true_vars)
    included = [s for s in cat.steps if cat.x[s] in true_vars]
    if INIT_ID not in included or GOAL_ID not in included:
        raise InvalidModel("synthetic endpoints excluded")
    out = PartialOrderPlan(task)
    for s in included:
        out.steps[s] = pop.steps[s]
    out._next_id = max(included) + 1
    for (p, f, c), g in sorted(cat.gamma.items()):
        if g not in true_vars:
            continue
        if p not in out.steps or c not in out.steps:
            raise InvalidModel(f"link {p}->{c} touches an excluded step")
        if cat.tau[(p, c)] not in true_vars:
            raise InvalidModel(f"link {p}->{c} without its ordering")
        if (c, f) not in out.links:
            out.links[(c, f)] = p
    for (a, b), v in sorted(cat.tau.items()):
        if v in true_vars and a in out.steps and b in out.steps:
            out.extra_orderings.add((a, b))
    report = out.validate()
    if not report:
        raise InvalidModel(report.reason)
    return out


def ordering_count(pop: PartialOrderPlan) -> int:
    """Ordered pairs over the real steps of a validated POP."""
    flexscore = pop.flex()
    return flexscore.total_pairs - flexscore.unordered_pairs


# ---------------------------------------------------------------------------
# structured exhaustive optimum of the encoding


def optimal_model(task: PlanningTask, pop: PartialOrderPlan,
                  mclcp: bool = False) -> tuple[set[int], int]:
    """Exhaustive optimum over the encoding's meaningful assignments.

    Enumerates step subsets (singleton when not cost-minimizing), causal-link
    choices, and per-threat resolutions; every other ordering variable is
    completed by transitive closure, which can only lower the objective.
    The winning assignment is checked against the emitted clauses.
    """
    wcnf, cat = encode_mr(task, pop, mclcp)
    steps = cat.steps
    real = [s for s in steps if s not in (INIT_ID, GOAL_ID)]
    profiles = {s: pop.profile(s) for s in steps}
    k = len(steps) ** 2 + 1

    best: Optional[tuple[int, tuple, set[int]]] = None

    subsets: Iterable[tuple[int, ...]]
    if mclcp:
        subsets = itertools.chain.from_iterable(
            itertools.combinations(real, r) for r in range(len(real) + 1))
    else:
        subsets = [tuple(real)]

    for subset in subsets:
        included = [INIT_ID] + list(subset) + [GOAL_ID]
        op_weight = 0 if not mclcp else sum(
            pop.steps[s].cost + k for s in subset)
        if mclcp and best is not None and op_weight >= best[0]:
            continue
        consumer_needs = []
        feasible = True
        for c in included:
            if c == INIT_ID:
                continue
            for f in sorted(profiles[c][0]):
                producers = [p for p in included
                             if (p, f, c) in cat.gamma]
                if not producers:
                    feasible = False
                    break
                consumer_needs.append((c, f, producers))
            if not feasible:
                break
        if not feasible:
            continue

        for links in _link_choices(consumer_needs):
            result = _complete_orderings(included, links, profiles)
            if result is None:
                continue
            closure, resolution_edges = result
            n_tau = sum(len(v) for v in closure.values())
            objective = op_weight + n_tau
            key = _canonical_key(included, closure)
            if best is None or (objective, key) < (best[0], best[1]):
                model = _assignment(cat, included, links, closure)
                best = (objective, key, model)

    if best is None:
        raise InvalidModel("encoding unsatisfiable")
    violated = check_model(wcnf, best[2])
    # soft weight from never-true tau/x variables outside the included set
    return best[2], violated


def _link_choices(needs: list[tuple[int, Fact, list[int]]]):
    if not needs:
        yield {}
        return
    heads = [ps for (_, _, ps) in needs]
    for combo in itertools.product(*heads):
        yield {(c, f): p for (c, f, _), p in zip(needs, combo)}


def _complete_orderings(included, links, profiles):
    """Forced edges from links, endpoints, and threat resolutions; branches
    on each unresolved threat and returns the best completion."""
    base_edges = set()
    for (c, f), p in links.items():
        if p != c:
            base_edges.add((p, c))
    for s in included:
        if s != INIT_ID:
            base_edges.add((INIT_ID, s))
        if s != GOAL_ID:
            base_edges.add((s, GOAL_ID))

    threats = []
    for (c, f), p in sorted(links.items()):
        for t in included:
            if t in (p, c, INIT_ID):
                continue
            if f in profiles[t][2]:
                threats.append((t, p, c))

    best = None

    def rec(idx: int, edges: set):
        nonlocal best
        try:
            closure = closure_from_edges(included, sorted(edges))
        except Exception:
            return
        while idx < len(threats):
            t, p, c = threats[idx]
            if p in closure[t] or t in closure[c]:
                idx += 1
                continue
            break
        if idx == len(threats):
            n_tau = sum(len(v) for v in closure.values())
            if best is None or n_tau < best[0]:
                best = (n_tau, closure, edges)
            elif n_tau == best[0]:
                if _closure_key(closure) < _closure_key(best[1]):
                    best = (n_tau, closure, edges)
            return
        t, p, c = threats[idx]
        rec(idx + 1, edges | {(t, p)})
        rec(idx + 1, edges | {(c, t)})

    rec(0, base_edges)
    if best is None:
        return None
    return best[1], best[2]


def _closure_key(closure):
    return tuple(sorted((a, b) for a, succ in closure.items() for b in succ))


def _canonical_key(included, closure):
    return (tuple(sorted(included)), _closure_key(closure))


def _assignment(cat: VarCatalog, included, links, closure) -> set[int]:
    true_vars = set()
    for s in included:
        true_vars.add(cat.x[s])
    for (c, f), p in links.items():
        true_vars.add(cat.gamma[(p, f, c)])
    for a in included:
        for b in closure[a]:
            true_vars.add(cat.tau[(a, b)])
    return true_vars


# ---------------------------------------------------------------------------
# enumeration oracle over subsets and transitively closed orders


_POSET_CACHE: dict[int, list[tuple[int, ...]]] = {}


def _posets(n: int) -> list[tuple[int, ...]]:
    """All strict partial orders on n labeled elements, each encoded as a
    tuple of successor bitmasks.

    Element n-1 extends each smaller poset: its predecessor set must be
    down-closed, its successor set up-closed, and every chosen predecessor
    must already precede every chosen successor, which keeps the restriction
    to the old elements untouched and makes the enumeration bijective.
    """
    if n in _POSET_CACHE:
        return _POSET_CACHE[n]
    if n == 0:
        result = [()]
    else:
        result = []
        k = n - 1
        for smaller in _posets(n - 1):
            for preds in _closed_subsets(smaller, k, down=True):
                for succs in _closed_subsets(smaller, k, down=False):
                    if preds & succs:
                        continue
                    if any(preds & (1 << p) and (succs & ~smaller[p])
                           for p in range(k)):
                        continue
                    rows = [smaller[e] | (1 << k) if preds & (1 << e)
                            else smaller[e] for e in range(k)]
                    rows.append(succs)
                    result.append(tuple(rows))
    _POSET_CACHE[n] = sorted(result)
    return _POSET_CACHE[n]


def _closed_subsets(rows: tuple[int, ...], n: int, down: bool) -> list[int]:
    """Bitmasks closed downward (all predecessors) or upward (all successors)."""
    out = []
    for mask in range(1 << n):
        ok = True
        for e in range(n):
            if not mask & (1 << e):
                continue
            if down:
                preds = [p for p in range(n) if rows[p] & (1 << e)]
                if any(not mask & (1 << p) for p in preds):
                    ok = False
                    break
            else:
                if rows[e] & ~mask:
                    ok = False
                    break
        if ok:
            out.append(mask)
    return out


def brute_force_mr(task: PlanningTask, plan: SequentialPlan,
                   mclcp: bool = False) -> PartialOrderPlan:
    """Optimal reordering by explicit enumeration; instances cap at 6 steps."""
    n = len(plan.steps)
    if n > 6:
        raise TooLarge(f"{n} steps")
    ops = [task.operators[i] for i in plan.steps]
    sizes = task.domain_sizes()
    profiles = [cons_prod_del(op, sizes) for op in ops]
    from .task import make_operator
    init_op = make_operator("<init>", [], sorted(task.init.items()), 0)
    goal_op = make_operator("<goal>", sorted(task.goal.items()), [], 0)
    init_prof = cons_prod_del(init_op, sizes)
    goal_prof = cons_prod_del(goal_op, sizes)

    best: Optional[tuple[tuple, list[int], tuple[int, ...]]] = None

    subsets: Iterable[tuple[int, ...]]
    if mclcp:
        subsets = itertools.chain.from_iterable(
            itertools.combinations(range(n), r) for r in range(n + 1))
    else:
        subsets = [tuple(range(n))]

    for subset in subsets:
        m = len(subset)
        cost = sum(ops[i].cost for i in subset)
        for rows in _posets(m):
            if not _poset_valid(subset, rows, profiles, init_prof, goal_prof):
                continue
            n_ordered = sum(bin(r).count("1") for r in rows)
            if mclcp:
                objective = (cost, n_ordered)
            else:
                objective = (n_ordered,)
            key = (objective, subset, rows)
            if best is None or key < best[0]:
                best = (key, list(subset), rows)

    if best is None:
        raise InvalidModel("no valid reordering exists")
    _, subset, rows = best
    out = PartialOrderPlan(task)
    out.install_synthetics()
    ids = []
    for i in subset:
        ids.append(out.add_step(ops[i]))
    for a_pos, a in enumerate(subset):
        for b_pos, b in enumerate(subset):
            if rows[a_pos] & (1 << b_pos):
                out.extra_orderings.add((ids[a_pos], ids[b_pos]))
    for c_pos, c in enumerate(subset):
        for f in sorted(profiles[c][0]):
            p = _pick_producer(c_pos, f, subset, rows, profiles, init_prof)
            if p is not None:
                out.links[(ids[c_pos], f)] = (
                    INIT_ID if p == -1 else ids[p])
    for f in sorted(goal_prof[0]):
        p = _pick_producer(None, f, subset, rows, profiles, init_prof)
        if p is not None:
            out.links[(GOAL_ID, f)] = INIT_ID if p == -1 else ids[p]
    out.rebuild_closure()
    return out


def _before(a: Optional[int], b: Optional[int], rows) -> bool:
    """Order test with -1 as init and None as goal."""
    if a == -1:
        return b != -1
    if b is None:
        return a is not None and a != -1 or a == -1
    if a is None:
        return False
    if b == -1:
        return False
    return bool(rows[a] & (1 << b))


def _poset_valid(subset, rows, profiles, init_prof, goal_prof) -> bool:
    m = len(subset)
    consumers = [(pos, profiles[subset[pos]][0]) for pos in range(m)]
    consumers.append((None, goal_prof[0]))
    for c_pos, cons in consumers:
        for f in cons:
            if _pick_producer(c_pos, f, subset, rows, profiles,
                              init_prof) is None:
                return False
    return True


def _pick_producer(c_pos, f, subset, rows, profiles, init_prof):
    """Earliest valid producer position (or -1 for init, None if none)."""
    m = len(subset)
    candidates = []
    if f in init_prof[1]:
        candidates.append(-1)
    for p_pos in range(m):
        if p_pos == c_pos:
            continue
        if f in profiles[subset[p_pos]][1]:
            if c_pos is None or _before(p_pos, c_pos, rows):
                candidates.append(p_pos)
    for p_pos in candidates:
        ok = True
        for t_pos in range(m):
            if t_pos == c_pos or t_pos == p_pos:
                continue
            if f not in profiles[subset[t_pos]][2]:
                continue
            before_p = _before(t_pos, p_pos, rows)
            after_c = c_pos is not None and _before(c_pos, t_pos, rows)
            if not before_p and not after_c:
                ok = False
                break
        if ok:
            return p_pos
    return None
