"""Exact Stackelberg solver for the two-buyer, two-seller toy economy.

Works entirely in rational arithmetic.  Equilibria are found by honest
enumeration: subscription subsets, boundary fee values derived from agent
indifference, and (for rational matching) a grid of query-diversion
fractions.  Every candidate is validated against unilateral subscription
deviations before the platform-optimal one is returned.

The geometry: a one-dimensional latent line with two sellers two units
apart, matching utility 2 - |q - s|, unit seller surplus per transaction, a
per-epoch seller fixed cost equal to the query multiplier m, and a world
friction pinned at 1 (0 in the ideal benchmark).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .core import FeeSchedule, LatentPoint
from .matching import MatchingStrategy

BUYERS = ("B1", "B2")
SELLERS = ("S1", "S2")
GROUPS = ("Q11", "Q12", "Q2")
GROUP_OWNER = {"Q11": "B1", "Q12": "B1", "Q2": "B2"}
GROUP_WEIGHT = {"Q11": 1, "Q12": 1, "Q2": 2}  # in units of m
KNOWN = {"B1": ("S2",), "B2": ("S1", "S2")}

NO_PLATFORM = "no_platform"
REVENUE_MYOPIC = "revenue_myopic"
REVENUE_RATIONAL = "revenue_rational_matching"
SURPLUS_AWARE_CASE = "surplus_aware"
IDEAL = "ideal"
CASES = (NO_PLATFORM, REVENUE_MYOPIC, REVENUE_RATIONAL, SURPLUS_AWARE_CASE, IDEAL)

DIVERSION_GRID = 64

EPSILON_LIMIT = Fraction(1, 8)


@dataclass(frozen=True)
class ToyEconomy:
    m: Fraction
    epsilon: Fraction
    friction: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        if self.m <= 0:
            raise ValueError("query multiplier m must be positive")
        if not 0 < self.epsilon < EPSILON_LIMIT:
            raise ValueError(f"epsilon must lie in (0, {EPSILON_LIMIT}) to keep orderings strict")

    @staticmethod
    def make(m, epsilon) -> "ToyEconomy":
        return ToyEconomy(Fraction(m), Fraction(epsilon))

    def utility(self, group: str, seller: str) -> Fraction:
        e = self.epsilon
        table = {
            ("Q11", "S1"): 2 - e,
            ("Q11", "S2"): e,
            ("Q12", "S1"): 1 - e,
            ("Q12", "S2"): 1 + e,
            ("Q2", "S1"): -1 - e,
            ("Q2", "S2"): 1 - e,
        }
        return table[(group, seller)]

    def queries(self, group: str) -> Fraction:
        return GROUP_WEIGHT[group] * self.m


@dataclass(frozen=True)
class EquilibriumResult:
    case: str
    fees: tuple[Fraction, Fraction]
    on_platform: frozenset[str]
    matching: dict[str, tuple[tuple[str, str, Fraction], ...]]
    buyer_surplus: dict[str, Fraction]
    seller_surplus: dict[str, Fraction]
    seller_queries: dict[str, Fraction]
    bankrupt: frozenset[str]
    revenue: Fraction
    welfare: Fraction
    objective: Fraction


@dataclass(frozen=True)
class _Routing:
    """Fee-independent outcome of a configuration: routed queries only."""

    buyer_gross: dict[str, Fraction]
    seller_counts: dict[str, Fraction]
    seller_platform_counts: dict[str, Fraction]
    matching: dict[str, tuple[tuple[str, str, Fraction], ...]]
    operating: frozenset[str]


def _myopic_assignment(economy: ToyEconomy, groups: Iterable[str], on_sellers: frozenset[str]):
    out = {}
    for g in groups:
        if not on_sellers:
            continue
        best = max(sorted(on_sellers), key=lambda s: economy.utility(g, s))
        out[g] = ((best, economy.queries(g)),)
    return out


class _Solver:
    def __init__(self, economy: ToyEconomy, friction: Fraction | None = None, known=None):
        self.eco = economy
        self.mu = economy.friction if friction is None else friction
        self.known = KNOWN if known is None else known
        self._route_cache: dict = {}

    def route(
        self,
        on_buyers: frozenset[str],
        on_sellers: frozenset[str],
        assignment: dict[str, tuple[tuple[str, Fraction], ...]],
    ) -> _Routing:
        key = (on_buyers, on_sellers, tuple(sorted((g, a) for g, a in assignment.items())))
        hit = self._route_cache.get(key)
        if hit is not None:
            return hit
        eco = self.eco
        operating = set(SELLERS)
        while True:
            buyer_gross = {b: Fraction(0) for b in BUYERS}
            counts = {s: Fraction(0) for s in SELLERS}
            platform_counts = {s: Fraction(0) for s in SELLERS}
            matching: dict[str, list[tuple[str, str, Fraction]]] = {g: [] for g in GROUPS}

            def world_option(group: str, buyer: str) -> tuple[str | None, Fraction]:
                best, best_u = None, None
                for s in self.known[buyer]:
                    if s not in operating:
                        continue
                    u = eco.utility(group, s)
                    if best_u is None or u > best_u:
                        best, best_u = s, u
                if best is None or best_u <= self.mu:
                    return None, Fraction(0)
                return best, best_u - self.mu

            for g in GROUPS:
                b = GROUP_OWNER[g]
                total = eco.queries(g)
                w_seller, w_surplus = world_option(g, b)
                portions: list[tuple[str | None, Fraction]] = []
                if b in on_buyers and g in assignment:
                    assigned = Fraction(0)
                    for seller, count in assignment[g]:
                        if count > 0:
                            portions.append((seller, count))
                            assigned += count
                    if assigned < total:
                        portions.append((None, total - assigned))
                else:
                    portions.append((None, total))
                for target, count in portions:
                    u_p = eco.utility(g, target) if target is not None and target in on_sellers else None
                    if u_p is not None and u_p > 0 and u_p >= w_surplus:
                        buyer_gross[b] += u_p * count
                        counts[target] += count
                        platform_counts[target] += count
                        matching[g].append((target, "platform", count))
                    elif w_seller is not None and w_surplus > 0:
                        buyer_gross[b] += w_surplus * count
                        counts[w_seller] += count
                        matching[g].append((w_seller, "world", count))
            shut = {
                s
                for s in operating
                if s not in on_sellers and counts[s] - eco.m < 0
            }
            if not shut:
                routing = _Routing(
                    buyer_gross=buyer_gross,
                    seller_counts=counts,
                    seller_platform_counts=platform_counts,
                    matching={g: tuple(v) for g, v in matching.items()},
                    operating=frozenset(operating),
                )
                self._route_cache[key] = routing
                return routing
            operating -= shut

    def solve(self, case: str, alpha: Fraction | None = None) -> EquilibriumResult:
        eco = self.eco
        if case == NO_PLATFORM:
            return self._finish(case, frozenset(), frozenset(), {}, Fraction(0), Fraction(0), alpha)
        if case == IDEAL:
            ideal = _Solver(eco, friction=Fraction(0), known={b: SELLERS for b in BUYERS})
            return ideal._finish(case, frozenset(), frozenset(), {}, Fraction(0), Fraction(0), alpha)
        if case == SURPLUS_AWARE_CASE:
            if alpha is None:
                raise ValueError("surplus_aware needs alpha")
            threshold = Fraction(1, 2) + 2 * eco.epsilon / (1 + 2 * eco.epsilon)
            if not threshold < alpha < 1:
                raise ValueError(
                    f"alpha must lie in ({threshold}, 1) for the surplus-aware equilibrium; got {alpha}"
                )
        best: EquilibriumResult | None = None
        for on_sellers in _subsets(SELLERS):
            for on_buyers in _subsets(BUYERS):
                for assignment in self._assignments(case, on_buyers, on_sellers):
                    for result in self._candidates(case, on_buyers, on_sellers, assignment, alpha):
                        if best is None or (result.objective, result.welfare) > (
                            best.objective,
                            best.welfare,
                        ):
                            best = result
        assert best is not None
        return best

    def _assignments(self, case: str, on_buyers: frozenset[str], on_sellers: frozenset[str]):
        eco = self.eco
        owned = [g for g in GROUPS if GROUP_OWNER[g] in on_buyers]
        if not on_sellers or not owned:
            yield {}
            return
        myopic = {
            g: tuple((s, c) for s, c in _myopic_assignment(eco, [g], on_sellers)[g])
            for g in owned
        }
        if case in (REVENUE_MYOPIC, SURPLUS_AWARE_CASE):
            yield myopic
            return
        # Rational matching: pure target combinations, then one group at a
        # time diverted on the j*m/64 grid with the rest myopic.
        seen = set()
        sellers = sorted(on_sellers)
        def emit(assignment):
            key = tuple(sorted(assignment.items()))
            if key not in seen:
                seen.add(key)
                yield assignment
        for combo in _product([sellers] * len(owned)):
            assignment = {
                g: ((combo[i], eco.queries(g)),) for i, g in enumerate(owned)
            }
            yield from emit(assignment)
        if len(sellers) == 2:
            s_a, s_b = sellers
            for g in owned:
                total = eco.queries(g)
                for j in range(DIVERSION_GRID + 1):
                    x = Fraction(j, DIVERSION_GRID) * eco.m
                    if x > total:
                        break
                    assignment = dict(myopic)
                    assignment[g] = ((s_a, x), (s_b, total - x))
                    yield from emit(assignment)

    def _candidates(self, case, on_buyers, on_sellers, assignment, alpha):
        eco = self.eco
        base = self.route(on_buyers, on_sellers, assignment)
        # Participation bounds are fee-free differences between staying and
        # flipping; deviation routings are fee-independent so they are
        # computed once per assignment.
        buyer_off, buyer_join = {}, {}
        for b in BUYERS:
            if b in on_buyers:
                dropped = {g: a for g, a in assignment.items() if GROUP_OWNER[g] != b}
                buyer_off[b] = self.route(on_buyers - {b}, on_sellers, dropped).buyer_gross[b]
            else:
                joined = dict(assignment)
                joined.update(
                    _tupleize(
                        _myopic_assignment(eco, [g for g in GROUPS if GROUP_OWNER[g] == b], on_sellers)
                    )
                )
                buyer_join[b] = self.route(on_buyers | {b}, on_sellers, joined).buyer_gross[b]
        seller_leave, seller_join = {}, {}
        for s in SELLERS:
            if s in on_sellers:
                remaining = on_sellers - {s}
                redirected = {}
                for g, parts in assignment.items():
                    kept = [(seller, count) for seller, count in parts if seller != s]
                    displaced = sum((count for seller, count in parts if seller == s), Fraction(0))
                    if displaced > 0 and remaining:
                        target = max(sorted(remaining), key=lambda x: eco.utility(g, x))
                        merged = dict(kept)
                        merged[target] = merged.get(target, Fraction(0)) + displaced
                        kept = sorted(merged.items())
                    redirected[g] = tuple(kept)
                leave = self.route(on_buyers, remaining, redirected)
                seller_leave[s] = (
                    leave.seller_counts[s] - eco.m if s in leave.operating else Fraction(0)
                )
            else:
                joined_sellers = on_sellers | {s}
                rematched = _tupleize(
                    _myopic_assignment(
                        eco, [g for g in GROUPS if GROUP_OWNER[g] in on_buyers], joined_sellers
                    )
                )
                join = self.route(on_buyers, joined_sellers, rematched)
                seller_join[s] = join.seller_counts[s] - eco.m

        on_path_off_gross = {
            b: base.buyer_gross[b] for b in BUYERS if b not in on_buyers
        }
        seller_net = {s: base.seller_counts[s] - eco.m for s in on_sellers}
        off_seller_payoff = {
            s: (base.seller_counts[s] - eco.m if s in base.operating else Fraction(0))
            for s in SELLERS
            if s not in on_sellers
        }

        pb_candidates = {Fraction(0)}
        for b in on_buyers:
            bound = base.buyer_gross[b] - buyer_off[b]
            if bound >= 0:
                pb_candidates.add(bound)
        for b, gross in buyer_join.items():
            bound = gross - on_path_off_gross[b]
            if bound >= 0:
                pb_candidates.add(bound)
        ps_candidates = {Fraction(0)}
        for s in on_sellers:
            bound = seller_net[s] - seller_leave[s]
            if bound >= 0:
                ps_candidates.add(bound)
        for s, net in seller_join.items():
            bound = net - off_seller_payoff[s]
            if bound >= 0:
                ps_candidates.add(bound)

        for pb in sorted(pb_candidates):
            if any(base.buyer_gross[b] - pb < buyer_off[b] for b in on_buyers):
                continue
            if any(buyer_join[b] - pb > on_path_off_gross[b] for b in buyer_join):
                continue
            for ps in sorted(ps_candidates):
                if any(seller_net[s] - ps < seller_leave[s] for s in on_sellers):
                    continue
                if any(seller_join[s] - ps > off_seller_payoff[s] for s in seller_join):
                    continue
                yield self._finish(case, on_buyers, on_sellers, assignment, pb, ps, alpha, base)

    def _finish(
        self,
        case,
        on_buyers,
        on_sellers,
        assignment,
        pb: Fraction,
        ps: Fraction,
        alpha: Fraction | None,
        base: _Routing | None = None,
    ) -> EquilibriumResult:
        eco = self.eco
        if base is None:
            base = self.route(on_buyers, on_sellers, assignment)
        buyer_surplus = {
            b: base.buyer_gross[b] - (pb if b in on_buyers else 0) for b in BUYERS
        }
        seller_surplus = {}
        bankrupt = set()
        for s in SELLERS:
            if s in on_sellers:
                seller_surplus[s] = base.seller_counts[s] - eco.m - ps
            elif s in base.operating:
                seller_surplus[s] = base.seller_counts[s] - eco.m
            else:
                seller_surplus[s] = Fraction(0)
                bankrupt.add(s)
        revenue = pb * len(on_buyers) + ps * len(on_sellers)
        welfare = sum(buyer_surplus.values()) + sum(seller_surplus.values()) + revenue
        objective = revenue
        if case == SURPLUS_AWARE_CASE:
            assert alpha is not None
            on_surplus = sum(buyer_surplus[b] for b in on_buyers) + sum(
                seller_surplus[s] for s in on_sellers
            )
            objective = revenue + alpha * on_surplus
        return EquilibriumResult(
            case=case,
            fees=(pb, ps),
            on_platform=frozenset(on_buyers | on_sellers),
            matching=base.matching,
            buyer_surplus=buyer_surplus,
            seller_surplus=seller_surplus,
            seller_queries={s: base.seller_counts[s] for s in SELLERS},
            bankrupt=frozenset(bankrupt),
            revenue=revenue,
            welfare=welfare,
            objective=objective,
        )


def _subsets(items) -> list[frozenset[str]]:
    out = [frozenset()]
    for item in items:
        out.extend(s | {item} for s in list(out))
    return sorted(set(out), key=lambda s: (len(s), tuple(sorted(s))))


def _product(pools):
    if not pools:
        yield ()
        return
    for head in pools[0]:
        for rest in _product(pools[1:]):
            yield (head,) + rest


def _tupleize(assignment) -> dict[str, tuple[tuple[str, Fraction], ...]]:
    return {g: tuple(parts) for g, parts in assignment.items()}


def solve_case(economy: ToyEconomy, case: str, alpha: Fraction | None = None) -> EquilibriumResult:
    """Platform-optimal Stackelberg outcome for one benchmark case."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {CASES}")
    return _Solver(economy).solve(case, alpha=alpha)


def solve_all(economy: ToyEconomy, alpha: Fraction = Fraction(3, 5)) -> dict[str, EquilibriumResult]:
    return {
        case: solve_case(economy, case, alpha=alpha if case == SURPLUS_AWARE_CASE else None)
        for case in CASES
    }


# -- engine verification -------------------------------------------------------


@dataclass(frozen=True)
class VerificationLine:
    quantity: str
    oracle_value: float
    engine_value: float
    ok: bool


@dataclass(frozen=True)
class VerificationReport:
    case: str
    lines: tuple[VerificationLine, ...]

    @property
    def ok(self) -> bool:
        return all(line.ok for line in self.lines)

    @property
    def first_divergence(self) -> VerificationLine | None:
        for line in self.lines:
            if not line.ok:
                return line
        return None


_SELLER_COORD = {"S1": 2.0, "S2": 0.0}


def _group_coord(epsilon: float) -> dict[str, float]:
    return {"Q11": 2.0 - epsilon, "Q12": 1.0 - epsilon, "Q2": -1.0 - epsilon}


class _AssignmentMatcher:
    """Replays the oracle's per-query assignment inside the engine loop."""

    def __init__(self, picks: list[int | None]):
        self.strategy = MatchingStrategy.myopic()
        self.picks = picks
        self._i = 0

    def recommend(self, utilities) -> int | None:
        pick = self.picks[self._i]
        self._i += 1
        return pick

    def transacted(self, seller_id: int) -> None:
        pass


def verify_against_engine(
    economy: ToyEconomy, case: str, alpha: Fraction | None = None, tolerance: float = 1e-9
) -> VerificationReport:
    """Replay an oracle equilibrium through the simulation engine.

    Translates the toy economy to a one-dimensional engine configuration in
    deterministic best-response mode (imposed subscriptions, no logit, no
    inertia) and checks every per-agent surplus, the revenue, and welfare to
    the given relative tolerance.
    """
    from .core import BuyerSpec, SellerSpec, epoch_totals
    from .dynamics import EngineState, run_epoch
    from .marketgen import Market, MarketStructure

    result = solve_case(economy, case, alpha=alpha)
    if economy.m.denominator != 1:
        raise ValueError("engine verification needs an integer query multiplier m")
    m = economy.m.numerator
    eps = float(economy.epsilon)
    ideal = case == IDEAL
    friction = 0.0 if ideal else float(economy.friction)
    known = {b: tuple(SELLERS) for b in BUYERS} if ideal else KNOWN

    seller_ids = {"S1": 0, "S2": 1}
    buyer_ids = {"B1": 0, "B2": 1}
    group_coord = _group_coord(eps)
    buyers = [
        BuyerSpec(
            id=buyer_ids[b],
            location=LatentPoint(0.0, 1.0),
            query_stddev=0.0,
            known_sellers=frozenset(seller_ids[s] for s in known[b]),
            epoch_budget=2.0 * m,
        )
        for b in BUYERS
    ]
    sellers = [
        SellerSpec(
            id=seller_ids[s],
            location=LatentPoint(_SELLER_COORD[s], 1.0),
            cost_fraction=0.0,
            shutdown_threshold=1,
            fixed_cost=float(m),
        )
        for s in SELLERS
    ]
    market = Market(structure=MarketStructure(kind="uniform"), buyers=buyers, sellers=sellers)
    state = EngineState.fresh(market)
    for name, sid in seller_ids.items():
        state.seller_states[sid].on_platform = name in result.on_platform
        state.seller_states[sid].bankrupt = name in result.bankrupt
    for name, bid in buyer_ids.items():
        state.buyer_states[bid].on_platform = name in result.on_platform

    # Fixed query schedule: B1 sends m queries at Q11 then m at Q12; B2
    # sends 2m at Q2; arrivals alternate B1, B2.
    T = 4 * m
    order = [t % 2 for t in range(T)]
    b1_groups = ["Q11"] * m + ["Q12"] * m
    queries: list[LatentPoint] = []
    group_of_t: list[str] = []
    b1_seen = 0
    for t in range(T):
        if order[t] == 0:
            g = b1_groups[b1_seen]
            b1_seen += 1
        else:
            g = "Q2"
        group_of_t.append(g)
        queries.append(LatentPoint(group_coord[g], 1.0))
    utilities = [
        [2.0 - abs(q.taste - _SELLER_COORD[s]) for s in SELLERS] for q in queries
    ]

    fees = FeeSchedule(float(result.fees[0]), float(result.fees[1]), 0.0)
    picks: list[int | None] = []
    platform_assignment: dict[str, list[tuple[int, int]]] = {}
    for g, parts in result.matching.items():
        outs = []
        for seller, channel, count in parts:
            if channel == "platform":
                if count.denominator != 1:
                    raise ValueError("engine verification needs integral platform assignments")
                outs.append((seller_ids[seller], count.numerator))
        platform_assignment[g] = outs
    consumed = {g: 0 for g in GROUPS}
    for t in range(T):
        b = order[t]
        if not state.buyer_states[b].on_platform:
            continue
        g = group_of_t[t]
        pick = None
        offset = consumed[g]
        for sid, count in platform_assignment.get(g, []):
            if offset < count:
                pick = sid
                break
            offset -= count
        consumed[g] += 1
        picks.append(pick)
    matcher = _AssignmentMatcher(picks) if picks else None
    ledger = run_epoch(state, fees, matcher, friction, queries, utilities, epoch=1, order=order)

    lines: list[VerificationLine] = []

    def close(a: float, b: float) -> bool:
        return abs(a - b) <= tolerance * max(1.0, abs(a), abs(b))

    for name, bid in buyer_ids.items():
        want = float(result.buyer_surplus[name])
        got = ledger.buyer_surplus[bid]
        lines.append(VerificationLine(f"{name} surplus", want, got, close(want, got)))
    for name, sid in seller_ids.items():
        want = float(result.seller_surplus[name])
        got = ledger.seller_surplus[sid]
        lines.append(VerificationLine(f"{name} surplus", want, got, close(want, got)))
    _, _, revenue, welfare = epoch_totals(ledger)
    lines.append(
        VerificationLine("platform revenue", float(result.revenue), revenue, close(float(result.revenue), revenue))
    )
    lines.append(
        VerificationLine("welfare", float(result.welfare), welfare, close(float(result.welfare), welfare))
    )
    return VerificationReport(case=case, lines=tuple(lines))
