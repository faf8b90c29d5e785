"""Game descriptions and membrane-system construction.

Two builders live here.  `build_mult_system` emits a small three-membrane
system that multiplies two unary numbers by repeated halving and doubling;
it is both a usable component and the calibration target for the engine's
step semantics.  `build_gne_system` emits the full equilibrium-seeking
system for a demand-response game: one skin, one shared pricing membrane,
and per player a strategy/result/multiplier/update membrane complex that
runs Brown-von-Neumann-Nash dynamics entirely in object counts.

All payoff coefficients are computed in exact integer arithmetic over
1e-4 quantized inputs, so the builder is bit-reproducible and the floor
operations cannot be perturbed by float rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .engine import (MINUS, NEUTRAL, PLUS, ChildPattern, MembraneNode,
                     PSystem, RuleSpec, Trace)
from .symbols import Multiset, Sym, sym

MICRO = 10 ** 4


class GameError(Exception):
    """Raised when a game description cannot be used."""


# ============================================================
# Game description
# ============================================================


@dataclass
class GameSpec:
    """A quantized demand-response game.

    players: number of flexibility providers (1-based ids).
    slots: number of time slots (strategies are slot numbers).
    strategies[k-1]: ascending slot list for player k.
    d_diag[t-1]: grid sensitivity for slot t (>= 0).
    j_bar[t-1]: base price for slot t.
    alpha[k-1][p]: curvature coefficient for player k, p-th strategy.
    beta[k-1][p]: linear discomfort coefficient, same indexing.
    mass[k-1]: per-player demand mass.
    r_disc: population granularity (counts per player sum to r_disc).
    loops: number of update iterations the membrane system performs.
    """

    players: int
    slots: int
    strategies: List[List[int]]
    d_diag: List[float]
    j_bar: List[float]
    alpha: List[List[float]]
    beta: List[List[float]]
    mass: List[float]
    r_disc: int = 100
    loops: int = 10

    def n_total(self) -> int:
        return sum(len(s) for s in self.strategies)

    def pairs(self) -> List[Tuple[int, int]]:
        """Global strategy index order: players ascending, slots ascending."""
        out = []
        for k in range(1, self.players + 1):
            for i in self.strategies[k - 1]:
                out.append((k, i))
        return out


def quantize(x: float) -> float:
    return round(x, 4)


def save_game(spec: GameSpec, path: str) -> None:
    doc = {
        "players": spec.players,
        "slots": spec.slots,
        "strategies": spec.strategies,
        "d_diag": spec.d_diag,
        "j_bar": spec.j_bar,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "mass": spec.mass,
        "r_disc": spec.r_disc,
        "loops": spec.loops,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_game(path: str) -> GameSpec:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return GameSpec(
            players=int(doc["players"]),
            slots=int(doc["slots"]),
            strategies=[list(map(int, s)) for s in doc["strategies"]],
            d_diag=[float(x) for x in doc["d_diag"]],
            j_bar=[float(x) for x in doc["j_bar"]],
            alpha=[[float(x) for x in row] for row in doc["alpha"]],
            beta=[[float(x) for x in row] for row in doc["beta"]],
            mass=[float(x) for x in doc["mass"]],
            r_disc=int(doc.get("r_disc", 100)),
            loops=int(doc.get("loops", 10)),
        )
    except KeyError as miss:
        raise GameError(f"game file missing field {miss.args[0]!r}")


def validate_game(spec: GameSpec) -> List[str]:
    """Collect human-readable diagnostics; empty list means usable."""
    out: List[str] = []
    if spec.players < 1:
        out.append("players must be >= 1")
    if spec.slots < 1:
        out.append("slots must be >= 1")
    if spec.r_disc < 2:
        out.append("r_disc must be >= 2")
    if spec.loops < 1:
        out.append("loops must be >= 1")
    if len(spec.strategies) != spec.players:
        out.append("strategies must list one slot set per player")
        return out
    for k, slots in enumerate(spec.strategies, start=1):
        if not slots:
            out.append(f"player {k}: empty strategy set")
            continue
        if sorted(set(slots)) != slots:
            out.append(f"player {k}: strategy slots must be ascending and unique")
        if len(slots) < 2:
            out.append(f"player {k}: needs at least 2 strategies")
        for i in slots:
            if not 1 <= i <= spec.slots:
                out.append(f"player {k}: slot {i} outside 1..{spec.slots}")
    for name, row, want in (("d_diag", spec.d_diag, spec.slots),
                            ("j_bar", spec.j_bar, spec.slots),
                            ("mass", spec.mass, spec.players)):
        if len(row) != want:
            out.append(f"{name} must have length {want}")
    for name, rows in (("alpha", spec.alpha), ("beta", spec.beta)):
        if len(rows) != spec.players:
            out.append(f"{name} must list one row per player")
            continue
        for k, row in enumerate(rows, start=1):
            if len(row) != len(spec.strategies[k - 1]):
                out.append(f"{name}[{k}] length must match player {k} strategies")
    for name, vals in (("d_diag", spec.d_diag), ("j_bar", spec.j_bar),
                       ("alpha", [x for r in spec.alpha for x in r]),
                       ("beta", [x for r in spec.beta for x in r]),
                       ("mass", spec.mass)):
        for x in vals:
            if abs(x * MICRO - round(x * MICRO)) > 1e-6:
                out.append(f"{name} value {x} is not quantized to 1e-4")
                break
    for x in spec.d_diag:
        if x < 0:
            out.append("d_diag entries must be >= 0")
            break
    for x in spec.mass:
        if x <= 0:
            out.append("mass entries must be > 0")
            break
    for rows, name in ((spec.alpha, "alpha"), (spec.beta, "beta")):
        for row in rows:
            for x in row:
                if x < 0:
                    out.append(f"{name} entries must be >= 0")
                    break
    return out


# ============================================================
# Payoff coefficients (exact integers)
# ============================================================


@dataclass
class PayoffCoefficients:
    """Integer payoff templates on the global strategy index.

    The membranes track payoff magnitudes (costs), so every template is
    a nonnegative count.  For global index l with slot s(l) and player
    mass m(l), with all inputs scaled to integers by 1e4:

      cross[j][l] = floor(D[s(l)] * m(l))          when s(j) == s(l), j != l
      self_[l]    = floor((2 D[s(l)] + alpha_l) * m(l))
      kappa[l]    = floor(R * (j_bar[s(l)] + beta_l))
    """

    n: int
    pairs: List[Tuple[int, int]]
    l_of: Dict[Tuple[int, int], int]
    kappa: List[int]
    cross: List[List[int]]
    self_: List[int]
    r_disc: int

    def linear_row(self, l: int) -> List[int]:
        """Units of pl{j} produced per unit of strategy l (1-based l).

        Column l of cross (receiver-major storage), so every entry
        carries the token owner's mass, with the self term on the
        diagonal.
        """
        out = [self.cross[j][l - 1] for j in range(self.n)]
        out[l - 1] = self.self_[l - 1]
        return out


def payoff_coefficients(spec: GameSpec) -> PayoffCoefficients:
    pairs = spec.pairs()
    n = len(pairs)
    l_of = {pair: l for l, pair in enumerate(pairs, start=1)}
    dq = [round(x * MICRO) for x in spec.d_diag]
    jq = [round(x * MICRO) for x in spec.j_bar]
    mq = {k: round(spec.mass[k - 1] * MICRO) for k in range(1, spec.players + 1)}
    aq: Dict[Tuple[int, int], int] = {}
    bq: Dict[Tuple[int, int], int] = {}
    for k in range(1, spec.players + 1):
        for pos, i in enumerate(spec.strategies[k - 1]):
            aq[(k, i)] = round(spec.alpha[k - 1][pos] * MICRO)
            bq[(k, i)] = round(spec.beta[k - 1][pos] * MICRO)

    kappa: List[int] = []
    self_: List[int] = []
    cross = [[0] * n for _ in range(n)]
    scale2 = MICRO * MICRO
    for l, (k, i) in enumerate(pairs, start=1):
        d = dq[i - 1]
        kappa.append((spec.r_disc * (jq[i - 1] + bq[(k, i)])) // MICRO)
        self_.append(((2 * d + aq[(k, i)]) * mq[k]) // scale2)
        for j, (k2, i2) in enumerate(pairs, start=1):
            if j != l and i2 == i:
                cross[j - 1][l - 1] = (d * mq[k]) // scale2
    return PayoffCoefficients(n, pairs, l_of, kappa, cross, self_, spec.r_disc)


def coefficient_matrices(spec: GameSpec):
    """Float reference route for the same coefficients (numpy, tests)."""
    import numpy as np

    pairs = spec.pairs()
    n = len(pairs)
    C = np.zeros((spec.slots, n))
    for l, (k, i) in enumerate(pairs):
        C[i - 1, l] = 1.0
    D = np.diag(spec.d_diag)
    mass_for = np.array([spec.mass[k - 1] for k, _ in pairs])
    M = np.diag(mass_for)
    blocks = np.zeros((n, n))
    off = 0
    for k in range(1, spec.players + 1):
        nk = len(spec.strategies[k - 1])
        Ck = C[:, off:off + nk]
        blocks[off:off + nk, off:off + nk] = Ck.T @ D @ Ck
        off += nk
    S = blocks + C.T @ D @ C
    alpha_flat = np.array([spec.alpha[k - 1][spec.strategies[k - 1].index(i)]
                           for k, i in pairs])
    beta_flat = np.array([spec.beta[k - 1][spec.strategies[k - 1].index(i)]
                          for k, i in pairs])
    jbar = np.array(spec.j_bar)
    kappa_float = spec.r_disc * (C.T @ jbar + beta_flat)
    A = S @ M
    return {"C": C, "D": D, "M": M, "S": S, "A": A,
            "alpha": alpha_flat, "beta": beta_flat,
            "kappa_float": kappa_float}


def initial_distribution(n_strategies: int, r_disc: int) -> List[int]:
    """Even split of r_disc counts; the last strategy takes the remainder."""
    if n_strategies < 1:
        raise GameError("need at least one strategy")
    base = r_disc // n_strategies
    out = [base] * n_strategies
    out[-1] = r_disc - base * (n_strategies - 1)
    return out


# ============================================================
# Unary multiplier subsystem
# ============================================================

# Symbol vocabulary of the multiplier.  The multiplicand is halved in the
# inner work membrane while the multiplier is doubled in the outer one;
# odd halves commit the current multiplier into the product.
_MC = sym("mcand")
_MC1, _MC2, _MC3, _MC4, _MC5 = (sym(f"mcand{j}") for j in range(1, 6))
_MP = sym("mplier")
_MP1, _MP2, _MP3, _MP4 = (sym(f"mplier{j}") for j in range(1, 5))
_TWIN = sym("mtwin")
_UNIT = sym("unit")
_ODD = sym("odd")
_ODD1, _ODD2, _ODD3 = (sym(f"odd{j}") for j in range(1, 4))
_CYC = [sym(f"cyc{j}") for j in range(1, 7)]
_R0 = sym("round0")
_HALF = sym("half")
_FIN = sym("fin")
_FIN1, _FIN2, _FIN3, _FIN4 = (sym(f"fin{j}") for j in range(1, 5))
_WASTE = sym("waste")


def _mult_rules(skin: str, m1: str, m2: str, unit_out: Sym, fin_out: Sym,
                make_id: Callable[[int], str]) -> Tuple[List[RuleSpec], List[Tuple[str, str]]]:
    """The 44 multiplier rules, retargeted to the given membrane labels.

    unit_out / fin_out name the product unit and the completion flag as
    they leave through `skin`; embeddings relabel them so concurrent
    multiplier instances cannot mix outputs.
    """
    ids = {nn: make_id(nn) for nn in range(1, 45)}

    def rw(nn: int, label: str, charge: int, cons: Dict[Sym, int],
           prod: Dict[Sym, int]) -> RuleSpec:
        return RuleSpec(ids[nn], label, charge, charge,
                        consume_in=cons, produce_in=prod)

    rules = [
        # Six-step work cycle in the halving membrane.
        rw(1, m1, NEUTRAL, {_CYC[0]: 1}, {_CYC[1]: 1, _R0: 1}),
        rw(2, m1, NEUTRAL, {_CYC[1]: 1}, {_CYC[2]: 1}),
        rw(3, m1, NEUTRAL, {_CYC[2]: 1}, {_CYC[3]: 1}),
        rw(4, m1, NEUTRAL, {_CYC[3]: 1}, {_CYC[4]: 1}),
        rw(5, m1, NEUTRAL, {_CYC[4]: 1}, {_CYC[5]: 1}),
        rw(6, m1, NEUTRAL, {_CYC[5]: 1}, {_CYC[0]: 1}),
        # Halving: pairs advance, a leftover single marks the odd case.
        rw(7, m1, NEUTRAL, {_MC: 2}, {_MC1: 1, _HALF: 2}),
        rw(8, m1, NEUTRAL, {_MC: 1}, {_ODD: 1, _HALF: 1}),
        rw(9, m1, NEUTRAL, {_MC1: 1}, {_MC2: 1}),
        rw(10, m1, NEUTRAL, {_MC2: 1}, {_MC3: 1}),
        rw(11, m1, NEUTRAL, {_MC3: 1}, {_MC4: 1}),
        rw(12, m1, NEUTRAL, {_MC4: 1}, {_MC5: 1}),
        rw(13, m1, NEUTRAL, {_MC5: 1}, {_MC: 1}),
        rw(14, m1, NEUTRAL, {_HALF: 2, _R0: 1}, {}),
        # A lone half plus the round marker plus the odd marker means the
        # multiplicand hit 1: raise the completion flag inside and out.
        RuleSpec(ids[15], m1, NEUTRAL, NEUTRAL,
                 consume_in={_HALF: 1, _R0: 1, _ODD: 1},
                 produce_in={_FIN: 1}, produce_out={_FIN: 1}),
        rw(16, m1, NEUTRAL, {_HALF: 1}, {}),
        RuleSpec(ids[17], m1, NEUTRAL, NEUTRAL,
                 consume_in={_ODD: 1}, produce_out={_ODD: 1}),
        RuleSpec(ids[18], m1, NEUTRAL, NEUTRAL,
                 consume_in={_CYC[1]: 1, _R0: 1}, produce_out={_R0: 1}),
        # Doubling pipeline in the outer membrane.
        rw(19, skin, NEUTRAL, {_MP: 1}, {_MP1: 1}),
        rw(20, skin, NEUTRAL, {_MP1: 1}, {_MP2: 1}),
        rw(21, skin, NEUTRAL, {_MP2: 1}, {_MP3: 1}),
        rw(22, skin, NEUTRAL, {_MP3: 1}, {_MP4: 1}),
        rw(23, skin, NEUTRAL, {_MP4: 1}, {_TWIN: 2}),
        rw(24, skin, NEUTRAL, {_TWIN: 1}, {_MP: 1}),
        # Odd commit: while positive, each multiplier token both doubles
        # and deposits one product unit in the store membrane.
        RuleSpec(ids[25], skin, PLUS, PLUS,
                 consume_in={_MP3: 1}, produce_in={_TWIN: 2},
                 child=ChildPattern(m2, NEUTRAL, NEUTRAL, {}, {_UNIT: 1})),
        rw(26, skin, PLUS, {_TWIN: 1}, {_MP: 1}),
        RuleSpec(ids[27], skin, NEUTRAL, PLUS,
                 consume_in={_ODD: 1}, produce_in={_ODD1: 1},
                 produce_out={_WASTE: 1}),
        rw(28, skin, PLUS, {_ODD1: 1}, {_ODD2: 1}),
        rw(29, skin, PLUS, {_ODD2: 1}, {_ODD3: 1}),
        RuleSpec(ids[30], skin, PLUS, NEUTRAL,
                 consume_in={_ODD3: 1}, produce_out={_WASTE: 1}),
        rw(31, m1, NEUTRAL, {_FIN: 1, _CYC[2]: 1}, {}),
        # Shutdown: the flag sweeps through the store membrane and the
        # outer membrane, flushing product units on the way out.
        RuleSpec(ids[32], m2, NEUTRAL, NEUTRAL,
                 consume_out={_FIN: 1}, produce_out={_FIN1: 1},
                 produce_in={_FIN1: 1}),
        RuleSpec(ids[33], m2, NEUTRAL, MINUS,
                 consume_in={_FIN1: 1}, produce_out={_WASTE: 1}),
        RuleSpec(ids[34], skin, NEUTRAL, MINUS,
                 consume_in={_FIN1: 1}, produce_in={_FIN2: 1},
                 produce_out={_WASTE: 1}),
        RuleSpec(ids[35], m2, MINUS, MINUS,
                 consume_out={_FIN2: 1}, produce_out={_FIN3: 1},
                 produce_in={_FIN3: 1}),
        rw(36, m2, MINUS, {_FIN3: 1}, {_FIN4: 1}),
        rw(37, skin, MINUS, {_FIN3: 1}, {_FIN4: 1}),
        RuleSpec(ids[38], m2, MINUS, NEUTRAL,
                 consume_in={_FIN4: 1}, produce_out={_WASTE: 1}),
        RuleSpec(ids[39], skin, MINUS, NEUTRAL,
                 consume_in={_FIN4: 1}, produce_out={fin_out: 1}),
        RuleSpec(ids[40], m2, MINUS, MINUS,
                 consume_in={_UNIT: 1}, produce_out={_UNIT: 1}),
        RuleSpec(ids[41], skin, MINUS, MINUS,
                 consume_in={_UNIT: 1}, produce_out={unit_out: 1}),
        rw(42, skin, MINUS, {_MP4: 1}, {_UNIT: 1}),
        # Zero multiplicand: no odd marker ever appears; the escaped round
        # marker short-circuits straight to shutdown.
        RuleSpec(ids[43], skin, NEUTRAL, MINUS,
                 consume_in={_R0: 1}, produce_in={_FIN3: 1},
                 produce_out={_WASTE: 1}),
        rw(44, skin, MINUS, {_MP3: 1}, {}),
    ]
    priority = [
        (ids[7], ids[8]),
        (ids[14], ids[15]),
        (ids[15], ids[16]),
        (ids[15], ids[17]),
        (ids[15], ids[18]),
        (ids[18], ids[2]),
        (ids[31], ids[3]),
    ]
    return rules, priority


def build_mult_system(m: int, n: int) -> PSystem:
    """Standalone multiplier: halver preloaded with m, outer region with n.

    When it halts, the environment holds exactly m*n product units plus
    one completion flag.
    """
    if m < 0 or n < 0:
        raise GameError("multiplier operands must be >= 0")
    work = MembraneNode("1", contents=Multiset.of((_MC, m), (_CYC[0], 1)))
    store = MembraneNode("2")
    skin = MembraneNode("0", children=[work, store],
                        contents=Multiset.of((_MP, n)))
    rules, priority = _mult_rules("0", "1", "2", _UNIT, _FIN,
                                  lambda nn: f"RS{nn:02d}")
    return PSystem(skin, rules, priority, name=f"mult_{m}x{n}")


def mult_steps(m: int) -> int:
    """Closed-form halt time of the multiplier (independent of n)."""
    if m == 0:
        return 5
    return 7 + 6 * (m.bit_length() - 1)


# ============================================================
# Equilibrium-seeking system
# ============================================================

# Region label helpers.  Labels must be globally unique, so per-strategy
# membranes carry both the slot and the player in their label.


def _lbl_strat(i: int, k: int) -> str:
    return f"S_{i}_{k}"


def _lbl_res(i: int, k: int) -> str:
    return f"RES_{i}_{k}"


def _lbl_mult(i: int, k: int) -> str:
    return f"MULT_{i}_{k}"


def _lbl_m1(i: int, k: int) -> str:
    return f"M1_{i}_{k}"


def _lbl_m2(i: int, k: int) -> str:
    return f"M2_{i}_{k}"


def _lbl_mult2(i: int, k: int) -> str:
    return f"MULT2_{i}_{k}"


def _lbl_m1p(i: int, k: int) -> str:
    return f"M1p_{i}_{k}"


def _lbl_m2p(i: int, k: int) -> str:
    return f"M2p_{i}_{k}"


def _lbl_upd(i: int, k: int) -> str:
    return f"UPD_{i}_{k}"


def _lbl_acum(k: int) -> str:
    return f"ACUM_{k}"


def _rid(stage: int, num: int, k: Optional[int] = None, i: Optional[int] = None,
         n: Optional[int] = None) -> str:
    out = f"S{stage}R{num:02d}"
    if k is not None:
        out += f"_k{k:02d}"
    if i is not None:
        out += f"_i{i:02d}"
    if n is not None:
        out += f"_n{n:03d}"
    return out


def build_gne_system(spec: GameSpec, relaxed: bool = False) -> PSystem:
    """Emit the full iterative equilibrium seeker for one game.

    The system runs spec.loops update iterations.  Each iteration stamps
    its resulting per-strategy counts out through the skin as
    result{k,i,l,n} objects (n is the 1-based iteration), so the entire
    trajectory can be read off the final environment.
    """
    diags = validate_game(spec)
    if diags and not relaxed:
        raise GameError("; ".join(diags))

    co = payoff_coefficients(spec)
    R = spec.r_disc
    thr = R // 2 + 1
    L = spec.loops
    N = spec.players
    players = list(range(1, N + 1))

    def strat(k: int) -> List[int]:
        return spec.strategies[k - 1]

    # ---- membrane tree ----
    tree_children: List[MembraneNode] = [
        MembraneNode("P", contents=Multiset.of((sym("tick"), 1)))]
    for k in players:
        init = initial_distribution(len(strat(k)), R)
        kids: List[MembraneNode] = []
        for pos, i in enumerate(strat(k)):
            l = co.l_of[(k, i)]
            res = MembraneNode(_lbl_res(i, k),
                               contents=Multiset.of((sym("iter", 0), 1)))
            kids.append(MembraneNode(
                _lbl_strat(i, k), children=[res],
                contents=Multiset.of((sym("share", k, i, l), init[pos]))))
        for i in strat(k):
            kids.append(MembraneNode(_lbl_mult(i, k), children=[
                MembraneNode(_lbl_m1(i, k)), MembraneNode(_lbl_m2(i, k))]))
        for i in strat(k):
            kids.append(MembraneNode(_lbl_mult2(i, k), children=[
                MembraneNode(_lbl_m1p(i, k)), MembraneNode(_lbl_m2p(i, k))]))
        for i in strat(k):
            kids.append(MembraneNode(_lbl_upd(i, k)))
        kids.append(MembraneNode(_lbl_acum(k)))
        tree_children.append(MembraneNode(str(k), children=kids))
    tree = MembraneNode("0", children=tree_children)

    rules: List[RuleSpec] = []
    priority: List[Tuple[str, str]] = []

    def emit(r: RuleSpec) -> None:
        rules.append(r)

    def each_ki():
        for k in players:
            for i in strat(k):
                yield k, i, co.l_of[(k, i)]

    # -------- stage 1: price the current profile --------
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(1, 1, k, i), _lbl_strat(i, k), NEUTRAL, NEUTRAL,
                      consume_in={sym("share", k, i, l): 1},
                      produce_in={sym("agent"): 1},
                      produce_out={sym("share", k, i, l): 1}))
    emit(RuleSpec(_rid(1, 2), "P", NEUTRAL, NEUTRAL,
                  consume_in={sym("tick"): 1},
                  produce_in={sym("pl", l): c
                              for l, c in enumerate(co.kappa, start=1) if c}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(1, 3, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("share", k, i, l): 1},
                      produce_in={sym("job1", k, i, l): 1},
                      produce_out={sym("share", k, i, l): 1, sym("reg", k): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(1, 4, k, i), "P", NEUTRAL, NEUTRAL,
                      consume_out={sym("share", k, i, l): 1},
                      produce_in={sym("share", k, i, l): 1}))
    emit(RuleSpec(_rid(1, 5), "0", NEUTRAL, NEUTRAL,
                  consume_in={sym("reg", k): R for k in players},
                  produce_in={sym("gate"): 1}))
    emit(RuleSpec(_rid(1, 6), "0", NEUTRAL, NEUTRAL,
                  consume_in={sym("gate"): 1},
                  child=ChildPattern("P", NEUTRAL, PLUS, {}, {sym("ph2"): 1})))
    for k, i, l in each_ki():
        row = co.linear_row(l)
        emit(RuleSpec(_rid(1, 7, k, i), "P", PLUS, PLUS,
                      consume_in={sym("share", k, i, l): 1},
                      produce_in={sym("pl", j): c
                                  for j, c in enumerate(row, start=1) if c}))
    emit(RuleSpec(_rid(1, 8), "P", PLUS, PLUS,
                  consume_in={sym("ph2"): 1}, produce_in={sym("ph3"): 1}))
    emit(RuleSpec(_rid(1, 9), "P", PLUS, MINUS,
                  consume_in={sym("ph3"): 1}, produce_in={sym("ph4"): 1},
                  produce_out={sym("waste"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(1, 10, k, i), "P", MINUS, MINUS,
                      consume_in={sym("pl", l): 1},
                      produce_out={sym("pay", k, i, l): 1}))
    emit(RuleSpec(_rid(1, 11), "P", MINUS, MINUS,
                  consume_in={sym("ph4"): 1}, produce_in={sym("ph5"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(1, 12, k, i), "0", NEUTRAL, NEUTRAL,
                      consume_in={sym("pay", k, i, l): 1},
                      child=ChildPattern(str(k), NEUTRAL, NEUTRAL, {},
                                         {sym("pay", k, i, l): 1})))
    emit(RuleSpec(_rid(1, 13), "P", MINUS, MINUS,
                  consume_in={sym("ph5"): 1}, produce_in={sym("ph6"): 1}))
    emit(RuleSpec(_rid(1, 14), "P", MINUS, NEUTRAL,
                  consume_in={sym("ph6"): 1},
                  produce_out={sym("go", k): 1 for k in players}))
    for k in players:
        emit(RuleSpec(_rid(1, 15, k), "0", NEUTRAL, NEUTRAL,
                      consume_in={sym("go", k): 1},
                      child=ChildPattern(str(k), NEUTRAL, MINUS, {},
                                         {sym("mstart"): len(strat(k))})))
    # Waste collection everywhere, at every charge.
    all_labels: List[str] = []

    def collect(node: MembraneNode) -> None:
        all_labels.append(node.label)
        for ch in node.children:
            collect(ch)

    collect(tree)
    for ridx, label in enumerate(all_labels, start=1):
        for suffix, charge in (("c0", NEUTRAL), ("cm", MINUS), ("cp", PLUS)):
            emit(RuleSpec(f"S1R16_r{ridx:03d}_{suffix}", label, charge, charge,
                          consume_in={sym("waste"): 1}))

    # -------- stage 2: average payoff of each population --------
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(2, 1, k, i), str(k), MINUS, MINUS,
                      consume_in={sym("job1", k, i, l): 1},
                      produce_in={sym("job2", k, i, l): 1},
                      child=ChildPattern(_lbl_mult(i, k), NEUTRAL, NEUTRAL,
                                         {}, {sym("apre"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(2, 2, k, i), str(k), MINUS, MINUS,
                      consume_in={sym("pay", k, i, l): 1},
                      produce_in={sym("neg", i): 1},
                      child=ChildPattern(_lbl_mult(i, k), NEUTRAL, NEUTRAL,
                                         {}, {sym("bpre"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(2, 3, k, i), str(k), MINUS, MINUS,
                      consume_in={sym("mstart"): 1},
                      child=ChildPattern(_lbl_mult(i, k), NEUTRAL, PLUS,
                                         {}, {sym("mstart"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(2, 4, k, i), _lbl_mult(i, k), PLUS, PLUS,
                      consume_in={sym("apre"): 1},
                      child=ChildPattern(_lbl_m1(i, k), NEUTRAL, NEUTRAL,
                                         {}, {_MC: 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(2, 5, k, i), _lbl_mult(i, k), PLUS, PLUS,
                      consume_in={sym("bpre"): 1}, produce_in={_MP: 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(2, 6, k, i), _lbl_mult(i, k), PLUS, NEUTRAL,
                      consume_in={sym("mstart"): 1},
                      produce_out={sym("waste"): 1},
                      child=ChildPattern(_lbl_m1(i, k), NEUTRAL, NEUTRAL,
                                         {}, {_CYC[0]: 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(2, 7, k, i), str(k), MINUS, MINUS,
                      consume_in={sym("neg", i): 1},
                      child=ChildPattern(_lbl_upd(i, k), NEUTRAL, NEUTRAL,
                                         {}, {sym("neg", i): 1})))
    for k in players:
        emit(RuleSpec(_rid(2, 8, k), str(k), MINUS, MINUS,
                      consume_in={sym("fin"): len(strat(k))},
                      child=ChildPattern(_lbl_acum(k), NEUTRAL, PLUS,
                                         {}, {sym("acc0"): 1})))
    for k in players:
        emit(RuleSpec(_rid(2, 9, k), str(k), MINUS, MINUS,
                      consume_in={sym("unit"): 1},
                      child=ChildPattern(_lbl_acum(k), NEUTRAL, NEUTRAL,
                                         {}, {sym("pos"): 1})))
    for k in players:
        emit(RuleSpec(_rid(2, 10, k), _lbl_acum(k), PLUS, PLUS,
                      consume_in={sym("pos"): R},
                      produce_out={sym("pos"): 1}))
        emit(RuleSpec(_rid(2, 11, k), _lbl_acum(k), PLUS, PLUS,
                      consume_in={sym("pos"): thr},
                      produce_out={sym("pos"): 1}))
        emit(RuleSpec(_rid(2, 12, k), _lbl_acum(k), PLUS, PLUS,
                      consume_in={sym("pos"): 1}))
        emit(RuleSpec(_rid(2, 13, k), _lbl_acum(k), PLUS, PLUS,
                      consume_in={sym("acc0"): 1}, produce_in={sym("acc1"): 1}))
        emit(RuleSpec(_rid(2, 14, k), _lbl_acum(k), PLUS, NEUTRAL,
                      consume_in={sym("acc1"): 1}, produce_out={sym("acc2"): 1}))
        emit(RuleSpec(_rid(2, 15, k), str(k), MINUS, NEUTRAL,
                      consume_in={sym("acc2"): 1}, produce_in={sym("cmp0"): 1},
                      produce_out={sym("waste"): 1}))
        priority.append((_rid(2, 10, k), _rid(2, 11, k)))
        priority.append((_rid(2, 11, k), _rid(2, 12, k)))
    # Embedded multiplier blocks: population count times average payoff.
    for k, i, l in each_ki():
        blk, bprio = _mult_rules(
            _lbl_mult(i, k), _lbl_m1(i, k), _lbl_m2(i, k), sym("unit"),
            sym("fin"), lambda nn, k=k, i=i: f"S2X_k{k:02d}_i{i:02d}_R{nn:02d}")
        rules.extend(blk)
        priority.extend(bprio)

    # -------- stage 3: per-strategy excess payoff --------
    for k in players:
        emit(RuleSpec(_rid(3, 1, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cmp0"): 1},
                      produce_in={sym("cmp", 1, i): 1 for i in strat(k)}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 2, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cmp", 1, i): 1},
                      produce_in={sym("cmp", 2, i): 1},
                      child=ChildPattern(_lbl_upd(i, k), NEUTRAL, PLUS,
                                         {}, {sym("waste"): 1})))
    for k in players:
        emit(RuleSpec(_rid(3, 3, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("pos"): 1},
                      produce_in={sym("posb", i): 1 for i in strat(k)}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 4, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("posb", i): 1},
                      child=ChildPattern(_lbl_upd(i, k), PLUS, PLUS,
                                         {}, {sym("posb", i): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 5, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cmp", 2, i): 1},
                      produce_in={sym("cmp", 3, i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 6, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cmp", 3, i): 1},
                      child=ChildPattern(_lbl_upd(i, k), PLUS, MINUS,
                                         {}, {sym("cmp", 4, i): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 7, k, i), _lbl_upd(i, k), MINUS, MINUS,
                      consume_in={sym("neg", i): 1, sym("posb", i): 1}))
        priority.append((_rid(3, 7, k, i), _rid(3, 8, k, i)))
        priority.append((_rid(3, 7, k, i), _rid(3, 9, k, i)))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 8, k, i), _lbl_upd(i, k), MINUS, MINUS,
                      consume_in={sym("neg", i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 9, k, i), _lbl_upd(i, k), MINUS, MINUS,
                      consume_in={sym("posb", i): 1},
                      produce_in={sym("qplus", i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 10, k, i), _lbl_upd(i, k), MINUS, MINUS,
                      consume_in={sym("cmp", 4, i): 1},
                      produce_in={sym("cmp", 5, i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 11, k, i), _lbl_upd(i, k), MINUS, NEUTRAL,
                      consume_in={sym("cmp", 5, i): 1},
                      produce_in={sym("cmp", 6, i): 1},
                      produce_out={sym("waste"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 12, k, i), _lbl_upd(i, k), NEUTRAL, NEUTRAL,
                      consume_in={sym("qplus", i): 1},
                      produce_out={sym("qsum"): 1, sym("qplus", i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(3, 13, k, i), _lbl_upd(i, k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cmp", 6, i): 1},
                      produce_out={sym("cmp", 7, i): 1}))

    # -------- stage 4: rate counts via a second multiplication --------
    for k in players:
        emit(RuleSpec(_rid(4, 1, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cmp", 7, i): 1 for i in strat(k)},
                      produce_in={sym("mz", i, 0): 1 for i in strat(k)}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 2, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("mz", i, 0): 1},
                      produce_in={sym("mz", i, 1): 1}))
    for k in players:
        emit(RuleSpec(_rid(4, 3, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("qsum"): 1},
                      produce_in={sym("qin", i): 1 for i in strat(k)}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 4, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("job2", k, i, l): 1},
                      child=ChildPattern(_lbl_mult2(i, k), NEUTRAL, NEUTRAL,
                                         {}, {sym("apre"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 5, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("qin", i): 1},
                      child=ChildPattern(_lbl_mult2(i, k), NEUTRAL, NEUTRAL,
                                         {}, {sym("bpre"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 6, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("mz", i, 1): 1},
                      child=ChildPattern(_lbl_mult2(i, k), NEUTRAL, PLUS,
                                         {}, {sym("mstart"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 7, k, i), _lbl_mult2(i, k), PLUS, PLUS,
                      consume_in={sym("apre"): 1},
                      child=ChildPattern(_lbl_m1p(i, k), NEUTRAL, NEUTRAL,
                                         {}, {_MC: 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 8, k, i), _lbl_mult2(i, k), PLUS, PLUS,
                      consume_in={sym("bpre"): 1}, produce_in={_MP: 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 9, k, i), _lbl_mult2(i, k), PLUS, NEUTRAL,
                      consume_in={sym("mstart"): 1},
                      produce_out={sym("waste"): 1},
                      child=ChildPattern(_lbl_m1p(i, k), NEUTRAL, NEUTRAL,
                                         {}, {_CYC[0]: 1})))
    for k in players:
        emit(RuleSpec(_rid(4, 10, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("fin1"): len(strat(k))},
                      produce_in={sym("rz0"): len(strat(k))}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 11, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("rz0"): 1},
                      child=ChildPattern(_lbl_strat(i, k), NEUTRAL, PLUS,
                                         {}, {sym("rz1"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 12, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("qplus", i): 1},
                      child=ChildPattern(_lbl_strat(i, k), PLUS, PLUS,
                                         {}, {sym("ex0"): 1})))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(4, 13, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("zq", i): 1},
                      child=ChildPattern(_lbl_strat(i, k), PLUS, PLUS,
                                         {}, {sym("zq", i): 1})))
    for k, i, l in each_ki():
        s = _lbl_strat(i, k)
        emit(RuleSpec(_rid(4, 14, k, i), s, PLUS, PLUS,
                      consume_in={sym("ex0"): 1}, produce_in={sym("ex1"): 1}))
        emit(RuleSpec(_rid(4, 15, k, i), s, PLUS, PLUS,
                      consume_in={sym("zq", i): R}, produce_in={sym("zqr"): 1}))
        emit(RuleSpec(_rid(4, 16, k, i), s, PLUS, PLUS,
                      consume_in={sym("zq", i): thr}, produce_in={sym("zqr"): 1}))
        emit(RuleSpec(_rid(4, 17, k, i), s, PLUS, PLUS,
                      consume_in={sym("zq", i): 1}))
        emit(RuleSpec(_rid(4, 18, k, i), s, PLUS, PLUS,
                      consume_in={sym("ex1"): 1, sym("zqr"): 1}))
        emit(RuleSpec(_rid(4, 19, k, i), s, PLUS, PLUS,
                      consume_in={sym("ex1"): 1}, produce_in={sym("dzp"): 1}))
        emit(RuleSpec(_rid(4, 20, k, i), s, PLUS, PLUS,
                      consume_in={sym("zqr"): 1}, produce_in={sym("dzn"): 1}))
        emit(RuleSpec(_rid(4, 21, k, i), s, PLUS, PLUS,
                      consume_in={sym("rz1"): 1}, produce_in={sym("rz2"): 1}))
        emit(RuleSpec(_rid(4, 22, k, i), s, PLUS, PLUS,
                      consume_in={sym("rz2"): 1}, produce_in={sym("rz3"): 1}))
        emit(RuleSpec(_rid(4, 23, k, i), s, PLUS, MINUS,
                      consume_in={sym("rz3"): 1}, produce_in={sym("up0"): 1},
                      produce_out={sym("waste"): 1}))
        priority.append((_rid(4, 15, k, i), _rid(4, 16, k, i)))
        priority.append((_rid(4, 16, k, i), _rid(4, 17, k, i)))
        priority.append((_rid(4, 18, k, i), _rid(4, 19, k, i)))
        priority.append((_rid(4, 18, k, i), _rid(4, 20, k, i)))
    for k, i, l in each_ki():
        blk, bprio = _mult_rules(
            _lbl_mult2(i, k), _lbl_m1p(i, k), _lbl_m2p(i, k), sym("zq", i),
            sym("fin1"), lambda nn, k=k, i=i: f"S4X_k{k:02d}_i{i:02d}_R{nn:02d}")
        rules.extend(blk)
        priority.extend(bprio)

    # -------- stage 5: Euler step, renormalization, restart --------
    for k, i, l in each_ki():
        s = _lbl_strat(i, k)
        emit(RuleSpec(_rid(5, 1, k, i), s, MINUS, MINUS,
                      consume_in={sym("up0"): 1}, produce_in={sym("up1"): 1}))
        emit(RuleSpec(_rid(5, 2, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzn"): R, sym("agent"): 1}))
        emit(RuleSpec(_rid(5, 3, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzn"): thr, sym("agent"): 1}))
        emit(RuleSpec(_rid(5, 4, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzp"): R}, produce_in={sym("cand"): 1}))
        emit(RuleSpec(_rid(5, 5, k, i), s, MINUS, MINUS,
                      consume_in={sym("agent"): 1}, produce_in={sym("cand"): 1}))
        emit(RuleSpec(_rid(5, 6, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzn"): R}, produce_in={sym("defc"): 1}))
        emit(RuleSpec(_rid(5, 7, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzn"): thr}, produce_in={sym("defc"): 1}))
        emit(RuleSpec(_rid(5, 8, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzn"): 1}))
        emit(RuleSpec(_rid(5, 9, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzp"): thr}, produce_in={sym("cand"): 1}))
        emit(RuleSpec(_rid(5, 10, k, i), s, MINUS, MINUS,
                      consume_in={sym("dzp"): 1}))
        emit(RuleSpec(_rid(5, 11, k, i), s, MINUS, MINUS,
                      consume_in={sym("up1"): 1},
                      produce_in={sym("up2"): 1, sym("slack"): R}))
        emit(RuleSpec(_rid(5, 12, k, i), s, MINUS, MINUS,
                      consume_in={sym("cand"): R}, produce_in={sym("ovf"): 1},
                      produce_out={sym("nz", i): R}))
        emit(RuleSpec(_rid(5, 13, k, i), s, MINUS, NEUTRAL,
                      consume_in={sym("up2"): 1}, produce_in={sym("up3"): 1},
                      produce_out={sym("updone", i): 1}))
        emit(RuleSpec(_rid(5, 14, k, i), s, NEUTRAL, NEUTRAL,
                      consume_in={sym("cand"): 1}, produce_out={sym("cand"): 1}))
        emit(RuleSpec(_rid(5, 15, k, i), s, MINUS, MINUS,
                      consume_in={sym("ovf"): 1, sym("slack"): R}))
        emit(RuleSpec(_rid(5, 16, k, i), s, NEUTRAL, NEUTRAL,
                      consume_in={sym("defc"): 1}, produce_out={sym("defc"): 1}))
        emit(RuleSpec(_rid(5, 17, k, i), s, NEUTRAL, NEUTRAL,
                      consume_in={sym("slack"): 1},
                      produce_out={sym("nzslack", i): 1}))
        emit(RuleSpec(_rid(5, 18, k, i), s, MINUS, MINUS,
                      consume_in={sym("cand"): 1, sym("slack"): 1},
                      produce_in={sym("candok"): 1}))
        emit(RuleSpec(_rid(5, 19, k, i), s, NEUTRAL, NEUTRAL,
                      consume_in={sym("candok"): 1}, produce_out={sym("nz", i): 1}))
        priority.append((_rid(5, 2, k, i), _rid(5, 3, k, i)))
        priority.append((_rid(5, 3, k, i), _rid(5, 5, k, i)))
        priority.append((_rid(5, 3, k, i), _rid(5, 6, k, i)))
        priority.append((_rid(5, 4, k, i), _rid(5, 9, k, i)))
        priority.append((_rid(5, 6, k, i), _rid(5, 7, k, i)))
        priority.append((_rid(5, 7, k, i), _rid(5, 8, k, i)))
        priority.append((_rid(5, 9, k, i), _rid(5, 10, k, i)))
        priority.append((_rid(5, 15, k, i), _rid(5, 18, k, i)))
    for k in players:
        emit(RuleSpec(_rid(5, 20, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cand"): 1, sym("defc"): 1}))
        for i in strat(k):
            priority.append((_rid(5, 20, k), _rid(5, 21, k, i)))
            priority.append((_rid(5, 20, k), _rid(5, 22, k, i)))
            priority.append((_rid(5, 21, k, i), _rid(5, 23, k)))
            priority.append((_rid(5, 22, k, i), _rid(5, 24, k)))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 21, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cand"): 1, sym("nzslack", i): 1},
                      produce_in={sym("nz", i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 22, k, i), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("defc"): 1, sym("nz", i): 1},
                      produce_in={sym("nzslack", i): 1}))
    for k in players:
        emit(RuleSpec(_rid(5, 23, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("cand"): 1}, produce_in={sym("err"): 1}))
        emit(RuleSpec(_rid(5, 24, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("defc"): 1}, produce_in={sym("err"): 1}))
    for k, i, l in each_ki():
        s = _lbl_strat(i, k)
        emit(RuleSpec(_rid(5, 25, k, i), s, NEUTRAL, NEUTRAL,
                      consume_in={sym("up3"): 1}, produce_in={sym("up4"): 1}))
        emit(RuleSpec(_rid(5, 26, k, i), s, NEUTRAL, NEUTRAL,
                      consume_in={sym("up4"): 1}, produce_in={sym("up5"): 1}))
        emit(RuleSpec(_rid(5, 27, k, i), s, NEUTRAL, PLUS,
                      consume_in={sym("up5"): 1}, produce_out={sym("up6"): 1}))
    for k in players:
        emit(RuleSpec(_rid(5, 28, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("updone", i): 1 for i in strat(k)},
                      produce_in={sym("pool0"): 1}))
        emit(RuleSpec(_rid(5, 29, k), str(k), NEUTRAL, PLUS,
                      consume_in={sym("pool0"): 1},
                      produce_in={sym("pool1"): 1, sym("quota"): R},
                      produce_out={sym("waste"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 30, k, i), str(k), PLUS, PLUS,
                      consume_in={sym("nz", i): 1, sym("quota"): 1},
                      produce_in={sym("znew", i): 1}))
        priority.append((_rid(5, 30, k, i), _rid(5, 31, k, i)))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 31, k, i), str(k), PLUS, PLUS,
                      consume_in={sym("nz", i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 32, k, i), str(k), PLUS, PLUS,
                      consume_in={sym("nzslack", i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 33, k, i), str(k), PLUS, PLUS,
                      consume_in={sym("quota"): 1},
                      produce_in={sym("znew", i): 1}))
    for k in players:
        for i in strat(k):
            for j in strat(k):
                priority.append((_rid(5, 30, k, i), _rid(5, 33, k, j)))
    for k in players:
        emit(RuleSpec(_rid(5, 34, k), str(k), PLUS, NEUTRAL,
                      consume_in={sym("pool1"): 1},
                      produce_out={sym("waste"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 35, k, i), _lbl_strat(i, k), PLUS, PLUS,
                      consume_out={sym("znew", i): 1},
                      produce_in={sym("znew", i): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 36, k, i), _lbl_strat(i, k), PLUS, NEUTRAL,
                      consume_out={sym("up6"): 1}, produce_in={sym("up7"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 37, k, i), _lbl_res(i, k), NEUTRAL, PLUS,
                      consume_out={sym("up7"): 1}, produce_in={sym("up8"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 38, k, i), _lbl_res(i, k), PLUS, PLUS,
                      consume_out={sym("znew", i): 1},
                      produce_in={sym("zout", i): 1}))
    for k, i, l in each_ki():
        for nn in range(0, L + 2):
            emit(RuleSpec(_rid(5, 39, k, i, nn), _lbl_res(i, k), PLUS, PLUS,
                          consume_in={sym("iter", nn): 1},
                          produce_in={sym("stamp", nn + 1): R,
                                      sym("iternext", nn + 1): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 40, k, i), _lbl_res(i, k), PLUS, MINUS,
                      consume_in={sym("up8"): 1}, produce_in={sym("up9"): 1},
                      produce_out={sym("waste"): 1}))
    for k, i, l in each_ki():
        for nn in range(1, L + 2):
            emit(RuleSpec(_rid(5, 41, k, i, nn), _lbl_res(i, k), MINUS, MINUS,
                          consume_in={sym("zout", i): 1, sym("stamp", nn): 1},
                          produce_out={sym("result", k, i, l, nn): 1}))
            priority.append((_rid(5, 41, k, i, nn), _rid(5, 42, k, i, nn)))
    for k, i, l in each_ki():
        for nn in range(1, L + 2):
            emit(RuleSpec(_rid(5, 42, k, i, nn), _lbl_res(i, k), MINUS, MINUS,
                          consume_in={sym("stamp", nn): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 43, k, i), _lbl_res(i, k), MINUS, NEUTRAL,
                      consume_in={sym("up9"): 1}, produce_out={sym("up10"): 1}))
        priority.append((_rid(5, 61, k, i), _rid(5, 43, k, i)))
    for k, i, l in each_ki():
        for nn in range(1, L + 2):
            emit(RuleSpec(_rid(5, 44, k, i, nn), _lbl_res(i, k), NEUTRAL, NEUTRAL,
                          consume_in={sym("iternext", nn): 1},
                          produce_in={sym("iter", nn): 1}))
    for k, i, l in each_ki():
        for nn in range(1, L + 2):
            emit(RuleSpec(_rid(5, 45, k, i, nn), _lbl_strat(i, k), NEUTRAL,
                          NEUTRAL,
                          consume_in={sym("result", k, i, l, nn): 1},
                          produce_in={sym("reseed", k, i, l): 1},
                          produce_out={sym("result", k, i, l, nn): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 46, k, i), _lbl_strat(i, k), NEUTRAL, NEUTRAL,
                      consume_in={sym("up10"): 1},
                      produce_out={sym("done", i): 1}))
    for k, i, l in each_ki():
        for nn in range(1, L + 2):
            emit(RuleSpec(_rid(5, 47, k, i, nn), str(k), NEUTRAL, NEUTRAL,
                          consume_in={sym("result", k, i, l, nn): 1},
                          produce_out={sym("result", k, i, l, nn): 1}))
    for k in players:
        emit(RuleSpec(_rid(5, 48, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("done", i): 1 for i in strat(k)},
                      produce_out={sym("donek", k): 1}))
    emit(RuleSpec(_rid(5, 49), "0", NEUTRAL, NEUTRAL,
                  consume_in={sym("donek", k): 1 for k in players},
                  produce_in={sym("tick"): 1}))
    for k in players:
        emit(RuleSpec(_rid(5, 50, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("err"): 1}, produce_out={sym("err"): 1}))
    wake = {sym("wkP"): 1}
    wake.update({sym("wkp", k): 1 for k in players})
    emit(RuleSpec(_rid(5, 51), "0", NEUTRAL, NEUTRAL,
                  consume_in={sym("tick"): 1}, produce_in=wake))
    emit(RuleSpec(_rid(5, 52), "P", NEUTRAL, NEUTRAL,
                  consume_out={sym("wkP"): 1}, produce_in={sym("wkP0"): 1}))
    for k in players:
        emit(RuleSpec(_rid(5, 53, k), str(k), NEUTRAL, NEUTRAL,
                      consume_out={sym("wkp", k): 1},
                      produce_in={sym("wk0"): 1}))
    emit(RuleSpec(_rid(5, 54), "P", NEUTRAL, NEUTRAL,
                  consume_in={sym("wkP0"): 1}, produce_in={sym("wkP1"): 1}))
    for k in players:
        emit(RuleSpec(_rid(5, 55, k), str(k), NEUTRAL, NEUTRAL,
                      consume_in={sym("wk0"): 1},
                      produce_in={sym("wks", i): 1 for i in strat(k)}))
    emit(RuleSpec(_rid(5, 56), "P", NEUTRAL, NEUTRAL,
                  consume_in={sym("wkP1"): 1}, produce_in={sym("wkP2"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 57, k, i), _lbl_strat(i, k), NEUTRAL, PLUS,
                      consume_out={sym("wks", i): 1},
                      produce_in={sym("sdone"): 1}))
    emit(RuleSpec(_rid(5, 58), "P", NEUTRAL, NEUTRAL,
                  consume_in={sym("wkP2"): 1}, produce_in={sym("tick"): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 59, k, i), _lbl_strat(i, k), PLUS, PLUS,
                      consume_in={sym("reseed", k, i, l): 1},
                      produce_in={sym("share", k, i, l): 1}))
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 60, k, i), _lbl_strat(i, k), PLUS, NEUTRAL,
                      consume_in={sym("sdone"): 1},
                      produce_out={sym("waste"): 1}))
    # Loop limit: on the final iteration the countdown token and the
    # result-phase token annihilate, so the restart chain never fires.
    for k, i, l in each_ki():
        emit(RuleSpec(_rid(5, 61, k, i), _lbl_res(i, k), MINUS, MINUS,
                      consume_in={sym("iternext", L): 1, sym("up9"): 1}))

    # Declaration order is id order, so a canonical serialize/parse round
    # trip preserves every tie-break the step semantics depends on.
    rules.sort(key=lambda r: r.id)
    priority.sort()
    return PSystem(tree, rules, priority, name="gne")


# ============================================================
# Trace anatomy
# ============================================================


@dataclass
class StageSpan:
    loop: int
    stage: int
    start: int
    end: int


@dataclass
class LoopTiming:
    """Per-iteration timing: stage windows plus stages that never ran."""

    loop: int
    start: int
    end: int
    spans: List[StageSpan]
    missing: List[int]
    payoff_step: int = 0

    @property
    def total(self) -> int:
        return self.end - self.start + 1


def loop_starts(trace: Trace) -> List[int]:
    """1-based transition numbers at which an iteration begins."""
    out = []
    for t, rec in enumerate(trace.records, start=1):
        for cr, _ in rec:
            if cr.id == "S1R02":
                out.append(t)
                break
    return out


def stage_boundaries(trace: Trace, spec: Optional[GameSpec] = None
                     ) -> List[LoopTiming]:
    """Partition a run into per-iteration stage windows.

    Stage ends are read off marker rules: stage 1 ends when the
    multiplication kickoff fires, stage 2 when a population flips back
    to neutral, stage 3 at the excess-payoff export, stage 4 at the
    rate handoff, and stage 5 runs to the end of the iteration.  A stage
    whose marker never fires within its loop is reported in `missing`.
    """
    del spec  # shape is read off the rule ids, not the game description
    starts = loop_starts(trace)
    out: List[LoopTiming] = []
    total = len(trace.records)
    for idx, t0 in enumerate(starts):
        t1 = starts[idx + 1] - 1 if idx + 1 < len(starts) else total
        marks = {1: 0, 2: 0, 3: 0, 4: 0}
        payoff_step = 0
        for t in range(t0, t1 + 1):
            for cr, _ in trace.records[t - 1]:
                rid = cr.id
                if rid.startswith("S1R15") and not marks[1]:
                    marks[1] = t
                elif rid.startswith("S2R15"):
                    marks[2] = max(marks[2], t)
                elif rid.startswith("S3R13"):
                    marks[3] = max(marks[3], t)
                elif rid.startswith("S4R23"):
                    marks[4] = max(marks[4], t)
                elif rid.startswith("S1R12") and not payoff_step:
                    payoff_step = t
        spans: List[StageSpan] = []
        missing: List[int] = []
        cur = t0
        for stage in (1, 2, 3, 4):
            if marks[stage]:
                spans.append(StageSpan(idx + 1, stage, cur, marks[stage]))
                cur = marks[stage] + 1
            else:
                missing.append(stage)
        spans.append(StageSpan(idx + 1, 5, cur, t1))
        out.append(LoopTiming(idx + 1, t0, t1, spans, missing, payoff_step))
    return out
