"""Experiment orchestration: sampling, runs, comparisons, CSV export.

The harness owns everything above the two engines: a reproducible
parameter sampler, membrane-run drivers that extract count trajectories
from traces, the engine-vs-reference comparator with stage attribution,
and the multiplier sweep used by the acceptance suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .builder import (GameSpec, LoopTiming, PayoffCoefficients,
                      build_gne_system, build_mult_system, initial_distribution,
                      loop_starts, mult_steps, payoff_coefficients, quantize,
                      stage_boundaries)
from .engine import (ENV_LABEL, CompiledSystem, PSystem, Trace, compile_system,
                     read_region, run)
from .oracle import (KI, StateZ, Trajectory, initial_state, simulate,
                     trajectory_csv)
from .symbols import Multiset, sym

# ============================================================
# Deterministic sampling
# ============================================================

_MASK = (1 << 64) - 1


class SplitMix64:
    """64-bit mixing recurrence; identical streams in any language.

    state += 0x9E3779B97F4A7C15; z = state; z = (z ^ (z >> 30)) *
    0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
    return z ^ (z >> 31).  Uniform doubles take the top 53 bits.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self, lo: float, hi: float) -> float:
        u = (self.next_u64() >> 11) * (2.0 ** -53)
        return lo + (hi - lo) * u


@dataclass
class Preset:
    """Instance shape plus sampling ranges for the random parameters."""

    players: int
    slots: int
    strategies: List[List[int]]
    d_range: Tuple[float, float] = (0.0, 1.0)
    j_range: Tuple[float, float] = (2.0, 4.0)
    alpha_range: Tuple[float, float] = (1.0, 10.0)
    beta_range: Tuple[float, float] = (0.0, 1.0)
    mass_range: Tuple[float, float] = (3.0, 4.0)
    r_disc: int = 100
    loops: int = 10


PRESETS: Dict[str, Preset] = {
    # Three providers over five slots with overlapping strategy sets.
    "default": Preset(3, 5, [[3, 5], [1, 3, 5], [1, 2, 4]]),
    # Two providers over three slots; quick comparison runs.
    "small": Preset(2, 3, [[1, 3], [2, 3]]),
}


def sample_experiment(seed: int, preset: str | Preset = "default",
                      loops: Optional[int] = None) -> GameSpec:
    """Deterministic GameSpec from a seed; fixed draw order, 4-dp values."""
    p = PRESETS[preset] if isinstance(preset, str) else preset
    rng = SplitMix64(seed)
    d_diag = [quantize(rng.uniform(*p.d_range)) for _ in range(p.slots)]
    j_bar = [quantize(rng.uniform(*p.j_range)) for _ in range(p.slots)]
    alpha = [[quantize(rng.uniform(*p.alpha_range)) for _ in row]
             for row in p.strategies]
    beta = [[quantize(rng.uniform(*p.beta_range)) for _ in row]
            for row in p.strategies]
    mass = [quantize(rng.uniform(*p.mass_range)) for _ in range(p.players)]
    return GameSpec(players=p.players, slots=p.slots,
                    strategies=[list(s) for s in p.strategies],
                    d_diag=d_diag, j_bar=j_bar, alpha=alpha, beta=beta,
                    mass=mass, r_disc=p.r_disc,
                    loops=p.loops if loops is None else loops)


@dataclass
class ExperimentConfig:
    """One orchestrated job: where the game comes from and what to run."""

    seed: int = 0
    preset: str = "default"
    spec_path: Optional[str] = None
    loops: Optional[int] = None
    engine: str = "both"
    out_dir: Optional[str] = None
    strict: bool = False


# ============================================================
# Multiplier driver
# ============================================================


@dataclass
class MultReport:
    m: int
    n: int
    product: int
    steps: int
    expect_product: int
    expect_steps: int
    bound: Optional[int]
    product_ok: bool
    steps_ok: bool
    bound_ok: bool

    @property
    def ok(self) -> bool:
        # The exact step-count formula is the binding claim.  The looser
        # doubling bound is tracked separately: exact powers of two finish
        # one doubling round past it (see the acceptance tests).
        return self.product_ok and self.steps_ok


def _mult_report(m: int, n: int, trace: Trace) -> MultReport:
    env = read_region(trace.final, ENV_LABEL)
    product = env.get(sym("unit"))
    steps = trace.steps
    bound = 1 + 6 * math.ceil(math.log2(m)) if m >= 2 else None
    return MultReport(
        m=m, n=n, product=product, steps=steps,
        expect_product=m * n, expect_steps=mult_steps(m), bound=bound,
        product_ok=product == m * n and trace.halted,
        steps_ok=steps == mult_steps(m),
        bound_ok=bound is None or steps <= bound)


def run_mult(m: int, n: int) -> MultReport:
    """Build and run one multiplication; verify product, steps, bound."""
    trace = run(build_mult_system(m, n), max_steps=mult_steps(m) + 10)
    return _mult_report(m, n, trace)


def mult_sweep(max_m: int = 100, max_n: int = 100
               ) -> Tuple[List[MultReport], float]:
    """All operand pairs up to the caps on one shared compiled system."""
    csys = compile_system(build_mult_system(0, 0))
    mc, cyc, mp = sym("mcand"), sym("cyc1"), sym("mplier")
    failures: List[MultReport] = []
    t0 = time.time()
    for m in range(max_m + 1):
        budget = mult_steps(m) + 10
        for n in range(max_n + 1):
            init = {"0": {mp: n}, "1": {mc: m, cyc: 1}}
            trace = run(csys, max_steps=budget, initial=init)
            rep = _mult_report(m, n, trace)
            if not rep.ok:
                failures.append(rep)
    return failures, time.time() - t0


# ============================================================
# Membrane-run trajectory extraction
# ============================================================


@dataclass
class GneResult:
    """A membrane run reduced to countable facts."""

    spec: GameSpec
    co: PayoffCoefficients
    trace: Trace
    states: List[StateZ]
    timings: List[LoopTiming]
    warnings: List[str]

    @property
    def loops_completed(self) -> int:
        return len(self.states) - 1

    def csv(self) -> str:
        return trajectory_csv(Trajectory(self.spec, self.co, self.states, []))


def _stage_apps(trace: Trace, lo: int, hi: int, prefix_for: Dict[str, object]
                ) -> Dict[str, Dict[object, int]]:
    """Sum applications of id prefixes inside a step window."""
    out: Dict[str, Dict[object, int]] = {name: {} for name in prefix_for}
    for t in range(lo, hi + 1):
        for cr, cnt in trace.records[t - 1]:
            for name, keyed in prefix_for.items():
                key = keyed(cr.id)  # type: ignore[operator]
                if key is not None:
                    out[name][key] = out[name].get(key, 0) + cnt
    return out


def _ki_of(rule_id: str, prefix: str) -> Optional[KI]:
    # Ids look like S3R12_k01_i03; parse the player and slot fields.
    if not rule_id.startswith(prefix):
        return None
    k = i = None
    for part in rule_id[len(prefix):].split("_"):
        if part.startswith("k"):
            k = int(part[1:])
        elif part.startswith("i"):
            i = int(part[1:])
    if k is None or i is None:
        return None
    return (k, i)


def _k_of(rule_id: str, prefix: str) -> Optional[int]:
    if not rule_id.startswith(prefix):
        return None
    for part in rule_id[len(prefix):].split("_"):
        if part.startswith("k"):
            return int(part[1:])
    return None


def run_gne(spec: GameSpec, loops: Optional[int] = None,
            budget_factor: int = 200, strict: bool = False) -> GneResult:
    """Build, run, and extract the per-loop counts of the membrane system.

    The trajectory is read off the stamped per-loop export objects in the
    skin; err tokens are attributed to loops by the step window in which
    their forming rules fired.
    """
    if loops is not None and loops != spec.loops:
        spec = GameSpec(spec.players, spec.slots,
                        [list(s) for s in spec.strategies],
                        list(spec.d_diag), list(spec.j_bar),
                        [list(r) for r in spec.alpha],
                        [list(r) for r in spec.beta], list(spec.mass),
                        spec.r_disc, loops)
    co = payoff_coefficients(spec)
    warnings: List[str] = []
    sysd = build_gne_system(spec)
    trace = run(sysd, max_steps=budget_factor * (spec.loops + 1),
                strict=strict)
    if not trace.halted:
        warnings.append(f"budget exhausted after {trace.steps} steps")
    timings = stage_boundaries(trace, spec)
    for lt in timings:
        if lt.missing:
            warnings.append(f"loop {lt.loop}: stages {lt.missing} never ran")

    # Exported counts, keyed by the loop stamp.
    skin = read_region(trace.final, "0", base="result")
    by_loop: Dict[int, Dict[KI, int]] = {}
    for s, cnt in skin.items():
        k, i, l, nn = s.params
        if co.l_of.get((k, i)) != l:
            warnings.append(f"export index mismatch for {s.text}")
        by_loop.setdefault(nn, {})[(k, i)] = cnt

    # Err formation per loop window.
    starts = loop_starts(trace)
    err_new: Dict[int, Dict[int, int]] = {}
    for idx, t0 in enumerate(starts):
        t1 = starts[idx + 1] - 1 if idx + 1 < len(starts) else len(trace.records)
        acc: Dict[int, int] = {}
        for t in range(t0, t1 + 1):
            for cr, cnt in trace.records[t - 1]:
                k = _k_of(cr.id, "S5R23") or _k_of(cr.id, "S5R24")
                if k is not None:
                    acc[k] = acc.get(k, 0) + cnt
        err_new[idx + 1] = acc

    states = [initial_state(spec)]
    err_run = {k: 0 for k in range(1, spec.players + 1)}
    for nn in range(1, max(by_loop) + 1 if by_loop else 1):
        if nn not in by_loop:
            warnings.append(f"no exports for loop {nn}")
            break
        # A pair with zero tokens exports nothing; absence means zero.
        counts: Dict[KI, int] = {ki: 0 for ki in co.pairs}
        counts.update(by_loop[nn])
        for k, v in err_new.get(nn, {}).items():
            err_run[k] += v
        states.append(StateZ(counts, dict(err_run)))
    if len(states) - 1 != spec.loops:
        warnings.append(
            f"completed {len(states) - 1} of {spec.loops} iterations")
    for nn, state in enumerate(states):
        for k in range(1, spec.players + 1):
            if state.err.get(k, 0) == 0 and state.population(spec, k) != spec.r_disc:
                warnings.append(
                    f"loop {nn}: player {k} total "
                    f"{state.population(spec, k)} != {spec.r_disc}")
    return GneResult(spec, co, trace, states, timings, warnings)


# ============================================================
# Engine-vs-reference comparison
# ============================================================


@dataclass
class Divergence:
    loop: int
    stage: str
    key: str
    engine: int
    oracle: int


@dataclass
class CompareReport:
    spec: GameSpec
    agree: bool
    divergences: List[Divergence]
    loops_checked: int
    engine_warnings: List[str]

    def first(self) -> Optional[Divergence]:
        return self.divergences[0] if self.divergences else None

    def text(self) -> str:
        lines = [f"loops checked: {self.loops_checked}"]
        if self.agree:
            lines.append("exact agreement")
        else:
            d = self.first()
            lines.append(f"first divergence: loop {d.loop} {d.stage} {d.key}: "
                         f"engine {d.engine} vs reference {d.oracle}")
            lines.append(f"total divergent entries: {len(self.divergences)}")
        for w in self.engine_warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def compare_engines(spec: GameSpec, loops: Optional[int] = None,
                    traj: Optional[Trajectory] = None,
                    result: Optional[GneResult] = None) -> CompareReport:
    """Count-for-count comparison with per-stage attribution.

    Stage values are recovered from the membrane trace by counting rule
    applications inside each loop window: payoff conversions (stage 1),
    mean exports (stage 2), excess exports (stage 3), rounded products
    and split rates (stage 4), then final counts and err (stage 5).
    """
    L = spec.loops if loops is None else loops
    if result is None:
        result = run_gne(spec, loops=L)
    if traj is None:
        traj = simulate(result.spec, loops=L)
    co = result.co
    trace = result.trace
    starts = loop_starts(trace)
    divs: List[Divergence] = []

    def claim(loop: int, stage: str, key: str, got: int, want: int) -> None:
        if got != want:
            divs.append(Divergence(loop, stage, key, got, want))

    checked = min(len(starts), len(traj.loops), L)
    for idx in range(checked):
        t0 = starts[idx]
        t1 = starts[idx + 1] - 1 if idx + 1 < len(starts) else len(trace.records)
        rec = traj.loops[idx]
        sums = _stage_apps(trace, t0, t1, {
            "pay": lambda rid: _ki_of(rid, "S1R10"),
            "mean": lambda rid: _k_of(rid, "S2R10") or _k_of(rid, "S2R11"),
            "excess": lambda rid: _ki_of(rid, "S3R12"),
            "zqr": lambda rid: _ki_of(rid, "S4R15") or _ki_of(rid, "S4R16"),
            "dzp": lambda rid: _ki_of(rid, "S4R19"),
            "dzn": lambda rid: _ki_of(rid, "S4R20"),
        })
        loop_no = idx + 1
        for k, i in co.pairs:
            l = co.l_of[(k, i)]
            claim(loop_no, "stage1:payoff", f"p[{l}]",
                  sums["pay"].get((k, i), 0), rec.p_tilde[l - 1])
        for k in range(1, spec.players + 1):
            claim(loop_no, "stage2:mean", f"P[{k}]",
                  sums["mean"].get(k, 0), rec.p_hat[k])
        for k, i in co.pairs:
            claim(loop_no, "stage3:excess", f"q[{k},{i}]",
                  sums["excess"].get((k, i), 0), rec.rate.q[(k, i)])
            claim(loop_no, "stage4:product", f"zqr[{k},{i}]",
                  sums["zqr"].get((k, i), 0), rec.rate.zqr[(k, i)])
            claim(loop_no, "stage4:rate+", f"dzp[{k},{i}]",
                  sums["dzp"].get((k, i), 0), rec.rate.dzp[(k, i)])
            claim(loop_no, "stage4:rate-", f"dzn[{k},{i}]",
                  sums["dzn"].get((k, i), 0), rec.rate.dzn[(k, i)])
        if idx + 1 < len(result.states) and idx + 1 < len(traj.states):
            es, os_ = result.states[idx + 1], traj.states[idx + 1]
            for k, i in co.pairs:
                claim(loop_no, "stage5:counts", f"z[{k},{i}]",
                      es.counts[(k, i)], os_.counts[(k, i)])
            for k in range(1, spec.players + 1):
                claim(loop_no, "stage5:err", f"err[{k}]",
                      es.err.get(k, 0), os_.err.get(k, 0))

    if len(result.states) != len(traj.states):
        divs.append(Divergence(min(len(result.states), len(traj.states)),
                               "stage5:length", "trajectory",
                               len(result.states) - 1, len(traj.states) - 1))
    divs.sort(key=lambda d: d.loop)
    return CompareReport(spec, not divs, divs, checked, result.warnings)
