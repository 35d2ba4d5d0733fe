"""Time sweeps of the optimal strategy and detection of regime transitions.

A transition of the zeroth kind is a jump in the (sorted) spectrum of
the optimal observable, accompanied by a jump of the optimal state.  A
transition of the first kind is a kink in the spectrum while the
optimal state moves continuously.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bayesest import AveragedChannel, GaussianPrior, NumericalFailure, prior_grid
from .optimizer import (
    OptimizerConfig,
    Strategy,
    align_phases,
    ansatz,
    best_local_phases,
    optimize_on,
    random_product_on,
    regime_label,
    run_iteration,
    standard_ansatz_labels,
    state_fidelities,
)
from .spinbath import GAAS, BathSpec, Material

log = logging.getLogger(__name__)

THETA_JUMP = 5.0
THETA_KINK = 10.0
OVERLAP_MIN = 0.9
BRACKET_REL = 0.02
POPULATION_GAIN_TOL = 1e-10
NOISE_REL = 1e-9  # relative size of spectrum changes treated as round-off


@dataclass(frozen=True)
class SweepRecord:
    t: float
    ratio_opt: float
    ansatz_ratios: dict[str, float]
    spectrum: np.ndarray
    probabilities: np.ndarray
    state_fidelities: dict[str, float]
    regime_label: str
    state: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    converged: bool = True
    population_gain: float = 0.0


@dataclass(frozen=True)
class TransitionEvent:
    t_lo: float
    t_hi: float
    kind: str
    spectrum_jump: float
    kink_score: float
    state_overlap_drop: float

    def __post_init__(self):
        if not self.t_lo < self.t_hi:
            raise ValueError("event bracket must satisfy t_lo < t_hi")
        if self.kind not in ("zeroth", "first"):
            raise ValueError(f"unknown transition kind {self.kind!r}")


def default_time_grid(t_start: float = 0.1, t_end: float = 2000.0, points: int = 200,
                      spacing: str = "log") -> np.ndarray:
    if spacing == "log":
        return np.geomspace(t_start, t_end, points)
    if spacing == "linear":
        return np.linspace(t_start, t_end, points)
    raise ValueError(f"spacing must be 'linear' or 'log', got {spacing!r}")


def validity_limit_ns(material: Material = GAAS) -> float:
    """Upper end ``n/A`` (in ns) of the time range where the box model holds."""
    from .spinbath import HBAR_UEV_NS

    return material.n_phys * HBAR_UEV_NS / material.A_total_ueV


def ansatz_column(label: str, N: int) -> str:
    """CSV column suffix for an ansatz label (``plus0``, ``00`` for two dots)."""
    if label == "ghz":
        return "ghz"
    if label == "plus_product":
        return "plus"
    k = int(label[label.index("(") + 1:-1])
    return "plus" * k + "0" * (N - k)


class SweepContext:
    """Everything needed to (re-)evaluate the optimum at arbitrary times."""

    def __init__(self, N: int, bath: BathSpec, prior: GaussianPrior, cfg: OptimizerConfig,
                 g: float = GAAS.g_factor):
        self.N = N
        self.bath = bath
        self.prior = prior
        self.cfg = cfg
        self.g = g

    def grid(self, t: float):
        return prior_grid(self.prior, self.cfg.quad_nodes, self.N, t, self.g)

    def channel(self, t: float) -> AveragedChannel:
        return AveragedChannel(self.N, self.bath, t, self.prior, self.grid(t), self.g)

    def optimize(self, t: float, stream: tuple[int, ...], warm: Sequence[np.ndarray] = ()) -> Strategy:
        return optimize_on(self.channel(t), self.cfg, stream, tuple(warm))

    def polish(self, t: float, warm: np.ndarray, current: Strategy) -> Strategy:
        ch = self.channel(t)
        psi, ratio, its, conv, trace = run_iteration(ch, warm, self.cfg.tol, self.cfg.max_iter)
        if ratio < current.ratio - 1e-15:
            psi = align_phases(psi)
            return Strategy(state=psi, outcome=ch.evaluate(psi), label="optimal", iterations=its,
                            converged=conv or current.converged, trace=tuple(trace))
        return current

    def record(self, t: float, s: Strategy) -> SweepRecord:
        ch = self.channel(t)
        ratios = {lbl: ch.ratio(ansatz(lbl, self.N)) for lbl in standard_ansatz_labels(self.N)}
        fids = state_fidelities(s.state)
        return SweepRecord(t=float(t), ratio_opt=s.ratio, ansatz_ratios=ratios,
                           spectrum=s.outcome.spectrum, probabilities=s.outcome.probabilities,
                           state_fidelities=fids, regime_label=regime_label(fids), state=s.state,
                           L=s.outcome.L, converged=s.converged,
                           population_gain=ch.population_gain(s.state))

    def evaluate_at(self, t: float, warm: Sequence[np.ndarray] = ()) -> SweepRecord:
        stream = (int.from_bytes(np.float64(t).tobytes(), "little") & 0x7FFFFFFF,)
        s = self.optimize(t, stream, warm)
        for w in warm:
            s = self.polish(t, w, s)
        return self.record(t, s)


def _pass1_task(args):
    ctx, i, t = args
    return ctx.optimize(t, (i,))


def _check_grid(t_grid: np.ndarray) -> None:
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("time grid must be a non-empty 1-d array")
    if t_grid[0] < 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be non-negative and strictly increasing")


def time_sweep(N: int, bath: BathSpec, prior: GaussianPrior, t_grid, cfg: OptimizerConfig | None = None,
               g: float = GAAS.g_factor, workers: int = 1,
               progress: Callable[[str], None] | None = None) -> list[SweepRecord]:
    """Optimal strategy and fixed-ansatz ratios at every time of ``t_grid``.

    Pass 1 optimizes each time independently (optionally in worker
    processes).  Pass 2 walks the grid forward and then backward,
    re-iterating from the neighbour's optimum and keeping the better
    result, which removes solver-induced jitter at regime boundaries.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    _check_grid(t_grid)
    cfg = OptimizerConfig.for_dots(N) if cfg is None else cfg
    ctx = SweepContext(N, bath, prior, cfg, g)
    tasks = [(ctx, i, float(t)) for i, t in enumerate(t_grid)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            best = list(pool.map(_pass1_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        best = []
        for k, task in enumerate(tasks):
            best.append(_pass1_task(task))
            if progress and (k + 1) % 20 == 0:
                progress(f"N={N}: pass 1 {k + 1}/{len(tasks)}")
    order = list(range(1, len(t_grid))) + list(range(len(t_grid) - 2, -1, -1))
    for pos, i in enumerate(order):
        j = i - 1 if pos < len(t_grid) - 1 else i + 1
        best[i] = ctx.polish(float(t_grid[i]), best[j].state, best[i])
    if progress:
        progress(f"N={N}: warm-start pass done")
    records = [ctx.record(float(t), s) for t, s in zip(t_grid, best)]
    for r in records:
        if not r.converged:
            log.warning("optimizer did not converge at t=%.4g ns", r.t)
    if prior.B0 == 0.0:
        worst = max(r.population_gain for r in records)
        if worst >= POPULATION_GAIN_TOL:
            raise NumericalFailure(f"population measurement gains {worst:.3g} at B0=0; expected none")
    if t_grid[-1] > 0.25 * validity_limit_ns():
        log.warning("t up to %.4g ns approaches the box-model validity limit %.4g ns",
                    t_grid[-1], validity_limit_ns())
    return records


# --- transition detection --------------------------------------------------------

def _symmetry_images(phi: np.ndarray) -> list[np.ndarray]:
    """Images of ``phi`` under qubit permutations and the global flip ``X^N`` with conjugation."""
    N = int(round(math.log2(phi.size)))
    flipped = np.conj(phi[::-1])
    out = []
    for perm in itertools.permutations(range(N)):
        for v in (phi, flipped):
            out.append(v.reshape([2] * N).transpose(perm).reshape(-1))
    return out


def state_overlap(psi: np.ndarray, phi: np.ndarray) -> float:
    """Overlap of two optimal states modulo the exact symmetries of the problem.

    These are local z-phases, qubit permutations and ``X^N`` combined with
    complex conjugation.  Degenerate optima related by a symmetry therefore
    count as the same state.
    """
    best = best_local_phases(psi, phi)[1] ** 2
    if best > 0.999:
        return float(best)
    for img in _symmetry_images(phi)[1:]:
        best = max(best, best_local_phases(psi, img)[1] ** 2)
    return float(min(best, 1.0))


def _grid_coordinate(t: np.ndarray, log_grid: bool) -> np.ndarray:
    steps = np.diff(t)
    if log_grid:
        if t[0] <= 0:
            raise ValueError("log-spaced grid cannot contain t <= 0")
        x = np.log(t)
        d = np.diff(x)
        if np.max(np.abs(d - d.mean())) > 1e-6 * abs(d.mean()):
            raise ValueError("grid flagged as log-uniform but it is not")
        return x
    if np.max(np.abs(steps - steps.mean())) > 1e-6 * abs(steps.mean()):
        raise ValueError("non-uniform time grid; pass log_grid=True for log spacing")
    return t


KINK_WINDOW = 6


def _kink_baseline(score: np.ndarray, window: int = KINK_WINDOW) -> np.ndarray:
    """Reference level for each second difference.

    The larger of the global median and the median over the neighbours
    ``2..window`` steps away on either side.  A kink spikes one or two
    adjacent second differences, so the neighbours measure the smooth
    curvature around it; the global median is a floor for flat stretches.
    """
    glob = np.median(score)
    out = np.empty_like(score)
    for k in range(len(score)):
        nb = np.concatenate([score[max(0, k - window):max(0, k - 1)], score[k + 2:k + window + 1]])
        out[k] = max(glob, np.median(nb)) if nb.size else glob
    return np.maximum(out, np.finfo(float).tiny)


def detect_transitions(records: Sequence[SweepRecord], log_grid: bool | None = None,
                       context: SweepContext | None = None,
                       theta_jump: float = THETA_JUMP, theta_kink: float = THETA_KINK,
                       overlap_min: float = OVERLAP_MIN,
                       bracket_rel: float = BRACKET_REL) -> list[TransitionEvent]:
    """Zeroth- and first-kind events from a sweep.

    With a ``context`` (the problem that produced ``records``) every
    candidate is re-run on a local grid four times denser and kept only if
    it is classified the same way again; survivors are then bisected by
    re-optimizing until the bracket is narrower than ``bracket_rel * t``.
    Without it, the raw grid brackets are returned.
    """
    if len(records) < 5:
        raise ValueError("need at least 5 records")
    t = np.array([r.t for r in records])
    if log_grid is None:
        log_grid = bool(t[0] > 0 and np.allclose(np.diff(np.log(t)), np.diff(np.log(t))[0], rtol=1e-6))
    x = _grid_coordinate(t, log_grid)
    spec = np.array([r.spectrum for r in records])
    h = np.diff(x)
    jumps = np.max(np.abs(np.diff(spec, axis=0)), axis=1)
    ovl = np.array([state_overlap(records[i].state, records[i + 1].state) for i in range(len(records) - 1)])
    # floors keep exactly flat or piecewise-linear data from flagging round-off
    scale = NOISE_REL * max(float(np.max(np.abs(spec))), np.finfo(float).tiny)
    med_jump = max(np.median(jumps), scale)

    events: list[TransitionEvent] = []
    zeroth_idx = [i for i in range(len(jumps))
                  if jumps[i] > theta_jump * med_jump and ovl[i] < overlap_min]
    for i in zeroth_idx:
        events.append(TransitionEvent(float(t[i]), float(t[i + 1]), "zeroth", float(jumps[i]),
                                      0.0, float(1 - ovl[i])))

    d2 = np.abs(spec[2:] - 2 * spec[1:-1] + spec[:-2]) / (h[:-1] * h[1:])[:, None]
    score = np.max(d2, axis=1)
    baseline = np.maximum(_kink_baseline(score), scale / np.median(h) ** 2)
    blocked = set()
    for i in zeroth_idx:
        blocked.update({i - 1, i, i + 1})
    # k indexes the centre record k+1; keep two records on each side for refinement
    cand = [k for k in range(1, len(score) - 1)
            if score[k] > theta_kink * baseline[k] and k not in blocked
            and ovl[k] >= overlap_min and ovl[k + 1] >= overlap_min]
    # runs of neighbouring candidates describe a single kink
    groups: list[list[int]] = []
    for k in cand:
        if groups and k - groups[-1][-1] <= 1:
            groups[-1].append(k)
        else:
            groups.append([k])
    for grp in groups:
        k = max(grp, key=lambda q: score[q] / baseline[q])
        c = k + 1
        events.append(TransitionEvent(float(t[c - 1]), float(t[c + 1]), "first",
                                      float(jumps[c - 1:c + 1].max()), float(score[k] / baseline[k]),
                                      float(1 - min(ovl[c - 1], ovl[c]))))

    events.sort(key=lambda e: e.t_lo)
    if context is None:
        return events
    step = float(np.median(h))
    kept = []
    for e in events:
        if confirm_event(e, context, step, log_grid):
            kept.append(_refine_event(e, records, t, x, spec, log_grid, context.evaluate_at, bracket_rel))
        else:
            log.info("dropping %s-kind candidate at [%.4g, %.4g] ns: not reproduced on a finer grid",
                     e.kind, e.t_lo, e.t_hi)
    return kept


def _refine_event(ev: TransitionEvent, records, t, x, spec, log_grid, refine, bracket_rel):
    lo = int(np.searchsorted(t, ev.t_lo))
    hi = int(np.searchsorted(t, ev.t_hi))
    t_lo, t_hi = ev.t_lo, ev.t_hi
    rec_lo, rec_hi = records[lo], records[hi]
    coord = np.log if log_grid else (lambda v: v)
    if ev.kind == "zeroth":
        for _ in range(40):
            if t_hi - t_lo <= bracket_rel * t_lo:
                break
            tm = math.sqrt(t_lo * t_hi) if log_grid else 0.5 * (t_lo + t_hi)
            rm = refine(tm, (rec_lo.state, rec_hi.state))
            d_lo = np.max(np.abs(rm.spectrum - rec_lo.spectrum))
            d_hi = np.max(np.abs(rm.spectrum - rec_hi.spectrum))
            if d_lo <= d_hi:
                t_lo, rec_lo = tm, rm
            else:
                t_hi, rec_hi = tm, rm
        jump = float(np.max(np.abs(rec_hi.spectrum - rec_lo.spectrum)))
        drop = 1 - state_overlap(rec_lo.state, rec_hi.state)
        return TransitionEvent(float(t_lo), float(t_hi), "zeroth", jump, ev.kink_score, float(drop))

    # first kind: the kink sits between the two linear branches
    if lo < 1 or hi + 1 >= len(t):
        return ev
    xl = [x[lo - 1], x[lo]]
    yl = [spec[lo - 1], spec[lo]]
    xr = [x[hi], x[hi + 1]]
    yr = [spec[hi], spec[hi + 1]]
    for _ in range(40):
        if t_hi - t_lo <= bracket_rel * t_lo:
            break
        tm = math.sqrt(t_lo * t_hi) if log_grid else 0.5 * (t_lo + t_hi)
        xm = float(coord(tm))
        rm = refine(tm, (rec_lo.state, rec_hi.state))
        left = yl[1] + (yl[1] - yl[0]) * (xm - xl[1]) / (xl[1] - xl[0])
        right = yr[0] + (yr[1] - yr[0]) * (xm - xr[0]) / (xr[1] - xr[0])
        if np.max(np.abs(rm.spectrum - left)) <= np.max(np.abs(rm.spectrum - right)):
            xl, yl = [xl[1], xm], [yl[1], rm.spectrum]
            t_lo, rec_lo = tm, rm
        else:
            xr, yr = [xm, xr[0]], [rm.spectrum, yr[0]]
            t_hi, rec_hi = tm, rm
    return TransitionEvent(float(t_lo), float(t_hi), "first", ev.spectrum_jump, ev.kink_score, ev.state_overlap_drop)


def confirm_event(ev: TransitionEvent, ctx: SweepContext, grid_step: float, log_grid: bool = True,
                  density: int = 4, half_points: int = 12) -> bool:
    """Re-run a local sweep ``density`` times finer than the original grid and reclassify.

    The local grid is centred on the event bracket; ``grid_step`` is the
    original step in the grid coordinate (log t or t).  Returns True when
    an event of the same kind overlaps the bracket again.
    """
    h = grid_step / density
    offsets = h * np.arange(-half_points, half_points + 1)
    if log_grid:
        local = math.sqrt(ev.t_lo * ev.t_hi) * np.exp(offsets)
    else:
        local = 0.5 * (ev.t_lo + ev.t_hi) + offsets
        local = local[local >= 0]
    recs = time_sweep(ctx.N, ctx.bath, ctx.prior, local, ctx.cfg, ctx.g)
    found = detect_transitions(recs, log_grid=log_grid)
    pad = (math.exp(h) if log_grid else 1.0)
    for e in found:
        lo, hi = (ev.t_lo / pad, ev.t_hi * pad) if log_grid else (ev.t_lo - h, ev.t_hi + h)
        if e.kind == ev.kind and e.t_lo <= hi and e.t_hi >= lo:
            return True
    return False


# --- scans -------------------------------------------------------------------------

@dataclass(frozen=True)
class NRow:
    N: int
    t_star: float
    min_ratio: float
    ghz_t_star: float
    ghz_min_ratio: float


def sweep_minimum(records: Sequence[SweepRecord]) -> tuple[float, float]:
    k = int(np.argmin([r.ratio_opt for r in records]))
    return records[k].t, records[k].ratio_opt


def n_comparison(N_list: Sequence[int], bath: BathSpec, prior: GaussianPrior, t_grid,
                 cfg: OptimizerConfig | None = None, g: float = GAAS.g_factor, workers: int = 1,
                 sweeps: dict[int, list[SweepRecord]] | None = None,
                 progress: Callable[[str], None] | None = None) -> list[NRow]:
    """Minimum over time of the optimal ratio for each number of dots.

    Also reports where the pure-GHZ curve is best.  Precomputed sweeps may be
    passed in ``sweeps`` to avoid recomputation.
    """
    rows = []
    for N in N_list:
        if not 1 <= N <= 5:
            raise ValueError("N out of supported range [1,5]")
        recs = (sweeps or {}).get(N)
        if recs is None:
            c = cfg if cfg is not None else OptimizerConfig.for_dots(N)
            recs = time_sweep(N, bath, prior, t_grid, c, g, workers, progress)
        t_star, rmin = sweep_minimum(recs)
        ghz_curve = [r.ansatz_ratios["ghz"] for r in recs]
        kg = int(np.argmin(ghz_curve))
        rows.append(NRow(N, t_star, rmin, recs[kg].t, ghz_curve[kg]))
    return rows


@dataclass(frozen=True)
class PriorRow:
    N: int
    B0: float
    dB: float
    t_star: float
    min_ratio: float
    van_trees: float


def prior_scan(N_list: Sequence[int], bath: BathSpec, priors: Sequence[GaussianPrior], t_grid,
               cfg: OptimizerConfig | None = None, g: float = GAAS.g_factor, workers: int = 1,
               progress: Callable[[str], None] | None = None) -> list[PriorRow]:
    from .bayesest import van_trees_bound

    if not priors:
        raise ValueError("need at least one prior")
    rows = []
    for N in N_list:
        for p in priors:
            c = cfg if cfg is not None else OptimizerConfig.for_dots(N)
            recs = time_sweep(N, bath, p, t_grid, c, g, workers, progress)
            k = int(np.argmin([r.ratio_opt for r in recs]))
            # the Fisher information oscillates up to twice as fast as the state
            grid = prior_grid(p, c.quad_nodes, 2 * N, recs[k].t, g)
            bound = van_trees_bound(recs[k].state, bath, recs[k].t, p, grid, g)
            rows.append(PriorRow(N, p.B0, p.dB, recs[k].t, recs[k].ratio_opt, bound / p.variance))
    return rows


def product_baseline_at(N: int, bath: BathSpec, prior: GaussianPrior, t: float, samples: int = 500,
                        seed: int = 0, g: float = GAAS.g_factor, quad_nodes: int = 64) -> Strategy:
    grid = prior_grid(prior, quad_nodes, N, t, g)
    return random_product_on(AveragedChannel(N, bath, t, prior, grid, g), samples, seed)
