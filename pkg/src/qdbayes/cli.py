"""Command-line front-end: ``qdbayes <command> [--config PATH] [--out DIR] ...``.

Every command writes ``<out>/<command>.csv`` plus a JSON sidecar with the
resolved configuration and a content hash; figures go next to the CSVs.
Progress goes to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_json, load_config, parse_config, serialize_config

log = logging.getLogger("qdbayes")

COMMANDS = ("bath-table", "channel-curves", "sweep", "optimize", "compare-n", "prior-scan",
            "transitions", "validate")


class InvariantViolation(RuntimeError):
    """A produced row breaks an invariant of the module that produced it."""


def fmt(x) -> str:
    """Locale-independent number formatting with 12 significant digits."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if v == 0.0:
        return "0"
    return f"{v:.12g}"


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def progress(msg: str) -> None:
    print(f"[qdbayes] {msg}", file=sys.stderr, flush=True)


class Output:
    """Writes CSVs, figures and one sidecar per command into a directory."""

    def __init__(self, out_dir: Path, command: str, cfg: RunConfig, extra: dict | None = None):
        self.dir = out_dir
        self.command = command
        self.cfg = cfg
        self.extra = extra or {}
        self.files: dict[str, str] = {}
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.dir}: {exc}") from None
        if not os.access(self.dir, os.W_OK):
            raise OSError(f"output directory {self.dir} is not writable")

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> Path:
        text = csv_text(header, rows)
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        self.files[name] = hashlib.sha1(text.encode()).hexdigest()
        progress(f"wrote {path} ({len(rows)} rows)")
        return path

    def figure(self, name: str) -> Path:
        self.files[name] = "figure"
        return self.dir / name

    def finish(self) -> None:
        inputs = f"{self.command}\n{serialize_config(self.cfg)}".encode()
        sidecar = {
            "command": self.command,
            "version": __version__,
            "config": json.loads(config_json(self.cfg)),
            "content_hash": hashlib.sha1(b"blob %d\0" % len(inputs) + inputs).hexdigest(),
            "outputs": self.files,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            **self.extra,
        }
        path = self.dir / f"{self.command}.json"
        path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- commands ------------------------------------------------------------------------

def cmd_bath_table(cfg: RunConfig, out: Output, threads: int) -> None:
    from fractions import Fraction

    from .spinbath import multiplicity_oracle, multiplicity_table

    m = cfg.material
    n = cfg.sim.n_bath
    table = multiplicity_table(n, m.bath_spin_s)
    if table != multiplicity_oracle(n, m.bath_spin_s):
        raise InvariantViolation("multiplicity table disagrees with spin-coupling oracle")
    dim = int((2 * Fraction(m.bath_spin_s).limit_denominator(2) + 1) ** n)
    if sum(c * (2 * K + 1) for K, c in table.items()) != dim:
        raise InvariantViolation("multiplicities do not add up to the bath dimension")
    rows = [[float(K), c, c / dim, float((2 * K + 1) * c) / dim] for K, c in table.items()]
    out.write_csv("bath-table.csv", ["K", "count", "P_state", "P_multiplet"], rows)


def cmd_channel_curves(cfg: RunConfig, out: Output, threads: int) -> None:
    from .boxchannel import channel_arrays
    from .plotting import plot_channel_curves

    bath = cfg.bath()
    g = cfg.material.g_factor
    p = cfg.prior
    fields_mT = [p.B0_mT - p.dB_mT, p.B0_mT, p.B0_mT + p.dB_mT]
    t = cfg.time_grid()
    A = np.empty((len(t), len(fields_mT)))
    E = np.empty((len(t), len(fields_mT)), dtype=complex)
    for i, ti in enumerate(t):
        A[i], E[i] = channel_arrays(bath, np.array(fields_mT) * 1e-3, float(ti), g)
    if np.any(A < -1e-12) or np.any(A > 1 + 1e-12) or np.any(np.abs(E) > A + 1e-10):
        raise InvariantViolation("channel coefficients outside 0 <= |E| <= A <= 1")
    rows = [[t[i], fields_mT[j], A[i, j], E[i, j].real, E[i, j].imag, abs(E[i, j])]
            for j in range(len(fields_mT)) for i in range(len(t))]
    out.write_csv("channel-curves.csv", ["t_ns", "B_mT", "A", "re_E", "im_E", "abs_E"], rows)
    plot_channel_curves(t, {f"B = {b:g} mT": (A[:, j], E[:, j]) for j, b in enumerate(fields_mT)},
                        out.figure("channel-curves.png"))


def _sweep_columns(N: int) -> tuple[list[str], list[str]]:
    from .optimizer import standard_ansatz_labels
    from .sweeper import ansatz_column

    labels = standard_ansatz_labels(N)
    return labels, [f"ratio_{ansatz_column(lbl, N)}" for lbl in labels]


def check_record(r, tol: float) -> None:
    if not -1e-10 <= r.ratio_opt <= 1 + 1e-10:
        raise InvariantViolation(f"ratio {r.ratio_opt} outside [0, 1] at t={r.t}")
    if r.ratio_opt > min(r.ansatz_ratios.values()) + max(tol, 1e-9):
        raise InvariantViolation(f"optimum worse than a fixed ansatz at t={r.t}")
    if abs(r.probabilities.sum() - 1) > 1e-9:
        raise InvariantViolation(f"outcome probabilities do not sum to 1 at t={r.t}")


def sweep_rows(records, N: int) -> tuple[list[str], list[list]]:
    labels, cols = _sweep_columns(N)
    d = 2**N
    header = (["t_ns", "ratio_opt"] + cols + [f"lambda_{k + 1}" for k in range(d)]
              + [f"p_{k + 1}" for k in range(d)] + ["regime"])
    rows = []
    for r in records:
        rows.append([r.t, r.ratio_opt] + [r.ansatz_ratios[lbl] for lbl in labels]
                    + list(r.spectrum * 1e3) + list(r.probabilities) + [r.regime_label])
    return header, rows


def _plot_records(records, N: int, path, events=()) -> None:
    from .plotting import plot_sweep

    labels, cols = _sweep_columns(N)
    plot_sweep([r.t for r in records], [r.ratio_opt for r in records],
               {c[6:]: np.array([r.ansatz_ratios[lbl] for r in records]) for lbl, c in zip(labels, cols)},
               np.array([r.spectrum for r in records]) * 1e3, np.array([r.probabilities for r in records]),
               path, events, title=f"N = {N}")


def _states_cache(out: Output) -> Path:
    return out.dir / "sweep-states.npz"


def run_sweep(cfg: RunConfig, out: Output, threads: int, reuse: bool = True):
    """Sweep for the configured problem; reuses saved optimal states when the config matches."""
    from .optimizer import Strategy
    from .sweeper import SweepContext, time_sweep

    N = cfg.dots
    bath, prior, ocfg = cfg.bath(), cfg.prior_obj(), cfg.optimizer_config()
    key = cfg.content_hash()
    cache = _states_cache(out)
    if reuse and cache.exists():
        data = np.load(cache, allow_pickle=False)
        if str(data["key"]) == key:
            progress(f"reusing optimal states from {cache}")
            ctx = SweepContext(N, bath, prior, ocfg, cfg.material.g_factor)
            recs = []
            for t, psi, conv in zip(data["t"], data["states"], data["converged"]):
                ch = ctx.channel(float(t))
                s = Strategy(state=psi, outcome=ch.evaluate(psi), label="optimal", converged=bool(conv))
                recs.append(ctx.record(float(t), s))
            return recs
    recs = time_sweep(N, bath, prior, cfg.time_grid(), ocfg, cfg.material.g_factor, threads, progress)
    np.savez(cache, key=np.array(key), t=np.array([r.t for r in recs]),
             states=np.array([r.state for r in recs]), converged=np.array([r.converged for r in recs]))
    return recs


def cmd_sweep(cfg: RunConfig, out: Output, threads: int) -> None:
    recs = run_sweep(cfg, out, threads, reuse=False)
    for r in recs:
        check_record(r, cfg.sim.tol)
    header, rows = sweep_rows(recs, cfg.dots)
    out.write_csv("sweep.csv", header, rows)
    _plot_records(recs, cfg.dots, out.figure("sweep.png"))


def cmd_transitions(cfg: RunConfig, out: Output, threads: int) -> None:
    from .sweeper import SweepContext, detect_transitions

    recs = run_sweep(cfg, out, threads)
    ctx = SweepContext(cfg.dots, cfg.bath(), cfg.prior_obj(), cfg.optimizer_config(), cfg.material.g_factor)
    d = cfg.detect
    progress("detecting transitions")
    events = detect_transitions(recs, log_grid=cfg.sweep.spacing == "log", context=ctx,
                                theta_jump=d.theta_jump, theta_kink=d.theta_kink, overlap_min=d.overlap_min)
    rows = [[e.kind, e.t_lo, e.t_hi, e.spectrum_jump * 1e3, e.kink_score, e.state_overlap_drop]
            for e in events]
    out.write_csv("transitions.csv",
                  ["kind", "t_lo_ns", "t_hi_ns", "spectrum_jump_mT", "kink_score", "state_overlap_drop"], rows)
    _plot_records(recs, cfg.dots, out.figure("transitions.png"), events)


def cmd_optimize(cfg: RunConfig, out: Output, threads: int, t_ns: float | None = None) -> None:
    from .optimizer import ansatz, standard_ansatz_labels
    from .sweeper import SweepContext

    N = cfg.dots
    t = cfg.sweep.t_start_ns if t_ns is None else t_ns
    ctx = SweepContext(N, cfg.bath(), cfg.prior_obj(), cfg.optimizer_config(), cfg.material.g_factor)
    r = ctx.evaluate_at(t)
    check_record(r, cfg.sim.tol)
    ch = ctx.channel(t)
    rows = [["optimal", r.ratio_opt, r.regime_label, int(r.converged)]]
    for lbl in standard_ansatz_labels(N):
        rows.append([lbl, ch.ratio(ansatz(lbl, N)), "", 1])
    out.write_csv("optimize.csv", ["strategy", "ratio", "regime", "converged"], rows)
    d = 2**N
    state_rows = [[format(k, f"0{N}b"), r.state[k].real, r.state[k].imag, r.spectrum[k] * 1e3,
                   r.probabilities[k]] for k in range(d)]
    out.write_csv("optimize-state.csv", ["basis", "amp_re", "amp_im", "lambda_mT", "p"], state_rows)


def _sweeps_for(cfg: RunConfig, Ns, prior, threads):
    from .sweeper import time_sweep

    bath = cfg.bath()
    out = {}
    for N in Ns:
        progress(f"sweep N={N}, B0={prior.B0 * 1e3:g} mT, dB={prior.dB * 1e3:g} mT")
        out[N] = time_sweep(N, bath, prior, cfg.time_grid(), cfg.optimizer_config(N),
                            cfg.material.g_factor, threads, progress)
    return out


def cmd_compare_n(cfg: RunConfig, out: Output, threads: int) -> None:
    from .plotting import plot_n_comparison
    from .sweeper import n_comparison, product_baseline_at

    prior = cfg.prior_obj()
    Ns = list(cfg.scan.dots_list)
    sweeps = _sweeps_for(cfg, Ns, prior, threads)
    rows_obj = n_comparison(Ns, cfg.bath(), prior, cfg.time_grid(), sweeps=sweeps)
    rows = []
    for row in rows_obj:
        base = product_baseline_at(row.N, cfg.bath(), prior, row.t_star, cfg.scan.product_samples,
                                   cfg.sim.seed, cfg.material.g_factor, cfg.sim.quad_nodes)
        rows.append([row.N, row.t_star, row.min_ratio, row.ghz_t_star, row.ghz_min_ratio, base.ratio])
    out.write_csv("compare-n.csv", ["N", "t_star_ns", "min_ratio", "ghz_t_star_ns", "ghz_min_ratio",
                                    "best_random_product_ratio"], rows)
    t = cfg.time_grid()
    curve_rows = [[t[i]] + [sweeps[N][i].ratio_opt for N in Ns] for i in range(len(t))]
    out.write_csv("compare-n-curves.csv", ["t_ns"] + [f"ratio_opt_N{N}" for N in Ns], curve_rows)
    plot_n_comparison(t, {N: np.array([r.ratio_opt for r in sweeps[N]]) for N in Ns},
                      out.figure("compare-n.png"))


def cmd_prior_scan(cfg: RunConfig, out: Output, threads: int) -> None:
    from .bayesest import GaussianPrior
    from .plotting import plot_prior_scan
    from .sweeper import prior_scan

    priors = [GaussianPrior.from_mT(b, d) for b, d in cfg.scan.priors_mT]
    rows_obj = []
    for N in cfg.scan.dots_list:
        for p in priors:
            progress(f"prior scan N={N}, B0={p.B0 * 1e3:g} mT, dB={p.dB * 1e3:g} mT")
            rows_obj += prior_scan([N], cfg.bath(), [p], cfg.time_grid(), cfg.optimizer_config(N),
                                   cfg.material.g_factor, threads)
    for r in rows_obj:
        if r.min_ratio < r.van_trees - 1e-9:
            raise InvariantViolation(f"minimum ratio below the Van Trees bound for N={r.N}")
    rows = [[r.N, r.B0 * 1e3, r.dB * 1e3, r.t_star, r.min_ratio, r.van_trees] for r in rows_obj]
    out.write_csv("prior-scan.csv", ["N", "B0_mT", "dB_mT", "t_star_ns", "min_ratio", "van_trees_ratio"], rows)
    plot_prior_scan(rows_obj, out.figure("prior-scan.png"))


def cmd_validate(cfg: RunConfig, out: Output, threads: int) -> None:
    from .validation import run_validation

    results = run_validation(cfg, out.dir)
    width = max(len(name) for name, _, _ in results)
    print(f"{'check'.ljust(width)}  result  detail")
    for name, ok, detail in results:
        print(f"{name.ljust(width)}  {'PASS' if ok else 'FAIL':6s}  {detail}")
    out.write_csv("validate.csv", ["check", "passed", "detail"], [[n, ok, d] for n, ok, d in results])
    failed = [n for n, ok, _ in results if not ok]
    if failed:
        raise InvariantViolation(f"validation failed: {', '.join(failed)}")


# --- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdbayes", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="TOML run configuration (defaults if omitted)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: available CPUs)")
    p.add_argument("--seed", type=int, default=None, help="overrides sim.seed")
    p.add_argument("--quad-nodes", type=int, default=None, help="overrides sim.quad_nodes")
    p.add_argument("--dots", type=int, default=None, help="overrides dots")
    p.add_argument("--t-ns", type=float, default=None, help="time for the optimize command")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    sim = cfg.sim
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    if args.quad_nodes is not None:
        sim = dataclasses.replace(sim, quad_nodes=args.quad_nodes)
    cfg = dataclasses.replace(cfg, sim=sim)
    if args.dots is not None:
        cfg = dataclasses.replace(cfg, dots=args.dots)
    # revalidate overrides through the parser
    return parse_config(serialize_config(cfg))


def _available_cpus() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="[qdbayes] %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"qdbayes: configuration error: {exc}", file=sys.stderr)
        return 2
    threads = args.threads if args.threads is not None else _available_cpus()
    if threads < 1:
        print("qdbayes: --threads must be at least 1", file=sys.stderr)
        return 2
    start = time.time()
    try:
        out = Output(args.out, args.command, cfg)
        handler = {
            "bath-table": cmd_bath_table,
            "channel-curves": cmd_channel_curves,
            "sweep": cmd_sweep,
            "optimize": lambda c, o, k: cmd_optimize(c, o, k, args.t_ns),
            "compare-n": cmd_compare_n,
            "prior-scan": cmd_prior_scan,
            "transitions": cmd_transitions,
            "validate": cmd_validate,
        }[args.command]
        handler(cfg, out, threads)
        out.finish()
    except OSError as exc:
        print(f"qdbayes: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolation, ArithmeticError, ValueError) as exc:
        print(f"qdbayes: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    progress(f"{args.command} done in {time.time() - start:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
