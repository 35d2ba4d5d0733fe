"""Self-contained oracle suite behind ``qdbayes validate``.

Each check returns ``(name, passed, detail)``.  The suite compares the
closed forms against independent constructions (spin coupling, brute-force
evolution, quadrature doubling) and re-reads a freshly written CSV to
spot-check per-row invariants.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .bayesest import (AveragedChannel, estimation_variance, prior_grid, uniform_grid,
                       van_trees_bound)
from .boxchannel import (ChannelCoeffs, apply_single, channel_arrays, choi_matrix, kraus_completeness,
                         kraus_set)
from .optimizer import haar_random_state
from .quantcore import KET0, KET_PLUS, KET_PLUS_I, dm_from_pure, trace_distance
from .spinbath import (GAAS, bath_weights, exact_reduced_states, hyperfine_alpha, multiplicity_oracle,
                       multiplicity_table)

Check = tuple[str, bool, str]


def check_multiplicities() -> Check:
    worst = ""
    for s, n_max in ((0.5, 40), (1.5, 20)):
        for n in range(1, n_max + 1):
            table = multiplicity_table(n, s)
            if table != multiplicity_oracle(n, s):
                return "multiplicity table", False, f"mismatch at n={n}, s={s}"
            if sum(c * (2 * K + 1) for K, c in table.items()) != int((2 * s + 1) ** n):
                return "multiplicity table", False, f"dimension sum fails at n={n}, s={s}"
        worst += f"s={s}: n<={n_max} ok; "
    return "multiplicity table", True, worst.strip("; ")


def check_channel_vs_exact(g: float = -0.44) -> Check:
    times = np.linspace(0.0, 200.0, 40)
    fields = [0.0, 1e-3, 7e-3, 50e-3, 1.0]
    inputs = [dm_from_pure(v) for v in (KET0, KET_PLUS, KET_PLUS_I)]
    err_ae, err_td = 0.0, 0.0
    for n in (2, 3, 4):
        alpha = hyperfine_alpha(GAAS, n)
        bath = bath_weights(n, 0.5, alpha)
        for B in fields:
            exact = [exact_reduced_states(rho, n, B, times, alpha, g) for rho in inputs]
            for k, t in enumerate(times):
                A, E = channel_arrays(bath, np.array([B]), t, g)
                A_ex = exact[0][k][0, 0].real
                E_ex = 2 * exact[1][k][0, 1]
                err_ae = max(err_ae, abs(A[0] - A_ex), abs(abs(E[0]) - abs(E_ex)))
                c = ChannelCoeffs(float(A[0]), complex(E[0]))
                for rho, ex in zip(inputs, exact):
                    err_td = max(err_td, trace_distance(apply_single(rho, c), ex[k]))
    ok = err_ae < 1e-9 and err_td < 1e-8
    return "channel vs exact evolution", ok, f"max |dA|,|d|E|| = {err_ae:.2e}; max trace distance = {err_td:.2e}"


def check_cptp_grid(bath, g: float) -> Check:
    worst_k, worst_choi = 0.0, 0.0
    fields = np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 19)])
    for B in fields:
        for t in np.geomspace(0.1, 2000.0, 20):
            A, E = channel_arrays(bath, np.array([B]), t, g)
            c = ChannelCoeffs(float(A[0]), complex(E[0]))
            worst_k = max(worst_k, np.abs(kraus_completeness(kraus_set(c)) - np.eye(2)).max())
            worst_choi = min(worst_choi, np.linalg.eigvalsh(choi_matrix(c)).min())
    ok = worst_k < 1e-10 and worst_choi >= -1e-10
    return "CPTP grid 20x20", ok, f"max |sum K'K - 1| = {worst_k:.1e}; min Choi eigenvalue = {worst_choi:.1e}"


def check_personick(bath, prior, g: float, quad_nodes: int) -> Check:
    rng = np.random.default_rng(1234)
    worst_res, worst_tr = 0.0, 0.0
    for N in (1, 2, 3):
        for t in (0.5, 5.0, 40.0):
            ch = AveragedChannel(N, bath, t, prior, prior_grid(prior, quad_nodes, N, t, g), g)
            psi = haar_random_state(2**N, rng)
            rho_bar, rho_p = ch.mean_states(psi)
            out = estimation_variance(rho_bar, rho_p, prior)
            L = out.L
            res = 0.5 * (L @ rho_bar + rho_bar @ L) - rho_p
            worst_res = max(worst_res, np.abs(res).max() / prior.dB)
            worst_tr = max(worst_tr, abs(np.trace(rho_bar @ L).real - prior.B0) / prior.dB)
    ok = worst_res < 1e-9 and worst_tr < 1e-10
    return "optimal observable residuals", ok, f"max residual = {worst_res:.1e} dB; |tr(rho L) - B0| = {worst_tr:.1e} dB"


def check_van_trees(bath, prior, g: float, quad_nodes: int) -> Check:
    rng = np.random.default_rng(99)
    worst = np.inf
    for N in (1, 2):
        for t in (1.0, 6.0, 30.0):
            psi = haar_random_state(2**N, rng)
            grid = prior_grid(prior, quad_nodes, N, t, g)
            ch = AveragedChannel(N, bath, t, prior, grid, g)
            var = ch.evaluate(psi).var_est
            bound = van_trees_bound(psi, bath, t, prior, prior_grid(prior, quad_nodes, 2 * N, t, g), g)
            worst = min(worst, (var - bound) / prior.variance)
    return "Van Trees bound", worst >= -1e-9, f"min (var_est - bound)/dB^2 = {worst:.3e}"


def check_quadrature(bath, prior, g: float, quad_nodes: int) -> Check:
    rng = np.random.default_rng(7)
    worst = 0.0
    for N in (1, 2):
        psi = haar_random_state(2**N, rng)
        for t in (0.3, 3.0, 30.0, 300.0, 2000.0):
            grid = prior_grid(prior, quad_nodes, N, t, g)
            r1 = AveragedChannel(N, bath, t, prior, grid, g).ratio(psi)
            r2 = AveragedChannel(N, bath, t, prior, uniform_grid(prior, 2 * len(grid.nodes) + 1), g).ratio(psi)
            worst = max(worst, abs(r1 - r2))
    return "quadrature convergence", worst < 1e-6, f"max ratio change on refinement = {worst:.1e}"


def check_written_sweep(bath, prior, g: float, quad_nodes: int, out_dir: Path) -> Check:
    """Write a short sweep with the CLI's writer and re-read it."""
    from .cli import csv_text, sweep_rows
    from .optimizer import OptimizerConfig
    from .sweeper import time_sweep

    recs = time_sweep(1, bath, prior, np.geomspace(0.5, 60.0, 16), OptimizerConfig(restarts=4, quad_nodes=quad_nodes), g)
    header, rows = sweep_rows(recs, 1)
    path = Path(out_dir) / "validate-sweep.csv"
    path.write_text(csv_text(header, rows), encoding="utf-8")
    bad = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            r = float(row["ratio_opt"])
            ans = [float(v) for k, v in row.items() if k.startswith("ratio_") and k != "ratio_opt"]
            p = [float(v) for k, v in row.items() if k.startswith("p_")]
            if not (0 <= r <= 1 + 1e-10) or r > min(ans) + 1e-9 or abs(sum(p) - 1) > 1e-9:
                bad.append(row["t_ns"])
    return "written sweep rows", not bad, f"{len(rows)} rows checked" + (f"; bad at t={bad}" if bad else "")


def run_validation(cfg, out_dir) -> list[Check]:
    bath = cfg.bath()
    prior = cfg.prior_obj()
    g = cfg.material.g_factor
    q = cfg.sim.quad_nodes
    return [
        check_multiplicities(),
        check_channel_vs_exact(g),
        check_cptp_grid(bath, g),
        check_personick(bath, prior, g, q),
        check_van_trees(bath, prior, g, q),
        check_quadrature(bath, prior, g, q),
        check_written_sweep(bath, prior, g, q, out_dir),
    ]
