"""Config-driven experiment runner and CSV emitters.

One invocation runs one experiment kind and writes:

- ``<prefix>_responses.csv``  (impulse/step) mean-dynamics response per
  period and component, with empirical Monte Carlo columns when paths > 0,
  plus ``<prefix>_responses_paths.csv`` carrying the per-path values.
- ``<prefix>_plans.csv``      (plan) planned commitments and the implied
  mean-dynamics trajectory.
- ``<prefix>_metrics.csv``    (plan/simulate/frontier) one row per policy
  and risk-tolerance point.
- ``<prefix>_allocations.csv``(simulate/frontier with liquid assets) mean
  allocation weights per period.
- ``<prefix>_manifest.txt``   config hash, seed, package version, and the
  status of every item; deterministic content so reruns are byte-identical.

All numeric CSV fields are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__, conic
from .config import ExperimentConfig
from .dynamics import (
    JointState,
    impulse_response,
    mean_matrices,
    output_components,
    steady_state_gains,
    step_response,
)
from .errors import ConfigError
from .policies import (
    CommitmentMpcPolicy,
    FullMpcPolicy,
    MarkowitzRebalancePolicy,
    OpenLoopCommitmentPolicy,
    SteadyStateCommitmentPolicy,
    TargetAllocation,
)
from .programs import (
    MpcConfig,
    build_markowitz,
    build_open_loop_qp,
    delayed_rms,
    extract_plan,
    mse_tracking,
)
from .simulate import allocation_trace, frontier_sweep, run_paths, summarize

METRICS_COLUMNS = (
    "experiment", "kind", "policy", "horizon", "sigma_config",
    "realized_ret", "se_ret", "realized_vol", "se_vol",
    "mse", "se_mse", "delayed_rms", "se_rms",
    "total_injected", "forced_freq", "paths",
)
METRIC_STATS = METRICS_COLUMNS[5:]

PLOT_COLUMNS = ("experiment", "kind", "horizon", "policy", "sigma_config",
                "statistic", "value")


def _num(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.17g}"


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@dataclass
class RunResult:
    exit_code: int
    files: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)


class _Workspace:
    """Derived model objects shared by the experiment kinds."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        e = cfg.experiment
        self.dist = cfg.model.to_distribution()
        self.mm_ill = mean_matrices(self.dist, e.mm_samples, e.mm_seed, layout="illiquid")
        self.mm_joint = None
        self.gains = steady_state_gains(self.mm_ill)
        if cfg.model.n_liq > 0:
            self.mm_joint = mean_matrices(self.dist, e.mm_samples, e.mm_seed, layout="joint")
            self.mu_gross, self.Sigma_gross = self.dist.gross_return_moments()
            self.mu_liq, self.Sigma_liq = self.dist.liquid_return_moments()

    def markowitz_weights(self, sigma: float) -> np.ndarray:
        prog = build_markowitz(self.mu_gross, self.Sigma_gross, sigma)
        result = conic.solve(prog)
        if not result.ok:
            raise RuntimeError(f"allocation solve failed at sigma={sigma:g}: {result.status}")
        w = np.clip(result.value("w"), 0.0, None)
        return w / w.sum()

    def target_allocation(self, sigma: float) -> TargetAllocation:
        return TargetAllocation(
            theta=self.markowitz_weights(sigma),
            n_liq=self.dist.n_liq,
            n_ill=self.dist.n_ill,
        )

    def open_loop_plan(self) -> np.ndarray:
        e = self.cfg.experiment
        prog = build_open_loop_qp(self.mm_ill, e.horizon, e.i_targ, e.gamma_smooth, e.n_lim)
        result = conic.solve(prog)
        if not result.ok:
            raise RuntimeError(f"commitment plan solve failed: {result.status}")
        return extract_plan(result, e.horizon, self.dist.n_ill)

    def build_policy(self, name: str, sigma: float):
        e = self.cfg.experiment
        if name == "open_loop":
            return OpenLoopCommitmentPolicy(plan=self.open_loop_plan())
        if name == "mpc_commitment":
            return CommitmentMpcPolicy(
                mm=self.mm_ill, horizon=e.mpc_horizon, I_targ=e.i_targ,
                gamma_smooth=e.gamma_smooth, n_lim=e.n_lim,
            )
        if name == "relaxed":
            return MarkowitzRebalancePolicy(
                w_star=self.markowitz_weights(sigma),
                n_liq=self.dist.n_liq, n_ill=self.dist.n_ill, sigma_config=sigma,
            )
        if name == "steady_state":
            return SteadyStateCommitmentPolicy(
                target=self.target_allocation(sigma), gains=self.gains, kappa=e.kappa,
            )
        if name == "full_mpc":
            heuristic = SteadyStateCommitmentPolicy(
                target=self.target_allocation(sigma), gains=self.gains, kappa=e.kappa,
            )
            mpc_cfg = MpcConfig(
                H=e.mpc_horizon, gamma=e.gamma, sigma=sigma,
                epsilon_ins=e.epsilon_ins, lambda_risk=e.lambda_risk,
                lambda_smooth=e.lambda_smooth, lambda_cash=e.lambda_cash,
                n_lim=None, risk_mode=e.risk_mode,
            )
            return FullMpcPolicy(
                mm=self.mm_joint, cfg=mpc_cfg,
                mu_liq=self.mu_liq, Sigma_liq=self.Sigma_liq,
                Sigma_joint=self.Sigma_gross,
                lambda0_mean=self.mm_joint.lambda0_mean,
                lambda1_mean=self.mm_joint.lambda1_mean,
                fallback=heuristic,
            )
        raise ConfigError(f"unknown policy {name!r}")


def _metrics_row(prefix: str, kind: str, policy: str, horizon: int, sigma, summary):
    return (
        prefix, kind, policy, str(horizon), _num(sigma),
        _num(summary.mean_return), _num(summary.se_return),
        _num(summary.mean_volatility), _num(summary.se_volatility),
        _num(summary.mse), _num(summary.se_mse),
        _num(summary.delayed_rms), _num(summary.se_delayed_rms),
        _num(summary.total_injected_mean), _num(summary.forced_frequency),
        str(summary.n_paths),
    )


def _component_labels(n_ill: int) -> list[str]:
    comps = []
    for name in ("I", "K", "C", "D"):
        if n_ill == 1:
            comps.append(name)
        else:
            comps.extend(f"{name}{i}" for i in range(n_ill))
    return comps


def _run_response(ws: _Workspace, out: str, files: list[str], workers: int) -> None:
    cfg = ws.cfg
    e = cfg.experiment
    T = e.horizon
    n = cfg.model.n_ill
    if e.kind == "impulse":
        mean_resp = impulse_response(ws.mm_ill, T)
        plan = np.zeros((T, n))
        plan[0] = 1.0
    else:
        mean_resp = step_response(ws.mm_ill, T)
        plan = np.ones((T, n))
    labels = _component_labels(n)
    comp = output_components(n)

    empirical = None
    if e.paths > 0:
        policy = OpenLoopCommitmentPolicy(plan=plan)
        records = run_paths(ws.dist, policy, T, e.paths, e.master_seed,
                            world="commitment", workers=workers)
        # outputs at period t (1-based): states I_t, K_t and flows C_t, D_t
        empirical = np.zeros((len(records), T, 4 * n))
        for p, r in enumerate(records):
            empirical[p, :, comp["I"]] = r.I[:T]
            empirical[p, :, comp["K"]] = r.K[:T]
            empirical[p, :, comp["C"]] = r.C
            empirical[p, :, comp["D"]] = r.D

    rows = []
    for t in range(T):
        for j, label in enumerate(labels):
            row = [str(t + 1), label, _num(mean_resp[t, j])]
            if empirical is not None:
                vals = empirical[:, t, j]
                se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
                row += [_num(vals.mean()), _num(se)]
            else:
                row += ["", ""]
            rows.append(row)
    path = os.path.join(out, f"{cfg.output.prefix}_responses.csv")
    _write_csv(path, ("period", "component", "mean_value", "empirical_mean", "empirical_se"),
               rows)
    files.append(path)
    if empirical is not None:
        rows = []
        for p in range(empirical.shape[0]):
            for t in range(T):
                for j, label in enumerate(labels):
                    rows.append([str(t + 1), label, str(p), _num(empirical[p, t, j])])
        path = os.path.join(out, f"{cfg.output.prefix}_responses_paths.csv")
        _write_csv(path, ("period", "component", "path", "value"), rows)
        files.append(path)


def _run_plan(ws: _Workspace, out: str, files: list[str]) -> None:
    cfg = ws.cfg
    e = cfg.experiment
    T = e.horizon
    n = cfg.model.n_ill
    prog = build_open_loop_qp(ws.mm_ill, T, e.i_targ, e.gamma_smooth, e.n_lim)
    result = conic.solve(prog)
    if not result.ok:
        raise RuntimeError(f"plan solve failed: {result.status}")
    plan = extract_plan(result, T, n)
    states = result.value("x").reshape(T + 1, 2 * n)
    rows = []
    for t in range(T + 1):
        commitment = _num(plan[t].sum()) if t < T else ""
        rows.append([str(t + 1), commitment,
                     _num(states[t, :n].sum()), _num(states[t, n:].sum())])
    path = os.path.join(out, f"{cfg.output.prefix}_plans.csv")
    _write_csv(path, ("period", "commitment", "I", "K"), rows)
    files.append(path)

    I_plan = states[:, :n].sum(axis=1)
    mse = mse_tracking(I_plan, e.i_targ)
    rms = delayed_rms(I_plan[:T], e.i_targ, e.delay_start)
    path = os.path.join(out, f"{cfg.output.prefix}_metrics.csv")
    row = [cfg.output.prefix, "plan", "open_loop_plan", str(T), "",
           "", "", "", "", _num(mse), "", _num(rms), "", "", "", "1"]
    _write_csv(path, METRICS_COLUMNS, [row])
    files.append(path)


def _allocation_rows(prefix, policy_id, sigma, records, n_liq, n_ill):
    weights, _ = allocation_trace(records)
    labels = [f"liq{i}" for i in range(n_liq)] + [f"ill{i}" for i in range(n_ill)]
    rows = []
    for t in range(weights.shape[0]):
        for j, label in enumerate(labels):
            rows.append([prefix, policy_id, _num(sigma), str(t + 1), label,
                         _num(weights[t, j])])
    return rows


def _run_simulate(ws: _Workspace, out: str, files: list[str], workers: int,
                  failures: list[str], quiet: bool) -> None:
    cfg = ws.cfg
    e = cfg.experiment
    metric_rows = []
    alloc_rows = []
    commitment_world = cfg.model.n_liq == 0
    initial = None if commitment_world else JointState.start(e.initial_liquid,
                                                             cfg.model.n_ill)
    for name in e.policies:
        try:
            policy = ws.build_policy(name, e.sigma)
            records = run_paths(ws.dist, policy, e.horizon, e.paths, e.master_seed,
                                initial=initial if not commitment_world else None,
                                workers=workers)
            summary = summarize(records,
                                I_targ=e.i_targ if commitment_world else None,
                                delay_start=e.delay_start)
            metric_rows.append(_metrics_row(cfg.output.prefix, "simulate", name,
                                            e.horizon, e.sigma if not commitment_world else None,
                                            summary))
            if not commitment_world:
                alloc_rows += _allocation_rows(cfg.output.prefix, name, e.sigma, records,
                                               cfg.model.n_liq, cfg.model.n_ill)
            if not quiet:
                print(f"[altalloc] simulate {name}: ok ({summary.n_paths} paths)")
        except Exception as exc:
            failures.append(f"simulate {name}: {exc}")
            if not quiet:
                print(f"[altalloc] simulate {name}: FAILED ({exc})")
    path = os.path.join(out, f"{cfg.output.prefix}_metrics.csv")
    _write_csv(path, METRICS_COLUMNS, metric_rows)
    files.append(path)
    if alloc_rows:
        path = os.path.join(out, f"{cfg.output.prefix}_allocations.csv")
        _write_csv(path, ("experiment", "policy", "sigma_config", "period", "asset",
                          "mean_weight"), alloc_rows)
        files.append(path)


def _run_frontier(ws: _Workspace, out: str, files: list[str], workers: int,
                  failures: list[str], quiet: bool) -> None:
    cfg = ws.cfg
    e = cfg.experiment
    initial = JointState.start(e.initial_liquid, cfg.model.n_ill)
    metric_rows = []
    alloc_rows = []
    for name in e.policies:
        collected = {}

        def family(sigma, _name=name):
            return ws.build_policy(_name, sigma)

        def on_records(sigma, records, _c=collected):
            _c[sigma] = records

        points, fails = frontier_sweep(
            ws.dist, family, e.sigma_grid, e.horizon, e.paths, e.master_seed,
            initial=initial, workers=workers, on_records=on_records,
        )
        for sigma, msg in fails:
            failures.append(f"frontier {name} sigma={sigma:g}: {msg}")
        for pt in points:
            summary = summarize(collected[pt.sigma_config])
            metric_rows.append(_metrics_row(cfg.output.prefix, "frontier", name,
                                            e.horizon, pt.sigma_config, summary))
            alloc_rows += _allocation_rows(cfg.output.prefix, name, pt.sigma_config,
                                           collected[pt.sigma_config],
                                           cfg.model.n_liq, cfg.model.n_ill)
        if not quiet:
            print(f"[altalloc] frontier {name}: {len(points)} points"
                  + (f", {len(fails)} failed" if fails else ""))
    path = os.path.join(out, f"{cfg.output.prefix}_metrics.csv")
    _write_csv(path, METRICS_COLUMNS, metric_rows)
    files.append(path)
    path = os.path.join(out, f"{cfg.output.prefix}_allocations.csv")
    _write_csv(path, ("experiment", "policy", "sigma_config", "period", "asset",
                      "mean_weight"), alloc_rows)
    files.append(path)


def run_experiment(
    cfg: ExperimentConfig,
    output_dir: str | None = None,
    master_seed: int | None = None,
    paths: int | None = None,
    workers: int = 1,
    quiet: bool = False,
) -> RunResult:
    """Run one experiment; returns exit status and the files written."""
    e = cfg.experiment
    if master_seed is not None or paths is not None:
        e = replace(e, master_seed=master_seed if master_seed is not None else e.master_seed,
                    paths=paths if paths is not None else e.paths)
        cfg = replace(cfg, experiment=e)
    out = output_dir if output_dir is not None else cfg.output.directory
    os.makedirs(out, exist_ok=True)
    files: list[str] = []
    failures: list[str] = []
    try:
        ws = _Workspace(cfg)
        if e.kind in ("impulse", "step"):
            _run_response(ws, out, files, workers)
        elif e.kind == "plan":
            _run_plan(ws, out, files)
        elif e.kind == "simulate":
            _run_simulate(ws, out, files, workers, failures, quiet)
        elif e.kind == "frontier":
            _run_frontier(ws, out, files, workers, failures, quiet)
        else:
            raise ConfigError(f"unknown experiment kind {e.kind!r}")
    except Exception as exc:
        failures.append(str(exc))
        if not quiet:
            print(f"[altalloc] {e.kind}: FAILED ({exc})")

    manifest = os.path.join(out, f"{cfg.output.prefix}_manifest.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(f"config_hash = {cfg.content_hash()}\n")
        fh.write(f"master_seed = {e.master_seed}\n")
        fh.write(f"paths = {e.paths}\n")
        fh.write(f"kind = {e.kind}\n")
        fh.write(f"version = {__version__}\n")
        for f in files:
            fh.write(f"file = {os.path.basename(f)}\n")
        for msg in failures:
            fh.write(f"failure = {msg}\n")
        fh.write(f"status = {'ok' if not failures else 'failed'}\n")
    files.append(manifest)
    return RunResult(exit_code=0 if not failures else 1, files=files, failures=failures)


def emit_plot_data(metric_paths: list[str], out_path: str) -> None:
    """Merge metrics CSVs into one tidy long table for external plotting.

    Output columns: experiment, kind, horizon, policy, sigma_config,
    statistic, value — one row per populated statistic.
    """
    rows = []
    for path in metric_paths:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in METRICS_COLUMNS if c not in header]
            extra = [c for c in header if c not in METRICS_COLUMNS]
            if missing or extra:
                detail = []
                if missing:
                    detail.append(f"missing columns: {', '.join(missing)}")
                if extra:
                    detail.append(f"unexpected columns: {', '.join(extra)}")
                raise ConfigError(f"{path}: metrics schema mismatch ({'; '.join(detail)})")
            for rec in reader:
                for stat in METRIC_STATS:
                    if rec[stat] != "":
                        rows.append([rec["experiment"], rec["kind"], rec["horizon"],
                                     rec["policy"], rec["sigma_config"], stat, rec[stat]])
    _write_csv(out_path, PLOT_COLUMNS, rows)
