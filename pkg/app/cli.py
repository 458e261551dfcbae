"""
Command-line front end. Every run writes one directory holding meta.json
(the full config), data.csv and, where relevant, replicas.csv.

    python -m app.cli info --out runs/info
    python -m app.cli sweep-fig3 --seed 7 --trials 300
    python -m app.cli simulate --k 0.934 --theta1-deg 10 --theta2-deg 5 --seed 1
    python -m app.cli calibrate --k 0.934 --seed 2 --out runs/cal
    python -m app.cli estimate --calibration runs/cal/data.csv --counts runs/simulate/counts.json --seed 3
    python -m app.cli gate-sim --t-h 1 --t-v 0.3333333333333333 --visibility 0.9
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from app.services import artifacts_service as artifacts
from app.services.benchmarks_service import benchmark_function
from app.services.estimation_service import (
    CountTable,
    ExactForwardModel,
    bootstrap_replicas,
    build_calibration,
    estimate,
    monte_carlo_experiments,
    sample_counts,
)
from app.services.information_service import (
    classical_fim,
    crb,
    qfim,
    sloppiness,
)
from app.services.optics_service import PPBSModel, imperfect_probabilities, ppbs_coincidence_map
from app.services.protocol_service import OUTCOMES, MeasurementStrength, PhasePair, outcome_probabilities_grid
from app.utils.config import RunConfig
from app.utils.logger import get_logger

logger = get_logger("app.cli")

INFO_HEADER = ["K", "Q11", "Q12", "F11", "F12", "det_F", "F_plus", "F_minus", "crb_var", "crb_cov"]
SWEEP_HEADER = [
    "K", "theta1_deg", "theta2_deg", "shots", "trials",
    "var_theta1", "var_theta2", "cov_theta12", "corr",
    "theory_var", "theory_cov", "theory_corr",
]
SWEEP_REPLICAS_HEADER = ["K", "theta1_deg", "theta2_deg", "trial", "theta1_hat_deg", "theta2_hat_deg"]
COUNTS_HEADER = ["outcome", "count", "frequency", "probability"]
ESTIMATE_HEADER = [
    "theta1_deg", "theta2_deg", "var_theta1", "var_theta2", "cov_theta12",
    "objective", "objective_value", "degenerate", "bootstrap_replicas",
]
BOOTSTRAP_HEADER = ["replica", "theta1_hat_deg", "theta2_hat_deg"]
GATE_HEADER = (
    ["theta1_deg", "theta2_deg"]
    + [f"p_ideal_{o}" for o in OUTCOMES]
    + [f"p_ppbs_{o}" for o in OUTCOMES]
    + ["success_probability"]
)


# ---------- helpers ----------

def _ppbs(cfg: RunConfig) -> PPBSModel:
    return PPBSModel(cfg.t_h, cfg.t_v, cfg.visibility, cfg.rescaling)


def _ppbs_or_none(cfg: RunConfig) -> Optional[PPBSModel]:
    return _ppbs(cfg) if cfg.model == "optics" else None


def _cell_seed(seed: int, *index: int) -> int:
    return int(np.random.SeedSequence([seed, *index]).generate_state(1)[0])


def _write_meta(out: Path, command: str, cfg: RunConfig, outputs: List[Path]) -> Path:
    return artifacts.write_json(
        out / "meta.json",
        {"command": command, "config": cfg.to_dict(), "outputs": sorted(p.name for p in outputs)},
    )


# ---------- commands ----------

def cmd_info(cfg: RunConfig) -> List[Path]:
    """QFIM, classical FI, stiff/sloppy values and the per-shot quantum bound over K."""
    out = cfg.out_dir("info")
    phases = PhasePair.from_degrees(cfg.theta1_deg, cfg.theta2_values("info")[0])
    rows = []
    for K in cfg.k_values("info"):
        strength = MeasurementStrength(K)
        Q = qfim(phases, strength)
        F = classical_fim(phases, strength)
        report = sloppiness(F)
        bound = crb(Q, 1)
        rows.append([
            K, Q.m11, Q.m12, F.m11, F.m12, F.determinant,
            report.stiff_value, report.sloppy_value, bound.var1, bound.cov,
        ])
    data = artifacts.write_csv(out / "data.csv", INFO_HEADER, rows)
    return [data, _write_meta(out, "info", cfg, [data])]


def cmd_sweep_fig3(cfg: RunConfig) -> List[Path]:
    """Monte Carlo covariance of the estimates over (K, theta2) with the CRB overlay."""
    out = cfg.out_dir("sweep-fig3")
    ppbs = _ppbs_or_none(cfg)
    rows, replica_rows = [], []
    for ki, K in enumerate(cfg.k_values("sweep-fig3")):
        strength = MeasurementStrength(K)
        model = ExactForwardModel(K, ppbs=ppbs)
        for ti, t2 in enumerate(cfg.theta2_values("sweep-fig3")):
            phases = PhasePair.from_degrees(cfg.theta1_deg, t2)
            mc = monte_carlo_experiments(
                phases, strength, cfg.shots, cfg.trials, _cell_seed(cfg.seed, ki, ti), model,
                objective=cfg.objective, sampler=cfg.model, ppbs=ppbs, workers=cfg.workers,
            )
            theory = crb(qfim(phases, strength, check=False), cfg.shots)
            c = mc.covariance
            rows.append([
                K, cfg.theta1_deg, t2, cfg.shots, cfg.trials,
                c[0, 0], c[1, 1], c[0, 1], mc.correlation,
                theory.var1, theory.cov, theory.correlation,
            ])
            for trial, (e1, e2) in enumerate(mc.estimates):
                replica_rows.append([K, cfg.theta1_deg, t2, trial, math.degrees(e1), math.degrees(e2)])
            logger.info("K=%.3f theta2=%.2f deg: var1=%.3e var2=%.3e (CRB %.3e)",
                        K, t2, c[0, 0], c[1, 1], theory.var1)

    data = artifacts.write_csv(out / "data.csv", SWEEP_HEADER, rows)
    reps = artifacts.write_csv(out / "replicas.csv", SWEEP_REPLICAS_HEADER, replica_rows)
    return [data, reps, _write_meta(out, "sweep-fig3", cfg, [data, reps])]


def cmd_simulate(cfg: RunConfig) -> List[Path]:
    out = cfg.out_dir("simulate")
    K = cfg.k_values("simulate")[0]
    phases = PhasePair.from_degrees(cfg.theta1_deg, cfg.theta2_values("simulate")[0])
    strength = MeasurementStrength(K)
    counts = sample_counts(phases, strength, cfg.shots, cfg.seed, model=cfg.model, ppbs=_ppbs_or_none(cfg))
    exact = ExactForwardModel(K, ppbs=_ppbs_or_none(cfg)).probabilities(phases.theta1, phases.theta2)

    rows = [[o, int(c), float(f), float(p)] for o, c, f, p in zip(OUTCOMES, counts.counts, counts.frequencies, exact)]
    data = artifacts.write_csv(out / "data.csv", COUNTS_HEADER, rows)
    record = artifacts.write_counts(counts, out / "counts.json")
    return [data, record, _write_meta(out, "simulate", cfg, [data, record])]


def cmd_calibrate(cfg: RunConfig) -> List[Path]:
    out = cfg.out_dir("calibrate")
    K = cfg.k_values("calibrate")[0]
    cal = build_calibration(
        MeasurementStrength(K),
        np.deg2rad(cfg.theta1_grid()),
        np.deg2rad(cfg.uniform_deg()),
        cfg.calibration_shots_per_node(),
        cfg.seed,
        model=cfg.model,
        ppbs=_ppbs_or_none(cfg),
    )
    data = artifacts.write_calibration(cal, out / "data.csv")
    side = artifacts.sidecar_path(data)
    return [data, side, _write_meta(out, "calibrate", cfg, [data, side])]


def cmd_estimate(cfg: RunConfig) -> List[Path]:
    out = cfg.out_dir("estimate")
    cal = artifacts.read_calibration(Path(cfg.calibration))
    counts: CountTable = artifacts.read_counts(Path(cfg.counts))

    result = estimate(counts, cal, objective=cfg.objective)
    written: List[Path] = []
    if cfg.replicas:
        reps = bootstrap_replicas(counts, cal, cfg.replicas, cfg.seed, objective=cfg.objective, workers=cfg.workers)
        result = dataclasses.replace(
            result, covariance=np.cov(reps, rowvar=False, ddof=1), bootstrap_replicas=cfg.replicas
        )
        rep_rows = [[i, math.degrees(a), math.degrees(b)] for i, (a, b) in enumerate(reps)]
        written.append(artifacts.write_csv(out / "replicas.csv", BOOTSTRAP_HEADER, rep_rows))

    t1, t2 = result.degrees
    c = result.covariance
    written.append(artifacts.write_csv(out / "data.csv", ESTIMATE_HEADER, [[
        t1, t2, c[0, 0], c[1, 1], c[0, 1],
        result.objective, result.objective_value, int(result.degenerate_flag), result.bootstrap_replicas,
    ]]))
    written.append(artifacts.write_estimate(result, out / "estimate.json"))
    logger.info("estimate theta1=%.4f deg theta2=%.4f deg%s", t1, t2,
                " (degenerate)" if result.degenerate_flag else "")
    return [*written, _write_meta(out, "estimate", cfg, written)]


def cmd_gate_sim(cfg: RunConfig) -> List[Path]:
    """Post-selected PPBS map, its compensation, and imperfect vs. ideal probabilities."""
    out = cfg.out_dir("gate-sim")
    model = _ppbs(cfg)
    gate = ppbs_coincidence_map(model)
    K = cfg.k_values("gate-sim")[0]

    t1_deg = np.asarray(cfg.theta1_grid())
    t2_deg = np.asarray(cfg.uniform_deg())
    T1, T2 = np.meshgrid(np.deg2rad(t1_deg), np.deg2rad(t2_deg), indexing="ij")
    ideal = outcome_probabilities_grid(T1, T2, K)
    imperfect, success = imperfect_probabilities(T1, T2, K, model)

    rows = []
    for i, a in enumerate(t1_deg):
        for j, b in enumerate(t2_deg):
            rows.append([float(a), float(b), *ideal[i, j].tolist(), *imperfect[i, j].tolist(), float(success[i, j])])
    data = artifacts.write_csv(out / "data.csv", GATE_HEADER, rows)

    comp = gate.compensation
    record = artifacts.write_json(out / "gate.json", {
        "K": K,
        "transmitted": gate.transmitted.tolist(),
        "reflected": gate.reflected.tolist(),
        "matrix": gate.matrix.tolist(),
        "singular_values": gate.singular_values().tolist(),
        "compensation": None if comp is None else dataclasses.asdict(comp) | {"exact": comp.exact},
    })
    return [data, record, _write_meta(out, "gate-sim", cfg, [data, record])]


COMMANDS: Dict[str, Callable[[RunConfig], List[Path]]] = {
    "info": cmd_info,
    "sweep-fig3": cmd_sweep_fig3,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "estimate": cmd_estimate,
    "gate-sim": cmd_gate_sim,
}


# ---------- argument parsing ----------

def _on_off(value: str) -> bool:
    v = value.lower()
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return v == "on"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="flat JSON config file (a run's meta.json also works)")
    common.add_argument("--k", type=float, nargs="+", help="measurement strength(s) K in [0, 1]")
    common.add_argument("--theta1-deg", type=float, help="first phase in degrees")
    common.add_argument("--theta2-deg", type=float, nargs="+", help="second phase(s) in degrees")
    common.add_argument("--grid-step-deg", type=float, help="calibration / sweep grid step in degrees")
    common.add_argument("--theta1-grid-deg", type=float, nargs="+", help="explicit (possibly uneven) theta1 nodes")
    common.add_argument("--shots", type=int, help="shots per estimation experiment")
    common.add_argument("--calibration-shots", type=int, help="shots per calibration node (default 50x --shots)")
    common.add_argument("--exact-calibration", action="store_true", help="store exact node probabilities")
    common.add_argument("--trials", type=int, help="Monte Carlo experiments per sweep cell")
    common.add_argument("--replicas", type=int, help="Poisson bootstrap replicas (0 disables)")
    common.add_argument("--seed", type=int, help="base seed; required by stochastic commands")
    common.add_argument("--model", choices=["ideal", "optics"])
    common.add_argument("--objective", choices=["lsq", "mle"])
    common.add_argument("--t-h", type=float, help="PPBS transmittivity for H")
    common.add_argument("--t-v", type=float, help="PPBS transmittivity for V")
    common.add_argument("--visibility", type=float, help="two-photon interference visibility")
    common.add_argument("--rescaling", type=_on_off, help="on|off amplitude compensation before the PPBS")
    common.add_argument("--workers", type=int, help="worker processes for trials / replicas")
    common.add_argument("--calibration", help="calibration CSV (estimate)")
    common.add_argument("--counts", help="counts JSON (estimate)")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="sloppy", description="Sloppy two-phase weak-measurement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    base = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = base.merged(overrides)
    cfg.validate(args.command)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ValueError as e:
        logger.error("%s: invalid configuration: %s", args.command, e)
        return 2

    try:
        timed = benchmark_function(COMMANDS[args.command], cfg)
    except ValueError as e:
        logger.error("%s failed: %s", args.command, e)
        return 2
    except (RuntimeError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        return 1

    for path in timed.result:
        logger.info("wrote %s", path)
    logger.info("%s finished in %.3f s", args.command, timed.execution_time_sec)
    return 0


if __name__ == "__main__":
    sys.exit(main())
