#!/usr/bin/env python3
"""
lfi-node CLI - identification and small-signal evaluation pipeline

Subcommands chain the pipeline: generate a dataset from a synthetic plant,
train a model on it, evaluate the model against the plant, inspect the
data-derived Jacobian of one trajectory, and tabulate evaluations across
training modes.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import psutil

from . import __version__, jacest, plants, stability
from .core.config import RunConfig
from .core.exceptions import (
    ConfigError,
    ConvergenceFailure,
    CutoffError,
    DataIOError,
    EstimationError,
    FormatError,
    IntegrationFailure,
    LfiNodeError,
    NoEquilibrium,
)
from .integrate import IntegratorConfig
from .managers.report_manager import ReportManager, json_safe
from .neuralfield import save_model
from .signals.dataset import (
    GridPoint,
    generate_dataset,
    read_dataset,
    read_trajectory,
    resolve_cutoff,
    write_dataset,
    write_trajectory,
)
from .signals.processing import (
    default_cutoff,
    fit_normalization,
    normalize_dataset,
    simulate_or_partial,
    zero_phase_lowpass,
)
from .signals.trajectory import Dataset, InputSchedule
from .training import (
    NarxModel,
    TrainMode,
    load_trained,
    precompute_latent_features,
    predict,
    rmse,
    train,
    train_narx,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DENORMALIZATION = "J_phys = S_x J_norm S_x^-1 / time_scale, S_x = diag(state_std)"


def create_parser():
    """Create the argument parser for the lfi-node CLI"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", help="JSON run configuration (default: $LFI_NODE_CONFIG)"
    )
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override a configuration value (repeatable; values parse as JSON)",
    )
    common.add_argument(
        "--print-config",
        action="store_true",
        help="Print the fully-resolved configuration and exit",
    )
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: config log_level or $LFI_NODE_LOG_LEVEL)",
    )

    parser = argparse.ArgumentParser(
        prog="lfi-node",
        description="lfi-node - latent-feature-informed neural ODE identification",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  lfi-node generate --config run.json
  lfi-node train --config run.json --mode vanilla --set train.seed=1
  lfi-node eval --config run.json --model runs/model_lfi_seed0.json
  lfi-node jacobian --trajectory runs/dataset/traj_000.csv --filter
  lfi-node bound --trajectory runs/dataset/traj_000.csv --sigma-x 1e-4
  lfi-node report --run-dir runs/reports
        """,
    )
    parser.add_argument(
        "--version", action="version", version=f"lfi-node {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser(
        "generate", parents=[common], help="Simulate the plant into a dataset"
    )

    p_train = sub.add_parser(
        "train", parents=[common], help="Train a model on the dataset"
    )
    p_train.add_argument("--mode", choices=[m.value for m in TrainMode])

    p_eval = sub.add_parser(
        "eval", parents=[common], help="Evaluate a model on test inputs"
    )
    p_eval.add_argument("--model", help="Model file (default: paths.model for the run)")

    for name, text in (
        ("jacobian", "Estimate J_ref from one trajectory CSV"),
        ("bound", "Noise error bound of the J_ref estimate"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--trajectory", required=True, help="Trajectory CSV file")
        p.add_argument(
            "--filter", action="store_true", help="Zero-phase low-pass first"
        )
        p.add_argument(
            "--cutoff", type=float, help="Filter cutoff in Hz (default Nyquist/50)"
        )
        p.add_argument("--output", help="Also write the JSON result to this file")
        if name == "bound":
            p.add_argument(
                "--sigma-x", type=float, required=True, help="State noise std"
            )
            p.add_argument(
                "--jstar-norm",
                type=float,
                help="Known ||J_*||_2 (default: ||J_ref||_2 plug-in)",
            )

    p_report = sub.add_parser(
        "report", parents=[common], help="Compare evaluations by mode"
    )
    p_report.add_argument("--run-dir", help="Report directory (default: paths.reports)")
    return parser


def load_config(args) -> RunConfig:
    """Environment and file, then overrides and flags; validated."""
    config = RunConfig.from_environment(args.config).apply_overrides(args.set)
    if getattr(args, "mode", None):
        config.train.mode = TrainMode(args.mode)
    if args.log_level:
        config.log_level = args.log_level
    config.validate()
    return config


def runtime_block(started: float) -> Dict[str, Any]:
    """Wall time and process resource figures for reports"""
    process = psutil.Process()
    cpu = process.cpu_times()
    return {
        "wall_s": time.perf_counter() - started,
        "cpu_user_s": cpu.user,
        "cpu_system_s": cpu.system,
        "rss_mb": process.memory_info().rss / 2**20,
    }


def _emit(result: Dict[str, Any], output: Optional[str] = None) -> None:
    text = json.dumps(json_safe(result), indent=2, sort_keys=True)
    print(text)
    if output:
        try:
            Path(output).write_text(text + "\n", encoding="utf-8")
        except OSError as e:
            raise DataIOError(output, "cannot write result", e) from e


def _integrator(config: RunConfig) -> IntegratorConfig:
    return IntegratorConfig(
        rtol=config.data.rtol, atol=config.data.atol, max_steps=config.data.max_steps
    )


def _nominal_state(config: RunConfig, plant) -> np.ndarray:
    """The equilibrium at the nominal input."""
    nominal = config.nominal_input(plant.input_dim)
    guess = config.plant.default_x_guess(plant.state_dim)
    try:
        return plants.find_equilibrium(plant, nominal, guess)
    except NoEquilibrium as e:
        raise ConfigError(
            "data.nominal_input", f"no equilibrium at {nominal}: {e}"
        ) from e


def _initial_state(config: RunConfig, plant, x0_setting, u, nominal_state):
    """x0 for a run stepped to ``u``: the configured vector, the nominal
    equilibrium, or the equilibrium at ``u`` plus the configured offset.

    Inputs without an equilibrium start from the nominal equilibrium.
    """
    if not isinstance(x0_setting, str):
        return np.asarray(x0_setting, dtype=float)
    if config.x0_mode(x0_setting) == "nominal":
        return nominal_state
    try:
        x_ss = plants.find_equilibrium(plant, u, nominal_state)
    except NoEquilibrium as e:
        u_list = np.asarray(u, dtype=float).tolist()
        logger.warning(f"No equilibrium at u={u_list} ({e}); starting from nominal")
        return nominal_state
    return x_ss + config.x0_offset(plant.state_dim)


# Subcommands ------------------------------------------------------------------


def cmd_generate(config: RunConfig) -> Path:
    """Simulate every grid point and write the dataset directory"""
    plant = config.plant.build()
    data = config.data
    nominal_state = _nominal_state(config, plant) if isinstance(data.x0, str) else None
    grid = []
    for u in config.grid(plant.input_dim):
        u = np.asarray(u, dtype=float)
        x0 = _initial_state(config, plant, data.x0, u, nominal_state)
        grid.append(GridPoint(u, x0))
    dataset = generate_dataset(
        plant,
        grid,
        data.dt,
        data.duration,
        sigma_x=data.sigma_x,
        cutoff_hz=resolve_cutoff(data.cutoff, data.dt),
        downsample_factor=int(data.downsample),
        seed=data.seed,
        nominal_input=config.nominal_input(plant.input_dim),
        step_time=data.step_time,
        integrator=_integrator(config),
    )
    if len(dataset.trajectories) == 0:
        raise ConfigError("data.grid", "no grid point produced a usable trajectory")
    norm = fit_normalization(dataset, data.time_scale)
    dataset = Dataset(dataset.trajectories, norm=norm, manifest=dataset.manifest)
    path = write_dataset(dataset, config.paths.resolve("dataset"))
    counts = dataset.manifest["counts"]
    print(
        f"Generated {counts['trajectories']} trajectories "
        f"({counts['truncated']} truncated, {counts['failures']} integration failures) "
        f"in {path}"
    )
    return path


def _trained_dataset(config: RunConfig):
    path = config.paths.resolve("dataset")
    dataset = read_dataset(path)
    if len(dataset) == 0:
        raise FormatError(path, "dataset holds no trajectories")
    norm = dataset.norm or fit_normalization(dataset, config.data.time_scale)
    return normalize_dataset(dataset, norm)


def cmd_train(config: RunConfig) -> Dict[str, Path]:
    """Train in the configured mode and write the model file and log CSV"""
    mode = config.train.mode.value
    seed = config.train.seed
    model_path = config.paths.resolve("model", mode, seed)
    log_path = config.paths.resolve("log", mode, seed)
    dataset = _trained_dataset(config)
    started = time.perf_counter()
    if config.train.mode is TrainMode.NARX:
        model, log = train_narx(dataset, config.train)
        params = model.params
    else:
        lat = config.latent
        latent = precompute_latent_features(
            dataset,
            window_len=lat.window_len,
            eps_min=config.eps_min(),
            r_max=lat.r_max,
            n_max=lat.n_max,
            scheme=lat.scheme,
            settle_tol=lat.settle_tol,
            drift_tol=lat.drift_tol,
            plant=config.plant.build() if lat.plant_check else None,
        )
        params, log = train(dataset, config.train, latent)
    if config.train.log_wall_time:
        params.train_config_echo["wall_ms"] = log.final.wall_ms
    logger.info(f"Training runtime: {json.dumps(runtime_block(started))}")
    save_model(params, model_path)
    log.write_csv(log_path)
    final = log.final
    print(
        f"Trained {mode} (seed {seed}): L_data={final.L_data:.6g} "
        f"L_jac={final.L_jac:.6g} L_total={final.L_total:.6g}; "
        f"{log.skipped_windows} windows skipped"
    )
    print(f"Model: {model_path}\nLog: {log_path}")
    return {"model": model_path, "log": log_path}


def _eigen(M, source, margin) -> Dict[str, Any]:
    try:
        return {"report": stability.eigen_report(M, source, margin)}
    except ConvergenceFailure as e:
        return {"error": str(e)}


def _evaluate_point(
    config: RunConfig, plant, model, u, x0, duration, dt, out_dir: Path, index: int
) -> Dict[str, Any]:
    margin = config.eval.margin
    schedule = InputSchedule.step(config.nominal_input(plant.input_dim), u, 0.0)
    entry: Dict[str, Any] = {"u": list(u), "x0": x0.tolist()}

    true_traj, failure = simulate_or_partial(
        plant, x0, schedule, dt, duration, _integrator(config)
    )
    entry["true_truncated"] = failure is not None
    try:
        pred = predict(model, x0, schedule, duration, dt, _integrator(config))
        entry["pred_truncated"] = False
    except IntegrationFailure as e:
        pred = e.partial
        entry["pred_truncated"] = True
    norm = model.params.norm if isinstance(model, NarxModel) else model.norm
    if true_traj is not None and pred is not None:
        entry["rmse"] = rmse(pred, true_traj)
        entry["rmse_normalized"] = rmse(pred, true_traj, norm.state_std)
        entry["files"] = {
            "true": str(write_trajectory(true_traj, out_dir / f"true_{index:02d}.csv")),
            "pred": str(write_trajectory(pred, out_dir / f"pred_{index:02d}.csv")),
        }
    else:
        entry["rmse"] = entry["rmse_normalized"] = None

    reports: Dict[str, stability.EigenReport] = {}
    x_guess = x0
    try:
        x_ss = plants.find_equilibrium(plant, u, x0)
        x_guess = x_ss
        J = plants.analytic_state_jacobian(plant, x_ss, u)
        entry["analytic"] = {
            "x_ss": x_ss.tolist(),
            **_eigen(J, "AnalyticPlant", margin),
        }
    except NoEquilibrium as e:
        entry["analytic"] = {"no_equilibrium": str(e)}

    try:
        if isinstance(model, NarxModel):
            x_hat, J_d, eigs = stability.narx_linearize(model, u, x_guess)
            report = stability.eigen_report(None, "ModelJnn", margin, eigs=eigs)
            entry["model"] = {
                "x_ss": x_hat.tolist(),
                "J_discrete": J_d.tolist(),
                "report": report,
            }
        else:
            x_hat, J_nn = stability.model_linearize(model, u, x_guess)
            entry["model"] = {
                "x_ss": x_hat.tolist(),
                "J": J_nn.tolist(),
                **_eigen(J_nn, "ModelJnn", margin),
            }
    except NoEquilibrium as e:
        entry["model"] = {"no_equilibrium": str(e)}
    except ConvergenceFailure as e:
        entry["model"] = {"error": str(e)}

    if config.eval.data_jref and true_traj is not None:
        try:
            _, est = _extract(true_traj, config)
            entry["data_jref"] = {
                "J_ref": est.J_ref.tolist(),
                **_eigen(est.J_ref, "DataJref", margin),
            }
        except EstimationError as e:
            entry["data_jref"] = {"error": str(e)}

    for label in ("analytic", "model", "data_jref"):
        if label in entry and "report" in entry[label]:
            reports[label] = entry[label]["report"]
            entry[label]["report"] = reports[label].to_dict()
    if "analytic" in reports and "model" in reports:
        err = stability.eig_error(
            reports["model"].eigenvalues, reports["analytic"].eigenvalues
        )
        entry["eig_error"] = err.to_dict()
    else:
        entry["eig_error"] = None
    if reports:
        print(f"\nTest input u={list(u)}")
        print(stability.format_eigen_table(reports))
    return entry


def _mean_of(entries, key) -> Optional[float]:
    values = [e[key] for e in entries if e.get(key) is not None]
    return float(np.mean(values)) if values else None


def cmd_eval(config: RunConfig, model_file: Optional[str] = None) -> Path:
    """Compare model forecasts and eigenvalues against the plant on test inputs"""
    started = time.perf_counter()
    mode = config.train.mode.value
    if model_file:
        path = Path(model_file)
    else:
        path = config.paths.resolve("model", mode, config.train.seed)
    model = load_trained(path)
    echo = model.echo() if isinstance(model, NarxModel) else model.train_config_echo
    mode = echo.get("mode", mode)
    seed = echo.get("seed", config.train.seed)
    norm = model.params.norm if isinstance(model, NarxModel) else model.norm

    plant = config.plant.build()
    x0_setting = config.eval.x0
    nominal_state = (
        _nominal_state(config, plant) if isinstance(x0_setting, str) else None
    )
    duration = config.eval.duration or config.data.duration
    dt = echo.get("data_dt", config.data.dt * config.data.downsample / norm.time_scale)
    dt = dt * norm.time_scale

    manager = ReportManager(config.paths.resolve("reports"))
    out_dir = manager.artifact_dir(mode, seed)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(out_dir, "cannot create evaluation directory", e) from e

    test_inputs = [
        np.asarray(u, dtype=float) for u in config.test_inputs(plant.input_dim)
    ]
    entries = []
    for i, u in enumerate(test_inputs):
        x0 = _initial_state(config, plant, x0_setting, u, nominal_state)
        entries.append(
            _evaluate_point(config, plant, model, u, x0, duration, dt, out_dir, i)
        )
    maes = [e["eig_error"]["mae"] for e in entries if e["eig_error"]]
    report = {
        "mode": mode,
        "seed": seed,
        "model_file": str(path),
        "config": config.to_dict(),
        "train": {
            "final_L_total": echo.get("final", {}).get("L_total"),
            "wall_ms": echo.get("wall_ms"),
        },
        "entries": entries,
        "summary": {
            "rmse": _mean_of(entries, "rmse"),
            "rmse_normalized": _mean_of(entries, "rmse_normalized"),
            "eig_mae": float(np.mean(maes)) if maes else None,
        },
        "denormalization": DENORMALIZATION,
        "runtime": runtime_block(started),
    }
    saved = manager.save_eval(report)
    summary = report["summary"]
    print(
        f"\nEvaluated {mode} (seed {seed}) on {len(entries)} inputs: "
        f"RMSE={summary['rmse']} (normalized {summary['rmse_normalized']}), "
        f"eig MAE={summary['eig_mae']}"
    )
    print(f"Report: {saved}")
    return saved


def _read_for_estimation(path: str, use_filter: bool, cutoff: Optional[float]):
    traj = read_trajectory(path)
    if use_filter:
        try:
            traj = zero_phase_lowpass(traj, cutoff or default_cutoff(traj.dt))
        except CutoffError as e:
            raise ConfigError("--cutoff", str(e)) from e
    return traj


def _extract(traj, config: RunConfig):
    lat = config.latent
    return jacest.extract(
        traj, lat.window_len, config.eps_min(), lat.r_max, lat.n_max, lat.scheme
    )


def cmd_jacobian(
    config: RunConfig, trajectory: str, use_filter=False, cutoff=None, output=None
):
    """Estimate and print the data-derived Jacobian of one trajectory"""
    traj = _read_for_estimation(trajectory, use_filter, cutoff)
    eq, est = _extract(traj, config)
    eig = _eigen(est.J_ref, "DataJref", config.eval.margin)
    result = {
        "trajectory": str(trajectory),
        "filtered": bool(use_filter),
        "equilibrium": eq.to_dict(),
        **est.to_dict(),
        "residual": est.lsq_residual,
        "eigen": eig["report"].to_dict() if "report" in eig else eig,
    }
    _emit(result, output)
    return result


def cmd_bound(
    config: RunConfig,
    trajectory: str,
    sigma_x: float,
    jstar_norm: Optional[float] = None,
    use_filter=False,
    cutoff=None,
    output=None,
):
    """Evaluate the pseudoinverse noise bound for one trajectory"""
    if sigma_x < 0:
        raise ConfigError("--sigma-x", "must be >= 0")
    traj = _read_for_estimation(trajectory, use_filter, cutoff)
    lat = config.latent
    _, est = _extract(traj, config)
    sigma_xdot = jacest.derivative_noise_level(sigma_x, traj.dt, lat.scheme)
    bound = jacest.error_bound(est, sigma_x, sigma_xdot, jstar_norm)
    result = {
        "trajectory": str(trajectory),
        **bound.to_dict(),
        "cond": est.cond,
        "deltaX_norm": est.deltaX_norm,
        "n_samples": est.n_samples,
        "dt": traj.dt,
    }
    _emit(result, output)
    return result


def cmd_report(
    config: RunConfig, run_dir: Optional[str] = None
) -> List[Dict[str, Any]]:
    """Tabulate stored evaluations by training mode"""
    manager = ReportManager(run_dir or config.paths.resolve("reports"))
    rows = manager.comparison()
    if not rows:
        raise ConfigError(
            "paths.reports", f"no evaluation results in {manager.report_dir}"
        )
    paths = manager.write_comparison(rows)
    for row in rows:
        print(
            f"{row['mode']:>8}  seeds={row['seeds']}  rmse={row['trajectory_rmse']}  "
            f"eig_mae={row['eigenvalue_mae']}  loss={row['final_train_loss']}"
        )
    print(f"Comparison: {paths['csv']}")
    return rows


def run(args) -> int:
    config = load_config(args)
    logging.getLogger().setLevel(config.log_level)
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        return 0
    if args.command == "generate":
        cmd_generate(config)
    elif args.command == "train":
        cmd_train(config)
    elif args.command == "eval":
        cmd_eval(config, args.model)
    elif args.command == "jacobian":
        cmd_jacobian(config, args.trajectory, args.filter, args.cutoff, args.output)
    elif args.command == "bound":
        cmd_bound(
            config,
            args.trajectory,
            args.sigma_x,
            args.jstar_norm,
            args.filter,
            args.cutoff,
            args.output,
        )
    elif args.command == "report":
        cmd_report(config, args.run_dir)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code"""
    parser = create_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=args.log_level or "INFO", format=LOG_FORMAT)

    try:
        return run(args)
    except LfiNodeError as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        logger.error(f"Invalid argument: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("\nlfi-node stopped", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
