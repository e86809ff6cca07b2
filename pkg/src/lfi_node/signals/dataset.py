"""
Dataset generation and on-disk format.

A dataset directory holds ``manifest.json`` (generation config, trajectory
list, normalization statistics) and one CSV per trajectory with header
``t,x1..x{d_x},u1..u{d_u}``. Floats are written with ``repr`` so reading
back is exact.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import DataIOError, FormatError, TooShort
from .processing import (
    add_noise,
    default_cutoff,
    downsample,
    simulate_or_partial,
    zero_phase_lowpass,
)
from .trajectory import Dataset, InputSchedule, NormStats, Trajectory

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
NOMINAL_INPUT = (1.0, 1.0)


@dataclass(frozen=True)
class GridPoint:
    """One experiment: the stepped-to input and the initial state."""

    u: np.ndarray
    x0: np.ndarray


def generate_dataset(
    plant,
    input_grid: Sequence[GridPoint],
    dt: float,
    duration: float,
    sigma_x: float = 0.0,
    cutoff_hz: Optional[float] = None,
    downsample_factor: int = 1,
    seed: int = 0,
    nominal_input: Optional[Sequence[float]] = None,
    step_time: float = 0.0,
    integrator=None,
) -> Dataset:
    """Simulate, corrupt, filter and downsample one trajectory per grid point.

    Each point's noise stream is seeded from (seed, index), so results do not
    depend on processing order. Integration failures are recorded in the
    manifest; a partial trajectory long enough to survive the pipeline is kept
    (tagged truncated).
    """
    if len(input_grid) == 0:
        raise ValueError("input grid is empty")
    if nominal_input is None:
        nominal_input = NOMINAL_INPUT[: plant.input_dim]
    nominal = np.asarray(nominal_input, dtype=float)
    trajectories: List[Trajectory] = []
    entries: List[Dict[str, Any]] = []
    failures: List[Dict[str, Any]] = []
    for index, point in enumerate(input_grid):
        schedule = InputSchedule.step(nominal, point.u, step_time)
        traj, failure = simulate_or_partial(
            plant, point.x0, schedule, dt, duration, integrator
        )
        if failure is not None:
            failures.append(
                {
                    "index": index,
                    "t_reached": failure.t_reached,
                    "reason": failure.reason,
                }
            )
        if traj is None:
            logger.warning(f"Grid point {index} produced no samples; skipped")
            continue
        try:
            traj = add_noise(traj, sigma_x, [seed, index])
            if cutoff_hz is not None:
                traj = zero_phase_lowpass(traj, cutoff_hz)
            traj = downsample(traj, downsample_factor)
        except TooShort:
            logger.warning(f"Grid point {index} too short after processing; skipped")
            continue
        traj = traj.with_meta(
            grid_index=index,
            u=np.asarray(point.u, dtype=float).tolist(),
            x0=np.asarray(point.x0, dtype=float).tolist(),
            cutoff_hz=cutoff_hz,
            normalized=False,
        )
        trajectories.append(traj)
        entries.append({"index": index, "truncated": traj.truncated})
    manifest = {
        "generation": {
            "plant": plant.to_dict(),
            "dt": dt,
            "duration": duration,
            "sigma_x": sigma_x,
            "cutoff_hz": cutoff_hz,
            "downsample_factor": downsample_factor,
            "seed": seed,
            "nominal_input": nominal.tolist(),
            "step_time": step_time,
        },
        "counts": {
            "grid": len(input_grid),
            "trajectories": len(trajectories),
            "truncated": sum(e["truncated"] for e in entries),
            "failures": len(failures),
        },
        "failures": failures,
    }
    logger.info(
        f"Generated {len(trajectories)} trajectories "
        f"({manifest['counts']['truncated']} truncated) from {len(input_grid)} points"
    )
    return Dataset(trajectories, manifest=manifest)


def resolve_cutoff(cutoff, dt: float) -> Optional[float]:
    """Config value -> Hz: None/false disables, "auto" means Nyquist/50."""
    if cutoff in (None, False):
        return None
    if cutoff == "auto":
        return default_cutoff(dt)
    return float(cutoff)


# Trajectory CSV ---------------------------------------------------------------


def write_trajectory(traj: Trajectory, path) -> Path:
    path = Path(path)
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(traj.state_dim)]
        + [f"u{i + 1}" for i in range(traj.input_dim)]
    )
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for t, x, u in zip(traj.times, traj.states, traj.inputs):
                writer.writerow([repr(float(v)) for v in (t, *x, *u)])
    except OSError as e:
        raise DataIOError(path, "cannot write trajectory", e) from e
    return path


def read_trajectory(
    path, dt: Optional[float] = None, t0: Optional[float] = None, meta=None
) -> Trajectory:
    """Read a trajectory CSV; dt and t0 come from the t column unless given."""
    path = Path(path)
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except FileNotFoundError as e:
        raise DataIOError(path, "trajectory file not found", e) from e
    except OSError as e:
        raise DataIOError(path, "cannot read trajectory", e) from e
    if not rows:
        raise FormatError(path, "empty file")
    header = rows[0]
    d_x = sum(1 for h in header if h.startswith("x"))
    d_u = sum(1 for h in header if h.startswith("u"))
    expected = (
        ["t"] + [f"x{i + 1}" for i in range(d_x)] + [f"u{i + 1}" for i in range(d_u)]
    )
    if header != expected:
        raise FormatError(path, f"bad header {header}")
    values = []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(
                path, f"row {line_no} has {len(row)} columns, expected {len(header)}"
            )
        try:
            values.append([float(v) for v in row])
        except ValueError:
            raise FormatError(path, f"row {line_no} has a non-numeric value")
    data = np.array(values, dtype=float).reshape(-1, len(header))
    if data.shape[0] < 2:
        raise FormatError(path, "fewer than two samples")
    times = data[:, 0]
    if dt is None:
        dt = float((times[-1] - times[0]) / (len(times) - 1))
    if t0 is None:
        t0 = float(times[0])
    try:
        return Trajectory(
            dt, data[:, 1 : 1 + d_x], data[:, 1 + d_x :], t0=t0, meta=meta or {}
        )
    except ValueError as e:
        raise FormatError(path, str(e)) from e


# Dataset directory --------------------------------------------------------


def _traj_name(i: int) -> str:
    return f"traj_{i:03d}.csv"


def write_dataset(dataset: Dataset, path) -> Path:
    """Write manifest.json plus one CSV per trajectory."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(root, "cannot create dataset directory", e) from e
    listing = []
    for i, traj in enumerate(dataset.trajectories):
        write_trajectory(traj, root / _traj_name(i))
        listing.append(
            {"file": _traj_name(i), "dt": traj.dt, "t0": traj.t0, "meta": traj.meta}
        )
    manifest = {
        **dataset.manifest,
        "trajectories": listing,
        "norm": dataset.norm.to_dict() if dataset.norm else None,
    }
    try:
        with open(root / MANIFEST, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)
    except OSError as e:
        raise DataIOError(root / MANIFEST, "cannot write manifest", e) from e
    logger.info(f"Wrote {len(dataset)} trajectories to {root}")
    return root


def read_dataset(path) -> Dataset:
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.is_file():
        raise FormatError(manifest_path, "missing manifest")
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(manifest_path, f"invalid JSON: {e}") from e
    except OSError as e:
        raise DataIOError(manifest_path, "cannot read manifest", e) from e
    if "trajectories" not in manifest:
        raise FormatError(manifest_path, "manifest lists no trajectories")
    trajectories = [
        read_trajectory(
            root / entry["file"], entry["dt"], entry["t0"], entry.get("meta")
        )
        for entry in manifest.pop("trajectories")
    ]
    norm_data = manifest.pop("norm", None)
    try:
        norm = NormStats.from_dict(norm_data) if norm_data else None
    except (KeyError, ValueError) as e:
        raise FormatError(manifest_path, f"bad norm stats: {e}") from e
    return Dataset(trajectories, norm=norm, manifest=manifest)
