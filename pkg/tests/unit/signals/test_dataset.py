"""
Unit tests for dataset generation and the CSV/manifest format.
"""

import json

import numpy as np
import pytest

from lfi_node.core.exceptions import DataIOError, FormatError
from lfi_node.plants import PlantModel
from lfi_node.signals.dataset import (
    GridPoint,
    generate_dataset,
    read_dataset,
    read_trajectory,
    resolve_cutoff,
    write_dataset,
    write_trajectory,
)
from lfi_node.signals.processing import fit_normalization
from lfi_node.signals.trajectory import Dataset, Trajectory

LINEAR = {"A": [[0.0, 1.0], [-2.0, -3.0]], "B": [[0.0], [1.0]]}


@pytest.fixture
def plant():
    return PlantModel.from_spec("linear", LINEAR)


@pytest.fixture
def grid():
    return [
        GridPoint(np.array([0.5]), np.zeros(2)),
        GridPoint(np.array([-0.5]), np.zeros(2)),
    ]


class TestGenerateDataset:
    """Test cases for dataset generation."""

    def test_one_trajectory_per_point(self, plant, grid):
        """Test that every grid point yields a tagged trajectory."""
        dataset = generate_dataset(plant, grid, dt=0.01, duration=2.0)

        assert len(dataset) == 2
        assert dataset.trajectories[0].n_samples == 200
        assert dataset.trajectories[1].meta["grid_index"] == 1
        assert dataset.trajectories[1].meta["u"] == [-0.5]
        assert dataset.manifest["counts"] == {
            "grid": 2,
            "trajectories": 2,
            "truncated": 0,
            "failures": 0,
        }

    def test_step_from_nominal_input(self, plant, grid):
        """Test that the input steps from the nominal value to the grid value."""
        dataset = generate_dataset(
            plant, grid, dt=0.01, duration=2.0, nominal_input=[0.0], step_time=0.505
        )

        inputs = dataset.trajectories[0].inputs[:, 0]
        assert np.all(inputs[:51] == 0.0)
        assert np.all(inputs[51:] == 0.5)

    def test_seeded_noise_is_reproducible(self, plant, grid):
        """Test that the same seed gives identical noisy data."""
        kwargs = dict(dt=0.01, duration=1.0, sigma_x=0.01, seed=7)

        first = generate_dataset(plant, grid, **kwargs)
        second = generate_dataset(plant, grid, **kwargs)

        for a, b in zip(first.trajectories, second.trajectories):
            np.testing.assert_array_equal(a.states, b.states)

    def test_noise_depends_on_point_index_only(self, plant, grid):
        """Test that a point's noise does not depend on the rest of the grid."""
        kwargs = dict(dt=0.01, duration=1.0, sigma_x=0.01, seed=7)

        full = generate_dataset(plant, grid, **kwargs)
        first_only = generate_dataset(plant, grid[:1], **kwargs)

        np.testing.assert_array_equal(
            full.trajectories[0].states, first_only.trajectories[0].states
        )

    def test_downsampling(self, plant, grid):
        """Test that the downsample factor scales dt and the sample count."""
        dataset = generate_dataset(
            plant, grid, dt=0.01, duration=2.0, downsample_factor=4
        )

        traj = dataset.trajectories[0]
        assert traj.dt == pytest.approx(0.04)
        assert traj.n_samples == 50

    def test_empty_grid(self, plant):
        """Test that an empty input grid is rejected."""
        with pytest.raises(ValueError):
            generate_dataset(plant, [], dt=0.01, duration=1.0)

    def test_failures_are_recorded(self):
        """Test that a diverging point is recorded and its partial data kept."""
        plant = PlantModel.from_spec("linear", {"A": [[200.0]], "B": [[1.0]]})
        grid = [GridPoint(np.array([0.0]), np.array([1.0]))]

        dataset = generate_dataset(plant, grid, dt=0.01, duration=10.0)

        assert dataset.manifest["counts"]["failures"] == 1
        assert dataset.manifest["failures"][0]["index"] == 0
        assert len(dataset) == 1
        assert dataset.trajectories[0].truncated


class TestResolveCutoff:
    """Test cases for cutoff configuration values."""

    @pytest.mark.parametrize("value", [None, False])
    def test_disabled(self, value):
        """Test that None and false disable filtering."""
        assert resolve_cutoff(value, 0.01) is None

    def test_auto(self):
        """Test that "auto" means Nyquist / 50."""
        assert resolve_cutoff("auto", 0.01) == pytest.approx(1.0)

    def test_number(self):
        """Test that a number is taken in Hz."""
        assert resolve_cutoff(3, 0.01) == 3.0


class TestTrajectoryCsv:
    """Test cases for trajectory CSV files."""

    def test_write_and_read_is_exact(self, tmp_path):
        """Test that values survive the CSV bit for bit."""
        rng = np.random.default_rng(0)
        traj = Trajectory(0.1, rng.normal(size=(6, 2)), rng.normal(size=(6, 1)))

        path = write_trajectory(traj, tmp_path / "traj.csv")
        loaded = read_trajectory(path, dt=0.1, t0=0.0)

        np.testing.assert_array_equal(loaded.states, traj.states)
        np.testing.assert_array_equal(loaded.inputs, traj.inputs)
        assert path.read_text().splitlines()[0] == "t,x1,x2,u1"

    def test_dt_from_time_column(self, tmp_path):
        """Test that dt and t0 default to the time column."""
        path = tmp_path / "traj.csv"
        path.write_text("t,x1,u1\n1.0,0.0,0.0\n1.5,1.0,0.0\n2.0,2.0,0.0\n")

        traj = read_trajectory(path)

        assert traj.dt == pytest.approx(0.5)
        assert traj.t0 == 1.0

    def test_missing_file(self, tmp_path):
        """Test that a missing file is a DataIOError."""
        with pytest.raises(DataIOError):
            read_trajectory(tmp_path / "absent.csv")

    @pytest.mark.parametrize(
        "content",
        [
            "",
            "time,x1,u1\n0,1,2\n0.1,1,2\n",
            "t,x1,u1\n0,1,2\n0.1,1\n",
            "t,x1,u1\n0,1,2\n0.1,abc,2\n",
            "t,x1,u1\n0,1,2\n",
            "t,x1,u1\n0,1,2\n0.1,nan,2\n",
        ],
    )
    def test_malformed_files(self, tmp_path, content):
        """Test that malformed CSVs raise FormatError."""
        path = tmp_path / "bad.csv"
        path.write_text(content)
        with pytest.raises(FormatError):
            read_trajectory(path)


class TestDatasetDirectory:
    """Test cases for dataset directories."""

    def test_write_and_read(self, plant, grid, tmp_path):
        """Test that trajectories, metadata and statistics survive a directory."""
        dataset = generate_dataset(plant, grid, dt=0.01, duration=1.0, sigma_x=0.01)
        dataset = Dataset(
            dataset.trajectories,
            norm=fit_normalization(dataset),
            manifest=dataset.manifest,
        )

        root = write_dataset(dataset, tmp_path / "dataset")
        loaded = read_dataset(root)

        assert (root / "manifest.json").is_file()
        assert (root / "traj_001.csv").is_file()
        assert len(loaded) == 2
        np.testing.assert_array_equal(
            loaded.trajectories[1].states, dataset.trajectories[1].states
        )
        assert loaded.trajectories[1].dt == dataset.trajectories[1].dt
        assert loaded.trajectories[0].meta["grid_index"] == 0
        assert loaded.norm.to_dict() == dataset.norm.to_dict()
        assert loaded.manifest["generation"]["sigma_x"] == 0.01

    def test_missing_manifest(self, tmp_path):
        """Test that a directory without a manifest is a FormatError."""
        with pytest.raises(FormatError):
            read_dataset(tmp_path)

    def test_invalid_manifest(self, tmp_path):
        """Test that a non-JSON manifest is a FormatError."""
        (tmp_path / "manifest.json").write_text("{oops")
        with pytest.raises(FormatError):
            read_dataset(tmp_path)

    def test_manifest_without_trajectories(self, tmp_path):
        """Test that the manifest must list its trajectories."""
        (tmp_path / "manifest.json").write_text(json.dumps({"norm": None}))
        with pytest.raises(FormatError):
            read_dataset(tmp_path)
