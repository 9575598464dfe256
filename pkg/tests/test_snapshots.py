import json

import numpy as np
import pytest

from app.schemas import DiagnosticsRow
from app.services.errors import InvalidFieldError
from app.services.snapshots import CsvTable, SnapshotSchedule, load_snapshot, read_csv, write_csv, write_snapshot
from tests.conftest import band_limited


class TestSnapshotFiles:
    def test_nodal_snapshot(self, tmp_path, grid2d, rng):
        field = band_limited(grid2d, rng)
        path = write_snapshot(tmp_path, "phi_000010", field, 0.25, extra={"config_hash": "abc"})
        assert path.name == "phi_000010.bin"
        assert path.stat().st_size == 8 * grid2d.size

        loaded, sidecar = load_snapshot(path)
        np.testing.assert_array_equal(loaded.values, field.values)
        assert loaded.grid == grid2d
        assert sidecar["time"] == 0.25
        assert sidecar["representation"] == "nodal"
        assert sidecar["config_hash"] == "abc"

    def test_spectral_snapshot_loads_from_sidecar_path(self, tmp_path, grid1d, rng):
        field = band_limited(grid1d, rng)
        write_snapshot(tmp_path, "sigma_000000", field, 0.0, representation="spectral")
        loaded, sidecar = load_snapshot(tmp_path / "sigma_000000.json")
        assert sidecar["representation"] == "spectral"
        np.testing.assert_array_equal(loaded.coeffs, field.coeffs)

    def test_sidecar_is_plain_json(self, tmp_path, grid2d):
        write_snapshot(tmp_path, "u", band_limited(grid2d, np.random.default_rng(0)), 1.0)
        sidecar = json.loads((tmp_path / "u.json").read_text())
        assert sidecar["dim"] == 2
        assert sidecar["counts"] == [32, 32]
        assert sidecar["lengths"] == [1.0, 1.0]

    def test_truncated_payload_is_rejected(self, tmp_path, grid2d, rng):
        path = write_snapshot(tmp_path, "phi", band_limited(grid2d, rng), 0.0)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(InvalidFieldError, match="sidecar expects"):
            load_snapshot(path)

    def test_unknown_representation(self, tmp_path, grid2d, rng):
        with pytest.raises(InvalidFieldError, match="representation"):
            write_snapshot(tmp_path, "phi", band_limited(grid2d, rng), 0.0, representation="modal")


class TestCsvTable:
    def test_header_follows_the_model(self, tmp_path):
        rows = [
            DiagnosticsRow(config_hash="h", t=0.0, R=0.2, kappa_mean=5.0),
            DiagnosticsRow(config_hash="h", t=0.1),
        ]
        path = write_csv(tmp_path / "diagnostics.csv", rows, DiagnosticsRow)
        header = path.read_text().splitlines()[0].split(",")
        assert header == list(DiagnosticsRow.model_fields.keys())

        back = read_csv(path)
        assert len(back) == 2
        assert float(back[0]["R"]) == 0.2
        assert back[1]["R"] == ""

    def test_incremental_append(self, tmp_path):
        with CsvTable(tmp_path / "t.csv", DiagnosticsRow) as table:
            table.append(DiagnosticsRow(config_hash="h", t=0.0))
            table.flush()
            assert len(read_csv(tmp_path / "t.csv")) == 1
            table.append(DiagnosticsRow(config_hash="h", t=1.0))
        assert [row["t"] for row in read_csv(tmp_path / "t.csv")] == ["0.0", "1.0"]


class TestSnapshotSchedule:
    def test_every_n_steps(self):
        schedule = SnapshotSchedule(every_steps=2)
        assert [schedule.due(k, 0.0) for k in range(1, 6)] == [False, True, False, True, False]

    def test_simulated_time_interval(self):
        schedule = SnapshotSchedule(interval=0.1)
        assert not schedule.due(1, 0.05)
        assert schedule.due(2, 0.1)
        assert not schedule.due(3, 0.15)
        # a long step skips ahead without firing twice
        assert schedule.due(4, 0.31)
        assert not schedule.due(5, 0.35)
        assert schedule.due(6, 0.4)

    def test_disabled(self):
        schedule = SnapshotSchedule()
        assert not any(schedule.due(k, 0.1 * k) for k in range(1, 10))
