import json

import numpy as np
import pytest

from roughdense import io
from roughdense.density import EnvelopeParams, InequalityReport, estimate_density
from roughdense.driver import TimeGrid, levy_area, sample_fbm
from roughdense.fields import so3_frame
from roughdense.increments import delta_path
from roughdense.malliavin import propagate
from roughdense.solver import solve


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, -2.5e-300, 123456789.123456789):
        assert float(io.fmt(v)) == v
    assert io.fmt(np.int64(7)) == "7"


def test_path_round_trip(tmp_path):
    smp = sample_fbm(0.4, 2, TimeGrid(5, 0.5), 12)
    io.write_path(tmp_path / "p.csv", smp)
    back = io.read_path(tmp_path / "p.csv")
    assert np.array_equal(back.values, smp.values)
    assert back.hurst.h == 0.4 and back.seed == 12
    assert json.loads((tmp_path / "p.json").read_text()) == {"h": 0.4, "T": 0.5, "m": 5, "seed": 12}
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,comp_0,comp_1"


def test_level2_table(tmp_path):
    drv = levy_area(sample_fbm(0.4, 2, TimeGrid(3), 1))
    io.write_level2(tmp_path / "l2.csv", drv)
    header, data = io.read_table(tmp_path / "l2.csv")
    assert header == ["i", "j", "k", "value"]
    _, l2 = drv.blocks(3)
    for i, j, k, v in data:
        assert l2[int(i), int(j), int(k)] == v


def test_solution_and_derivative_dumps(tmp_path):
    system = so3_frame()
    drv = levy_area(sample_fbm(0.6, 3, TimeGrid(4), 1))
    sol = solve(system, drv, [0.1, 0.2, 0.3])
    io.write_solution(tmp_path / "x.csv", sol)
    header, data = io.read_table(tmp_path / "x.csv")
    assert header == ["t", "x_0", "x_1", "x_2"]
    assert np.array_equal(data[:, 1:], sol.values)
    proc = propagate(sol, system, drv)
    io.write_derivative(tmp_path / "m.csv", proc)
    header, data = io.read_table(tmp_path / "m.csv")
    assert header[:3] == ["s", "m_00", "m_01"] and len(header) == 10
    assert np.array_equal(data[:, 1:].reshape(-1, 3, 3), proc.matrices)


def test_reports_and_plot_data(tmp_path):
    rep = InequalityReport("demo", 0.5, 1.0, 0.1, {"lambda": 1.0})
    io.write_reports(tmp_path / "r.json", [rep])
    loaded = json.loads((tmp_path / "r.json").read_text())
    assert loaded == [{"name": "demo", "lhs": 0.5, "rhs": 1.0, "stderr": 0.1, "params": {"lambda": 1.0}, "verdict": True}]
    dens = estimate_density(np.random.default_rng(0).standard_normal((5000, 1)), 16)
    io.write_plot_data(tmp_path / "plot.csv", dens, EnvelopeParams(0.4, 0.0, 2.0, 0.0), 0.75, 1.0)
    header, data = io.read_table(tmp_path / "plot.csv")
    assert header == ["y", "p_hat", "band_lo", "band_hi", "envelope"]
    assert data.shape == (16, 5)
    assert np.all(data[:, 2] <= data[:, 1]) and np.all(data[:, 1] <= data[:, 3])


def test_increment_dump(tmp_path):
    times = np.linspace(0, 1, 4)
    io.write_increment(tmp_path / "inc.csv", delta_path(times, times**2))
    header, data = io.read_table(tmp_path / "inc.csv")
    assert header == ["s", "t", "value_0"]
    assert len(data) == 6
    assert np.allclose(data[:, 2], data[:, 1] ** 2 - data[:, 0] ** 2)


def test_load_builtin_system(tmp_path):
    f = tmp_path / "sys.json"
    f.write_text(json.dumps({"d": 2, "fields": ["constant-frame"], "omega": "builtin", "V0": [0.5, -1.0]}))
    system = io.load_system(f)
    assert system.dim == 2
    assert np.allclose(system.drift(np.zeros((1, 2))), [[0.5, -1.0]])


def test_load_system_with_structure_table(tmp_path):
    eps = np.zeros((4, 3, 3))
    eps[1:] = [[[0, 0, 0], [0, 0, 1], [0, -1, 0]], [[0, 0, -1], [0, 0, 0], [1, 0, 0]], [[0, 1, 0], [-1, 0, 0], [0, 0, 0]]]
    f = tmp_path / "so3.json"
    f.write_text(json.dumps({"d": 3, "fields": "so3", "omega": eps.tolist()}))
    assert io.load_system(f).dim == 3
    f.write_text(json.dumps({"d": 3, "fields": "so3", "omega": (-eps).tolist()}))
    with pytest.raises(ValueError, match="brackets"):
        io.load_system(f)


def test_load_system_errors(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text(json.dumps({"d": 2, "fields": "pendulum"}))
    with pytest.raises(ValueError, match="d:"):
        io.load_system(f)
    f.write_text(json.dumps({"fields": "pendulum", "V0": [1.0]}))
    with pytest.raises(ValueError, match="V0"):
        io.load_system(f)
