import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitfem import cli, io
from eitfem.errors import ConfigError, DataIOError, InvalidMeshError
from eitfem.mesh import generate_disk_mesh, generate_square_mesh, tag_electrodes, uniform_electrodes


# ---------------------------------------------------------------- formats

def test_mesh_round_trip():
    m = tag_electrodes(generate_disk_mesh(16), uniform_electrodes(4))
    back = io.parse_mesh(io.format_mesh(m))
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_edges, m.boundary_edges)
    assert np.array_equal(back.electrode_of_edge, m.electrode_of_edge)
    assert back.domain == m.domain
    assert io.format_mesh(back) == io.format_mesh(m)


def test_mesh_parse_errors():
    text = io.format_mesh(generate_square_mesh(1))
    with pytest.raises(InvalidMeshError):
        io.parse_mesh(text.replace("eitmesh 1", "eitmesh 2"))
    with pytest.raises(InvalidMeshError):
        io.parse_mesh(text.replace("domain polygon", "domain sphere"))
    lines = text.splitlines()
    i = lines.index("boundary 4")
    with pytest.raises(InvalidMeshError):
        io.parse_mesh("\n".join(lines[: i + 1] + ["0 2 0"] + lines[i + 2:]))


def test_field_and_patterns_round_trip(rng):
    v = rng.standard_normal(7)
    assert np.array_equal(io.parse_field(io.format_field(v), 7), v)
    with pytest.raises(DataIOError):
        io.parse_field(io.format_field(v), 8)
    P = rng.standard_normal((3, 4))
    assert np.array_equal(io.parse_patterns(io.format_patterns(P), 4), P)


def test_voltages_round_trip(rng):
    U = rng.standard_normal((8, 7))
    text = io.format_voltages(U)
    assert len(text.splitlines()) == 1 + 56
    assert np.array_equal(io.parse_voltages(text), U)
    with pytest.raises(DataIOError):
        io.parse_voltages("pattern,electrode,voltage\n0,0,1\n0,0,2\n")


def test_atomic_write(tmp_path):
    target = tmp_path / "sub" / "a.txt"
    io.atomic_write(target, "hello\n")
    assert target.read_text() == "hello\n"
    assert [p.name for p in target.parent.iterdir()] == ["a.txt"]
    with pytest.raises(DataIOError):
        io.read_text(tmp_path / "missing.txt")


# ---------------------------------------------------------------- configuration

def test_parse_config_example():
    cfg = cli.parse_config("command=forward\ndomain=disk 32\n# comment\nelectrodes=8  # trailing\n")
    assert cfg.command == "forward" and cfg.domain == ("disk", 32) and cfg.electrodes == 8


@pytest.mark.parametrize("text, line", [
    ("command=invert\nalpha=-1\n", 2),
    ("command=invert\nfoo=1\n", 2),
    ("command=invert\n\nseed=x\n", 3),
    ("domain=disk 4\n", 1),
    ("command=forward\nelectrodes=4\nimpedance=0.1 0.2\n", 3),
    ("command=forward\ncommand=mesh\n", 2),
    ("command=forward\njust text\n", 2),
])
def test_parse_config_errors_name_line(text, line):
    with pytest.raises(ConfigError) as info:
        cli.parse_config(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_parse_config_requires_command():
    with pytest.raises(ConfigError):
        cli.parse_config("domain=disk 16\n")


configs = st.builds(
    dict,
    command=st.sampled_from(cli.COMMANDS),
    domain=st.one_of(st.tuples(st.just("polygon"), st.integers(1, 20)),
                     st.tuples(st.just("disk"), st.integers(8, 200))),
    electrodes=st.integers(2, 16),
    coverage=st.floats(0.05, 0.95),
    noise=st.floats(0, 0.5),
    seed=st.integers(0, 2**32),
    alpha=st.floats(1e-8, 10.0),
    penalty=st.sampled_from(["h1", "tv"]),
    eps_tv=st.one_of(st.none(), st.floats(1e-6, 1.0)),
    truth=st.one_of(st.tuples(st.just("constant"), st.floats(0.2, 5.0)),
                    st.tuples(st.just("inclusion"), st.floats(-1, 1), st.floats(-1, 1),
                              st.floats(0.05, 0.5), st.floats(-0.5, 3.0))),
    amplitudes=st.lists(st.floats(0, 1), min_size=1, max_size=4).map(tuple),
    levels=st.integers(3, 6),
    timings=st.booleans(),
)


@settings(max_examples=60, deadline=None)
@given(kw=configs)
def test_config_round_trip(kw):
    cfg = cli.RunConfig(**kw)
    text = cli.serialize_config(cfg)
    again = cli.parse_config(text)
    assert again == cfg
    assert cli.serialize_config(again) == text


# ---------------------------------------------------------------- runs

def run_cli(tmp_path, text, name="run.cfg"):
    cfg = tmp_path / name
    cfg.write_text(text)
    out = tmp_path / "out"
    return cli.main(["--config", str(cfg), "--output", str(out)]), out


def test_cli_forward_shape(tmp_path):
    code, out = run_cli(tmp_path, "command=forward\ndomain=disk 32\nelectrodes=8\npatterns=adjacent 7\n")
    assert code == 0
    U = io.parse_voltages((out / "voltages.csv").read_text())
    assert U.shape == (8, 7)
    assert io.read_mesh(out / "mesh.eitmesh").n_electrodes == 8


def test_cli_geometry_study(tmp_path):
    code, out = run_cli(tmp_path, "command=study-geometry\nn_list=16 32 64\n")
    assert code == 0
    rows = (out / "study_geometry_seed0.csv").read_text().splitlines()
    rates = [float(r.split(",")[4]) for r in rows[2:]]
    assert all(abs(r - 2) < 0.1 for r in rates)


def test_cli_missing_data_file(tmp_path):
    code, out = run_cli(tmp_path, "command=invert\ndomain=disk 16\ndata_file=/nonexistent/d.csv\n")
    assert code == 5
    assert not out.exists()


def test_cli_config_error(tmp_path, capsys):
    code, out = run_cli(tmp_path, "command=invert\nalpha=-1\n")
    assert code == 1
    assert "line 2" in capsys.readouterr().err
    assert not out.exists()


def test_cli_mesh_error(tmp_path):
    # electrodes far too narrow for a 16-gon
    code, out = run_cli(tmp_path, "command=mesh\ndomain=disk 16\narcs=0 0.01; 3 3.01\n")
    assert code == 2
    assert not out.exists()


def test_cli_solver_error(tmp_path):
    sigma = tmp_path / "sigma.txt"
    sigma.write_text(io.format_field(np.full(generate_disk_mesh(16).n_nodes, 50.0)))
    code, out = run_cli(tmp_path, f"command=forward\ndomain=disk 16\nsigma_file={sigma}\n")
    assert code == 3
    assert not out.exists()


def test_cli_invert_synthetic(tmp_path):
    code, out = run_cli(tmp_path, "command=invert\ndomain=disk 16\nrefinements=1\n"
                                  "truth=inclusion 0.3 0.2 0.3 0.8\nnoise=0.01\nseed=4\nmax_iters=20\n")
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["data.csv", "mesh.eitmesh", "run_summary.csv", "sigma_star.txt"]
    summary = (out / "run_summary.csv").read_text().splitlines()
    assert summary[0] == "iteration,J,fit,penalty,step"
    J = [float(r.split(",")[1]) for r in summary[1:]]
    assert all(b <= a for a, b in zip(J, J[1:]))


def test_cli_invert_from_files(tmp_path):
    code, out = run_cli(tmp_path, "command=forward\ndomain=disk 16\nrefinements=1\n"
                                  "truth=smooth-bump 0.2 0.2 0.3 0.5\n")
    assert code == 0
    data = tmp_path / "data.csv"
    data.write_bytes((out / "voltages.csv").read_bytes())
    pats = tmp_path / "p.txt"
    pats.write_text(io.format_patterns(cli.adjacent_dipoles(8)))
    code, out2 = run_cli(tmp_path, f"command=invert\ndomain=disk 16\nrefinements=1\ndata_file={data}\n"
                                   f"patterns=file {pats}\nmax_iters=10\n", "inv.cfg")
    assert code == 0


def test_cli_deterministic(tmp_path):
    text = "command=study-continuity\ndomain=disk 16\namplitudes=0.1 0.01\n"
    code, out = run_cli(tmp_path, text)
    first = (out / "study_continuity_seed0.csv").read_bytes()
    code, out = run_cli(tmp_path, text)
    assert code == 0 and (out / "study_continuity_seed0.csv").read_bytes() == first


def test_commit_is_all_or_nothing(tmp_path):
    blocker = tmp_path / "out"
    blocker.mkdir()
    (blocker / "b.csv").mkdir()  # a directory where a file should go
    with pytest.raises(DataIOError):
        cli.commit({"a.csv": "1\n", "b.csv": "2\n"}, blocker)
    assert sorted(p.name for p in blocker.iterdir()) == ["b.csv"]
