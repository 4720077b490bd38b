import numpy as np
import pytest

from cplkit.config import FSI_EXAMPLE
from cplkit.errors import CouplingError, UsageError
from cplkit.harness import (
    DirichletSide,
    Heat1dProblem,
    NeumannSide,
    dummy_config,
    heat1d_config,
    main,
    run_mapping_test,
    run_participant,
    solve_monolithic,
)
from cplkit.harness.heat1d import monolithic_step, read_solution
from cplkit.harness.mapping_test import field_function
from cplkit.mesh import write_mesh

from conftest import cli_pair, run_threads, unit_square


@pytest.fixture
def square_files(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    write_mesh(unit_square(8, "coarse"), a)
    write_mesh(unit_square(11, "fine"), b)
    return a, b


def relative_l2(lines):
    return float(lines[-1].split(":")[1])


# ---------------------------------------------------------------------------
#  mapping-test
# ---------------------------------------------------------------------------


class TestMappingTest:
    def test_identical_nn_is_zero(self, square_files):
        a, _ = square_files
        assert main(["mapping-test", "--mesh-a", str(a), "--mesh-b", str(a)]) == 0

    def test_identical_report(self, square_files):
        from cplkit.mesh import read_mesh

        m = read_mesh(square_files[0])
        lines = run_mapping_test(m, m, "nn")
        assert lines[0] == "mapping: nearest-neighbor consistent"
        assert lines[1] == "mesh-a: a vertices=81 edges=0 triangles=128"
        assert lines[-1] == "relative-l2: 0"

    def test_np_beats_nn(self, square_files):
        from cplkit.mesh import read_mesh

        a, b = (read_mesh(p) for p in square_files)
        assert relative_l2(run_mapping_test(a, b, "np")) < relative_l2(run_mapping_test(a, b, "nn"))

    def test_wave_at_origin(self, square_files, capsys):
        a, _ = square_files
        assert main(["mapping-test", "--mesh-a", str(a), "--mesh-b", str(a), "--verbose"]) == 0
        out = capsys.readouterr().out
        assert "a[0] 0 0 value=0.78000000000000003" in out

    def test_affine_function(self, square_files):
        from cplkit.mesh import read_mesh

        a, b = (read_mesh(p) for p in square_files)
        lines = run_mapping_test(a, b, "rbf-tps", function="affine:1,2,3")
        assert relative_l2(lines) < 1e-10
        with pytest.raises(UsageError, match="needs 3 coefficients"):
            run_mapping_test(a, b, "nn", function="affine:1,2")
        with pytest.raises(UsageError, match="unknown test function"):
            field_function("sin")

    def test_byte_identical_runs(self, square_files):
        a, b = square_files
        args = ["mapping-test", "--mesh-a", a, "--mesh-b", b, "--mapping", "rbf-ctps", "--support-radius", "0.5"]
        (r1, o1, _), (r2, o2, _) = cli_pair(args, args)
        assert r1 == r2 == 0 and o1 == o2 and "relative-l2" in o1

    def test_bad_flag(self, square_files, capsys):
        a, _ = square_files
        with pytest.raises(SystemExit) as exc:
            main(["mapping-test", "--mesh-a", str(a), "--mesh-b", str(a), "--mapping", "cubic"])
        assert exc.value.code != 0

    def test_missing_mesh_file(self, tmp_path, capsys):
        assert main(["mapping-test", "--mesh-a", str(tmp_path / "nope"), "--mesh-b", str(tmp_path / "nope")]) == 1
        assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
#  solverdummy
# ---------------------------------------------------------------------------


class TestSolverdummy:
    @pytest.mark.parametrize("scheme", ["serial-explicit", "serial-implicit"])
    def test_pair_cli(self, tmp_path, scheme):
        cfg = tmp_path / "precice-config.xml"
        cfg.write_text(dummy_config(scheme, windows=5, exchange_directory=str(tmp_path)))
        res = cli_pair(["solverdummy", cfg, "SolverOne"], ["solverdummy", cfg, "SolverTwo"])
        for code, out, err in res:
            assert code == 0, err
            assert "windows completed: 5" in out
        if scheme == "serial-explicit":
            assert all("advances: 5" in out for _, out, _ in res)

    def test_implicit_converges_within_two_iterations(self, tmp_path):
        from cplkit.harness import run_dummy

        cfg = dummy_config("serial-implicit", windows=4, exchange_directory=str(tmp_path))
        (a, b), _ = run_threads(lambda: run_dummy(cfg, "SolverOne", timeout=10),
                                lambda: run_dummy(cfg, "SolverTwo", timeout=10))
        assert a["windows"] == b["windows"] == 4
        assert a["iterations"] <= 2 * 4

    def test_mismatched_configs(self, tmp_path):
        one = tmp_path / "one.xml"
        two = tmp_path / "two.xml"
        one.write_text(dummy_config("serial-explicit", windows=5, exchange_directory=str(tmp_path)))
        two.write_text(dummy_config("serial-explicit", windows=4, exchange_directory=str(tmp_path)))
        res = cli_pair(["solverdummy", one, "SolverOne"], ["solverdummy", two, "SolverTwo"])
        assert all(code != 0 for code, _, _ in res)
        assert any("configuration" in err for _, _, err in res)

    def test_unknown_participant(self, tmp_path, capsys):
        cfg = tmp_path / "c.xml"
        cfg.write_text(dummy_config(exchange_directory=str(tmp_path)))
        assert main(["solverdummy", str(cfg), "Nobody"]) == 1
        assert "Nobody" in capsys.readouterr().err


# ---------------------------------------------------------------------------
#  heat1d
# ---------------------------------------------------------------------------


class TestHeat1dPieces:
    def test_grid(self):
        p = Heat1dProblem(points=5)
        assert p.cells == 4 and p.h == 0.125
        np.testing.assert_allclose(p.grid(), np.linspace(0, 1, 9))

    def test_initial_values(self):
        p = Heat1dProblem(points=5, left=0.5, right=2.0)
        u = p.initial_values(p.grid())
        assert u[0] == 0.5 and u[-1] == 2.0
        p2 = Heat1dProblem(points=5, initial="constant:3")
        np.testing.assert_array_equal(p2.initial_values([0.25, 0.5]), [3.0, 3.0])

    def test_bad_problem(self):
        with pytest.raises(CouplingError):
            Heat1dProblem(points=2)
        with pytest.raises(CouplingError):
            Heat1dProblem(alpha=0.0)
        with pytest.raises(CouplingError):
            Heat1dProblem(initial="gauss").initial_values([0.3])

    def test_monolithic_step_matches_dense(self):
        p = Heat1dProblem(points=8, dt=1e-2)
        x = p.grid()
        u = p.initial_values(x)
        n = len(u) - 2
        k = p.alpha / p.h**2
        A = np.diag(np.full(n, 1 / p.dt + 2 * k)) - k * np.eye(n, k=1) - k * np.eye(n, k=-1)
        rhs = u[1:-1] / p.dt
        rhs[0] += k * u[0]
        rhs[-1] += k * u[-1]
        np.testing.assert_allclose(monolithic_step(p, u, p.dt)[1:-1], np.linalg.solve(A, rhs), rtol=1e-13)

    def test_sine_mode_decay(self):
        # zero boundaries: sin(pi x) is a discrete eigenvector, each step divides by 1 + dt*lambda
        p = Heat1dProblem(points=11, dt=1e-3, windows=5, right=0.0)
        x, u = solve_monolithic(p)
        lam = 4 * p.alpha / p.h**2 * np.sin(np.pi * p.h / 2) ** 2
        np.testing.assert_allclose(u, np.sin(np.pi * x) / (1 + p.dt * lam) ** 5, atol=1e-14)

    def test_sides_reproduce_monolithic_at_fixed_point(self):
        # feed each side the monolithic interface values: both halves match the full step
        p = Heat1dProblem(points=6, dt=1e-2)
        x = p.grid()
        u0 = p.initial_values(x)
        u1 = monolithic_step(p, u0, p.dt)
        m = p.cells
        d, n = DirichletSide(p), NeumannSide(p)
        flux = d.step(p.dt, u1[m])
        temp = n.step(p.dt, flux)
        np.testing.assert_allclose(d.u, u1[: m + 1], atol=1e-13)
        np.testing.assert_allclose(n.u, u1[m:], atol=1e-13)
        assert temp == pytest.approx(u1[m], abs=1e-13)


def run_heat_pair(tmp_path, cfg, problem_kw=None, first="dirichlet", substeps=1):
    kw = problem_kw or {}
    order = ["dirichlet", "neumann"] if first == "dirichlet" else ["neumann", "dirichlet"]
    fns = [lambda s=s: run_participant(cfg, s, Heat1dProblem(**kw), output_dir=tmp_path,
                                       substeps=substeps, timeout=20) for s in order]
    res, _ = run_threads(*fns)
    return dict(zip(order, res))


class TestHeat1dCoupled:
    @pytest.mark.parametrize("scheme,acc", [
        ("serial-implicit", "iqn-ils"),
        ("serial-implicit", "aitken"),
        ("serial-implicit", "iqn-imvj"),
        ("parallel-implicit", "iqn-ils"),
    ])
    def test_matches_monolithic(self, tmp_path, scheme, acc):
        cfg = heat1d_config(scheme, acc, tol=1e-10, windows=10, exchange_directory=str(tmp_path))
        r = run_heat_pair(tmp_path, cfg, {"points": 20})
        x, u = solve_monolithic(Heat1dProblem(points=20, windows=10))
        u_part = np.concatenate([r["dirichlet"].u, r["neumann"].u[1:]])
        assert np.abs(u_part - u).max() < 1e-6
        assert r["dirichlet"].windows == r["neumann"].windows == 10
        assert r["dirichlet"].max_iteration_windows == 0

    def test_steady_state_single_iteration(self, tmp_path):
        cfg = heat1d_config("serial-implicit", "iqn-ils", windows=3, exchange_directory=str(tmp_path))
        kw = {"points": 10, "initial": "constant:0", "left": 0.0, "right": 0.0}
        r = run_heat_pair(tmp_path, cfg, kw)
        assert r["dirichlet"].iterations == 3
        np.testing.assert_array_equal(r["neumann"].u, 0.0)

    def test_watchpoint_file(self, tmp_path):
        cfg = heat1d_config("serial-implicit", "iqn-ils", windows=4, exchange_directory=str(tmp_path))
        run_heat_pair(tmp_path, cfg, {"points": 10})
        rows = (tmp_path / "interface.csv").read_text().splitlines()
        assert len(rows) == 5
        assert rows[1].startswith("0.001,")

    def test_max_iterations_nonzero_exit(self, tmp_path):
        cfg = tmp_path / "c.xml"
        cfg.write_text(heat1d_config("serial-implicit", "constant", tol=1e-14, windows=2, relaxation=0.1,
                                     max_iterations=2, exchange_directory=str(tmp_path), watchpoint=False))
        res = cli_pair(["heat1d", cfg, "dirichlet", "--points", "10"], ["heat1d", cfg, "neumann", "--points", "10"])
        assert all(code == 1 for code, _, _ in res)
        assert "max-iterations reached" in res[0][2]

    def test_launch_order_bitwise(self, tmp_path):
        outs = []
        for first in ("dirichlet", "neumann"):
            d = tmp_path / first
            d.mkdir()
            cfg = d / "c.xml"
            cfg.write_text(heat1d_config("serial-implicit", "iqn-ils", windows=5, exchange_directory=str(d),
                                         watchpoint=False))
            args = {s: ["heat1d", cfg, s, "--points", "12", "--output", d / f"{s}.csv"]
                    for s in ("dirichlet", "neumann")}
            other = "neumann" if first == "dirichlet" else "dirichlet"
            res = cli_pair(args[first], args[other])
            assert all(code == 0 for code, _, _ in res), res
            outs.append(tuple((d / f"{s}.csv").read_bytes() for s in ("dirichlet", "neumann")))
        assert outs[0] == outs[1]

    def test_monolithic_cli(self, tmp_path):
        out = tmp_path / "mono.csv"
        assert main(["heat1d-monolithic", "--points", "6", "--windows", "3", "--output", str(out)]) == 0
        x, u = read_solution(out)
        _, ref = solve_monolithic(Heat1dProblem(points=6, windows=3))
        np.testing.assert_array_equal(u, ref)
        assert len(x) == 11


# ---------------------------------------------------------------------------
#  config-viz
# ---------------------------------------------------------------------------


class TestConfigViz:
    def test_golden(self, tmp_path, capsys):
        from pathlib import Path

        cfg = tmp_path / "fsi.xml"
        cfg.write_text(FSI_EXAMPLE)
        assert main(["config-viz", str(cfg)]) == 0
        golden = (Path(__file__).parent / "golden" / "fsi.dot").read_text()
        assert capsys.readouterr().out == golden

    def test_invalid(self, tmp_path, capsys):
        cfg = tmp_path / "bad.xml"
        cfg.write_text(FSI_EXAMPLE.replace('<participants first="Fluid" second="Solid"/>', ""))
        assert main(["config-viz", str(cfg)]) == 1
        cap = capsys.readouterr()
        assert cap.out == "" and "error" in cap.err

    def test_validate_only(self, tmp_path, capsys):
        cfg = tmp_path / "fsi.xml"
        cfg.write_text(FSI_EXAMPLE)
        assert main(["config-viz", str(cfg), "--validate-only"]) == 0
        out = capsys.readouterr().out
        assert "digraph" not in out and "0 error(s)" in out

    def test_malformed(self, tmp_path, capsys):
        cfg = tmp_path / "broken.xml"
        cfg.write_text("<solver-interface")
        assert main(["config-viz", str(cfg)]) == 1
        assert "malformed XML" in capsys.readouterr().err
