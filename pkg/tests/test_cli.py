import json

import numpy as np
import pytest

from magmap import Dataset, Domain
from magmap.cli import main
from magmap.fileio import load_model, read_grid_csv, write_samples
from magmap.simulator import (
    REFERENCE_THETA,
    TRACKING_THETA,
    FieldEvent,
    apply_field_event,
    lawnmower,
    sample_field,
    simulate_trajectory,
)
from magmap.types import NumericalError

DOMAIN_TOML = "[domain]\nhalf_lengths = [0.5, 0.5, 0.5]\ncenter = [0.0, 0.0, 0.0]\n"
THETA_ARG = "sigma2_lin=0.3,sigma2_se=1.0,ell_se=0.1,sigma2_noise=0.04"


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "c.toml").write_text(DOMAIN_TOML)
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestFit:
    def test_recovers_generating_theta(self, work, capsys):
        assert run(capsys, "simulate", "-o", "s.csv", "--n", 3000, "--m-sim", 512, "--seed", 3)[0] == 0
        code, out, _ = run(capsys, "fit", "s.csv", "-o", "m.npz", "-c", "c.toml", "-m", 512, "--optimize")
        assert code == 0
        rep = json.loads(out)
        th = rep["theta"]
        assert th["ell_se"] == pytest.approx(REFERENCE_THETA.ell_se, rel=0.2)
        assert th["sigma2_se"] == pytest.approx(REFERENCE_THETA.sigma2_se, rel=0.3)
        assert th["sigma2_noise"] == pytest.approx(REFERENCE_THETA.sigma2_noise, rel=0.2)
        assert th["field_magnitude"] == pytest.approx(th["sigma2_se"] / th["ell_se"] ** 2)
        assert rep["n"] == 3000 and rep["m"] == 512 and rep["optimizer"]["converged"]
        assert len(rep["linear_coefficients"]) == 3 and rep["wall_time_s"] > 0
        assert load_model("m.npz").n == 3000

    def test_theta_skips_optimization(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 200, "--m-sim", 128)
        code, out, _ = run(capsys, "fit", "s.csv", "-o", "m.npz", "-c", "c.toml", "-m", 64, "--theta", THETA_ARG)
        rep = json.loads(out)
        assert code == 0 and "optimizer" not in rep
        assert rep["theta"]["sigma2_noise"] == 0.04

    def test_auto_domain_recorded(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 100, "--m-sim", 64)
        run(capsys, "fit", "s.csv", "-o", "m.npz", "-m", 16, "--theta", THETA_ARG, "--report", "r.json")
        rep = json.loads((work / "r.json").read_text())
        dom = load_model("m.npz").domain
        np.testing.assert_allclose(rep["domain"]["half_lengths"], dom.L)
        assert np.all(dom.L > 0.4)

    def test_empty_csv(self, work, capsys):
        (work / "e.csv").write_text("")
        code, _, err = run(capsys, "fit", "e.csv", "-o", "m.npz", "--theta", THETA_ARG)
        assert code == 2 and "no samples" in err

    def test_needs_theta_or_optimize(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 20, "--m-sim", 32)
        code, _, err = run(capsys, "fit", "s.csv", "-o", "m.npz")
        assert code == 2 and "hyperparameters" in err

    def test_outside_domain(self, work, capsys):
        write_samples(work / "s.csv", Dataset([[0.9, 0, 0]], [[1, 2, 3]]))
        code, _, err = run(capsys, "fit", "s.csv", "-o", "m.npz", "-c", "c.toml", "--theta", THETA_ARG)
        assert code == 2 and "row 0" in err

    def test_numerical_failure(self, work, capsys, monkeypatch):
        import magmap.batch

        def boom(*a, **k):
            raise NumericalError("factorization failed")

        monkeypatch.setattr(magmap.batch, "fit", boom)
        run(capsys, "simulate", "-o", "s.csv", "--n", 20, "--m-sim", 32)
        code, _, err = run(capsys, "fit", "s.csv", "-o", "m.npz", "-c", "c.toml", "--theta", THETA_ARG)
        assert code == 5 and "factorization" in err


class TestPredict:
    @pytest.fixture
    def model(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 400, "--m-sim", 256, "--seed", 1)
        run(capsys, "fit", "s.csv", "-o", "m.npz", "-c", "c.toml", "-m", 256,
            "--theta", "sigma2_lin=0.3,sigma2_se=1.0,ell_se=0.1,sigma2_noise=1e-4")
        return work

    def test_training_point(self, model, capsys):
        with open("s.csv") as fh:
            fh.readline()
            x, y, z, bx, by, bz = map(float, fh.readline().split(","))
        code, out, _ = run(capsys, "predict", "m.npz", f"--grid={x}:{x}:2,{y}:{y}:2,{z}:{z}:2", "--what", "field")
        assert code == 0
        row = [float(v) for v in out.splitlines()[1].split(",")]
        np.testing.assert_allclose(row[3:6], [bx, by, bz], atol=3 * 0.2)

    def test_magnitude_is_norm(self, model, capsys):
        code = run(capsys, "predict", "m.npz", "--grid=-0.4:0.4:4,-0.4:0.4:4", "--slice-z", "0.1",
                   "--what", "field", "--what", "magnitude", "-o", "g.csv")[0]
        cols, vals = read_grid_csv("g.csv")
        assert code == 0 and cols[-1] == "magnitude" and vals.shape == (16, 7)
        np.testing.assert_allclose(vals[:, 6], np.linalg.norm(vals[:, 3:6], axis=1), rtol=1e-12)
        np.testing.assert_array_equal(vals[:, 2], 0.1)

    def test_variance_and_potential_columns(self, model, capsys):
        code, out, _ = run(capsys, "predict", "m.npz", "--grid=-0.2:0.2:2,-0.2:0.2:2,0:0:2",
                           "--what", "variance", "--what", "potential", "--format", "json")
        d = json.loads(out)
        assert code == 0 and d["columns"] == ["x", "y", "z", "var_x", "var_y", "var_z", "potential", "pot_var"]
        assert np.all(np.asarray(d["rows"])[:, [3, 4, 5, 7]] >= 0)

    def test_bad_model_file(self, work, capsys):
        (work / "bad.npz").write_bytes(b"garbage")
        code, _, err = run(capsys, "predict", "bad.npz", "--grid=0:1:2,0:1:2,0:1:2")
        assert code == 3 and "bad.npz" in err

    def test_grid_outside_domain(self, model, capsys):
        code, _, err = run(capsys, "predict", "m.npz", "--grid=2:3:2,2:3:2,2:3:2")
        assert code == 2 and "intersect" in err


class TestStream:
    def test_static_stream_equals_batch(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 500, "--m-sim", 256, "--seed", 2)
        run(capsys, "fit", "s.csv", "-o", "b.npz", "-c", "c.toml", "-m", 128, "--theta", THETA_ARG)
        code, out, _ = run(capsys, "stream", "s.csv", "-o", "q.npz", "-c", "c.toml", "-m", 128, "--theta", THETA_ARG)
        assert code == 0 and json.loads(out)["samples"] == 500
        grid = "--grid=-0.4:0.4:5,-0.4:0.4:5,-0.4:0.4:5"
        run(capsys, "predict", "b.npz", grid, "-o", "b.csv")
        run(capsys, "predict", "q.npz", grid, "-o", "q.csv")
        _, a = read_grid_csv("b.csv")
        _, b = read_grid_csv("q.csv")
        np.testing.assert_allclose(b[:, 3:6], a[:, 3:6], rtol=1e-6, atol=1e-6 * np.abs(a[:, 3:6]).max())
        np.testing.assert_allclose(b[:, 6:], a[:, 6:], rtol=1e-5)

    def test_final_snapshot_only(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 50, "--m-sim", 64)
        code, out, _ = run(capsys, "stream", "s.csv", "-o", "q.npz", "-c", "c.toml", "-m", 32, "--theta", THETA_ARG,
                           "--grid=-0.3:0.3:3,-0.3:0.3:3", "--slice-z", 0, "--snapshot-every", 0)
        snaps = sorted((work / "q_snapshots").iterdir())
        assert code == 0 and [p.name for p in snaps] == ["snapshot_00000_final.csv"]
        cols, vals = read_grid_csv(snaps[0])
        assert "var_x" in cols and vals.shape[0] == 9

    def test_periodic_snapshots(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 50, "--m-sim", 64)
        run(capsys, "stream", "s.csv", "-o", "q.npz", "-c", "c.toml", "-m", 32, "--theta", THETA_ARG,
            "--grid=-0.3:0.3:3,-0.3:0.3:3", "--slice-z", 0, "--snapshot-every", 20, "--snapshot-dir", "snaps")
        names = [p.name for p in sorted((work / "snaps").iterdir())]
        assert names == ["snapshot_00000_n20.csv", "snapshot_00001_n40.csv", "snapshot_00002_final.csv"]

    def test_timestamp_regression(self, work, capsys):
        (work / "t.csv").write_text("t,x,y,z,bx,by,bz\n0,0,0,0,1,1,1\n1,0,0,0,1,1,1\n0.5,0,0,0,1,1,1\n")
        code, _, err = run(capsys, "stream", "t.csv", "-o", "q.npz", "-c", "c.toml", "-m", 8,
                           "--theta", THETA_ARG, "--mode", "spatiotemporal")
        assert code == 4 and "line 4" in err

    def test_warmup_learns_theta_and_domain(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 600, "--m-sim", 256, "--rate", 10)
        code, out, _ = run(capsys, "stream", "s.csv", "-o", "q.npz", "-m", 64, "--warmup", 300,
                           "--mode", "spatiotemporal", "--ell-time", 60)
        rep = json.loads(out)
        assert code == 0 and rep["samples"] == 600 and rep["theta"]["ell_time"] == 60
        assert load_model("q.npz").t_last == pytest.approx(59.9)

    def test_continue_from_model(self, work, capsys):
        run(capsys, "simulate", "-o", "s.csv", "--n", 100, "--m-sim", 64)
        run(capsys, "fit", "s.csv", "-o", "b.npz", "-c", "c.toml", "-m", 32, "--theta", THETA_ARG)
        code, out, _ = run(capsys, "stream", "s.csv", "-o", "q.npz", "--model", "b.npz")
        assert code == 0 and load_model("q.npz").samples_seen == 200

    def test_spatiotemporal_step_change(self, work, capsys):
        domain = Domain((1.5, 1.5, 0.5))
        base = sample_field(domain, TRACKING_THETA, 128, seed=0)
        probe = (-0.6, -0.6, 0.0)
        sweep = lawnmower(1.2, 0.6)
        path = np.vstack([sweep, [(1.0, -0.6, 0.0), (-1.2, -0.6, 0.0)]])
        times = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])
        t_on = times[len(sweep) - 1] + 0.5
        fld = apply_field_event(base, FieldEvent(t_on, probe, (2.0, 0.0, 0.0), 0.2))
        data = simulate_trajectory(fld, path, 5.0, 0.1, times=times, seed=1, domain=domain)
        write_samples(work / "st.csv", data)
        (work / "d.toml").write_text("[domain]\nhalf_lengths = [1.5, 1.5, 0.5]\n")
        th = TRACKING_THETA
        theta_arg = f"sigma2_lin={th.sigma2_lin},sigma2_se={th.sigma2_se},ell_se={th.ell_se},sigma2_noise=0.01"
        code = run(capsys, "stream", "st.csv", "-o", "q.npz", "-c", "d.toml", "-m", 128, "--theta", theta_arg,
                   "--mode", "spatiotemporal", "--snapshot-every", 5,
                   "--grid=-0.6:0.6:2,-0.6:0.6:2", "--slice-z", 0)[0]
        assert code == 0
        snaps = sorted((work / "q_snapshots").iterdir())
        series = np.array([read_grid_csv(p)[1][0, 3] for p in snaps])
        snap_t = np.minimum(np.arange(1, len(snaps) + 1) * 5, len(data)) - 1
        t = data.t[snap_t]
        near = np.linalg.norm(data.x[snap_t] - probe, axis=1) < 2 * th.ell_se
        onset = int(np.sum(t < t_on))
        first_pass = int(np.flatnonzero((t >= t_on) & near)[0])
        before = series[onset - 1]
        # flat until the platform reaches the change, then a step of about its size
        np.testing.assert_allclose(series[onset:first_pass], before, atol=0.1)
        assert series[-1] - before == pytest.approx(2.0, abs=0.6)


class TestBenchmark:
    def test_manifest_rerun_bit_exact(self, work, capsys):
        (work / "b.toml").write_text(
            "[study]\nn_train = [100, 200]\nn_mc = 2\nm_fit = 32\nm_sim = 128\ngrid_k = 4\n"
            "[sweep]\nm_values = [16, 64]\nn = 100\nm_sim = 128\ngrid_k = 3\n"
        )
        code, out, _ = run(capsys, "benchmark", "-c", "b.toml", "--out-dir", "out", "--seed", 7)
        written = json.loads(out)
        assert code == 0 and set(written) == {"rmse_study", "basis_sweep"}
        for key in written:
            manifest = written[key]["manifest"]
            assert json.loads((work / manifest).read_text())["config"].get("seed0", 7) == 7
            code, out, _ = run(capsys, "benchmark", "--manifest", manifest, "--out-dir", "out")
            rerun = json.loads(out)["table"]
            assert (work / rerun).read_text() == (work / written[key]["table"]).read_text()

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit):
            main(["frobnicate"])
