import json
import subprocess
import sys

import numpy as np
import pytest

from slabinv import boundary, cli, dnmap, fields, forward, geometry
from slabinv.harness import SCHEMA_LINE


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = tmp / "geom.cfg"
    cfg.write_text(
        "L = 1.0\nR = 1.0\nR_prime = 1.5\nR_lat = 2.0\n"
        "eps_cutoff = 0.1\ntarget_h = 0.25\n"
    )
    geom, target_h = geometry.parse_geometry_config(str(cfg))
    grid = geometry.build_domain(geom, target_h)
    q = fields.radial_bump_potential(grid, geom, 1e-3)
    qpath = tmp / "q1.field"
    fields.write_field(str(qpath), q.field)
    patch = geometry.dirichlet_patch(geom)
    sq = boundary.bounding_square(grid, patch)
    f = boundary.mode_field(patch, sq, 1, 1)
    fpath = tmp / "data.bfield"
    boundary.write_boundary_field(str(fpath), f, plate_z=geom.L)
    return dict(tmp=tmp, cfg=cfg, geom=geom, grid=grid, qpath=qpath, fpath=fpath)


def test_forward_roundtrip(workdir):
    out = workdir["tmp"] / "solution.field"
    rc = cli.main([
        "forward", "--config", str(workdir["cfg"]), "--k", "0.0",
        "--q", str(workdir["qpath"]), "--dirichlet", str(workdir["fpath"]),
        "--mode", "truncated", "--out", str(out),
    ])
    assert rc == 0
    u = fields.read_field(str(out))
    assert u.grid == workdir["grid"]
    assert np.max(np.abs(u.values)) > 0


def test_forward_inadmissible_exit_code(workdir):
    lam1 = forward.reference_eigenvalue(workdir["grid"], workdir["geom"],
                                        forward.TRUNCATED)
    out = workdir["tmp"] / "nosol.field"
    rc = cli.main([
        "forward", "--config", str(workdir["cfg"]), "--k", str(np.sqrt(lam1)),
        "--q", "zero", "--dirichlet", str(workdir["fpath"]), "--out", str(out),
    ])
    assert rc == cli.EXIT_INADMISSIBLE


def test_dnmap_and_dnnorm(workdir, capsys):
    m1 = workdir["tmp"] / "dn1.mat"
    m2 = workdir["tmp"] / "dn2.mat"
    for qspec, path in ((str(workdir["qpath"]), m1), ("zero", m2)):
        rc = cli.main([
            "dnmap", "--config", str(workdir["cfg"]), "--k", "0.0",
            "--q", qspec, "--basis-n", "3", "--target", "gamma2N",
            "--out", str(path),
        ])
        assert rc == 0
    mat = dnmap.read_matrix(str(m1))
    assert mat.shape[1] == 9
    rc = cli.main([
        "dnnorm", "--a", str(m1), "--b", str(m2), "--config", str(workdir["cfg"]),
        "--k", "0.0", "--basis-n", "3", "--test-n", "3", "--target", "gamma2N",
    ])
    assert rc == 0
    value = float(capsys.readouterr().out.strip())
    assert 0 < value < 1e-2  # small difference for a Born-scale potential


def test_cgo_check_record(workdir, capsys):
    rc = cli.main([
        "cgo-check", "--config", str(workdir["cfg"]), "--xi", "2.0,0.0,0.0",
        "--variant", "thm2", "--param", "4.0", "--q1", str(workdir["qpath"]),
        "--q2", "zero",
    ])
    assert rc == 0
    rec = json.loads(capsys.readouterr().out.strip())
    assert rec["isotropy_residual"] < 1e-12
    assert rec["norm_identity_residual"] < 1e-12
    assert rec["max_u1_gamma2"] == 0.0
    assert rec["psi1_l2"] > 0


def test_recover_csv_and_summary(workdir, capsys):
    out = workdir["tmp"] / "recover.csv"
    rc = cli.main([
        "recover", "--config", str(workdir["cfg"]), "--q1", str(workdir["qpath"]),
        "--q2", "zero", "--k", "0.0", "--variant", "thm2", "--r", "2.5",
        "--param", "6.0", "--lambda", "0.5", "--spacing", "1.0",
        "--out", str(out),
    ])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert summary["n_failed"] == 0
    assert summary["sup_bound"] > 0
    lines = out.read_text().splitlines()
    assert lines[0] == SCHEMA_LINE
    assert lines[1] == "xi1,xi2,xi3,re_est,im_est,re_true,im_true,abs_err"
    rows = [line.split(",") for line in lines[2:]]
    assert rows
    for row in rows:
        est = complex(float(row[3]), float(row[4]))
        true = complex(float(row[5]), float(row[6]))
        assert abs(est - true) == pytest.approx(float(row[7]), rel=1e-9)


def test_recover_with_continuation_lines(workdir, capsys):
    # spacing 0.5 produces low lateral frequencies (filled by line
    # continuation) and axis points (filled by neighbour averaging)
    out = workdir["tmp"] / "recover_low.csv"
    rc = cli.main([
        "recover", "--config", str(workdir["cfg"]), "--q1", str(workdir["qpath"]),
        "--q2", "zero", "--variant", "thm2", "--r", "2.5", "--param", "6.0",
        "--lambda", "0.5", "--spacing", "0.5", "--out", str(out),
    ])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert summary["n_axis_filled"] > 0
    lines = out.read_text().splitlines()
    xi1e = [np.hypot(float(r.split(",")[0]), float(r.split(",")[1]))
            for r in lines[2:]]
    assert any(0 < v < 1 for v in xi1e)  # continuation region present


def test_recover_auto_parameters(workdir, capsys):
    out = workdir["tmp"] / "recover_auto.csv"
    rc = cli.main([
        "recover", "--config", str(workdir["cfg"]), "--q1", str(workdir["qpath"]),
        "--q2", "zero", "--variant", "thm2", "--spacing", "1.0",
        "--basis-n", "3", "--out", str(out),
    ])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert summary["star_norm"] > 0
    # log-log schedules at desk-scale data errors sit below the frequency
    # window, so the clamp warning is expected
    assert summary["params"]["r"] >= 2.0
    assert 0 < summary["params"]["lambda"] < 1


def test_forward_periodic_mode(workdir):
    out = workdir["tmp"] / "periodic.field"
    rc = cli.main([
        "forward", "--config", str(workdir["cfg"]), "--k", "0.0",
        "--q", "zero", "--dirichlet", str(workdir["fpath"]),
        "--mode", "periodic", "--out", str(out),
    ])
    assert rc == 0
    u = fields.read_field(str(out))
    # periodic seam consistency
    assert np.array_equal(u.values[0, :, :], u.values[-1, :, :])


def test_sweep_cli(workdir, capsys):
    out = workdir["tmp"] / "sweep.csv"
    rc = cli.main([
        "sweep", "--config", str(workdir["cfg"]), "--q1", str(workdir["qpath"]),
        "--q2", "zero", "--variant", "thm2", "--noise", "1e-3,1e-5",
        "--trials", "1", "--seed", "7", "--basis-n", "3", "--out", str(out),
    ])
    assert rc == 0
    info = json.loads(capsys.readouterr().out.strip())
    assert info["n_records"] == 2
    assert out.read_text().startswith(SCHEMA_LINE)


def test_carleman_cli(workdir, capsys):
    out = workdir["tmp"] / "carleman.csv"
    rc = cli.main([
        "carleman", "--config", str(workdir["cfg"]), "--zeta", "0,0,1",
        "--taus", "1,2,4", "--trials", "5", "--seed", "0", "--out", str(out),
    ])
    assert rc == 0
    info = json.loads(capsys.readouterr().out.strip())
    assert np.isfinite(info["fitted_c"])
    assert out.read_text().startswith(SCHEMA_LINE)


def test_rl_cli_subprocess(workdir):
    # exercise the installed console path end to end
    out = workdir["tmp"] / "rl.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "slabinv.cli", "rl", "--config",
         str(workdir["cfg"]), "--q", str(workdir["qpath"]), "--rays", "2",
         "--out", str(out)],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    info = json.loads(proc.stdout.strip().splitlines()[-1])
    assert len(info["p_values"]) == 2
    assert out.read_text().startswith(SCHEMA_LINE)
