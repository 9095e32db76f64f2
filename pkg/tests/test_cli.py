import json

import numpy as np
import pytest

from splateval.cli import main
from splateval.policy_server import serve_policy
from splateval.scene import load_scene
from splateval.synthetic import scripted_policy_for_scene, write_pickplace_fixture, write_recon_fixture


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["metrics", "--nonsense"])
    assert exc.value.code == 2


def test_metrics_perfect_csv(tmp_path, capsys):
    f = tmp_path / "perfect.csv"
    f.write_text(
        "policy,environment,source,score,episodes\n"
        "p1,e1,real,0.2,10\np1,e1,sim,0.2,10\n"
        "p2,e1,real,0.7,10\np2,e1,sim,0.7,10\n"
        "p3,e1,real,0.5,10\np3,e1,sim,0.5,10\n"
    )
    assert main(["metrics", "--scores", str(f), "--bootstrap", "200"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["aggregate"]["pearson_r"] == pytest.approx(1.0)
    assert out["aggregate"]["mmrv"] == 0.0


def test_metrics_bad_file_exits_1(tmp_path, capsys):
    f = tmp_path / "bad.csv"
    f.write_text("policy,environment,source,score,episodes\np1,e1,real,3.0,10\n")
    assert main(["metrics", "--scores", str(f)]) == 1
    assert "error" in capsys.readouterr().err


def test_replay_analyze_cli(tmp_path):
    t = np.arange(40) / 15.0
    cmd = 0.3 * np.sin(np.outer(t, [1.0, 0.7]))
    ach = cmd + 0.001
    rec = tmp_path / "traj.csv"
    header = "cmd0,cmd1,ach0,ach1"
    np.savetxt(rec, np.hstack([cmd, ach]), delimiter=",", header=header, comments="")
    assert main(["replay-analyze", "--recording", str(rec), "--mode", "velocity", "--out", str(tmp_path / "err.csv")]) == 0
    lines = (tmp_path / "err.csv").read_text().splitlines()
    assert len(lines) == 41


def test_dataset_cli(tmp_path, capsys):
    pre = tmp_path / "pre"
    sim = tmp_path / "sim"
    assert main(["dataset", "write", "--root", str(pre), "--source", "pretrain", "--synthetic", "3", "--steps", "10"]) == 0
    assert main(["dataset", "write", "--root", str(sim), "--source", "sim", "--synthetic", "2", "--steps", "10"]) == 0
    assert main(["dataset", "inspect", "--root", str(pre)]) == 0
    out = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert out["episodes"] == 3
    assert main([
        "dataset", "sample", "--pre", str(pre), "--sim", str(sim),
        "--lambda", "0.25", "--n", "4000", "--seed", "7",
    ]) == 0
    out = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert abs(out["sim_fraction"] - 0.25) < 0.03


@pytest.mark.slow
def test_full_pipeline_smoke(tmp_path, capsys):
    """reconstruct -> extract-mesh -> align -> compose -> evaluate -> metrics."""
    recon_dir = tmp_path / "recon"
    write_recon_fixture(recon_dir)

    # reconstruct from the fixture's ground truth as init (fast, small iters)
    scene_out = tmp_path / "recon_scene.pspl"
    rc = main([
        "reconstruct", "--images", str(recon_dir / "images"), "--poses", str(recon_dir / "poses.txt"),
        "--out", str(scene_out), "--iters", "40", "--init-scene", str(recon_dir / "ground_truth.pspl"),
    ])
    assert rc == 0 and scene_out.exists()

    mesh_out = tmp_path / "recon_mesh.obj"
    rc = main([
        "extract-mesh", "--scene", str(scene_out), "--poses", str(recon_dir / "poses.txt"),
        "--voxel", "0.02", "--tau", "0.05", "--out", str(mesh_out),
    ])
    assert rc == 0 and mesh_out.exists()

    # align: board frame = known similarity of the reconstruction frame
    from splateval.align import Sim3
    from splateval.splat_io import load_cameras

    cams = load_cameras(recon_dir / "poses.txt")
    x = Sim3(1.25, np.array([0.9238795325112867, 0.0, 0.0, 0.3826834323650898]), np.array([0.1, -0.2, 0.05]))
    board = recon_dir / "board.txt"
    with open(board, "w") as fh:
        for cam_id, cam in sorted(cams.items())[:5]:
            p = x.apply(cam.center())
            fh.write(f"{cam_id} " + " ".join(repr(float(v)) for v in p) + "\n")
    rc = main([
        "align", "--poses", str(recon_dir / "poses.txt"), "--board-coords", str(board),
        "--scene", str(scene_out), "--out", str(tmp_path / "scene_f0.pspl"),
    ])
    assert rc == 0
    align_out = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert align_out["scale"] == pytest.approx(1.25, rel=1e-6)
    assert align_out["rms_residual"] < 1e-9

    # articulate the bundled gantry from raw splats
    from splateval.synthetic import GANTRY_Q_SCAN, GANTRY_XML, gantry_model, gantry_robot_splats
    from splateval.robot import JointConfig
    from splateval.splat_io import save_splats_file

    robot_xml = tmp_path / "robot.xml"
    robot_xml.write_text(GANTRY_XML)
    model = gantry_model()
    save_splats_file(gantry_robot_splats(model, JointConfig(GANTRY_Q_SCAN)), tmp_path / "robot.pspl")
    qscan = tmp_path / "qscan.txt"
    qscan.write_text(" ".join(str(v) for v in GANTRY_Q_SCAN))
    rc = main([
        "articulate", "--robot", str(robot_xml), "--splats", str(tmp_path / "robot.pspl"),
        "--qscan", str(qscan), "--out", str(tmp_path / "robot_bundle"),
    ])
    assert rc == 0
    capsys.readouterr()

    # compose + evaluate + metrics on the pickplace fixture
    psd = write_pickplace_fixture(tmp_path / "pickplace")
    rc = main(["compose", "--spec", str(psd), "--validate"])
    assert rc == 0
    compose_out = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert compose_out["valid"]

    scene = load_scene(psd)
    runs = tmp_path / "runs"
    with serve_policy(scripted_policy_for_scene(scene)) as server:
        rc = main([
            "evaluate", "--scene", str(psd), "--policy", server.endpoint, "--policy-name", "oracle",
            "--episodes", "2", "--max-steps", "140", "--seed", "100", "--out", str(runs),
        ])
    assert rc == 0
    summary = json.loads((runs / "summary.json").read_text())
    assert summary["mean_score"] == 1.0
    capsys.readouterr()

    # a matching "real" row lets the metrics command produce a report
    scores = tmp_path / "scores.csv"
    sim_rows = (runs / "scores.csv").read_text().splitlines()
    scores.write_text(
        sim_rows[0] + "\n" + sim_rows[1] + "\n"
        + "oracle2,cube-to-tray,sim,0.5,2\n"
        + "oracle,cube-to-tray,real,0.95,2\noracle2,cube-to-tray,real,0.45,2\n"
    )
    report_dir = tmp_path / "report"
    rc = main(["metrics", "--scores", str(scores), "--out", str(report_dir), "--bootstrap", "100"])
    assert rc == 0
    assert (report_dir / "report.json").exists()
    assert (report_dir / "points.csv").exists()

    # dataset conversion from the run directory
    rc = main(["dataset", "write", "--root", str(tmp_path / "ds"), "--from-run", str(runs)])
    assert rc == 0
