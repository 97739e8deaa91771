import json

import numpy as np
import pytest

from pcmamba.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED, main
from pcmamba.io import generate_shape, write_xyz
from pcmamba.pointset import PointCloud


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out


def parse_report(text):
    out = {}
    for line in text.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key] = value
    return out


SMALL_CONFIG = {
    "stages": [
        {"channels": 12, "num_layers": 1, "serializations": ["xyz"], "points": 48, "k_neighbors": 6},
        {"channels": 12, "num_layers": 1, "serializations": ["xzy"], "points": 24, "k_neighbors": 6},
        {"channels": 24, "num_layers": 1, "serializations": ["z"], "points": 12, "k_neighbors": 6},
        {"channels": 24, "num_layers": 1, "serializations": ["hilbert"], "points": 6, "k_neighbors": 4},
    ],
    "n_p": 2,
    "grid_n": 16,
    "num_classes": 3,
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


# ------------------------------------------------------------------ serialize


def test_serialize_report_contract(capsys):
    code, out = run(
        capsys, "serialize", "--gen", "sphere", "--n", "512", "--seed", "0",
        "--order", "xyz", "--grid", "16",
    )
    report = parse_report(out)
    assert code == EXIT_OK
    assert report["n"] == "512"
    assert "mean_gap" in report and "adjacency_rate" in report


def test_serialize_unknown_order_is_usage_error(capsys):
    code, _ = run(capsys, "serialize", "--gen", "sphere", "--order", "spiral")
    assert code == EXIT_USAGE


def test_serialize_paper_mode_flags_collisions(capsys, tmp_path):
    # full grid-4 cell centers
    cells = np.array(
        [[x, y, z] for x in range(4) for y in range(4) for z in range(4)], dtype=float
    )
    cloud = PointCloud((cells + 0.5) / 4.0)
    path = tmp_path / "grid.xyz"
    write_xyz(cloud, path)
    code, out = run(
        capsys, "serialize", "--input", str(path), "--order", "xyz",
        "--grid", "4", "--mode", "paper",
    )
    report = parse_report(out)
    assert code == EXIT_OK
    assert int(report["collision_count"]) > 0


def test_serialize_compare_all_table(capsys, tmp_path):
    out_csv = tmp_path / "orders.csv"
    code, out = run(
        capsys, "serialize", "--gen", "sphere", "--n", "256", "--seed", "1",
        "--grid", "8", "--compare-all", "--out", str(out_csv),
    )
    assert code == EXIT_OK
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "order,mean_gap,adjacency_rate,collision_count"
    assert len(lines) == 10  # header + nine orders
    assert out.count("order=") == 9


def test_serialize_compare_all_cts_comparable_to_hilbert(capsys, tmp_path):
    # uniform cloud at ~one point per cell: every snake variant's mean gap
    # stays within 1.5x of the Hilbert curve's (measured ~1.1-1.2)
    rng = np.random.default_rng(2)
    path = tmp_path / "uniform.xyz"
    write_xyz(PointCloud(rng.uniform(size=(512, 3))), path)
    out_csv = tmp_path / "orders.csv"
    code, _ = run(
        capsys, "serialize", "--input", str(path), "--grid", "8",
        "--compare-all", "--out", str(out_csv),
    )
    assert code == EXIT_OK
    rows = [line.split(",") for line in out_csv.read_text().splitlines()[1:]]
    gaps = {r[0]: float(r[1]) for r in rows}
    for name in ("xyz", "xzy", "yxz", "yzx", "zxy", "zyx"):
        assert gaps[name] <= 1.5 * gaps["hilbert"]


def test_serialize_missing_input_file(capsys):
    code, _ = run(capsys, "serialize", "--input", "/nonexistent/file.xyz")
    assert code == EXIT_IO


# -------------------------------------------------------------------- forward


def test_forward_cls_deterministic_csv(capsys, tmp_path, config_file):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (out1, out2):
        code, _ = run(
            capsys, "forward", "--config", config_file, "--task", "cls",
            "--gen", "sphere", "--n", "64", "--seed", "3", "--out", str(out),
        )
        assert code == EXIT_OK
    assert out1.read_bytes() == out2.read_bytes()


def test_forward_cls_invariant_to_input_shuffle(capsys, tmp_path, config_file):
    cloud = generate_shape("torus", 64, noise_sigma=0.0, seed=5)
    shuffled = PointCloud(cloud.coords[np.random.default_rng(0).permutation(64)])
    outs = []
    for i, cl in enumerate((cloud, shuffled)):
        path = tmp_path / f"c{i}.xyz"
        write_xyz(cl, path)
        out_csv = tmp_path / f"l{i}.csv"
        code, _ = run(
            capsys, "forward", "--config", config_file, "--task", "cls",
            "--input", str(path), "--seed", "3", "--out", str(out_csv),
        )
        assert code == EXIT_OK
        outs.append(out_csv.read_text())
    assert outs[0] == outs[1]


def test_forward_seg_row_count(capsys, tmp_path, config_file):
    out_csv = tmp_path / "seg.csv"
    code, _ = run(
        capsys, "forward", "--config", config_file, "--task", "seg",
        "--gen", "cube", "--n", "72", "--seed", "4", "--out", str(out_csv),
    )
    assert code == EXIT_OK
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "point,label"
    assert len(lines) == 1 + 72


def test_forward_weights_roundtrip(capsys, tmp_path, config_file):
    from pcmamba.cli import config_from_file
    from pcmamba.io import save_weights
    from pcmamba.model import build_model

    weights = tmp_path / "w.pcmw"
    save_weights(build_model(config_from_file(config_file, "classification", 3, seed=3)), weights)
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    for out, extra in ((out1, ["--weights", str(weights)]), (out2, [])):
        code, _ = run(
            capsys, "forward", "--config", config_file, "--task", "cls",
            "--gen", "plane", "--n", "64", "--seed", "3", "--out", str(out), *extra,
        )
        assert code == EXIT_OK
    # seeded init and archive round trip agree (same seed => same parameters)
    assert out1.read_text() == out2.read_text()


def test_forward_input_with_feature_columns(capsys, tmp_path, config_file):
    rng = np.random.default_rng(6)
    cloud = PointCloud(rng.uniform(size=(64, 3)), features=rng.normal(size=(64, 2)))
    path = tmp_path / "feat.xyz"
    write_xyz(cloud, path)
    out_csv = tmp_path / "logits.csv"
    code, _ = run(
        capsys, "forward", "--config", config_file, "--task", "cls",
        "--input", str(path), "--seed", "0", "--out", str(out_csv),
    )
    assert code == EXIT_OK
    assert out_csv.read_text().count("\n") == 2  # header + one logits row


def test_forward_too_few_points(capsys, config_file):
    code, _ = run(
        capsys, "forward", "--config", config_file, "--gen", "sphere", "--n", "4",
    )
    assert code == EXIT_IO


# --------------------------------------------------------------------- verify


def test_verify_gam_suite_passes_and_repeats(capsys):
    code1, out1 = run(capsys, "verify", "--suite", "gam", "--seed", "0")
    code2, out2 = run(capsys, "verify", "--suite", "gam", "--seed", "0")
    assert code1 == code2 == EXIT_OK
    assert out1 == out2
    assert "gam_unit_rms.status=pass" in out1


def test_verify_ssm_suite_report_contract(capsys):
    code, out = run(capsys, "verify", "--suite", "ssm", "--seed", "0")
    report = parse_report(out)
    assert code == EXIT_OK
    assert report["scan_equals_conv.status"] == "pass"
    assert float(report["scan_equals_conv.measured"]) <= 1e-6
    assert "adjoint_matches_finite_differences.measured" in report


def test_verify_all_suites_pass_and_reports_identical(capsys):
    code1, out1 = run(capsys, "verify", "--suite", "all", "--seed", "0")
    code2, out2 = run(capsys, "verify", "--suite", "all", "--seed", "0")
    assert code1 == code2 == EXIT_OK
    assert out1 == out2
    report = parse_report(out1)
    assert report["failed"] == "0"
    assert report["activations_finite_100_clouds.status"] == "pass"
    assert report["classification_permutation_invariant.status"] == "pass"


def test_verify_failure_exit_code(capsys, monkeypatch):
    from pcmamba import cli as cli_mod
    from pcmamba.checks import CheckResult

    monkeypatch.setattr(
        cli_mod, "run_suite", lambda suite, seed=0: [CheckResult("synthetic", False, 1.0, 0.0)]
    )
    code, out = run(capsys, "verify", "--suite", "gam")
    assert code == EXIT_VERIFY_FAILED
    assert "synthetic.status=fail" in out


def test_verify_serialization_suite(capsys):
    code, out = run(capsys, "verify", "--suite", "serialization")
    report = parse_report(out)
    assert code == EXIT_OK
    for grid in (2, 4, 8, 16):
        assert report[f"cts_bijective_grid{grid}.status"] == "pass"
        assert report[f"cts_snake_grid{grid}.status"] == "pass"
    assert report["failed"] == "0"


# ---------------------------------------------------------------------- bench


def test_bench_report_contract(capsys):
    code, out = run(
        capsys, "bench", "--lengths", "128,256,512", "--channels", "16",
        "--repeat", "3", "--baseline", "attention",
    )
    report = parse_report(out)
    assert code == EXIT_OK
    assert "exponent.ssm" in report
    assert "exponent.attention_baseline" in report
    assert float(report["time_ratio.ssm"]) > 0
    assert "n_points,kernel,time_min_s,time_median_s" in out
    assert out.count(",ssm,") == 3 and out.count(",attention_baseline,") == 3


def test_bench_baseline_none(capsys):
    code, out = run(
        capsys, "bench", "--lengths", "128,256", "--channels", "8",
        "--repeat", "2", "--baseline", "none",
    )
    assert code == EXIT_OK
    assert "exponent.ssm" in out
    assert "attention_baseline" not in out


def test_bench_rejects_non_increasing_lengths(capsys):
    code, _ = run(capsys, "bench", "--lengths", "512,256")
    assert code == EXIT_USAGE


# -------------------------------------------------------------------- inspect


def test_inspect_pcm_tiny_params(capsys):
    code, out = run(capsys, "inspect", "--config", "pcm-tiny")
    report = parse_report(out)
    assert code == EXIT_OK
    total = int(report["params.total"])
    assert abs(total - 6.9e6) <= 0.15 * 6.9e6
    assert report["published.params"] == "6900000"
    assert "flops.total_mac" in report


def test_inspect_pcm_params(capsys):
    code, out = run(capsys, "inspect", "--config", "pcm")
    report = parse_report(out)
    assert code == EXIT_OK
    total = int(report["params.total"])
    assert abs(total - 34.2e6) <= 0.15 * 34.2e6


# ---------------------------------------------------------------------- probe


def test_probe_runs_small(capsys):
    code, out = run(
        capsys, "probe", "--classes", "2", "--per-class", "5", "--n", "160", "--seed", "0",
    )
    report = parse_report(out)
    assert code == EXIT_OK
    assert 0.0 <= float(report["probe.test_accuracy"]) <= 1.0
    assert report["n_train"] == "8" and report["n_test"] == "2"


def test_usage_error_exit_code(capsys):
    assert main(["serialize", "--mode", "bogus"]) == EXIT_USAGE
    assert main(["nope"]) == EXIT_USAGE
