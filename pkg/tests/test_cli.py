"""End-to-end tests driving the command line in process."""

import json
from types import SimpleNamespace

import pytest

from powertrace.cli import main
from powertrace.ingest import SAMPLE_HEADER

SCENARIO = {
    "seed": 77,
    "rootkit_label": "clidemo",
    "idle_duration": 10.0,
    "ie_windows": 4,
    "ie_spacing": 2.5,
    "boot_duration": 8.0,
    "infection": {"delta_power": {"12v_mb": {"idle": 1.0}}},
}

STEM = "clidemo-d1-s77"
RAIL_NAMES = ("3v3", "5v", "12v_mb", "12v_cpu")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "scenario.json"
    config.write_text(json.dumps(SCENARIO), encoding="ascii")
    captures = root / "captures"
    rc = main(["synth", "--config", str(config), "--out", str(captures)])
    assert rc == 0
    return SimpleNamespace(
        root=root,
        config=config,
        captures=captures,
        sample=captures / f"{STEM}.csv",
        truth=captures / f"{STEM}.truth.json",
    )


@pytest.fixture(scope="module")
def compared(workdir):
    out = workdir.root / "cmp"
    rc = main(
        ["compare", "--pre", str(workdir.sample), "--out", str(out), "--max-lag", "0.05"]
    )
    assert rc == 0
    return out


def test_synth_writes_capture_manifest_and_truth(workdir):
    for suffix in (".csv", ".manifest.json", ".truth.json"):
        assert (workdir.captures / f"{STEM}{suffix}").is_file()
    truth = json.loads(workdir.truth.read_text())
    assert truth["run_id"] == STEM
    assert len(truth["markers"]) == 18
    assert truth["applied_deltas"] == {
        "post_infection/idle/12v_mb": 1.0,
        "post_infection_reboot/idle/12v_mb": 1.0,
    }


def test_synth_multiple_datasets(workdir, tmp_path):
    rc = main(
        [
            "synth",
            "--config",
            str(workdir.config),
            "--out",
            str(tmp_path),
            "--datasets",
            "2",
        ]
    )
    assert rc == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted(
        f"clidemo-d{k}-s77{suffix}"
        for k in (1, 2)
        for suffix in (".csv", ".manifest.json", ".truth.json")
    )


def test_analyze_emits_report_and_plot_files(workdir, tmp_path):
    rc = main(["analyze", str(workdir.sample), "--out", str(tmp_path)])
    assert rc == 0
    report = json.loads((tmp_path / f"{STEM}.analysis.json").read_text())
    assert report["run_id"] == STEM
    assert report["marker_count"] == 18
    assert len(report["markers"]) == 18
    assert len(report["segments"]) == 36
    assert set(report["rails"]) == set(RAIL_NAMES)
    for marker in report["markers"]:
        assert marker["duration_s"] == pytest.approx(5.0, abs=0.2)

    n = json.loads(workdir.truth.read_text())["sample_count"]
    for rail in RAIL_NAMES:
        lines = (tmp_path / f"{STEM}.plot.{rail}.csv").read_text().splitlines()
        assert lines[0] == "time_s,power_w"
        assert len(lines) == n + 1
        assert lines[1].startswith("0.000000,")


def test_analyze_continues_past_a_bad_capture(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(SAMPLE_HEADER + "\n", encoding="ascii")
    manifest = (workdir.captures / f"{STEM}.manifest.json").read_text()
    (tmp_path / "bad.manifest.json").write_text(manifest, encoding="ascii")

    out = tmp_path / "out"
    rc = main(["analyze", str(bad), str(workdir.sample), "--out", str(out)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "no samples" in err
    # The healthy capture was still analyzed.
    assert (out / f"{STEM}.analysis.json").is_file()


def test_compare_self_run_reports(workdir, compared):
    payload = json.loads((compared / f"{STEM}.comparison.json").read_text())
    assert payload["pre_run_id"] == STEM
    assert payload["post_run_id"] == STEM
    assert payload["params"]["max_lag"] == 0.05
    reports = payload["reports"]
    assert len(reports) == 20
    assert len({(r["kind"], r["rail"]) for r in reports}) == 20
    for report in reports:
        assert report["noisy"] == (report["kind"] == "boot_pre_vs_reboot_post")

    # The injected idle delta lands on the motherboard rail, nowhere else.
    increments = {
        (r["kind"], r["rail"]) for r in reports if r["verdict"] == "increment"
    }
    assert increments == {
        ("idle_pre_vs_idle_post", "12v_mb"),
        ("idle_pre_vs_idle_post_reboot", "12v_mb"),
    }
    by_key = {(r["kind"], r["rail"]): r for r in reports}
    hit = by_key[("idle_pre_vs_idle_post", "12v_mb")]
    assert hit["delta_w"] == pytest.approx(1.0, abs=0.1)


def test_compare_writes_aggregate(compared):
    payload = json.loads((compared / "aggregate.json").read_text())
    assert payload["n_datasets"] == 1
    cells = payload["cells"]
    assert len(cells) == 20
    hot = {
        (c["kind"], c["rail"]): c["percent"]
        for c in cells
        if c["n_increment"] > 0
    }
    assert hot == {
        ("idle_pre_vs_idle_post", "12v_mb"): "100.00%",
        ("idle_pre_vs_idle_post_reboot", "12v_mb"): "100.00%",
    }
    for cell in cells:
        assert cell["n_datasets"] == 1
        assert cell["percent"].endswith("%")


def test_aggregate_cli_reproduces_compare_output(compared, tmp_path):
    report = compared / f"{STEM}.comparison.json"
    rc = main(["aggregate", str(report), "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "aggregate.json").read_bytes() == (
        compared / "aggregate.json"
    ).read_bytes()


def test_compare_rejects_mismatched_capture_counts(workdir, capsys):
    rc = main(
        [
            "compare",
            "--pre",
            str(workdir.sample),
            "--post",
            "a.csv",
            "--post",
            "b.csv",
        ]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert "powertrace:" in err
    assert "1 --pre captures but 2 --post captures" in err


def test_unknown_marker_rail_fails_cleanly(workdir, capsys):
    rc = main(["analyze", str(workdir.sample), "--marker-rail", "9v"])
    assert rc == 1
    assert "unknown marker rail '9v'" in capsys.readouterr().err


def test_stamp_flag_adds_timestamp(workdir, tmp_path):
    plain = tmp_path / "plain"
    stamped = tmp_path / "stamped"
    base = ["synth", "--config", str(workdir.config)]
    assert main(base + ["--out", str(plain)]) == 0
    assert main(base + ["--out", str(stamped), "--stamp"]) == 0
    without = json.loads((plain / f"{STEM}.truth.json").read_text())
    with_stamp = json.loads((stamped / f"{STEM}.truth.json").read_text())
    assert "generated_at" not in without
    assert "generated_at" in with_stamp


def test_bad_scenario_file_fails_cleanly(tmp_path, capsys):
    config = tmp_path / "broken.json"
    config.write_text("{not json", encoding="ascii")
    rc = main(["synth", "--config", str(config), "--out", str(tmp_path)])
    assert rc == 1
    assert "JSON" in capsys.readouterr().err

    config.write_text(json.dumps({"seed": 1, "wheelbase": 2.4}), encoding="ascii")
    rc = main(["synth", "--config", str(config), "--out", str(tmp_path)])
    assert rc == 1
    assert "unknown keys" in capsys.readouterr().err


def test_missing_subcommand_exits_with_usage():
    with pytest.raises(SystemExit):
        main([])
