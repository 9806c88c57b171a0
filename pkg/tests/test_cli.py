import json

import pytest

from leap import cli
from leap.cli import ConfigError, Pipeline, RunConfig

SMALL = {"seed": 3,
         "network": {"area_km2": 1.0, "macro_count": 12, "pico_count": 2, "density_per_km2": 300},
         "solver": {"iterations": 2000, "diagnostics_every": 500}}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return path


def _strip_timings(manifest):
    m = dict(manifest)
    m.pop("timings")
    return m


def test_unknown_key_rejected_with_location():
    with pytest.raises(ConfigError, match=r"measurements\.bin_sise_db"):
        RunConfig({"measurements": {"bin_sise_db": 2.0}})
    with pytest.raises(ConfigError, match="unknown key 'colour'"):
        RunConfig({"colour": 1})


def test_type_and_choice_checks():
    with pytest.raises(ConfigError):
        RunConfig({"solver": {"iterations": "many"}})
    with pytest.raises(ConfigError):
        RunConfig({"solver": {"algorithm": "newton"}})
    with pytest.raises(ConfigError):
        RunConfig({"constants": {"p_max_w_per_rb": None}})
    RunConfig({"constants": {"n0_dbm_per_rb": None}, "solver": {"seed": None}})


def test_config_hash_and_overrides():
    a = RunConfig(SMALL)
    b = a.with_overrides(measurements={"bin_width_db": 2.0})
    assert a.hash != b.hash
    assert a.data["measurements"]["bin_width_db"] == 1.0
    assert RunConfig(a.to_dict()).hash == a.hash


def test_stage_keys_follow_sections():
    a = Pipeline(RunConfig(SMALL))
    b = Pipeline(RunConfig(SMALL).with_overrides(solver={"iterations": 3000}))
    assert a.key("generate") == b.key("generate")
    assert a.key("measure") == b.key("measure")
    assert a.key("solve") != b.key("solve")
    assert a.key("report") != b.key("report")


def test_run_caches_and_reproduces(config_file, tmp_path):
    root = tmp_path / "art"
    status, run_dir = cli.run_pipeline(config_file, root)
    assert status == 0
    first = json.loads((run_dir / "manifest.json").read_text())
    for name in ("snapshot.json", "statistics.json", "solution.json", "baseline_solution.json",
                 "ues_leap.csv", "ues_fa_fpc.csv", "gains.csv", "summary.json"):
        assert name in first["artifacts"]
    assert json.loads((run_dir / "config.json").read_text()) == RunConfig(SMALL).data
    assert first["inputs"]["config.json"]["sha256"] == cli.file_hash(run_dir / "config.json")

    status, again = cli.run_pipeline(config_file, root)
    second = json.loads((again / "manifest.json").read_text())
    assert again == run_dir
    assert all(r["cached"] for r in second["timings"]["stages"])
    assert _strip_timings(first) == _strip_timings(second)

    # deleting intermediates regenerates identical bytes
    cache = root / "cache"
    for victim in ("statistics.json", "solution.json", "summary.json"):
        path = next(cache.glob(f"*/{victim}"))
        before = path.read_bytes()
        path.unlink()
        cli.run_pipeline(config_file, root)
        assert path.read_bytes() == before
    third = json.loads((run_dir / "manifest.json").read_text())
    assert third["artifacts"] == first["artifacts"]


def test_failed_stage_recorded(config_file, tmp_path, monkeypatch):
    def boom(cfg, out, inputs):
        raise RuntimeError("solver exploded")

    fn, sections, ups, outputs = cli.STAGES["solve"]
    monkeypatch.setitem(cli.STAGES, "solve", (boom, sections, ups, outputs))
    status, run_dir = cli.run_pipeline(config_file, tmp_path / "art")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert status != 0
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "solve"
    assert "solver exploded" in manifest["error"]
    # upstream artifacts are kept
    assert "statistics.json" in manifest["artifacts"]
    assert (run_dir / "statistics.json").exists()


def test_manifest_independent_of_invocation(config_file, tmp_path):
    root = tmp_path / "art"
    _, run_dir = cli.run_pipeline(config_file, root)
    first = json.loads((run_dir / "manifest.json").read_text())
    # the same config reached through a sweep republishes the same run
    other = tmp_path / "other.json"
    other.write_text(json.dumps(SMALL, indent=4))
    cli.sweep(RunConfig.from_file(other), [1.0], [], root)
    second = json.loads((run_dir / "manifest.json").read_text())
    assert _strip_timings(first) == _strip_timings(second)


def test_artifact_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.ROOT_ENV, str(tmp_path / "env"))
    assert cli.artifact_root() == tmp_path / "env"
    assert cli.artifact_root(tmp_path / "x") == tmp_path / "x"


def test_empty_sweep_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        cli.sweep(RunConfig(SMALL), [], [], tmp_path)


def test_sweep_rows_share_snapshot(config_file, tmp_path, capsys):
    root = tmp_path / "art"
    out = tmp_path / "sweep.csv"
    code = cli.main(["sweep", "--config", str(config_file), "--bins", "1,2,6",
                     "--root", str(root), "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("bin_width_db,iot_cap_db,median_leap")
    assert [float(l.split(",")[0]) for l in lines[1:]] == [1.0, 2.0, 6.0]
    assert len(list((root / "cache").glob("generate-*"))) == 1
    assert len(list((root / "cache").glob("measure-*"))) == 3


def test_main_reports_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"measurements": {"bin_sise_db": 1}}))
    assert cli.main(["run", "--config", str(path), "--root", str(tmp_path)]) == 2
    assert "bin_sise_db" in capsys.readouterr().err


def test_subcommands_chain(tmp_path):
    snap, stats = tmp_path / "snap.json", tmp_path / "stats.json"
    sol, base = tmp_path / "sol.json", tmp_path / "base.json"
    assert cli.main(["generate", "--area-km2", "1", "--macros", "12", "--picos", "2",
                     "--density", "300", "--seed", "3", "--out", str(snap)]) == 0
    assert cli.main(["measure", "--snapshot", str(snap), "--bin-size-db", "2",
                     "--out", str(stats)]) == 0
    assert cli.main(["solve", "--statistics", str(stats), "--algorithm", "ce",
                     "--out", str(sol), "--fit", str(tmp_path / "fit.txt")]) == 0
    assert cli.main(["baseline", "--statistics", str(stats), "--snapshot", str(snap),
                     "--out", str(base)]) == 0
    out = tmp_path / "eval"
    assert cli.main(["evaluate", "--solution", str(sol), "--snapshot", str(snap),
                     "--reference", str(base), "--statistics", str(stats),
                     "--out-dir", str(out)]) == 0
    for name in ("ues.csv", "percentiles.csv", "cdf.csv", "gains.csv", "gain_groups.csv"):
        assert (out / name).exists()
