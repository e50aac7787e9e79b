import json
import textwrap

import pytest

from digital_siblings.cli import EXIT_CONFIG, EXIT_EXEC, EXIT_OK, main
from digital_siblings.config import ExperimentConfig, load_config, parse_config
from digital_siblings.dynamics import Engine, ModelKind
from digital_siblings.errors import ConfigError

BASE = """
[experiment]
seed = 5
repetitions = 1
offline_roads = 2

[search]
population_size = 6
iterations = 6

[model]
kind = mistuned_pid
kp = 0.4
kd = 3.0

[sibling.ds1]
engine = kinematic
sensor_bias = 0.3

[sibling.ds2]
engine = dynamic
tire_stiffness = 10
"""

TWIN = """
[twin]
engine = dynamic
tire_stiffness = 6
drag = 0.3
"""


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


# ---------------------------------------------------------------------- config


def test_parse_reference_shape():
    cfg = parse_config(BASE + TWIN)
    assert [s.name for s in cfg.siblings] == ["ds1", "ds2"]
    assert cfg.siblings[0].sensor_bias == 0.3 and cfg.siblings[1].engine is Engine.DYNAMIC
    assert cfg.twin.name == "dt" and cfg.twin.drag == 0.3
    assert cfg.model.kind is ModelKind.MISTUNED_PID and cfg.model.kp == 0.4
    assert cfg.search.population_size == 6 and cfg.search.seed == 5


def test_twin_optional_for_search():
    cfg = parse_config(BASE)
    assert cfg.twin is None
    with pytest.raises(ConfigError, match="twin"):
        cfg.validate(need_twin=True)


def test_round_trip_and_hash():
    cfg = parse_config(BASE + TWIN)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.config_hash() == cfg.config_hash()
    assert parse_config((BASE + TWIN).replace("seed = 5", "seed = 6")).config_hash() != cfg.config_hash()


@pytest.mark.parametrize(
    "text, path",
    [
        (BASE.replace("kp = 0.4", "kp = fast"), "model.kp"),
        (BASE.replace("iterations = 6", "iterations = 6.5"), "search.iterations"),
        (BASE.replace("kp = 0.4", "kq = 0.4"), "model.kq"),
        (BASE + "\n[sibling.ds3]\nwheels = 4\n", "sibling.ds3.wheels"),
        (BASE.replace("seed = 5", "seed = 5\nsead = 6"), "experiment.sead"),
        (BASE + "\n[extras]\nx = 1\n", "extras"),
        (BASE.replace("engine = dynamic", "engine = hover"), "sibling.ds2"),
    ],
)
def test_errors_name_the_offending_path(text, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert str(exc.value).startswith(path)


def test_single_sibling_rejected():
    text = BASE.split("[sibling.ds2]")[0]
    with pytest.raises(ConfigError, match="two"):
        parse_config(text)


def test_identical_siblings_strictness():
    text = BASE.replace("engine = dynamic\ntire_stiffness = 10", "engine = kinematic\nsensor_bias = 0.3")
    with pytest.raises(ConfigError, match="differ"):
        parse_config(text)
    cfg = parse_config(text.replace("seed = 5", "seed = 5\nstrict = false"))
    assert cfg.siblings[0].physics_fingerprint() == cfg.siblings[1].physics_fingerprint()


def test_twin_equal_to_sibling_strictness():
    twin = "\n[twin]\nengine = kinematic\nsensor_bias = 0.3\n"
    with pytest.raises(ConfigError, match="twin"):
        parse_config(BASE + twin)
    assert parse_config(BASE.replace("seed = 5", "seed = 5\nstrict = off") + twin).twin is not None


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")


def test_reference_config_loads():
    from pathlib import Path

    cfg = load_config(Path(__file__).parents[1] / "configs" / "reference.ini")
    assert cfg.seed == 2024 and cfg.twin is not None and cfg.validate(need_twin=True)


# ------------------------------------------------------------------------- cli


def test_cli_bad_config_exit_code(tmp_path, capsys):
    p = write(tmp_path, BASE.replace("kp = 0.4", "kp = fast"))
    assert main(["search", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "model.kp" in capsys.readouterr().err


def test_cli_missing_twin_for_evaluate(tmp_path):
    p = write(tmp_path, BASE)
    assert main(["pipeline", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_cli_bad_jobs(tmp_path):
    p = write(tmp_path, BASE)
    assert main(["search", "--config", str(p), "--jobs", "0", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_cli_search_then_replay(tmp_path, capsys):
    # sensor noise makes the outcome depend on the episode seed
    p = write(tmp_path, BASE.replace("sensor_bias = 0.3", "sensor_bias = 0.3\nsensor_noise_sd = 0.05"))
    out = tmp_path / "o"
    assert main(["search", "--config", str(p), "--out", str(out)]) == EXIT_OK
    run_dir = capsys.readouterr().out.strip().splitlines()[-1]
    archive = json.loads(open(f"{run_dir}/search/ds1/rep0/archive.json").read())
    assert archive["cells"]
    test_id = next(iter(archive["cells"].values()))["test_id"]

    trace = tmp_path / "trace.csv"
    rc = main(["replay", "--config", str(p), "--out", str(out), "--test-id", test_id, "--trace", str(trace)])
    res = json.loads(capsys.readouterr().out)
    assert rc == EXIT_OK and res["match"] and res["simulator"] == "ds1"
    assert trace.read_text().startswith("time,x,y,heading,speed,lp,ld,steering,throttle")

    rc = main(["replay", "--config", str(p), "--out", str(out), "--test-id", test_id, "--seed", "99"])
    assert rc == EXIT_EXEC
    assert json.loads(capsys.readouterr().out)["match"] is False


def test_cli_replay_unknown_test(tmp_path):
    p = write(tmp_path, BASE)
    out = tmp_path / "o"
    assert main(["search", "--config", str(p), "--out", str(out)]) == EXIT_OK
    assert main(["replay", "--config", str(p), "--out", str(out), "--test-id", "nope"]) == EXIT_EXEC

