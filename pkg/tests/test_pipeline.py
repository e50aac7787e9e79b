import dataclasses
import json
import re

import jsonschema
import pytest

from digital_siblings.config import parse_config
from digital_siblings.errors import ManifestCorrupt
from digital_siblings.featuremap import FeatureMap, MetricKind
from digital_siblings.pipeline import (
    DSS,
    MANIFEST_SCHEMA,
    REPORT_SCHEMA,
    Pipeline,
    map_comparisons,
    replay,
    validate_manifest,
)
from digital_siblings.report import RED, color_for, heatmap_csv, heatmap_svg
from test_featuremap import cell_map

CONFIG = """
[experiment]
seed = 5
repetitions = 2
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
sensor_noise_sd = 0.05

[sibling.ds2]
engine = dynamic
tire_stiffness = 10
sensor_noise_sd = 0.05

[twin]
engine = dynamic
tire_stiffness = 6
drag = 0.3
sensor_noise_sd = 0.05
"""

FP = MetricKind.FAILURE_PROBABILITY


@pytest.fixture(scope="module")
def cfg():
    return parse_config(CONFIG)


@pytest.fixture(scope="module")
def done(cfg, tmp_path_factory):
    pipe = Pipeline(cfg, tmp_path_factory.mktemp("a"))
    report = pipe.run()
    return pipe, report


def read(pipe, rel):
    return (pipe.run_dir / rel).read_bytes()


# ----------------------------------------------------------------- structure


def test_run_dir_named_by_config_hash(done, cfg):
    pipe, _ = done
    assert pipe.run_dir.name == f"run-{cfg.config_hash()[:12]}"


def test_manifest_lists_every_stage(done, cfg):
    pipe, _ = done
    m = validate_manifest(pipe.run_dir)
    jsonschema.validate(m, MANIFEST_SCHEMA)
    assert set(m["stages"]) == {"search", "migrate", "merge", "evaluate", "report"}
    assert m["seeds"]["global"] == cfg.seed
    assert m["seeds"]["search_runs"] == {"ds1": ["ds1-r0", "ds1-r1"], "ds2": ["ds2-r0", "ds2-r1"]}
    assert m["config_hash"] == cfg.config_hash()
    assert "search/ds1/rep1/placements.jsonl" in m["stages"]["search"]["artifacts"]


def test_report_schema_and_rows(done):
    _, report = done
    jsonschema.validate(report, REPORT_SCHEMA)
    rows = {(c["rq"], c["candidate"]) for c in report["comparisons"]}
    for rq in ("RQ1", "RQ2", "RQ3"):
        assert {(rq, "ds1"), (rq, "ds2"), (rq, DSS)} <= rows
    assert all(c["reference"] == "dt" for c in report["comparisons"])
    assert report["twin"]["n_tests"] > 0


def test_twin_runs_every_unique_native_test(done):
    pipe, report = done
    ids = set()
    for name in ("ds1", "ds2"):
        ids |= FeatureMap.from_dict(json.loads(read(pipe, f"search/{name}/combined.json"))).test_ids()
    twin = FeatureMap.from_dict(json.loads(read(pipe, "evaluate/twin.json")))
    assert twin.test_ids() == ids and twin.kind == "twin"
    assert report["twin"]["n_tests"] + report["twin"]["n_excluded"] == len(ids)


def test_unions_share_cells_and_normalization(done):
    pipe, _ = done
    u1, u2 = (FeatureMap.from_dict(json.loads(read(pipe, f"migrate/union_{n}.json"))) for n in ("ds1", "ds2"))
    assert u1.cell_set() == u2.cell_set()
    assert u1.normalization == u2.normalization


def test_merge_is_conservative(done):
    pipe, _ = done
    u1, u2 = (FeatureMap.from_dict(json.loads(read(pipe, f"migrate/union_{n}.json"))) for n in ("ds1", "ds2"))
    dss = FeatureMap.from_dict(json.loads(read(pipe, "merge/dss.json")))
    v1, v2 = u1.values(FP), u2.values(FP)
    for cell, v in dss.values(FP).items():
        assert v <= min(v1[cell], v2[cell]) + 1e-12


# ------------------------------------------------------ determinism and stages


def test_rerun_is_byte_identical(done, cfg, tmp_path):
    pipe, _ = done
    other = Pipeline(cfg, tmp_path)
    other.run()
    for rel in ("evaluate/report.json", "merge/dss.json", "report/DSS_failure_probability.svg",
                "report/ds1_lack_of_quality.csv", "report/summary.txt", "search/ds2/rep1/placements.jsonl"):
        assert read(other, rel) == read(pipe, rel), rel


def test_parallel_jobs_match_serial(done, cfg, tmp_path):
    pipe, _ = done
    other = Pipeline(cfg, tmp_path, jobs=2)
    other.run()
    assert read(other, "evaluate/report.json") == read(pipe, "evaluate/report.json")


def test_stage_by_stage_equals_single_shot(done, cfg, tmp_path):
    pipe, _ = done
    for stage in ("search", "migrate", "merge", "evaluate", "report"):
        Pipeline(cfg, tmp_path).run_until(stage)
    staged = Pipeline(cfg, tmp_path)
    for rel in ("evaluate/report.json", "migrate/union_ds1.json", "report/rq2_failure_probability.csv"):
        assert read(staged, rel) == read(pipe, rel), rel


def test_cached_stage_is_reused(cfg, tmp_path):
    Pipeline(cfg, tmp_path).run_until("search")
    marker = tmp_path / Pipeline(cfg, tmp_path).run_dir.name / "search" / "ds1" / "combined.json"
    stamp = marker.stat().st_mtime_ns
    Pipeline(cfg, tmp_path).run_until("merge")
    assert marker.stat().st_mtime_ns == stamp
    Pipeline(cfg, tmp_path, stage_cache=False).run_until("merge")
    assert marker.stat().st_mtime_ns != stamp


def test_zero_iterations_bounds_cells(cfg, tmp_path):
    small = dataclasses.replace(cfg, repetitions=1, search=dataclasses.replace(cfg.search, population_size=5, iterations=0))
    maps = Pipeline(small, tmp_path).run_until("search")
    for fm in maps.values():
        assert len(fm.cell_set()) <= 5


# ------------------------------------------------------------------ scoring


def test_twin_equal_to_sibling_scores_perfectly(tmp_path):
    text = CONFIG.replace("[twin]\nengine = dynamic\ntire_stiffness = 6\ndrag = 0.3",
                          "[twin]\nengine = kinematic\nsensor_bias = 0.3")
    cfg = parse_config(text.replace("seed = 5", "seed = 5\nstrict = false"))
    report = Pipeline(cfg, tmp_path).run()
    row = next(c for c in report["comparisons"] if c["rq"] == "RQ2" and c["candidate"] == "ds1")
    assert row["pearson_r"] == pytest.approx(1.0, abs=1e-12)
    assert row["auc_prc"] == 1.0
    rq1 = next(c for c in report["comparisons"] if c["rq"] == "RQ1" and c["candidate"] == "ds1")
    assert rq1["distance"] == 0.0


def test_merge_recovers_true_negative():
    # ds1 flags a cell the twin passes, ds2 does not; the product clears it
    ds1 = cell_map({(1, 1): (1, 1, [0.5]), (2, 2): (1, 1, [0.5]), (3, 3): (1, 1, [0.5]), (4, 4): (0, 1, [0.5])})
    ds2 = cell_map({(1, 1): (1, 1, [0.5]), (2, 2): (0, 1, [0.5]), (3, 3): (1, 1, [0.5]), (4, 4): (1, 1, [0.5])})
    dt = cell_map({(1, 1): (1, 1, [0.5]), (2, 2): (0, 1, [0.5]), (3, 3): (1, 1, [0.5]), (4, 4): (0, 1, [0.5])})
    from digital_siblings.featuremap import merge_maps

    dss = merge_maps([ds1, ds2])
    assert dss.values(FP) == dt.values(FP)
    rows = {c["candidate"]: c for c in map_comparisons({"ds1": ds1, "ds2": ds2, DSS: dss}, dt, "dt", ["ds1", "ds2", DSS]) if c["rq"] == "RQ2"}
    assert rows[DSS]["auc_prc"] == 1.0 and rows[DSS]["pearson_r"] == pytest.approx(1.0)
    assert rows["ds1"]["auc_prc"] < 1.0 and rows["ds2"]["auc_prc"] < 1.0


def test_undefined_scores_become_null():
    ds = cell_map({(1, 1): (1, 1, [0.5]), (2, 2): (1, 1, [0.5])})
    dt = cell_map({(1, 1): (1, 1, [0.5]), (2, 2): (1, 1, [0.5])})
    rows = map_comparisons({"a": ds}, dt, "dt", ["a"])
    assert all(r["pearson_r"] is None and r["auc_prc"] is None for r in rows)


# ------------------------------------------------------------------- report


def test_color_scale_endpoints():
    assert color_for(1.0) == "#{:02x}{:02x}{:02x}".format(*RED) == "#d73027"
    assert color_for(0.0) == "#1a9850"
    assert color_for(0.5) == "#ffffbf"
    assert color_for(7.0) == color_for(1.0)


def test_heatmap_blank_cells_and_red_failure():
    fm = cell_map({(1, 1): (1, 1, [0.5]), (3, 2): (0, 2, [0.5])})
    svg = heatmap_svg(fm, FP, "t")
    assert svg == heatmap_svg(fm, FP, "t")
    assert svg.count('fill="#d73027"') == 1 and svg.count('fill="#1a9850"') == 1
    assert svg.count('fill="none"') == 4  # 3 x 2 grid, two cells filled
    rows = heatmap_csv(fm, FP).splitlines()
    assert rows == ["curvature,1,2,3", "0.02,,,0.0", "0.01,1.0,,"]


def test_svg_is_well_formed(done):
    import xml.etree.ElementTree as ET

    pipe, _ = done
    root = ET.fromstring(read(pipe, "report/DT_failure_probability.svg"))
    assert root.tag.endswith("svg")
    assert re.search(rb"turns", read(pipe, "report/DT_failure_probability.svg"))


# ------------------------------------------------------------------- replay


def test_replay_matches_every_archive_cell(done):
    pipe, _ = done
    for rep in range(2):
        archive = json.loads(read(pipe, f"search/ds2/rep{rep}/archive.json"))
        for cell in archive["cells"].values():
            res = replay(pipe.run_dir, cell["test_id"], "ds2")
            assert res["match"], cell["test_id"]
            assert res["episode_seed"] == cell["episode_seed"]


def test_replay_twin_record(done):
    pipe, _ = done
    twin = FeatureMap.from_dict(json.loads(read(pipe, "evaluate/twin.json")))
    rec = twin.records()[0]
    res = replay(pipe.run_dir, rec.test_id, "dt")
    assert res["match"] and res["simulator"] == "dt"


def test_replay_altered_seed_mismatches(done):
    pipe, _ = done
    archive = json.loads(read(pipe, "search/ds1/rep0/archive.json"))
    ids = [c["test_id"] for c in archive["cells"].values()]
    assert not all(replay(pipe.run_dir, t, "ds1", seed=6)["match"] for t in ids)


def test_replay_missing_artifact(cfg, tmp_path):
    pipe = Pipeline(cfg, tmp_path)
    pipe.run_until("search")
    tid = json.loads(read(pipe, "search/ds1/rep0/placements.jsonl").splitlines()[0])["test_id"]
    (pipe.run_dir / "search/ds2/rep1/archive.json").unlink()
    with pytest.raises(ManifestCorrupt, match="missing"):
        replay(pipe.run_dir, tid)


def test_replay_without_manifest(tmp_path):
    with pytest.raises(ManifestCorrupt):
        replay(tmp_path, "x")
