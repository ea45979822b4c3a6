import json

import jsonschema
import pytest

from netdid.cli import build_parser, load_schema, main


def _sub_help(name, capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([name, "--help"])
    return capsys.readouterr().out


@pytest.mark.parametrize("cmd", ["estimate", "simulate", "mc", "graph-stats"])
def test_help_lists_every_schema_default(cmd, capsys):
    text = " ".join(_sub_help(cmd, capsys).split())
    for key, spec in load_schema(cmd)["properties"].items():
        flag = "--" + key.replace("_", "-")
        assert flag in text
        if "default" in spec:
            assert f"(default: {json.dumps(spec['default'])})" in text


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--dgp", "appendix-e", "--n", "500", "--seed", "7", "--out-dir", str(out)]) == 0
    return out


def test_simulate_writes_truth(sim_dir):
    truth = json.loads((sim_dir / "truth.json").read_text())
    assert truth["n"] == 500
    assert truth["effects"]["DATT(0)"] == pytest.approx(0.2)
    assert truth["effects"]["DATT(1)"] == pytest.approx(0.4)


def test_simulate_deterministic(sim_dir, tmp_path):
    assert main(["simulate", "--dgp", "appendix-e", "--n", "500", "--seed", "7", "--out-dir", str(tmp_path)]) == 0
    for f in ("nodes.csv", "edges.csv", "truth.json"):
        assert (tmp_path / f).read_bytes() == (sim_dir / f).read_bytes()


def test_simulate_main_design_truth_zero(tmp_path):
    assert main(["simulate", "--dgp", "main-s6", "--n", "200", "--out-dir", str(tmp_path)]) == 0
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["effects"]["DATT"] == 0.0


def test_estimate_level_report(sim_dir, tmp_path, capsys):
    out = tmp_path / "r.json"
    scores = tmp_path / "s.csv"
    rc = main(["estimate", "--nodes", str(sim_dir / "nodes.csv"), "--edges", str(sim_dir / "edges.csv"),
               "--estimand", "datt", "--g", "1", "--learner", "nglm", "--poly-degree", "2",
               "--out", str(out), "--scores", str(scores), "--jobs", "1"])
    assert rc == 0
    rep = json.loads(out.read_text())
    jsonschema.validate(rep, load_schema("estimate_report.schema.json"))
    assert rep["estimand"] == "DATT(g)" and rep["g"] == 1
    assert rep["se_iid"] > 0 and rep["ci_iid"][0] < rep["estimate"] < rep["ci_iid"][1]
    assert rep["learner"]["learner"] == "nglm" and rep["learner"]["poly_degree"] == 2
    assert len(scores.read_text().splitlines()) == rep["m"] + 1
    assert "DATT(g) g=1" in capsys.readouterr().out


def test_estimate_deterministic(sim_dir, tmp_path):
    args = ["estimate", "--nodes", str(sim_dir / "nodes.csv"), "--edges", str(sim_dir / "edges.csv"), "--jobs", "1"]
    assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_config_file_and_flag_precedence(sim_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nodes": str(sim_dir / "nodes.csv"), "edges": str(sim_dir / "edges.csv"),
                               "poly_degree": 1, "eps_trim": 0.05, "out": str(tmp_path / "r.json"), "jobs": 1}))
    assert main(["estimate", "--config", str(cfg), "--poly-degree", "3"]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["learner"]["poly_degree"] == 3  # flag beats file
    assert main(["estimate", "--config", str(cfg)]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["learner"]["poly_degree"] == 1  # file beats schema default


def test_missing_edges_exit_2(sim_dir, tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    rc = main(["estimate", "--nodes", str(sim_dir / "nodes.csv"), "--edges", str(missing)])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err


def test_usage_errors_exit_2(sim_dir, tmp_path):
    base = ["estimate", "--nodes", str(sim_dir / "nodes.csv"), "--edges", str(sim_dir / "edges.csv")]
    assert main(base + ["--eps-trim", "0.9"]) == 2
    assert main(base + ["--g", "5"]) == 2
    assert main(["estimate"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(base + ["--config", str(bad)]) == 2
    assert main(["mc", "--methods", "forest"]) == 2
    assert main(["graph-stats"]) == 2


def test_estimation_failure_exit_1(tmp_path):
    nodes = tmp_path / "n.csv"
    edges = tmp_path / "e.csv"
    nodes.write_text("id,d,y_pre,y_post,x1\n" + "".join(f"{i},{int(i < 2)},0,{i},{i % 3}\n" for i in range(8)))
    edges.write_text("src,dst\n0,1\n")
    # only two treated units, both with a treated neighbor: no treated unit at level 0
    assert main(["estimate", "--nodes", str(nodes), "--edges", str(edges), "--g", "0", "--jobs", "1"]) == 1


def test_graph_stats_small_files(tmp_path, capsys):
    tri = tmp_path / "tri.csv"
    tri.write_text("src,dst\na,b\nb,c\na,c\n")
    out = tmp_path / "s.json"
    assert main(["graph-stats", "--edges", str(tri), "--out", str(out), "--jobs", "1"]) == 0
    stats = json.loads(out.read_text())
    jsonschema.validate(stats, load_schema("graph_stats.schema.json"))
    assert stats["avg_degree"] == 2.0 and stats["avg_path_length"] == 1.0
    path = tmp_path / "path.csv"
    path.write_text("src,dst\n1,2\n2,3\n3,4\n")
    assert main(["graph-stats", "--edges", str(path), "--out", str(out), "--jobs", "1"]) == 0
    stats = json.loads(out.read_text())
    assert stats["avg_degree"] == 1.5
    assert stats["avg_path_length"] == pytest.approx(10 / 6)


def test_mc_smoke(tmp_path, capsys):
    out = tmp_path / "mc.json"
    rc = main(["mc", "--dgp", "appendix-e", "--n", "300", "--reps", "5", "--methods", "nglm,naive,datt1",
               "--out", str(out), "--rows-csv", str(tmp_path / "rows.csv"), "--jobs", "1"])
    assert rc == 0
    rep = json.loads(out.read_text())
    jsonschema.validate(rep, load_schema("mc_report.schema.json"))
    assert set(rep["aggregates"]) == {"nglm", "naive", "datt1"}
    assert len([r for r in rep["rows"] if r["method"] == "nglm"]) == 5
    assert "# method" in capsys.readouterr().out
