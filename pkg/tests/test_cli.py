import csv
import io

import pytest

from hybridsim.cli import main, parse_seeds, verify_text, fit_exponent
from hybridsim.graphs import io_read


def rows(path):
    return list(csv.reader(io.StringIO(path.read_text())))


def test_parse_seeds():
    assert parse_seeds("1..3,7") == [1, 2, 3, 7]
    assert parse_seeds("5") == [5]


def test_fit_exponent():
    assert fit_exponent([16, 64, 256], [4, 8, 16]) == pytest.approx(0.5)


def test_gen_path_and_gamma(tmp_path, capsys):
    assert main(["gen", "path", "--n", "8"]) == 0
    assert io_read(capsys.readouterr().out).n == 8
    out = tmp_path / "g.txt"
    args = ["gen", "gamma", "--k", "2", "--ell", "2", "--W", "5", "--a", "zeros", "--b", "zeros", "-o", str(out)]
    assert main(args) == 0
    first = out.read_text()
    assert first.startswith("#kind gamma")
    assert main(args) == 0
    assert out.read_text() == first


def test_gen_bad_parameters(capsys):
    assert main(["gen", "gamma", "--k", "2", "--a", "01"]) == 4
    assert main(["gen", "kssp", "--path-len", "3", "--k", "2", "--L", "5"]) == 4
    assert main(["gen", "nonsense"]) == 4
    assert "error" in capsys.readouterr().err


def test_run_apsp_p3_and_verify(tmp_path):
    g = tmp_path / "p3.txt"
    main(["gen", "path", "--n", "3", "-o", str(g)])
    assert main(["run", "apsp", "--graph", str(g), "--seed", "1", "--out", str(tmp_path)]) == 0
    res = tmp_path / "apsp_seed1.csv"
    assert rows(res) == [["0", "1", "2"], ["1", "0", "1"], ["2", "1", "0"]]
    assert rows(tmp_path / "apsp_seed1_metrics.csv")[0][:2] == ["round", "phaseTag"]
    assert main(["verify", str(res), str(g)]) == 0
    res.write_text("0,1,2\n1,0,1\n1,1,0\n")
    assert main(["verify", str(res), str(g)]) == 2


def test_verify_lists_offending_pair(tmp_path, capsys):
    g = tmp_path / "p.txt"
    main(["gen", "path", "--n", "5", "-o", str(g)])
    main(["run", "sssp", "--graph", str(g), "--source", "1", "--out", str(tmp_path)])
    res = tmp_path / "sssp_seed1.csv"
    text = res.read_text().splitlines()
    head, body = text[0], text[1:]
    node, src, est = body[3].split(",")[:3]
    body[3] = ",".join([node, src, str(int(est) - 1)] + body[3].split(",")[3:])
    res.write_text("\n".join([head] + body) + "\n")
    capsys.readouterr()
    assert main(["verify", str(res), str(g), "--exact"]) == 2
    assert f"(v={node},s={src})" in capsys.readouterr().out


def test_run_diameter_seed_range(tmp_path, monkeypatch):
    monkeypatch.setenv("HYBRIDSIM_OUT", str(tmp_path))
    assert main(["run", "diameter", "--gen", "gnp 128 0.05", "--seeds", "1..5"]) == 0
    summary = rows(tmp_path / "diameter_summary.csv")
    assert len(summary) == 1 + 5 and "Dtilde" in summary[0]
    assert all((tmp_path / f"diameter_seed{s}.csv").exists() for s in range(1, 6))


def test_run_is_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["run", "kssp", "--gen", "gnp 128 0.05 6", "--k", "3", "--seed", "4", "--out", str(d)]) == 0
        outs.append([(d / f).read_bytes() for f in ("kssp_seed4.csv", "kssp_seed4_metrics.csv", "kssp_summary.csv")])
    assert outs[0] == outs[1]


def test_kssp_ratio_audit(tmp_path, capsys):
    g = tmp_path / "g.txt"
    main(["gen", "gnp", "--n", "128", "--p", "0.05", "--wmax", "6", "--seed", "2", "-o", str(g)])
    main(["run", "kssp", "--graph", str(g), "--sources", "1,5,9", "--xi", "0.3", "--out", str(tmp_path)])
    res = tmp_path / "kssp_seed1.csv"
    assert main(["verify", str(res), str(g), "--ratio-bound", "3"]) == 0
    assert main(["verify", str(res), str(g), "--ratio-bound", "0.5"]) == 2
    assert "ratio" in capsys.readouterr().out


def test_verify_schema_errors(tmp_path):
    g = tmp_path / "g.txt"
    main(["gen", "path", "--n", "3", "-o", str(g)])
    bad = tmp_path / "bad.csv"
    bad.write_text("node,foo\n1,2\n")
    assert main(["verify", str(bad), str(g)]) == 4
    bad.write_text("0,1\n1,0\n")
    assert main(["verify", str(bad), str(g)]) == 4
    bad.write_text("node,source,estimate\n9,1,3\n")
    assert main(["verify", str(bad), str(g)]) == 4


def test_verify_text_diameter_rules():
    from hybridsim.graphs import gen_path

    g = gen_path(5)
    ok = "node,Dtilde\n" + "".join(f"{v},4\n" for v in range(1, 6))
    assert verify_text(ok, g, exact_hops=10) == []
    low = "node,Dtilde\n" + "".join(f"{v},3\n" for v in range(1, 6))
    assert verify_text(low, g)
    split = "node,Dtilde\n1,4\n2,5\n"
    assert any("disagree" in p for p in verify_text(split, g))


def test_engine_error_exit_code(tmp_path, capsys):
    code = main(["run", "apsp", "--gen", "gnp 64 0.1", "--send-cap", "1", "--recv-cap", "2", "--out", str(tmp_path)])
    assert code == 3
    assert "GlobalSendCapExceeded" in capsys.readouterr().err


def test_bad_arguments(tmp_path):
    assert main(["run", "apsp", "--out", str(tmp_path)]) == 4
    assert main(["run", "apsp", "--gen", "torus 5", "--out", str(tmp_path)]) == 4
    assert main(["run", "sssp", "--gen", "path 5", "--source", "9", "--out", str(tmp_path)]) == 4
    assert main(["run", "floyd"]) == 4
    assert main(["--help"]) == 0


def test_route_and_disseminate_runs(tmp_path):
    assert main(["run", "route", "--gen", "gnp 256 0.02", "--p", "0.0625", "--k", "4", "--out", str(tmp_path)]) == 0
    assert rows(tmp_path / "route_seed1.csv")[0] == ["sender", "receiver", "index", "payload"]
    assert main(["run", "disseminate", "--gen", "gnp 64 0.1", "--k", "10", "--out", str(tmp_path)]) == 0
    assert {r[1] for r in rows(tmp_path / "disseminate_seed1.csv")[1:]} == {"10"}


def test_bench_row_counts(tmp_path, capsys):
    assert main(["bench", "route", "--n", "512", "--k", "4,16", "--senders", "16", "--seeds", "1..2", "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "bench_route.csv")
    assert table[0] == ["k", "seed", "phase", "rounds"]
    points = {(r[0], r[1]) for r in table[1:]}
    assert len(points) == 2 * 2
    phases = {r[2] for r in table[1:]}
    assert {"route.prep", "route.push", "route.request", "route.collect"} <= phases
    assert len(table) - 1 == len(points) * len(phases)
    assert "exponent" in capsys.readouterr().out
    assert main(["bench", "apsp", "--ns", "64,128", "--seeds", "1", "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "bench_apsp.csv")
    assert table[0] == ["n", "seed", "phase", "rounds"]
    assert {"skeleton", "apsp.labels"} <= {r[2] for r in table[1:]}
