import json

import numpy as np
import pytest

from netlvm.errors import DataFormatError
from netlvm.estimator import FitOptions, fit_glamle
from netlvm.io import (
    FORMAT_VERSION,
    check_format_version,
    ingest,
    parse_plan,
    read_fit,
    write_edge_list,
    write_fit,
    write_table,
)
from conftest import make_spec, random_instance


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")


class TestIngest:
    def test_toy_two_layer(self, tmp_path):
        f = tmp_path / "edges.csv"
        write_lines(f, [
            "layer,src,dst,value",
            "t1,a,b,1",
            "t1,b,c,1",
            "t2,c,a,1",
        ])
        data = ingest(f)
        assert data.node_labels == ["a", "b", "c"]
        assert data.layer_labels == ["t1", "t2"]
        assert data.responses.shape == (2, 3, 3)
        assert data.responses[0, 0, 1] == 1
        assert data.responses[0, 1, 2] == 1
        assert data.responses[1, 2, 0] == 1
        # unmentioned dyads default to zero
        assert data.responses.sum() == 3

    def test_undirected_fills_both_triangles(self, tmp_path):
        f = tmp_path / "edges.csv"
        write_lines(f, ["layer,src,dst,value", "t,a,b,1"])
        data = ingest(f, directed=False)
        assert data.responses[0, 0, 1] == 1
        assert data.responses[0, 1, 0] == 1

    @pytest.mark.parametrize("bad_row,line,msg", [
        ("t,a,a,1", 3, "self-edge"),
        ("t,a,c,x", 3, "non-integer"),
        ("t,a,c,2", 3, "support"),
        ("t,a,b,1", 3, "duplicate"),
    ])
    def test_line_numbered_errors(self, tmp_path, bad_row, line, msg):
        f = tmp_path / "edges.csv"
        write_lines(f, ["layer,src,dst,value", "t,a,b,1", bad_row])
        with pytest.raises(DataFormatError) as exc:
            ingest(f)
        assert msg in str(exc.value)
        assert f"line {line}" in str(exc.value)

    def test_negative_count_rejected_poisson(self, tmp_path):
        f = tmp_path / "edges.csv"
        write_lines(f, ["layer,src,dst,value", "t,a,b,-3"])
        with pytest.raises(DataFormatError):
            ingest(f, family="poisson")

    def test_count_allowed_poisson(self, tmp_path):
        f = tmp_path / "edges.csv"
        write_lines(f, ["layer,src,dst,value", "t,a,b,7"])
        data = ingest(f, family="poisson")
        assert data.responses[0, 0, 1] == 7

    def test_bad_header(self, tmp_path):
        f = tmp_path / "edges.csv"
        write_lines(f, ["from,to,layer,value", "t,a,b,1"])
        with pytest.raises(DataFormatError) as exc:
            ingest(f)
        assert "line 1" in str(exc.value)

    def test_trade_shaped_file(self, tmp_path, rng):
        # 28 nodes, 364 directed layers, sparse fill
        n, K = 28, 364
        nodes = [f"c{i:02d}" for i in range(n)]
        layers = [f"p{k:03d}" for k in range(K)]
        lines = ["layer,src,dst,value"]
        for k in range(K):
            for _ in range(10):
                i, j = rng.choice(n, size=2, replace=False)
                lines.append(f"{layers[k]},{nodes[i]},{nodes[j]},1")
        f = tmp_path / "trade.csv"
        write_lines(f, dict.fromkeys(lines))   # dedupe, keep order
        data = ingest(f)
        assert data.n_nodes == 28
        assert data.n_layers == 364
        spec = make_spec(q=2, n_nodes=28)
        assert spec.m == 756

    def test_edge_list_round_trip(self, tmp_path, rng):
        spec, alpha, sigma, data = random_instance(rng, q=1, n_nodes=5, K=4)
        f = tmp_path / "rt.csv"
        write_edge_list(f, data)
        back = ingest(f)
        # ingest drops empty layers and unseen nodes; compare on shared labels
        k_idx = [data.layer_labels.index(l) for l in back.layer_labels]
        n_idx = [data.node_labels.index(u) for u in back.node_labels]
        sub = data.responses[np.ix_(k_idx, n_idx, n_idx)]
        assert np.array_equal(sub, back.responses)


class TestFitJson:
    def test_lossless_round_trip(self, tmp_path, rng):
        spec, alpha, sigma, data = random_instance(rng, q=1, n_nodes=4, K=10,
                                                   scale=0.5)
        fit = fit_glamle(data, spec, FitOptions(seed=5, max_outer=60))
        f = tmp_path / "fit.json"
        write_fit(f, fit, data)
        spec2, loadings, sigma2, z2, doc = read_fit(f)
        assert spec2 == spec
        assert np.array_equal(loadings.alpha, fit.alpha_hat.alpha)
        assert np.array_equal(sigma2, fit.sigma_hat)
        assert np.array_equal(z2, fit.z_modes)
        assert doc["loglik"] == fit.loglik
        assert doc["converged"] == fit.converged
        assert doc["node_labels"] == list(data.node_labels)

    def test_unknown_major_version_rejected(self, tmp_path, rng):
        spec, alpha, sigma, data = random_instance(rng, q=1, n_nodes=4, K=5,
                                                   scale=0.5)
        fit = fit_glamle(data, spec, FitOptions(seed=1, max_outer=30))
        f = tmp_path / "fit.json"
        write_fit(f, fit, data)
        doc = json.loads(f.read_text())
        doc["format_version"] = "2.0"
        f.write_text(json.dumps(doc))
        with pytest.raises(DataFormatError):
            read_fit(f)

    def test_version_check_accepts_minor_bump(self):
        check_format_version("1.7")
        with pytest.raises(DataFormatError):
            check_format_version("0.9")


class TestTables:
    def test_float_digits_round_trip(self, tmp_path):
        vals = [1 / 3, np.pi, 1e-17, 2.0 ** -52]
        f = tmp_path / "t.csv"
        write_table(f, [{"x": v} for v in vals], ["x"])
        lines = f.read_text().splitlines()
        assert lines[0] == f"# format_version={FORMAT_VERSION}"
        assert lines[1] == "x"
        back = [float(l) for l in lines[2:]]
        assert back == vals


class TestPlan:
    def test_values_and_comments(self, tmp_path):
        f = tmp_path / "plan.txt"
        write_lines(f, [
            "# monte carlo settings",
            'family = "poisson"   # edge family',
            "nodes = 10",
            "loading_sd = 0.8",
            "directed = false",
            "",
        ])
        got = parse_plan(f)
        assert got == {"family": "poisson", "nodes": 10, "loading_sd": 0.8,
                       "directed": False}

    @pytest.mark.parametrize("line,lineno", [
        ("just a line", 2),
        ("key =", 2),
        ("k = [1, 2]", 2),
    ])
    def test_errors_carry_line_numbers(self, tmp_path, line, lineno):
        f = tmp_path / "plan.txt"
        write_lines(f, ["a = 1", line])
        with pytest.raises(DataFormatError) as exc:
            parse_plan(f)
        assert f"line {lineno}" in str(exc.value)
