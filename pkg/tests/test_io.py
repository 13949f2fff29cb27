import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_case
from pdnr.errors import CaseFileError
from pdnr.io import case_from_dict, case_hash, case_to_dict, load_case, save_case, trace_csv
from pdnr.distributed import ConvergenceMetrics


def same_case(a, b):
    assert a.digraph.arcs == b.digraph.arcs and a.digraph.root == b.digraph.root
    for name in ("r", "x", "p_cap", "q_cap", "rho1", "rho2"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-14, atol=0)
    assert (a.epsilon, a.v0, a.voltage_enabled, a.labels, a.substations) == (
        b.epsilon,
        b.v0,
        b.voltage_enabled,
        b.labels,
        b.substations,
    )


def test_baran_shape(baran):
    assert baran.n_nodes == 33 and baran.n_arcs == 74
    assert baran.labels[baran.root] == 1
    assert -baran.rho1[baran.rho1 < 0].sum() == pytest.approx(3.715)
    # the bundled reactive demand follows the standard line data (2.30 MVAr)
    assert -baran.rho2[baran.rho2 < 0].sum() == pytest.approx(2.30)
    assert baran.v0 == 12.66 and baran.voltage_enabled


def test_toy_shape(toy):
    assert toy.n_nodes == 5 and toy.labels[toy.root] == 1
    assert not toy.voltage_enabled
    g = toy.digraph
    for k in range(toy.n_arcs):
        i, j = toy.labels[g.tails[k]], toy.labels[g.heads[k]]
        assert toy.r[k] == i + j


def test_impedances_normalised(baran):
    doc = case_to_dict(baran)
    br = doc["branches"][0]
    assert baran.r[0] == pytest.approx(br["r_ohm"] / 12.66**2)


def test_round_trip_bundled(tmp_path, baran, toy):
    for case in (baran, toy):
        p = tmp_path / "c.json"
        save_case(case, p)
        same_case(case, load_case(p))
        assert case_hash(load_case(p)) == case_hash(case)


@given(st.integers(0, 2**32 - 1))
def test_round_trip_random(seed):
    case = random_case(np.random.default_rng(seed), 5, extra=2)
    same_case(case, case_from_dict(json.loads(json.dumps(case_to_dict(case)))))


@pytest.fixture
def doc(toy):
    return case_to_dict(toy)


def test_duplicate_branch_rejected(doc):
    doc["branches"].append(copy.deepcopy(doc["branches"][0]))
    with pytest.raises(CaseFileError, match="duplicated branch"):
        case_from_dict(doc)
    rev = copy.deepcopy(doc["branches"][1])
    doc["branches"][-1] = {**rev, "from": rev["to"], "to": rev["from"]}
    with pytest.raises(CaseFileError, match="duplicated branch"):
        case_from_dict(doc)


def test_schema_errors_name_the_field(doc):
    doc["branches"][2]["r_ohm"] = -1
    with pytest.raises(CaseFileError, match="branches/2/r_ohm"):
        case_from_dict(doc)


def test_imbalance_rejected(doc):
    doc["buses"][1]["rho1_mw"] += 0.5
    with pytest.raises(CaseFileError, match="imbalance"):
        case_from_dict(doc)


def test_root_count(doc):
    doc["buses"][1]["kind"] = "root"
    with pytest.raises(CaseFileError, match="root"):
        case_from_dict(doc)


def test_disconnected_rejected(doc):
    doc["buses"].append({"id": 99, "rho1_mw": 0.0, "rho2_mvar": 0.0, "kind": "load"})
    with pytest.raises(CaseFileError):
        case_from_dict(doc)


def test_unknown_bus_and_missing_file(doc, tmp_path):
    doc["branches"][0]["to"] = 77
    with pytest.raises(CaseFileError, match="unknown bus"):
        case_from_dict(doc)
    with pytest.raises(FileNotFoundError):
        load_case(tmp_path / "nothing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(CaseFileError):
        load_case(bad)


def test_trace_csv():
    rows = [ConvergenceMetrics(k, 1.0 / (k + 1), np.ones(2), np.zeros(2), np.zeros(2)) for k in range(3)]
    text = trace_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "iteration,e_k" and len(lines) == 4
    assert trace_csv(rows, per_agent=True).splitlines()[0] == "iteration,e_k,s_0,s_1,r_0,r_1"
