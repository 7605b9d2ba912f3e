import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structqkd.detection import (
    FIXTURES,
    DetectionMatrix,
    MatrixParseError,
    load_fixture,
    parse_csv,
    read_matrix,
)
from structqkd.mubs import make_mubs, theoretical_matrix
from structqkd.protocol import (
    KeyRate,
    entropy_d,
    key_rate_analytic,
    qber,
    report_json,
    report_table,
    sift,
    simulate_exchange,
    threshold_q0,
    two_way_threshold_d4,
)


def h_oracle(q, d):
    if q == 0:
        return 0.0
    return -q * math.log2(q / (d - 1)) - (1 - q) * math.log2(1 - q)


# fixtures ------------------------------------------------------------------------

def test_fixture_row_order_is_preserved():
    M = load_fixture("d4_raw")
    assert M.row_labels[:4] == ("psi1", "psi3", "psi2", "psi4")
    assert M.canonical().row_labels[:4] == ("psi1", "psi2", "psi3", "psi4")


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixtures_load_and_are_nearly_normalized(name):
    M = load_fixture(name)
    assert M.probabilities.shape == (2 * M.d, 2 * M.d)
    assert np.all(np.abs(M.block_row_sums() - 1) < 1e-2)


def test_fixture_qber_values():
    # independent recomputation: mean of P(label|label) over all sent states
    for name, expected in [("d2_raw", 0.05), ("d2_corrected", 0.0465), ("d4_raw", 0.14275),
                           ("d4_corrected", 0.109625), ("d4_noisy", 0.270375)]:
        M = load_fixture(name)
        diag = [M.probabilities[i, M.col_labels.index(l)] for i, l in enumerate(M.row_labels)]
        assert 1 - np.mean(diag) == pytest.approx(expected, abs=1e-9)
        assert qber(M).Q == pytest.approx(expected, abs=1e-9)


def test_normalized_rows_sum_to_one():
    M = load_fixture("d4_noisy").normalized()
    assert M.is_normalized(1e-9)


def test_permutation_is_carried_not_applied():
    M = load_fixture("d4_corrected")
    perm = M.reordered(reversed(M.row_labels))
    assert qber(perm).Q == pytest.approx(qber(M).Q)
    assert np.allclose(perm.canonical().probabilities, M.canonical().probabilities)


# I/O --------------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    M = load_fixture("d4_raw")
    p = tmp_path / "m.csv"
    p.write_text(M.to_csv())
    back = read_matrix(p)
    assert back.row_labels == M.row_labels and back.provenance == M.provenance
    assert np.allclose(back.probabilities, M.probabilities)


def test_json_round_trip(tmp_path):
    M = theoretical_matrix(make_mubs(2))
    p = tmp_path / "m.json"
    p.write_text(M.to_json(seed=3))
    back = read_matrix(p)
    assert back.provenance == "theoretical"
    assert np.allclose(back.probabilities, M.probabilities)


@pytest.mark.parametrize("text,line", [
    ("state,a1,a2,b1,b2\na1,1,0,0.5\n", 2),
    ("state,a1,a2,b1,b2\na1,1,0,0.5,x\n", 2),
    ("state,a1,a2,b1,b2\na1,1,0,0.5,0.5\na2,0,1,-0.5,0.5\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(MatrixParseError) as exc:
        parse_csv(text, "t.csv")
    assert exc.value.line == line
    assert f"t.csv:{line}" in str(exc.value)


def test_parse_rejects_non_square():
    with pytest.raises(MatrixParseError):
        parse_csv("state,a1,a2,b1,b2\na1,1,0,0.5,0.5\n")


def test_bad_provenance():
    with pytest.raises(ValueError):
        DetectionMatrix(2, ("a1", "a2", "b1", "b2"), ("a1", "a2", "b1", "b2"), np.eye(4), "guess")


# QBER and rates --------------------------------------------------------------------------

def test_theoretical_qber_is_zero():
    assert qber(theoretical_matrix(make_mubs(4))).Q == pytest.approx(0.0, abs=1e-12)


def test_qber_refuses_unnormalized():
    M = DetectionMatrix(2, ("a1", "a2", "b1", "b2"), ("a1", "a2", "b1", "b2"), 2 * np.eye(4), "raw")
    with pytest.raises(ValueError):
        qber(M)


@pytest.mark.parametrize("q,d", [(0.05, 2), (0.11, 4), (0.14, 4), (0.3, 4), (0.5, 2)])
def test_entropy_matches_oracle(q, d):
    assert entropy_d(q, d) == pytest.approx(h_oracle(q, d), abs=1e-12)


def test_entropy_edges():
    assert entropy_d(0.0, 4) == 0.0
    assert entropy_d(0.75, 4) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        entropy_d(0.8, 4)
    with pytest.raises(ValueError):
        entropy_d(-0.01, 2)
    assert entropy_d(np.array([0.0, 0.5]), 2).tolist() == pytest.approx([0.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 0.75), st.sampled_from([2, 3, 4, 8]))
def test_entropy_array_agrees_with_scalar(q, d):
    q = min(q, (d - 1) / d)
    assert entropy_d(np.array([q]), d)[0] == pytest.approx(entropy_d(q, d), abs=1e-12)


def test_key_rate_examples():
    assert key_rate_analytic(0.05, 2).R == pytest.approx(0.43, abs=0.01)
    assert key_rate_analytic(0.11, 4).R == pytest.approx(0.65, abs=0.01)
    assert key_rate_analytic(0.14, 4).R == pytest.approx(0.39, abs=0.01)
    assert key_rate_analytic(0.0, 4).R == 2.0


def test_thresholds():
    assert threshold_q0(2) == pytest.approx(0.110, abs=1e-3)
    assert threshold_q0(4) == pytest.approx(0.189, abs=1e-3)
    assert key_rate_analytic(threshold_q0(4), 4).R == pytest.approx(0, abs=1e-5)
    assert two_way_threshold_d4() > threshold_q0(4)


def test_keyrate_bound_invariant():
    with pytest.raises(ValueError):
        KeyRate(2, 0.0, 1.5)


# sifting ----------------------------------------------------------------------------

def test_sift_keeps_matching_bases():
    res = sift([0, 1, 1, 0], [0, 0, 1, 1], [(1, 1), (0, 1), (2, 3), (0, 0)])
    assert res.kept.tolist() == [0, 2]
    assert res.ratio == 0.5
    assert res.error_rate == 0.5


def test_sift_length_mismatch():
    with pytest.raises(ValueError):
        sift([0, 1], [0], [(0, 0), (1, 1)])


def test_simulated_exchange_reproduces_qber():
    M = load_fixture("d4_noisy")
    a, b, o = simulate_exchange(M, 200_000, np.random.default_rng(4))
    res = sift(a, b, o)
    assert res.ratio == pytest.approx(0.5, abs=0.01)
    # renormalized rows give a slightly different Q than the raw table
    assert res.error_rate == pytest.approx(qber(M.normalized()).Q, abs=0.005)


def test_reports_render():
    rep = qber(load_fixture("d2_raw"))
    rates = [key_rate_analytic(rep.Q, 2)]
    assert '"Q": 0.05' in report_json(rep, rates)
    assert "R (analytic)" in report_table(rep, rates)
