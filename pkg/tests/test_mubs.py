import numpy as np
import pytest

from structqkd.mubs import (
    M1,
    PrepRecipe,
    make_mubs,
    mub_d2,
    mub_d4,
    recipes_d2,
    recipes_d4,
    source_state,
    theoretical_matrix,
    unbiasedness_error,
    verify_all,
    verify_recipe,
)
from structqkd.spinorbit import born_probability


def amp(state, pol, oam):
    return state.component(pol, oam)


def test_d2_examples():
    m = mub_d2(1)
    z1, z2 = m.bases[0]
    x1 = m.bases[1][0]
    assert born_probability(z1, z2) == pytest.approx(0.0, abs=1e-15)
    assert born_probability(z1, x1) == pytest.approx(0.5)
    assert np.allclose(z1.amplitudes, [2 ** -0.5, 2 ** -0.5])
    assert [str(b) for b in z1.basis] == ["|L,-1>", "|R,+1>"]


def test_d4_examples():
    m = mub_d4(2)
    psi1 = m.state("psi1")
    assert abs(amp(psi1, "H", 2)) == pytest.approx(1.0)
    phi1 = m.state("phi1")
    assert abs(amp(phi1, "L", 2)) == pytest.approx(2 ** -0.5)
    assert abs(amp(phi1, "R", -2)) == pytest.approx(2 ** -0.5)
    assert abs(amp(phi1, "R", 2)) < 1e-12 and abs(amp(phi1, "L", -2)) < 1e-12
    P = m.overlap_matrix()
    assert np.allclose(P[:4, 4:], 0.25, atol=1e-12)


def test_phi_states_pair_opposite_spin_and_orbit():
    # each phi is an equal superposition of |L,s*l> and |R,-s*l>
    m = mub_d4(2)
    for s in m.bases[1]:
        weights = {(p, l): abs(amp(s, p, l)) ** 2 for p in "LR" for l in (2, -2)}
        nz = {k for k, w in weights.items() if w > 1e-12}
        assert len(nz) == 2
        (p1, l1), (p2, l2) = sorted(nz)
        assert p1 != p2 and l1 == -l2


@pytest.mark.parametrize("d,ell", [(2, 1), (2, 3), (4, 1), (4, 2), (4, 5)])
def test_mub_conditions(d, ell):
    m = make_mubs(d, ell)
    assert m.check(1e-12) <= 1e-12
    assert unbiasedness_error(m.bases) <= 1e-12


def test_m1_is_unitary():
    assert np.max(np.abs(M1 @ M1.conj().T - np.eye(4))) < 1e-12


def test_theoretical_matrix_structure():
    for d in (2, 4):
        P = theoretical_matrix(make_mubs(d)).canonical().probabilities
        assert np.allclose(P[:d, :d], np.eye(d), atol=1e-12)
        assert np.allclose(P[d:, d:], np.eye(d), atol=1e-12)
        assert np.allclose(P[:d, d:], 1 / d, atol=1e-12)


@pytest.mark.parametrize("d", [2, 4])
def test_all_recipes_reach_targets(d):
    fids = verify_all(d)
    assert len(fids) == 2 * d
    assert min(fids.values()) >= 1 - 1e-10


@pytest.mark.parametrize("ell", [1, 2, 3])
def test_recipes_hold_for_other_oam_values(ell):
    assert min(verify_all(4, ell).values()) >= 1 - 1e-10


def test_vertical_source_fails():
    # the recipes assume horizontal light from the source
    assert max(verify_all(2, pol="V").values()) < 1e-10


def test_zeta1_and_psi2_examples():
    src2 = source_state(1)
    r = next(r for r in recipes_d2(1) if r.target == "zeta1")
    assert verify_recipe(r, src2) >= 1 - 1e-10
    src4 = source_state(2)
    r = next(r for r in recipes_d4(2) if r.target == "psi2")
    assert verify_recipe(r, src4) >= 1 - 1e-10


def test_wrong_angle_is_detected():
    bad = PrepRecipe("zeta1", (("HWP", 45.0), ("QPLATE", 0.5)))
    assert verify_recipe(bad, source_state(1)) <= 0.5


def test_recipe_text():
    r = recipes_d4()[-1]
    assert str(r) == "phi4: HWP +45, QP(q=1), -"


def test_to_text_lists_every_state():
    txt = mub_d4().to_text()
    assert txt.count("\n") == 9
    assert "phi3" in txt
