import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_field
from oracles import mode_field
from nsproj.fourier_torus import (AliasingError, BasisId, SpectralField, SubspaceSpec,
                                  TruncationError, basis, basis_enumerate, basis_manifest,
                                  embed, evaluate_physical, norm_h, norm_v, project,
                                  spectral_divergence)


@pytest.mark.parametrize("M,size", [(1, 10), (2, 26), (4, 82), (8, 290)])
def test_basis_sizes(M, size):
    ids = basis_enumerate(M)
    assert len(ids) == size
    assert ids[0] == BasisId.mean(1) and ids[1] == BasisId.mean(2)
    assert len(set(ids)) == size


def test_ordering_by_eigenvalue_then_lexicographic():
    ids = basis_enumerate(3)
    assert ids.index(BasisId.osc(1, 0)) < ids.index(BasisId.osc(1, 1))
    eig = [i.eigenvalue for i in ids]
    assert eig == sorted(eig)
    assert [str(i) for i in ids[2:6]] == ["(-1,0)", "(0,-1)", "(0,1)", "(1,0)"]


def test_sin_cos_convention():
    assert BasisId.osc(1, 0).kind == "sin"
    assert BasisId.osc(0, 1).kind == "sin"
    assert BasisId.osc(0, -1).kind == "cos"
    assert BasisId.osc(-1, 5).kind == "cos"
    assert BasisId.mean(2).kind == "mean"
    assert BasisId.mean(1).eigenvalue == 0
    assert BasisId.osc(2, -3).eigenvalue == 13


def test_id_roundtrip_and_errors():
    for bid in basis_enumerate(2):
        assert BasisId.parse(str(bid)) == bid
    with pytest.raises(ValueError):
        BasisId.osc(0, 0)
    with pytest.raises(ValueError):
        BasisId.parse("(1;2)")
    with pytest.raises(ValueError):
        basis_enumerate(0)


def test_manifest_is_deterministic(tmp_path):
    p = tmp_path / "basis.json"
    text = basis_manifest(2, p)
    doc = json.loads(p.read_text())
    assert text == basis_manifest(2)
    assert [d["index"] for d in doc["ids"]] == list(range(26))
    assert doc["ids"][5]["id"] == "(1,0)" and doc["ids"][5]["eigenvalue"] == 1


def test_project_examples():
    u = SpectralField.unit(3, "(1,0)", 3.0)
    assert project(u, SubspaceSpec.of(["(1,0)"])).tolist() == [3.0]
    assert project(u, SubspaceSpec.of(["(0,1)"])).tolist() == [0.0]
    with pytest.raises(TruncationError):
        project(u, SubspaceSpec.of(["(4,0)"]))


def test_project_full_preserves_norm(rng):
    u = random_field(rng, 3, mean=True)
    full = SubspaceSpec(basis(3).ids)
    v = project(u, full)
    assert np.array_equal(v, u.coeffs)
    assert math.isclose(np.linalg.norm(v), norm_h(u))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 12))
def test_projection_idempotent(seed, n):
    rng = np.random.default_rng(seed)
    u = random_field(rng, 3, mean=True)
    F = SubspaceSpec.first_n(n)
    once = project(u, F)
    assert np.array_equal(project(embed(once, F, 3), F), once)
    assert np.linalg.norm(once) <= norm_h(u) + 1e-15


def test_norm_examples():
    e = SpectralField.unit(4, "(1,0)")
    assert norm_h(e) == 1.0
    assert math.isclose(norm_v(e), math.sqrt(2.0))
    z = SpectralField.zeros(4)
    assert norm_h(z) == 0.0 and norm_v(z) == 0.0


def test_norm_v_term_by_term(rng):
    u = random_field(rng, 4, mean=True)
    extra = sum((bid.j[0] ** 2 + bid.j[1] ** 2) * u[bid] ** 2
                for bid in basis(4).ids if not bid.is_mean)
    assert math.isclose(norm_v(u) ** 2 - norm_h(u) ** 2, extra, rel_tol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1),
       st.floats(-5, 5).filter(lambda x: x == 0 or abs(x) > 1e-100))
def test_norm_homogeneity(seed, lam):
    u = random_field(np.random.default_rng(seed), 2, mean=True)
    assert math.isclose(norm_h(u * lam), abs(lam) * norm_h(u), rel_tol=1e-12, abs_tol=1e-300)
    assert norm_v(u) >= norm_h(u)


@pytest.mark.parametrize("label", ["(1,0)", "(0,-1)", "(-2,1)", "(3,2)", "(-1,-3)"])
def test_synthesis_matches_explicit_formula(label):
    bid = BasisId.parse(label)
    u = SpectralField.unit(3, bid)
    ref, _ = mode_field(bid.j, 16)
    assert np.abs(evaluate_physical(u, 16) - ref).max() < 1e-14


def test_mean_mode_is_constant():
    g = evaluate_physical(SpectralField.unit(2, "e0^1"), 8)
    assert np.allclose(g[0], 1 / (2 * np.pi)) and np.allclose(g[1], 0.0)
    assert not evaluate_physical(SpectralField.zeros(2), 8).any()


def test_aliasing_guard():
    with pytest.raises(AliasingError):
        evaluate_physical(SpectralField.zeros(4), 9)
    evaluate_physical(SpectralField.zeros(4), 10)


def test_parseval_and_divergence(rng):
    u = random_field(rng, 4, mean=True)
    g = evaluate_physical(u, 16)
    assert math.isclose(np.mean(g[0] ** 2 + g[1] ** 2), norm_h(u) ** 2 / (2 * np.pi) ** 2,
                        rel_tol=1e-12)
    assert np.abs(spectral_divergence(g)).max() < 1e-12


@pytest.mark.parametrize("M", [2, 8])
def test_grid_orthonormality(M):
    n = 4 * M
    b = basis(M)
    G = np.stack([evaluate_physical(SpectralField.unit(M, bid), n).ravel() for bid in b.ids])
    gram = G @ G.T * (2 * np.pi / n) ** 2
    assert np.abs(gram - np.eye(b.size)).max() < 1e-12


def test_stokes_eigenrelation(rng):
    u = random_field(rng, 3, mean=True)
    Lu = u.stokes()
    assert np.array_equal(Lu.coeffs, u.coeffs * basis(3).eig)
    assert Lu[BasisId.mean(1)] == 0.0


def test_field_is_immutable_and_checked():
    u = SpectralField.zeros(2)
    with pytest.raises(ValueError):
        u.coeffs[0] = 1.0
    with pytest.raises(ValueError):
        SpectralField(2, np.zeros(10))
    with pytest.raises(ValueError):
        _ = SpectralField.zeros(2) + SpectralField.zeros(3)


def test_first_n_and_subspace_checks():
    assert SubspaceSpec.first_n(4).labels() == ["(-1,0)", "(0,-1)", "(0,1)", "(1,0)"]
    assert SubspaceSpec.first_n(3, include_mean=True).labels() == ["e0^1", "e0^2", "(-1,0)"]
    with pytest.raises(ValueError):
        SubspaceSpec.of(["(1,0)", "(1,0)"])
    assert SubspaceSpec.first_n(8).radius == 1
