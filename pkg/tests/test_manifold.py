"""Tests for Grassmannian / Stiefel geometry on frames"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grmoe.errors import DimensionMismatch, InvalidArgument, NumericalError
from grmoe.models.frame import Frame, Tangent
from grmoe.services.linalg_core import orthonormality_defect, qr_positive, rng_stream
from grmoe.services.manifold import (
    affinities,
    affinity,
    coordinate_frame,
    frame_from_dict,
    frame_to_dict,
    grassmann_distance,
    haar_frame,
    max_pairwise_overlap,
    orthocomplement,
    overlap,
    pairwise_overlaps,
    retract,
    stack_frames,
    tangent_project,
)


def _rotate(f: Frame, seed: int) -> Frame:
    o, _ = qr_positive(rng_stream(seed, "rot").standard_normal((f.k, f.k)))
    return Frame(f.basis @ o)


def test_haar_frame_is_orthonormal_and_seeded():
    a = haar_frame(20, 4, rng_stream(3, "init"))
    b = haar_frame(20, 4, rng_stream(3, "init"))
    assert orthonormality_defect(a.basis) < 1e-12
    assert np.array_equal(a.basis, b.basis)
    assert (a.d, a.k) == (20, 4)


def test_haar_frame_validates_rank(rng):
    with pytest.raises(InvalidArgument):
        haar_frame(3, 4, rng)
    with pytest.raises(InvalidArgument):
        haar_frame(3, 0, rng)


def test_frame_rejects_non_orthonormal():
    with pytest.raises(NumericalError):
        Frame(np.ones((3, 2)))
    with pytest.raises(InvalidArgument):
        Frame(np.ones(3))


def test_distance_between_disjoint_blocks():
    """Disjoint coordinate blocks sit at the maximal distance sqrt(k)"""
    a = coordinate_frame(8, 3, offset=0)
    b = coordinate_frame(8, 3, offset=3)
    assert grassmann_distance(a, b) == pytest.approx(np.sqrt(3.0), abs=1e-12)
    assert grassmann_distance(a, a) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(2, 12), data=st.data())
def test_quantities_depend_only_on_the_subspace(seed, d, data):
    """Distance, affinity and overlap are invariant to U -> U O"""
    k = data.draw(st.integers(1, d))
    rng = rng_stream(seed, "frames")
    a, b = haar_frame(d, k, rng), haar_frame(d, k, rng)
    x = rng.standard_normal(d)
    ar, br = _rotate(a, seed), _rotate(b, seed + 1)

    dist = grassmann_distance(a, b)
    assert 0.0 <= dist <= np.sqrt(k) + 1e-12
    assert grassmann_distance(ar, br) == pytest.approx(dist, abs=1e-10)
    assert grassmann_distance(b, a) == pytest.approx(dist, abs=1e-10)
    assert affinity(ar, x) == pytest.approx(affinity(a, x), rel=1e-10, abs=1e-12)
    assert overlap(ar, br) == pytest.approx(overlap(a, b), rel=1e-10, abs=1e-12)
    assert 0.0 <= affinity(a, x) <= float(x @ x) + 1e-10


def test_affinity_matches_batched_form(haar_bank, rng):
    X = rng.standard_normal((7, 10))
    A = affinities(haar_bank.bases, X)
    assert A.shape == (7, 4)
    for b in range(7):
        for e, f in enumerate(haar_bank.frames):
            assert A[b, e] == pytest.approx(affinity(f, X[b]), rel=1e-12)


def test_affinity_of_vector_inside_the_subspace():
    f = coordinate_frame(5, 2, offset=1)
    x = np.array([0.0, 3.0, 4.0, 0.0, 0.0])
    assert affinity(f, x) == pytest.approx(25.0)
    assert affinity(f, np.array([1.0, 0.0, 0.0, 0.0, 1.0])) == 0.0


def test_affinity_validates_input():
    f = coordinate_frame(5, 2)
    with pytest.raises(DimensionMismatch):
        affinity(f, np.ones(4))
    with pytest.raises(NumericalError):
        affinity(f, np.array([np.inf, 0.0, 0.0, 0.0, 0.0]))
    with pytest.raises(DimensionMismatch):
        affinities(stack_frames([f, f]), np.ones((3, 4)))


def test_pairwise_overlaps(haar_bank):
    o = pairwise_overlaps(haar_bank.bases)
    assert o.shape == (4, 4)
    assert np.allclose(np.diag(o), 3.0)
    assert np.allclose(o, o.T)
    upper = o[np.triu_indices(4, 1)]
    assert max_pairwise_overlap(haar_bank.bases) == pytest.approx(upper.max())


def test_stack_frames_requires_common_shape():
    with pytest.raises(DimensionMismatch):
        stack_frames([coordinate_frame(4, 2), coordinate_frame(4, 1)])
    with pytest.raises(InvalidArgument):
        stack_frames([])


def test_tangent_projection_and_retraction(rng):
    f = haar_frame(9, 3, rng)
    g = rng.standard_normal((9, 3))
    t = tangent_project(f, g)
    assert isinstance(t, Tangent)
    sym = f.basis.T @ t.direction
    assert np.allclose(sym + sym.T, 0.0, atol=1e-12)
    # projecting twice changes nothing
    again = tangent_project(f, t.direction)
    assert np.allclose(again.direction, t.direction, atol=1e-12)

    moved = retract(Tangent(f, 0.1 * t.direction))
    assert orthonormality_defect(moved.basis) < 1e-12
    assert 0.0 < grassmann_distance(f, moved) < 1.0


def test_haar_pairs_have_mean_overlap_k_squared_over_d(rng):
    d, k = 20, 4
    vals = [overlap(haar_frame(d, k, rng), haar_frame(d, k, rng)) for _ in range(2000)]
    assert np.mean(vals) == pytest.approx(k * k / d, rel=0.05)


def test_small_retraction_steps_are_first_order(rng):
    f = haar_frame(9, 3, rng)
    xi = tangent_project(f, rng.standard_normal((9, 3))).direction
    xi = xi / np.linalg.norm(xi)
    errs = []
    for eps in (1e-2, 1e-3):
        moved = retract(Tangent(f, eps * xi))
        # moves by eps * xi up to second-order terms
        errs.append(np.linalg.norm(moved.basis - (f.basis + eps * xi)))
        step = np.linalg.norm(moved.basis - f.basis) / eps
        assert step == pytest.approx(1.0, rel=2e-2)
    assert 50.0 < errs[0] / errs[1] < 200.0


def test_retract_zero_step_returns_base(rng):
    f = haar_frame(6, 2, rng)
    assert retract(Tangent(f, np.zeros((6, 2)))) is f


def test_tangent_rejects_wrong_shape_or_non_tangent(rng):
    f = haar_frame(6, 2, rng)
    with pytest.raises(DimensionMismatch):
        tangent_project(f, np.zeros((6, 3)))
    with pytest.raises(NumericalError):
        Tangent(f, f.basis)


def test_orthocomplement_completes_the_identity(rng):
    f = haar_frame(7, 3, rng)
    c = orthocomplement(f)
    assert (c.d, c.k) == (7, 4)
    full = f.basis @ f.basis.T + c.basis @ c.basis.T
    assert np.allclose(full, np.eye(7), atol=1e-12)
    with pytest.raises(InvalidArgument):
        orthocomplement(coordinate_frame(3, 3))


def test_frame_json_interface(rng):
    f = haar_frame(8, 2, rng)
    payload = frame_to_dict(f)
    assert payload["d"] == 8 and payload["k"] == 2 and len(payload["basis"]) == 16
    # exact bits survive
    assert np.array_equal(frame_from_dict(payload).basis, f.basis)


def test_frame_from_dict_repairs_small_defects_and_rejects_large(rng):
    f = haar_frame(8, 2, rng)
    nudged = frame_to_dict(Frame(f.basis))
    nudged["basis"] = (f.basis * (1.0 + 1e-8)).reshape(-1).tolist()
    repaired = frame_from_dict(nudged)
    assert orthonormality_defect(repaired.basis) < 1e-12
    assert grassmann_distance(repaired, f) < 1e-10

    broken = dict(nudged, basis=(f.basis * 1.01).reshape(-1).tolist())
    with pytest.raises(InvalidArgument):
        frame_from_dict(broken)
    with pytest.raises(InvalidArgument):
        frame_from_dict({"d": 8, "k": 2, "basis": [0.0] * 3})
    with pytest.raises(InvalidArgument):
        frame_from_dict({"basis": []})


def test_coordinate_frame_bounds():
    with pytest.raises(InvalidArgument):
        coordinate_frame(4, 3, offset=2)
