from __future__ import annotations

import numpy as np
import pytest

from ialut.errors import FormatError, ShapeMismatchError
from ialut.fusion import (
    BasisLutSet,
    export,
    factorized_param_count,
    fuse,
    identity_ialut,
    identity_lut3,
    init_basis,
)
from ialut.lut_core import Grid1D, IaLut4, Lut3, lut_apply


class TestInitBasis:
    def test_initial_fusion_is_identity(self, rng):
        basis, w = init_basis(3, 5)
        np.testing.assert_array_equal(w, [1.0, 0.0, 0.0])
        lut = fuse(basis, w)
        assert isinstance(lut, IaLut4)
        np.testing.assert_array_equal(lut.values, identity_ialut(5).values)
        for p in rng.random((20, 4)):
            np.testing.assert_allclose(lut_apply(lut, p), p[:3], atol=1e-12)

    def test_three_d_basis(self):
        basis, w = init_basis(2, 4, four_d=False)
        assert not basis.is_4d
        lut = fuse(basis, w)
        assert isinstance(lut, Lut3)
        np.testing.assert_array_equal(lut.values, identity_lut3(4).values)

    def test_rejects_empty_basis(self):
        with pytest.raises(FormatError):
            init_basis(0, 5)

    def test_default_parameter_count(self):
        basis, _ = init_basis(3, 33)
        assert basis.param_count == 10_673_289


class TestFuse:
    def test_weighted_sum(self, rng):
        grid = Grid1D.uniform(3)
        values = rng.random((3,) + (3,) * 4 + (3,))
        basis = BasisLutSet((grid,) * 4, values)
        w = np.array([0.2, -0.5, 1.3])
        expected = 0.2 * values[0] - 0.5 * values[1] + 1.3 * values[2]
        np.testing.assert_allclose(fuse(basis, w).values, expected, atol=1e-15)

    def test_fuse_does_not_clamp_but_export_does(self):
        grid = Grid1D.uniform(2)
        basis = BasisLutSet((grid,) * 4, np.full((1,) + (2,) * 4 + (3,), 0.8))
        assert fuse(basis, [2.0]).values.max() == pytest.approx(1.6)
        exported = export(basis, [2.0])
        assert exported.values.max() == 1.0
        assert exported.values.min() >= 0.0

    def test_weight_length_mismatch(self):
        basis, _ = init_basis(3, 3)
        with pytest.raises(ShapeMismatchError):
            fuse(basis, [1.0, 0.0])

    def test_non_finite_weights(self):
        basis, _ = init_basis(2, 3)
        with pytest.raises(FormatError):
            fuse(basis, [1.0, float("nan")])

    def test_fusion_is_linear_in_the_lookup(self, rng):
        grid = Grid1D.uniform(4)
        values = rng.random((2,) + (4,) * 4 + (3,)) * 0.5
        basis = BasisLutSet((grid,) * 4, values)
        w = np.array([0.6, 0.9])
        fused = fuse(basis, w)
        for p in rng.random((20, 4)):
            parts = [lut_apply(IaLut4((grid,) * 4, values[t]), p) for t in range(2)]
            np.testing.assert_allclose(lut_apply(fused, p), w[0] * parts[0] + w[1] * parts[1], atol=1e-12)


class TestBasisLutSet:
    def test_shape_validation(self):
        grid = Grid1D.uniform(3)
        with pytest.raises(ShapeMismatchError):
            BasisLutSet((grid,) * 4, np.zeros((2, 3, 3, 3, 3)))

    def test_grid_count(self):
        grid = Grid1D.uniform(3)
        with pytest.raises(ShapeMismatchError):
            BasisLutSet((grid,) * 2, np.zeros((1, 3, 3, 3)))

    def test_table(self):
        basis, _ = init_basis(2, 3)
        np.testing.assert_array_equal(basis.table(1).values, np.zeros((3,) * 4 + (3,)))
        assert basis.count == 2
        assert basis.size == 3


def test_factorized_parameter_count():
    direct, factorized = factorized_param_count(3, 33)
    entries = 3 * 33**4
    assert direct == 16 * 64 * entries == 3_643_149_312
    assert factorized == 3 * (16 * 64 + entries) == 10_676_361
    assert factorized < direct
