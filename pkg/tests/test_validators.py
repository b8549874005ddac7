import numpy as np
import pytest

from src.errors import (
    BasisError,
    ConfigError,
    DimensionMismatchError,
    EmptyInputError,
    HullError,
    RegimeError,
    SpecError,
    exit_code_for,
)
from src.symtensor import SymTensor, metric_tensor
from src.validators import (
    short_tensor,
    validate_dimension,
    validate_orthogonal_matrix,
    validate_orthonormal_basis,
    validate_points,
    validate_spec_indices,
    validate_tolerance,
    validate_unit_vector,
)


class TestValidators:
    def test_validate_dimension(self):
        assert validate_dimension(3) == 3
        assert validate_dimension(4.0) == 4

        with pytest.raises(DimensionMismatchError):
            validate_dimension(5)
        with pytest.raises(DimensionMismatchError):
            validate_dimension(2.5)

    def test_validate_points(self):
        assert validate_points([1.0, 2.0, 3.0]).shape == (1, 3)
        assert validate_points([[0, 0], [1, 1]], n=2).dtype == float

        with pytest.raises(EmptyInputError):
            validate_points([])
        with pytest.raises(DimensionMismatchError):
            validate_points([[0, 0], [1, 1]], n=3)
        with pytest.raises(ValueError):
            validate_points([[0.0, np.nan]])

    def test_unit_vectors_and_bases(self):
        assert validate_unit_vector([0.0, 1.0, 0.0]).tolist() == [0.0, 1.0, 0.0]
        assert validate_orthonormal_basis([], n=3).shape == (0, 3)
        assert validate_orthonormal_basis([[1, 0, 0], [0, 1, 0]], n=3).shape == (2, 3)

        with pytest.raises(BasisError):
            validate_unit_vector([1.0, 1.0])
        with pytest.raises(BasisError):
            validate_orthonormal_basis([[1, 0, 0], [1, 0, 0]])
        with pytest.raises(DimensionMismatchError):
            validate_orthonormal_basis([[1, 0]], n=3)

    def test_validate_orthogonal_matrix(self):
        c, s = np.cos(0.3), np.sin(0.3)
        assert validate_orthogonal_matrix([[c, -s], [s, c]]).shape == (2, 2)

        with pytest.raises(BasisError):
            validate_orthogonal_matrix([[2.0, 0.0], [0.0, 1.0]])
        with pytest.raises(DimensionMismatchError):
            validate_orthogonal_matrix(np.eye(3)[:2])

    def test_validate_spec_indices(self):
        validate_spec_indices(3, 1, 0, 2, 1, 0)
        validate_spec_indices(3, 2, 1, 0, 2, 1)

        with pytest.raises(SpecError):
            validate_spec_indices(3, 3, 0, 0, 0, 0)
        with pytest.raises(SpecError):
            validate_spec_indices(3, 0, 0, 0, 1, 0)
        with pytest.raises(SpecError):
            validate_spec_indices(3, 1, -1, 0, 0, 0)

    def test_validate_tolerance(self):
        assert validate_tolerance(1e-8) == 1e-8
        for bad in (0.0, -1.0, float("inf")):
            with pytest.raises(ValueError):
                validate_tolerance(bad)

    def test_short_tensor(self):
        assert short_tensor(SymTensor.scalar(2.5, 3)) == "2.5"
        assert short_tensor(metric_tensor(3)) == "rank2/n3 max|c|=1"
        assert short_tensor(None) == "None"


class TestExitCodes:
    def test_mapping(self):
        assert exit_code_for(RegimeError("coarse")) == 3
        assert exit_code_for(HullError("qhull")) == 3
        assert exit_code_for(ConfigError("bad file")) == 2
        assert exit_code_for(FileNotFoundError("missing")) == 2
        assert exit_code_for(KeyError("surprise")) == 1
