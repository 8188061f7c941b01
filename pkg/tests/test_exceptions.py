"""
Tests for custom exception classes
"""

import pytest

from pynrsfm.exceptions import (
    CheckpointError,
    CombinatorialLimitError,
    ConfigurationError,
    ContractError,
    DegenerateCameraError,
    LandmarkParseError,
    NRSfMException,
    NumericError,
    SchemaError,
    ShapeError,
    TrainingAbortedError,
    UsageError,
)


class TestNRSfMException:
    """Test base exception class"""

    def test_basic_exception(self):
        exc = NRSfMException("Test error")
        assert str(exc) == "Test error"
        assert exc.error_code == "NRSfMException"
        assert exc.exit_code == 2

    def test_custom_error_code(self):
        exc = NRSfMException("Test error", error_code="CUSTOM_CODE")
        assert exc.error_code == "CUSTOM_CODE"


class TestConfigurationError:
    def test_with_suggestions(self):
        exc = ConfigurationError("Unknown key 'epoch'", config_field="epoch",
                                 suggestions=["epochs", "seed", "lr", "threads"])
        assert str(exc) == "Unknown key 'epoch'. Did you mean: epochs, seed, lr?"
        assert exc.config_field == "epoch"
        assert exc.error_code == "CONFIG_ERROR"

    def test_without_suggestions(self):
        exc = ConfigurationError("bad")
        assert str(exc) == "bad"
        assert exc.suggestions == []


class TestShapeError:
    """Test shape error messages"""

    def test_expected_and_actual(self):
        exc = ShapeError("matmul", expected=(3, 2), actual=(2, 2))
        assert str(exc) == "Shape mismatch in matmul: expected (3, 2), got (2, 2)"
        assert exc.operation == "matmul"

    def test_custom_message(self):
        assert str(ShapeError("decode", message="custom")) == "custom"

    def test_operation_only(self):
        assert str(ShapeError("encode")) == "Shape mismatch in encode"


class TestLandmarkParseError:
    def test_location_prefix(self):
        exc = LandmarkParseError("data.txt", 12, "expected 2 numbers, got 3")
        assert str(exc) == "data.txt:12: expected 2 numbers, got 3"
        assert exc.line == 12
        assert exc.error_code == "PARSE_ERROR"


class TestNumericErrors:
    """Test the numeric error family"""

    def test_residual_in_message(self):
        exc = NumericError("diverged", residual=1.5)
        assert "residual 1.500e+00" in str(exc)
        assert exc.exit_code == 3

    def test_degenerate_camera(self):
        exc = DegenerateCameraError(1e-9, 1e-6)
        assert isinstance(exc, NumericError)
        assert exc.error_code == "DEGENERATE_CAMERA"
        assert exc.sigma_min == 1e-9

    def test_training_aborted(self):
        exc = TrainingAbortedError(4, checkpoint="last")
        assert "step 4" in str(exc)
        assert exc.checkpoint == "last"
        assert exc.exit_code == 3


class TestExitCodes:
    """Usage problems exit 1, data problems 2, numeric failures 3"""

    @pytest.mark.parametrize("exc,code", [
        (ConfigurationError("x"), 1),
        (UsageError("x"), 1),
        (ShapeError("x"), 2),
        (ContractError("x"), 2),
        (LandmarkParseError("f", 1, "x"), 2),
        (SchemaError("x"), 2),
        (CheckpointError("x"), 2),
        (CombinatorialLimitError(20, 2, 16, 3), 2),
        (NumericError("x"), 3),
    ])
    def test_exit_code(self, exc, code):
        assert exc.exit_code == code
        assert isinstance(exc, NRSfMException)

    def test_combinatorial_message(self):
        exc = CombinatorialLimitError(20, 2, 16, 3)
        assert "20 blocks" in str(exc)
        assert exc.blocks == 20
