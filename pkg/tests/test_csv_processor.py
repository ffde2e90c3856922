"""
Tests for CSV data loading and cell normalization.
"""

import math

import pytest

from processors.csv_processor import process_csv, read_data_csv, read_eta_csv, read_residuals_csv
from processors.normalizer import is_missing, is_valid_label, normalize_eta, normalize_label, normalize_number
from utils.errors import DataFormatError, EmptyData


def _write(tmp_path, name, text, encoding="utf-8"):
    path = tmp_path / name
    path.write_bytes(text.encode(encoding))
    return str(path)


class TestNormalizer:
    def test_labels(self):
        assert normalize_label("\ufeff dE H ") == "dE_H"
        assert normalize_label(None) == ""
        assert is_valid_label("K_H2")
        assert not is_valid_label("2x")

    def test_numbers(self):
        assert normalize_number(" 1.5 ") == 1.5
        assert normalize_number(3) == 3.0
        assert math.isnan(normalize_number("1,5"))
        assert math.isnan(normalize_number("N/A"))
        assert is_missing("  ")

    def test_eta(self):
        assert normalize_eta("inf") == math.inf
        assert normalize_eta("0.25") == 0.25
        assert math.isnan(normalize_eta(-0.1))
        assert math.isnan(normalize_eta("abc"))


class TestProcessCsv:
    def test_numeric_frame(self, tmp_path):
        path = _write(tmp_path, "data.csv", "a, b\n1,2\n3.5,-4e-1\n")
        frame = process_csv(path)
        assert list(frame.columns) == ["a", "b"]
        assert frame["b"].tolist() == [2.0, -0.4]

    def test_bad_rows_are_reported(self, tmp_path):
        path = _write(tmp_path, "data.csv", "a,b\n1,2\n,3\n4,x\n5,6\n")
        with pytest.raises(DataFormatError) as info:
            process_csv(path)
        assert info.value.details["rows"] == [3, 4]

    def test_latin1_header(self, tmp_path):
        path = _write(tmp_path, "data.csv", "caf\xe9\n1\n", encoding="latin-1")
        assert list(process_csv(path).columns) == ["caf\xe9"]

    def test_empty_inputs(self, tmp_path):
        with pytest.raises(EmptyData):
            process_csv(_write(tmp_path, "empty.csv", ""))
        with pytest.raises(EmptyData):
            process_csv(_write(tmp_path, "header.csv", "a,b\n"))

    def test_missing_and_duplicate_columns(self, tmp_path):
        with pytest.raises(DataFormatError):
            process_csv(_write(tmp_path, "d.csv", "a,b\n1,2\n"), required=["a", "c"])
        with pytest.raises(DataFormatError):
            process_csv(_write(tmp_path, "dup.csv", "a, a\n1,2\n"))


class TestReaders:
    def test_data_follows_model_order(self, tmp_path):
        path = _write(tmp_path, "data.csv", "b,extra,a\n1,0,2\n3,0,4\n")
        frame = read_data_csv(path, ["a", "b"])
        assert list(frame.columns) == ["a", "b"]
        assert frame["a"].tolist() == [2.0, 4.0]

    def test_residual_column(self, tmp_path):
        path = _write(tmp_path, "r.csv", "x,y\n1,2\n3,4\n")
        assert read_residuals_csv(path, "y").tolist() == [2.0, 4.0]
        with pytest.raises(DataFormatError):
            read_residuals_csv(path)
        with pytest.raises(DataFormatError):
            read_residuals_csv(path, "z")

    def test_eta_file(self, tmp_path):
        path = _write(tmp_path, "eta.csv", "Vertex,ETA\ns1,0.5\ns2,inf\n")
        assert read_eta_csv(path) == {"s1": 0.5, "s2": math.inf}

    def test_eta_file_rejects_negative(self, tmp_path):
        path = _write(tmp_path, "eta.csv", "vertex,eta\ns1,-1\n")
        with pytest.raises(DataFormatError) as info:
            read_eta_csv(path)
        assert info.value.details["rows"] == [2]
