import numpy as np
import pytest

from ptap import CsrMatrix, MatrixMarketError, read_matrix_market, write_matrix_market


def test_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    r = rng.integers(0, 20, 80)
    c = rng.integers(0, 13, 80)
    v = rng.uniform(-1e3, 1e3, 80) * rng.choice([1e-12, 1.0, 1e14], 80)
    m = CsrMatrix.from_triplets(20, 13, r, c, v)
    path = tmp_path / "m.mtx"
    write_matrix_market(path, m)
    back = read_matrix_market(path)
    assert back.structure_equal(m)
    assert np.array_equal(back.values, m.values)  # 17 digits round-trips bit-exactly


def test_banner_accepted(tmp_path):
    path = tmp_path / "m.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 3.5\n")
    m = read_matrix_market(path)
    assert m.nrows == 2 and m.ncols == 2 and m.nnz == 1
    assert m.row_cols(0)[0] == 1 and m.values[0] == 3.5


def test_missing_banner(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("2 2 1\n1 2 3.5\n")
    with pytest.raises(MatrixMarketError, match="line 1"):
        read_matrix_market(path)


def test_entry_count_mismatch(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 2 3.5\n")
    with pytest.raises(MatrixMarketError, match="promises 3 entries"):
        read_matrix_market(path)


def test_bad_entry_reports_line(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 3.5\n")
    with pytest.raises(MatrixMarketError, match="line 3"):
        read_matrix_market(path)


def test_comments_and_blank_lines_ok(tmp_path):
    path = tmp_path / "m.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n% comment\n\n2 2 2\n1 1 1\n2 2 2\n"
    )
    m = read_matrix_market(path)
    assert m.nnz == 2
