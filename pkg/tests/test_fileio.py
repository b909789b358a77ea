import gzip
import struct

import numpy as np
import pytest

from oodkit import fileio
from oodkit.calibration import EmpiricalCdf
from oodkit.errors import CapabilityError, RecordFormatError, ValidationError
from oodkit.models import DiagonalGaussianModel, GmmModel, PpcaModel
from oodkit.statistics import GradientRecord, RecordSet, score_statistic, summarize


def three_records():
    return [
        GradientRecord(1, -1.25, np.array([0.1, -2.0, 3.5])),
        GradientRecord(7, -0.5, np.array([np.pi, 0.0, -1e-300])),
        GradientRecord(42, -100.0, np.array([1e10, -1e-10, 2.0])),
    ]


class TestRecords:
    def test_roundtrip_bit_identical(self, tmp_path):
        path = tmp_path / "r.bin"
        fileio.write_gradient_records(path, three_records())
        back = fileio.read_gradient_records(path)
        for a, b in zip(three_records(), back):
            assert a.id == b.id
            assert np.float64(a.log_density).tobytes() == np.float64(b.log_density).tobytes()
            assert a.gradient.tobytes() == b.gradient.tobytes()

    def test_truncated(self, tmp_path):
        path = tmp_path / "r.bin"
        fileio.write_gradient_records(path, three_records())
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(RecordFormatError, match="byte offset 93"):
            fileio.read_gradient_records(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "r.bin"
        path.write_bytes(b"XXXX" + bytes(9))
        with pytest.raises(RecordFormatError, match="magic"):
            fileio.read_gradient_records(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "r.bin"
        path.write_bytes(struct.pack("<4sIIB", b"OODK", 9, 2, 1))
        with pytest.raises(RecordFormatError, match="version"):
            fileio.read_gradient_records(path)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "r.bin"
        fileio.write_gradient_records(path, three_records())
        data = bytearray(path.read_bytes())
        # log_density of the second row: header 13 + row 40 + id 8
        data[61:69] = struct.pack("<d", np.nan)
        path.write_bytes(bytes(data))
        with pytest.raises(RecordFormatError, match="offset"):
            fileio.read_gradient_records(path)
        with pytest.raises(ValidationError):
            fileio.write_gradient_records(path, [GradientRecord(0, np.nan, np.zeros(3))])
        with pytest.raises(RecordFormatError, match="offset"):
            fileio.read_gradient_records(path)

    def test_layout_mismatch(self, tmp_path):
        path = tmp_path / "r.bin"
        fileio.write_gradient_records(path, three_records())
        with pytest.raises(RecordFormatError):
            fileio.read_gradient_records(path, expected_params=5)

    def test_no_gradient_capability(self, tmp_path):
        path = tmp_path / "r.bin"
        fileio.write_gradient_records(path, RecordSet(np.arange(3), np.zeros(3)))
        recs = fileio.read_gradient_records(path)
        assert not recs.has_gradient
        summ = summarize(RecordSet(np.arange(4), np.zeros(4), np.ones((4, 2))))
        with pytest.raises(CapabilityError, match="score"):
            score_statistic(recs, summ)

    def test_streaming_chunks(self, tmp_path, rng):
        path = tmp_path / "r.bin"
        rs = RecordSet(np.arange(1000), rng.normal(size=1000), rng.normal(size=(1000, 4)))
        fileio.write_gradient_records(path, rs)
        with fileio.RecordReader(path) as reader:
            sizes = [len(c) for c in reader.chunks(chunk_rows=300)]
        assert sizes == [300, 300, 300, 100]


class TestContainers:
    @pytest.mark.parametrize("model", [
        DiagonalGaussianModel([0.5, -1.0], [0.1, 0.2]),
        DiagonalGaussianModel([0.5, -1.0], [0.0, 0.0], mean_only=True),
        GmmModel([0.3, 0.7], [[0.0, 1.0], [2.0, 3.0]], [[1.0, 2.0], [0.5, 0.5]]),
        PpcaModel([0.0, 1.0, 2.0], [[1.0], [0.5], [0.2]], 0.3),
    ])
    def test_model_roundtrip(self, tmp_path, model):
        fileio.save_model(tmp_path / "m.bin", model)
        back = fileio.load_model(tmp_path / "m.bin")
        assert type(back) is type(model)
        np.testing.assert_array_equal(back.params.values, model.params.values)
        assert fileio.model_hash(back) == fileio.model_hash(model)

    def test_summary_roundtrip(self, tmp_path, rng):
        s = summarize(RecordSet(np.arange(20), rng.normal(size=20), rng.normal(size=(20, 3))))
        fileio.save_summary(tmp_path / "s.bin", s)
        back = fileio.load_summary(tmp_path / "s.bin")
        np.testing.assert_array_equal(back.fim.diag, s.fim.diag)
        np.testing.assert_array_equal(back.mean_gradient, s.mean_gradient)
        assert back.mean_log_density == s.mean_log_density

    def test_null_roundtrip(self, tmp_path):
        fileio.save_null(tmp_path / "n.null", EmpiricalCdf([3.0, 1.0, 2.0]), "score", {"plan": "x"})
        loaded = fileio.load_null(tmp_path / "n.null")
        cdf = loaded[0] if isinstance(loaded, tuple) else loaded
        np.testing.assert_array_equal(cdf.sorted_values, [1, 2, 3])

    def test_wrong_container(self, tmp_path):
        fileio.save_null(tmp_path / "n.null", EmpiricalCdf([1.0]), "score")
        with pytest.raises(RecordFormatError):
            fileio.load_model(tmp_path / "n.null")


class TestStatRecords:
    def test_roundtrip(self, tmp_path):
        fileio.write_stat_records(tmp_path / "s.csv", [3, 1], {"score": [0.5, 0.25], "typicality": [1.0, 2.0]})
        ids, table = fileio.read_stat_records(tmp_path / "s.csv")
        np.testing.assert_array_equal(ids, [1, 3])
        np.testing.assert_array_equal(table["score"], [0.25, 0.5])

    def test_non_finite(self, tmp_path):
        (tmp_path / "s.csv").write_text("id,kind,value\n0,score,nan\n")
        with pytest.raises(ValidationError):
            fileio.read_stat_records(tmp_path / "s.csv")


def idx_bytes(shape, payload, type_code=0x08):
    return bytes([0, 0, type_code, len(shape)]) + struct.pack(f">{len(shape)}I", *shape) + bytes(payload)


class TestIdx:
    def test_fixture(self, tmp_path):
        path = tmp_path / "images-idx3-ubyte"
        path.write_bytes(idx_bytes((2, 2, 2), [0, 255, 51, 102, 255, 0, 0, 255]))
        x = fileio.load_idx_images(path)
        np.testing.assert_allclose(x, [[0, 1, 0.2, 0.4], [1, 0, 0, 1]])
        assert x.shape == (2, 4)
        assert x[0, 1] == 1.0 and x[0, 0] == 0.0

    def test_gzip(self, tmp_path):
        path = tmp_path / "images-idx3-ubyte.gz"
        with gzip.open(path, "wb") as fh:
            fh.write(idx_bytes((1, 1, 2), [0, 255]))
        np.testing.assert_array_equal(fileio.load_matrix(path), [[0.0, 1.0]])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x-idx"
        path.write_bytes(b"\x01\x02\x08\x03" + bytes(20))
        with pytest.raises(RecordFormatError, match="magic"):
            fileio.load_idx_images(path)

    def test_payload_mismatch(self, tmp_path):
        path = tmp_path / "x-idx"
        path.write_bytes(idx_bytes((2, 2, 2), [1, 2, 3]))
        with pytest.raises(RecordFormatError):
            fileio.load_idx_images(path)
