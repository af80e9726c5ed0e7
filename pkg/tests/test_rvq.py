import numpy as np
import pytest

from voxkit import rvq
from voxkit.errors import DimMismatch, InsufficientData, MaskedInput


@pytest.fixture(scope="module")
def random_frames():
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((16, 12)) * 3.0
    return centers[rng.integers(0, 16, 600)] + rng.standard_normal((600, 12)) * 0.3


class TestTrain:
    def test_two_frames_two_codewords(self):
        frames = np.array([[0.0, 0.0], [1.0, 1.0]])
        books = rvq.train_rvq(frames, layers=1, vocab=2, seed=0)
        got = sorted(books.codebooks[0].tolist())
        assert np.allclose(got, [[0, 0], [1, 1]])

    def test_residual_energy_non_increasing(self, random_frames):
        books = rvq.train_rvq(random_frames, layers=4, vocab=16, seed=1)
        residual = random_frames.copy()
        last = np.inf
        for layer in range(4):
            centers = books.codebooks[layer].astype(np.float64)
            idx = rvq._assign(residual, centers)
            residual = residual - centers[idx]
            energy = float(np.mean(residual ** 2))
            assert energy <= last + 1e-12
            last = energy

    def test_determinism(self, random_frames):
        a = rvq.train_rvq(random_frames, layers=3, vocab=16, seed=7)
        b = rvq.train_rvq(random_frames, layers=3, vocab=16, seed=7)
        assert np.array_equal(a.codebooks, b.codebooks)

    def test_no_duplicate_codewords(self, random_frames):
        books = rvq.train_rvq(random_frames, layers=4, vocab=16, seed=2)
        for layer in range(4):
            cw = books.codebooks[layer]
            d = np.linalg.norm(cw[:, None] - cw[None, :], axis=-1)
            d[np.diag_indices(len(cw))] = np.inf
            assert d.min() > 0

    def test_insufficient_data(self):
        frames = np.ones((10, 4))
        with pytest.raises(InsufficientData):
            rvq.train_rvq(frames, layers=1, vocab=4, seed=0)


class TestEncodeDecode:
    def test_exact_codeword_zero_residual(self):
        frames = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, -1.0]])
        books = rvq.train_rvq(frames, layers=1, vocab=3, seed=0)
        idx = rvq.encode(frames[1:2], books)
        assert np.allclose(books.codebooks[0][idx[0, 0]], frames[1])
        rec = rvq.decode(idx, books)
        assert np.allclose(rec, frames[1:2], atol=1e-6)

    def test_encode_idempotent_roundtrip_single_layer(self, random_frames):
        # exact for one layer: the nearest codeword to a codeword is itself
        books = rvq.train_rvq(random_frames, layers=1, vocab=16, seed=3)
        grid = rvq.encode(random_frames, books)
        again = rvq.encode(rvq.decode(grid, books), books)
        assert np.array_equal(grid, again)

    def test_reencode_stable_for_deep_stacks(self, random_frames):
        # greedy multi-layer re-encoding may flip on Voronoi boundaries;
        # it must stay rare
        books = rvq.train_rvq(random_frames, layers=3, vocab=16, seed=3)
        grid = rvq.encode(random_frames, books)
        again = rvq.encode(rvq.decode(grid, books), books)
        assert np.mean(grid != again) < 0.01

    def test_mse_strictly_decreasing_in_layers(self, random_frames):
        books = rvq.train_rvq(random_frames, layers=4, vocab=16, seed=4)
        mses = [rvq.reconstruction_mse(random_frames, books, k)
                for k in range(1, 5)]
        assert all(b < a for a, b in zip(mses, mses[1:]))

    def test_contraction_on_training_data(self, random_frames):
        books = rvq.train_rvq(random_frames, layers=4, vocab=16, seed=5)
        rec = rvq.decode(rvq.encode(random_frames, books), books)
        assert np.mean((rec - random_frames) ** 2) <= np.mean(random_frames ** 2)

    def test_decode_zero_codewords(self):
        books = rvq.RvqCodebooks(
            codebooks=np.zeros((2, 4, 3), dtype=np.float32),
            mean=np.zeros(3, dtype=np.float32),
            scale=np.ones(3, dtype=np.float32))
        grid = np.array([[0, 1], [2, 3]])
        assert np.array_equal(rvq.decode(grid, books), np.zeros((2, 3)))

    def test_decode_single_layer_exact(self):
        rng = np.random.default_rng(6)
        cw = rng.standard_normal((1, 8, 5)).astype(np.float32)
        books = rvq.RvqCodebooks(cw, np.zeros(5, np.float32), np.ones(5, np.float32))
        grid = np.array([[3, 0, 7]])
        assert np.allclose(rvq.decode(grid, books), cw[0][[3, 0, 7]])

    def test_decode_rejects_mask(self):
        books = rvq.RvqCodebooks(np.zeros((1, 2, 2), np.float32),
                                 np.zeros(2, np.float32), np.ones(2, np.float32))
        with pytest.raises(MaskedInput):
            rvq.decode(np.array([[0, -1]]), books)

    def test_dim_mismatch(self, random_frames):
        books = rvq.train_rvq(random_frames, layers=2, vocab=16, seed=0)
        with pytest.raises(DimMismatch):
            rvq.encode(np.zeros((4, 5)), books)


class TestCodebookFile:
    def test_roundtrip_exact(self, random_frames, tmp_path):
        books = rvq.train_rvq(random_frames, layers=3, vocab=16, seed=8,
                              normalize=True)
        path = tmp_path / "books.rvq"
        rvq.save_codebooks(books, path)
        back = rvq.load_codebooks(path)
        assert np.array_equal(back.codebooks, books.codebooks)
        assert np.array_equal(back.mean, books.mean)
        assert np.array_equal(back.scale, books.scale)
        grid = rvq.encode(random_frames, books)
        assert np.array_equal(rvq.encode(random_frames, back), grid)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.rvq"
        path.write_bytes(b"NOTAVOXFILE")
        with pytest.raises(ValueError):
            rvq.load_codebooks(path)

    def test_normalized_training_roundtrip(self, random_frames):
        scaled = random_frames * np.array([1000.0] + [1.0] * 11)
        books = rvq.train_rvq(scaled, layers=2, vocab=16, seed=9, normalize=True)
        rec = rvq.decode(rvq.encode(scaled, books), books)
        assert np.mean((rec - scaled) ** 2) < np.mean(
            (scaled - scaled.mean(0)) ** 2)
