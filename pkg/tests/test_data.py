from decimal import Decimal, getcontext

import numpy as np
import pytest

from seqlab.data import (
    DataError,
    Dataset,
    LongTailSpec,
    SplitSpec,
    class_template,
    load_directory,
    long_tail_counts,
    make_long_tail,
    make_split,
    synth_blobs,
)
from seqlab.image import Image, write_pnm


def decimal_counts(lam, N1, L):
    """Long-tail sizes at 50 significant digits, rounded half up."""
    getcontext().prec = 50
    out = []
    for k in range(1, L + 1):
        exponent = Decimal(-(k - 1)) / Decimal(L - 1)
        x = Decimal(N1) * (Decimal(lam).ln() * exponent).exp()
        out.append(max(1, int((x + Decimal("0.5")).to_integral_value(rounding="ROUND_FLOOR"))))
    return out


@pytest.fixture(scope="module")
def blobs():
    return synth_blobs(10, 30, side=8, noise=0.2, seed=1)


class TestSplit:
    def test_balanced_40(self, blobs):
        lab, unl = make_split(blobs, SplitSpec(40, seed=3))
        assert len(lab) == 40
        assert [len(c) for c in lab.class_indices()] == [4] * 10
        assert len(unl) == len(blobs)

    def test_disjoint(self, blobs):
        lab, unl = make_split(blobs, SplitSpec(40, seed=3, include_labeled_in_unlabeled=False))
        assert not set(lab.indices) & set(unl.indices)
        assert len(lab) + len(unl) == len(blobs)

    def test_everything_labeled(self, blobs):
        _, unl = make_split(blobs, SplitSpec(len(blobs), balanced=False, include_labeled_in_unlabeled=False))
        assert len(unl) == 0

    def test_deterministic(self, blobs):
        a = make_split(blobs, SplitSpec(20, seed=9))[0].indices
        assert a == make_split(blobs, SplitSpec(20, seed=9))[0].indices
        assert a != make_split(blobs, SplitSpec(20, seed=10))[0].indices

    def test_errors(self, blobs):
        with pytest.raises(DataError):
            make_split(blobs, SplitSpec(15))
        with pytest.raises(DataError):
            make_split(blobs, SplitSpec(len(blobs) + 1, balanced=False))
        with pytest.raises(DataError):
            make_split(blobs, SplitSpec(400))


class TestLongTail:
    def test_paper_setting(self):
        counts = long_tail_counts(LongTailSpec(100, 1000, 10, 0.2))
        assert counts == decimal_counts(100, 1000, 10)
        assert counts[0] == 1000 and counts[4] == 129 and counts[-1] == 10
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    @pytest.mark.parametrize("lam,N1,L", [(10, 500, 5), (50, 300, 7), (2, 100, 3), (200, 1000, 10)])
    def test_against_decimal(self, lam, N1, L):
        assert long_tail_counts(LongTailSpec(lam, N1, L, 0.5)) == decimal_counts(lam, N1, L)

    def test_bad_spec(self):
        with pytest.raises(DataError):
            LongTailSpec(1.0, 10, 3, 0.2)
        with pytest.raises(DataError):
            LongTailSpec(10, 10, 3, 0.0)

    def test_make_long_tail(self):
        spec = LongTailSpec(10, 50, 3, 0.2)
        ds = synth_blobs(3, 50, seed=2)
        lab, unl = make_long_tail(ds, spec, seed=1)
        counts = long_tail_counts(spec)
        lab_per = [len(c) for c in lab.class_indices()]
        unl_per = [len(c) for c in unl.class_indices()]
        assert lab_per == [round(0.2 * n) for n in counts]
        assert [a + b for a, b in zip(lab_per, unl_per)] == counts

    def test_head_class_200(self):
        ds = synth_blobs(2, 1000, side=4, noise=0.0)
        lab, _ = make_long_tail(ds, LongTailSpec(100, 1000, 2, 0.2))
        assert len(lab.class_indices()[0]) == 200

    def test_beta_one(self):
        ds = synth_blobs(3, 20, noise=0.0)
        _, unl = make_long_tail(ds, LongTailSpec(4, 20, 3, 1.0))
        assert len(unl) == 0


class TestBlobs:
    def test_noise_free_identical(self):
        ds = synth_blobs(3, 5, noise=0.0)
        for members in ds.class_indices():
            assert len({ds.images[i] for i in members}) == 1

    def test_empty(self):
        assert len(synth_blobs(3, 0)) == 0

    def test_template_mirror(self):
        for k in range(6):
            t = class_template(k, 8)
            np.testing.assert_array_equal(t, t[:, ::-1])

    def test_nearest_template_perfect_at_zero_noise(self):
        ds = synth_blobs(6, 4, noise=0.0, seed=5)
        templates = np.stack([class_template(k, 8).ravel() for k in range(6)])
        x = ds.array() * 255.0
        pred = np.argmin(((x[:, None, :] - templates[None]) ** 2).sum(-1), axis=1)
        assert list(pred) == list(ds.labels)

    def test_seeded(self):
        a, b = synth_blobs(2, 3, seed=4), synth_blobs(2, 3, seed=4)
        assert a.images == b.images


class TestLoadDirectory:
    def test_empty(self, tmp_path):
        (tmp_path / "labels.tsv").write_text("")
        assert len(load_directory(tmp_path)) == 0

    def test_single_image(self, tmp_path):
        write_pnm(tmp_path / "a.pgm", Image(np.full((8, 8), 7, np.uint8)))
        (tmp_path / "labels.tsv").write_text("#classes=3\na.pgm\t2\n")
        ds = load_directory(tmp_path)
        assert len(ds) == 1 and ds.images[0].channels == 1 and ds.labels == (2,)

    def test_label_out_of_range(self, tmp_path):
        write_pnm(tmp_path / "a.pgm", Image(np.zeros((8, 8), np.uint8)))
        (tmp_path / "labels.tsv").write_text("#classes=2\na.pgm\t2\n")
        with pytest.raises(DataError, match=r"labels.tsv:2"):
            load_directory(tmp_path)

    def test_unlisted_file(self, tmp_path):
        write_pnm(tmp_path / "a.pgm", Image(np.zeros((4, 4), np.uint8)))
        (tmp_path / "labels.tsv").write_text("#classes=2\n")
        with pytest.raises(DataError, match="no label"):
            load_directory(tmp_path)

    def test_missing_tsv(self, tmp_path):
        with pytest.raises(DataError):
            load_directory(tmp_path)


def test_dataset_validates_labels():
    with pytest.raises(DataError):
        Dataset([Image(np.zeros((2, 2), np.uint8))], [3], 2)
