"""
Tests for segmentation metrics

Covers:
- Dice on worked examples, set counting over random pairs and shape mismatches
- Largest 8-connected component against a flood-fill oracle
- Zhang-Suen skeletons against hand-traced results and on random blobs
- Mean Sum Distance against brute force, symmetry, translation and empty contours
- Per-frame evaluation on logits
"""
from collections import deque

import pytest
import numpy as np

# Import from src
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.utils.metrics import (
    UndefinedDistanceError,
    dice_score,
    evaluate,
    largest_component,
    mask_to_points,
    msd,
    predict_mask,
    skeletonize,
)


def flood_fill_components(mask: np.ndarray):
    """Pixel sets of 8-connected components by BFS, in raster order of first pixel"""
    seen = np.zeros_like(mask, dtype=bool)
    components = []
    h, w = mask.shape
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            queue = deque([(r, c)])
            seen[r, c] = True
            pixels = set()
            while queue:
                y, x = queue.popleft()
                pixels.add((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            components.append(pixels)
    return components


def flood_fill_sizes(mask: np.ndarray):
    return [len(c) for c in flood_fill_components(mask)]


def random_pair(seed: int, size: int = 12):
    """Two non-empty random masks"""
    rng = np.random.default_rng(seed)
    density = rng.uniform(0.1, 0.6)
    a = rng.random((size, size)) < density
    b = rng.random((size, size)) < density
    a[rng.integers(size), rng.integers(size)] = True
    b[rng.integers(size), rng.integers(size)] = True
    return a, b


def random_blob(seed: int, size: int = 32) -> np.ndarray:
    """Union of one to three discs of radius 2 to 5"""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        r, c = rng.integers(6, size - 6, 2)
        radius = rng.uniform(2.0, 5.0)
        mask |= (rows - r) ** 2 + (cols - c) ** 2 <= radius ** 2
    return mask


def brute_msd(u: np.ndarray, v: np.ndarray) -> float:
    d = np.sqrt(((u[:, None, :] - v[None, :, :]) ** 2).sum(-1))
    return (d.min(axis=0).sum() + d.min(axis=1).sum()) / (len(u) + len(v))


class TestDice:
    """Dice overlap"""

    def test_half_overlap(self):
        """Test |P|=4, |G|=4, |P n G|=2 gives 0.5"""
        pred = np.zeros((4, 4), dtype=bool)
        gt = np.zeros((4, 4), dtype=bool)
        pred[0, :4] = True
        gt[0, 2:] = True
        gt[1, :2] = True

        assert dice_score(pred, gt) == pytest.approx(0.5)

    def test_identical_and_disjoint(self):
        """Test identical masks score 1 and disjoint masks 0"""
        a = np.eye(5, dtype=bool)

        assert dice_score(a, a) == 1.0
        assert dice_score(a, ~a) == 0.0

    def test_both_empty(self):
        """Test two empty masks score 1"""
        empty = np.zeros((3, 3), dtype=bool)

        assert dice_score(empty, empty) == 1.0

    def test_one_empty(self):
        """Test an empty prediction against a non-empty truth scores 0"""
        gt = np.zeros((3, 3), dtype=bool)
        gt[1, 1] = True

        assert dice_score(np.zeros((3, 3), dtype=bool), gt) == 0.0

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_set_counting(self, seed):
        """Test Dice equals the pixel-set formula on random pairs"""
        a, b = random_pair(seed)
        pa, pb = set(zip(*np.nonzero(a))), set(zip(*np.nonzero(b)))

        assert dice_score(a, b) == 2 * len(pa & pb) / (len(pa) + len(pb))

    def test_shape_mismatch(self):
        """Test differing shapes raise ValueError"""
        with pytest.raises(ValueError, match="differ"):
            dice_score(np.zeros((3, 3)), np.zeros((3, 4)))


class TestLargestComponent:
    """Largest 8-connected component"""

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_flood_fill(self, seed):
        """Test the kept pixels are exactly the first largest flood-fill component"""
        mask = np.random.default_rng(seed).random((16, 16)) > 0.6
        components = flood_fill_components(mask)
        expected = max(components, key=len)

        kept = largest_component(mask)

        assert set(zip(*np.nonzero(kept))) == expected
        assert flood_fill_sizes(kept) == [len(expected)]

    def test_diagonal_neighbors_connect(self):
        """Test diagonal pixels belong to one component"""
        mask = np.eye(4, dtype=bool)

        np.testing.assert_array_equal(largest_component(mask), mask)

    def test_tie_goes_to_first_in_scan_order(self):
        """Test equal components resolve to the one seen first"""
        mask = np.zeros((5, 5), dtype=bool)
        mask[0, 3:5] = True
        mask[3, 0:2] = True

        kept = largest_component(mask)

        assert kept[0, 3] and not kept[3, 0]

    def test_empty(self):
        """Test an empty mask stays empty"""
        assert not largest_component(np.zeros((4, 4), dtype=bool)).any()


class TestSkeleton:
    """Zhang-Suen thinning"""

    def test_bar_thins_to_middle_row(self):
        """Test a 9x3 bar thins to six pixels on its middle row, one lost on the left and two on the right"""
        mask = np.zeros((7, 13), dtype=bool)
        mask[2:5, 2:11] = True
        expected = np.zeros_like(mask)
        expected[3, 3:9] = True

        np.testing.assert_array_equal(skeletonize(mask), expected)

    def test_hand_traced_rectangle(self):
        """Test a 6x4 block thins to a two-pixel segment on row 2"""
        mask = np.zeros((6, 8), dtype=bool)
        mask[1:5, 1:7] = True
        expected = np.zeros_like(mask)
        expected[2, 3:5] = True

        np.testing.assert_array_equal(skeletonize(mask), expected)

    def test_two_by_two_square_vanishes(self):
        """Test the 2x2 block is deleted entirely in the first subiteration"""
        mask = np.zeros((4, 4), dtype=bool)
        mask[1:3, 1:3] = True

        assert not skeletonize(mask).any()

    @pytest.mark.parametrize("seed", range(500))
    def test_random_blob_properties(self, seed):
        """Test subset, idempotence and one skeleton component per blob component"""
        mask = random_blob(seed)

        skel = skeletonize(mask)

        assert not (skel & ~mask).any()
        np.testing.assert_array_equal(skeletonize(skel), skel)
        blob_components = flood_fill_components(mask)
        skel_components = flood_fill_components(skel)
        assert len(skel_components) == len(blob_components)
        for component in skel_components:
            assert sum(component <= blob for blob in blob_components) == 1

    def test_thin_line_unchanged(self):
        """Test a one-pixel line is already its own skeleton"""
        mask = np.zeros((5, 9), dtype=bool)
        mask[2, 1:8] = True

        np.testing.assert_array_equal(skeletonize(mask), mask)

    def test_subset_and_idempotent(self):
        """Test the skeleton lies inside the mask and thinning it again changes nothing"""
        mask = np.zeros((20, 20), dtype=bool)
        mask[4:12, 3:17] = True

        skel = skeletonize(mask)

        assert skel.any()
        assert not (skel & ~mask).any()
        np.testing.assert_array_equal(skeletonize(skel), skel)

    def test_empty(self):
        """Test an empty mask has an empty skeleton"""
        assert not skeletonize(np.zeros((6, 6), dtype=bool)).any()


class TestMaskToPoints:
    """Pixel centres as contour points"""

    def test_column_is_x(self):
        """Test mask[5, 3] gives the point (3, 5)"""
        mask = np.zeros((8, 8), dtype=bool)
        mask[5, 3] = True

        np.testing.assert_array_equal(mask_to_points(mask), [[3.0, 5.0]])

    def test_scan_order(self):
        """Test points come out in row-major order"""
        mask = np.zeros((3, 3), dtype=bool)
        mask[2, 0] = mask[0, 2] = True

        np.testing.assert_array_equal(mask_to_points(mask), [[2.0, 0.0], [0.0, 2.0]])


class TestMeanSumDistance:
    """Mean Sum Distance"""

    def test_worked_example(self):
        """Test U={(0,0),(0,2)}, V={(0,1)} gives 1.0"""
        assert msd(np.array([[0.0, 0.0], [0.0, 2.0]]), np.array([[0.0, 1.0]])) == pytest.approx(1.0)

    def test_identical_sets(self):
        """Test a set against itself is at distance 0"""
        pts = np.random.default_rng(0).random((10, 2)) * 50

        assert msd(pts, pts) == pytest.approx(0.0)

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_brute_force(self, seed):
        """Test the KD-tree result equals the all-pairs computation on random mask pairs"""
        a, b = random_pair(seed)
        u, v = mask_to_points(a), mask_to_points(b)

        assert abs(msd(u, v) - brute_msd(u, v)) < 1e-9

    @pytest.mark.parametrize("seed", range(20))
    def test_translation_invariant(self, seed):
        """Test shifting both point sets by the same integer offset leaves MSD unchanged"""
        a, b = random_pair(seed)
        u, v = mask_to_points(a), mask_to_points(b)
        shift = np.random.default_rng(seed).integers(-5, 6, 2).astype(np.float64)

        assert msd(u + shift, v + shift) == pytest.approx(msd(u, v), abs=1e-9)

    def test_non_negative(self):
        """Test MSD is never negative"""
        a, b = random_pair(7)

        assert msd(mask_to_points(a), mask_to_points(b)) >= 0.0

    def test_symmetric(self):
        """Test msd(u, v) == msd(v, u)"""
        rng = np.random.default_rng(5)
        u, v = rng.random((7, 2)), rng.random((12, 2))

        assert msd(u, v) == pytest.approx(msd(v, u))

    def test_empty_raises(self):
        """Test an empty point set is undefined, not zero"""
        with pytest.raises(UndefinedDistanceError):
            msd(np.zeros((0, 2)), np.ones((3, 2)))
        with pytest.raises(UndefinedDistanceError):
            msd(np.ones((3, 2)), np.zeros((0, 2)))


class TestEvaluate:
    """Per-frame evaluation"""

    def _band(self):
        mask = np.zeros((16, 16), dtype=bool)
        mask[7:10, 2:14] = True
        contour = np.column_stack([np.arange(2, 14, dtype=np.float64), np.full(12, 8.0)])
        return mask, contour

    def test_threshold_at_zero_logit(self):
        """Test a logit of exactly 0 is background"""
        np.testing.assert_array_equal(predict_mask(np.array([-1.0, 0.0, 1e-6])), [False, False, True])

    def test_perfect_prediction(self):
        """Test logits reproducing the mask give Dice 1 and a small MSD"""
        mask, contour = self._band()
        logits = np.where(mask, 5.0, -5.0)

        result = evaluate(logits, mask, contour)

        assert result.dice == 1.0
        assert result.msd is not None and result.msd < 1.5

    def test_empty_prediction_has_undefined_msd(self):
        """Test an all-background prediction reports msd None"""
        mask, contour = self._band()

        result = evaluate(np.full((16, 16), -3.0), mask, contour)

        assert result.dice == 0.0
        assert result.msd is None
        assert not result.msd_defined

    def test_accepts_batched_logits(self):
        """Test (1, 1, H, W) logits are reduced to the frame"""
        mask, contour = self._band()
        logits = np.where(mask, 1.0, -1.0)[None, None]

        assert evaluate(logits, mask, contour).dice == 1.0

    def test_spurious_blob_ignored_for_msd(self):
        """Test a small disconnected blob affects Dice but not the MSD skeleton"""
        mask, contour = self._band()
        clean = evaluate(np.where(mask, 1.0, -1.0), mask, contour)
        noisy_pred = mask.copy()
        noisy_pred[0:2, 0:2] = True

        noisy = evaluate(np.where(noisy_pred, 1.0, -1.0), mask, contour)

        assert noisy.dice < clean.dice
        assert noisy.msd == pytest.approx(clean.msd)
