import numpy as np
import pytest

from ctrkit import phantom
from ctrkit.postproc import (
    EmptyMask,
    MorphConfig,
    StructuringElement,
    cleanup,
    dilate,
    erode,
    extract_box,
    largest_component,
    masks_to_ctr,
    threshold,
)

SQUARE = StructuringElement.SQUARE3
CROSS = StructuringElement.CROSS3


# ------------------------------------------------------------ oracles


def erode_oracle(mask, element):
    h, w = mask.shape
    out = np.zeros_like(mask)
    offsets = [tuple(o) for o in element.offsets()]
    for i in range(h):
        for j in range(w):
            ok = True
            for du, dv in offsets:
                ni, nj = i + du, j + dv
                if ni < 0 or ni >= h or nj < 0 or nj >= w or mask[ni, nj] == 0:
                    ok = False
                    break
            if ok:
                out[i, j] = 1
    return out


def dilate_oracle(mask, element):
    h, w = mask.shape
    out = np.zeros_like(mask)
    offsets = [tuple(o) for o in element.offsets()]
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for du, dv in offsets:
                ni, nj = i + du, j + dv
                if 0 <= ni < h and 0 <= nj < w:
                    out[ni, nj] = 1
    return out


def flood_labels_oracle(mask):
    """Brute-force BFS labeling, 8-connected, row-major seed order."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=int)
    current = 0
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or labels[si, sj]:
                continue
            current += 1
            queue = [(si, sj)]
            labels[si, sj] = current
            while queue:
                i, j = queue.pop()
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni, nj = i + di, j + dj
                        if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not labels[ni, nj]:
                            labels[ni, nj] = current
                            queue.append((ni, nj))
    return labels


def largest_component_oracle(mask):
    labels = flood_labels_oracle(mask)
    n = labels.max()
    if n == 0:
        return None
    areas = [(labels == k).sum() for k in range(1, n + 1)]
    best = 1 + max(range(n), key=lambda k: (areas[k], -k))
    return (labels == best).astype(np.uint8)


# ---------------------------------------------------------- threshold


def test_threshold_all_above():
    assert threshold(np.full((4, 4), 0.7), 0.5).all()


def test_threshold_all_below():
    assert not threshold(np.full((4, 4), 0.3), 0.5).any()


def test_threshold_boundary_maps_to_one():
    assert threshold(np.full((2, 2), 0.5), 0.5).all()


def test_threshold_monotone_in_t():
    rng = np.random.default_rng(0)
    prob = rng.random((16, 16))
    m1 = threshold(prob, 0.3)
    m2 = threshold(prob, 0.7)
    assert np.all(m2 <= m1)


# --------------------------------------------------------- morphology


def test_erode_border_of_solid_block():
    mask = np.ones((5, 5), dtype=np.uint8)
    out = erode(mask, SQUARE)
    expected = np.zeros((5, 5), dtype=np.uint8)
    expected[1:4, 1:4] = 1
    assert np.array_equal(out, expected)


def test_empty_mask_fixed_point():
    empty = np.zeros((6, 6), dtype=np.uint8)
    assert not erode(empty, SQUARE).any()
    assert not dilate(empty, SQUARE).any()


@pytest.mark.parametrize("element", [SQUARE, CROSS])
def test_morphology_matches_oracle_on_randoms(element):
    rng = np.random.default_rng(42)
    for _ in range(200):
        mask = (rng.random((16, 16)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        assert np.array_equal(erode(mask, element), erode_oracle(mask, element))
        assert np.array_equal(dilate(mask, element), dilate_oracle(mask, element))


def test_erosion_dilation_duality_on_interior():
    # erosion(A) == complement(dilation(complement A)), away from borders
    rng = np.random.default_rng(7)
    for _ in range(50):
        mask = (rng.random((20, 20)) < 0.5).astype(np.uint8)
        er = erode(mask, SQUARE)
        dual = 1 - dilate(1 - mask, SQUARE)
        assert np.array_equal(er[2:-2, 2:-2], dual[2:-2, 2:-2])


def test_anti_extensivity_chain():
    rng = np.random.default_rng(8)
    for _ in range(100):
        mask = (rng.random((16, 16)) < 0.6).astype(np.uint8)
        e1 = erode(mask, SQUARE)
        opened = dilate(erode(e1, SQUARE), SQUARE)
        assert np.all(opened <= e1)
        assert np.all(e1 <= mask)


# ------------------------------------------------------------ cleanup


def test_cleanup_removes_isolated_specks():
    prob = np.zeros((16, 16))
    prob[8, 8] = 0.9  # single-pixel noise
    prob[2:14, 2:14] = 0.0
    prob[4:12, 4:12] = 0.9  # solid block
    out = cleanup(prob, MorphConfig())
    assert out[8, 8] == 1  # inside the block
    prob2 = np.zeros((16, 16))
    prob2[1, 1] = 0.9
    assert not cleanup(prob2, MorphConfig()).any()


def test_cleanup_is_the_documented_composition():
    rng = np.random.default_rng(9)
    prob = rng.random((24, 24))
    cfg = MorphConfig()
    direct = dilate(erode(erode(threshold(prob, 0.5))))
    assert np.array_equal(cleanup(prob, cfg), direct)


def test_cleanup_shrinks_ellipse_by_net_one_ring():
    spec = phantom.PhantomSpec(noise_sigma=0.0)
    ellipse = phantom.generate(spec).masks.thorax
    out = cleanup(ellipse.astype(float), MorphConfig())
    oracle = dilate_oracle(erode_oracle(erode_oracle(ellipse, SQUARE), SQUARE), SQUARE)
    assert np.array_equal(out, oracle)
    assert flood_labels_oracle(out).max() == 1
    width = lambda m: int(np.flatnonzero(m.any(axis=0))[-1] - np.flatnonzero(m.any(axis=0))[0] + 1)
    assert width(out) == width(ellipse) - 2


def test_cleanup_iteration_counts_respected():
    prob = np.zeros((12, 12))
    prob[3:9, 3:9] = 1.0
    cfg = MorphConfig(erosion_iters=1, dilation_iters=0)
    assert np.array_equal(cleanup(prob, cfg), erode_oracle(threshold(prob, 0.5), SQUARE))


# --------------------------------------------------------- components


def test_largest_component_keeps_bigger_blob():
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[1:3, 1:6] = 1  # area 10
    mask[8:9, 8:11] = 1  # area 3
    out = largest_component(mask)
    assert out[1:3, 1:6].all()
    assert not out[8:9, 8:11].any()


def test_largest_component_single_blob_identity():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:5, 2:5] = 1
    assert np.array_equal(largest_component(mask), mask)


def test_largest_component_tie_prefers_first_in_scan_order():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[0, 0:3] = 1
    mask[6, 3:6] = 1  # same area, later topmost-leftmost pixel
    out = largest_component(mask)
    assert out[0, 0:3].all() and not out[6].any()


def test_largest_component_matches_oracle_on_randoms():
    rng = np.random.default_rng(10)
    for _ in range(200):
        mask = (rng.random((16, 16)) < rng.uniform(0.2, 0.7)).astype(np.uint8)
        if not mask.any():
            continue
        assert np.array_equal(largest_component(mask), largest_component_oracle(mask))


def test_largest_component_empty_raises():
    with pytest.raises(EmptyMask):
        largest_component(np.zeros((4, 4), dtype=np.uint8))


# --------------------------------------------------------------- boxes


def test_extract_box_width():
    mask = np.zeros((6, 12), dtype=np.uint8)
    mask[2, 3:11] = 1
    mask[4, 5] = 1
    box = extract_box(mask)
    assert box.width == 8
    assert (box.y_min, box.y_max) == (2, 4)


def test_extract_box_single_pixel():
    mask = np.zeros((5, 5), dtype=np.uint8)
    mask[3, 2] = 1
    box = extract_box(mask)
    assert (box.width, box.height) == (1, 1)


def test_extract_box_empty_raises():
    with pytest.raises(EmptyMask):
        extract_box(np.zeros((3, 3), dtype=np.uint8))


def test_extract_box_matches_phantom_width():
    s = phantom.generate(phantom.PhantomSpec(noise_sigma=0.0))
    assert extract_box(s.masks.heart).width == s.heart_width
    assert abs(extract_box(s.masks.heart).width - (2 * s.spec.heart_a + 1)) <= 1


def test_box_nesting_under_component_selection():
    rng = np.random.default_rng(11)
    for _ in range(50):
        mask = (rng.random((16, 16)) < 0.4).astype(np.uint8)
        if not mask.any():
            continue
        inner = extract_box(largest_component(mask))
        outer = extract_box(mask)
        assert outer.x_min <= inner.x_min and inner.x_max <= outer.x_max
        assert outer.y_min <= inner.y_min and inner.y_max <= outer.y_max


# -------------------------------------------------------- full channel


def test_masks_to_ctr_on_ground_truth():
    for s in phantom.generate_dataset(10, seed=21):
        prob = np.stack([s.masks.heart, s.masks.thorax]).astype(float)
        m = masks_to_ctr(prob, MorphConfig(erosion_iters=0, dilation_iters=0))
        assert abs(m.ctr - s.analytic_ctr) <= 2.0 / (2.0 * s.spec.thorax_a)


def test_masks_to_ctr_empty_heart():
    s = phantom.generate(phantom.PhantomSpec())
    prob = np.stack([np.zeros_like(s.masks.heart), s.masks.thorax]).astype(float)
    with pytest.raises(EmptyMask) as err:
        masks_to_ctr(prob)
    assert err.value.structure == "heart"


def test_masks_to_ctr_rejects_bad_shape():
    with pytest.raises(ValueError):
        masks_to_ctr(np.zeros((3, 8, 8)))


def _salted(prob, rng, density=0.10):
    out = prob.copy()
    salt = rng.random(prob.shape) < density
    out[salt] = 1.0
    return out


def test_morphology_reduces_ctr_error_under_salt_noise():
    rng = np.random.default_rng(5)
    with_morph, without = [], []
    for s in phantom.generate_dataset(40, seed=33):
        prob = np.stack([s.masks.heart, s.masks.thorax]).astype(float)
        noisy = _salted(prob, rng)
        for errs, cfg in (
            (with_morph, MorphConfig()),
            (without, MorphConfig(erosion_iters=0, dilation_iters=0)),
        ):
            try:
                m = masks_to_ctr(noisy, cfg)
                errs.append(abs(m.ctr - s.analytic_ctr))
            except EmptyMask:
                errs.append(1.0)
    assert np.mean(with_morph) <= np.mean(without)
