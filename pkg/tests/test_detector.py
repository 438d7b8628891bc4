import math

import numpy as np
import pytest

from ukftrack import synthetic
from ukftrack.detector import (
    Detection,
    DimensionMismatch,
    Frame,
    MotionField,
    OutOfBounds,
    PGMError,
    compute_motion_field,
    detect,
    extract_objects,
    filter_sequence,
    full_search,
    list_frames,
    load_frames,
    read_pgm,
    sad,
    temporal_consistency_filter,
    tss_search,
    write_pgm,
)


def brute_force(cur, ref, x, y, n, r=7):
    """Independent exhaustive search: plain loops, same tie rule."""
    c = cur.pixels.astype(int)
    f = ref.pixels.astype(int)
    best = None
    for q in range(-r, r + 1):
        for p in range(-r, r + 1):
            if not (0 <= x + p and 0 <= y + q and x + p + n <= f.shape[1] and y + q + n <= f.shape[0]):
                continue
            s = int(np.abs(c[y:y + n, x:x + n] - f[y + q:y + q + n, x + p:x + p + n]).sum())
            key = (s, p * p + q * q, p, q)
            if best is None or key < best:
                best = key
    return (best[2], best[3]), best[0]


def textured_pair(seed, p, q, shape=(64, 64)):
    rng = np.random.default_rng(seed)
    tex = synthetic.bump_texture(rng, shape[0] + 14, shape[1] + 14)
    return synthetic.shifted_pair(tex, shape, p, q)


def det_at(x, y, motion=(4.0, 0.0), blocks=3):
    return Detection((x, y), blocks, (int(x) - 8, int(y) - 8, int(x) + 8, int(y) + 8),
                     (-motion[0], -motion[1]))


class TestFrame:
    def test_converts_and_freezes(self):
        f = Frame(np.array([[0, 255], [10, 20]]))
        assert f.pixels.dtype == np.uint8 and (f.width, f.height) == (2, 2)
        with pytest.raises(ValueError):
            f.pixels[0, 0] = 1

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Frame(np.array([[0, 256]]))


class TestPGM:
    def test_round_trip(self, tmp_path, rng):
        f = Frame(rng.integers(0, 256, (7, 5), dtype=np.uint8))
        write_pgm(tmp_path / "a.pgm", f)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm").pixels, f.pixels)

    def test_header_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm").pixels, [[1, 2]])

    @pytest.mark.parametrize("data", [
        b"P2\n2 1\n255\n1 2",
        b"P5\n2 1\n65535\n\x00\x01\x00\x02",
        b"P5\n2 2\n255\n\x01\x02",
        b"P5\nx 2\n255\n",
        b"",
    ])
    def test_malformed(self, tmp_path, data):
        (tmp_path / "bad.pgm").write_bytes(data)
        with pytest.raises(PGMError, match="bad.pgm"):
            read_pgm(tmp_path / "bad.pgm")

    def test_missing_file(self, tmp_path):
        with pytest.raises(PGMError):
            read_pgm(tmp_path / "none.pgm")

    def test_listing_sorted(self, tmp_path):
        for name in ("b.pgm", "a.pgm", "c.txt"):
            write_pgm(tmp_path / name, Frame(np.zeros((2, 2), np.uint8))) if name.endswith("pgm") \
                else (tmp_path / name).write_text("x")
        assert [p.name for p in list_frames(tmp_path)] == ["a.pgm", "b.pgm"]
        assert len(load_frames(tmp_path)) == 2


class TestSAD:
    def test_identical_blocks(self, rng):
        f = Frame(rng.integers(0, 256, (16, 16), dtype=np.uint8))
        assert sad(f, f, (0, 0), 16, (0, 0)) == 0

    def test_single_pixel_difference(self):
        a = np.full((4, 4), 50, np.uint8)
        b = a.copy()
        b[2, 1] = 57
        assert sad(Frame(a), Frame(b), (0, 0), 4, (0, 0)) == 7

    def test_hand_example(self):
        assert sad(Frame([[1, 2], [3, 4]]), Frame([[1, 2], [3, 5]]), (0, 0), 2, (0, 0)) == 1

    def test_symmetric(self, rng):
        a = Frame(rng.integers(0, 256, (8, 8), dtype=np.uint8))
        b = Frame(rng.integers(0, 256, (8, 8), dtype=np.uint8))
        assert sad(a, b, (0, 0), 8, (0, 0)) == sad(b, a, (0, 0), 8, (0, 0)) > 0

    def test_out_of_bounds(self, rng):
        f = Frame(rng.integers(0, 256, (16, 16), dtype=np.uint8))
        with pytest.raises(OutOfBounds):
            sad(f, f, (0, 0), 16, (1, 0))
        with pytest.raises(OutOfBounds):
            sad(f, f, (4, 0), 16, (0, 0))


class TestSearch:
    def test_static_pair(self, rng):
        f = Frame(synthetic.bump_texture(rng, 48, 48))
        for x in (0, 16, 32):
            assert tss_search(f, f, (x, 16))[0] == (0, 0)

    def test_shift_3_2(self):
        cur, ref = textured_pair(3, 3, 2)
        v, s = tss_search(cur, ref, (16, 16))
        assert v == (3, 2) == brute_force(cur, ref, 16, 16, 16)[0]
        assert s == 0

    def test_shift_minus5_7(self):
        rng = np.random.default_rng(11)
        tex = synthetic.bump_texture(rng, 78, 78, noise=0.05)
        cur, ref = synthetic.shifted_pair(tex, (64, 64), -5, 7)
        assert tss_search(cur, ref, (16, 16))[0] == (-5, 7) == brute_force(cur, ref, 16, 16, 16)[0]

    def test_full_search_matches_brute_force(self, rng):
        # random frames: many ties and shallow minima
        for _ in range(20):
            cur = Frame(rng.integers(0, 4, (40, 40), dtype=np.uint8))
            ref = Frame(rng.integers(0, 4, (40, 40), dtype=np.uint8))
            x, y = (int(v) for v in rng.integers(0, 25, 2))
            assert full_search(cur, ref, (x, y)) == brute_force(cur, ref, x, y, 16)

    def test_candidate_count_and_sad_bound(self, rng):
        cur, ref = textured_pair(5, -3, 6)
        for x, y in [(0, 0), (16, 16), (48, 48), (16, 48)]:
            trace = []
            v, s = tss_search(cur, ref, (x, y), trace=trace, stop_threshold=0)
            assert len(trace) <= 25
            assert s <= sad(cur, ref, (x, y), 16, (0, 0))

    def test_early_stop(self, rng):
        f = Frame(synthetic.bump_texture(rng, 32, 32))
        trace = []
        assert tss_search(f, f, (0, 0), trace=trace) == ((0, 0), 0)
        assert trace == [(0, 0)]

    def test_off_frame_candidates_skipped(self):
        cur, ref = textured_pair(2, -4, 0)
        (p, q), s = tss_search(cur, ref, (0, 0), stop_threshold=0)
        assert p >= 0 and q >= 0 and math.isfinite(s)

    def test_step_must_be_power_of_two(self, rng):
        f = Frame(np.zeros((32, 32), np.uint8))
        with pytest.raises(ValueError):
            tss_search(f, f, (0, 0), initial_step=3)


class TestMotionField:
    def test_identical_frames(self, rng):
        f = Frame(synthetic.bump_texture(rng, 64, 80))
        fld = compute_motion_field(f, f)
        assert (fld.blocks_y, fld.blocks_x) == (4, 5)
        assert not fld.vectors.any()

    def test_global_shift_interior(self):
        cur, ref = textured_pair(8, 2, -3, shape=(96, 96))
        fld = compute_motion_field(cur, ref)
        np.testing.assert_array_equal(fld.vectors[1:-1, 1:-1], np.broadcast_to([2, -3], (4, 4, 2)))

    def test_moving_square_geometry(self, rng):
        bg = synthetic.flat_background(96, 128, 60)
        sq = synthetic.MovingSquare((40, 32), (4, 0), synthetic.bump_texture(rng, 32, 32, lo=120, hi=250))
        ref, cur = (synthetic.render(bg, [sq], t) for t in (0, 1))
        fld = compute_motion_field(cur, ref)
        n = 16
        for by in range(fld.blocks_y):
            for bx in range(fld.blocks_x):
                block = (bx * n, by * n, bx * n + n, by * n + n)
                touches = any(b[0] < block[2] and block[0] < b[2] and b[1] < block[3] and block[1] < b[3]
                              for b in (sq.box(0), sq.box(1)))
                if not touches:
                    assert not fld.vectors[by, bx].any()
        assert fld.nonzero_mask().sum() >= 4

    def test_partial_edge_blocks_zero(self):
        cur, ref = textured_pair(4, 1, 1, shape=(40, 40))
        fld = compute_motion_field(cur, ref)
        assert fld.vectors.shape[:2] == (3, 3)
        assert not fld.vectors[2, :].any() and not fld.vectors[:, 2].any()

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            compute_motion_field(Frame(np.zeros((32, 32), np.uint8)), Frame(np.zeros((32, 48), np.uint8)))

    def test_deterministic(self):
        cur, ref = textured_pair(6, 3, 3)
        a, b = compute_motion_field(cur, ref), compute_motion_field(cur, ref)
        np.testing.assert_array_equal(a.vectors, b.vectors)


def field_from(mask, vec=(1, 0), n=16):
    mask = np.asarray(mask, bool)
    v = np.zeros(mask.shape + (2,), dtype=np.int64)
    v[mask] = vec
    return MotionField(v, n)


class TestExtract:
    def test_empty(self):
        assert extract_objects(field_from(np.zeros((4, 4)))) == []

    def test_cluster_centroid(self):
        m = np.zeros((5, 6), bool)
        m[1:3, 2:5] = True  # 2 rows x 3 cols
        (d,) = extract_objects(field_from(m, (-2, 1)))
        assert d.block_count == 6
        assert d.centroid == (3.5 * 16, 2.0 * 16)
        assert d.bbox == (32, 16, 80, 48)
        assert d.mean_vector == (-2.0, 1.0) and d.mean_motion == (2.0, -1.0)

    def test_isolated_blocks_pruned(self):
        m = np.zeros((6, 8), bool)
        m[0:2, 0:3] = True
        m[4, 6] = m[5, 1] = True
        dets = extract_objects(field_from(m))
        assert len(dets) == 1 and dets[0].block_count == 6

    def test_diagonal_connectivity(self):
        m = np.eye(4, dtype=bool)
        assert len(extract_objects(field_from(m))) == 1

    def test_partition_and_order_invariance(self, rng):
        m = rng.random((12, 12)) < 0.35
        dets = extract_objects(field_from(m), min_region_blocks=1)
        cover = [b for d in dets for b in d.blocks]
        assert len(cover) == len(set(cover)) == m.sum()
        flipped = extract_objects(field_from(m[::-1, ::-1].copy()), min_region_blocks=1)
        assert sorted(d.block_count for d in dets) == sorted(d.block_count for d in flipped)
        for d in dets:
            x0, y0, x1, y1 = d.bbox
            assert x0 <= d.centroid[0] <= x1 and y0 <= d.centroid[1] <= y1

    def test_rejects_bad_min(self):
        with pytest.raises(ValueError):
            extract_objects(field_from(np.zeros((2, 2))), min_region_blocks=0)


class TestTemporalFilter:
    def test_steady_mover_kept(self):
        hist = [[det_at(40 + 4 * k, 40)] for k in range(3)]
        assert temporal_consistency_filter(hist) == hist[-1]

    def test_flicker_removed(self):
        hist = [[], [], [det_at(40, 40)]]
        assert temporal_consistency_filter(hist) == []
        hist = [[det_at(200, 200)], [], [det_at(40, 40)]]
        assert temporal_consistency_filter(hist) == []

    def test_swaying_removed(self):
        hist = [[det_at(40, 40, motion=(4.0 * (-1) ** k, 0.0))] for k in range(3)]
        assert temporal_consistency_filter(hist) == []

    def test_slow_mover_below_half_block_removed(self):
        hist = [[det_at(40 + k, 40, motion=(1.0, 0.0))] for k in range(3)]
        assert temporal_consistency_filter(hist) == []

    def test_window_too_short(self):
        with pytest.raises(ValueError):
            temporal_consistency_filter([[det_at(0, 0)]])

    def test_sequence_form(self):
        per_frame = [[det_at(40 + 4 * k, 40), det_at(120, 40, motion=(4.0 * (-1) ** k, 0))]
                     for k in range(5)]
        kept = filter_sequence(per_frame)
        assert [len(k) for k in kept] == [1] * 5
        assert all(k[0].centroid[1] == 40 and k[0].centroid[0] < 100 for k in kept)


class TestDetect:
    def test_swaying_patch_removed_square_kept(self):
        rng = np.random.default_rng(3)
        bg, sq = synthetic.square_scene(rng, start=(17, 32))
        leaves = synthetic.SwayingPatch((176, 64), 48, 4, synthetic.bump_texture(rng, 48, 56))
        frames = synthetic.render_sequence(bg, [sq, leaves], 8)
        raw = [detect(frames[k], frames[k - 1])[1] for k in range(1, 8)]
        assert any(len(r) == 2 for r in raw)
        kept = filter_sequence(raw)
        for k, dets in enumerate(kept, start=1):
            assert len(dets) == 1
            cx, cy = sq.center(k)
            assert math.hypot(dets[0].centroid[0] - cx, dets[0].centroid[1] - cy) <= 8
