import numpy as np
import pytest

from smat.data import PairConfig, SynthConfig, load_sequence, sample_pair, save_sequence, synth_sequence
from smat.head import BoundingBox
from smat.metrics import iou


@pytest.fixture(scope="module")
def seq():
    return synth_sequence(SynthConfig(seed=3, n_frames=12, speed=4.0, occluder=True))


def test_deterministic():
    a = synth_sequence(SynthConfig(seed=7, n_frames=5))
    b = synth_sequence(SynthConfig(seed=7, n_frames=5))
    assert a.frames.tobytes() == b.frames.tobytes()
    np.testing.assert_array_equal(a.boxes, b.boxes)
    assert synth_sequence(SynthConfig(seed=8, n_frames=5)).frames.tobytes() != a.frames.tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_boxes_inside_frame(seed):
    cfg = SynthConfig(seed=seed, n_frames=60, speed=8.0, scale_rate=0.05, shape="ellipse")
    s = synth_sequence(cfg)
    w, h = cfg.frame_size
    assert s.frames.shape == (60, h, w, 3) and s.frames.dtype == np.uint8
    x, y, bw, bh = s.boxes.T
    assert np.all((x >= 0) & (y >= 0) & (bw > 0) & (bh > 0) & (x + bw <= w) & (y + bh <= h))


def test_zero_motion():
    s = synth_sequence(SynthConfig(seed=1, n_frames=10, speed=0.0, scale_rate=0.0))
    np.testing.assert_array_equal(s.boxes, np.tile(s.boxes[0], (10, 1)))


def test_target_is_painted(seq):
    b = seq.box(0)
    x0, y0 = int(b.x) + 2, int(b.y) + 2
    patch = seq.frames[0, y0:int(b.y + b.h) - 2, x0:int(b.x + b.w) - 2].astype(float)
    # red/blue checker differs strongly from the grey-ish background
    assert np.abs(patch[..., 0] - patch[..., 2]).mean() > 60


def test_save_load_round_trip(seq, tmp_path):
    save_sequence(seq, tmp_path)
    back = load_sequence(tmp_path)
    assert back.frames.tobytes() == seq.frames.tobytes()
    np.testing.assert_allclose(back.boxes, seq.boxes, atol=1e-6)


def test_load_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_sequence(tmp_path)


class TestSamplePair:
    def test_shapes_and_range(self, seq, rng):
        pair = sample_pair(seq, rng)
        assert pair.template.shape == (128, 128, 3) and pair.search.shape == (256, 256, 3)
        assert pair.box.shape == (4,) and np.all(pair.box[2:] > 0)

    def test_no_jitter_centres_target(self, seq, rng):
        cfg = PairConfig(center_jitter=0.0, scale_jitter=0.0, flip=False)
        pair = sample_pair(seq, rng, cfg)
        x, y, w, h = pair.box
        assert (x + w / 2, y + h / 2) == pytest.approx((0.5, 0.5), abs=1e-9)
        # square context of four times the geometric mean side
        assert np.sqrt(w * h) == pytest.approx(0.25, abs=1e-9)

    def test_box_matches_pixels(self, rng):
        s = synth_sequence(SynthConfig(seed=4, n_frames=3))
        for _ in range(5):
            pair = sample_pair(s, rng, PairConfig(center_jitter=0.3, flip=True))
            # find the coloured target in the search crop and compare with the box
            img = pair.search.astype(float)
            mask = np.abs(img[..., 0] - img[..., 2]) > 80
            ys, xs = np.nonzero(mask)
            found = BoundingBox(xs.min(), ys.min(), xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
            assert iou(found, BoundingBox.from_array(pair.box * 256)) > 0.85

    def test_flip_mirrors_box(self, seq):
        cfg = PairConfig(flip=False, center_jitter=0.2)
        flipped_cfg = PairConfig(flip=True, center_jitter=0.2)
        for seed in range(6):
            a = sample_pair(seq, np.random.default_rng(seed), cfg)
            b = sample_pair(seq, np.random.default_rng(seed), flipped_cfg)
            if not np.array_equal(a.search, b.search):
                np.testing.assert_array_equal(b.search, a.search[:, ::-1])
                assert b.box[0] == pytest.approx(1 - a.box[0] - a.box[2])
                return
        pytest.fail("no flipped sample in six draws")

    def test_template_from_first(self, seq, rng):
        cfg = PairConfig(template_from_first=True)
        first = sample_pair(seq, np.random.default_rng(0), PairConfig(template_from_first=True, flip=False)).template
        for s in range(3):
            t = sample_pair(seq, np.random.default_rng(s), PairConfig(template_from_first=True, flip=False)).template
            np.testing.assert_array_equal(t, first)
        assert cfg.template_from_first

    def test_max_gap(self, seq):
        cfg = PairConfig(max_gap=0, center_jitter=0.0, scale_jitter=0.0, flip=False)
        for s in range(4):
            pair = sample_pair(seq, np.random.default_rng(s), cfg)
            assert (pair.box[0] + pair.box[2] / 2) == pytest.approx(0.5)
