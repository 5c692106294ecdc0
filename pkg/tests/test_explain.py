import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from protoaudio import dsp, explain, pipeline, synthetic
from protoaudio.embed import EmbeddingMap
from protoaudio.protonet import PrototypeBank, init_bank, similarity


def spec(h=64, w=96, standardized=True, seed=0):
    values = np.random.default_rng(seed).standard_normal((h, w))
    return dsp.Spectrogram(values, 0.008, np.arange(h + 2.0), standardized=standardized)


def grid_map(values, stride=(8, 8), field=(8, 8)):
    return EmbeddingMap(values, stride[0], stride[1], field[0], field[1])


class TestProject:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.z = rng.standard_normal((12, 2, 3, 4))
        self.bank = init_bank(2, 2, 4, seed=1)
        self.ids = [f"n{i}" for i in range(12)]

    def test_exact_match_found(self):
        z = self.z.copy()
        z[7, 1, 2] = self.bank.prototypes[0, 1] * 2.5
        out = explain.project(self.bank, z, 1, self.ids)
        top = out[(0, 1)][0]
        assert top.instance_id == "n7"
        assert top.similarity == pytest.approx(1.0)
        assert top.argmax_cell == (1, 2)

    def test_k_equals_n_sorted(self):
        out = explain.project(self.bank, self.z, 12, self.ids)
        for entries in out.values():
            assert sorted(e.instance_id for e in entries) == sorted(self.ids)
            sims = [e.similarity for e in entries]
            assert sims == sorted(sims, reverse=True)
            assert [e.rank for e in entries] == list(range(12))

    def test_k_too_large_warns(self, caplog):
        out = explain.project(self.bank, self.z, 50, self.ids)
        assert len(out[(0, 0)]) == 12
        assert "exceeds" in caplog.text

    def test_k_invalid(self):
        with pytest.raises(ValueError):
            explain.project(self.bank, self.z, 0, self.ids)

    @given(st.integers(1, 11))
    def test_prefix_property(self, k):
        a = explain.project(self.bank, self.z, k, self.ids)
        b = explain.project(self.bank, self.z, k + 1, self.ids)
        for key in a:
            assert [e.instance_id for e in a[key]] == [e.instance_id for e in b[key][:k]]

    def test_ties_by_position(self):
        z = np.repeat(self.z[:1], 5, axis=0)
        out = explain.project(self.bank, z, 5, self.ids[:5])
        assert [e.instance_id for e in out[(1, 0)]] == self.ids[:5]

    def test_streamed_store_equals_array(self):
        items = [(i, EmbeddingMap(v)) for i, v in zip(self.ids, self.z)]
        a = explain.project(self.bank, items, 4, chunk=5)
        b = explain.project(self.bank, self.z, 4, self.ids, chunk=256)
        for key in a:
            assert [e.to_dict() for e in a[key]] == [e.to_dict() for e in b[key]]


class TestUpscale:
    def test_constant(self):
        out = explain.upscale(np.full((3, 4), 0.3), (24, 32), (8, 8), (8, 8))
        np.testing.assert_allclose(out, 0.3)

    @given(st.integers(0, 2 ** 16))
    def test_max_preserved_and_bounded(self, seed):
        m = np.random.default_rng(seed).uniform(-1, 1, (4, 5))
        out = explain.upscale(m, (32, 40), (8, 8), (8, 8))
        assert out.max() == pytest.approx(m.max(), abs=1e-6)
        assert out.min() >= m.min() - 1e-12

    def test_peak_maps_to_cell_center(self):
        m = np.zeros((4, 6))
        m[2, 3] = 1.0
        out = explain.upscale(m, (128, 192), (32, 32), (32, 32))
        r, c = np.unravel_index(np.argmax(out), out.shape)
        centers = explain.cell_centers(6, 32, 32)
        assert (r, c) == (explain.cell_centers(4, 32, 32)[2], centers[3])
        assert centers[0] == 15

    def test_heatmap_dims_and_stride_check(self):
        s = spec()
        z = grid_map(np.random.default_rng(1).standard_normal((8, 12, 4)))
        bank = init_bank(1, 1, 4)
        hm = explain.heatmap(s, z, bank, 0, 0, "x")
        assert hm.values.shape == s.values.shape
        assert np.all(np.abs(hm.values) <= 1.0)
        with pytest.raises(ValueError):
            explain.heatmap(s, EmbeddingMap(z.values, 0, 0), bank, 0, 0)

    def test_heatmap_peak_tracks_time_shift(self):
        bank = init_bank(1, 1, 4, seed=2)
        vals = np.random.default_rng(3).standard_normal((8, 12, 4)) * 0.1
        vals[3, 5] = bank.prototypes[0, 0]
        s = spec()
        a = explain.heatmap(s, grid_map(vals), bank, 0, 0).values
        b = explain.heatmap(s, grid_map(np.roll(vals, 1, axis=1)), bank, 0, 0).values
        ca = np.unravel_index(np.argmax(a), a.shape)
        cb = np.unravel_index(np.argmax(b), b.shape)
        assert cb[0] == ca[0] and cb[1] - ca[1] == 8


class TestBox:
    def test_single_spike(self):
        h = np.zeros((20, 30))
        h[4, 7] = 1.0
        assert explain.percentile_box(h) == (4, 5, 7, 8)

    def test_opposite_corners(self):
        h = np.zeros((20, 30))
        h[0, 0] = h[19, 29] = 1.0
        assert explain.percentile_box(h) == (0, 20, 0, 30)

    def test_q_zero(self):
        h = np.zeros((10, 10))
        h[2:5, 3:7] = 1.0
        h[2, 3] = 0.5
        assert explain.percentile_box(h, q=0.0) == (2, 5, 3, 7)

    def test_constant_full_frame(self, caplog):
        assert explain.percentile_box(np.ones((4, 6))) == (0, 4, 0, 6)
        assert "constant" in caplog.text

    @given(st.integers(0, 2 ** 16), st.floats(0.5, 0.98), st.floats(0.0, 0.02))
    def test_monotone_in_q(self, seed, q, dq):
        h = np.random.default_rng(seed).random((16, 24))
        a = explain.percentile_box(h, q)
        b = explain.percentile_box(h, min(q + dq, 0.99))
        assert b[0] >= a[0] and b[1] <= a[1] and b[2] >= a[2] and b[3] <= a[3]

    @given(st.integers(0, 2 ** 16))
    def test_box_in_bounds_nonempty(self, seed):
        h = np.random.default_rng(seed).random((16, 24))
        f0, f1, t0, t1 = explain.percentile_box(h)
        assert 0 <= f0 < f1 <= 16 and 0 <= t0 < t1 <= 24

    def test_iou(self):
        assert explain.box_iou((0, 10, 0, 10), (0, 10, 0, 10)) == 1.0
        assert explain.box_iou((0, 10, 0, 10), (0, 10, 5, 15)) == pytest.approx(50 / 150)
        assert explain.box_iou((0, 1, 0, 1), (2, 3, 2, 3)) == 0.0


class TestLocalExplanation:
    def test_decomposition_exact(self):
        rng = np.random.default_rng(0)
        bank = init_bank(3, 4, 6, seed=0)
        bank.head_weights[:] = rng.random((3, 4))
        bank.head_bias[:] = rng.normal(size=3)
        z = grid_map(rng.standard_normal((8, 12, 6)))
        ex = explain.explain_prediction(spec(), z, bank, top_m=12)
        assert len(ex.contributions) == 12
        sums = np.zeros(3)
        for item in ex.contributions:
            sums[item.prototype_id[0]] += item.contribution
        np.testing.assert_allclose(sums + ex.bias, ex.logits, atol=1e-12)
        from protoaudio.protonet import forward
        np.testing.assert_allclose(ex.logits, forward(z, bank)[1].logits, atol=1e-12)

    def test_ranked_by_contribution(self):
        rng = np.random.default_rng(1)
        bank = init_bank(2, 3, 6, seed=4)
        z = grid_map(rng.standard_normal((8, 12, 6)))
        ex = explain.explain_prediction(spec(), z, bank, top_m=4)
        vals = [c.contribution for c in ex.contributions]
        assert len(vals) == 4 and vals == sorted(vals, reverse=True)
        for c in ex.contributions:
            assert c.heatmap.values.shape == (64, 96)
        json.dumps(ex.to_dict())

    def test_exemplars_attached(self):
        rng = np.random.default_rng(2)
        bank = init_bank(1, 2, 6)
        zz = rng.standard_normal((5, 8, 12, 6))
        proj = explain.project(bank, zz, 2)
        ex = explain.explain_prediction(spec(), grid_map(zz[0]), bank, 2, proj)
        assert all(len(c.exemplars) == 2 for c in ex.contributions)


class TestRender:
    def test_files(self, tmp_path, dsp_cfg):
        s = dsp.standardize(dsp.logmel(dsp.Waveform(
            np.random.default_rng(0).standard_normal(dsp_cfg.clip_samples) * 0.1, 32000), dsp_cfg),
            dsp_cfg)
        hm = explain.Heatmap(np.random.default_rng(1).uniform(-1, 1, s.values.shape), (2, 1), "clip7")
        box = (10, 40, 100, 164)
        paths = explain.render(s, hm, box, tmp_path / "a" / "rank_0", 0.75, dsp_cfg, audio=True,
                               gl_iterations=2)
        for key in ("heatmap", "box"):
            img = Image.open(paths[key])
            assert img.size == (s.frames, s.mel_bins)
        rows = list(csv.reader(open(paths["csv"])))
        assert tuple(rows[0]) == explain.CSV_FIELDS
        assert rows[1][:3] == ["2", "1", "clip7"]
        assert float(rows[1][3]) == 0.75
        assert [int(x) for x in rows[1][4:]] == list(box)
        wav = dsp.read_wav(paths["wav"])
        expect = (box[3] - box[2]) * dsp_cfg.hop / dsp_cfg.sample_rate
        assert abs(wav.duration - expect) <= dsp_cfg.hop / dsp_cfg.sample_rate

    def test_box_audio_silent_outside(self, dsp_cfg):
        # a box over an all-floor region gives near silence
        s = dsp.logmel(dsp.Waveform(np.zeros(dsp_cfg.clip_samples), 32000), dsp_cfg)
        w = explain.box_audio(s, (0, 50, 0, 40), dsp_cfg, iterations=2)
        assert np.sqrt(np.mean(w.samples ** 2)) < 1e-3

    def test_index(self, tmp_path):
        bank = init_bank(1, 1, 2, class_names=["a"])
        e = explain.ProjectionEntry((0, 0), "x", 0.5, (1, 2), 0, (0, 1, 0, 1))
        explain.write_index(tmp_path / "i.json", [e], bank)
        doc = json.loads((tmp_path / "i.json").read_text())
        assert doc["class_names"] == ["a"]
        assert doc["entries"][0]["prototype_id"] == [0, 0]


def test_projection_finds_motif_bearing_instances(corpus, trained):
    """Top-K for each class's strongest prototype is dominated by clips containing the motif."""
    bank = trained[5]
    k = 20
    out = explain.project(bank, corpus["z_train"], k)
    for c in range(bank.num_classes):
        j = int(np.argmax(bank.head_weights[c]))
        ids = [int(e.instance_id) for e in out[(c, j)]]
        frac = corpus["y_train"][ids, c].mean()
        assert frac >= 0.8, (c, frac)


def test_two_motif_clip_localizes_both(trained, dsp_cfg, backbone):
    bank = trained[1]
    rng = np.random.default_rng(3)
    hits = total = 0
    for a, b in [(0, 6), (2, 5), (3, 7), (1, 4)]:
        clip = synthetic.make_clip(rng, dsp_cfg, [a, b], "pair")
        s = pipeline.spectrogram(clip.waveform, dsp_cfg)
        z = backbone.extract(s)
        ex = explain.explain_prediction(s, z, bank, top_m=bank.num_classes)
        boxes = dict(clip.boxes)
        for c in (a, b):
            item = next(x for x in ex.contributions if x.prototype_id[0] == c)
            hits += explain.box_iou(item.box, boxes[c]) >= 0.5
            total += 1
    assert hits / total >= 0.75
