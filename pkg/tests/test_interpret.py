"""Interpretation: heatmap definition and determinism, object toggles, localisation, placement, retrieval."""
import numpy as np
import pytest

from conftest import narrow_model
from floormatch.errors import DimensionError
from floormatch.interpret import (
    Heatmap, RfConfig, blank_segments, object_sensitivity, place_photos, placement_json, ranking_csv, retrieve,
    rf_map, simplify_localize, window_noise,
)
from floormatch.matchers import FusionSpec, MatchProblem, to_input
from floormatch.synthgen import ROOM_TYPES, generate_apartment, toggle_object

COARSE = RfConfig(window=11, stride=9, samples_per_window=2)  # 6×6 grid


@pytest.fixture(scope="module")
def model():
    return narrow_model(MatchProblem(room_type=None), seed=1)


@pytest.fixture(scope="module")
def apt():
    return generate_apartment(21)


def flat_model():
    """Zero final layer: every score is tanh(0) = 0, so every comparison ties."""
    m = narrow_model(MatchProblem(room_type=None), seed=2)
    for k, p in m.named_parameters().items():
        if k.startswith("head.fc2"):
            p.data[...] = 0
    return m


def score(m, floor, photo, room):
    return m.score(to_input(floor.transpose(2, 0, 1))[None], to_input(photo.transpose(2, 0, 1))[None], [room]).data[0]


class TestRfConfig:
    @pytest.mark.parametrize("bad", [dict(window=10), dict(window=0), dict(stride=0), dict(samples_per_window=0)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            RfConfig(**bad).validate()

    def test_extent(self):
        assert RfConfig().grid_extent(64) == 54
        assert RfConfig(stride=4).grid_extent(64) == 14

    def test_window_larger_than_raster(self, model, apt):
        with pytest.raises(DimensionError):
            rf_map(model, apt.floorplan, apt.photos["bathroom"], "bathroom", RfConfig(window=65))


class TestRfMap:
    def test_full_grid_shape(self, model, apt):
        h = rf_map(model, apt.floorplan, apt.photos["bathroom"], "bathroom", RfConfig(samples_per_window=1))
        assert h.grid.shape == (54, 54)
        assert np.isfinite(h.grid).all()

    def test_value_is_baseline_minus_mean_noisy_score(self, model, apt):
        h = rf_map(model, apt.floorplan, apt.photos["kitchen"], "kitchen", COARSE, seed=4)
        base = to_input(apt.floorplan.transpose(2, 0, 1))
        assert h.baseline == pytest.approx(score(model, apt.floorplan, apt.photos["kitchen"], "kitchen"), abs=1e-6)
        i, j = 3, 5
        noisy = []
        for s in range(COARSE.samples_per_window):
            x = base.copy()
            x[:, i * 9:i * 9 + 11, j * 9:j * 9 + 11] = window_noise(4, i, j, s, 11)
            p = to_input(apt.photos["kitchen"].transpose(2, 0, 1))[None]
            noisy.append(model.score(x[None], p, ["kitchen"]).data[0])
        assert h.grid[i, j] == pytest.approx(h.baseline - np.mean(noisy), abs=1e-5)

    def test_deterministic_and_seeded(self, model, apt):
        a = rf_map(model, apt.floorplan, apt.photos["bathroom"], "bathroom", COARSE, seed=1)
        b = rf_map(model, apt.floorplan, apt.photos["bathroom"], "bathroom", COARSE, seed=1)
        c = rf_map(model, apt.floorplan, apt.photos["bathroom"], "bathroom", COARSE, seed=2)
        assert a.to_csv() == b.to_csv()
        assert not np.array_equal(a.grid, c.grid)

    def test_noise_depends_only_on_position_and_sample(self):
        a = window_noise(0, 2, 3, 1, 11)
        assert a.shape == (3, 11, 11)
        np.testing.assert_array_equal(a, window_noise(0, 2, 3, 1, 11))
        assert not np.array_equal(a, window_noise(0, 3, 2, 1, 11))
        assert abs(a.mean()) < 0.3 and abs(a.std() - 1) < 0.2

    def test_monte_carlo_std_shrinks_with_samples(self, model, apt):
        # 2×2 grid; each seed gives independent noise, so the spread across seeds is the MC error
        def cells(n):
            cfg = RfConfig(window=11, stride=53, samples_per_window=n)
            return np.array([rf_map(model, apt.floorplan, apt.photos["bathroom"], "bathroom", cfg, seed=s).grid
                             for s in range(30)])
        ratio = cells(5).std(axis=0) / cells(80).std(axis=0)
        assert np.all((ratio > 2.5) & (ratio < 6.5)), ratio  # expected √16 = 4

    def test_set_model(self, apt):
        m = narrow_model(MatchProblem(kind="set", photos_per_apartment=3, room_type=None,
                                      fusion=FusionSpec("score", "averaging")))
        photos = [apt.photos[r] for r in ROOM_TYPES]
        h = rf_map(m, apt.floorplan, photos, ROOM_TYPES, COARSE)
        assert h.grid.shape == (6, 6)
        ref = m.score(to_input(apt.floorplan.transpose(2, 0, 1))[None],
                      to_input(np.stack([p.transpose(2, 0, 1) for p in photos]))[None], [ROOM_TYPES]).data[0]
        assert h.baseline == pytest.approx(ref, abs=1e-6)

    def test_kway_model_rejected(self, apt):
        m = narrow_model(MatchProblem(kind="kway", k=2))
        with pytest.raises(TypeError):
            rf_map(m, apt.floorplan, apt.photos["bathroom"], "bathroom", COARSE)

    def test_argmax_ties_lowest_row_major(self):
        h = Heatmap(np.array([[0.0, 1.0], [1.0, 0.0]]), 0.0, RfConfig(window=3, stride=2))
        assert h.argmax() == (0, 1)
        assert h.argmax_pixel() == (1, 3)

    def test_outputs(self, model, apt, tmp_path):
        h = rf_map(model, apt.floorplan, apt.photos["bathroom"], "bathroom", COARSE, seed=9)
        lines = h.to_csv().splitlines()
        assert lines[0].startswith("# seed=9 window=11 stride=9")
        assert len(lines) == 7 and all(len(l.split(",")) == 6 for l in lines[1:])
        png = h.save_png(tmp_path / "h.png", apt.floorplan)
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestNoMutation:
    def test_checksum_and_mode_unchanged(self, apt):
        m = narrow_model(MatchProblem(room_type=None), seed=3)
        m.train()
        before = m.checksum()
        rf_map(m, apt.floorplan, apt.photos["bathroom"], "bathroom", COARSE)
        object_sensitivity(m, apt, "bathroom", "basin")
        simplify_localize(m, apt, "bathroom")
        place_photos(m, apt.floorplan, {"kitchen": apt.photos["kitchen"]}, COARSE)
        retrieve(m, apt.floorplan, [apt.photos["bathroom"]], "bathroom")
        assert m.checksum() == before
        assert m.training


class TestObjectSensitivity:
    def test_matrix(self, model, apt):
        mat = object_sensitivity(model, apt, "living_room", "sofa")
        assert mat.shape == (2, 2)
        assert np.isfinite(mat).all() and np.all(np.abs(mat) <= 1)

    def test_present_present_is_plain_score(self, model):
        for seed in range(50):
            apt = generate_apartment(seed)
            if any(o.kind == "basin" and o.present for o in apt.room("bathroom").objects):
                break
        mat = object_sensitivity(model, apt, "bathroom", "basin")
        plain = score(model, apt.floorplan, apt.photos["bathroom"], "bathroom")
        assert mat[1, 1] == pytest.approx(plain, abs=1e-6)
        hidden = toggle_object(apt, "bathroom", "basin", False)
        assert mat[0, 0] == pytest.approx(score(model, hidden.floorplan, hidden.photos["bathroom"], "bathroom"),
                                          abs=1e-6)

    def test_illegal_object(self, model, apt):
        with pytest.raises(ValueError):
            object_sensitivity(model, apt, "bathroom", "sofa")


class TestSimplify:
    def test_terminates_within_segment_count(self, model):
        for seed in range(5):
            apt = generate_apartment(seed)
            res = simplify_localize(model, apt, "bathroom")
            n = len(apt.segment_masks)
            assert len(res.removed) <= n - 1
            assert sorted(res.removed + res.survivors) == sorted(apt.segment_masks)
            assert len(res.scores) == len(res.removed) + 1
            assert np.isfinite(res.scores).all()

    def test_ties_remove_lowest_id_first(self, apt):
        res = simplify_localize(flat_model(), apt, "bathroom")
        sids = sorted(apt.segment_masks)
        assert res.removed == sids[:-1] and res.survivors == [sids[-1]]

    def test_single_segment_survives(self, model, apt):
        one = min(apt.segment_masks)
        single = type(apt)(**{**apt.__dict__, "segment_masks": {one: apt.segment_masks[one]}})
        res = simplify_localize(model, single, "bathroom")
        assert res.removed == [] and res.survivors == [one]

    def test_deterministic(self, model, apt):
        a = simplify_localize(model, apt, "kitchen")
        b = simplify_localize(model, apt, "kitchen")
        assert a.to_json() == b.to_json()

    def test_errors(self, model, apt):
        empty = type(apt)(**{**apt.__dict__, "segment_masks": {}})
        with pytest.raises(ValueError):
            simplify_localize(model, empty, "bathroom")
        with pytest.raises(ValueError):
            simplify_localize(model, apt, "bathroom", fraction=0)

    def test_blank_segments(self, apt):
        sid = min(apt.segment_masks)
        out = blank_segments(apt.floorplan, apt.segment_masks, [sid])
        assert np.all(out[apt.segment_masks[sid]] == 255)
        np.testing.assert_array_equal(out[~apt.segment_masks[sid]], apt.floorplan[~apt.segment_masks[sid]])


class TestPlacement:
    def test_in_bounds_and_deterministic(self, model, apt):
        photos = {r: apt.photos[r] for r in ROOM_TYPES}
        a = place_photos(model, apt.floorplan, photos, COARSE)
        assert set(a) == set(ROOM_TYPES)
        for r, c in a.values():
            assert 5 <= r <= 5 + 9 * 5 and 5 <= c <= 5 + 9 * 5
        again = place_photos(model, apt.floorplan, {"kitchen": apt.photos["kitchen"]}, COARSE)
        assert again["kitchen"] == a["kitchen"]
        assert '"seed": 3' in placement_json(a, 3)

    def test_ties_go_to_first_window(self, apt):
        place = place_photos(flat_model(), apt.floorplan, {"bathroom": apt.photos["bathroom"]}, COARSE)
        assert place["bathroom"] == (5, 5)


class TestRetrieve:
    def test_ranking_contract(self, model):
        apts = [generate_apartment(s) for s in range(8)]
        corpus = [(f"p{i}", a.photos["bathroom"]) for i, a in enumerate(apts)]
        full = retrieve(model, apts[0].floorplan, corpus, "bathroom", top_n=100)
        assert sorted(pid for pid, _ in full) == sorted(pid for pid, _ in corpus)
        scores = [s for _, s in full]
        assert scores == sorted(scores, reverse=True)
        assert retrieve(model, apts[0].floorplan, corpus, "bathroom", top_n=3) == full[:3]

    def test_stable_on_ties(self, apt):
        corpus = [apt.photos["bathroom"]] * 3 + [apt.photos["kitchen"]]
        ranked = retrieve(flat_model(), apt.floorplan, corpus, "bathroom")
        assert [pid for pid, _ in ranked] == ["0", "1", "2", "3"]

    def test_errors(self, model, apt):
        with pytest.raises(ValueError):
            retrieve(model, apt.floorplan, [], "bathroom")
        with pytest.raises(DimensionError):
            retrieve(model, apt.floorplan[:32, :32], [apt.photos["bathroom"]], "bathroom")

    def test_csv(self):
        text = ranking_csv([("a", 0.5), ("b", 0.25)], 7)
        assert text.splitlines() == ["# seed=7", "rank,photo_id,score", "1,a,0.50000000", "2,b,0.25000000"]
