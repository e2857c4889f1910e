"""Synthetic generator: determinism, latents, sampling statistics, disk layout."""
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from floormatch.errors import GenerationError
from floormatch.synthgen import (
    LEGAL_OBJECTS, ROOM_TYPES, GeneratorSpec, apartment_seed, build_dataset, generate_apartment,
    load_apartment, load_dataset, make_kway_sample, make_pair_sample, save_apartment, save_dataset,
    toggle_object,
)
from floormatch.synthgen.dataset import rerender_segments


@pytest.fixture(scope="module")
def small_ds():
    return build_dataset(7, n_train=40, n_test=10)


class TestGenerateApartment:
    def test_deterministic(self):
        a, b = generate_apartment(123), generate_apartment(123)
        np.testing.assert_array_equal(a.floorplan, b.floorplan)
        for r in ROOM_TYPES:
            np.testing.assert_array_equal(a.photos[r], b.photos[r])
        assert a.latent_record() == b.latent_record()

    def test_different_seeds_differ(self):
        assert not np.array_equal(generate_apartment(1).floorplan, generate_apartment(2).floorplan)

    def test_shapes_and_rooms(self):
        spec = GeneratorSpec()
        apt = generate_apartment(5, spec)
        assert apt.floorplan.shape == (spec.floorplan_size, spec.floorplan_size, 3)
        assert set(apt.photos) == set(ROOM_TYPES)
        for img in apt.photos.values():
            assert img.shape == (spec.photo_size, spec.photo_size, 3) and img.dtype == np.uint8
        assert sorted(r.room_type for r in apt.layout if r.room_type in ROOM_TYPES) == sorted(ROOM_TYPES)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_latent_invariants(self, seed):
        apt = generate_apartment(seed)
        size = apt.spec.floorplan_size
        for room in apt.layout:
            x0, y0, x1, y1 = room.rect
            assert 0 <= x0 < x1 <= size and 0 <= y0 < y1 <= size
            for obj in room.objects:
                assert obj.kind in LEGAL_OBJECTS[room.room_type]
                assert 0 <= obj.position[0] <= 1 and 0 <= obj.position[1] <= 1
        masks = list(apt.segment_masks.values())
        cover = np.sum(masks, axis=0)
        assert cover.max() <= 1  # disjoint
        for sid, info in apt.segment_info.items():
            room_mask = apt.room_mask(info["room_type"]) if info["room_type"] in ROOM_TYPES else None
            if room_mask is not None:
                assert not np.any(apt.segment_masks[sid] & ~room_mask)

    def test_fixture_boxes_inside_room(self):
        for seed in range(20):
            apt = generate_apartment(seed)
            for sid, info in apt.segment_info.items():
                if info["kind"] != "fixture":
                    continue
                bx0, by0, bx1, by1 = info["box"]
                room = next(r for r in apt.layout if r.room_type == info["room_type"])
                x0, y0, x1, y1 = room.rect
                assert x0 <= bx0 < bx1 <= x1 and y0 <= by0 < by1 <= y1

    def test_object_probability_zero_removes_objects(self):
        spec = GeneratorSpec(object_prob=0.0)
        for seed in range(10):
            apt = generate_apartment(seed, spec)
            assert all(not o.present for r in apt.layout for o in r.objects)
            assert all(info["kind"] == "room" for info in apt.segment_info.values())

    def test_basin_frequency_matches_probability(self):
        spec = GeneratorSpec()
        present = [generate_apartment(apartment_seed(11, i), spec).room("bathroom").objects
                   for i in range(1000)]
        frac = np.mean([next(o.present for o in objs if o.kind == "basin") for objs in present])
        assert abs(frac - 0.7) <= 0.05

    def test_bad_spec_rejected(self):
        with pytest.raises(GenerationError):
            generate_apartment(0, GeneratorSpec(floorplan_size=8))
        with pytest.raises(GenerationError):
            generate_apartment(0, GeneratorSpec(object_prob=1.5))
        with pytest.raises(GenerationError):
            generate_apartment(0, GeneratorSpec(floorplan_size=16, extra_rooms=(9, 9), min_room_frac=0.4))

    def test_segments_rerender_consistently(self):
        apt = generate_apartment(42)
        raster, masks, info = rerender_segments(apt)
        np.testing.assert_array_equal(raster, apt.floorplan)
        assert info == apt.segment_info


class TestToggleObject:
    def test_noop_toggle_is_bit_identical(self):
        apt = generate_apartment(3)
        basin = next(o for o in apt.room("bathroom").objects if o.kind == "basin")
        out = toggle_object(apt, "bathroom", "basin", basin.present, "both")
        np.testing.assert_array_equal(out.floorplan, apt.floorplan)
        for r in ROOM_TYPES:
            np.testing.assert_array_equal(out.photos[r], apt.photos[r])

    def test_floorplan_only_change_is_local(self):
        for seed in range(30):
            apt = generate_apartment(seed)
            if not next(o for o in apt.room("bathroom").objects if o.kind == "basin").present:
                continue
            out = toggle_object(apt, "bathroom", "basin", False, "floorplan")
            changed = np.any(out.floorplan != apt.floorplan, axis=2)
            assert changed.any()
            assert not np.any(changed & ~apt.room_mask("bathroom"))
            for r in ROOM_TYPES:
                np.testing.assert_array_equal(out.photos[r], apt.photos[r])
            return
        pytest.fail("no apartment with a basin in 30 seeds")

    def test_four_combinations_distinct(self):
        apt = generate_apartment(8)
        pairs = []
        for fp in (True, False):
            for ph in (True, False):
                a = toggle_object(apt, "bathroom", "bathtub", fp, "floorplan")
                a = toggle_object(a, "bathroom", "bathtub", ph, "photo")
                pairs.append((a.floorplan.tobytes(), a.photos["bathroom"].tobytes()))
        assert len(set(pairs)) == 4

    def test_latents_unchanged(self):
        apt = generate_apartment(9)
        out = toggle_object(apt, "kitchen", "stove", False, "photo")
        assert [r.to_dict() for r in out.layout] == [r.to_dict() for r in apt.layout]
        assert apt.overrides == {}

    def test_illegal_pairing(self):
        apt = generate_apartment(1)
        with pytest.raises(ValueError):
            toggle_object(apt, "kitchen", "bathtub", True)
        with pytest.raises(ValueError):
            toggle_object(apt, "bathroom", "basin", True, "sketch")


class TestCrossModalSignal:
    def test_latent_nearest_neighbour_is_perfect(self, small_ds):
        """Matching photo latents to floorplan latents identifies the apartment exactly."""
        rng = np.random.default_rng(0)
        test = small_ds.test
        for _ in range(200):
            s = make_pair_sample(test, rng, room_type="bathroom")
            fl = test.apartment(s.floor_index).room("bathroom")
            ph = test.apartment(s.photo_index).room("bathroom")
            same = fl.palette == ph.palette and [o.to_dict() for o in fl.objects] == [o.to_dict() for o in ph.objects]
            assert same == (s.label == 1)

    def test_pixel_correlation_is_low(self, small_ds):
        cors = []
        for i in range(len(small_ds)):
            apt = small_ds.apartment(i)
            for r in ROOM_TYPES:
                x0, y0, x1, y1 = apt.room(r).rect
                crop = Image.fromarray(apt.floorplan[y0:y1, x0:x1]).convert("L").resize(
                    (apt.spec.photo_size,) * 2, Image.BILINEAR)
                photo = Image.fromarray(apt.photos[r]).convert("L")
                a = np.asarray(crop, np.float64).ravel()
                b = np.asarray(photo, np.float64).ravel()
                cors.append(abs(np.corrcoef(a, b)[0, 1]))
        assert np.mean(cors) < 0.5


class TestDataset:
    def test_split_hygiene(self, small_ds):
        man = small_ds.manifest
        assert not set(man.train_ids) & set(man.test_ids)
        assert man.split_sizes == {"train": 40, "test": 10}

    def test_parallel_generation_matches_serial(self):
        a = build_dataset(3, n_train=6, n_test=2, jobs=1)
        b = build_dataset(3, n_train=6, n_test=2, jobs=2)
        np.testing.assert_array_equal(a.floorplans, b.floorplans)
        for r in ROOM_TYPES:
            np.testing.assert_array_equal(a.photos[r], b.photos[r])

    def test_apartment_seed_depends_on_both(self):
        assert apartment_seed(1, 2) != apartment_seed(1, 3)
        assert apartment_seed(1, 2) != apartment_seed(2, 2)
        assert apartment_seed(1, 2) == apartment_seed(1, 2)


class TestPairSampling:
    def test_positive_rate(self, small_ds):
        rng = np.random.default_rng(5)
        labels = [make_pair_sample(small_ds, rng).label for _ in range(10000)]
        assert abs(np.mean(np.asarray(labels) == 1) - 0.5) <= 0.02

    def test_positive_shares_apartment(self, small_ds):
        rng = np.random.default_rng(6)
        for _ in range(200):
            s = make_pair_sample(small_ds, rng)
            assert (s.floor_id == s.photo_id) == (s.label == 1)

    def test_room_type_selects_rendering(self, small_ds):
        s = make_pair_sample(small_ds, np.random.default_rng(1), room_type="bathroom")
        assert s.room_types == ("bathroom",)
        np.testing.assert_array_equal(s.photos[0], small_ds.photos["bathroom"][s.photo_index])

    def test_three_photo_roster(self, small_ds):
        s = make_pair_sample(small_ds, np.random.default_rng(2), n_photos=3)
        assert s.room_types == ROOM_TYPES and len(s.photos) == 3

    def test_forced_label(self, small_ds):
        rng = np.random.default_rng(3)
        assert all(make_pair_sample(small_ds, rng, positive=False).label == -1 for _ in range(50))

    def test_empty_dataset(self, small_ds):
        with pytest.raises(ValueError):
            make_pair_sample(small_ds.subset([]), np.random.default_rng(0))

    def test_deterministic_given_rng(self, small_ds):
        a = make_pair_sample(small_ds, np.random.default_rng(9))
        b = make_pair_sample(small_ds, np.random.default_rng(9))
        assert (a.floor_index, a.photo_index, a.label) == (b.floor_index, b.photo_index, b.label)


class TestKwaySampling:
    def test_slot_uniformity(self, small_ds):
        rng = np.random.default_rng(4)
        idx = [make_kway_sample(small_ds, rng, 8).true_index for _ in range(8000)]
        freq = np.bincount(idx, minlength=8) / 8000
        assert np.all(np.abs(freq - 1 / 8) <= 0.02)

    def test_exactly_one_true_and_distinct(self, small_ds):
        rng = np.random.default_rng(5)
        for _ in range(200):
            s = make_kway_sample(small_ds, rng, 4)
            assert len(set(s.candidate_ids)) == 4
            assert [c == s.floor_id for c in s.candidate_ids].count(True) == 1
            assert s.candidate_ids[s.true_index] == s.floor_id

    def test_constant_guesser_at_chance_for_k2(self, small_ds):
        rng = np.random.default_rng(6)
        hits = [make_kway_sample(small_ds, rng, 2).true_index == 0 for _ in range(4000)]
        assert abs(np.mean(hits) - 0.5) < 0.03

    def test_errors(self, small_ds):
        with pytest.raises(ValueError):
            make_kway_sample(small_ds, np.random.default_rng(0), 1)
        with pytest.raises(ValueError):
            make_kway_sample(small_ds.subset(small_ds.ids[:3]), np.random.default_rng(0), 4)


class TestDiskLayout:
    def test_apartment_round_trip(self, tmp_path):
        apt = toggle_object(generate_apartment(77), "bathroom", "basin", False, "photo")
        save_apartment(apt, tmp_path / "a")
        back = load_apartment(tmp_path / "a")
        np.testing.assert_array_equal(back.floorplan, apt.floorplan)
        for r in ROOM_TYPES:
            np.testing.assert_array_equal(back.photos[r], apt.photos[r])
        assert back.latent_record() == apt.latent_record()
        for sid in apt.segment_masks:
            np.testing.assert_array_equal(back.segment_masks[sid], apt.segment_masks[sid])

    def test_files_and_formats(self, tmp_path):
        save_apartment(generate_apartment(1), tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == sorted(["floorplan.png", "segments.png", "latent.json"] + [f"{r}.png" for r in ROOM_TYPES])
        assert Image.open(tmp_path / "segments.png").mode == "P"
        json.loads((tmp_path / "latent.json").read_text())

    def test_dataset_round_trip(self, tmp_path):
        ds = build_dataset(2, n_train=4, n_test=2)
        man = save_dataset(ds, tmp_path)
        back = load_dataset(man)
        assert back.manifest.train_ids == ds.manifest.train_ids
        assert back.manifest.test_ids == ds.manifest.test_ids
        np.testing.assert_array_equal(back.floorplans, ds.floorplans)
        manifest = json.loads(man.read_text())
        assert manifest["seed"] == 2 and "spec" in manifest and manifest["split_sizes"] == {"train": 4, "test": 2}
