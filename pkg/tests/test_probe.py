"""Synthetic probe data: determinism, caption structure, labels, VQA."""

import numpy as np
import pytest

from deskclip.data import probe
from deskclip.data.pngio import decode_png
from deskclip.data.shards import write_shard
from deskclip.errors import DataError


@pytest.fixture(scope="module")
def records64():
    return probe.generate_records(64, seed=3, image_size=48)


class TestGeneration:
    def test_deterministic_byte_identical_shards(self, tmp_path):
        a = probe.generate_records(20, seed=11, image_size=32)
        b = probe.generate_records(20, seed=11, image_size=32)
        pa, pb = tmp_path / "a.shard", tmp_path / "b.shard"
        write_shard(pa, a)
        write_shard(pb, b)
        assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_differs(self):
        a = probe.generate_records(8, seed=1, image_size=32)
        b = probe.generate_records(8, seed=2, image_size=32)
        assert [r.caption_synthetic for r in a] != [r.caption_synthetic for r in b]

    def test_synthetic_captions_pairwise_distinct(self, records64):
        caps = [r.caption_synthetic for r in records64]
        assert len(set(caps)) == len(caps)

    def test_synthetic_longer_than_original(self, records64):
        longer = sum(
            len(r.caption_synthetic) > len(r.caption_original) for r in records64
        )
        assert longer / len(records64) >= 0.95

    def test_stratified_covers_all_18_combos_once(self):
        recs = probe.generate_records(18, seed=0, image_size=32, stratified=True)
        labels = [probe.class_of(r.meta) for r in recs]
        assert sorted(labels) == sorted(probe.classnames())

    def test_record_ids_sequential(self, records64):
        assert [r.record_id for r in records64] == list(range(64))

    def test_impossible_request_raises(self):
        # single-shape scenes offer 18 combos x 9 cells = 162 distinct
        # synthetic captions, so 200 of them cannot exist
        with pytest.raises(DataError):
            probe.generate_records(200, seed=0, image_size=32, max_shapes=1)


class TestRendering:
    def test_renders_decode_to_stated_size(self, records64):
        img = decode_png(records64[0].png)
        assert img.shape == (48, 48, 3)

    def test_record_image_unit_range(self, records64):
        img = probe.record_image(records64[0])
        assert img.shape == (3, 48, 48)
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_record_image_resizes(self, records64):
        img = probe.record_image(records64[0], resolution=32)
        assert img.shape == (3, 32, 32)

    def test_light_background(self, records64):
        img = probe.record_image(records64[0])
        corner = img[:, 0, 0]
        assert np.all(corner > 0.9)

    def test_caption_matches_meta(self, records64):
        rec = records64[0]
        assert probe.caption_original(rec.meta) == rec.caption_original
        assert probe.caption_synthetic(rec.meta) == rec.caption_synthetic

    def test_rerender_is_exact(self, records64):
        # pixels are a pure function of meta
        rec = records64[5]
        np.testing.assert_array_equal(probe.render_scene(rec.meta), decode_png(rec.png))


class TestLabels:
    def test_18_classnames(self):
        names = probe.classnames()
        assert len(names) == 18
        assert len(set(names)) == 18
        assert "red circle" in names

    def test_class_of_single_shape_only(self):
        single = {"shapes": [{"color": "red", "kind": "circle"}]}
        double = {"shapes": [{"color": "red", "kind": "circle"}] * 2}
        assert probe.class_of(single) == "red circle"
        assert probe.class_of(double) is None


class TestVqa:
    def test_count_question_always_present(self, records64):
        samples = probe.vqa_samples(records64)
        by_id = {}
        for rid, q, a in samples:
            by_id.setdefault(rid, []).append((q, a))
        for rec in records64:
            qs = [q for q, _ in by_id[rec.record_id]]
            assert "how many shapes are there?" in qs

    def test_single_shape_canonical_questions(self, records64):
        samples = probe.vqa_samples(records64)
        singles = [r for r in records64 if len(r.meta["shapes"]) == 1]
        assert singles
        rec = singles[0]
        mine = {q: a for rid, q, a in samples if rid == rec.record_id}
        shape = rec.meta["shapes"][0]
        assert mine["what color is the shape?"] == shape["color"]
        assert mine["what shape is it?"] == shape["kind"]

    def test_answers_derive_from_meta(self, records64):
        # every color answer names a color that exists in the scene
        samples = probe.vqa_samples(records64)
        by_id = {r.record_id: r for r in records64}
        for rid, q, a in samples:
            if q.startswith("what color is the "):
                colors = {s["color"] for s in by_id[rid].meta["shapes"]}
                assert a in colors

    def test_ambiguous_color_question_skipped(self):
        meta = {
            "size": 32,
            "background": [245, 245, 245],
            "shapes": [
                {"kind": "circle", "color": "red", "cell": [0, 0], "scale": 1.0},
                {"kind": "circle", "color": "blue", "cell": [2, 2], "scale": 1.0},
            ],
        }
        from deskclip.data.shards import ShardRecord

        rec = ShardRecord(0, b"", "", "", meta)
        qs = [q for _, q, _ in probe.vqa_samples([rec])]
        assert "what color is the circle?" not in qs


class TestImportDirectory:
    def test_round_trip(self, tmp_path):
        recs = probe.generate_records(3, seed=0, image_size=32)
        for i, rec in enumerate(recs):
            (tmp_path / f"img{i}.png").write_bytes(rec.png)
        lines = [
            f"img{i}.png\t{r.caption_original}\t{r.caption_synthetic}"
            for i, r in enumerate(recs)
        ]
        (tmp_path / "captions.tsv").write_text("\n".join(lines), encoding="utf-8")
        got = probe.import_directory(tmp_path)
        assert len(got) == 3
        assert got[1].caption_original == recs[1].caption_original
        np.testing.assert_array_equal(decode_png(got[2].png), decode_png(recs[2].png))

    def test_missing_tsv(self, tmp_path):
        with pytest.raises(DataError):
            probe.import_directory(tmp_path)

    def test_missing_image_file(self, tmp_path):
        (tmp_path / "captions.tsv").write_text("ghost.png\tcaption\n")
        with pytest.raises(DataError):
            probe.import_directory(tmp_path)

    def test_two_columns_allowed(self, tmp_path):
        rec = probe.generate_records(1, seed=0, image_size=32)[0]
        (tmp_path / "a.png").write_bytes(rec.png)
        (tmp_path / "captions.tsv").write_text("a.png\tonly original\n")
        got = probe.import_directory(tmp_path)
        assert got[0].caption_synthetic == ""


def test_meta_sidecar(tmp_path):
    import json

    recs = probe.generate_records(4, seed=0, image_size=32)
    side = tmp_path / "probe.meta.jsonl"
    probe.save_meta_sidecar(side, recs)
    rows = [json.loads(l) for l in side.read_text().splitlines()]
    assert [r["id"] for r in rows] == [0, 1, 2, 3]
    assert rows[2]["meta"] == recs[2].meta
