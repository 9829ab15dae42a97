from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitladder.core import (
    DEFAULT_RECIPE,
    BitrateLadder,
    EncodingRecipe,
    LadderError,
    RDCurve,
    RDPoint,
    RDSurface,
    RecipeError,
    Resolution,
    Sequence,
    load_manifest,
    surface_from_points,
    surface_lookup,
    validate_recipe,
)

import oracles

R1080, R720, R216 = Resolution(1920, 1080), Resolution(1280, 720), Resolution(384, 216)


# -- Resolution / recipe ----------------------------------------------------

def test_resolution_identity_and_display_name():
    assert Resolution(1920, 1080).name == "1080p"
    assert str(Resolution(1280, 720)) == "1280x720"
    assert Resolution.parse("960x540") == Resolution(960, 540)
    # same height, different width: distinct resolutions
    assert Resolution(1440, 1080) != R1080
    assert Resolution.from_dict({"width": 384, "height": 216}) == R216


@pytest.mark.parametrize("w,h", [(15, 100), (100, 15), (0, 0)])
def test_resolution_minimum_size(w, h):
    with pytest.raises(ValueError):
        Resolution(w, h)


def test_default_recipe_is_valid_and_matches_streaming_range():
    assert validate_recipe(DEFAULT_RECIPE) is DEFAULT_RECIPE
    assert [r.height for r in DEFAULT_RECIPE.resolutions] == [1080, 720, 540, 432, 360, 270, 216]
    assert DEFAULT_RECIPE.target_bitrates_kbps == (240, 375, 550, 750, 1000, 1500, 2300, 3000,
                                                 4300, 5800)


def _recipe(res, rates):
    return EncodingRecipe(tuple(res), tuple(rates))


@pytest.mark.parametrize("res,rates,message", [
    ([R1080, R720], [240, 240], "duplicate bitrate"),
    ([R1080], [240, 375], "R >= 2 required"),
    ([R1080, R720], [240], "B >= 2 required"),
    ([R1080, R1080], [240, 375], "duplicate resolution"),
    ([R720, R1080], [240, 375], "resolutions not descending"),
    ([R1080, R720], [375, 240], "bitrates not ascending"),
    ([R1080, R720], [], "empty bitrate set"),
    ([R1080, R720], [0, 240], "non-positive bitrate"),
])
def test_validate_recipe_reports_violation(res, rates, message):
    with pytest.raises(RecipeError) as e:
        validate_recipe(_recipe(res, rates))
    assert any(message in v for v in e.value.violations)


def test_validate_recipe_reports_every_violation():
    with pytest.raises(RecipeError) as e:
        validate_recipe(_recipe([R1080], [240, 240]))
    assert len(e.value.violations) == 2


# -- points and curves ------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"quality": -0.1}, {"quality": 100.5}, {"actual": 0.0}, {"actual": float("nan")},
])
def test_rdpoint_validation(kwargs):
    with pytest.raises(ValueError):
        RDPoint(R720, 1000, kwargs.get("actual", 1000.0), kwargs.get("quality", 50.0))


def test_rdcurve_rejects_foreign_resolution_and_unsorted_targets():
    with pytest.raises(ValueError):
        RDCurve(R720, (RDPoint(R1080, 240, 240.0, 50.0),))
    with pytest.raises(ValueError):
        RDCurve(R720, (RDPoint(R720, 375, 375.0, 50.0), RDPoint(R720, 240, 240.0, 40.0)))
    with pytest.raises(ValueError):
        RDCurve(R720, (RDPoint(R720, 240, 240.0, 50.0), RDPoint(R720, 240, 250.0, 51.0)))


def _capped_surface():
    """216p only up to 750 kbps, every other resolution on the full grid."""
    pts = []
    for j, r in enumerate(DEFAULT_RECIPE.resolutions):
        for i, b in enumerate(DEFAULT_RECIPE.target_bitrates_kbps):
            if r == R216 and b >= 1000:
                continue
            pts.append(RDPoint(r, b, float(b), 30.0 + 5 * i + j))
    return surface_from_points("capped", DEFAULT_RECIPE, pts)


def test_surface_lookup_absent_outside_bounds():
    s = _capped_surface()
    assert surface_lookup(s, R216, 2300) is None
    p = surface_lookup(s, R1080, 5800)
    assert p is not None and p.target_bitrate_kbps == 5800 and p.resolution == R1080
    assert not s.incomplete


def test_surface_lookup_matches_exhaustive_scan():
    rng = np.random.default_rng(3)
    for k in range(20):
        Q = oracles.random_quality_grid(rng, DEFAULT_RECIPE.num_bitrates,
                                        DEFAULT_RECIPE.num_resolutions, exclude_p=0.5)
        s = oracles.surface_from_grid(f"x{k}", DEFAULT_RECIPE, Q)
        for i, b in enumerate(DEFAULT_RECIPE.target_bitrates_kbps):
            for j, r in enumerate(DEFAULT_RECIPE.resolutions):
                p = surface_lookup(s, r, b)
                if np.isnan(Q[i, j]):
                    assert p is None
                else:
                    assert p.quality == Q[i, j]


def test_surface_flags_uncovered_bitrates():
    pts = [RDPoint(R1080, b, float(b), 50.0) for b in DEFAULT_RECIPE.target_bitrates_kbps[1:]]
    s = surface_from_points("gap", DEFAULT_RECIPE, pts)
    assert s.incomplete and s.uncovered_bitrates() == [240]


def test_surface_rejects_duplicates_and_foreign_points():
    p = RDPoint(R1080, 240, 240.0, 50.0)
    with pytest.raises(ValueError, match="duplicate"):
        surface_from_points("d", DEFAULT_RECIPE, [p, p])
    with pytest.raises(ValueError):
        surface_from_points("d", DEFAULT_RECIPE, [RDPoint(R1080, 999, 999.0, 50.0)])
    with pytest.raises(ValueError):
        surface_from_points("d", DEFAULT_RECIPE, [RDPoint(Resolution(320, 180), 240, 240.0, 5.0)])


def test_surface_orders_curves_by_recipe():
    pts = [RDPoint(r, 240, 240.0, 50.0) for r in reversed(DEFAULT_RECIPE.resolutions)]
    s = surface_from_points("o", DEFAULT_RECIPE, pts)
    assert list(s.curves) == list(DEFAULT_RECIPE.resolutions)


# -- ladders ----------------------------------------------------------------

def test_ladder_one_hot_columns_follow_recipe_order():
    lad = BitrateLadder.from_indices([6, 6, 5, 4, 3, 2, 2, 1, 0, 0], DEFAULT_RECIPE)
    Y = lad.one_hot
    assert Y.shape == (10, 7)
    np.testing.assert_array_equal(Y.sum(axis=1), np.ones(10))
    assert Y[0, 6] == 1 and Y[-1, 0] == 1
    assert lad.resolution_at(240) == R216


def test_ladder_errors():
    with pytest.raises(LadderError, match="missing"):
        BitrateLadder.from_entries([(240, R216)], DEFAULT_RECIPE)
    with pytest.raises(LadderError):
        BitrateLadder.from_one_hot(np.ones((10, 7)), DEFAULT_RECIPE)
    with pytest.raises(LadderError):
        BitrateLadder.from_indices([0] * 9, DEFAULT_RECIPE)
    entries = [(b, R1080) for b in DEFAULT_RECIPE.target_bitrates_kbps] + [(240, R720)]
    with pytest.raises(LadderError, match="duplicate"):
        BitrateLadder.from_entries(entries, DEFAULT_RECIPE)


ladder_indices = st.lists(st.integers(0, 6), min_size=10, max_size=10)


@given(ladder_indices)
def test_one_hot_entries_duality(idx):
    lad = BitrateLadder.from_indices(idx, DEFAULT_RECIPE, "s")
    back = BitrateLadder.from_one_hot(lad.one_hot, DEFAULT_RECIPE, "s")
    assert back == lad
    assert back.indices == idx


@given(ladder_indices)
def test_ladder_json_round_trip(idx):
    lad = BitrateLadder.from_indices(idx, DEFAULT_RECIPE, "seq")
    assert BitrateLadder.from_dict(json.loads(json.dumps(lad.to_dict())), DEFAULT_RECIPE) == lad


resolutions = st.builds(Resolution, st.integers(16, 4096), st.integers(16, 4096))


@given(resolutions)
def test_resolution_round_trip(r):
    assert Resolution.from_dict(r.to_dict()) == r
    assert Resolution.parse(str(r)) == r


@given(st.lists(st.integers(1, 100_000), min_size=2, max_size=12, unique=True))
def test_recipe_round_trip(rates):
    recipe = EncodingRecipe((R1080, R720, R216), tuple(sorted(rates)), "codec-x")
    assert EncodingRecipe.from_dict(json.loads(json.dumps(recipe.to_dict()))) == recipe


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_surface_round_trip(seed):
    rng = np.random.default_rng(seed)
    Q = oracles.random_quality_grid(rng, DEFAULT_RECIPE.num_bitrates, DEFAULT_RECIPE.num_resolutions)
    rates = rng.uniform(0.8, 1.2, Q.shape) * np.array(DEFAULT_RECIPE.target_bitrates_kbps)[:, None]
    s = oracles.surface_from_grid("rt", DEFAULT_RECIPE, Q, rates)
    back = RDSurface.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back == s


def test_surface_document_layout():
    d = _capped_surface().to_dict()
    assert set(d) == {"sequence_id", "quality_metric", "recipe", "points"}
    assert d["recipe"]["resolutions"][0] == {"w": 1920, "h": 1080}
    assert isinstance(d["points"][0]["target_bitrate_kbps"], int)


# -- manifest ---------------------------------------------------------------

def test_manifest_resolves_relative_paths(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps([
        {"sequence_id": "a", "path": "clips/a.y4m", "width": 1920, "height": 1080, "fps": 30},
        {"sequence_id": "b", "path": "/abs/b.y4m", "width": 1280, "height": 720,
         "split": "test"},
    ]))
    a, b = load_manifest(tmp_path / "m.json")
    assert a.path == str(tmp_path / "clips" / "a.y4m")
    assert b.path == "/abs/b.y4m" and b.split == "test" and b.fps == 24.0
    assert Sequence.from_dict(a.to_dict()) == a


def test_manifest_error_names_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('[\n  {"sequence_id": "a",\n   "path": "x"\n   "width": 1}\n]\n')
    with pytest.raises(ValueError, match=r"bad\.json:4: malformed manifest"):
        load_manifest(p)


def test_manifest_rejects_duplicates_and_missing_fields(tmp_path):
    p = tmp_path / "m.json"
    rec = {"sequence_id": "a", "path": "x", "width": 64, "height": 64}
    p.write_text(json.dumps([rec, rec]))
    with pytest.raises(ValueError, match="duplicate"):
        load_manifest(p)
    p.write_text(json.dumps([{"sequence_id": "a"}]))
    with pytest.raises(ValueError, match="record 0"):
        load_manifest(p)
