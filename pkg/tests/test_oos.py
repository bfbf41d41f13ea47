import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from objtraj.backbone import BackboneSpec, load_backbone
from objtraj.errors import ArchiveError, DomainError
from objtraj.generator import GeneratorConfig, build_generator, super_resolve
from objtraj.objective_space import constant_map
from objtraj.oos import (
    LinearTapWeights,
    OosGridSpec,
    PerceptualDistanceMap,
    SelectionMap,
    distance_map_torch,
    downscale_selection,
    ensemble_oos,
    grid_search_oos,
    load_map,
    parse_grid,
    perceptual_distance_map,
    perceptual_scalar,
    save_map,
    sroos_infer,
    uniform_tap_weights,
)


@pytest.fixture(scope="module")
def surrogate():
    return load_backbone(BackboneSpec())


@pytest.fixture(scope="module")
def tiny_gen():
    return build_generator(GeneratorConfig(scale=4, n_blocks=2, channels=16, cond_channels=8), seed=7)


def test_default_grid_is_21_points():
    grid = OosGridSpec()
    assert len(grid) == 21
    assert grid.t_samples[0] == 0.0 and grid.t_samples[-1] == 1.0
    assert grid.t_samples[7] == pytest.approx(0.35)


def test_parse_grid_forms():
    assert parse_grid("0:1:0.25").t_samples == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert parse_grid("0,0.5,1").t_samples == (0.0, 0.5, 1.0)
    assert len(parse_grid("0:1:0.05")) == 21
    with pytest.raises(DomainError):
        parse_grid("0:1:0:5")
    with pytest.raises(DomainError):
        parse_grid("0:1:-0.1")
    with pytest.raises(DomainError):
        OosGridSpec((0.5, 0.5))
    with pytest.raises(DomainError):
        OosGridSpec((0.0, 1.5))


def test_selection_map_grid_membership():
    grid = (0.0, 0.5, 1.0)
    sel = SelectionMap(np.array([[0.0, 0.5], [1.0, 0.5]], dtype=np.float32), "HR", grid=grid)
    assert sel.shape == (2, 2)
    assert not sel.values.flags.writeable
    with pytest.raises(DomainError, match="attached grid"):
        SelectionMap(np.array([[0.3]], dtype=np.float32), "HR", grid=grid)
    with pytest.raises(DomainError, match="resolution"):
        SelectionMap(np.zeros((2, 2)), "mid")
    with pytest.raises(DomainError, match="2-D"):
        SelectionMap(np.zeros(4), "HR")


def test_distance_map_zero_for_identical(surrogate):
    img = np.random.default_rng(0).random((3, 16, 16)).astype(np.float32)
    pd = perceptual_distance_map(img, img, surrogate)
    assert pd.values.shape == (16, 16)
    assert pd.scalar == pytest.approx(0.0, abs=1e-10)


def test_distance_map_oracle_single_tap(surrogate):
    # Hand-computed reference: unit-normalize channels, weighted squared diff,
    # bilinear upsample, average taps.
    rng = np.random.default_rng(1)
    a = torch.from_numpy(rng.random((1, 3, 16, 16)).astype(np.float32))
    b = torch.from_numpy(rng.random((1, 3, 16, 16)).astype(np.float32))
    weights = uniform_tap_weights(surrogate)
    from objtraj.backbone import extract_taps

    taps_a, taps_b = extract_taps(a, surrogate), extract_taps(b, surrogate)
    want = torch.zeros(1, 1, 16, 16)
    for ta, tb, wv in zip(taps_a, taps_b, weights.per_level):
        na = ta / (ta.square().sum(dim=1, keepdim=True).sqrt() + 1e-10)
        nb = tb / (tb.square().sum(dim=1, keepdim=True).sqrt() + 1e-10)
        w = torch.as_tensor(wv, dtype=torch.float32).view(1, -1, 1, 1)
        field = (w * (na - nb).square()).sum(dim=1, keepdim=True)
        want = want + torch.nn.functional.interpolate(field, size=(16, 16), mode="bilinear", align_corners=False)
    want = (want / 5).squeeze()
    got = distance_map_torch(a, b, surrogate).squeeze()
    assert torch.allclose(got, want, atol=1e-7)
    assert perceptual_scalar(a.squeeze(0).numpy(), b.squeeze(0).numpy(), surrogate) == pytest.approx(
        want.mean().item(), rel=1e-5
    )


def test_distance_map_is_differentiable(surrogate):
    a = torch.rand(1, 3, 16, 16, requires_grad=True)
    b = torch.rand(1, 3, 16, 16)
    distance_map_torch(a, b, surrogate).mean().backward()
    assert a.grad is not None and torch.isfinite(a.grad).all()


def test_tap_weights_validation(surrogate):
    with pytest.raises(DomainError):
        LinearTapWeights((np.array([-1.0, 0.5]),))
    uni = uniform_tap_weights(surrogate)
    assert [len(w) for w in uni.per_level] == [16, 24, 32, 48, 64]
    assert all(np.isclose(w.sum(), 1.0) for w in uni.per_level)


def test_grid_search_matches_naive_loop(tiny_gen, surrogate):
    # Independent oracle: materialize every candidate field, argmin in full.
    rng = np.random.default_rng(2)
    x = rng.random((3, 4, 4)).astype(np.float32)
    y = rng.random((3, 16, 16)).astype(np.float32)
    grid = OosGridSpec((0.0, 0.25, 0.5, 0.75, 1.0))
    sel, scalars = grid_search_oos(tiny_gen, x, y, grid, surrogate)

    fields = []
    for t in grid.t_samples:
        sr = super_resolve(x, constant_map(t, 4, 4), tiny_gen)
        fields.append(perceptual_distance_map(y, sr.numpy(), surrogate).values)
    fields = np.stack(fields)
    naive_idx = fields.argmin(axis=0)
    naive_t = np.asarray(grid.t_samples, dtype=np.float32)[naive_idx]
    assert np.array_equal(sel.values, naive_t)
    assert np.allclose(scalars, fields.mean(axis=(1, 2)), atol=1e-7)


def test_grid_search_tie_breaks_to_smallest_t(tiny_gen, surrogate, monkeypatch):
    # Force identical fields for every t: every pixel ties, the selection must be t=0.
    import objtraj.oos as oos_mod

    const = PerceptualDistanceMap(np.ones((8, 8), dtype=np.float32))
    monkeypatch.setattr(oos_mod, "perceptual_distance_map", lambda *a, **k: const)
    x = np.zeros((3, 2, 2), dtype=np.float32)
    y = np.zeros((3, 8, 8), dtype=np.float32)
    sel, _ = grid_search_oos(tiny_gen, x, y, OosGridSpec((0.0, 0.5, 1.0)), surrogate)
    assert np.all(sel.values == 0.0)


def test_downscale_selection_pools_means():
    vals = np.array(
        [[0.0, 1.0, 0.5, 0.5], [1.0, 0.0, 0.5, 0.5], [1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]],
        dtype=np.float32,
    )
    sel = SelectionMap(vals, "HR", grid=(0.0, 0.5, 1.0))
    pooled = downscale_selection(sel, 2)
    assert pooled.values.shape == (2, 2)
    assert np.allclose(pooled.values, [[0.5, 0.5], [1.0, 0.0]])
    with pytest.raises(DomainError, match="divisible"):
        downscale_selection(SelectionMap(vals[:3], "HR", grid=(0.0, 0.5, 1.0)), 2)
    with pytest.raises(DomainError, match="t-valued"):
        downscale_selection(SelectionMap(np.zeros((4, 4), dtype=np.int32), "HR"), 2)


def test_ensemble_min_field_dominates(surrogate):
    rng = np.random.default_rng(3)
    y = rng.random((3, 16, 16)).astype(np.float32)
    cands = [np.clip(y + rng.normal(0, s, y.shape), 0, 1).astype(np.float32) for s in (0.05, 0.1, 0.2)]
    mixed, sel = ensemble_oos(cands, y, surrogate)
    mixed_field = perceptual_distance_map(y, mixed, surrogate).values
    cand_fields = np.stack([perceptual_distance_map(y, c, surrogate).values for c in cands])
    min_field = cand_fields.min(axis=0)
    # The pointwise-min reference field lower-bounds every candidate everywhere.
    assert (min_field <= cand_fields + 1e-9).all()
    assert sel.values.min() >= 0 and sel.values.max() < 3
    # Mixing copies pixels, so its field is not exactly min_field, but each
    # selected pixel index must point at the per-pixel argmin.
    assert np.array_equal(sel.values, cand_fields.argmin(axis=0).astype(np.int32))
    assert mixed.shape == y.shape
    with pytest.raises(DomainError, match="at least 2"):
        ensemble_oos([y], y, surrogate)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ensemble_argmin_lowest_index_property(seed):
    rng = np.random.default_rng(seed)
    fields = rng.integers(0, 3, size=(3, 5, 5)).astype(np.float32)
    idx = fields.argmin(axis=0)
    # numpy argmin takes the first minimum; mirrors the documented tie rule.
    for i in range(5):
        for j in range(5):
            col = fields[:, i, j]
            assert col[idx[i, j]] == col.min()
            assert not (col[: idx[i, j]] == col.min()).any()


def test_sroos_infer_shape(tiny_gen, surrogate):
    rng = np.random.default_rng(4)
    x = rng.random((3, 4, 4)).astype(np.float32)
    y = rng.random((3, 16, 16)).astype(np.float32)
    sel, _ = grid_search_oos(tiny_gen, x, y, OosGridSpec((0.0, 1.0)), surrogate)
    out = sroos_infer(tiny_gen, x, sel)
    assert out.shape == (3, 16, 16)


def test_map_save_load_roundtrip(tmp_path):
    vals = np.linspace(0, 1, 64, dtype=np.float64).reshape(8, 8)
    path = tmp_path / "m.png"
    save_map(path, vals, {"kind": "objective", "source": "test"})
    back, meta = load_map(path)
    assert meta["kind"] == "objective"
    assert meta["shape"] == [8, 8]
    assert np.abs(back - vals).max() <= 0.5 / 65535 + 1e-9
    with pytest.raises(DomainError, match="\\[0,1\\]"):
        save_map(tmp_path / "bad.png", vals + 1.0, {})
    with pytest.raises(ArchiveError, match="missing"):
        load_map(tmp_path / "absent.png")


def test_selection_map_roundtrip_snaps_to_grid(tmp_path):
    grid = [0.0, 0.05, 0.4, 1.0]
    vals = np.array([[0.0, 0.05], [0.4, 1.0]], dtype=np.float64)
    path = tmp_path / "sel.png"
    save_map(path, vals, {"kind": "selection_t", "grid": grid})
    back, meta = load_map(path)
    assert np.array_equal(back, vals.astype(np.float32))  # exact after snapping
    assert meta["grid"] == grid
    # Sidecar loss: deleting it must fail loudly, not silently misread.
    (tmp_path / "sel.json").unlink()
    with pytest.raises(ArchiveError):
        load_map(path)
