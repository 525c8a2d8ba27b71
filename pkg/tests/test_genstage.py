import numpy as np
import pytest

from pbrbake.camera import standard_bundle
from pbrbake.errors import MalformedResponse, Unreachable
from pbrbake.genstage import (GenerationRequest, MultiViewChannelSet,
                              Perturbation, collapse_channel, inflate_channel,
                              mock_generate, request_external, save_candidates)
from pbrbake.shade import uniform_environment


def _random_set(rng, res=32, with_mr=False):
    kw = {}
    if with_mr:
        kw = dict(metallic=rng.uniform(0, 1, (6, res, res)),
                  roughness=rng.uniform(0, 1, (6, res, res)))
    return MultiViewChannelSet(shaded=rng.uniform(0, 1, (6, res, res, 3)),
                               albedo=rng.uniform(0, 1, (6, res, res, 3)), **kw)


def _request(res=32, count=1):
    return GenerationRequest(depth_maps=np.zeros((6, res, res)),
                             depth_sidecars=tuple({"dmin": 0.0, "dmax": 1.0}
                                                  for _ in range(6)),
                             text_prompt="a test asset", candidate_count=count)


def test_inflate_collapse_lossless():
    rng = np.random.default_rng(0)
    mono = rng.uniform(0, 1, (16, 16))
    np.testing.assert_array_equal(collapse_channel(inflate_channel(mono)), mono)
    with pytest.raises(MalformedResponse):
        inflate_channel(np.zeros((4, 4, 3)))
    with pytest.raises(MalformedResponse):
        collapse_channel(np.dstack([mono, mono, mono + 0.1]))


def test_directory_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    cands = [_random_set(rng, with_mr=True) for _ in range(2)]
    bundle = standard_bundle(resolution=32)
    save_candidates(tmp_path, cands, bundle, prompt="p", seeds=[3, 4])
    back = request_external(tmp_path, _request(count=2))
    assert len(back) == 2
    for orig, got in zip(cands, back):
        # PNG quantization: sRGB channels within a linear-space step,
        # linear single-channel maps within half an 8-bit step
        assert np.abs(got.shaded - orig.shaded).max() <= 1.3 / 255.0
        assert np.abs(got.albedo - orig.albedo).max() <= 1.3 / 255.0
        assert np.abs(got.metallic - orig.metallic).max() <= 0.5 / 255.0
        assert np.abs(got.roughness - orig.roughness).max() <= 0.5 / 255.0


def test_missing_view_rejected(tmp_path):
    rng = np.random.default_rng(2)
    save_candidates(tmp_path, [_random_set(rng)], standard_bundle(resolution=32))
    (tmp_path / "candidate_0" / "view_3" / "albedo.png").unlink()
    with pytest.raises(MalformedResponse):
        request_external(tmp_path, _request())


def test_missing_manifest_unreachable(tmp_path):
    with pytest.raises(Unreachable):
        request_external(tmp_path / "nope", _request())


def test_request_validation():
    with pytest.raises(MalformedResponse):
        GenerationRequest(depth_maps=np.zeros((5, 8, 8)), depth_sidecars=(),
                          text_prompt="x")
    with pytest.raises(MalformedResponse):
        _request(count=0)
    with pytest.raises(MalformedResponse):
        MultiViewChannelSet(shaded=np.zeros((6, 8, 8, 3)),
                            albedo=np.zeros((6, 4, 4, 3)))


# --- mock generator --------------------------------------------------------


def test_identity_perturbation_returns_ground_truth(cube_scene):
    from pbrbake.shade import render_albedo_views

    mesh, truth, bundle, gbuffers, _ = cube_scene
    env = uniform_environment(1.0)
    out = mock_generate(mesh, truth, bundle, env, Perturbation(), gbuffers=gbuffers)
    ref, _ = render_albedo_views(mesh, truth, bundle, gbuffers=gbuffers)
    np.testing.assert_array_equal(out.albedo, ref * out.alpha[..., None])
    assert out.provenance == "mock"


def test_full_lighting_residual_is_shaded(cube_scene):
    mesh, truth, bundle, gbuffers, _ = cube_scene
    env = uniform_environment(0.6)
    out = mock_generate(mesh, truth, bundle, env,
                        Perturbation(lighting_residual=1.0), gbuffers=gbuffers)
    mask = out.alpha > 0.5
    np.testing.assert_allclose(out.albedo[mask], out.shaded[mask], atol=1e-12)


def test_tint_applied(cube_scene):
    mesh, truth, bundle, gbuffers, _ = cube_scene
    env = uniform_environment(1.0)
    base = mock_generate(mesh, truth, bundle, env, Perturbation(), gbuffers=gbuffers)
    tinted = mock_generate(mesh, truth, bundle, env,
                           Perturbation(albedo_tint=(0.5, 1.0, 1.0)),
                           gbuffers=gbuffers)
    mask = base.alpha > 0.5
    np.testing.assert_allclose(tinted.albedo[mask][:, 0],
                               0.5 * base.albedo[mask][:, 0], atol=1e-12)
    np.testing.assert_allclose(tinted.albedo[mask][:, 1:],
                               base.albedo[mask][:, 1:], atol=1e-12)


def test_noise_sigma_statistics(cube_scene):
    mesh, truth, bundle, gbuffers, _ = cube_scene
    env = uniform_environment(1.0)
    sigma = 0.02
    clean = mock_generate(mesh, truth, bundle, env, Perturbation(), gbuffers=gbuffers)
    noisy = mock_generate(mesh, truth, bundle, env,
                          Perturbation(noise_sigma=sigma), seed=3, gbuffers=gbuffers)
    mask = clean.alpha > 0.5
    diff = (noisy.albedo - clean.albedo)[mask].ravel()
    # restrict to samples far from the [0,1] clamp
    vals = clean.albedo[mask].ravel()
    open_range = (vals > 4 * sigma) & (vals < 1 - 4 * sigma)
    diff = diff[open_range]
    assert len(diff) > 100_000
    assert abs(diff.std() - sigma) / sigma <= 0.10
    assert abs(diff.mean()) <= 0.01


def test_mock_deterministic(cube_scene):
    mesh, truth, bundle, gbuffers, _ = cube_scene
    env = uniform_environment(1.0)
    pert = Perturbation(albedo_tint=(0.9, 1.0, 1.1), lighting_residual=0.3,
                        noise_sigma=0.02)
    a = mock_generate(mesh, truth, bundle, env, pert, seed=7, gbuffers=gbuffers)
    b = mock_generate(mesh, truth, bundle, env, pert, seed=7, gbuffers=gbuffers)
    np.testing.assert_array_equal(a.albedo, b.albedo)
    np.testing.assert_array_equal(a.shaded, b.shaded)
    c = mock_generate(mesh, truth, bundle, env, pert, seed=8, gbuffers=gbuffers)
    assert not np.array_equal(a.albedo, c.albedo)


def test_http_generator_distinct_candidates():
    from pbrbake.testlab import MockGeneratorServer

    rng = np.random.default_rng(5)
    base_shaded = rng.uniform(0.2, 0.9, (6, 32, 32, 3))
    base_albedo = rng.uniform(0.2, 0.9, (6, 32, 32, 3))
    with MockGeneratorServer(base_shaded, base_albedo) as srv:
        sets = request_external(srv.base_url, _request(count=3))
    assert len(sets) == 3
    # distinct seeds produce distinct candidates
    assert not np.array_equal(sets[0].shaded, sets[1].shaded)
    assert not np.array_equal(sets[1].shaded, sets[2].shaded)
    for s in sets:
        assert s.shaded.shape == (6, 32, 32, 3)
        assert s.provenance == "external"
