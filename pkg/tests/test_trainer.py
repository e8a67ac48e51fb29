import numpy as np
import pytest

from crossiris.autodiff import Parameter
from crossiris.config import ArchitectureConfig, OptimizerConfig, ScenarioConfig
from crossiris.dataset import generate_dataset
from crossiris.evaluate import translate_records, upsample_bicubic
from crossiris.losses import LossWeights
from crossiris.train import (AdamState, Cropper, PairSampler, TrainingError, adam_step,
                             embedding_distances, run_scenario_2b, train_cgan, train_cpgan,
                             train_scenario)

ARCH = ArchitectureConfig(blocks=2, head_kernel=3)


def cfg(scenario="S1_nir2vis", steps=3, **kw):
    gallery = "LR" if scenario.startswith("S2") else "HR"
    kw.setdefault("architecture", ARCH)
    return ScenarioConfig(scenario=scenario, gallery_resolution=gallery, steps=steps,
                          crop=(32, 64), batch_size=4, **kw)


@pytest.fixture(scope="module")
def two_class(tmp_path_factory):
    return generate_dataset(2, 4, 3, out_dir=tmp_path_factory.mktemp("two"), with_lr=True)


# --- Adam ----------------------------------------------------------------------------

def test_first_adam_step_moves_by_lr_against_the_gradient():
    p = Parameter(np.array([1.0, -2.0]))
    p.grad = np.array([3.0, -0.5])
    state = AdamState([p], lr=0.01)
    adam_step([p], state)
    np.testing.assert_allclose(p.data, [0.99, -1.99], atol=1e-8)
    assert p.grad is None


def test_zero_gradient_gives_zero_update():
    p = Parameter(np.array([1.0]))
    state = AdamState([p])
    adam_step([p], state)
    assert p.data[0] == 1.0


def test_adam_decreases_a_quadratic_monotonically():
    w = Parameter(np.array([1.0]))
    state = AdamState([w], lr=0.05)
    values = []
    for _ in range(10):
        values.append(float(w.data[0] ** 2))
        w.grad = 2 * w.data
        adam_step([w], state)
    assert all(a > b for a, b in zip(values, values[1:]))


def test_adam_rejects_non_finite_gradients():
    p = Parameter(np.array([1.0]))
    p.grad = np.array([np.inf])
    with pytest.raises(FloatingPointError):
        adam_step([p], AdamState([p]))


# --- sampling ------------------------------------------------------------------------

def test_crops_are_co_registered_across_resolutions():
    rng = np.random.default_rng(0)
    hr = rng.random((3, 1, 64, 512))
    lr = hr[:, :, ::2, ::2]
    c = Cropper((32, 64))
    off = c.offsets(rng, 3)
    np.testing.assert_array_equal(c.apply(hr, off)[:, :, ::2, ::2], c.apply(lr, off))
    assert c.shape("LR") == (16, 32)


def test_crops_wrap_around_the_angular_axis():
    x = np.arange(512.0)[None, None, None, :].repeat(64, axis=2)
    out = Cropper((16, 64)).apply(x, np.array([[0, 480]]))
    np.testing.assert_array_equal(out[0, 0, 0], np.r_[480:512, 0:32])


def test_pair_sampler_is_balanced_and_labels_are_correct(two_class):
    vis = two_class.select("train", "VIS", "HR")
    nir = two_class.select("train", "NIR", "HR")
    s = PairSampler(vis, nir, np.random.default_rng(0))
    for _ in range(5):
        vi, ni, y = s.batch(8)
        assert (y == 0).sum() == 4
        for a, b, label in zip(vi, ni, y):
            assert (vis[a].class_id != nir[b].class_id) == bool(label)


# --- translation training --------------------------------------------------------------

def test_one_epoch_smoke(two_class):
    r = train_cgan(two_class, cfg(steps=0, epochs=1))
    assert len(r.history) == 1  # four pairs, batch four
    row = r.history[0]
    assert all(np.isfinite(row[k]) for k in ("loss_d", "loss_g", "l2", "adv", "perc"))


def test_same_seed_gives_identical_loss_curves(two_class):
    a = train_cgan(two_class, cfg(steps=4))
    b = train_cgan(two_class, cfg(steps=4))
    assert a.log_csv() == b.log_csv()
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
    c = train_cgan(two_class, cfg(steps=4, seed=1))
    assert c.log_csv() != a.log_csv()


def _train_l2(data, ckpts, src, dst):
    pairs = data.pairs("train", src, dst)
    out, _ = translate_records(data, [p[0] for p in pairs], ckpts)
    target = np.stack([data.load(p[1])[0] for p in pairs])
    return float(((out - target) ** 2).mean())


def test_pure_regression_halves_the_training_l2(two_class):
    w = LossWeights(lambda1=0.0, lambda2=0.0)
    fast = OptimizerConfig(lr=5e-4)
    before = train_cgan(two_class, cfg(steps=0, weights=w, optimizer=fast)).checkpoint
    after = train_cgan(two_class, cfg(steps=200, weights=w, optimizer=fast)).checkpoint
    src, dst = ("NIR", "HR"), ("VIS", "HR")
    assert _train_l2(two_class, [after], src, dst) <= 0.5 * _train_l2(two_class, [before], src, dst)


def test_two_stage_pipeline_maps_lr_to_hr(two_class):
    stages = run_scenario_2b(two_class, cfg("S2b_separate", steps=2))
    rec = two_class.select("test", "NIR", "LR")[:2]
    out, masks = translate_records(two_class, rec, [s.checkpoint for s in stages])
    assert out.shape == (2, 64, 512) and masks.shape == (2, 64, 512)


def test_stages_do_not_depend_on_training_order(two_class):
    c = cfg("S2b_separate", steps=2)
    second_first = train_cgan(two_class, c, 1)
    first = train_cgan(two_class, c, 0)
    together = run_scenario_2b(two_class, c)
    assert together[0].checkpoint.to_bytes() == first.checkpoint.to_bytes()
    assert together[1].checkpoint.to_bytes() == second_first.checkpoint.to_bytes()


def test_super_resolution_stage_halves_l2_against_bicubic(two_class):
    sr = train_cgan(two_class, cfg("S2b_separate", steps=200, optimizer=OptimizerConfig(lr=5e-4)), 1)
    pairs = two_class.pairs("train", ("VIS", "LR"), ("VIS", "HR"))
    target = np.stack([two_class.load(p[1])[0] for p in pairs])
    bicubic = np.stack([upsample_bicubic(two_class.load(p[0])[0]) for p in pairs])
    trained = _train_l2(two_class, [sr.checkpoint], ("VIS", "LR"), ("VIS", "HR"))
    assert trained <= 0.5 * float(((bicubic - target) ** 2).mean())


def test_scenario_dispatch(two_class):
    assert train_scenario(two_class, ScenarioConfig(scenario="BASELINE")) == []
    with pytest.raises(TrainingError):
        train_cgan(two_class, cfg("CPGAN"))
    with pytest.raises(TrainingError):
        run_scenario_2b(two_class, cfg())
    with pytest.raises(TrainingError):
        train_cpgan(two_class, cfg())


# --- coupled training --------------------------------------------------------------------

def cp_cfg(steps, **kw):
    return ScenarioConfig(scenario="CPGAN", steps=steps, crop=(32, 64), batch_size=8,
                          architecture=ArchitectureConfig(unet_depth=3), **kw)


def test_pure_contrastive_training_decreases_the_loss(two_class):
    w = LossWeights(lambda3=0.0, lambda4=0.0, lambda5=0.0)
    r = train_cpgan(two_class, cp_cfg(200, weights=w))
    cpl = np.array([h["cpl"] for h in r.history])
    assert np.allclose([h["loss_g"] for h in r.history], cpl)
    assert cpl[-20:].mean() < cpl[:20].mean()


def test_coupled_training_is_byte_deterministic(two_class):
    a = train_cpgan(two_class, cp_cfg(3)).checkpoint.to_bytes()
    b = train_cpgan(two_class, cp_cfg(3)).checkpoint.to_bytes()
    assert a == b


def test_embedding_distances_cover_every_test_pair(two_class):
    r = train_cpgan(two_class, cp_cfg(1))
    gen, imp = embedding_distances(two_class, r.checkpoint)
    n_vis = len(two_class.select("test", "VIS", "HR"))
    assert gen.size == n_vis * 2 and imp.size == n_vis * 2
    assert (gen >= 0).all() and (imp >= 0).all()


def test_coupled_model_across_resolutions(two_class):
    c = cp_cfg(1).replace(gallery_resolution="LR")
    r = train_cpgan(two_class, c)
    assert r.checkpoint["gen_vis"].embedding_length == r.checkpoint["gen_nir"].embedding_length
    gen, imp = embedding_distances(two_class, r.checkpoint)
    assert gen.size and imp.size
