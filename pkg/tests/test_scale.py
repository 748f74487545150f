import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from objscale.errors import (DegenerateProblem, InvalidDims, NoDetections, NonPositiveScale,
                             NoSamples, NoUsableObjects)
from objscale.geometry import Ellipsoid, RigidPose, Rotation
from objscale.priors import DimensionPrior, PriorRepository, SizePrior, builtin_sample_priors
from objscale.scale import (ConfidenceWeights, DimensionSample, ObjectEstimate, PipelineOptions,
                            ShapeClass, ShapeFeatures, apply_scale, classify_shape, confidence,
                            eliminate_outliers, estimate_scale, local_scales, run_pipeline,
                            select_dimensions, shape_features)

P1 = DimensionPrior(1.0, 0.1)


def sample(mu=1.0, d=1.0, sigma=1.0, c=1.0, oid=0):
    return DimensionSample(oid, d, DimensionPrior(mu, sigma), c)


def from_local(scales):
    return [sample(mu=s, d=1.0, oid=i) for i, s in enumerate(scales)]


def obj(dims, oid=0, cls="thing", probs=(1.0,), npts=10):
    return ObjectEstimate(oid, cls, tuple(dims), tuple(probs), npts, len(probs))


# -- shape features ------------------------------------------------------------------

@pytest.mark.parametrize("dims, expected", [
    ((1, 1, 1), (0, 0, 1)),
    ((10, 1, 1), (0.9, 0, 0.1)),
    ((10, 9, 1), (0.1, 0.8, 0.1)),
])
def test_shape_features(dims, expected):
    f = shape_features(dims)
    assert (f.linearity, f.planarity, f.scattering) == pytest.approx(expected, abs=1e-15)


def test_shape_features_invalid():
    with pytest.raises(InvalidDims):
        shape_features((1, 2, 3))
    with pytest.raises(InvalidDims):
        shape_features((1, 1, 0))


def test_shape_features_sum_to_one():
    rng = np.random.default_rng(0)
    for d in np.sort(rng.uniform(1e-3, 10, size=(10_000, 3)), axis=1)[:, ::-1]:
        f = shape_features(d)
        assert abs(f.linearity + f.planarity + f.scattering - 1.0) <= 1e-12
        assert min(f.linearity, f.planarity, f.scattering) >= 0


@pytest.mark.parametrize("f, cls", [
    ((0.9, 0, 0.1), ShapeClass.POLE_LIKE),
    ((0.1, 0.8, 0.1), ShapeClass.DISK_LIKE),
    ((0, 0, 1), ShapeClass.GENERAL),
    ((0.4, 0.4, 0.2), ShapeClass.GENERAL),
])
def test_classify(f, cls):
    assert classify_shape(ShapeFeatures(*f)) is cls


# -- dimension selection -----------------------------------------------------------------------

PRIOR = SizePrior("thing", (DimensionPrior(3, 0.3), DimensionPrior(2, 0.2), DimensionPrior(1, 0.1)))


def test_select_pole():
    s = select_dimensions(obj((10, 1, 1)), PRIOR, 0.7)
    assert len(s) == 1 and s[0].dim == 10 and s[0].prior.mean == 3 and s[0].confidence == 0.7


def test_select_disk():
    s = select_dimensions(obj((10, 9, 1)), PRIOR, 0.5)
    assert [x.dim for x in s] == [10, 9]
    assert [x.prior.mean for x in s] == [3, 2]


def test_select_general_and_disabled():
    assert len(select_dimensions(obj((1, 1, 1)), PRIOR, 1.0)) == 3
    assert len(select_dimensions(obj((10, 1, 1)), PRIOR, 1.0, enabled=False)) == 3


@given(st.lists(st.floats(0.01, 100), min_size=3, max_size=3))
def test_select_structural(raw):
    dims = sorted(raw, reverse=True)
    s = select_dimensions(obj(dims), PRIOR, 1.0)
    kind = classify_shape(shape_features(dims))
    idx = [x.dim_index for x in s]
    assert idx == list(range(len(idx)))
    if kind is ShapeClass.POLE_LIKE:
        assert idx == [0]
    elif kind is ShapeClass.DISK_LIKE:
        assert idx == [0, 1]


# -- confidence ----------------------------------------------------------------------------------

def test_confidence_full():
    o = ObjectEstimate(0, "x", (1, 1, 1), (1.0,) * 15, 10, 15)
    assert confidence(o) == pytest.approx(1.0)
    o = ObjectEstimate(0, "x", (1, 1, 1), (1.0,), 10, 1)
    assert confidence(o, ConfidenceWeights(0, 0, 1)) == 0.0


def test_confidence_hand_value():
    # c_det = 0.7 from the two probabilities; N_o is fixed at 15 to saturate c_vis
    o = ObjectEstimate(0, "x", (1, 1, 1), (0.8, 0.6) + (0.7,) * 13, 100, 15)
    assert confidence(o) == pytest.approx((0.7 + 1 + 1) / 3)


def test_confidence_single_point():
    o = ObjectEstimate(0, "x", (1, 1, 1), (1.0,), 1, 1)
    assert confidence(o, ConfidenceWeights(0, 1, 0)) == 0.0


def test_confidence_intermediate():
    o = ObjectEstimate(0, "x", (1, 1, 1), (0.5,) * 4, 5, 4)
    expected = (0.5 + math.log10(5) + math.log(4) / math.log(15)) / 3
    assert confidence(o) == pytest.approx(expected)


def test_confidence_no_detections():
    with pytest.raises(NoDetections):
        confidence(ObjectEstimate(0, "x", (1, 1, 1), (), 5, 0))


# -- local scales and outliers ------------------------------------------------------------------

def test_local_scales():
    s = [sample(2, 1), sample(1, 1), sample(0.3, 0.6)]
    assert local_scales(s) == pytest.approx([2, 1, 0.5])


def test_boxplot_example():
    scales = [1.0, 0.95, 1.05, 1.1, 0.9, 3.0]
    q1, q3 = np.percentile(scales, [25, 75])
    assert (q1, q3) == pytest.approx((0.9625, 1.0875))
    inl, out = eliminate_outliers(from_local(scales))
    assert [s.prior.mean for s in out] == [3.0]
    assert len(inl) == 5


def test_boxplot_equal_and_small():
    inl, out = eliminate_outliers(from_local([1.3] * 7))
    assert len(inl) == 7 and not out
    inl, out = eliminate_outliers(from_local([1, 100, 1000]))
    assert len(inl) == 3 and not out


def test_single_pass_may_expose_new_outliers():
    scales = [1.0, 1.0, 1.0, 1.0, 1.01, 1.02, 1.5, 10.0]
    once, _ = eliminate_outliers(from_local(scales))
    twice, more = eliminate_outliers(once)
    assert more  # one pass is not a fixed point here
    fixed, _ = eliminate_outliers(from_local(scales), iterate=True)
    again, none = eliminate_outliers(fixed)
    assert not none and again == fixed


@given(st.lists(st.floats(0.1, 10), min_size=0, max_size=40))
def test_iterated_elimination_idempotent(scales):
    inl, _ = eliminate_outliers(from_local(scales), iterate=True)
    inl2, out2 = eliminate_outliers(inl, iterate=True)
    assert inl2 == inl and out2 == []


# -- closed-form scale --------------------------------------------------------------------------

def test_estimate_examples():
    sol = estimate_scale([sample(2, 1)])
    assert sol.scale == 2 and sol.weighted_residual == 0
    assert estimate_scale([sample(2, 1), sample(3, 1)]).scale == pytest.approx(2.5)
    assert estimate_scale([sample(2, 1, 1), sample(4, 1, 2)]).scale == pytest.approx(2.4)


def test_estimate_errors():
    with pytest.raises(NoSamples):
        estimate_scale([])
    with pytest.raises(DegenerateProblem):
        estimate_scale([sample(1, 1, c=0.0)])


def random_samples(rng, n):
    return [DimensionSample(i, rng.uniform(0.1, 2), DimensionPrior(rng.uniform(0.1, 3),
                                                                  rng.uniform(0.01, 0.5)),
                            rng.uniform(0.05, 1)) for i in range(n)]


def objective(samples, s):
    return sum((x.confidence * (x.prior.mean - s * x.dim) / x.prior.std) ** 2 for x in samples)


def test_estimate_grid_oracle(rng):
    for _ in range(20):
        samples = random_samples(rng, int(rng.integers(1, 30)))
        ls = local_scales(samples)
        grid = np.linspace(0.5 * ls.min(), 2 * ls.max(), 1_000_001)
        w = np.array([(x.confidence / x.prior.std) ** 2 for x in samples])
        mu = np.array([x.prior.mean for x in samples])
        d = np.array([x.dim for x in samples])
        # objective expanded as a quadratic in s, evaluated on the grid
        obj_grid = np.sum(w * mu * mu) - 2 * grid * np.sum(w * mu * d) + grid**2 * np.sum(w * d * d)
        best = grid[np.argmin(obj_grid)]
        sol = estimate_scale(samples)
        assert abs(sol.scale - best) <= grid[1] - grid[0]
        assert sol.weighted_residual == pytest.approx(objective(samples, sol.scale), rel=1e-9)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_estimate_equivariance_and_confidence_invariance(seed, k, c):
    rng = np.random.default_rng(seed)
    samples = random_samples(rng, int(rng.integers(1, 20)))
    base = estimate_scale(samples).scale
    scaled = [DimensionSample(x.object_id, k * x.dim, x.prior, x.confidence) for x in samples]
    assert estimate_scale(scaled).scale == pytest.approx(base / k, rel=1e-12)
    boosted = [DimensionSample(x.object_id, x.dim, x.prior, c * x.confidence) for x in samples]
    assert estimate_scale(boosted).scale == pytest.approx(base, rel=1e-12)


# -- full pipeline ---------------------------------------------------------------------------------

def test_pipeline_unknown_classes():
    with pytest.raises(NoUsableObjects):
        run_pipeline([obj((1, 1, 1), cls="unicorn")], builtin_sample_priors())


def test_pipeline_single_exact_object():
    repo = PriorRepository([PRIOR])
    s = 2.37
    sol = run_pipeline([obj(tuple(m / s for m in PRIOR.means))], repo)
    assert sol.scale == pytest.approx(s, rel=1e-12)
    assert sol.weighted_residual == pytest.approx(0, abs=1e-20)


def test_pipeline_bookkeeping():
    repo = PriorRepository([PRIOR])
    objs = [obj((1.5, 1, 0.5), 0), obj((1.5, 1, 0.5), 1, cls="unicorn"),
            ObjectEstimate(2, "thing", (1.5, 1, 0.5), (), 3, 0),
            obj((1.5, 1, 0.5), 3, probs=(0.1,), npts=1)]
    sol = run_pipeline(objs, repo, options=PipelineOptions(confidence_floor=0.5))
    assert sol.skipped_ids == [1]
    assert sol.rejected_ids == [2, 3]
    assert sol.inlier_ids == [0] and sol.scale == pytest.approx(2.0)


def test_pipeline_options_disable_stages():
    repo = PriorRepository([PRIOR])
    objs = [obj((3, 0.4, 0.2), 0, probs=(0.3,), npts=2), obj((1.4, 1, 0.5), 1)]
    full = run_pipeline(objs, repo, options=PipelineOptions(outlier_elimination=False))
    assert full.num_inliers == 4  # pole-like keeps one dimension
    plain = run_pipeline(objs, repo, options=PipelineOptions(False, False, False))
    assert plain.num_inliers == 6
    assert plain.scale != full.scale


def test_pipeline_rejects_mislabeled():
    rng = np.random.default_rng(3)
    repo = builtin_sample_priors()
    classes = sorted(repo)
    objs = []
    for i in range(20):
        p = repo[classes[i % len(classes)]]
        div = 2.0 * (3.0 if i in (4, 11) else 1.0)
        dims = sorted((m / div * math.exp(rng.normal(0, 0.02)) for m in p.means), reverse=True)
        objs.append(obj(dims, i, p.class_name, probs=(0.9,) * 10, npts=50))
    sol = run_pipeline(objs, repo)
    assert {4, 11} <= {s.object_id for s in sol.outliers}
    assert not {4, 11} & set(sol.inlier_ids)
    assert sol.scale == pytest.approx(2.0, rel=0.03)


# -- apply_scale ---------------------------------------------------------------------------------

def test_apply_scale_basic():
    e = Ellipsoid(RigidPose(Rotation.identity(), [1, 0, 0]), [1, 1, 1])
    assert apply_scale(e, 1.0).semi_axes == pytest.approx([1, 1, 1])
    e2 = apply_scale(e, 2.0)
    assert e2.semi_axes == pytest.approx([2, 2, 2]) and e2.center == pytest.approx([2, 0, 0])
    with pytest.raises(NonPositiveScale):
        apply_scale(e, 0.0)
    assert np.allclose(apply_scale(np.ones((2, 3)), 3.0), 3.0)
    with pytest.raises(TypeError):
        apply_scale("map", 2.0)


def test_apply_scale_rescales_estimate():
    repo = builtin_sample_priors()
    rng = np.random.default_rng(1)
    objs = [obj(sorted(rng.uniform(0.1, 1, 3), reverse=True), i, c)
            for i, c in enumerate(["cup", "book", "laptop", "chair", "tv"])]
    s0 = run_pipeline(objs, repo).scale
    s1 = run_pipeline(apply_scale(objs, 4.0), repo).scale
    assert s1 == pytest.approx(s0 / 4.0, rel=1e-12)
