import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from mislink.core import Dataset, GroupSample
from mislink.errors import (
    InvalidRates,
    MissingRates,
    MissingTruth,
    RankDeficient,
    ShapeMismatch,
    ValidationError,
)
from mislink.estimators import (
    EstimatorSpec,
    PeerEffectsFit,
    build_design,
    clustered_vcov,
    fit,
    s2sls,
    tsls,
)
from mislink.rates import RatesEstimate, estimate_rates
from mislink.simulate import SimConfig, simulate_dataset


def explicit_tsls(Y, R, Z):
    inv = np.linalg.inv
    A, B = Z.T @ R, Z.T @ Z
    return inv(A.T @ inv(B) @ A) @ A.T @ inv(B) @ Z.T @ Y


class TestTsls:
    def test_collapses_to_ols(self):
        rng = np.random.default_rng(0)
        R = rng.standard_normal((50, 3))
        Y = R @ [1.0, -2.0, 0.5] + rng.standard_normal(50)
        theta, _, _ = tsls(Y, R, R)
        ols, *_ = np.linalg.lstsq(R, Y, rcond=None)
        assert_allclose(theta, ols, atol=1e-10)

    def test_toy_system(self):
        Y = np.array([1.0, 2.0, 0.5, -1.0, 3.0, 2.5])
        R = np.array([[1, 0.2], [2, 0.1], [0.5, 0.3], [-1, 0.9], [3, 0.4], [2, 0.7]])
        Z = np.array([[1, 0, 1], [1, 1, 0], [0, 1, 1], [1, 1, 1], [2, 0, 1], [0, 2, 1.0]])
        theta, A, B = tsls(Y, R, Z)
        assert_allclose(theta, explicit_tsls(Y, R, Z), rtol=1e-12)
        assert_allclose(A, Z.T @ R)
        assert_allclose(B, Z.T @ Z)

    def test_collinear_instruments(self):
        rng = np.random.default_rng(1)
        R = rng.standard_normal((20, 2))
        z = rng.standard_normal(20)
        Z = np.column_stack([z, 2 * z, R[:, 1]])
        with pytest.raises(RankDeficient) as info:
            tsls(rng.standard_normal(20), R, Z)
        assert info.value.matrix == "B"

    def test_irrelevant_instruments(self):
        rng = np.random.default_rng(2)
        R = np.column_stack([rng.standard_normal(20), np.zeros(20)])
        with pytest.raises(RankDeficient) as info:
            tsls(rng.standard_normal(20), R, rng.standard_normal((20, 3)))
        assert info.value.matrix == "A"

    def test_underidentified(self):
        with pytest.raises(RankDeficient):
            tsls(np.zeros(5), np.ones((5, 2)), np.ones((5, 1)))


def two_tiny_groups():
    G1 = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    G2 = np.array([[0, 1, 1], [1, 0, 0], [0, 1, 0]])
    g1 = GroupSample("a", [1.0, 2.0, 3.0], [[1, 0.5], [0, -1.0], [1, 2.0]], (G1, G2), G1)
    g2 = GroupSample("b", [0.5, -1.0, 2.0], [[0, 0.1], [1, 0.3], [0, -0.7]], (G2, G1), G2)
    return Dataset((g1, g2), ("x1", "x2"))


class TestDesign:
    def test_shapes(self):
        ds = two_tiny_groups()
        d = build_design(ds, EstimatorSpec("naive"))
        assert d.Y.shape == (6,) and d.R.shape == (6, 3) and d.Z.shape == (6, 4)
        assert d.names == ("lambda", "x1", "x2")
        d = build_design(ds, EstimatorSpec("ols"))
        assert d.R.shape == (6, 2) and d.names == ("x1", "x2")

    def test_blocks_by_variant(self):
        ds = two_tiny_groups()
        g = ds.groups[0]
        H1, H2, X, y = (np.asarray(a, float) for a in (*g.measures, g.X, g.y))
        d = build_design(ds, EstimatorSpec("naive", measure=2))
        assert_allclose(d.blocks[0].R[:, 0], H2 @ y)
        assert_allclose(d.blocks[0].Z[:, :2], H2 @ X)
        rates = RatesEstimate.known((0.1, 0.05), (0.2, 0.15), measures=2)
        d = build_design(ds, EstimatorSpec("adjusted", measure=1, rates=rates))
        W1 = (H1 - 0.1 * (1 - np.eye(3))) / 0.7
        assert_allclose(d.blocks[0].R[:, 0], W1 @ y)
        assert_allclose(d.blocks[0].Z[:, :2], H2 @ X)  # cross-measure
        d = build_design(ds, EstimatorSpec("adjusted", rates=rates, instruments="transpose"))
        assert_allclose(d.blocks[0].Z[:, :2], H1.T @ X)
        d = build_design(ds, EstimatorSpec("oracle"))
        assert_allclose(d.blocks[0].R[:, 0], np.asarray(g.truth, float) @ y)

    def test_within_sums_to_zero(self, small_ds):
        rates = estimate_rates(small_ds)
        for spec in (EstimatorSpec("naive", fixed_effects="within"),
                     EstimatorSpec("adjusted", fixed_effects="within", rates=rates),
                     EstimatorSpec("s2sls", fixed_effects="within", rates=rates)):
            for b in build_design(small_ds, spec).blocks:
                n = b.y.shape[0]
                parts = [slice(0, n)] if spec.variant != "s2sls" else [
                    slice(0, n // 2), slice(n // 2, n)]
                for sl in parts:
                    assert_allclose(b.y[sl].sum(), 0, atol=1e-10)
                    assert_allclose(b.R[sl].sum(axis=0), 0, atol=1e-10)
                    assert_allclose(b.Z[sl].sum(axis=0), 0, atol=1e-10)

    def test_errors(self, small_ds):
        with pytest.raises(MissingRates):
            build_design(small_ds, EstimatorSpec("adjusted"))
        no_truth = Dataset([GroupSample(g.group_id, g.y, g.X, g.measures)
                            for g in small_ds.groups])
        with pytest.raises(MissingTruth):
            build_design(no_truth, EstimatorSpec("oracle"))
        flagged = RatesEstimate("two", (0.1, 0.1), (0.2, 0.2), 0.2, 0.1, 1, 0, 0, 0,
                                flags=("p0_1_out_of_range",))
        with pytest.raises(InvalidRates):
            build_design(small_ds, EstimatorSpec("adjusted", rates=flagged))
        one = Dataset([GroupSample(g.group_id, g.y, g.X, g.measures[:1]) for g in small_ds.groups])
        with pytest.raises(ShapeMismatch):
            build_design(one, EstimatorSpec("naive", measure=2))
        with pytest.raises(ValidationError):
            build_design(one, EstimatorSpec("naive", instruments="cross"))
        sym = one.map_measures(lambda H: np.maximum(H, H.T))
        with pytest.raises(ValidationError):
            build_design(sym, EstimatorSpec("naive", instruments="transpose"))
        with pytest.raises(ValidationError):
            EstimatorSpec("bogus")


class TestFit:
    def test_adjusted_zero_rates_equals_oracle(self, noiseless_ds):
        known = RatesEstimate.known(0.0, 0.0, measures=2)
        for fe in ("none", "within"):
            a = fit(noiseless_ds, EstimatorSpec("adjusted", fixed_effects=fe, rates=known))
            o = fit(noiseless_ds, EstimatorSpec("oracle", fixed_effects=fe))
            assert_array_equal(a.params, o.params)
            assert_array_equal(a.vcov, o.vcov)

    def test_s2sls_noiseless_equals_oracle(self, noiseless_ds):
        known = RatesEstimate.known(0.0, 0.0, measures=2)
        s = s2sls(noiseless_ds, known, "within")
        o = fit(noiseless_ds, EstimatorSpec("oracle", fixed_effects="within"))
        assert_allclose(s.params, o.params, atol=1e-8)

    def test_ols_variant(self, small_ds):
        f = fit(small_ds, EstimatorSpec("ols"))
        Y = np.concatenate([g.y for g in small_ds.groups])
        X = np.vstack([g.X for g in small_ds.groups])
        ols, *_ = np.linalg.lstsq(X, Y, rcond=None)
        assert_allclose(f.params, ols, atol=1e-10)
        assert f.theta is None and np.isnan(f.lam)

    def test_vcov_properties(self, table_ds):
        rates = estimate_rates(table_ds)
        f = fit(table_ds, EstimatorSpec("adjusted", fixed_effects="within", rates=rates))
        assert f.first_stage_corrected
        assert np.max(np.abs(f.vcov - f.vcov.T)) < 1e-10
        assert np.min(np.linalg.eigvalsh(f.vcov)) > -1e-10
        assert np.all(f.se > 0)
        assert f.diagnostics["min_singular_value_A"] > 0
        assert len(f.diagnostics["residual_norms"]) == table_ds.S
        assert not f.diagnostics["clusters_too_few"]

    def test_clustered_vcov_by_hand(self, small_ds):
        spec = EstimatorSpec("naive")
        d = build_design(small_ds, spec)
        f = fit(small_ds, spec)
        inv = np.linalg.inv
        A = sum(b.Z.T @ b.R for b in d.blocks) / d.S
        B = sum(b.Z.T @ b.Z for b in d.blocks) / d.S
        k = np.array([b.Z.T @ (b.y - b.R @ f.params) for b in d.blocks])
        Sig = inv(A.T @ inv(B) @ A) @ A.T @ inv(B)
        V = Sig @ (k.T @ k / d.S) @ Sig.T / d.S
        assert_allclose(f.vcov, V, rtol=1e-9)

    @pytest.mark.parametrize("fe", ["none", "within"])
    def test_first_stage_correction_by_finite_difference(self, table_ds, fe):
        rates = estimate_rates(table_ds)
        spec = EstimatorSpec("adjusted", measure=2, fixed_effects=fe, rates=rates)
        f = fit(table_ds, spec)
        S = table_ds.S
        p0, p1 = rates.rates(2)
        h = 1e-6

        def moment(q0, q1):
            r = RatesEstimate.known((p0, q0), (p1, q1), measures=2)
            d = build_design(table_ds, EstimatorSpec("adjusted", 2, None, fe, r))
            return sum(b.Z.T @ (b.y - b.R @ f.params) for b in d.blocks) / S

        # d(mean moment)/dp = -F
        F = -np.column_stack([
            (moment(p0 + h, p1) - moment(p0 - h, p1)) / (2 * h),
            (moment(p0, p1 + h) - moment(p0, p1 - h)) / (2 * h),
        ])
        d = build_design(table_ds, spec)
        inv = np.linalg.inv
        A = sum(b.Z.T @ b.R for b in d.blocks) / S
        B = sum(b.Z.T @ b.Z for b in d.blocks) / S
        scores = np.array([b.Z.T @ (b.y - b.R @ f.params) for b in d.blocks])
        kappa = scores - rates.tau[:, [2, 3]] @ F.T
        Sig = inv(A.T @ inv(B) @ A) @ A.T @ inv(B)
        V = Sig @ (kappa.T @ kappa / S) @ Sig.T / S
        assert_allclose(f.vcov, V, rtol=1e-5)

    def test_zero_tau_correction_is_noop(self):
        rng = np.random.default_rng(3)
        A, B = rng.standard_normal((4, 3)), np.eye(4) * 2
        scores = rng.standard_normal((10, 4))
        F = rng.standard_normal((4, 2))
        assert_array_equal(clustered_vcov(A, B, scores),
                           clustered_vcov(A, B, scores, (F, np.zeros((10, 2)))))

    def test_known_rates_uncorrected(self, table_ds):
        known = RatesEstimate.known((0.1, 0.08), (0.2, 0.16), measures=2)
        a = fit(table_ds, EstimatorSpec("adjusted", rates=known, correct_first_stage=True))
        b = fit(table_ds, EstimatorSpec("adjusted", rates=known, correct_first_stage=False))
        assert not a.first_stage_corrected
        assert_array_equal(a.vcov, b.vcov)

    def test_single_group_flags_clusters(self, small_ds):
        one = Dataset(small_ds.groups[:1], small_ds.covariate_names)
        f = fit(one, EstimatorSpec("naive"))
        assert f.diagnostics["clusters_too_few"]
        # with one cluster the 2SLS first-order condition kills the only score
        assert_allclose(f.vcov, 0.0, atol=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.01, 100.0))
    def test_scale_equivariance(self, c):
        ds = _scale_ds()
        base = fit(ds, EstimatorSpec("naive", fixed_effects="within"))
        scaled = Dataset(
            [GroupSample(g.group_id, g.y, g.X * [1.0, c], g.measures, g.truth) for g in ds.groups],
            ds.covariate_names,
        )
        f = fit(scaled, EstimatorSpec("naive", fixed_effects="within"))
        assert_allclose(f.params[0], base.params[0], atol=1e-10)
        assert_allclose(f.params[2] * c, base.params[2], rtol=1e-8)

    def test_serialisation(self, small_ds):
        f = fit(small_ds, EstimatorSpec("naive"))
        g = PeerEffectsFit.from_dict(f.to_dict())
        assert_array_equal(g.params, f.params)
        assert_array_equal(g.vcov, f.vcov)
        assert g.spec["instruments"] == "same"


_SCALE_DS = []


def _scale_ds():
    if not _SCALE_DS:
        _SCALE_DS.append(simulate_dataset(SimConfig(S=20, n=15, seed=8)))
    return _SCALE_DS[0]


@pytest.mark.slow
def test_instrument_exogeneity():
    # moment E[Z'v] at the true parameter: zero for the adjusted form with
    # cross-measure instruments, nonzero for the naive form
    ds = simulate_dataset(SimConfig(S=400, n=30, seed=31))
    theta = np.array([0.05, 1.0, 2.0])
    rates = RatesEstimate.known((0.1, 0.08), (0.2, 0.16), measures=2)
    out = {}
    for name, spec in (("naive", EstimatorSpec("naive", fixed_effects="within")),
                       ("adjusted", EstimatorSpec("adjusted", fixed_effects="within",
                                                  rates=rates))):
        d = build_design(ds, spec)
        m = np.array([b.Z[:, 0] @ (b.y - b.R @ theta) for b in d.blocks])
        out[name] = abs(m.mean()) / (m.std(ddof=1) / np.sqrt(d.S))
    assert out["adjusted"] < 3
    assert out["naive"] > 5
