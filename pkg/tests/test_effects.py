import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agrilend.effects import (
    C_TO_F,
    REFERENCE_GROUP,
    REPORT_COLUMNS,
    Horizon,
    Mode,
    Scenario,
    ScenarioTable,
    cumulative_lag_effect,
    effects_at,
    find_groups,
    find_quadratic,
    group_margins,
    lag_terms,
    marginal_effect,
    report_frame,
    scenario_report,
)
from agrilend.errors import NumericError, UserError
from agrilend.panel import FitResult, PanelDataset, fit, parse_spec
from agrilend.synth import OutcomeSpec, SynthConfig, generate


def hand_fit(names, beta, vcov, dropped=()):
    return FitResult(
        names=list(names),
        coefficients=np.asarray(beta, float),
        vcov=np.asarray(vcov, float),
        n_obs=100,
        n_clusters=10,
        dof_absorbed=0,
        dof_exact=True,
        within_r2=0.0,
        convergence=(1, 0.0),
        dropped=list(dropped),
    )


def random_psd(rng, k):
    A = rng.normal(size=(k, k))
    return A @ A.T / k


QUAD = ["tmax", "tmax^2"]


class TestMarginalEffect:
    def test_no_quadratic(self):
        f = hand_fit(QUAD, [0.7, 0.0], [[0.04, 0.01], [0.01, 0.02]])
        for t in (-3.0, 0.0, 2.7, 5.04):
            assert marginal_effect(f, *QUAD, t).point == 0.7

    def test_at_center(self):
        f = hand_fit(QUAD, [0.7, -0.2], [[0.04, 0.01], [0.01, 0.02]])
        m = marginal_effect(f, *QUAD, 0.0)
        assert m.point == 0.7 and m.se == 0.2

    @given(st.integers(0, 10_000), st.floats(-10, 10))
    def test_formula_and_quadratic_form(self, seed, t):
        rng = np.random.default_rng(seed)
        b = rng.normal(size=3)
        V = random_psd(rng, 3)
        f = hand_fit(["x", "tmax", "tmax^2"], b, V)
        m = marginal_effect(f, *QUAD, t)
        assert m.point == b[1] + 2 * b[2] * t
        a = np.array([0.0, 1.0, 2 * t])
        assert m.se == pytest.approx(np.sqrt(a @ V @ a), rel=1e-12, abs=1e-15)
        expanded = V[1, 1] + 4 * t * t * V[2, 2] + 4 * t * V[1, 2]
        assert m.se**2 == pytest.approx(expanded, rel=1e-9, abs=1e-12)
        # ci midpoint and width
        assert (m.ci95[0] + m.ci95[1]) / 2 == pytest.approx(m.point, abs=1e-12)
        assert m.ci95[1] - m.ci95[0] == pytest.approx(2 * 1.96 * m.se)
        assert m.evaluated_at == t and m.se >= 0

    def test_finite_difference_of_fitted_quadratic(self):
        res, _ = synth_fit(seed=3)
        b1, b2 = res.coef("tmax"), res.coef("tmax^2")
        f = lambda T: b1 * T + b2 * T * T
        h = 1e-3
        for t in (0.0, 1.5, 2.7, 5.04):
            fd = (f(t + h) - f(t - h)) / (2 * h)
            assert abs(marginal_effect(res, *QUAD, t).point - fd) < 1e-8

    def test_missing_term(self):
        f = hand_fit(QUAD, [1, 2], np.eye(2))
        with pytest.raises(UserError):
            marginal_effect(f, "tmax", "precip^2", 1.0)

    def test_dropped_term_counts_as_zero(self):
        f = hand_fit(["tmax"], [0.5], [[0.01]], dropped=[("tmax^2", "collinear")])
        m = marginal_effect(f, *QUAD, 3.0)
        assert m.point == 0.5 and m.se == pytest.approx(0.1)

    def test_negative_variance_raises(self):
        f = hand_fit(QUAD, [1.0, 0.1], [[-0.5, 0.0], [0.0, 0.1]])
        with pytest.raises(NumericError):
            marginal_effect(f, *QUAD, 0.0)

    def test_rounding_zero_variance(self):
        # a singular covariance whose exact variance along a is zero
        v = np.array([1.0, -0.5])
        f = hand_fit(QUAD, [1.0, 0.1], np.outer(v, v) * (1 + 1e-16))
        m = marginal_effect(f, *QUAD, 1.0)
        assert m.se < 1e-7


def synth_fit(seed=0, n_counties=150, n_years=10, **outcome):
    spec = OutcomeSpec(beta=outcome.pop("beta", (0.8, -0.15)), noise_sd=outcome.pop("noise_sd", 2.0), **outcome)
    cfg = SynthConfig(
        n_counties=n_counties, n_years=n_years, n_regions=1, outcomes={"y": spec}, seed=seed,
        fe_sd={"county": 1.0, "year": 0.5, "region_year": 0.0, "trend": 0.0},
    )
    data = generate(cfg)
    text = "outcome=y\nregressors=tmax, tmax^2\nabsorb=county, year\n"
    return fit(PanelDataset(data.frame), parse_spec(text), tol=1e-12), data


def two_way_demean(M, C, Y):
    M = M.reshape(C, Y, -1)
    return (M - M.mean(1, keepdims=True) - M.mean(0, keepdims=True) + M.mean((0, 1), keepdims=True)).reshape(C * Y, -1)


def test_bootstrap_standard_error():
    res, data = synth_fit(seed=11)
    C, Y = 150, 10
    df = data.frame
    y = df.y.to_numpy()
    X = np.column_stack([df.tmax, df.tmax**2])
    rng = np.random.default_rng(2024)
    t_star = 2.7
    a = np.array([1.0, 2 * t_star])
    draws = []
    yc, Xc = y.reshape(C, Y), X.reshape(C, Y, 2)
    for _ in range(500):
        pick = rng.integers(0, C, C)
        Xb = two_way_demean(Xc[pick].reshape(-1, 2), C, Y)
        yb = two_way_demean(yc[pick].reshape(-1, 1), C, Y)[:, 0]
        b = np.linalg.lstsq(Xb, yb, rcond=None)[0]
        draws.append(a @ b)
    boot_se = np.std(draws, ddof=1)
    m = marginal_effect(res, *QUAD, t_star)
    assert abs(m.se / boot_se - 1) < 0.15


class TestCumulative:
    def test_zero_quadratic_lags(self):
        names = ["tmax", "tmax^2", "lag(tmax,1)", "lag(tmax^2,1)"]
        f = hand_fit(names, [0.3, 0.0, 0.2, 0.0], np.eye(4) * 0.01)
        m = cumulative_lag_effect(f, names[0::2], names[1::2], 4.0)
        assert m.point == pytest.approx(0.5, abs=1e-15)

    @given(st.integers(0, 10_000), st.floats(-6, 6))
    def test_single_lag_reduces_to_marginal(self, seed, t):
        rng = np.random.default_rng(seed)
        f = hand_fit(QUAD, rng.normal(size=2), random_psd(rng, 2))
        a = cumulative_lag_effect(f, ["tmax"], ["tmax^2"], t)
        b = marginal_effect(f, *QUAD, t)
        assert a == b

    def test_planted_lag_model(self):
        rng_outcome = dict(beta=(0.5, -0.1), lags_linear=(0.3, 0.2), lags_quad=(-0.05, 0.02), noise_sd=1.0)
        spec = OutcomeSpec(**rng_outcome)
        cfg = SynthConfig(n_counties=200, n_years=12, outcomes={"y": spec}, seed=5)
        df = generate(cfg).frame
        text = "outcome=y\nregressors=tmax, tmax^2, lag(tmax,1), lag(tmax^2,1), lag(tmax,2), lag(tmax^2,2)\nabsorb=county, year\n"
        res = fit(PanelDataset(df), parse_spec(text), tol=1e-12)
        lins, quads = lag_terms(res, *QUAD)
        assert lins == ["tmax", "lag(tmax,1)", "lag(tmax,2)"]
        for t in (0.0, 2.7, 5.04):
            cum = cumulative_lag_effect(res, lins, quads, t)
            per_lag = sum(marginal_effect(res, l, q, t).point for l, q in zip(lins, quads))
            assert cum.point == pytest.approx(per_lag, abs=1e-12)
            truth = (0.5 + 0.3 + 0.2) + 2 * t * (-0.1 - 0.05 + 0.02)
            assert abs(cum.point - truth) < 4 * cum.se
            # the se uses the covariances, so it is not the sum of per-lag ses
            names = lins + quads
            idx = [res.index(n) for n in names]
            a = np.array([1.0] * 3 + [2 * t] * 3)
            assert cum.se == pytest.approx(np.sqrt(a @ res.vcov[np.ix_(idx, idx)] @ a), rel=1e-12)

    def test_missing_lag(self):
        f = hand_fit(QUAD, [1, 2], np.eye(2))
        with pytest.raises(UserError):
            cumulative_lag_effect(f, ["tmax", "lag(tmax,1)"], ["tmax^2", "lag(tmax^2,1)"], 1.0)
        with pytest.raises(UserError):
            cumulative_lag_effect(f, ["tmax"], [], 1.0)


class TestGroups:
    def planted(self, gl, gq, seed=9):
        spec = OutcomeSpec(beta=(0.6, -0.1), noise_sd=1.0, group_linear=gl, group_quad=gq)
        cfg = SynthConfig(n_counties=300, n_years=10, n_banks=3, outcomes={"y": spec}, seed=seed)
        df = generate(cfg).frame
        text = (
            "outcome=y\nregressors=tmax, tmax^2, bank_size[medium]*tmax, bank_size[medium]*tmax^2, "
            "bank_size[large]*tmax, bank_size[large]*tmax^2\nabsorb=county, year\n"
        )
        return fit(PanelDataset(df), parse_spec(text), tol=1e-12)

    def test_three_group_planted(self):
        gl, gq = {"medium": -0.4, "large": 0.5}, {"medium": 0.05, "large": -0.08}
        res = self.planted(gl, gq)
        groups = find_groups(res, "bank_size", *QUAD)
        assert list(groups) == [REFERENCE_GROUP, "medium", "large"]
        for t in (1.0, 2.7):
            out = group_margins(res, *QUAD, groups, t)
            for g, m in out.items():
                truth = 0.6 + 2 * -0.1 * t
                if g != REFERENCE_GROUP:
                    truth += gl[g] + 2 * gq[g] * t
                assert abs(m.point - truth) < 4 * m.se

    def test_group_formula_uses_four_term_block(self):
        names = ["tmax", "tmax^2", "g[b]*tmax", "g[b]*tmax^2"]
        rng = np.random.default_rng(0)
        b, V = rng.normal(size=4), random_psd(rng, 4)
        f = hand_fit(names, b, V)
        m = group_margins(f, *QUAD, {"b": (names[2], names[3])}, 1.7)["b"]
        a = np.array([1, 2 * 1.7, 1, 2 * 1.7])
        assert m.point == pytest.approx((b[0] + b[2]) + 2 * (b[1] + b[3]) * 1.7, abs=1e-14)
        assert m.se == pytest.approx(np.sqrt(a @ V @ a), rel=1e-12)

    def test_zero_interactions_equal_reference(self):
        names = ["tmax", "tmax^2", "g[b]*tmax", "g[b]*tmax^2"]
        f = hand_fit(names, [0.4, -0.1, 0.0, 0.0], np.diag([0.01, 0.01, 0.0, 0.0]))
        out = group_margins(f, *QUAD, find_groups(f, "g", *QUAD), 2.0)
        assert out[REFERENCE_GROUP] == out["b"]

    def test_absent_group(self):
        f = hand_fit(QUAD, [1, 2], np.eye(2))
        with pytest.raises(UserError):
            find_groups(f, "bank_size", *QUAD)
        with pytest.raises(UserError):
            group_margins(f, *QUAD, {"x": ("g[x]*tmax", "g[x]*tmax^2")}, 1.0)


class TestScenarios:
    def test_defaults_verbatim(self):
        t = ScenarioTable.default()
        assert len(t) == 8
        s = t.get("SSP5-8.5", Horizon.MediumTerm)
        assert (s.anomaly_c, s.anomaly_f) == (2.8, 5.04)
        s = t.get("SSP1-2.6", "near")
        assert (s.anomaly_c, s.anomaly_f) == (1.5, 2.7)
        for s in t:
            assert s.anomaly_f > 0 and abs(s.anomaly_f - C_TO_F * s.anomaly_c) <= 0.025

    def test_invalid_scenarios(self):
        with pytest.raises(UserError):
            Scenario("x", Horizon.NearTerm, 1.0, 33.8)  # +32 offset is wrong for anomalies
        with pytest.raises(UserError):
            Scenario("x", Horizon.NearTerm, -1.0, -1.8)
        with pytest.raises(UserError):
            Horizon.parse("far")

    @given(st.floats(0.1, 5.0))
    def test_unit_coherence(self, c):
        f = hand_fit(QUAD, [0.9, -0.2], [[0.04, -0.01], [-0.01, 0.02]])
        from_c = ScenarioTable([Scenario.from_celsius("a", Horizon.NearTerm, c)])
        native = ScenarioTable([Scenario("a", Horizon.NearTerm, c, c * 9 / 5)])
        ra, rb = scenario_report(f, from_c)[0].effect, scenario_report(f, native)[0].effect
        assert ra.point == pytest.approx(rb.point, rel=1e-12, abs=1e-14)
        assert ra.se == pytest.approx(rb.se, rel=1e-12)

    def test_equal_anomalies_equal_effects(self):
        f = hand_fit(QUAD, [0.9, -0.2], [[0.04, -0.01], [-0.01, 0.02]])
        rows = scenario_report(f, ScenarioTable.default())
        near = {r.scenario.label: r.effect for r in rows if r.scenario.horizon is Horizon.NearTerm}
        assert near["SSP1-2.6"] == near["SSP2-4.5"]

    def test_monotone_for_concave_response(self):
        f = hand_fit(QUAD, [0.9, -0.2], [[0.04, -0.01], [-0.01, 0.02]])
        rows = sorted(scenario_report(f, ScenarioTable.default()), key=lambda r: r.scenario.anomaly_f)
        pts = [r.effect.point for r in rows]
        assert all(b <= a for a, b in zip(pts, pts[1:]))

    def test_csv_roundtrip_and_conversion(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(ScenarioTable.default().to_csv())
        back = ScenarioTable.from_csv(p)
        assert back.entries == ScenarioTable.default().entries
        p.write_text("label,horizon,anomaly_c\nhot,medium,3.0\n")
        (s,) = ScenarioTable.from_csv(p)
        assert s.horizon is Horizon.MediumTerm and s.anomaly_f == pytest.approx(5.4)
        p.write_text("label,horizon,anomaly_f\nhot,near-term,3.6\n")
        (s,) = ScenarioTable.from_csv(p)
        assert s.anomaly_c == pytest.approx(2.0)

    @pytest.mark.parametrize(
        "text",
        ["label,anomaly_c\na,1\n", "label,horizon\na,near\n", "label,horizon,anomaly_c\na,near,warm\n", "label,horizon,anomaly_c\na,near,\n"],
    )
    def test_bad_csv(self, tmp_path, text):
        p = tmp_path / "s.csv"
        p.write_text(text)
        with pytest.raises(UserError):
            ScenarioTable.from_csv(p)

    def test_report_frame_schema(self):
        f = hand_fit(QUAD, [0.9, -0.2], [[0.04, -0.01], [-0.01, 0.02]])
        df = report_frame(scenario_report(f, ScenarioTable.default()))
        assert list(df.columns) == REPORT_COLUMNS and len(df) == 8
        np.testing.assert_allclose(df.ci_hi - df.effect, 1.96 * df.se)


class TestDiscovery:
    def test_find_quadratic_skips_lags(self):
        f = hand_fit(["lag(tmax,1)", "lag(tmax^2,1)", "tmax", "tmax^2"], [1, 2, 3, 4], np.eye(4))
        assert find_quadratic(f) == ("tmax", "tmax^2")
        with pytest.raises(UserError):
            find_quadratic(hand_fit(["tmax"], [1], [[1]]))

    def test_effects_at_modes(self):
        names = ["tmax", "tmax^2", "lag(tmax,1)", "lag(tmax^2,1)"]
        f = hand_fit(names, [0.3, -0.1, 0.2, 0.05], np.eye(4) * 0.01)
        ((g, now),) = effects_at(f, 2.0)
        ((_, cum),) = effects_at(f, 2.0, Mode.CumulativeLag)
        assert g == "" and now.point == pytest.approx(0.3 - 0.4)
        assert cum.point == pytest.approx(0.5 + 2 * 2.0 * -0.05)
        with pytest.raises(UserError):
            effects_at(hand_fit(QUAD, [1, 2], np.eye(2)), 1.0, "cumlag")
        with pytest.raises(UserError):
            effects_at(f, 1.0, "cumlag", group_column="bank_size")
