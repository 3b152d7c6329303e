import dataclasses
import io
import math

import numpy as np
import pytest

from propval.design import ModelSpec
from propval.fit import FitError
from propval.model import (
    Prediction,
    PredictionError,
    extract_smooth,
    extract_spatial_surface,
    fit_model,
    format_scalings,
    load_model,
    monthly_inflation,
    predict,
    save_model,
    scaling_row,
    spatial_components,
    summarize_parametric,
    write_raster,
    z_value,
)
from propval.records import SUBMARKETS, records_to_arrays
from propval.synth import SynthConfig, simulate_dataset

import oracles


def test_z_value():
    assert z_value(0.95) == pytest.approx(1.959964, abs=1e-6)
    assert z_value(0.5) == pytest.approx(0.674490, abs=1e-6)


def test_hedonic_equals_ols(small_data, small_hedonic):
    from propval.design import build_design

    d = build_design(small_data.records, ModelSpec("hedonic"))
    y = records_to_arrays(small_data.records)["log_ppsm"]
    ref = oracles.ols(d.X, y)
    np.testing.assert_allclose(small_hedonic.coef, ref, rtol=1e-8, atol=1e-12)
    r = y - d.X @ ref
    assert small_hedonic.sigma2 == pytest.approx(r @ r / (len(y) - d.X.shape[1]), rel=1e-10)


def test_fit_is_deterministic(small_data, small_hedonic):
    again = fit_model(small_data.records, ModelSpec("hedonic"))
    np.testing.assert_array_equal(again.coef, small_hedonic.coef)


def test_prediction_intervals_nest(small_data, small_ngam):
    preds = predict(small_ngam, small_data.records[:200])
    assert all(isinstance(p, Prediction) for p in preds)
    for p in preds:
        assert p.lower(0.95) < p.lower(0.5) < p.price < p.upper(0.5) < p.upper(0.95)
        # symmetric on the log scale around the point prediction
        assert math.log(p.upper(0.5) / p.price) == pytest.approx(math.log(p.price / p.lower(0.5)))


def test_price_equivariance(small_data, small_hedonic):
    c = 1.37
    scaled = [r.with_price(r.price * c) for r in small_data.records]
    m = fit_model(scaled, ModelSpec("hedonic"))
    assert m.coef[0] - small_hedonic.coef[0] == pytest.approx(math.log(c), abs=1e-10)
    np.testing.assert_allclose(m.coef[1:], small_hedonic.coef[1:], atol=1e-10)


def test_price_equivariance_gam(small_data, small_ngam):
    c = 0.5
    scaled = [r.with_price(r.price * c) for r in small_data.records]
    m = fit_model(scaled, ModelSpec("ngam"), small_data.graph, lambdas=small_ngam.lambdas)
    assert m.coef[0] - small_ngam.coef[0] == pytest.approx(math.log(c), abs=1e-8)
    np.testing.assert_allclose(m.coef[1:], small_ngam.coef[1:], atol=1e-8)


def test_save_load_round_trip(tmp_path, small_data, small_ngam):
    path = tmp_path / "m.json"
    save_model(small_ngam, path, metadata={"seed": 3})
    back = load_model(path)
    np.testing.assert_array_equal(back.coef, small_ngam.coef)
    np.testing.assert_array_equal(back.cov_factor, small_ngam.cov_factor)
    a = predict(small_ngam, small_data.records[:50])
    b = predict(back, small_data.records[:50])
    assert a == b


def test_unseen_level_is_reported_not_raised(small_data):
    train = [r for r in small_data.records if r.property_type != "duplex"]
    test = [r for r in small_data.records if r.property_type == "duplex"][:3]
    assert test
    m = fit_model(train, ModelSpec("hedonic"))
    assert "duplex" in m.absent_levels["property_type"]
    out = predict(m, test + train[:2])
    assert all(isinstance(p, PredictionError) for p in out[:3])
    assert "duplex" in out[0].reason
    assert all(isinstance(p, Prediction) for p in out[3:])


def test_unknown_region_is_reported(small_data, small_ngam):
    r = dataclasses.replace(small_data.records[0], region_id=10_000)
    (p,) = predict(small_ngam, [r])
    assert isinstance(p, PredictionError) and "region" in p.reason


def test_scaling_row_hand_arithmetic():
    # exp(0.104) = 1.1096, exp(0.104 -/+ 1.96 * 0.007) = 1.0945, 1.1249
    row = scaling_row("features", "Period Property", 0.104, 0.007)
    assert row.formatted() == "1.11 [1.09, 1.12]"
    assert scaling_row("t", "l", 0.0, 0.01).formatted().startswith("1.00 ")


def test_decoded_factor_scalings_sum_to_zero(small_hedonic):
    rows = summarize_parametric(small_hedonic)
    ber = [r for r in rows if r.term == "ber"]
    assert len(ber) == 16
    assert abs(sum(r.log_effect for r in ber)) < 1e-10
    assert all(r.lower < r.estimate < r.upper for r in rows)
    text = format_scalings(rows)
    assert text.count("\n") == len(rows) + 1


def test_constant_response_smooth_is_flat(small_data):
    flat = [r.with_price(2000.0 * r.size) for r in small_data.records]
    m = fit_model(flat, ModelSpec("ngam"), small_data.graph)
    c = extract_smooth(m, "size")
    assert np.max(np.abs(c.fit)) < 1e-8


def test_extracted_smooths_cover_truth(default_data, default_ngam):
    a = records_to_arrays(default_data.records)
    w = {s: float(np.mean(a["submarket"] == s)) for s in SUBMARKETS}

    def truth(term, x):
        # a national smooth estimates the record-weighted mix of submarket curves
        return sum(w[s] * default_data.truth.smooth(term, s, x) for s in SUBMARKETS)

    inside = total = 0
    for term in ("beds", "baths", "size", "month"):
        c = extract_smooth(default_ngam, term)
        true = truth(term, c.x)
        # centered the way the fitted curve is
        true = true - true[0] if term == "month" else true - truth(term, a[term]).mean()
        inside += int(np.sum((c.lower <= true) & (true <= c.upper)))
        total += len(c.x)
    assert inside / total >= 0.9


def test_month_curve_starts_at_zero(small_ngam):
    c = extract_smooth(small_ngam, "month")
    np.testing.assert_array_equal(c.x, np.arange(1.0, 13.0))
    assert c.fit[0] == 0.0


def _with_month_coef(model, fn):
    t, sl = model.term("s(month)")
    rows = t.block.evaluate(np.arange(1.0, 13.0))
    A = np.column_stack([rows, np.ones(12)])
    sol, *_ = np.linalg.lstsq(A, fn(np.arange(1.0, 13.0)), rcond=None)
    assert np.allclose(A @ sol, fn(np.arange(1.0, 13.0)), atol=1e-10)
    coef = model.coef.copy()
    coef[sl] = sol[:-1]
    return dataclasses.replace(model, coef=coef)


def test_inflation_flat_and_linear(small_ngam):
    flat = _with_month_coef(small_ngam, lambda m: np.zeros_like(m))
    np.testing.assert_allclose(monthly_inflation(flat)["all"], np.ones(12), atol=1e-12)
    a = 0.01
    lin = _with_month_coef(small_ngam, lambda m: a * m)
    r = monthly_inflation(lin)["all"]
    assert r[0] == 1.0
    np.testing.assert_allclose(r[1:], math.exp(a), rtol=1e-10)


def test_planted_trend_recovered_globally(default_ngam):
    r = monthly_inflation(default_ngam)["all"][1:]
    assert np.all(np.abs(r - 1.003) <= 0.002)


def test_planted_trend_recovered_in_large_submarkets(default_data, default_sgam):
    infl = monthly_inflation(default_sgam)
    counts = dict(zip(*np.unique(records_to_arrays(default_data.records)["submarket"],
                                  return_counts=True)))
    big = [s for s, c in counts.items() if c >= 1000]
    assert big
    for s in big:
        assert np.all(np.abs(infl[s][1:] - 1.003) <= 0.002), s


def test_spatial_surface(default_data, default_sgam):
    a = records_to_arrays(default_data.records)
    xy = np.column_stack([a["x"], a["y"]])
    b0, gp, mrf = spatial_components(default_sgam, xy, a["region_id"])
    assert abs(gp.mean()) < 1e-8

    gx = np.linspace(a["x"].min(), a["x"].max(), 30)
    gy = np.linspace(a["y"].min(), a["y"].max(), 30)
    s = extract_spatial_surface(default_sgam, default_data.graph, gx, gy)
    assert s.fused.shape == (30, 30)
    outside = s.region < 0
    assert np.all(np.isnan(s.fused[outside])) and np.all(np.isfinite(s.fused[~outside]))
    for rid in np.unique(s.region[~outside]):
        vals = s.mrf[s.region == rid]
        assert np.ptp(vals) < 1e-15

    # a training record's own location
    i = 17
    one = extract_spatial_surface(default_sgam, default_data.graph, [a["x"][i]], [a["y"][i]])
    b0, g, m = spatial_components(default_sgam, xy[i:i + 1], one.region.ravel())
    assert one.fused[0, 0] == pytest.approx(math.exp(b0 + g[0] + m[0]), rel=1e-8)

    buf = io.StringIO()
    write_raster(s, "fused", buf)
    assert buf.getvalue().count("\n") == 1 + int((~outside).sum())


def test_hedonic_has_no_surface(small_data, small_hedonic):
    with pytest.raises(ValueError):
        extract_spatial_surface(small_hedonic, small_data.graph, [0.0], [0.0])


def test_thin_submarket_warns(small_data, caplog):
    galway = [r for r in small_data.records if r.submarket == "Galway"]
    keep = [r for r in small_data.records if r.submarket != "Galway"] + galway[:40]
    with caplog.at_level("WARNING"):
        fit_model(keep, ModelSpec("sgam", knots={"location": 50}), small_data.graph)
    assert "fewer than 50 records in Galway" in caplog.text


def test_unidentifiable_submarket_names_its_columns():
    # six Limerick records cannot carry Limerick's unpenalized columns
    d = simulate_dataset(SynthConfig(n=600, seed=5))
    with pytest.raises(FitError, match=r"\[Limerick\]"):
        fit_model(d.records, ModelSpec("sgam", knots={"size": 10, "location": 50}), d.graph)
