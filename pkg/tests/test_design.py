import numpy as np
import pandas as pd
import pytest

from agrilend.errors import UserError
from agrilend.panel import PanelDataset, build_design, parse_spec


def frame():
    rows = []
    for c in (2, 1):
        for t in (2003, 2001, 2002, 2000):
            rows.append((c, t, float(10 * c + t - 2000), "small" if c == 1 else "large", c % 2))
    return pd.DataFrame(rows, columns=["county", "year", "tmax", "size", "region"]).assign(y=lambda d: d.tmax * 2)


def test_sorted_and_not_mutated():
    df = frame()
    before = df.copy()
    ds = PanelDataset(df)
    assert ds.frame[["county", "year"]].values.tolist()[:2] == [[1, 2000], [1, 2001]]
    pd.testing.assert_frame_equal(df, before)
    copy = ds.frame
    copy.loc[0, "tmax"] = -99
    assert ds.frame.loc[0, "tmax"] != -99


def test_duplicate_keys_rejected():
    df = pd.concat([frame(), frame().iloc[:1]])
    with pytest.raises(UserError, match="duplicate"):
        PanelDataset(df)


def test_missing_key_column():
    with pytest.raises(UserError):
        PanelDataset(frame().drop(columns="year"))


def test_lags_within_unit_and_listwise_drop():
    d = build_design(PanelDataset(frame()), parse_spec("outcome=y\nregressors=tmax, lag(tmax,1), lag(tmax^2,2)\n"))
    # the first two years of each county lack the deepest lag
    assert d.n == 4 and d.n_dropped == 4
    assert d.rows["year"].tolist() == [2002, 2003, 2002, 2003]
    np.testing.assert_allclose(d.X[0], [12.0, 11.0, 100.0])
    np.testing.assert_allclose(d.X[2], [22.0, 21.0, 400.0])


def test_gap_makes_lag_missing():
    df = frame()
    df = df[~((df.county == 1) & (df.year == 2001))]
    d = build_design(PanelDataset(df), parse_spec("outcome=y\nregressors=lag(tmax,1)\n"))
    assert 2002 not in d.rows[d.rows.county == 1]["year"].tolist()


def test_indicator_interaction():
    d = build_design(PanelDataset(frame()), parse_spec("outcome=y\nregressors=size[small]*tmax, size[large]\n"))
    small = (d.rows["county"] == 1).to_numpy()
    np.testing.assert_allclose(d.X[small, 0], d.y[small] / 2)
    np.testing.assert_allclose(d.X[~small, 0], 0.0)
    np.testing.assert_allclose(d.X[:, 1], (~small).astype(float))


def test_missing_outcome_drops_row():
    df = frame()
    df.loc[0, "y"] = np.nan
    d = build_design(PanelDataset(df), parse_spec("outcome=y\nregressors=tmax\n"))
    assert d.n == 7 and d.n_dropped == 1


def test_effect_codes():
    d = build_design(PanelDataset(frame()), parse_spec("outcome=y\nregressors=tmax\nabsorb=county, region*year\n"))
    names = [n for n, _ in d.effects]
    assert names == ["county", "region*year"]
    assert d.effects[0][1].max() == 1 and d.effects[1][1].max() == 7


@pytest.mark.parametrize(
    "spec, match",
    [
        ("outcome=y\nregressors=nope\n", "unknown column"),
        ("outcome=y\nregressors=size\n", "not numeric"),
        ("outcome=y\nregressors=lag(tmax,9)\n", "exceeds the panel span"),
        ("outcome=size\nregressors=tmax\n", "not numeric"),
    ],
)
def test_user_errors(spec, match):
    with pytest.raises(UserError, match=match):
        build_design(PanelDataset(frame()), parse_spec(spec))
