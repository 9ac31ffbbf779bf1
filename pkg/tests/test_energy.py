import json

import pytest
from hypothesis import given, settings, strategies as st

from ilash.energy import (BUILTIN_PROFILES, CO2_LBS_PER_KWH, PUE, Meter, PowerProfile, co2_lbs,
                          kwh_pue, load_profiles, meter, resolve_profile, save_profiles)


def _oracle_kwh(t, p_c, p_r, p_g, g, pue=1.58):
    return pue * t * (p_c + p_r + g * p_g) / 1000.0


def test_reference_values():
    p = PowerProfile("ref", 100, 50, 270, 1)
    kwh = kwh_pue(1, p)
    assert abs(kwh - 0.6636) <= 1e-9 * 0.6636
    assert abs(co2_lbs(kwh) - 0.63307) <= 1e-9 + 1e-5  # 0.954 * 0.6636 = 0.6330744
    assert abs(co2_lbs(kwh) - 0.954 * 0.6636) <= 1e-9 * 0.6331
    assert co2_lbs(0) == 0 and co2_lbs(1.0) == pytest.approx(0.954)
    assert PUE == 1.58 and CO2_LBS_PER_KWH == 0.954


profiles = st.builds(PowerProfile, st.just("p"), st.floats(0, 500), st.floats(0, 200),
                     st.floats(0, 400), st.integers(0, 8))


@settings(max_examples=200)
@given(profiles, st.floats(0, 100), st.floats(0, 100))
def test_linear_in_time(p, t1, t2):
    lhs = kwh_pue(t1 + t2, p)
    rhs = kwh_pue(t1, p) + kwh_pue(t2, p)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)
    assert kwh_pue(t1, p) == pytest.approx(_oracle_kwh(t1, p.p_c, p.p_r, p.p_g, p.g),
                                           rel=1e-12, abs=1e-15)


def test_validation():
    with pytest.raises(ValueError):
        kwh_pue(-1, BUILTIN_PROFILES["desk"])
    with pytest.raises(ValueError):
        co2_lbs(-0.1)
    with pytest.raises(ValueError):
        PowerProfile("x", -1, 0, 0, 0)


def test_builtin_gpu_profiles():
    assert BUILTIN_PROFILES["gtx1080"].p_g == 270
    assert BUILTIN_PROFILES["rtx2080ti"].p_g == 375


def test_meter_reports_nonnegative():
    with Meter(BUILTIN_PROFILES["desk"]) as m:
        sum(range(1000))
    assert m.report.t >= 0 and m.report.kwh_pue >= 0
    result, rep = meter(lambda: 42, BUILTIN_PROFILES["desk"])
    assert result == 42 and rep.profile == "desk"


def test_profile_registry_roundtrip(tmp_path):
    path = tmp_path / "profiles.json"
    save_profiles([PowerProfile("lab", 10, 5, 100, 2)], path)
    reg = load_profiles(path)
    assert reg["lab"].g == 2
    assert resolve_profile("lab", reg).p_g == 100
    assert resolve_profile("desk") is BUILTIN_PROFILES["desk"]
    with pytest.raises(KeyError):
        resolve_profile("nope")
    path.write_text(json.dumps({"name": "x"}))
    with pytest.raises(ValueError):
        load_profiles(path)
