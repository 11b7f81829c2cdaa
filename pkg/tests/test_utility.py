import csv
import io

import pytest

from turbo.utility import (
    ServiceUtilityCurve, UtilityStep, best_step, build_curves, build_service_curve, curves_to_csv,
    evaluate, local_utility, model_step, prune_steps, required_bandwidth_mbps,
)


def test_required_bandwidth_hand_values(profiles):
    c = profiles.configs
    # size / ((SLO - exec - RTT) / 1000), worked by hand
    assert required_bandwidth_mbps(c["ed2_vehicle_pre"], 150, 20) == pytest.approx(14.2 / 0.087)
    assert required_bandwidth_mbps(c["ed2_cloud_pre_front"], 150, 20) == pytest.approx(59 / 0.095)
    assert required_bandwidth_mbps(c["ed7x_vehicle_pre"], 150, 20) is None


def test_boundary_is_infeasible(profiles):
    cfg = profiles.configs["ed2_vehicle_pre"]
    assert required_bandwidth_mbps(cfg, 43 + 20, 20) is None
    assert required_bandwidth_mbps(cfg, 43 + 20 + 1e-6, 20) is not None


def test_include_output_adds_download(profiles):
    cfg = profiles.configs["mtr_cloud"]
    plain = required_bandwidth_mbps(cfg, 250, 20)
    both = required_bandwidth_mbps(cfg, 250, 20, include_output=True)
    assert both == pytest.approx((0.146 + 0.246) / 0.185)
    assert both > plain


def test_model_step_rejects_local(profiles):
    with pytest.raises(ValueError):
        model_step(profiles.configs["ed1_local"], 150, 20)
    assert local_utility(profiles.configs["ed1_local"]) == pytest.approx(0.262)


def test_prune_drops_dominated():
    steps = [
        UtilityStep(10, 0.3, "a"),
        UtilityStep(20, 0.29, "b"),  # dominated by a
        UtilityStep(30, 0.35, "c"),
        UtilityStep(30, 0.35, "b2"),  # exact tie: lexicographic id wins
        UtilityStep(5, 0.1, "floor-ish"),  # below floor
    ]
    kept = prune_steps(0.2, steps)
    assert [s.config_id for s in kept] == ["a", "b2"]


def test_curve_strictly_increasing(profiles):
    for rtt in (0, 20, 60, 100):
        for curve in build_curves(profiles, rtt):
            bws = [s.b_c_mbps for s in curve.steps]
            accs = [s.accuracy for s in curve.steps]
            assert bws == sorted(set(bws))
            assert accs == sorted(set(accs))
            assert all(a > curve.floor_accuracy for a in accs)


def test_higher_rtt_fewer_steps(profiles):
    svc = profiles.service("cam_front")
    fast = build_service_curve(svc, profiles, 20)
    slow = build_service_curve(svc, profiles, 58.9)
    assert len(slow.steps) < len(fast.steps)


def test_evaluate_and_best_step():
    curve = ServiceUtilityCurve("s", 0.2, (UtilityStep(10, 0.3, "a"), UtilityStep(50, 0.5, "b")))
    assert evaluate(curve, 0) == 0.2
    assert evaluate(curve, 10) == 0.3
    assert evaluate(curve, 49.9) == 0.3
    assert evaluate(curve, 1e9) == 0.5
    assert best_step(curve, 9.99) is None
    assert best_step(curve, 50).config_id == "b"


def test_curve_rejects_unsorted():
    with pytest.raises(ValueError):
        ServiceUtilityCurve("s", 0.2, (UtilityStep(50, 0.5, "b"), UtilityStep(10, 0.3, "a")))


def test_transform_applies_to_value():
    curve = ServiceUtilityCurve("s", 0.2, (), transform=(2.0, 0.5))
    assert curve.value(0.25) == 1.0


def test_accuracy_override(profiles):
    svc = profiles.service("cam_front")
    curve = build_service_curve(svc, profiles, 20, accuracy_of=lambda s, c: 0.9 if c == "ed2_dnn_jpeg50" else 0.1)
    assert [s.config_id for s in curve.steps] == ["ed2_dnn_jpeg50"]
    assert curve.floor_accuracy == 0.1


def test_curves_csv(profiles):
    rows = list(csv.reader(io.StringIO(curves_to_csv(build_curves(profiles, 20)))))
    assert rows[0] == ["service_id", "b_c_mbps", "accuracy", "config_id"]
    floors = [r for r in rows[1:] if r[1] == "0"]
    assert len(floors) == 6
