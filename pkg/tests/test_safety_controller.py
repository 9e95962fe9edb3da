"""Tests for the minimally invasive safety filter."""

import math

import pytest

from safekernel.dynamics import DubinsParams, State, rk4_step
from safekernel.reachability import (
    Grid3,
    KeepOutDisk,
    cell_value,
    interpolate_value,
    value_tolerance,
)
from safekernel.safety_controller import (
    SafetyPolicy,
    closed_loop_safe,
    composite_value,
    filter_control,
)

from conftest import make_synthetic_vf

PARAMS = DubinsParams(speed=3.0, omega_max=1.0)


def origin_disk(r=0.5):
    return KeepOutDisk(0.0, 0.0, r)


def test_pass_through_is_exact_when_clear():
    vf = make_synthetic_vf(lambda x, y, t: 0.25)
    policy = SafetyPolicy(vf, alpha=0.0)
    nominal = 0.3217654321098765
    u, active = filter_control(policy, State(0.0, 0.0, 0.0), nominal,
                               [(origin_disk(), True)], PARAMS)
    assert u == nominal
    assert active is False
    assert policy.engaged is False


def test_engagement_is_inclusive_at_alpha():
    # constant field 0.25 and alpha 0.25 are both binary-exact
    vf = make_synthetic_vf(lambda x, y, t: 0.25)
    policy = SafetyPolicy(vf, alpha=0.25)
    _, active = filter_control(policy, State(0.0, 0.0, 0.0), 0.0,
                               [(origin_disk(), True)], PARAMS)
    assert active is True

    policy = SafetyPolicy(vf, alpha=0.2499999)
    _, active = filter_control(policy, State(0.0, 0.0, 0.0), 0.0,
                               [(origin_disk(), True)], PARAMS)
    assert active is False


def test_override_steers_by_heading_costate_sign():
    # value falls with theta at rate 0.4, so the costate p3 = -0.4 and the
    # avoidance turn must be the negative extreme
    vf = make_synthetic_vf(lambda x, y, t: x - 0.4 * t)
    policy = SafetyPolicy(vf, alpha=0.0)
    state = State(-0.01, 0.0, 0.0)
    v, _ = composite_value(vf, state, [(origin_disk(), True)])
    assert v == pytest.approx(policy.alpha - 0.01, abs=1e-12)
    u, active = filter_control(policy, state, 0.0,
                               [(origin_disk(), True)], PARAMS)
    assert active is True
    assert u == -PARAMS.omega_max

    # mirrored field, positive costate, positive extreme
    vf2 = make_synthetic_vf(lambda x, y, t: x + 0.4 * t)
    policy2 = SafetyPolicy(vf2, alpha=0.0)
    u2, active2 = filter_control(policy2, state, 0.0,
                                 [(origin_disk(), True)], PARAMS)
    assert active2 is True
    assert u2 == PARAMS.omega_max


def test_composite_takes_min_over_detected_only():
    vf = make_synthetic_vf(lambda x, y, t: x)
    state = State(0.25, 0.0, 0.0)
    near = KeepOutDisk(1.0, 0.0, 0.5)    # relative x -0.75
    far = KeepOutDisk(-1.0, 0.0, 0.5)    # relative x 1.25
    v, k = composite_value(vf, state, [(far, True), (near, True)])
    assert v == pytest.approx(-0.75, abs=1e-12)
    assert k == 1

    # the binding obstacle is invisible while undetected
    v, k = composite_value(vf, state, [(far, True), (near, False)])
    assert v == pytest.approx(1.25, abs=1e-12)
    assert k == 0

    v, k = composite_value(vf, state, [(far, False), (near, False)])
    assert v == math.inf and k == -1


def test_composite_tie_goes_to_first_listed():
    vf = make_synthetic_vf(lambda x, y, t: x)
    twin_a = KeepOutDisk(0.0, 1.0, 0.5)
    twin_b = KeepOutDisk(0.0, -1.0, 0.5)
    _, k = composite_value(vf, State(0.5, 0.0, 0.0),
                           [(twin_a, True), (twin_b, True)])
    assert k == 0


def test_nothing_detected_passes_through():
    vf = make_synthetic_vf(lambda x, y, t: x)
    policy = SafetyPolicy(vf, alpha=0.0)
    deep = KeepOutDisk(0.0, 0.0, 0.5)  # state dead centre, value < alpha
    u, active = filter_control(policy, State(0.0, 0.0, 0.0), 0.125,
                               [(deep, False)], PARAMS)
    assert (u, active) == (0.125, False)
    u, active = filter_control(policy, State(0.0, 0.0, 0.0), 0.125,
                               [], PARAMS)
    assert (u, active) == (0.125, False)


def test_default_hysteresis_band():
    vf = make_synthetic_vf(lambda x, y, t: x)
    policy = SafetyPolicy(vf, alpha=-0.5)
    assert policy.hysteresis == pytest.approx(
        0.05 + cell_value(vf.grid), abs=1e-12)
    with pytest.raises(ValueError):
        SafetyPolicy(vf, alpha=0.0, hysteresis=-0.1)


def test_latch_holds_until_value_clears_band():
    # value equals the x coordinate; alpha 0, default hysteresis = one cell
    vf = make_synthetic_vf(lambda x, y, t: x)
    policy = SafetyPolicy(vf, alpha=0.0)
    band = policy.hysteresis
    obs = [(origin_disk(), True)]

    _, active = filter_control(policy, State(0.0, 0.0, 0.0), 0.0, obs, PARAMS)
    assert active is True
    # inside the band: a fresh policy would pass through, the latched one holds
    mid = State(0.5 * band, 0.0, 0.0)
    _, active = filter_control(policy, mid, 0.0, obs, PARAMS)
    assert active is True
    fresh = SafetyPolicy(vf, alpha=0.0)
    _, fresh_active = filter_control(fresh, mid, 0.0, obs, PARAMS)
    assert fresh_active is False
    # at the band edge the latch still holds (release is strict)
    _, active = filter_control(policy, State(band, 0.0, 0.0), 0.0, obs, PARAMS)
    assert active is True
    # beyond the band it releases and the nominal is restored exactly
    u, active = filter_control(policy, State(band + 1e-9, 0.0, 0.0), 0.25,
                               obs, PARAMS)
    assert (u, active) == (0.25, False)
    assert policy.engaged is False


def test_explicit_hysteresis_is_honoured():
    vf = make_synthetic_vf(lambda x, y, t: x)
    policy = SafetyPolicy(vf, alpha=0.0, hysteresis=0.2)
    obs = [(origin_disk(), True)]
    filter_control(policy, State(0.0, 0.0, 0.0), 0.0, obs, PARAMS)
    _, active = filter_control(policy, State(0.19, 0.0, 0.0), 0.0, obs, PARAMS)
    assert active is True
    _, active = filter_control(policy, State(0.21, 0.0, 0.0), 0.0, obs, PARAMS)
    assert active is False


def test_nominal_out_of_bound_rejected():
    vf = make_synthetic_vf(lambda x, y, t: 1.0)
    policy = SafetyPolicy(vf, alpha=0.0)
    with pytest.raises(ValueError):
        filter_control(policy, State(0.0, 0.0, 0.0), 1.0001,
                       [(origin_disk(), True)], PARAMS)


def test_alpha_shifts_engagement_earlier(vf_sound):
    """A positive activation level must trigger the override sooner on the
    same approach than the zero level does."""
    disk = [(KeepOutDisk(0.0, 0.0, vf_sound.obstacle_radius), True)]
    dt = 1 / 60

    def first_engagement(alpha):
        policy = SafetyPolicy(vf_sound, alpha=alpha)
        s = State(-10.0, 0.0, 0.0)
        for tick in range(20 * 60):
            _, active = filter_control(policy, s, 0.0, disk, PARAMS)
            if active:
                return tick
            s = rk4_step(s, 0.0, dt, PARAMS)
        raise AssertionError("override never engaged")

    assert first_engagement(0.4) < first_engagement(0.0)


def test_filtered_loop_maintains_value_near_alpha(vf_sound):
    """Once engaged against a head-on obstacle, the override must keep the
    composite value from dipping more than the grid tolerance below alpha."""
    disk = [(KeepOutDisk(0.0, 0.0, vf_sound.obstacle_radius), True)]
    policy = SafetyPolicy(vf_sound, alpha=0.0)
    tol = value_tolerance(vf_sound)
    dt = 1 / 60
    s = State(-10.0, 0.0, 0.0)
    worst = math.inf
    for _ in range(12 * 60):
        u, _ = filter_control(policy, s, 0.0, disk, PARAMS)
        s = rk4_step(s, u, dt, PARAMS)
        v, _ = composite_value(vf_sound, s, disk)
        worst = min(worst, v)
    assert worst >= policy.alpha - tol
    # the rollout actually skirted the boundary rather than staying far away
    assert worst <= policy.alpha + 1.0


def test_closed_loop_safe_accepts_protected_approach(vf_sound):
    disk = [(KeepOutDisk(0.0, 0.0, vf_sound.obstacle_radius), True)]
    policy = SafetyPolicy(vf_sound, alpha=0.0)
    ok = closed_loop_safe(policy, State(-10.0, 0.0, 0.0), lambda s: 0.0,
                          disk, PARAMS, horizon=12.0)
    assert ok is True


def test_closed_loop_safe_rejects_doomed_start(vf_sound):
    disk = [(KeepOutDisk(0.0, 0.0, vf_sound.obstacle_radius), True)]
    policy = SafetyPolicy(vf_sound, alpha=0.0)
    s0 = State(-2.3, 0.0, 0.0)
    assert interpolate_value(vf_sound, s0) < -value_tolerance(vf_sound)
    ok = closed_loop_safe(policy, s0, lambda s: 0.0, disk, PARAMS,
                          horizon=6.0)
    assert ok is False
