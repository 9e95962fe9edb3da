"""Tests for the team crossing task."""

import json
import math

import numpy as np
import pytest

from safekernel.dynamics import DubinsParams, State
from safekernel.learning import SupervisorFit
from safekernel.reachability import KeepOutDisk
from safekernel.simulation import (
    FALSE_POSITIVE,
    TRUE_POSITIVE,
    ArenaTooCrowdedError,
    Obstacle,
    SafeSet,
    ScoreRule,
    WorldConfig,
    classify_intervention,
    conservative_safeset,
    lane_clearance,
    learned_safeset,
    relevance_radius,
    resolve_alpha,
    run_trial,
    save_metrics,
    spawn_world,
    standard_safeset,
    step,
)
from safekernel.supervisor import SupervisorParams

TRUE_PARAMS = DubinsParams(3.0, 1.0)


def small_config(**kw):
    base = dict(arena=(48.0, 30.0), n_robots=2, n_obstacles=4,
                trial_ticks=600, seed=11)
    base.update(kw)
    return WorldConfig(**base)


def test_clearance_scales():
    assert lane_clearance(TRUE_PARAMS) == 6.0
    assert relevance_radius(TRUE_PARAMS) == 12.0


def test_score_rule_validation():
    with pytest.raises(ValueError):
        ScoreRule(trip_reward=1.0, crash_cost=10.0, removal_cost=3.0)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(detection_prob=1.2)
    with pytest.raises(ValueError):
        small_config(n_robots=0)


def test_spawn_is_deterministic(vf_true):
    sset = standard_safeset(vf_true)
    a = spawn_world(small_config(), sset)
    b = spawn_world(small_config(), sset)
    assert [(o.id, o.disk) for o in a.obstacles] == \
        [(o.id, o.disk) for o in b.obstacles]
    assert [r.state for r in a.robots] == [r.state for r in b.robots]
    assert np.array_equal(a.detected, b.detected)
    c = spawn_world(small_config(seed=12), sset)
    assert [o.disk for o in a.obstacles] != [o.disk for o in c.obstacles]


def test_spawn_counts_and_flags(vf_true):
    sset = standard_safeset(vf_true)
    world = spawn_world(small_config(n_obstacles=6), sset)
    assert len(world.obstacles) == 6
    all_on = spawn_world(small_config(detection_prob=1.0), sset)
    assert all_on.detected.all()
    all_off = spawn_world(small_config(detection_prob=0.0), sset)
    assert not all_off.detected.any()


def test_spawn_honours_clearances(vf_true):
    sset = standard_safeset(vf_true)
    gap = lane_clearance(TRUE_PARAMS)
    for seed in range(5):
        config = small_config(seed=seed)
        world = spawn_world(config, sset)
        disks = [o.disk for o in world.obstacles]
        width, height = config.arena
        for i, a in enumerate(disks):
            assert a.r <= a.cx <= width - a.r
            assert a.r <= a.cy <= height - a.r
            for b in disks[i + 1:]:
                assert math.hypot(a.cx - b.cx, a.cy - b.cy) >= \
                    gap + a.r + b.r - 1e-9
            for robot in world.robots:
                for px in (2.0, width - 2.0):
                    assert math.hypot(a.cx - px, a.cy - robot.lane_y) >= \
                        gap + a.r - 1e-9


def test_overcrowded_arena_raises(vf_true):
    config = small_config(arena=(20.0, 12.0), n_obstacles=10)
    with pytest.raises(ArenaTooCrowdedError):
        spawn_world(config, standard_safeset(vf_true))


def test_goal_capture_flips_goal(vf_true):
    config = small_config()
    world = spawn_world(config, standard_safeset(vf_true))
    robot = world.robots[0]
    # park every obstacle away from the lane so the filter stays quiet
    for j, obstacle in enumerate(world.obstacles):
        world.obstacles[j] = Obstacle(obstacle.id,
                                      KeepOutDisk(24.0, 28.0 + j, 0.5))
    robot.state = State(config.arena[0] - 2.6, robot.lane_y, 0.0)
    events = step(world)
    kinds = [e["kind"] for e in events]
    assert "trip" in kinds
    assert robot.trips == 1 and world.trips == 1
    assert world.score == config.score.trip_reward
    assert robot.goal == (2.0, robot.lane_y)


def test_removal_bookkeeping(vf_true):
    config = small_config()
    world = spawn_world(config, standard_safeset(vf_true))
    target = world.obstacles[0].id
    before_ids = {o.id for o in world.obstacles}
    events = step(world, remove_id=target)
    removal = next(e for e in events if e["kind"] == "removal")
    assert world.interventions == 1
    assert world.score == -config.score.removal_cost
    assert len(world.obstacles) == config.n_obstacles
    after_ids = {o.id for o in world.obstacles}
    assert target not in after_ids
    assert removal["replacement_id"] in after_ids - before_ids
    assert len(world.intervention_log) == 1
    entry = world.intervention_log[0]
    assert entry["classification"] in (FALSE_POSITIVE, TRUE_POSITIVE)
    assert entry["obstacle"]["id"] == target
    with pytest.raises(ValueError):
        step(world, remove_id=target)


def test_respawn_keeps_clear_of_robots(vf_true):
    config = small_config()
    gap = lane_clearance(TRUE_PARAMS)
    for seed in range(4):
        world = spawn_world(small_config(seed=seed),
                            standard_safeset(vf_true))
        replaced = world.obstacles[1].id
        step(world, remove_id=replaced)
        fresh = world.obstacles[1]
        for robot in world.robots:
            d = math.hypot(fresh.disk.cx - robot.state.x,
                           fresh.disk.cy - robot.state.y)
            assert d >= gap + fresh.disk.r - 1e-9


def test_crash_teleports_to_leg_start(vf_true):
    config = small_config(n_robots=1, n_obstacles=1, detection_prob=0.0,
                          arena=(40.0, 24.0))
    world = spawn_world(config, standard_safeset(vf_true))
    robot = world.robots[0]
    world.obstacles[0] = Obstacle(0, KeepOutDisk(10.0, robot.lane_y, 2.25))
    world.detected[:] = False
    crash = None
    for _ in range(400):
        events = step(world)
        crash = next((e for e in events if e["kind"] == "crash"), None)
        if crash:
            break
    assert crash is not None
    assert world.crashes == 1
    assert world.score == -config.score.crash_cost
    assert (robot.state.x, robot.state.y, robot.state.theta) == \
        (2.0, robot.lane_y, 0.0)
    assert robot.policy.engaged is False
    assert not world.detected.any()  # re-rolled at detection_prob = 0


def test_classification_rules(vf_true):
    config = small_config(n_robots=2)
    world = spawn_world(config, standard_safeset(vf_true))
    disk = KeepOutDisk(24.0, 15.0, 2.25)
    world.obstacles[0] = Obstacle(world.obstacles[0].id, disk)
    target = world.obstacles[0].id
    near, far = world.robots
    far.state = State(1.0, 1.0, 0.0)  # > 12 away, never involved

    near.state = State(disk.cx - 5.0, disk.cy, 0.0)  # closing from the left
    world.detected[0, 0] = False
    assert classify_intervention(world, target) == TRUE_POSITIVE
    world.detected[0, 0] = True
    assert classify_intervention(world, target) == FALSE_POSITIVE

    # heading away: not involved even while close and undetected
    near.state = State(disk.cx - 5.0, disk.cy, math.pi)
    world.detected[0, 0] = False
    assert classify_intervention(world, target) == FALSE_POSITIVE

    # nobody anywhere near: unnecessary removal
    near.state = State(1.0, 28.0, 0.0)
    assert classify_intervention(world, target) == FALSE_POSITIVE

    with pytest.raises(ValueError):
        classify_intervention(world, 999)


def test_score_identity_and_constant_count(vf_true):
    config = small_config(trial_ticks=0)
    world = spawn_world(config, standard_safeset(vf_true))
    rule = config.score
    for tick in range(240):
        remove = world.obstacles[0].id if tick % 60 == 30 else None
        step(world, remove_id=remove)
        expected = rule.trip_reward * world.trips \
            - rule.crash_cost * world.crashes \
            - rule.removal_cost * world.interventions
        assert world.score == expected
        assert len(world.obstacles) == config.n_obstacles
        assert world.false_positives <= world.interventions


def test_resolve_alpha_rules(vf_sup):
    fit = SupervisorFit(vf=vf_sup, omega_max=0.75, mu_hat=0.3,
                        sigma2_hat=0.04, log_likelihood=0.0,
                        per_candidate=(), n_records=10, n_excluded=0)
    plain = SafeSet("standard", vf_sup)
    fitted = learned_safeset(fit)
    assert resolve_alpha(plain, "zero") == 0.0
    assert resolve_alpha(plain, 0.7) == 0.7
    assert resolve_alpha(fitted, "mu") == pytest.approx(0.3)
    assert resolve_alpha(fitted, "mu_plus_2sigma") == pytest.approx(0.7)
    with pytest.raises(ValueError):
        resolve_alpha(plain, "mu")
    with pytest.raises(ValueError):
        resolve_alpha(plain, "sigma")


def test_trial_determinism(vf_true):
    config = small_config(trial_ticks=900, detection_prob=0.8, seed=3)
    sup = SupervisorParams(vf_true, 0.3, 0.5)
    sset = standard_safeset(vf_true)
    a = run_trial(config, sset, supervisor=sup)
    b = run_trial(config, sset, supervisor=sup)
    assert a == b


def test_metrics_file_deterministic(vf_true, tmp_path):
    config = small_config(trial_ticks=600)
    sup = SupervisorParams(vf_true, 0.3, 0.5)
    runs = [run_trial(config, standard_safeset(vf_true), supervisor=sup)]
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_metrics(p1, runs)
    save_metrics(p2, runs)
    assert p1.read_bytes() == p2.read_bytes()
    doc = json.loads(p1.read_text())
    assert doc["totals"]["interventions"] == runs[0].interventions


def test_trace_log(vf_true, tmp_path):
    config = small_config(trial_ticks=30)
    trace = tmp_path / "trace.jsonl"
    run_trial(config, standard_safeset(vf_true), trace_path=str(trace))
    lines = trace.read_text().splitlines()
    assert len(lines) == 30
    first = json.loads(lines[0])
    assert first["tick"] == 0
    assert len(first["robots"]) == config.n_robots
    assert len(first["obstacles"]) == config.n_obstacles
    assert "events" in first


def test_zero_false_positives_on_own_set(vf_true):
    """Noiseless supervisor, robots operating on the supervisor's own set at
    its threshold: interventions happen only for undetected obstacles, so
    none are false positives and nothing crashes."""
    sup = SupervisorParams(vf_true, 0.3, 0.0)
    sset = SafeSet("learned", vf_true)
    total_interventions = 0
    for seed in range(3):
        config = WorldConfig(trial_ticks=3600, seed=seed)
        m = run_trial(config, sset, supervisor=sup, alpha_rule=0.3)
        assert m.false_positives == 0
        assert m.crashes == 0
        total_interventions += m.interventions
    assert total_interventions > 0


def test_no_crashes_with_full_detection(vf_true):
    sset = standard_safeset(vf_true)
    for seed in range(2):
        config = WorldConfig(trial_ticks=3600, seed=seed,
                             detection_prob=1.0)
        m = run_trial(config, sset)
        assert m.crashes == 0
        assert m.trips > 0


def test_false_positive_monotonicity(vf_true, vf_sup):
    """Raising the activation level can only reduce how often a noisy
    supervisor beats the filter to its threshold."""
    sup = SupervisorParams(vf_sup, 0.3, 0.6)
    fit = SupervisorFit(vf=vf_sup, omega_max=0.75, mu_hat=0.3,
                        sigma2_hat=0.25, log_likelihood=0.0,
                        per_candidate=(), n_records=10, n_excluded=0)
    standard = standard_safeset(vf_true)
    learned = learned_safeset(fit)
    fp = {"standard": 0, "mu": 0, "mu2": 0}
    for seed in range(3):
        config = WorldConfig(trial_ticks=3000, seed=seed)
        fp["standard"] += run_trial(config, standard, supervisor=sup,
                                    alpha_rule="zero").false_positives
        fp["mu"] += run_trial(config, learned, supervisor=sup,
                              alpha_rule="mu").false_positives
        fp["mu2"] += run_trial(config, learned, supervisor=sup,
                               alpha_rule="mu_plus_2sigma").false_positives
    assert fp["mu"] <= fp["standard"]
    assert fp["mu2"] <= fp["mu"]


def test_conservative_safeset_tag(vf_true):
    sset = conservative_safeset(vf_true)
    assert sset.name == "conservative"
    assert sset.fit is None
