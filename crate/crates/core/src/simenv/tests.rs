use super::*;
use crate::policy::{scale_clip_action, ActionScaling, RawAction};
use proptest::prelude::*;

fn env() -> SimEnv {
    SimEnv::new(SimConfig::default()).unwrap()
}

fn neutral() -> ActionVector {
    scale_clip_action(&RawAction::zeros(), &ActionScaling::default())
}

fn in_place() -> ActionVector {
    ActionVector::uniform(LegAction::default())
}

#[test]
fn step_before_reset_fails() {
    let mut e = env();
    assert_eq!(e.step(&neutral()), Err(EnvError::NotReset));
    assert!(!e.is_ready());
}

#[test]
fn step_after_done_fails() {
    let mut cfg = SimConfig::default();
    cfg.env.episode_len = 3;
    let mut e = SimEnv::new(cfg).unwrap();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    for k in 1..=3 {
        let o = e.step(&neutral()).unwrap();
        assert_eq!(o.done, k == 3);
    }
    assert_eq!(e.step(&neutral()), Err(EnvError::NotReset));
}

#[test]
fn unreachable_height_is_config_error() {
    let mut cfg = SimConfig::default();
    cfg.gait.desired_height = 0.5;
    assert!(matches!(SimEnv::new(cfg), Err(EnvError::Config(_))));
}

#[test]
fn flat_spawn_gives_zero_observation() {
    let mut e = env();
    let obs = e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 3).unwrap();
    assert!(obs.0.norm() < 1e-12);
    let origin = e.body_origin().unwrap();
    assert!((origin - Vector3::new(0.0, 0.0, 0.243)).norm() < 1e-12);
}

#[test]
fn spawn_is_plane_aligned_on_side_slope() {
    let mut e = env();
    let obs = e.reset(TerrainPlane::new(11.0, 90.0), &RandomizationConfig::none(), 0).unwrap();
    let roll = -(11f64.to_radians());
    for i in 0..3 {
        assert!((obs.0[3 * i] - roll).abs() < 1e-12);
        assert!(obs.0[3 * i + 1].abs() < 1e-12);
        assert!(obs.0[3 * i + 2].abs() < 1e-12);
    }
    // The slope estimate starts flat.
    assert_eq!((obs.0[9], obs.0[10]), (0.0, 0.0));
    let h = e.terrain().unwrap().height_of(&e.body_origin().unwrap());
    assert!((h - 0.243).abs() < 1e-12);
}

#[test]
fn reset_is_deterministic() {
    let rand = RandomizationConfig::default();
    let mut a = env();
    let mut b = env();
    a.reset(TerrainPlane::new(7.0, 30.0), &rand, 11).unwrap();
    b.reset(TerrainPlane::new(7.0, 30.0), &rand, 11).unwrap();
    assert_eq!(a.state(), b.state());
    assert_eq!(a.episode_params(), b.episode_params());
    b.reset(TerrainPlane::new(7.0, 30.0), &rand, 12).unwrap();
    assert_ne!(a.episode_params(), b.episode_params());
}

#[test]
fn randomized_parameters_in_range() {
    let mut e = env();
    for seed in 0..50 {
        e.reset(TerrainPlane::new(5.0, 15.0), &RandomizationConfig::default(), seed).unwrap();
        let p = e.episode_params().unwrap();
        assert!((0.5..=0.8).contains(&p.friction));
        assert!((0.0..=0.2).contains(&p.front_mass) && (0.0..=0.2).contains(&p.back_mass));
        assert!((5.0..=8.0).contains(&p.motor_strength));
        let push = p.push.unwrap();
        assert_eq!((push.start_step, push.end_step), (200, 210));
        assert!((e.total_mass().unwrap() - 10.0 - p.front_mass - p.back_mass).abs() < 1e-12);
    }
}

#[test]
fn trajectories_repeat_bit_for_bit() {
    let run = || {
        let mut e = env();
        e.reset(TerrainPlane::new(9.0, 45.0), &RandomizationConfig::default(), 5).unwrap();
        let mut out = Vec::new();
        for k in 0..300usize {
            let mut raw = RawAction::zeros();
            raw[k % 20] = ((k as f64) * 0.37).sin();
            let o = e.step(&scale_clip_action(&raw, &ActionScaling::default())).unwrap();
            let done = o.done;
            out.push(o);
            if done {
                break;
            }
        }
        (out, e.state().cloned())
    };
    assert_eq!(run(), run());
}

#[test]
fn policy_steps_every_half_cycle() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    for k in 1..=120 {
        let o = e.step(&neutral()).unwrap();
        assert_eq!(o.info.policy_step, k % 40 == 0, "step {k}");
    }
}

#[test]
fn actions_latch_at_phase_boundaries() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    let first = neutral();
    let second = ActionVector::uniform(LegAction { step_len: 0.1, ..Default::default() });
    assert_eq!(e.step(&first).unwrap().info.actions, first);
    for _ in 1..40 {
        assert_eq!(e.step(&second).unwrap().info.actions, first);
    }
    assert_eq!(e.step(&second).unwrap().info.actions, second);
}

#[test]
fn plane_estimate_tracks_slope() {
    let mut e = env();
    e.reset(TerrainPlane::new(7.0, 0.0), &RandomizationConfig::none(), 0).unwrap();
    let o = (0..40).map(|_| e.step(&neutral()).unwrap()).last().unwrap();
    assert!(o.info.plane_updated);
    assert!((o.info.plane.pitch - 7f64.to_radians()).abs() < 0.1);
    assert_eq!(o.observation.0[10], o.info.plane.pitch);
}

#[test]
fn free_flight_accelerates_at_gravity() {
    let mut e = env();
    e.reset(TerrainPlane::new(5.0, 30.0), &RandomizationConfig::none(), 0).unwrap();
    e.state_mut().unwrap().com.z += 2.0;
    let v0 = e.state().unwrap().velocity;
    let o = e.step(&neutral()).unwrap();
    assert!(o.info.contact.iter().all(|c| !c));
    let a = (e.state().unwrap().velocity - v0) / 0.005;
    assert!((a - Vector3::new(0.0, 0.0, -9.81)).norm() < 1e-9, "{a}");
    assert!(e.state().unwrap().angular_velocity.norm() < 1e-12);
}

#[test]
fn scripted_tilt_terminates() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    e.set_scripted_wrench(Some(Wrench { force: Vector3::zeros(), torque: Vector3::new(40.0, 0.0, 0.0) }));
    let limit = 45f64.to_radians();
    let mut prev_roll = 0.0f64;
    loop {
        let o = e.step(&neutral()).unwrap();
        if o.done {
            assert!(o.info.fell);
            assert!(o.info.torso[0].abs() > limit || o.info.torso[1].abs() > limit);
            assert!(prev_roll.abs() <= limit);
            assert!(o.info.step < 400);
            break;
        }
        prev_roll = o.info.torso[0];
    }
}

#[test]
fn state_tipped_to_sixty_degrees_falls_next_step() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    let s = e.state_mut().unwrap();
    s.orientation = UnitQuaternion::from_euler_angles(60f64.to_radians(), 0.0, 0.0);
    let o = e.step(&neutral()).unwrap();
    assert!(o.done && o.info.fell);
}

#[test]
fn low_torso_counts_as_fall() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    e.state_mut().unwrap().com.z = 0.1;
    let o = e.step(&neutral()).unwrap();
    assert!(o.done && o.info.fell);
}

#[test]
fn standing_penalty_with_zero_step_length() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    let x0 = e.body_origin().unwrap().x;
    for k in 1..=50 {
        let o = e.step(&in_place()).unwrap();
        assert_eq!(o.info.standing, k == 50, "step {k}");
        if k == 50 {
            assert!((o.info.forward_position - x0).abs() < 0.02);
            assert!(o.reward <= 4.0 - 1.0 + 1.5 * o.info.dx / 0.0034 + 1e-12);
        }
    }
}

#[test]
fn neutral_gait_walks_forward_on_flat() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    let mut total = 0.0;
    let mut last = None;
    for _ in 0..400 {
        let o = e.step(&neutral()).unwrap();
        total += o.reward;
        last = Some(o);
    }
    let o = last.unwrap();
    assert!(o.done && !o.info.fell);
    assert!(o.info.forward_position > 0.2);
    assert!(total > 0.0);
}

#[test]
fn push_window_is_reported() {
    let mut e = env();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    e.set_push(Some(PushEvent { start_step: 5, end_step: 7, force: Vector3::new(0.0, 50.0, 0.0) }));
    let flags: Vec<bool> = (0..10).map(|_| e.step(&neutral()).unwrap().info.push_active).collect();
    assert_eq!(flags, [false, false, false, false, false, true, true, false, false, false]);
}

#[test]
fn energy_non_increasing_with_frozen_gait() {
    let mut cfg = SimConfig::default();
    cfg.env.episode_len = 2000;
    let mut e = SimEnv::new(cfg).unwrap();
    e.reset(TerrainPlane::flat(), &RandomizationConfig::none(), 0).unwrap();
    e.set_gait_frozen(true);
    for _ in 0..200 {
        e.step(&in_place()).unwrap();
    }
    let mut prev = e.mechanical_energy().unwrap();
    for k in 0..1000 {
        let o = e.step(&in_place()).unwrap();
        assert!(!o.done);
        let en = e.mechanical_energy().unwrap();
        assert!(en <= prev + 1e-9, "step {k}: {prev} -> {en}");
        prev = en;
    }
}

proptest! {
    #[test]
    fn contact_force_respects_coulomb_cone(
        inc in 0.0f64..12.0, yaw in 0.0f64..360.0,
        px in -0.5f64..0.5, py in -0.5f64..0.5, depth in -0.01f64..0.05,
        vx in -2.0f64..2.0, vy in -2.0f64..2.0, vz in -2.0f64..2.0,
        ax in -0.05f64..0.05, ay in -0.05f64..0.05,
        mu in 0.5f64..0.8, cap in 20.0f64..200.0,
    ) {
        let env = EnvConfig::default();
        let plane = TerrainPlane::new(inc, yaw);
        let n = plane.normal();
        let base = Vector3::new(px, py, 0.0);
        let on_plane = base - n * n.dot(&base);
        let foot = on_plane - n * depth;
        let offset = Vector3::new(ax, ay, 0.0);
        let mut anchor = Some(foot - n * n.dot(&foot) + offset - n * n.dot(&offset));
        let v = Vector3::new(vx, vy, vz);
        match contact_force(&env, &n, mu, cap, &foot, &v, &mut anchor) {
            Some(f) => {
                let fn_mag = f.dot(&n);
                let ft = (f - n * fn_mag).norm();
                prop_assert!(fn_mag >= 0.0);
                prop_assert!(ft <= mu * fn_mag + 1e-9);
                prop_assert!(f.norm() <= cap + 1e-9);
            }
            None => {
                prop_assert!(depth <= 1e-12 || n.dot(&foot) >= 0.0);
                prop_assert!(anchor.is_none());
            }
        }
    }
}
