use ncs_core::field::LinearDelayed;
use ncs_core::robot::{RobotField, RobotParams};
use ncs_core::sim::{
    generate_delays, integrate, simulate_robot, DelayTraces, IntegrationOptions, NetworkScenario, ROBOT_COMPOSITION,
    ROBOT_STATE_NAMES,
};

const ALPHA: f64 = 2.55;
const BETA: f64 = 3.16;

/// Underdamped solution of `ë + αė + βe = 0`.
fn closed_form(e0: f64, de0: f64, t: f64) -> (f64, f64) {
    let sigma = -ALPHA / 2.0;
    let omega = (BETA - sigma * sigma).sqrt();
    let c = (de0 - sigma * e0) / omega;
    let (s, co) = (omega * t).sin_cos();
    let e = (sigma * t).exp() * (e0 * co + c * s);
    let de = (sigma * t).exp() * (sigma * (e0 * co + c * s) + omega * (-e0 * s + c * co));
    (e, de)
}

#[test]
fn undelayed_linear_loop_matches_closed_form() {
    let a = RobotParams::reference().error_dynamics();
    let f = LinearDelayed::new(a, vec![]).unwrap();
    let x0 = [0.3, -0.2, -0.4, 0.5];
    let traj =
        integrate(&f, &x0, &DelayTraces::undelayed(0, 5.0), &IntegrationOptions { dt: 1e-4, record_stride: 1000, ..Default::default() })
            .unwrap();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let (e1, de1) = closed_form(x0[0], x0[1], *t);
        let (e2, de2) = closed_form(x0[2], x0[3], *t);
        for (got, want) in x.iter().zip([e1, de1, e2, de2]) {
            assert!((got - want).abs() < 1e-6, "t = {t}: {got} vs {want}");
        }
    }
    assert_eq!(*traj.times.last().unwrap(), 5.0);
}

#[test]
fn undelayed_robot_follows_linear_error_dynamics() {
    let p = RobotParams { qd1: 0.2, qd2: -0.1, ..RobotParams::reference() };
    let x0 = [0.5, 0.0, 0.2, 0.0];
    let traj = integrate(
        &RobotField(p),
        &x0,
        &DelayTraces::undelayed(4, 2.0),
        &IntegrationOptions { dt: 1e-4, record_stride: 500, ..Default::default() },
    )
    .unwrap();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let (e1, _) = closed_form(x0[0] - p.qd1, 0.0, *t);
        let (e2, _) = closed_form(x0[2] - p.qd2, 0.0, *t);
        assert!((x[0] - p.qd1 - e1).abs() < 1e-6);
        assert!((x[2] - p.qd2 - e2).abs() < 1e-6);
    }
}

#[test]
fn step_halving_shows_fourth_order_trend() {
    let f = LinearDelayed::new(RobotParams::reference().error_dynamics(), vec![]).unwrap();
    let x0 = [1.0, 0.0, -1.0, 0.5];
    let end = |dt: f64| {
        integrate(&f, &x0, &DelayTraces::undelayed(0, 2.0), &IntegrationOptions { dt, record_stride: 1_000_000, ..Default::default() })
            .unwrap()
            .states
            .last()
            .unwrap()
            .clone()
    };
    let (a, b, c) = (end(0.04), end(0.02), end(0.01));
    let diff = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (d1, d2) = (diff(&a, &b), diff(&b, &c));
    assert!(d2 * 4.0 < d1, "{d1} {d2}");
}

#[test]
fn robot_delays_stay_below_two_cycles_on_the_grid() {
    let t = 0.5e-3;
    let s = NetworkScenario { horizon: 1.0, ..NetworkScenario::lossless(t, 3) };
    let traces = generate_delays(&s, &ROBOT_COMPOSITION).unwrap();
    assert!(traces.max_delay() < 2.0 * t);
    let dt = 1e-5;
    for step in 0..=(1.0 / dt) as usize {
        for d in traces.delays_at(step as f64 * dt) {
            assert!((0.0..2.0 * t).contains(&d));
        }
    }
}

#[test]
fn robot_settles_below_certified_cycle() {
    let p = RobotParams::reference();
    let run = simulate_robot(&p, &NetworkScenario::lossless(0.5e-3, 1), &[0.3, 0.0, 0.3, 0.0], &IntegrationOptions::default())
        .unwrap();
    assert!(run.metrics.settled, "{:?}", run.metrics);
    assert!(run.metrics.settling_time.unwrap() < 20.0);
    assert!(run.max_delay < 1e-3);
}

#[test]
fn identical_scenarios_give_identical_csv() {
    let p = RobotParams::reference();
    let s = NetworkScenario { horizon: 0.5, loss_probability: 0.3, max_successive_losses: 1, ..NetworkScenario::lossless(1e-3, 5) };
    let opts = IntegrationOptions { dt: 2e-5, record_stride: 50, ..Default::default() };
    let a = simulate_robot(&p, &s, &[0.2, 0.0, -0.2, 0.0], &opts).unwrap();
    let b = simulate_robot(&p, &s, &[0.2, 0.0, -0.2, 0.0], &opts).unwrap();
    let eq = p.equilibrium();
    assert_eq!(a.trajectory.to_csv(&ROBOT_STATE_NAMES, &eq), b.trajectory.to_csv(&ROBOT_STATE_NAMES, &eq));
}
