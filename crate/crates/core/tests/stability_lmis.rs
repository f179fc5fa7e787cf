use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ncs_core::analyzer::{
    build_stability_lmis, check_stability, max_delay_bound, synthesize_lyapunov, CouplingForm, LyapunovCertificate,
};
use ncs_core::fixtures::BoundMatrices;
use ncs_core::lmi::{export_sdpa, parse_sdpa, BlockSign, DEFAULT_STRICTNESS_SHIFT};
use ncs_core::robot::RobotParams;
use ncs_core::sdp::{SdpStatus, SolverConfig};
use ncs_core::{Mat, SymMat};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference() -> BoundMatrices {
    BoundMatrices::reference()
}

fn nalgebra_extreme(m: &DMatrix<f64>, lowest: bool) -> f64 {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    if lowest {
        e.min()
    } else {
        e.max()
    }
}

#[test]
fn robot_export_matches_reviewed_fixture() {
    let problem = build_stability_lmis(&reference().for_control_cycle(0.79e-3).unwrap()).unwrap();
    let text = export_sdpa(&problem, DEFAULT_STRICTNESS_SHIFT);
    assert_eq!(text, include_str!("../fixtures/robot_t0.79ms.dat-s"));
}

#[test]
fn robot_export_round_trips_through_reader() {
    let delta = DEFAULT_STRICTNESS_SHIFT;
    let problem = build_stability_lmis(&reference().for_control_cycle(0.79e-3).unwrap()).unwrap();
    let parsed = parse_sdpa(&export_sdpa(&problem, delta)).unwrap();
    assert_eq!(parsed.m, 168);
    assert_eq!(parsed.block_sizes, vec![12, 12, 12, 12, 8, -24]);
    assert!(parsed.objective.iter().all(|c| *c == 0.0));

    // Coefficient matrices come back bit for bit.
    for (b, block) in problem.constraints.iter().enumerate() {
        let flip = if block.sign == BlockSign::Psd { 1.0 } else { -1.0 };
        let mut expected: Vec<DMatrix<f64>> = vec![DMatrix::zeros(block.dim, block.dim); 169];
        expected[0] = -block.constant.as_dmatrix() * flip;
        if block.sign == BlockSign::Nd {
            expected[0] += DMatrix::identity(block.dim, block.dim) * delta;
        }
        for (i, basis) in &block.terms {
            expected[i + 1] = basis.as_dmatrix() * flip;
        }
        for (k, e) in expected.iter().enumerate() {
            assert_eq!(&parsed.matrices[k][b], e, "F{k}, block {b}");
        }
    }

    let positive = problem.layout.positive_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let x: Vec<f64> = (0..168).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let ours = problem.evaluate(&x).unwrap();
        let theirs = parsed.evaluate(&x).unwrap();
        for (b, block) in problem.constraints.iter().enumerate() {
            let want = match block.sign {
                BlockSign::Psd => ours[b].as_dmatrix().clone(),
                BlockSign::Nd => -ours[b].as_dmatrix() - DMatrix::identity(block.dim, block.dim) * delta,
            };
            assert!((&theirs[b] - want).amax() < 1e-9);
        }
        let diag = &theirs[problem.constraints.len()];
        for (pos, idx) in positive.iter().enumerate() {
            assert!((diag[(pos, pos)] - (x[*idx] - delta)).abs() < 1e-12);
        }
    }
}

#[test]
fn verdicts_at_reference_and_far_control_cycles() {
    let cfg = SolverConfig::default();
    let b = reference();
    assert_eq!(check_stability(&b.for_control_cycle(0.79e-3).unwrap(), &cfg).unwrap().status, SdpStatus::Feasible);
    assert_eq!(check_stability(&b.for_control_cycle(0.75e-3).unwrap(), &cfg).unwrap().status, SdpStatus::Feasible);
    assert_ne!(check_stability(&b.for_control_cycle(0.90e-3).unwrap(), &cfg).unwrap().status, SdpStatus::Feasible);
    assert_ne!(check_stability(&b.for_control_cycle(5e-3).unwrap(), &cfg).unwrap().status, SdpStatus::Feasible);
    assert!(check_stability(&b.with_uniform_delay(1e-9).unwrap(), &cfg).unwrap().is_feasible());
    assert!(check_stability(&b.with_uniform_delay(0.0).unwrap(), &cfg).unwrap().is_feasible());
}

#[test]
fn feasible_points_revalidate_with_independent_eigensolver() {
    let cfg = SolverConfig::default();
    for t in [1e-4, 0.5e-3, 0.79e-3] {
        let bounds = reference().for_control_cycle(t).unwrap();
        let problem = build_stability_lmis(&bounds).unwrap();
        let v = check_stability(&bounds, &cfg).unwrap();
        assert!(v.is_feasible());
        for (block, value) in problem.constraints.iter().zip(problem.evaluate(&v.point).unwrap()) {
            let m = value.as_dmatrix();
            match block.sign {
                BlockSign::Psd => assert!(nalgebra_extreme(m, true) > 0.0, "{}", block.name),
                BlockSign::Nd => assert!(nalgebra_extreme(m, false) < 0.0, "{}", block.name),
            }
        }
        for idx in problem.layout.positive_scalars() {
            assert!(v.point[idx] > 0.0);
        }
    }
}

#[test]
fn bisection_lands_in_reference_window() {
    let b = reference();
    let res = max_delay_bound(
        |t| b.for_control_cycle(t),
        1e-4,
        5e-3,
        1e-5,
        CouplingForm::default(),
        &SolverConfig::default(),
    )
    .unwrap();
    assert!((0.75e-3..=0.84e-3).contains(&res.t_star), "t* = {}", res.t_star);
    assert!(res.is_monotone());
    let first_bad = res.probes.iter().filter(|p| !p.feasible()).map(|p| p.control_cycle).fold(f64::MAX, f64::min);
    assert!(first_bad - res.t_star <= 1e-5 + 1e-15);
}

#[test]
fn bisection_rejects_certified_upper_bracket() {
    let b = reference();
    let err = max_delay_bound(
        |t| b.for_control_cycle(t),
        1e-4,
        2e-4,
        1e-5,
        CouplingForm::default(),
        &SolverConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("already certified"));
}

fn robot_certificate() -> LyapunovCertificate {
    synthesize_lyapunov(&RobotParams::reference().error_dynamics(), &SolverConfig::default()).unwrap()
}

#[test]
fn robot_lyapunov_certificate_matches_reference_matrices() {
    let cert = robot_certificate();
    assert!((0.78..=0.83).contains(&cert.alpha), "alpha = {}", cert.alpha);
    let expected = [[0.9796, 0.1271], [0.1271, 0.2074]];
    for block in [0, 2] {
        for i in 0..2 {
            for j in 0..2 {
                let got = cert.p.get(block + i, block + j);
                assert!((got - expected[i][j]).abs() <= 5e-2, "P[{}][{}] = {got}", block + i, block + j);
            }
        }
    }
    assert!(cert.invariant_violations().is_empty());
    // derived bounds
    assert_eq!(cert.f(), RobotParams::reference().error_dynamics().abs());
    assert!(cert.w().is_nonnegative());
}

#[test]
fn synthesized_bounds_with_vanishing_delays_are_certified() {
    let cert = robot_certificate();
    let bounds = cert.bounds(reference().m, vec![1e-9; 4]).unwrap();
    assert!(check_stability(&bounds, &SolverConfig::default()).unwrap().is_feasible());
}

#[test]
fn nonpositive_offdiagonal_q_dominates_absolute_form() {
    let cert = robot_certificate();
    let q = cert.q.as_dmatrix();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x = DVector::from_fn(4, |_, _| rng.gen_range(-10.0..10.0));
        let xbar = x.abs();
        let lhs = x.dot(&(q * &x));
        let rhs = xbar.dot(&(q * &xbar));
        assert!(lhs >= rhs - 1e-9 * (1.0 + lhs.abs()));
    }
}

/// Random `[[X11, X12, X13], [*, X22, X23], [*, *, X33]] ⪰ 0` as `G Gᵀ`.
fn random_psd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(3 * n, 3 * n, |_, _| rng.gen_range(-1.0..1.0));
    &g * g.transpose()
}

/// `x_i(s) = Σ a sin(ω s + φ)` and its derivative.
struct Smooth {
    terms: Vec<Vec<(f64, f64, f64)>>,
}

impl Smooth {
    fn random(n: usize, rng: &mut impl Rng) -> Self {
        Self {
            terms: (0..n)
                .map(|_| {
                    (0..3).map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(0.1..8.0), rng.gen_range(0.0..6.3))).collect()
                })
                .collect(),
        }
    }

    fn x(&self, s: f64) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.iter().map(|(a, w, p)| a * (w * s + p).sin()).sum()))
    }

    fn dx(&self, s: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|t| t.iter().map(|(a, w, p)| a * w * (w * s + p).cos()).sum()),
        )
    }
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let inner: f64 = (1..intervals).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * f(a) + inner + 0.5 * f(b))
}

#[test]
fn integral_inequality_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let x = random_psd(n, &mut rng);
        let traj = Smooth::random(n, &mut rng);
        let t = rng.gen_range(0.0..5.0);
        let h = rng.gen_range(0.01..2.0);
        let x33 = x.view((2 * n, 2 * n), (n, n)).clone_owned();
        let mut x_no33 = x.clone();
        x_no33.view_mut((2 * n, 2 * n), (n, n)).fill(0.0);
        let (xt, xh) = (traj.x(t), traj.x(t - h));

        let lhs = -trapezoid(|s| traj.dx(s).dot(&(&x33 * traj.dx(s))), t - h, t, 1000);
        let rhs = trapezoid(
            |s| {
                let zeta = DVector::from_iterator(3 * n, xt.iter().chain(xh.iter()).copied().chain(traj.dx(s).iter().copied()));
                zeta.dot(&(&x_no33 * &zeta))
            },
            t - h,
            t,
            1000,
        );
        assert!(rhs - lhs >= -1e-6, "slack {}", rhs - lhs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scaled_bounds_keep_block_structure(scale in 0.1f64..10.0, r in 0.0f64..1e-2) {
        let b = reference();
        let m: Vec<Mat> = b.m.iter().map(|mk| Mat::new(mk.as_dmatrix() * scale).unwrap()).collect();
        let bounds = ncs_core::analyzer::SystemBounds::new(b.f.clone(), b.w.clone(), b.s.clone(), m, vec![r; 4]).unwrap();
        let p = build_stability_lmis(&bounds).unwrap();
        prop_assert_eq!(p.total_scalars(), 168);
        prop_assert!(p.validate().is_empty());
        let zero = p.evaluate(&vec![0.0; 168]).unwrap();
        // at the origin only the constants remain: −S in the decrease block
        let s: &SymMat = &b.s;
        prop_assert!((zero[4].as_dmatrix().view((0, 0), (4, 4)) + s.as_dmatrix()).amax() < 1e-15);
    }
}
