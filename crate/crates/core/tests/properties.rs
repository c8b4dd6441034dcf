mod common;

use clm_design::approx::{lift_one_optimize, lift_one_profile, lifted_weights, maximize_profile, verify_optimality, LiftOneOptions};
use clm_design::ew_bayes::{self, BayesSession, PriorSpec};
use clm_design::exact::{exchange_optimize, exchange_profile};
use clm_design::fisher::point_information;
use clm_design::grid::AxisSpec;
use clm_design::linalg::numerical_rank;
use clm_design::minimal::{self, Certified, ScanSpec};
use clm_design::quadrature::TensorRule;
use clm_design::{fixtures, Allocation, DesignProblem, InfoCoefficients, LinkFunction, ModelSpec};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn link_of(k: usize) -> LinkFunction {
    LinkFunction::ALL[k % 5]
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        max_global_rejects: 100_000,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn link_values_inside_unit_interval_with_matching_derivative(k in 0usize..5, eta in -5.0f64..5.0) {
        let link = link_of(k);
        let v = link.inverse_link(eta).unwrap();
        prop_assert!(v > 0.0 && v < 1.0);
        let h = 1e-5;
        // difference whichever tail keeps the most digits
        let fd = if link.cdf_unclamped(eta) <= 0.5 {
            (link.cdf_unclamped(eta + h) - link.cdf_unclamped(eta - h)) / (2.0 * h)
        } else {
            (link.survival_unclamped(eta - h) - link.survival_unclamped(eta + h)) / (2.0 * h)
        };
        let g = link.inverse_link_derivative(eta).unwrap();
        prop_assert!(rel(g, fd) < 1e-5, "{link} at {eta}: {g} vs {fd}");
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn point_quantities_are_consistent(seed in any::<u64>(), k in 0usize..5, j in 2usize..=5, d in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 2);
        prop_assume!(found.is_some());
        let (model, problem) = found.unwrap();
        for i in 0..model.points() {
            let q = model.point_quantities(i).unwrap();
            prop_assert!(q.gamma.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(q.pi.iter().all(|&p| p > 0.0));
            prop_assert!((q.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(q.g.iter().all(|&g| g > 0.0));
            let co = &q.coefficients;
            for t in 1..j {
                let expect = co.u[t - 1] - co.b_at(t) - co.b_at(t + 1);
                prop_assert!((co.c[t - 1] - expect).abs() <= 1e-12 * co.u[t - 1]);
            }
            let sum_c: f64 = co.c.iter().sum();
            let sum_u2b: f64 = (1..j).map(|t| co.u[t - 1] - 2.0 * co.b_at(t)).sum();
            prop_assert!(rel(co.e, sum_c) < 1e-9);
            prop_assert!(rel(co.e, sum_u2b) < 1e-9);
            // |A_{i3}| = Π g² / Π π
            let closed = q.g.iter().map(|g| g * g).product::<f64>() / q.pi.iter().product::<f64>();
            prop_assert!(rel(co.a3_det(), closed) < 1e-8);
            let a = problem.point_matrix(i);
            // rank J−1: a clear spectral gap always, and the fixed 1e-9
            // threshold wherever the point is not deep in a tail
            let mut sv: Vec<f64> = a.clone().singular_values().iter().cloned().collect();
            sv.sort_by(|x, y| y.total_cmp(x));
            prop_assert!(sv[j - 2] >= 1e6 * sv[j - 1], "{sv:?}");
            if q.pi.iter().all(|&p| p >= 1e-6) {
                prop_assert_eq!(numerical_rank(a), j - 1);
            }
            let x: Vec<f64> = model.design.row(i).iter().cloned().collect();
            let oracle = score_information(&q, &x);
            let scale = max_abs(&oracle);
            prop_assert!(max_abs(&(a - &oracle)) <= 1e-9 * scale);
        }
    }

    #[test]
    fn log_objective_is_concave(seed in any::<u64>(), k in 0usize..5, j in 2usize..=4, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 3);
        prop_assume!(found.is_some());
        let (_, problem) = found.unwrap();
        let p = random_simplex(&mut rng, problem.points());
        let q = random_simplex(&mut rng, problem.points());
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let (lp, lq, lm) = (problem.log_det(&p), problem.log_det(&q), problem.log_det(&mid));
        prop_assume!(lp.is_finite() && lq.is_finite());
        prop_assert!(lm >= 0.5 * (lp + lq) - 1e-9);
    }

    #[test]
    fn determinant_scales_with_total_runs(seed in any::<u64>(), k in 0usize..5, j in 2usize..=4, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 3);
        prop_assume!(found.is_some());
        let (_, problem) = found.unwrap();
        let counts: Vec<u64> = (0..problem.points()).map(|_| rng.random_range(1..20u64)).collect();
        let total: u64 = counts.iter().sum();
        let raw = problem.det(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
        let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let scaled = (total as f64).powi(problem.parameters() as i32) * problem.det(&p);
        prop_assert!(rel(raw, scaled) < 1e-9);
        prop_assert!(rel(problem.objective(&Allocation::exact(&counts)), problem.det(&p)) < 1e-9);
    }

    #[test]
    fn positive_determinant_iff_full_rank_support(seed in any::<u64>(), k in 0usize..5, d in 1usize..=3, mask in 1u32..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 6;
        let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..m * d).map(|_| rng.random_range(-1..=1) as f64).collect();
        let model = ModelSpec::new(link_of(k), beta, vec![-0.5, 0.7], DMatrix::from_row_slice(m, d, &x));
        let problem = DesignProblem::new_unchecked(&model).unwrap();
        let support: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut w = vec![0.0; m];
        for &i in &support {
            w[i] = 1.0 / support.len() as f64;
        }
        prop_assert_eq!(problem.det(&w) > 0.0, problem.support_has_full_rank(&support));
        prop_assert_eq!(problem.objective(&Allocation::approximate(w).unwrap()) > 0.0, problem.support_has_full_rank(&support));
    }

    #[test]
    fn scaling_point_coefficients_scales_its_matrix(seed in any::<u64>(), k in 0usize..5, j in 2usize..=5, d in 1usize..=3, lambda in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 1);
        prop_assume!(found.is_some());
        let (model, problem) = found.unwrap();
        let x: Vec<f64> = model.design.row(0).iter().cloned().collect();
        let a = point_information(&problem.coefficients()[0], &x);
        let b = point_information(&problem.coefficients()[0].scaled(lambda), &x);
        prop_assert!(max_abs(&(b - a * lambda)) <= 1e-14 * lambda * max_abs(problem.point_matrix(0)));
    }

    #[test]
    fn relabeling_points_leaves_determinant_unchanged(seed in any::<u64>(), k in 0usize..5, j in 2usize..=4, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 3);
        prop_assume!(found.is_some());
        let (model, problem) = found.unwrap();
        let m = model.points();
        let p = random_simplex(&mut rng, m);
        let mut order: Vec<usize> = (0..m).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let design = DMatrix::from_fn(m, d, |r, c| model.design[(order[r], c)]);
        let permuted = DesignProblem::new(&ModelSpec::new(model.link, model.beta.clone(), model.theta.clone(), design)).unwrap();
        let q: Vec<f64> = order.iter().map(|&i| p[i]).collect();
        prop_assert!(rel(problem.det(&p), permuted.det(&q)) < 1e-10);
    }
}

proptest! {
    #![proptest_config(config(96))]

    #[test]
    fn lift_one_profile_matches_direct_determinants(seed in any::<u64>(), k in 0usize..5, j in 2usize..=5, d in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 2);
        prop_assume!(found.is_some());
        let (_, problem) = found.unwrap();
        let p = random_simplex(&mut rng, problem.points());
        let i = rng.random_range(0..problem.points());
        let poly = lift_one_profile(&problem, &p, i).unwrap();
        let scale = problem.det(&p);
        for _ in 0..25 {
            let z: f64 = rng.random();
            let direct = problem.det(&lifted_weights(&p, i, z));
            // the profile vanishes at z = 1; near there compare on the design's scale
            let err = (poly.eval(z) - direct).abs();
            prop_assert!(err <= 1e-7 * direct.abs().max(1e-3 * scale), "z={z}: {} vs {direct}", poly.eval(z));
        }
        prop_assert!(rel(poly.eval(p[i]), scale) < 1e-7);
    }

    #[test]
    fn profile_maximizer_beats_dense_grid(seed in any::<u64>(), k in 0usize..5, j in 2usize..=4, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 2);
        prop_assume!(found.is_some());
        let (_, problem) = found.unwrap();
        let p = random_simplex(&mut rng, problem.points());
        let i = rng.random_range(0..problem.points());
        let poly = lift_one_profile(&problem, &p, i).unwrap();
        let z = maximize_profile(&poly);
        let best = (0..=10_000).map(|s| poly.eval(s as f64 * 1e-4)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(poly.eval(z) >= best - 1e-12 * best.abs());
    }

    #[test]
    fn lift_one_output_is_certified_and_improves_start(seed in any::<u64>(), k in 0usize..5, j in 2usize..=4, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 3);
        prop_assume!(found.is_some());
        let (_, problem) = found.unwrap();
        let start = vec![1.0 / problem.points() as f64; problem.points()];
        let res = lift_one_optimize(&problem, None, &LiftOneOptions::default()).unwrap();
        prop_assert!(res.objective >= problem.det(&start));
        prop_assert!(res.converged);
        let cert = verify_optimality(&problem, &res.p, 1e-6).unwrap();
        prop_assert!(cert.passed, "{cert:?}");
    }

    #[test]
    fn exchange_profile_recovers_current_allocation(seed in any::<u64>(), k in 0usize..5, j in 2usize..=4, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 3);
        prop_assume!(found.is_some());
        let (_, problem) = found.unwrap();
        let counts: Vec<f64> = (0..problem.points()).map(|_| rng.random_range(2..12u32) as f64).collect();
        let (i, jj) = (0, problem.points() - 1);
        let prof = exchange_profile(&problem, &counts, i, jj).unwrap();
        prop_assert!(rel(prof.eval(counts[i]), problem.det(&counts)) < 1e-9);
    }

    #[test]
    fn exchange_never_ends_below_its_start(seed in any::<u64>(), k in 0usize..5, j in 2usize..=4, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = random_problem(&mut rng, link_of(k), d, j, d + 3);
        prop_assume!(found.is_some());
        let (_, problem) = found.unwrap();
        let init: Vec<u64> = (0..problem.points()).map(|_| rng.random_range(1..8u64)).collect();
        let n: u64 = init.iter().sum();
        let res = exchange_optimize(&problem, n, Some(&init), seed).unwrap();
        prop_assert_eq!(res.n.iter().sum::<u64>(), n);
        prop_assert!(res.log_objective >= problem.log_objective(&Allocation::exact(&init)));
    }
}

#[test]
fn optimum_value_does_not_depend_on_seed() {
    for name in ["odor", "wine", "toxicity"] {
        let (model, _) = fixtures::load(name).unwrap();
        let problem = DesignProblem::new(&model).unwrap();
        let values: Vec<f64> = (0..10)
            .map(|seed| {
                let opts = LiftOneOptions { seed, ..LiftOneOptions::default() };
                lift_one_optimize(&problem, None, &opts).unwrap().objective
            })
            .collect();
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / max <= 1e-9, "{name}: {values:?}");
    }
}

fn odor_problem() -> DesignProblem {
    DesignProblem::new(&fixtures::odor().0).unwrap()
}

/// Coefficients of the degree-`deg` polynomial through `(z, f(z))`,
/// `z = 0..=deg`, by a dense solve.
fn interpolate(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let v = DMatrix::from_fn(n, n, |r, c| (r as f64).powi(c as i32));
    let rhs = nalgebra::DVector::from_column_slice(values);
    v.lu().solve(&rhs).unwrap().iter().cloned().collect()
}

#[test]
fn exchange_profile_matches_direct_determinants_on_odor() {
    let problem = odor_problem();
    let counts = [10.0, 10.0, 10.0, 10.0];
    let prof = exchange_profile(&problem, &counts, 0, 2).unwrap();
    for z in 0..=20 {
        let n = [z as f64, 10.0, 20.0 - z as f64, 10.0];
        let direct = problem.det(&n);
        assert!(rel(prof.eval(z as f64), direct) < 1e-7, "z={z}");
    }
}

#[test]
fn exchange_profile_coefficients_match_direct_fit() {
    let problem = odor_problem();
    let j = problem.categories();
    let counts = [7.0, 5.0, 3.0, 9.0];
    let (i, jj) = (1, 3);
    let budget = counts[i] + counts[jj];
    let prof = exchange_profile(&problem, &counts, i, jj).unwrap();
    let values: Vec<f64> = (0..=j)
        .map(|z| {
            let mut n = counts;
            n[i] = z as f64;
            n[jj] = budget - z as f64;
            problem.det(&n)
        })
        .collect();
    let fit = interpolate(&values);
    let scale = prof.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (a, b) in prof.c.iter().zip(&fit) {
        assert!((a - b).abs() <= 1e-7 * scale, "{:?} vs {fit:?}", prof.c);
    }
}

#[test]
fn exchange_profile_vanishing_terms_follow_support_rank() {
    // d = 2, J = 3: the other points alone carry only point 3's two runs
    let problem = odor_problem();
    let counts = [4.0, 0.0, 5.0, 2.0];
    let (i, jj) = (0, 2);
    let budget = counts[i] + counts[jj];
    let prof = exchange_profile(&problem, &counts, i, jj).unwrap();
    let scale = prof.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    // all runs on the receiving point leaves support {i, 3}: rank 2 < 3
    assert!(!problem.support_has_full_rank(&[i, 3]));
    assert!(prof.eval(budget).abs() <= 1e-9 * scale * budget.powi(3));
    // all runs on the donor leaves support {j, 3}: constant term vanishes
    assert!(!problem.support_has_full_rank(&[jj, 3]));
    assert!(prof.c[0].abs() <= 1e-12 * scale);
    // the leading coefficient itself does not vanish here
    assert!(prof.c[j_of(&problem)].abs() > 1e-6 * scale);
}

fn j_of(problem: &DesignProblem) -> usize {
    problem.categories()
}

#[test]
fn duplicated_points_give_constant_exchange_profile() {
    let model = ModelSpec::new(
        LinkFunction::Logit,
        vec![0.7],
        vec![-0.5, 0.8],
        DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 1.0]),
    );
    let problem = DesignProblem::new(&model).unwrap();
    let prof = exchange_profile(&problem, &[4.0, 3.0, 5.0], 1, 2).unwrap();
    for s in 1..prof.c.len() {
        assert!(prof.c[s].abs() <= 1e-9 * prof.c[0], "{:?}", prof.c);
    }
}

// ---- minimally supported designs ----

#[test]
fn two_point_polynomial_matches_direct_determinants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let j = 3 + trial % 3;
        let (_, problem) = valid_problem(&mut rng, link_of(trial), 1, j, 4);
        let c = minimal::two_point_polynomial_d1(&problem, 0, 2).unwrap();
        for s in 0..=1000 {
            let z = s as f64 * 1e-3;
            let mut w = vec![0.0; 4];
            w[0] = z;
            w[2] = 1.0 - z;
            let direct = problem.det(&w);
            let rec: f64 = c
                .iter()
                .enumerate()
                .map(|(k, ck)| ck * z.powi((j - 1 - k) as i32) * (1.0 - z).powi(k as i32 + 1))
                .sum();
            let peak = c.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (j as f64).powi(j as i32);
            assert!((rec - direct).abs() <= 1e-7 * direct.abs().max(1e-3 * peak), "trial {trial} z={z}: {rec} vs {direct}");
        }
    }
}

#[test]
fn pair_polynomial_end_coefficients_follow_point_quantities() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..40 {
        let j = 3 + trial % 4;
        let (model, problem) = valid_problem(&mut rng, link_of(trial), 1, j, 3);
        let c = minimal::two_point_polynomial_d1(&problem, 0, 1).unwrap();
        let q0 = model.point_quantities(0).unwrap();
        let q1 = model.point_quantities(1).unwrap();
        let dx2 = (model.design[(0, 0)] - model.design[(1, 0)]).powi(2);
        let part = |q: &clm_design::PointQuantities| q.g.iter().map(|g| g * g).product::<f64>() / q.pi.iter().product::<f64>();
        let first = q1.coefficients.e * part(&q0) * dx2;
        let last = q0.coefficients.e * part(&q1) * dx2;
        assert!(rel(c[0], first) < 1e-9, "trial {trial}: {} vs {first}", c[0]);
        assert!(rel(c[j - 2], last) < 1e-9, "trial {trial}: {} vs {last}", c[j - 2]);
    }
}

#[test]
fn duplicate_points_have_zero_pair_polynomial() {
    let model = ModelSpec::new(
        LinkFunction::Probit,
        vec![0.4],
        vec![-0.5, 0.8],
        DMatrix::from_row_slice(3, 1, &[0.3, 0.3, -1.0]),
    );
    let problem = DesignProblem::new(&model).unwrap();
    let dup = minimal::two_point_polynomial_d1(&problem, 0, 1).unwrap();
    let distinct = minimal::two_point_polynomial_d1(&problem, 0, 2).unwrap();
    let scale = distinct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(dup.iter().all(|v| v.abs() <= 1e-12 * scale), "{dup:?}");
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn two_point_weights_match_grid_search(c1 in 0.05f64..20.0, c2 in 0.05f64..20.0) {
        let (p1, p2) = minimal::two_point_weights(c1, c2);
        prop_assert!((p1 + p2 - 1.0).abs() < 1e-14);
        let f = |p: f64| p * (1.0 - p) * (c1 * p + c2 * (1.0 - p));
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for s in 0..=100_000 {
            let p = s as f64 * 1e-5;
            if f(p) > best {
                best = f(p);
                arg = p;
            }
        }
        prop_assert!((p1 - arg).abs() <= 1e-5, "{p1} vs {arg}");
    }

    #[test]
    fn three_point_weights_match_simplex_search(w1 in 0.1f64..10.0, w2 in 0.1f64..10.0, w3 in 0.1f64..10.0) {
        let w = [w1, w2, w3];
        let p = minimal::three_point_weights(w);
        let oracle = three_point_search(w, 1e-3);
        for t in 0..3 {
            prop_assert!((p[t] - oracle[t]).abs() <= 1e-6, "{p:?} vs {oracle:?}");
        }
        // stationarity
        let r = minimal::three_point_residuals(w, p);
        let scale = w.iter().cloned().fold(0.0, f64::max);
        prop_assert!(r[0].abs() < 1e-9 * scale && r[1].abs() < 1e-9 * scale, "{r:?}");
        // larger w, larger weight
        for a in 0..3 {
            for b in 0..3 {
                if w[a] >= w[b] {
                    prop_assert!(p[a] >= p[b] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn cubic_root_exceeds_one_and_solves_cubic(a in 0.1f64..10.0, b in 0.1f64..10.0, c in 0.1f64..10.0) {
        let mut w = [a, b, c];
        w.sort_by(|x, y| y.total_cmp(x));
        prop_assume!(w[0] - w[1] > 1e-6 * w[0] && w[1] - w[2] > 1e-6 * w[0]);
        let co = minimal::three_point_cubic(w[0], w[1], w[2]);
        let y = minimal::cubic_root_above_one(&co).unwrap();
        prop_assert!(y > 1.0);
        let val = co[0] + co[1] * y + co[2] * y * y + co[3] * y * y * y;
        prop_assert!(val.abs() <= 1e-9 * co[0].abs(), "{val}");
    }
}

fn random_three_point_problem(rng: &mut ChaCha8Rng, link: LinkFunction) -> DesignProblem {
    valid_problem(rng, link, 2, 3, 3).1
}

#[test]
fn three_point_closed_form_matches_lift_one_on_200_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200 {
        let problem = random_three_point_problem(&mut rng, link_of(trial));
        let closed = minimal::three_point_design_d2j3(&problem, 0, 1, 2).unwrap();
        let res = lift_one_optimize(&problem, None, &LiftOneOptions::default()).unwrap();
        for t in 0..3 {
            assert!((closed[t] - res.p[t]).abs() <= 1e-6, "trial {trial}: {closed:?} vs {:?}", res.p);
        }
    }
}

#[test]
fn uniform_is_optimal_exactly_when_w_are_equal() {
    // β = 0 makes all points identical in distribution, so w₁ = w₂ = w₃
    let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let flat = DesignProblem::new(&ModelSpec::new(LinkFunction::Logit, vec![0.0, 0.0], vec![-0.4, 1.1], x.clone())).unwrap();
    let w: Vec<f64> = flat.coefficients().iter().map(InfoCoefficients::w).collect();
    assert!(w.iter().all(|v| rel(*v, w[0]) < 1e-9));
    let uniform = [1.0 / 3.0; 3];
    assert!(verify_optimality(&flat, &uniform, 1e-6).unwrap().passed);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..50 {
        let problem = random_three_point_problem(&mut rng, link_of(trial));
        let w: Vec<f64> = problem.coefficients().iter().map(InfoCoefficients::w).collect();
        let ratio = w.iter().cloned().fold(f64::MIN, f64::max) / w.iter().cloned().fold(f64::MAX, f64::min);
        let passed = verify_optimality(&problem, &uniform, 1e-6).unwrap().passed;
        assert_eq!(passed, ratio <= 1.0 + 1e-9, "trial {trial}: ratio {ratio}");
    }
}

fn gradient_at(problem: &DesignProblem, weights: &[f64]) -> Vec<f64> {
    problem.gradient(weights).unwrap().1
}

#[test]
fn certified_pairs_agree_with_lift_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut certified = 0;
    for trial in 0..60 {
        let m = 3 + trial % 4;
        let (_, problem) = valid_problem(&mut rng, link_of(trial), 1, 3, m);
        let best = lift_one_optimize(&problem, None, &LiftOneOptions::default()).unwrap();
        for cand in minimal::enumerate_minimal(&problem).unwrap() {
            let full = cand.allocation(m).weights;
            // the certificate's two sides are the partial derivatives
            let grad = gradient_at(&problem, &full);
            let i = cand.support[0];
            for cond in &cand.conditions {
                assert!(rel(cond.lhs, grad[cond.point]) < 1e-6, "lhs {} vs {}", cond.lhs, grad[cond.point]);
                assert!(rel(cond.rhs, grad[i]) < 1e-6, "rhs {} vs {}", cond.rhs, grad[i]);
            }
            if cand.certified_optimal == Certified::Yes {
                certified += 1;
                for (a, b) in full.iter().zip(&best.p) {
                    assert!((a - b).abs() <= 1e-4, "trial {trial}: {full:?} vs {:?}", best.p);
                }
            }
        }
    }
    assert!(certified > 5, "too few certified pairs exercised: {certified}");
}

#[test]
fn certified_triples_agree_with_lift_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut certified = 0;
    for trial in 0..60 {
        let m = 4 + trial % 3;
        let (_, problem) = valid_problem(&mut rng, link_of(trial), 2, 3, m);
        let best = lift_one_optimize(&problem, None, &LiftOneOptions::default()).unwrap();
        for cand in minimal::enumerate_minimal(&problem).unwrap() {
            let full = cand.allocation(m).weights;
            let grad = gradient_at(&problem, &full);
            let i = cand.support[0];
            for cond in &cand.conditions {
                assert!(rel(cond.lhs, grad[cond.point]) < 1e-6, "lhs {} vs {}", cond.lhs, grad[cond.point]);
                assert!(rel(cond.rhs, grad[i]) < 1e-6, "rhs {} vs {}", cond.rhs, grad[i]);
            }
            if cand.certified_optimal == Certified::Yes {
                certified += 1;
                for (a, b) in full.iter().zip(&best.p) {
                    assert!((a - b).abs() <= 1e-4, "trial {trial}: {full:?} vs {:?}", best.p);
                }
            }
        }
    }
    assert!(certified > 5, "too few certified triples exercised: {certified}");
}

fn three_level(beta: f64) -> ModelSpec {
    ModelSpec::new(
        LinkFunction::Logit,
        vec![beta],
        vec![-1.0, 1.0],
        DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.0]),
    )
}

#[test]
fn symmetric_three_level_design_splits_between_the_ends() {
    let table = minimal::region_scan(
        &three_level(0.0),
        &ScanSpec {
            free: vec![AxisSpec { name: "beta1".into(), from: 0.0, to: 0.0, step: 0.1 }],
            compare: vec![],
        },
        0,
    )
    .unwrap();
    let row = &table.rows[0];
    assert!((row.weights[0] - 0.5).abs() < 1e-6 && (row.weights[2] - 0.5).abs() < 1e-6);
    assert_eq!(row.zero_pattern, 0b010);
    let problem = DesignProblem::new(&three_level(0.0)).unwrap();
    let cand = minimal::check_two_point_optimal_d1j3(&problem, 0, 2).unwrap();
    assert!((cand.weights[0] - 0.5).abs() < 1e-12);
}

#[test]
fn small_slope_certifies_the_end_pair() {
    for beta in [-0.3, -0.1, 0.1, 0.3] {
        let problem = DesignProblem::new(&three_level(beta)).unwrap();
        let cand = minimal::check_two_point_optimal_d1j3(&problem, 0, 2).unwrap();
        assert_eq!(cand.certified_optimal, Certified::Yes, "beta {beta}");
    }
}

#[test]
fn zero_slopes_give_equal_w() {
    let (odor, _) = fixtures::odor();
    let table = minimal::region_scan(
        &odor,
        &ScanSpec {
            free: vec![
                AxisSpec { name: "beta1".into(), from: 0.0, to: 0.0, step: 1.0 },
                AxisSpec { name: "beta2".into(), from: 0.0, to: 0.0, step: 1.0 },
            ],
            compare: vec![],
        },
        0,
    )
    .unwrap();
    let w = &table.rows[0].w;
    assert!(w.iter().all(|v| (v - w[0]).abs() <= 1e-10 * w[0]), "{w:?}");
}

#[test]
fn wine_uniform_efficiency_drops_for_large_slopes() {
    let (wine, _) = fixtures::wine();
    let table = minimal::region_scan(
        &wine,
        &ScanSpec {
            free: vec![
                AxisSpec { name: "beta1".into(), from: 4.0, to: 4.0, step: 1.0 },
                AxisSpec { name: "beta2".into(), from: 4.0, to: 4.0, step: 1.0 },
            ],
            compare: vec![Allocation::uniform(4)],
        },
        0,
    )
    .unwrap();
    let eff = table.rows[0].efficiencies[0];
    assert!(eff <= 0.80, "{eff}");
}

// ---- EW and Bayes ----

fn odor_prior() -> PriorSpec {
    PriorSpec::new(fixtures::ODOR_PRIOR_BETA.to_vec(), fixtures::ODOR_PRIOR_THETA.to_vec())
}

#[test]
fn expected_c_and_e_match_direct_quadrature() {
    let (model, _) = fixtures::odor();
    let prior = odor_prior();
    let ex = ew_bayes::ew_expectations(&model, &prior).unwrap();
    assert!(ex.rejected_mass.abs() < 1e-12);
    let rule = TensorRule::new(&prior.bounds(), prior.nodes);
    let m = model.points();
    let mut c = vec![[0.0; 2]; m];
    let mut e = vec![0.0; m];
    for k in 0..rule.len() {
        let (omega, wt) = rule.node(k);
        let at = model.with_parameters(omega[..2].to_vec(), omega[2..].to_vec());
        for i in 0..m {
            let q = at.point_quantities(i).unwrap();
            c[i][0] += wt * q.c()[0];
            c[i][1] += wt * q.c()[1];
            e[i] += wt * q.e();
        }
    }
    for i in 0..m {
        let co = &ex.coefficients[i];
        assert!(rel(co.c[0], c[i][0]) < 1e-10 && rel(co.c[1], c[i][1]) < 1e-10);
        assert!(rel(co.e, e[i]) < 1e-10);
        // derived identities hold exactly as computed
        assert_eq!(co.c[0], co.u[0] - co.b[0]);
        assert_eq!(co.c[1], co.u[1] - co.b[0]);
    }
}

#[test]
fn quadrature_is_converged_at_ten_nodes() {
    // odor: the published prior box; wine: its two slopes varied; toxicity:
    // all three parameters varied. Wider tensor boxes are out of reach at
    // 20 nodes per axis.
    let (odor, _) = fixtures::odor();
    let (wine, _) = fixtures::wine();
    let (tox, _) = fixtures::toxicity();
    let cases = [
        ("odor", odor, odor_prior()),
        (
            "wine",
            wine.clone(),
            PriorSpec::new(
                vec![[0.75, 1.75], [0.26, 1.26]],
                wine.theta.iter().map(|&t| [t, t]).collect(),
            ),
        ),
        (
            "toxicity",
            tox,
            PriorSpec::new(vec![[-0.02, -0.015]], vec![[-9.3, -8.3], [-5.84, -4.84]]),
        ),
    ];
    for (name, model, mut prior) in cases {
        prior.nodes = 10;
        let coarse = ew_bayes::ew_expectations(&model, &prior).unwrap();
        prior.nodes = 20;
        let fine = ew_bayes::ew_expectations(&model, &prior).unwrap();
        for (a, b) in coarse.coefficients.iter().zip(&fine.coefficients) {
            for (x, y) in a.u.iter().zip(&b.u).chain(a.b.iter().zip(&b.b)) {
                assert!(rel(*x, *y) < 1e-8, "{name}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn point_mass_prior_reduces_to_local_design() {
    let (model, refs) = fixtures::odor();
    let local = lift_one_optimize(&DesignProblem::new(&model).unwrap(), None, &LiftOneOptions::default()).unwrap();
    let mut prior = PriorSpec::point_mass(&model);
    let ew = ew_bayes::ew_optimize(&model, &prior, &LiftOneOptions::default()).unwrap();
    for (a, b) in ew.design.p.iter().zip(&local.p) {
        assert!((a - b).abs() <= 1e-6);
    }
    prior.mc_samples = 50;
    let session = BayesSession::new(&model, &prior).unwrap();
    let bayes = ew_bayes::bayes_optimize(&session, None, 0).unwrap();
    assert!(bayes.converged && bayes.monotone);
    for (a, b) in bayes.p.iter().zip(&local.p) {
        assert!((a - b).abs() <= 1e-5, "{:?} vs {:?}", bayes.p, local.p);
    }
    assert!(refs.optimal.is_some());
}

#[test]
fn ew_matches_monte_carlo_expectations_for_two_categories() {
    let design = DMatrix::from_row_slice(5, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 0.0, 0.0]);
    let model = ModelSpec::new(LinkFunction::Logit, vec![-1.0, 0.5], vec![-0.5], design.clone());
    let prior = PriorSpec::new(vec![[-2.0, 0.0], [0.0, 1.0]], vec![[-1.5, 0.5]]);
    let ew = ew_bayes::ew_optimize(&model, &prior, &LiftOneOptions::default()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let bounds = prior.bounds();
    let m = model.points();
    let mut u = vec![0.0; m];
    let samples = 1_000_000;
    for _ in 0..samples {
        let w: Vec<f64> = bounds.iter().map(|&[lo, hi]| rng.random_range(lo..hi)).collect();
        let at = model.with_parameters(w[..2].to_vec(), w[2..].to_vec());
        for (i, acc) in u.iter_mut().enumerate() {
            *acc += at.point_quantities(i).unwrap().u()[0];
        }
    }
    let coefs = u.iter().map(|v| InfoCoefficients::from_u_b(vec![v / samples as f64], vec![])).collect();
    let mc = DesignProblem::from_coefficients(design, coefs).unwrap();
    let best = lift_one_optimize(&mc, None, &LiftOneOptions::default()).unwrap();
    for (a, b) in ew.design.p.iter().zip(&best.p) {
        assert!((a - b).abs() <= 2e-3, "{:?} vs {:?}", ew.design.p, best.p);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn bayes_objective_is_concave_along_segments(seed in any::<u64>()) {
        let (model, _) = fixtures::odor();
        let mut prior = odor_prior();
        prior.mc_samples = 300;
        let session = BayesSession::new(&model, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_simplex(&mut rng, 4);
        let q = random_simplex(&mut rng, 4);
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let (vp, vq, vm) = (
            ew_bayes::bayes_objective(&session, &p).value,
            ew_bayes::bayes_objective(&session, &q).value,
            ew_bayes::bayes_objective(&session, &mid).value,
        );
        prop_assert!(vm >= 0.5 * (vp + vq) - 1e-9);
    }
}

#[test]
fn robustness_efficiencies_are_bounded_and_self_efficiency_is_one() {
    let (model, _) = fixtures::odor();
    let local = lift_one_optimize(&DesignProblem::new(&model).unwrap(), None, &LiftOneOptions::default()).unwrap();
    let designs = vec![
        ("local".to_string(), local.allocation()),
        ("uniform".to_string(), Allocation::uniform(4)),
    ];
    let point = |name: &str, v: f64| AxisSpec { name: name.into(), from: v, to: v, step: 1.0 };
    let at_estimate = [point("beta1", -2.44), point("beta2", 1.09)];
    let report = ew_bayes::robustness_grid(&designs, &at_estimate, &model, &LiftOneOptions::default()).unwrap();
    assert!((report.records[0].efficiencies[0] - 1.0).abs() < 1e-9);

    let axes = vec![
        AxisSpec { name: "beta1".into(), from: -3.0, to: -1.0, step: 0.5 },
        AxisSpec { name: "beta2".into(), from: 0.0, to: 2.0, step: 0.5 },
        AxisSpec { name: "theta1".into(), from: -4.0, to: -2.0, step: 1.0 },
    ];
    let report = ew_bayes::robustness_grid(&designs, &axes, &model, &LiftOneOptions::default()).unwrap();
    assert_eq!(report.records.len() + report.skipped, 75);
    for r in &report.records {
        for &e in &r.efficiencies {
            assert!((0.0..=1.0 + 1e-9).contains(&e), "{e}");
        }
    }
}
