use imop::datagen::{self, PortfolioData};
use imop::linalg::{dist_sq, norm};
use imop::loss::{nearest, sampled_efficient_points, surrogate_loss};
use imop::model::{MopInstance, Observation};
use imop::oracle::{closed_form_1d, closed_form_ideal_loss_1d, grid_pws};
use imop::qp::EnumOptions;
use imop::scalarize::{even_grid, sample_simplex, solve_pws, solve_pws_with, PwsOptions, WeightVector};
use imop::update::{algorithm1_update, solve_update_fixed_k};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mqp_c() -> MopInstance<f64> {
    datagen::mqp_objective_instance().unwrap()
}

fn mqp_b() -> MopInstance<f64> {
    datagen::mqp_rhs_instance().unwrap()
}

fn one_d() -> MopInstance<f64> {
    datagen::quadratic_1d_instance([2.0, 4.0]).unwrap()
}

fn weight(u: f64) -> WeightVector<f64> {
    WeightVector::new(vec![u, 1.0 - u], 1e-3).unwrap()
}

/// Uniform points of the region, by rejection from `[0, coord_upper]`.
fn random_feasible(inst: &MopInstance<f64>, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ub = inst.coord_upper().to_vec();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: Vec<f64> = ub.iter().map(|&u| rng.random_range(0.0..=u)).collect();
        if inst.is_feasible(&x, 1e-12) {
            out.push(x);
        }
    }
    out
}

fn dominated_by_any(inst: &MopInstance<f64>, x: &[f64], others: &[Vec<f64>]) -> bool {
    let fx = inst.objective_values(x);
    others.iter().any(|z| {
        let fz = inst.objective_values(z);
        fz.iter().zip(&fx).all(|(a, b)| *a <= b + 1e-9) && fz.iter().zip(&fx).any(|(a, b)| *a < b - 1e-9)
    })
}

#[test]
fn substitute_is_pure() {
    let inst = mqp_c();
    let theta = [2.0, 2.5, -3.0, -1.5];
    let a = inst.substitute(&theta).unwrap();
    let b = inst.substitute(&theta).unwrap();
    assert_eq!(a, b);
    assert_eq!(inst, mqp_c());
}

#[test]
fn recorded_bound_holds_on_random_points() {
    let portfolio = datagen::portfolio_instance(&PortfolioData::table()).unwrap();
    let rhs_top = mqp_b().substitute(&[10.0, 10.0]).unwrap();
    for inst in [mqp_c(), mqp_b(), rhs_top, one_d(), portfolio] {
        let b = inst.bound();
        for x in random_feasible(&inst, 1000, 3) {
            assert!(norm(&x) <= b + 1e-9, "‖x‖ = {} > B = {b}", norm(&x));
        }
    }
}

#[test]
fn pws_independent_of_enumeration_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for inst in [mqp_c(), mqp_b(), one_d()] {
        for _ in 0..30 {
            let w = WeightVector::new(sample_simplex(2, &mut rng), 1e-3).unwrap();
            let base = solve_pws(&inst, &w).unwrap();
            let mut order: Vec<usize> = (0..inst.m()).collect();
            order.shuffle(&mut rng);
            let opts = PwsOptions { enumeration: EnumOptions { order: Some(order), ..Default::default() }, ..Default::default() };
            let other = solve_pws_with(&inst, &w, &opts).unwrap();
            assert!(dist_sq(&base.x, &other.x).sqrt() < 1e-8);
        }
    }
}

#[test]
fn pws_points_are_undominated() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in [mqp_c(), mqp_b()] {
        let cloud = random_feasible(&inst, 10_000, 17);
        for _ in 0..20 {
            let u = rng.random_range(0.01..0.99);
            let x = solve_pws(&inst, &weight(u)).unwrap().x;
            assert!(!dominated_by_any(&inst, &x, &cloud), "u = {u}, x = {x:?}");
        }
    }
}

#[test]
fn noiseless_stream_decisions_are_undominated() {
    let inst = mqp_c();
    let cloud = random_feasible(&inst, 10_000, 23);
    let stream = datagen::gen_mqp_stream::<f64>(50, 0.0, 9).unwrap();
    for x in &stream.decisions {
        assert!(!dominated_by_any(&inst, x, &cloud));
    }
}

#[test]
fn stream_weight_mean_near_half() {
    let stream = datagen::gen_mqp_stream::<f64>(1000, 0.5, 2024).unwrap();
    let mean = stream.weights.iter().map(|w| w.as_slice()[0]).sum::<f64>() / 1000.0;
    assert!((mean - 0.5).abs() < 0.03, "mean {mean}");
}

#[test]
fn grid_oracle_agrees_with_pws() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let step = 0.01;
    for inst in [mqp_c(), one_d()] {
        for _ in 0..10 {
            let w = weight(rng.random_range(0.0..=1.0));
            let exact = solve_pws(&inst, &w).unwrap().x;
            let grid = grid_pws(&inst, &w, step).unwrap();
            assert!(dist_sq(&exact, &grid).sqrt() <= 2.0 * step, "{exact:?} vs {grid:?}");
        }
    }
}

#[test]
fn nested_grids_never_increase_loss() {
    let inst = mqp_c();
    let coarse = even_grid::<f64>(2, 11, false).unwrap();
    let fine = even_grid::<f64>(2, 21, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let y = Observation::new(1, vec![rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)]);
        let theta = [rng.random_range(1.0..6.0), rng.random_range(1.0..6.0), rng.random_range(-6.0..-1.0), rng.random_range(-6.0..-1.0)];
        let lc = surrogate_loss(&inst, &theta, &coarse, &y).unwrap().value;
        let lf = surrogate_loss(&inst, &theta, &fine, &y).unwrap().value;
        assert!(lf <= lc + 1e-12);
    }
}

#[test]
fn update_matches_enumeration_over_weights() {
    let inst = mqp_c();
    let grid = even_grid::<f64>(2, 6, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let theta = [rng.random_range(1.0..6.0), rng.random_range(1.0..6.0), rng.random_range(-6.0..-1.0), rng.random_range(-6.0..-1.0)];
        let y = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
        let eta = rng.random_range(0.2..3.0);
        let points = sampled_efficient_points(&inst, &theta, &grid, None).unwrap();
        let loss = nearest(&points, &y).value;
        let full = algorithm1_update(&inst, &theta, &y, eta, &grid).unwrap();
        assert!(full.objective_value <= eta * loss + 1e-9);
        if loss < 1e-9 {
            continue;
        }
        let best = grid
            .iter()
            .map(|w| solve_update_fixed_k(&inst, &theta, &y, eta, w).unwrap().objective_value)
            .fold(f64::INFINITY, f64::min);
        assert!((full.objective_value - best).abs() < 1e-9);
    }
}

#[test]
fn ideal_loss_is_midpoint_convex_on_ordered_halves() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ordered = |rng: &mut ChaCha8Rng, flip: bool| {
        let (lo, hi) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let (lo, hi) = (f64::min(lo, hi), f64::max(lo, hi));
        if flip { [hi, lo] } else { [lo, hi] }
    };
    for i in 0..1000 {
        let flip = i % 2 == 1;
        let y = rng.random_range(-2.0..12.0);
        let a = ordered(&mut rng, flip);
        let b = ordered(&mut rng, flip);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let lhs = closed_form_ideal_loss_1d(y, mid);
        let rhs = 0.5 * (closed_form_ideal_loss_1d(y, a) + closed_form_ideal_loss_1d(y, b));
        assert!(lhs <= rhs + 1e-9, "y = {y}, {a:?}, {b:?}");
    }
}

#[test]
fn ideal_loss_not_convex_across_the_diagonal() {
    // [1, 9] covers y, [8, 2] nearly does, the midpoint [4.5, 5.5] does not
    let (y, a, b) = (8.5, [1.0, 9.0], [8.0, 2.0]);
    let lhs = closed_form_ideal_loss_1d(y, [4.5, 5.5]);
    let rhs = 0.5 * (closed_form_ideal_loss_1d(y, a) + closed_form_ideal_loss_1d(y, b));
    assert!(lhs > rhs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_value_concave_in_weight(u1 in 0.0f64..1.0, u2 in 0.0f64..1.0, s in 0.0f64..1.0) {
        for inst in [mqp_c(), mqp_b()] {
            let val = |u: f64| {
                let w = weight(u);
                let x = solve_pws(&inst, &w).unwrap().x;
                inst.objective_values(&x).iter().zip(w.as_slice()).map(|(f, wl)| f * wl).sum::<f64>()
            };
            let um = s * u1 + (1.0 - s) * u2;
            prop_assert!(val(um) >= s * val(u1) + (1.0 - s) * val(u2) - 1e-9);
        }
    }

    #[test]
    fn surrogate_bounded_by_every_sample(y1 in -1.0f64..4.0, y2 in -1.0f64..4.0) {
        let inst = mqp_b();
        let grid = even_grid::<f64>(2, 9, false).unwrap();
        let theta = [6.0, 3.0];
        let points = sampled_efficient_points(&inst, &theta, &grid, None).unwrap();
        let l = nearest(&points, &[y1, y2]);
        for p in &points {
            prop_assert!(l.value <= dist_sq(&[y1, y2], &p.x) + 1e-15);
        }
    }

    #[test]
    fn one_d_pws_matches_closed_form(t1 in 0.0f64..10.0, t2 in 0.0f64..10.0, u in 0.0f64..1.0) {
        let inst = datagen::quadratic_1d_instance::<f64>([t1, t2]).unwrap();
        let x = solve_pws(&inst, &weight(u)).unwrap().x[0];
        prop_assert!((x - closed_form_1d([t1, t2], [u, 1.0 - u])).abs() < 1e-9);
    }

    #[test]
    fn fixed_weight_update_descends(u in 0.0f64..1.0, y1 in 0.0f64..3.0, y2 in 0.0f64..3.0, eta in 0.05f64..5.0) {
        let inst = mqp_b();
        let theta = [6.0, 3.0];
        let w = weight(u);
        let stay = solve_pws(&inst, &w).unwrap().x;
        let r = solve_update_fixed_k(&inst, &theta, &[y1, y2], eta, &w).unwrap();
        prop_assert!(r.objective_value <= eta * dist_sq(&[y1, y2], &stay) + 1e-9);
        let check = solve_pws(&inst.substitute(&r.theta_next).unwrap(), &w).unwrap().x;
        prop_assert!(dist_sq(&check, &r.x_at_solution).sqrt() < 1e-6);
    }
}
