//! Model-level invariants that tie the transformer, its Jacobian, the local
//! linear picture, and the matching procedure together.

mod common;

use atlas_core::autodiff::{eval, finite_diff_jacobian, jacobian, record};
use atlas_core::lipschitz::ldlc_estimate;
use atlas_core::matcher::{match_embedding, MatchConfig};
use atlas_core::rng::{gaussian, uniform, Rng};
use atlas_core::spectral::{jacobian_at, svd_analysis, JacobianSvd};
use atlas_core::tensor::Tensor;
use atlas_core::vit::Embedder;

use common::{scaled_max_error, small_vit};

fn svd_at<'a>(model: &Embedder<'a>, x0: &Tensor) -> JacobianSvd {
    let j = jacobian_at(model, x0).unwrap();
    svd_analysis(&j, x0).unwrap()
}

#[test]
fn full_model_jacobian_matches_finite_differences() {
    let (cfg, w) = small_vit(2000);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x = uniform(&mut Rng::new(2001), &[3, 8, 8], 0.0, 1.0);
    let ad = jacobian(&model, &x).unwrap();
    let fd = finite_diff_jacobian(&model, &x, 1e-5).unwrap();
    let err = scaled_max_error(&ad, &fd);
    assert!(err < 1e-6, "jacobian vs finite differences: {err:.3e}");
}

#[test]
fn embedding_is_continuous_along_random_directions() {
    let (cfg, w) = small_vit(2002);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2003), &[3, 8, 8], 0.1, 0.9);
    let svd = svd_at(&model, &x0);
    let d = gaussian(&mut Rng::new(2004), &[3, 8, 8]).normalized().unwrap();
    let n_points = 100usize;
    let dt = 2e-3 / (n_points - 1) as f64;
    let mut prev = None;
    for k in 0..n_points {
        let t = -1e-3 + dt * k as f64;
        let f = eval(&model, &x0.add_scaled(&d, t).unwrap()).unwrap();
        if let Some(p) = prev {
            let jump = f.sub(&p).unwrap().norm_l2();
            assert!(
                jump <= svd.sigma_max * dt * 1.5,
                "jump {jump:.3e} at t={t:.2e} exceeds sigma_max*dt*1.5"
            );
        }
        prev = Some(f);
    }
}

#[test]
fn jacobian_is_locally_smooth() {
    let (cfg, w) = small_vit(2005);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2006), &[3, 8, 8], 0.1, 0.9);
    let j0 = jacobian(&model, &x0).unwrap();
    let delta = gaussian(&mut Rng::new(2007), &[3, 8, 8])
        .normalized()
        .unwrap()
        .scale(1e-9);
    let j1 = jacobian(&model, &x0.add(&delta).unwrap()).unwrap();
    let rel = j1.sub(&j0).unwrap().norm_l2() / j0.norm_l2();
    assert!(rel < 1e-6, "jacobian moved by {rel:.3e} under a 1e-9 shift");
}

/// Along a null-projected direction the first-order term vanishes, so the
/// embedding change must be quadratic in t: fit the curvature at the largest
/// radius and check the smaller radii against it.
#[test]
fn null_directions_are_first_order_invariant() {
    let (cfg, w) = small_vit(2008);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2009), &[3, 8, 8], 0.2, 0.8);
    let f0 = eval(&model, &x0).unwrap();
    let svd = svd_at(&model, &x0);
    let d = svd
        .project_null(&gaussian(&mut Rng::new(2010), &[192]), None)
        .unwrap()
        .reshape(&[3, 8, 8])
        .unwrap();
    let drift = |t: f64| {
        eval(&model, &x0.add_scaled(&d, t).unwrap())
            .unwrap()
            .sub(&f0)
            .unwrap()
            .norm_l2()
    };
    let t_big = 1e-2;
    let curvature = (drift(t_big) - 1e-3 * svd.sigma_max * t_big).max(0.0) / (t_big * t_big);
    for t in [1e-4, 1e-3] {
        let got = drift(t);
        let bound = 1e-3 * svd.sigma_max * t + 1.5 * curvature * t * t;
        assert!(
            got <= bound,
            "drift {got:.3e} at t={t:.0e} exceeds first-order-invariance bound {bound:.3e}"
        );
    }
}

/// The directional estimate never exceeds the operator norm by more than
/// the rank slack plus a fitted curvature allowance linear in epsilon.
#[test]
fn ldlc_is_bounded_by_sigma_max_plus_curvature() {
    let (cfg, w) = small_vit(2011);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2012), &[3, 8, 8], 0.2, 0.8);
    let svd = svd_at(&model, &x0);
    let m = cfg.input_dim();
    let mut directions = vec![{
        let col: Vec<f64> = (0..m).map(|i| svd.v.get2(i, 0)).collect();
        Tensor::from_vec(&[m], col).unwrap()
    }];
    let mut rng = Rng::new(2013);
    for _ in 0..4 {
        directions.push(gaussian(&mut rng, &[m]).normalized().unwrap());
    }
    let eps = 1e-3;
    for (i, d) in directions.iter().enumerate() {
        let full = ldlc_estimate(&model, &x0, d, eps, 21).unwrap().value;
        let half = ldlc_estimate(&model, &x0, d, eps / 2.0, 21).unwrap().value;
        let kappa = ((full - half) / (eps / 2.0)).max(0.0);
        let bound = svd.sigma_max * (1.0 + 1e-3) + kappa * eps + 1e-12;
        assert!(
            full <= bound,
            "direction {i}: estimate {full:.6} above bound {bound:.6}"
        );
    }
}

#[test]
fn small_learning_rate_descends_monotonically_outside_clamps() {
    let (cfg, w) = small_vit(2014);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2015), &[3, 8, 8], 0.0, 1.0);
    let xt = uniform(&mut Rng::new(2016), &[3, 8, 8], 0.0, 1.0);
    let target = eval(&model, &xt).unwrap();
    let mcfg = MatchConfig {
        learning_rate: 1e-3,
        max_iters: 400,
        loss_tol: Some(0.0),
        cos_tol: None,
        perturb_budget: None,
        record_every: 1,
    };
    let (_, trace) = match_embedding(&model, &x0, &target, &mcfg).unwrap();
    for pair in trace.rows.windows(2) {
        if pair[1].loss > pair[0].loss {
            assert!(
                pair[1].clamped_steps > 0,
                "loss rose at iter {} without a clamp event",
                pair[1].iter
            );
        }
    }
}

#[test]
fn match_gradient_lives_in_the_normal_space() {
    let (cfg, w) = small_vit(2017);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2018), &[3, 8, 8], 0.0, 1.0);
    let xt = uniform(&mut Rng::new(2019), &[3, 8, 8], 0.0, 1.0);
    let target = eval(&model, &xt).unwrap();
    let (y, tape) = record(&model, &x0).unwrap();
    let grad = tape.vjp(&y.sub(&target).unwrap()).unwrap();
    let svd = svd_at(&model, &x0);
    let frac = svd
        .normal_energy_fraction(&grad.reshape(&[cfg.input_dim()]).unwrap(), None)
        .unwrap();
    assert!(frac > 0.99, "normal-space energy fraction {frac}");
}

/// Matched-run perturbation directions also concentrate in the normal space,
/// though less sharply than the instantaneous gradient: each step is normal
/// at its own point and the subspace rotates along the path.
#[test]
fn matched_perturbation_is_normal_dominated() {
    let (cfg, w) = small_vit(2020);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2021), &[3, 8, 8], 0.0, 1.0);
    let xt = uniform(&mut Rng::new(2022), &[3, 8, 8], 0.0, 1.0);
    let target = eval(&model, &xt).unwrap();
    let mcfg = MatchConfig {
        learning_rate: 0.02,
        max_iters: 2000,
        cos_tol: Some(0.999),
        ..MatchConfig::default()
    };
    let (x_star, _) = match_embedding(&model, &x0, &target, &mcfg).unwrap();
    let delta = x_star.sub(&x0).unwrap();
    if delta.norm_l2() == 0.0 {
        return; // already matched; nothing to measure
    }
    let svd = svd_at(&model, &x0);
    let frac = svd
        .normal_energy_fraction(&delta.reshape(&[cfg.input_dim()]).unwrap(), None)
        .unwrap();
    assert!(frac > 0.8, "perturbation normal-energy fraction {frac}");
}

#[test]
fn loss_convergence_implies_the_cosine_bound() {
    let (cfg, w) = small_vit(2023);
    let model = Embedder::new(&cfg, &w).unwrap();
    let x0 = uniform(&mut Rng::new(2024), &[3, 8, 8], 0.0, 1.0);
    let xt = uniform(&mut Rng::new(2025), &[3, 8, 8], 0.0, 1.0);
    let target = eval(&model, &xt).unwrap();
    let tol = 1e-4 * target.dot(&target).unwrap();
    let mcfg = MatchConfig {
        learning_rate: 0.02,
        max_iters: 5000,
        loss_tol: Some(tol),
        cos_tol: None,
        perturb_budget: None,
        record_every: 10,
    };
    let (_, trace) = match_embedding(&model, &x0, &target, &mcfg).unwrap();
    assert!(trace.converged, "run did not reach loss_tol");
    let last = trace.rows.last().unwrap();
    assert!(last.loss <= tol);
    let bound = 1.0 - tol * 2.0 / target.dot(&target).unwrap();
    assert!(
        last.cosine >= bound,
        "cosine {} below algebraic bound {bound}",
        last.cosine
    );
}
