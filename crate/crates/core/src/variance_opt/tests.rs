use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::densities::{
    beta_density, interpolate_density, product_density, uniform_density, BetaParams, Bounds,
    ConditionalDensity, DensityRef, Unconditional,
};
use crate::models::{
    gfunction_eta, gfunction_moments, gfunction_moments_deterministic, GFunctionSpec, Model,
};
use crate::quadrature::integrate;
use crate::subset::SubsetIndex;

const Q: QuadSpec = QuadSpec::split(64);

fn unit(k: usize) -> DensityRef {
    Arc::new(uniform_density(Bounds::unit(k)))
}

fn beta(a: f64, b: f64) -> DensityRef {
    Arc::new(beta_density(BetaParams::new(a, b).unwrap(), 0.0, 1.0).unwrap())
}

fn beta_sq(a: f64, b: f64) -> DensityRef {
    Arc::new(product_density(vec![beta(a, b), beta(a, b)]).unwrap())
}

fn u12() -> SubsetIndex {
    SubsetIndex::new(3, &[1, 2]).unwrap()
}

/// `E[((|4t-2| + a)/(1 + a))^4]` for `t ~ U[0,1]`: `s = |4t-2|` is uniform on [0, 2].
fn factor_fourth_moment(a: f64) -> f64 {
    ((2.0 + a).powi(5) - a.powi(5)) / (10.0 * (1.0 + a).powi(4))
}

fn oracle_sigma_p() -> f64 {
    let eta = 91.0 / 81.0;
    let m4 = factor_fourth_moment(1.0) * factor_fourth_moment(2.0);
    (4.0 * 49.0 / 48.0 - 3.0) * m4 - eta * eta
}

#[test]
fn constant_model_has_zero_variance() {
    let m = ConditionalMoments::constant(2.0, u12());
    let r = sigma_opt_p(&m, unit(3).as_ref(), Q).unwrap();
    assert!(r.sigma_sq.abs() < 1e-12);
    assert!((r.eta - 4.0).abs() < 1e-12);
}

#[test]
fn reference_variance_matches_closed_form() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let r = sigma_opt_p(&m, unit(3).as_ref(), Q).unwrap();
    assert!(
        (r.sigma_sq - oracle_sigma_p()).abs() < 1e-10,
        "{}",
        r.sigma_sq
    );
    assert!((r.sigma_sq - 0.744553).abs() < 1e-6);
    assert!((r.eta - 91.0 / 81.0).abs() < 1e-12);
    assert_eq!(r.method, "quadrature");
    assert!(!r.clamped);
}

#[test]
fn full_subset_deterministic_variance() {
    // m = f, phi^2 = f^2: sigma^2 = E[f^4] - eta^2.
    let spec = GFunctionSpec::new(vec![1.0, 2.0]).unwrap();
    let u = SubsetIndex::full(2).unwrap();
    let m = gfunction_moments_deterministic(&spec, &u).unwrap();
    let r = sigma_opt_p(&m, unit(2).as_ref(), Q).unwrap();
    let e4 = factor_fourth_moment(1.0) * factor_fourth_moment(2.0);
    let eta = gfunction_eta(&spec, &u).unwrap();
    assert!((r.sigma_sq - (e4 - eta * eta)).abs() < 1e-10);
}

#[test]
fn q_equal_p_reproduces_reference_variance() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let p = unit(3);
    let base = sigma_opt_p(&m, p.as_ref(), Q).unwrap();
    let cond: ConditionalRef = Arc::new(Unconditional::new(unit(1)));
    let r = sigma_opt_q(&m, p.as_ref(), unit(2).as_ref(), Some(&cond), Q).unwrap();
    assert!((r.sigma_sq - base.sigma_sq).abs() < 1e-10);
}

#[test]
fn beta_marginal_improves_on_reference() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let p = unit(3);
    let base = sigma_opt_p(&m, p.as_ref(), Q).unwrap();
    let r = sigma_opt_q(&m, p.as_ref(), beta_sq(0.7, 0.7).as_ref(), None, Q).unwrap();
    assert!(r.sigma_sq < base.sigma_sq);
    assert!(1.0 - r.sigma_sq / base.sigma_sq >= 0.4, "{}", r.sigma_sq);
}

#[test]
fn optimal_conditional_shape_and_identity() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments_deterministic(&spec, &u12()).unwrap();
    let p = unit(3);
    let qc: ConditionalRef = Arc::new(optimal_conditional(&m, p.as_ref(), Q).unwrap());
    for x3 in [0.01, 0.3, 0.5, 0.77] {
        for x_u in [[0.2, 0.9], [0.5, 0.5]] {
            let expect = ((4.0 * x3 - 2.0f64).abs() + 3.0) / 4.0;
            assert!((qc.pdf(&[x3], &x_u) - expect).abs() < 1e-12);
        }
    }
    let inner = Inner::new(p.as_ref(), &m, Q).unwrap();
    for x_u in [[0.1, 0.2], [0.6, 0.95], [0.5, 0.3]] {
        let lhs = conditional_second_moment(&m, p.as_ref(), &qc, &x_u, Q).unwrap();
        let rhs = inner.phi(&m, &x_u).unwrap().powi(2);
        assert!((lhs - rhs).abs() < 1e-8 * rhs);
    }
}

#[test]
fn optimal_conditional_of_flat_phi_is_reference() {
    let m = ConditionalMoments::constant(3.0, u12());
    let qc = optimal_conditional(&m, unit(3).as_ref(), Q).unwrap();
    for x3 in [0.1, 0.5, 0.9] {
        assert!((qc.pdf(&[x3], &[0.3, 0.3]) - 1.0).abs() < 1e-12);
    }
    let full = SubsetIndex::full(3).unwrap();
    let mf = ConditionalMoments::constant(1.0, full);
    assert!(optimal_conditional(&mf, unit(3).as_ref(), Q).is_err());
}

#[test]
fn s_functions_ordering_and_shape() {
    let spec = GFunctionSpec::benchmark();
    let p = unit(3);
    let avg = gfunction_moments(&spec, &u12()).unwrap();
    let det = gfunction_moments_deterministic(&spec, &u12()).unwrap();
    let sa = s_function(&avg, p.as_ref(), SCase::A, Q).unwrap();
    let sb = s_function(&det, p.as_ref(), SCase::B, Q).unwrap();
    assert!((sa.eta() - 91.0 / 81.0).abs() < 1e-12);
    for i in 0..20 {
        for j in 0..20 {
            let x = [(i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0];
            let m4 = avg.m_u(&x).powi(4);
            assert!((sa.eval(&x) / m4 - 13.0 / 12.0).abs() < 1e-12);
            assert!((sb.eval(&x) / m4 - 1.0).abs() < 1e-12);
            assert!(sb.eval(&x) <= sa.eval(&x));
        }
    }
    assert!(s_function(&avg, p.as_ref(), SCase::Custom, Q).is_err());
}

#[test]
fn optimal_marginal_is_normalized_m_squared() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let p = unit(3);
    let s = s_function(&m, p.as_ref(), SCase::A, Q).unwrap();
    let (q, report) = optimal_marginal(unit(2), &s, Q).unwrap();
    let eta = 91.0 / 81.0;
    for x in [[0.1, 0.2], [0.5, 0.5], [0.93, 0.41]] {
        assert!((q.pdf(&x) - m.m_u(&x).powi(2) / eta).abs() < 1e-10);
    }
    // (E sqrt(S_A))^2 - eta^2 = (13/12 - 1) eta^2
    assert!((report.sigma_sq - eta * eta / 12.0).abs() < 1e-10);
    let flat = SFunction::custom(1, 1.0, |_| 4.0);
    let (q1, r1) = optimal_marginal(unit(1), &flat, Q).unwrap();
    assert!((q1.pdf(&[0.3]) - 1.0).abs() < 1e-12);
    assert!((r1.sigma_sq - 3.0).abs() < 1e-12);
    let negative = SFunction::custom(1, 1.0, |x| x[0] - 0.5);
    assert!(optimal_marginal(unit(1), &negative, Q).is_err());
}

#[test]
fn zero_variance_density_properties() {
    let spec = GFunctionSpec::benchmark();
    let model = Model::gfunction(&spec);
    let m = gfunction_moments_deterministic(&spec, &u12()).unwrap();
    let p = unit(3);
    let z = zero_variance_density(&model, &m, p.as_ref(), Q).unwrap();
    let eta = 91.0 / 81.0;
    assert!((z.eta() - eta).abs() < 1e-12);
    let rule = QuadSpec::split(16).rule(&Bounds::unit(3)).unwrap();
    let d = z.density();
    assert!((integrate(|x| d.pdf(x), &rule).unwrap() - 1.0).abs() < 1e-8);
    for x in rule.nodes().rows().step_by(97) {
        assert!((z.product(x).unwrap() / eta - 1.0).abs() < 1e-12);
    }
    let cond = z.design().q_cond().cloned();
    let r = sigma_opt_q(&m, p.as_ref(), z.design().q_u().as_ref(), cond.as_ref(), Q).unwrap();
    assert!(r.sigma_sq.abs() < 1e-8);
    let noisy = Model::gfunction_with_noise(&spec, &[3]).unwrap();
    assert!(zero_variance_density(&noisy, &m, p.as_ref(), Q).is_err());
}

#[test]
fn cv_curve_endpoints_and_monotonicity() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let p = unit(3);
    let s = s_function(&m, p.as_ref(), SCase::A, Q).unwrap();
    let (q, _) = optimal_marginal(unit(2), &s, Q).unwrap();
    let q: DensityRef = Arc::new(q);
    let ts: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let quad = cv_curve(
        &unit(2),
        &q,
        &s,
        s.eta(),
        &ts,
        CvMethod::Quadrature(Q),
        &mut rng,
    )
    .unwrap();
    let base = sigma_opt_p(&m, p.as_ref(), Q).unwrap();
    assert!((quad[0].cv - base.cv).abs() < 1e-10);
    assert!((quad[10].cv - (1.0f64 / 12.0).sqrt()).abs() < 1e-9);
    assert!(quad.windows(2).all(|w| w[1].cv < w[0].cv));
    let mc = cv_curve(
        &unit(2),
        &q,
        &s,
        s.eta(),
        &ts,
        CvMethod::MonteCarlo { n: 20_000 },
        &mut rng,
    )
    .unwrap();
    for (a, b) in quad.iter().zip(&mc) {
        let se = b.stderr.unwrap();
        assert!(
            (a.sigma_sq - b.sigma_sq).abs() <= 4.0 * se + 1e-9,
            "t={} {a:?} {b:?}",
            a.t
        );
    }
    assert!(cv_curve(
        &unit(2),
        &q,
        &s,
        1.0,
        &[1.5],
        CvMethod::Quadrature(Q),
        &mut rng
    )
    .is_err());
}

#[test]
fn small_surface() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let p = unit(3);
    let grid = [0.6, 0.7, 1.0, 2.0];
    let s = beta_variance_surface(&m, p.as_ref(), &grid, &grid, QuadSpec::split(32)).unwrap();
    let base = sigma_opt_p(&m, p.as_ref(), QuadSpec::split(32)).unwrap();
    assert!((s.cell(2, 2).sigma_sq - base.sigma_sq).abs() < 1e-10);
    assert!(s.cell(3, 0).divergent && s.cell(0, 3).divergent && !s.cell(1, 1).divergent);
    let best = s.best().unwrap();
    assert_eq!((best.alpha, best.beta), (0.7, 0.7));
    assert!(s.reduction().unwrap() > 0.4);
}

#[test]
fn ratio_functional_minimum_at_target() {
    let eta = 91.0 / 81.0;
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let g = |x: &[f64]| m.m_u(x).powi(2) / eta;
    let target = crate::densities::normalize_density(
        {
            let m = m.clone();
            move |x: &[f64]| m.m_u(x).powi(2)
        },
        Bounds::unit(2),
        Q,
        "g",
    )
    .unwrap();
    let at_g = ratio_functional(g, &target, Q).unwrap();
    assert!((at_g - 1.0).abs() < 1e-10);
    let mix: DensityRef = Arc::new(interpolate_density(unit(2), Arc::new(target), 0.5).unwrap());
    for q in [unit(2), beta_sq(0.7, 0.7), beta_sq(1.2, 0.9), mix] {
        assert!(ratio_functional(g, q.as_ref(), Q).unwrap() > at_g);
    }
}

#[test]
fn q_form_and_p_form_agree() {
    let spec = GFunctionSpec::benchmark();
    let m = gfunction_moments(&spec, &u12()).unwrap();
    let p = unit(3);
    let q_u = beta_sq(0.8, 0.8);
    // Mixing in the reference keeps w_bar bounded, so the inner quadrature stays accurate.
    let mix: DensityRef = Arc::new(interpolate_density(unit(1), beta(2.0, 2.0), 0.5).unwrap());
    let cond: ConditionalRef = Arc::new(Unconditional::new(mix));
    let exact = sigma_opt_q(&m, p.as_ref(), q_u.as_ref(), Some(&cond), Q).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for form in [VarianceForm::P, VarianceForm::Q] {
        let mc = sigma_opt_q_mc(
            &m,
            p.as_ref(),
            q_u.as_ref(),
            Some(&cond),
            form,
            40_000,
            Q,
            &mut rng,
        )
        .unwrap();
        let se = mc.stderr.unwrap();
        assert!(
            (mc.sigma_sq - exact.sigma_sq).abs() < 4.0 * se,
            "{form:?} {mc:?} vs {exact:?}"
        );
    }
}

#[test]
fn clamping_is_flagged() {
    let r = VarianceReport::quadrature(-1e-12, 1.0).unwrap();
    assert!(r.clamped && r.sigma_sq == 0.0 && r.cv == 0.0);
    assert!(VarianceReport::quadrature(-1e-3, 1.0).is_err());
    let mc = VarianceReport::monte_carlo(-0.1, 1.0, 0.2);
    assert!(mc.clamped && mc.sigma_sq == 0.0);
}
