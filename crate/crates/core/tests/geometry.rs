use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use gategeom::geometry::{
    codim_graph_curvature, fd, gated_second_derivative, graph_curvature, whiten, AffineEmbedding,
    EmbeddingMap, FnEmbedding, MetricField, PrecisionSpec, Reparameterized, Steps,
    WithConstantCoords,
};
use gategeom::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere_patch() -> FnEmbedding {
    FnEmbedding::new(2, 3, |p| {
        DVector::from_vec(vec![
            p[0].cos() * p[1].cos(),
            p[0].cos() * p[1].sin(),
            p[0].sin(),
        ])
    })
}

fn random_affine(rng: &mut ChaCha8Rng, d: usize, big_d: usize) -> AffineEmbedding {
    loop {
        let a = DVector::from_fn(big_d, |_, _| rng.gen_range(-3.0..3.0));
        let b = DMatrix::from_fn(big_d, d, |_, _| rng.gen_range(-2.0..2.0));
        let emb = AffineEmbedding::new(a, b).unwrap();
        if emb.min_singular_value() > 0.2 {
            return emb;
        }
    }
}

/// Random cubic polynomial map R² → R³ with an identity linear part so it
/// stays an immersion near the origin.
fn random_cubic(rng: &mut ChaCha8Rng) -> FnEmbedding {
    let coeffs: Vec<[f64; 7]> = (0..3)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-0.5..0.5)))
        .collect();
    FnEmbedding::new(2, 3, move |p| {
        let (u, v) = (p[0], p[1]);
        let mono = [u * u, u * v, v * v, u * u * u, u * u * v, u * v * v, v * v * v];
        let lin = [u, v, 0.3 * (u + v)];
        DVector::from_fn(3, |m, _| {
            lin[m] + coeffs[m].iter().zip(mono).map(|(c, x)| c * x).sum::<f64>()
        })
    })
}

/// Forward-difference Jacobian, deliberately a different stencil from the
/// central differences used by the library.
fn forward_jacobian(map: &dyn EmbeddingMap, p: &[f64], h: f64) -> DMatrix<f64> {
    let f0 = map.evaluate(p);
    let mut jac = DMatrix::zeros(map.ambient_dim(), map.domain_dim());
    for j in 0..map.domain_dim() {
        let mut q = p.to_vec();
        q[j] += h;
        jac.set_column(j, &((map.evaluate(&q) - &f0) / h));
    }
    jac
}

#[test]
fn metric_of_coordinate_plane_is_identity() {
    let emb = AffineEmbedding::new(
        DVector::from_vec(vec![1.0, -2.0, 0.5]),
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
    )
    .unwrap();
    let field = MetricField::euclidean(emb);
    for p in [[0.0, 0.0], [3.0, -1.0], [-7.5, 2.25]] {
        assert_eq!(field.metric_at(&p).unwrap(), DMatrix::identity(2, 2));
    }
}

#[test]
fn metric_of_sphere_patch_at_origin() {
    let g = MetricField::euclidean(sphere_patch()).metric_at(&[0.0, 0.0]).unwrap();
    assert_abs_diff_eq!(g, DMatrix::identity(2, 2), epsilon = 1e-9);
}

#[test]
fn metric_matches_forward_difference_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let emb = random_cubic(&mut rng);
        let p = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let jac = forward_jacobian(&emb, &p, 1e-7);
        let oracle = jac.transpose() * &jac;
        let g = MetricField::euclidean(emb).metric_at(&p).unwrap();
        let rel = (&g - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-5, "relative error {rel}");
        assert_eq!(g, g.transpose());
        let eig = g.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10);
    }
}

#[test]
fn nonfinite_embedding_value_is_domain_error() {
    let emb = FnEmbedding::new(1, 1, |p| DVector::from_element(1, (p[0]).ln()));
    let err = MetricField::euclidean(emb).metric_at(&[0.0]).unwrap_err();
    assert!(matches!(err, Error::Domain { .. }), "{err}");
}

#[test]
fn christoffel_of_constant_metric_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let field = MetricField::euclidean(random_affine(&mut rng, 2, 4));
    let gamma = field.christoffel_at(&[0.3, -0.7]).unwrap();
    assert!(gamma.max_abs() < 1e-8);
}

#[test]
fn christoffel_of_sphere_matches_closed_form() {
    let phi1 = PI / 8.0;
    let field = MetricField::euclidean(sphere_patch());
    let gamma = field.christoffel_at(&[phi1, 0.2]).unwrap();
    // metric diag(1, cos²φ₁): Γ²₁₂ = −tan φ₁ and Γ¹₂₂ = sin φ₁ cos φ₁
    assert_abs_diff_eq!(gamma.get(1, 0, 1), -phi1.tan(), epsilon = 1e-4);
    assert_abs_diff_eq!(gamma.get(1, 1, 0), -phi1.tan(), epsilon = 1e-4);
    assert_abs_diff_eq!(gamma.get(0, 1, 1), phi1.sin() * phi1.cos(), epsilon = 1e-4);
    assert_abs_diff_eq!(gamma.get(0, 0, 0), 0.0, epsilon = 1e-4);
}

#[test]
fn christoffel_invariant_under_constant_scaling() {
    let base = sphere_patch();
    let scaled = {
        let b = base.clone();
        FnEmbedding::new(2, 3, move |p| 2.0 * b.evaluate(p))
    };
    let p = [0.4, -0.3];
    let g1 = MetricField::euclidean(base).christoffel_at(&p).unwrap();
    let g2 = MetricField::euclidean(scaled).christoffel_at(&p).unwrap();
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(g1.get(k, i, j), g2.get(k, i, j), epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn singular_metric_is_a_regularity_error() {
    let emb = AffineEmbedding::new(
        DVector::zeros(3),
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
    )
    .unwrap();
    let field = MetricField::euclidean(emb);
    let err = field.christoffel_at(&[0.0, 0.0]).unwrap_err();
    assert!(matches!(err, Error::Regularity { det, .. } if det.abs() < 1e-12));
    let report = field.curvature_report(&[0.0, 0.0]).unwrap();
    assert!(!report.regular);
    assert_eq!(report.gaussian_curvature, None);
    assert_eq!(report.riemann_norm, None);
}

#[test]
fn stencil_leaving_domain_is_domain_error() {
    let emb = sphere_patch().with_domain(|p| p[0] > 0.0);
    let err = MetricField::euclidean(emb).riemann_at(&[5e-4, 0.0]).unwrap_err();
    assert!(matches!(err, Error::Domain { .. }), "{err}");
}

#[test]
fn affine_embeddings_are_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let d = rng.gen_range(2..4);
        let big_d = d + rng.gen_range(1..4);
        let field = MetricField::euclidean(random_affine(&mut rng, d, big_d));
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        assert!(field.riemann_at(&p).unwrap().frobenius_norm() < 1e-6);
    }
}

#[test]
fn sphere_riemann_component_equals_det_g() {
    let field = MetricField::euclidean(sphere_patch());
    let r = field.riemann_at(&[0.0, 0.0]).unwrap();
    assert_abs_diff_eq!(r.get(0, 1, 0, 1), 1.0, epsilon = 1e-3);
    assert_abs_diff_eq!(r.get(1, 0, 1, 0), 1.0, epsilon = 1e-3);
    assert_abs_diff_eq!(r.get(0, 1, 1, 0), -1.0, epsilon = 1e-3);
    for phi1 in [-0.6, 0.3, 0.9] {
        assert_abs_diff_eq!(field.gaussian_curvature_at(&[phi1, 0.1]).unwrap(), 1.0, epsilon = 1e-3);
    }
}

fn mild_diffeomorphism(rng: &mut ChaCha8Rng) -> FnEmbedding {
    let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
    FnEmbedding::new(2, 2, move |p| {
        DVector::from_vec(vec![
            p[0] + c[0] * p[1].sin() + c[1] * p[0] * p[0],
            p[1] + c[2] * p[0].sin() + c[3] * p[0] * p[1],
        ])
    })
    .with_jacobian(move |p| {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0 + 2.0 * c[1] * p[0],
                c[0] * p[1].cos(),
                c[2] * p[0].cos() + c[3] * p[1],
                1.0 + c[3] * p[0],
            ],
        )
    })
}

#[test]
fn reparameterized_flat_embedding_stays_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let flat = Reparameterized {
            inner: random_affine(&mut rng, 2, 3),
            chart: mild_diffeomorphism(&mut rng),
        };
        let field = MetricField::euclidean(&flat);
        let p = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let r = field.riemann_at(&p).unwrap().frobenius_norm();
        assert!(r < 1e-6, "‖R‖ = {r}");
    }
    // curved embeddings stay curved after reparameterization
    let curved = Reparameterized {
        inner: sphere_patch(),
        chart: mild_diffeomorphism(&mut rng),
    };
    let r = MetricField::euclidean(&curved).riemann_at(&[0.1, 0.1]).unwrap();
    assert!(r.frobenius_norm() > 0.1);
}

#[test]
fn saddle_graph_has_curvature_minus_one() {
    let field = MetricField::euclidean(FnEmbedding::graph(|u, v| u * v));
    assert_abs_diff_eq!(field.gaussian_curvature_at(&[0.0, 0.0]).unwrap(), -1.0, epsilon = 1e-3);
    let h = Steps::default().hessian;
    assert_abs_diff_eq!(graph_curvature(|u, v| u * v, [0.0, 0.0], h, h).unwrap(), -1.0, epsilon = 1e-9);
}

#[test]
fn gaussian_curvature_rejects_other_dimensions() {
    let emb = AffineEmbedding::new(DVector::zeros(4), DMatrix::identity(4, 3)).unwrap();
    let err = MetricField::euclidean(emb).gaussian_curvature_at(&[0.0; 3]).unwrap_err();
    assert!(matches!(err, Error::Dimension { expected: 2, got: 3 }));
}

#[test]
fn graph_curvature_closed_forms() {
    let h = Steps::default().hessian;
    let k = graph_curvature(|u, v| 3.0 * 0.5 * (u * u + v * v), [0.0, 0.0], h, h).unwrap();
    assert_abs_diff_eq!(k, 9.0, epsilon = 1e-6);
    for p in [[0.0, 0.0], [1.0, -2.0], [0.3, 0.7]] {
        assert_eq!(graph_curvature(|_, _| 0.0, p, h, h).unwrap(), 0.0);
    }
}

fn random_quartic(rng: &mut ChaCha8Rng) -> impl Fn(f64, f64) -> f64 + Clone + Send + Sync + 'static {
    let c: [f64; 14] = std::array::from_fn(|_| rng.gen_range(-0.6..0.6));
    move |u, v| {
        let mono = [
            u,
            v,
            u * u,
            u * v,
            v * v,
            u * u * u,
            u * u * v,
            u * v * v,
            v * v * v,
            u.powi(4),
            u.powi(3) * v,
            u * u * v * v,
            u * v.powi(3),
            v.powi(4),
        ];
        c.iter().zip(mono).map(|(a, m)| a * m).sum()
    }
}

#[test]
fn graph_curvature_agrees_with_metric_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let steps = Steps::default();
    for _ in 0..100 {
        let f = random_quartic(&mut rng);
        let p = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
        let closed = graph_curvature(f.clone(), p, steps.jacobian, steps.hessian).unwrap();
        let pipeline = MetricField::euclidean(FnEmbedding::graph(f)).gaussian_curvature_at(&p).unwrap();
        assert!((closed - pipeline).abs() < 1e-3, "closed {closed} vs pipeline {pipeline}");
    }
}

#[test]
fn codim_graph_curvature_cases() {
    let s = Steps::default();
    let unit = |u: f64, v: f64| 0.5 * (u * u + v * v);
    let k = codim_graph_curvature(&[unit], [0.0, 0.0], s.jacobian, s.hessian, 1e-6).unwrap();
    assert_abs_diff_eq!(k, 1.0, epsilon = 1e-6);

    let comps: Vec<Box<dyn Fn(f64, f64) -> f64>> = vec![
        Box::new(|u, v| 0.5 * (u * u + v * v)),
        Box::new(|u, v| 0.5 * (u * u - v * v)),
    ];
    let k = codim_graph_curvature(&comps, [0.0, 0.0], s.jacobian, s.hessian, 1e-6).unwrap();
    assert_abs_diff_eq!(k, 0.0, epsilon = 1e-6);
    // the 4-dimensional embedding through the full pipeline agrees
    let emb = FnEmbedding::new(2, 4, |p| {
        let (u, v) = (p[0], p[1]);
        DVector::from_vec(vec![u, v, 0.5 * (u * u + v * v), 0.5 * (u * u - v * v)])
    });
    let pipeline = MetricField::euclidean(emb).gaussian_curvature_at(&[0.0, 0.0]).unwrap();
    assert_abs_diff_eq!(pipeline, 0.0, epsilon = 1e-3);

    // aligned regime: components A c_α ψ
    let (a_total, c) = (1.7, [0.3, -1.2, 0.8]);
    let aligned: Vec<_> = c
        .iter()
        .map(|&ca| move |u: f64, v: f64| a_total * ca * (0.4 + 0.5 * (u * u + v * v)))
        .collect();
    let k = codim_graph_curvature(&aligned, [0.0, 0.0], s.jacobian, s.hessian, 1e-6).unwrap();
    let c_sq: f64 = c.iter().map(|x| x * x).sum();
    let predicted = a_total * a_total * c_sq;
    assert!(((k - predicted) / predicted).abs() < 1e-6);
}

#[test]
fn codim_graph_curvature_requires_critical_point() {
    let s = Steps::default();
    let err = codim_graph_curvature(&[|u: f64, v: f64| u + v * v], [0.0, 0.0], s.jacobian, s.hessian, 1e-6)
        .unwrap_err();
    match err {
        Error::Precondition { value, .. } => assert_abs_diff_eq!(value, 1.0, epsilon = 1e-8),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn whitening_identity_is_noop_and_affine_stays_flat() {
    let sphere = sphere_patch();
    let w = whiten(sphere.clone(), &PrecisionSpec::identity(3));
    assert_eq!(w.evaluate(&[0.2, 0.4]), sphere.evaluate(&[0.2, 0.4]));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let affine = random_affine(&mut rng, 2, 3);
    let prec = PrecisionSpec::diagonal(vec![7.0, 0.5, 2.0]).unwrap();
    let field = MetricField::euclidean(whiten(affine, &prec));
    assert!(field.gaussian_curvature_at(&[0.5, 0.5]).unwrap().abs() < 1e-6);
}

#[test]
fn whitening_commutes_with_curvature_on_sphere() {
    let prec = PrecisionSpec::diagonal(vec![4.0, 1.0, 1.0]).unwrap();
    let p = [0.2, -0.1];
    let direct = MetricField::new(sphere_patch(), prec.clone()).gaussian_curvature_at(&p).unwrap();
    let whitened = MetricField::euclidean(whiten(sphere_patch(), &prec)).gaussian_curvature_at(&p).unwrap();
    assert!((direct - whitened).abs() < 1e-3);
    // an ellipsoid, not the unit sphere
    assert!((direct - 1.0).abs() > 0.1);
}

#[test]
fn precision_spec_validation() {
    assert!(PrecisionSpec::diagonal(vec![1.0, 0.0]).is_err());
    assert!(PrecisionSpec::diagonal(vec![]).is_err());
    let p = PrecisionSpec::log_uniform(64, 12.0).unwrap();
    assert_eq!(p.condition_number(), 12.0);
    assert!(p.entries().iter().zip(p.entries().iter().skip(1)).all(|(a, b)| a < b));
    assert!(PrecisionSpec::identity(3).is_identity());
}

/// `g_m(φ) = c_m + Σ_k w_mk sin(ω_mk·φ + β_mk)` with closed-form derivatives.
struct TrigMap {
    d: usize,
    offsets: Vec<f64>,
    terms: Vec<Vec<(f64, Vec<f64>, f64)>>,
}

impl TrigMap {
    fn random(rng: &mut ChaCha8Rng, d: usize, big_d: usize) -> Self {
        let offsets = (0..big_d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let terms = (0..big_d)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let w = rng.gen_range(-1.0..1.0);
                        let omega = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
                        (w, omega, rng.gen_range(0.0..6.0))
                    })
                    .collect()
            })
            .collect();
        Self { d, offsets, terms }
    }

    fn phase(omega: &[f64], beta: f64, p: &[f64]) -> f64 {
        omega.iter().zip(p).map(|(o, x)| o * x).sum::<f64>() + beta
    }
}

impl EmbeddingMap for TrigMap {
    fn domain_dim(&self) -> usize {
        self.d
    }
    fn ambient_dim(&self) -> usize {
        self.offsets.len()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.offsets.len(), |m, _| {
            self.offsets[m]
                + self.terms[m]
                    .iter()
                    .map(|(w, o, b)| w * Self::phase(o, *b, p).sin())
                    .sum::<f64>()
        })
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.offsets.len(), self.d, |m, j| {
            self.terms[m]
                .iter()
                .map(|(w, o, b)| w * o[j] * Self::phase(o, *b, p).cos())
                .sum()
        }))
    }
    fn analytic_hessian(&self, p: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        Some(
            (0..self.offsets.len())
                .map(|m| {
                    DMatrix::from_fn(self.d, self.d, |i, j| {
                        self.terms[m]
                            .iter()
                            .map(|(w, o, b)| -w * o[i] * o[j] * Self::phase(o, *b, p).sin())
                            .sum()
                    })
                })
                .collect(),
        )
    }
}

struct Hadamard<'a> {
    values: &'a AffineEmbedding,
    gate: &'a TrigMap,
}

impl EmbeddingMap for Hadamard<'_> {
    fn domain_dim(&self) -> usize {
        self.values.domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        self.values.ambient_dim()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        self.values.evaluate(p).component_mul(&self.gate.evaluate(p))
    }
}

#[test]
fn gated_second_derivative_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let steps = Steps::default();
    for _ in 0..100 {
        let d = rng.gen_range(1..4);
        let big_d = rng.gen_range(d.max(2)..6);
        let values = random_affine(&mut rng, d, big_d);
        let gate = TrigMap::random(&mut rng, d, big_d);
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let formula = gated_second_derivative(&values, &gate, &p, &steps).unwrap();
        let oracle = fd::hessian(&Hadamard { values: &values, gate: &gate }, &p, steps.hessian).unwrap();
        let scale = oracle.iter().map(|h| h.amax()).fold(1e-12, f64::max);
        let err = formula
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        assert!(err / scale < 1e-5, "relative error {}", err / scale);
    }
}

#[test]
fn gated_second_derivative_special_cases() {
    let values = AffineEmbedding::new(
        DVector::from_vec(vec![1.0, 2.0, -3.0]),
        DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.0, 1.0, 2.0, -1.0]),
    )
    .unwrap();
    let steps = Steps::default();
    let constant = FnEmbedding::new(2, 3, |_| DVector::from_vec(vec![0.3, 0.3, 0.9]));
    let h = gated_second_derivative(&values, &constant, &[0.4, 0.1], &steps).unwrap();
    assert!(h.iter().all(|m| m.amax() < 1e-12));

    // g = e_m ψ with ψ(p) = 0, ∇ψ(p) = 0, ∂₁₁ψ(p) = 1 and other second derivatives 0
    let p0 = [0.25, -0.5];
    let m = 1;
    let bump = FnEmbedding::new(2, 3, move |p| {
        let mut out = DVector::zeros(3);
        out[m] = 0.5 * (p[0] - p0[0]).powi(2);
        out
    });
    let h = gated_second_derivative(&values, &bump, &p0, &steps).unwrap();
    let y = values.evaluate(&p0);
    assert_abs_diff_eq!(h[m][(0, 0)], y[m], epsilon = 1e-6);
    assert_abs_diff_eq!(h[m][(0, 1)], 0.0, epsilon = 1e-6);
    assert_abs_diff_eq!(h[m][(1, 1)], 0.0, epsilon = 1e-6);
    assert!(h[0].amax() < 1e-9 && h[2].amax() < 1e-9);
}

#[test]
fn constant_coordinates_do_not_change_curvature() {
    let base = MetricField::euclidean(sphere_patch());
    let lifted = MetricField::euclidean(WithConstantCoords {
        inner: sphere_patch(),
        constants: vec![1.0, -2.0, 3.5, 0.25, 9.0],
    });
    let p = [0.3, 0.2];
    let k0 = base.gaussian_curvature_at(&p).unwrap();
    let k1 = lifted.gaussian_curvature_at(&p).unwrap();
    assert!((k0 - k1).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn riemann_index_symmetries(seed in 0u64..10_000, u in -0.4f64..0.4, v in -0.4f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = MetricField::euclidean(random_cubic(&mut rng));
        let r = field.riemann_at(&[u, v]).unwrap();
        // stencil tolerance ~1e-4 on O(1) curvature
        prop_assert!(r.symmetry_defect() < 1e-3, "defect {}", r.symmetry_defect());
    }

    #[test]
    fn whitening_commutes_with_curvature(
        seed in 0u64..10_000,
        cond in 1.0f64..20.0,
        u in -0.4f64..0.4,
        v in -0.4f64..0.4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries: Vec<f64> = vec![1.0, cond, rng.gen_range(1.0..cond.max(1.0 + 1e-9))];
        entries.rotate_left(rng.gen_range(0..3));
        let prec = PrecisionSpec::diagonal(entries).unwrap();
        let emb = random_cubic(&mut rng);
        let direct = MetricField::new(emb.clone(), prec.clone()).gaussian_curvature_at(&[u, v]).unwrap();
        let whitened = MetricField::euclidean(whiten(emb, &prec)).gaussian_curvature_at(&[u, v]).unwrap();
        prop_assert!((direct - whitened).abs() < 1e-3, "{direct} vs {whitened}");
    }

    #[test]
    fn metric_is_symmetric_psd(seed in 0u64..10_000, u in -0.5f64..0.5, v in -0.5f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = MetricField::euclidean(random_cubic(&mut rng)).metric_at(&[u, v]).unwrap();
        prop_assert!((&g - g.transpose()).amax() <= 1e-12);
        prop_assert!(g.symmetric_eigenvalues().min() >= -1e-10);
    }
}
