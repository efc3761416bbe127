use gategeom::attention::*;
use gategeom::training::init_model;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

fn random_attention(rng: &mut ChaCha8Rng, d: usize) -> AttentionParams {
    AttentionParams {
        w_q: random_matrix(rng, d, d, 1.0),
        w_k: random_matrix(rng, d, d, 1.0),
        w_v: random_matrix(rng, d, d, 1.0),
        w_o: random_matrix(rng, d, d, 1.0),
        scale: 1.0 / (d as f64).sqrt(),
    }
}

#[test]
fn weight_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.gen_range(1..10);
        let d = rng.gen_range(1..6);
        let x = random_matrix(&mut rng, n, d, 3.0);
        let w = attention_weights(&x, &random_attention(&mut rng, d)).unwrap();
        for row in w.row_iter() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_survives_extreme_logits() {
    let scores = DMatrix::from_row_slice(3, 3, &[1e4, -1e4, 0.0, -1e4, -1e4, -1e4, 1e4, 1e4, 1e4 - 1.0]);
    let w = softmax_rows(&scores);
    for row in w.row_iter() {
        assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    assert_eq!(w[(0, 0)], 1.0);
    assert!((w[(1, 2)] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn zero_query_key_gives_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = random_attention(&mut rng, 4);
    params.w_q.fill(0.0);
    params.w_k.fill(0.0);
    let x = random_matrix(&mut rng, 5, 4, 2.0);
    let w = attention_weights(&x, &params).unwrap();
    assert!(w.iter().all(|&v| v == 0.2));
    let y = attention_output(&x, &params).unwrap();
    let mean_value = ((&x * &params.w_v) * &params.w_o).row_mean();
    for row in y.row_iter() {
        assert!((row - &mean_value).amax() < 1e-12);
    }
}

#[test]
fn single_token_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = random_attention(&mut rng, 3);
    let x = random_matrix(&mut rng, 1, 3, 2.0);
    assert_eq!(attention_weights(&x, &params).unwrap()[(0, 0)], 1.0);
    let u = (&x * &params.w_v) * &params.w_o;
    assert!((attention_output(&x, &params).unwrap() - u).amax() < 1e-15);
}

#[test]
fn identical_tokens_give_identical_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = random_attention(&mut rng, 3);
    let t = random_matrix(&mut rng, 1, 3, 2.0);
    let x = DMatrix::from_fn(6, 3, |_, j| t[(0, j)]);
    let y = attention_output(&x, &params).unwrap();
    for row in y.row_iter() {
        assert!((row - y.row(0)).amax() < 1e-14);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let params = AttentionParams::zeros(3);
    let x = DMatrix::zeros(2, 4);
    assert!(matches!(
        attention_weights(&x, &params),
        Err(gategeom::Error::Dimension { expected: 3, got: 4 })
    ));
}

#[test]
fn strength_endpoints_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let y = random_matrix(&mut rng, 4, 3, 3.0);
        let w = random_matrix(&mut rng, 3, 3, 2.0);
        let zero = apply_gate(&y, &GateSpec::strength(0.0).unwrap(), &w).unwrap();
        assert_eq!(zero, y);
        let one = apply_gate(&y, &GateSpec::strength(1.0).unwrap(), &w).unwrap();
        let sig = apply_gate(&y, &GateSpec::new(GateVariant::GatedSigmoid), &w).unwrap();
        assert_eq!(one, sig);
        let direct = y.zip_map(&(&y * &w), |a, z| a * sigmoid(z));
        assert_eq!(sig, direct);
    }
}

#[test]
fn nonsparse_with_zero_weights_scales_by_three_quarters() {
    let y = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 4.0]);
    let out = apply_gate(&y, &GateSpec::new(GateVariant::GatedNonsparse), &DMatrix::zeros(2, 2)).unwrap();
    assert_eq!(out, &y * 0.75);
}

#[test]
fn silu_matches_direct_evaluation() {
    for i in -200..=200 {
        let x = i as f64 * 0.1;
        let direct = x / (1.0 + (-x).exp());
        assert!((silu(x) - direct).abs() < 1e-12);
        let h = 1e-6;
        let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
        assert!((silu_grad(x) - fd).abs() < 1e-8);
    }
    let y = DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 2.0]);
    let out = apply_gate(&y, &GateSpec::new(GateVariant::Silu), &DMatrix::zeros(0, 0)).unwrap();
    assert_eq!(out, y.map(silu));
}

#[test]
fn logit_inverts_sigmoid_and_reports_clamping() {
    for p in [0.1, 0.5, 0.73, 0.999] {
        let (z, clamped) = logit_clamped(p);
        assert!(!clamped);
        assert!((sigmoid(z) - p).abs() < 1e-14);
    }
    assert!(logit_clamped(0.0).1);
    assert!(logit_clamped(1.0).1);
    assert!(logit(0.0).is_finite());
}

#[test]
fn variant_names_round_trip() {
    for v in GateVariant::ALL {
        assert_eq!(v.as_str().parse::<GateVariant>().unwrap(), v);
    }
    assert!(matches!("tanh".parse::<GateVariant>(), Err(gategeom::Error::Config(_))));
    assert!(GateSpec::strength(-0.1).is_err());
}

#[test]
fn zero_model_gives_zero_logits_and_bias_representation() {
    let model = Model::zeros(ModelConfig::default(), GateSpec::new(GateVariant::GatedSigmoid));
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
    assert_eq!(model.forward(&x).unwrap(), DVector::zeros(2));
    let mut model = model;
    model.params.ln_bias = DMatrix::from_fn(1, 64, |_, j| j as f64 * 0.01);
    let pooled = model.pooled_representation(&x).unwrap();
    assert!((pooled - model.params.ln_bias.transpose()).amax() < 1e-15);
}

fn perturbed(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
}

#[test]
fn model_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for variant in GateVariant::ALL {
        let mut model = init_model(ModelConfig::default(), GateSpec::new(variant), 1);
        perturbed(&mut model, 2);
        for _ in 0..5 {
            let x = random_matrix(&mut rng, 8, 2, 2.0);
            let mut rows: Vec<usize> = (0..8).collect();
            rows.reverse();
            rows.swap(0, 3);
            let permuted = x.select_rows(&rows);
            let a = model.forward(&x).unwrap();
            let b = model.forward(&permuted).unwrap();
            assert!((a - b).amax() < 1e-10);
            let pa = model.pooled_representation(&x).unwrap();
            let pb = model.pooled_representation(&permuted).unwrap();
            assert!((pa - pb).amax() < 1e-10);
        }
    }
}

#[test]
fn ungated_identity_norm_is_affine_on_constant_sequences() {
    let config = ModelConfig {
        norm: NormMode::Identity,
        ..ModelConfig::default()
    };
    let mut model = init_model(config, GateSpec::new(GateVariant::Ungated), 3);
    perturbed(&mut model, 4);
    let f = |c: [f64; 2]| {
        let x = DMatrix::from_fn(8, 2, |_, j| c[j]);
        model.pooled_representation(&x).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps = 1e-2;
    for _ in 0..20 {
        let c = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let v = [theta.cos(), theta.sin()];
        let second = (f([c[0] + eps * v[0], c[1] + eps * v[1]]) - 2.0 * f(c) + f([c[0] - eps * v[0], c[1] - eps * v[1]]))
            / (eps * eps);
        assert!(second.norm() < 1e-6, "{}", second.norm());
    }
    // the gated model is not affine on the same inputs
    let mut gated = model.clone();
    gated.gate = GateSpec::new(GateVariant::GatedSigmoid);
    let g = |c: [f64; 2]| gated.pooled_representation(&DMatrix::from_fn(8, 2, |_, j| c[j])).unwrap();
    let second = (g([0.51, 0.3]) - 2.0 * g([0.5, 0.3]) + g([0.49, 0.3])) / 1e-4;
    assert!(second.norm() > 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_simplex_points(vals in prop::collection::vec(-1e4f64..1e4, 12)) {
        let w = softmax_rows(&DMatrix::from_row_slice(3, 4, &vals));
        for row in w.row_iter() {
            prop_assert!(row.iter().all(|&v| v >= 0.0 && v.is_finite()));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_output_is_continuous_in_alpha(alpha in 0.0f64..2.0, y in -3.0f64..3.0, z in -5.0f64..5.0) {
        let a = GateSpec::strength(alpha).unwrap().gate_factor(z).0 * y;
        let b = GateSpec::strength(alpha + 1e-9).unwrap().gate_factor(z).0 * y;
        prop_assert!((a - b).abs() < 1e-8);
    }
}
