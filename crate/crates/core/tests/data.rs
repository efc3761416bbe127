use gategeom::data::*;
use proptest::prelude::*;

#[test]
fn generation_is_deterministic() {
    let spec = DatasetSpec::default();
    let a = generate(&spec, 11).unwrap();
    let b = generate(&spec, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(dataset_csv(&a.train), dataset_csv(&b.train));
    assert_ne!(a, generate(&spec, 12).unwrap());
    assert_eq!(a.train.len(), 4000);
    assert_eq!(a.test.len(), 1000);
    assert!(a.train.iter().all(|s| s.tokens.len() == 8));
}

#[test]
fn train_and_test_streams_differ() {
    let d = generate(&DatasetSpec::default(), 0).unwrap();
    assert_ne!(d.train[0].center, d.test[0].center);
}

#[test]
fn noise_variance_matches_sigma() {
    let d = generate(&DatasetSpec::default(), 3).unwrap();
    for axis in 0..2 {
        let devs: Vec<f64> = d
            .train
            .iter()
            .chain(&d.test)
            .flat_map(|s| s.tokens.iter().map(move |t| t[axis] - s.center[axis]))
            .collect();
        let n = devs.len() as f64;
        let mean = devs.iter().sum::<f64>() / n;
        let var = devs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.036..=0.044).contains(&var), "axis {axis}: {var}");
    }
}

#[test]
fn token_mean_stays_near_center() {
    let d = generate(&DatasetSpec::default(), 4).unwrap();
    let bound = 3.0 * 0.2 / 8f64.sqrt();
    let within = d
        .train
        .iter()
        .filter(|s| {
            (0..2).all(|a| {
                let m = s.tokens.iter().map(|t| t[a]).sum::<f64>() / 8.0;
                (m - s.center[a]).abs() <= bound
            })
        })
        .count();
    assert!(within as f64 / d.train.len() as f64 >= 0.99);
}

#[test]
fn curved_classes_are_balanced() {
    for seed in 0..3 {
        let d = generate(&DatasetSpec::default(), seed).unwrap();
        let frac = d.train.iter().filter(|s| s.label == 1).count() as f64 / 4000.0;
        assert!((0.3..=0.7).contains(&frac), "{frac}");
    }
}

#[test]
fn labels_depend_only_on_centers() {
    let spec = DatasetSpec::default();
    let a = generate_with_noise_seed(&spec, 5, 100).unwrap();
    let b = generate_with_noise_seed(&spec, 5, 200).unwrap();
    for (x, y) in a.train.iter().zip(&b.train) {
        assert_eq!(x.center, y.center);
        assert_eq!(x.label, y.label);
        assert_ne!(x.tokens, y.tokens);
    }
    for s in &a.train {
        assert_eq!(s.label, curved_label(s.center));
        assert!(s.center.iter().all(|v| (-2.0..2.0).contains(v)));
    }
}

#[test]
fn linear_task_uses_its_direction() {
    let spec = DatasetSpec::with_task(Task::linear_default());
    let d = generate(&spec, 0).unwrap();
    for s in &d.test {
        assert_eq!(s.label, u8::from(s.center[0] + s.center[1] > 0.0));
    }
    assert!(generate(&DatasetSpec::with_task(Task::Linear { w: [0.0, 0.0] }), 0).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        DatasetSpec { seq_len: 0, ..DatasetSpec::default() },
        DatasetSpec { noise_sigma: -1.0, ..DatasetSpec::default() },
        DatasetSpec { center_box: [1.0, 1.0], ..DatasetSpec::default() },
    ];
    for spec in bad {
        assert!(generate(&spec, 0).is_err());
    }
}

#[test]
fn orthogonal_center_is_label_zero() {
    assert_eq!(linear_label([1.0, -1.0], [1.0, 1.0]).unwrap(), 0);
}

#[test]
fn grid_rows_and_labels() {
    let rows = latent_grid(7, [-2.0, 2.0], &Task::Curved, None).unwrap();
    assert_eq!(rows.len(), 49);
    assert!(rows.iter().all(|r| r.true_label == curved_label(r.center)));
    assert_eq!(rows[0].center, [-2.0, -2.0]);
    assert_eq!(rows[1].center[1], -2.0);
    let csv = grid_csv(&rows);
    assert_eq!(csv.lines().count(), 50);
    assert_eq!(csv.lines().next().unwrap(), GRID_HEADER);
    assert!(latent_grid(0, [-2.0, 2.0], &Task::Curved, None).is_err());
    let single = latent_grid(1, [-2.0, 2.0], &Task::Curved, None).unwrap();
    assert_eq!(single[0].center, [0.0, 0.0]);
}

#[test]
fn grid_carries_predictions() {
    let predict = |c: [f64; 2]| -> gategeom::Result<[f64; 2]> { Ok([0.0, c[0]]) };
    let rows = latent_grid(3, [-1.0, 1.0], &Task::Curved, Some(&predict)).unwrap();
    assert_eq!(rows[2].prediction, Some((1, [0.0, 1.0])));
    assert_eq!(rows[0].prediction, Some((0, [0.0, -1.0])));
    assert!(grid_csv_row(&rows[2]).ends_with(",1,0.0,1.0"));
}

#[test]
fn dataset_csv_layout() {
    let spec = DatasetSpec {
        n_train: 3,
        n_test: 1,
        ..DatasetSpec::default()
    };
    let d = generate(&spec, 0).unwrap();
    let csv = dataset_csv(&d.train);
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("center_x,center_y,label,token_0_x,token_0_y"));
    assert!(header.ends_with("token_7_x,token_7_y"));
    assert_eq!(header.split(',').count(), 19);
    assert_eq!(csv.lines().count(), 4);
}

proptest! {
    #[test]
    fn linear_labels_flip_under_negation(cx in -2.0f64..2.0, cy in -2.0f64..2.0, angle in 0.0f64..std::f64::consts::TAU) {
        let w = [angle.cos(), angle.sin()];
        prop_assume!((w[0] * cx + w[1] * cy).abs() > 1e-12);
        let a = linear_label([cx, cy], w).unwrap();
        let b = linear_label([-cx, -cy], w).unwrap();
        prop_assert_eq!(a, 1 - b);
    }

    #[test]
    fn constant_sequence_repeats_center(cx in -2.0f64..2.0, cy in -2.0f64..2.0, n in 1usize..12) {
        let s = constant_sequence([cx, cy], n);
        prop_assert_eq!(s.len(), n);
        prop_assert!(s.iter().all(|t| *t == [cx, cy]));
    }
}
