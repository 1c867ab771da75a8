use dynalign::encoders::{InputKind, InputSequence};
use dynalign::infodyn::acf;
use dynalign::metrics::{deletion_robustness, effective_dim, linear_probe};
use dynalign::snn::{evaluate, train, NetworkModel, Split, TrainConfig, UnitKind};
use dynalign::tasks::{cartpole_step, gen_blobs, CartPoleState, Dataset};
use dynalign::theory::{ou_simulate, siegert_rate, OuParams, RateInputs};
use dynalign::Stream;

#[test]
fn csv_round_trip_preserves_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_blobs(60, 4, 3, 0.1, 3).unwrap();
    let path = dir.path().join("blobs.csv");
    ds.write_csv(&path).unwrap();
    let back = Dataset::read_csv(&path).unwrap();
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.d, 4);
    assert_eq!(back.features, ds.features);
    let header = std::fs::read_to_string(&path).unwrap();
    assert_eq!(header.lines().next().unwrap(), "f0,f1,f2,f3,label");
}

#[test]
fn csv_rejects_bad_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,b,label\n0.1,0.2,0\n").unwrap();
    assert!(Dataset::read_csv(&path).is_err());
}

#[test]
fn ou_moments_and_correlation_time() {
    let p = OuParams {
        mu: 0.5,
        sigma2: 0.04,
        tau_corr: 2.0,
        h: 0.01,
    };
    let mut rng = Stream::new(21);
    let xs = ou_simulate(&p, 0.5, 400_000, &mut rng).unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    assert!((var - 0.04).abs() < 0.004, "variance {var}");
    let a = acf(&xs[..40_000], p.h).unwrap();
    assert!((a.tau_corr - 2.0).abs() < 0.5, "tau_corr {}", a.tau_corr);
}

#[test]
fn siegert_tolerance_halving_changes_little() {
    let r = RateInputs {
        mu_v: 0.9,
        sigma_eff: 0.4,
        v_th: 1.0,
        v_reset: 0.0,
        tau_m: 10.0,
    };
    let a = siegert_rate(&r, 1e-6).unwrap().rate;
    let b = siegert_rate(&r, 5e-7).unwrap().rate;
    assert!((a - b).abs() <= 1e-6 * a);
    // Rate scales inversely with the membrane time constant.
    let c = siegert_rate(&RateInputs { tau_m: 20.0, ..r }, 1e-10).unwrap().rate;
    assert!((2.0 * c - a).abs() < 1e-6 * a);
}

#[test]
fn deep_subthreshold_rate_is_flagged_silent_or_tiny() {
    let r = RateInputs {
        mu_v: -30.0,
        sigma_eff: 0.05,
        v_th: 1.0,
        v_reset: 0.0,
        tau_m: 1.0,
    };
    let rate = siegert_rate(&r, 1e-8).unwrap();
    assert!(rate.silent || rate.rate < 1e-100);
}

#[test]
fn cartpole_push_right_from_rest() {
    let s = CartPoleState {
        x: 0.0,
        x_dot: 0.0,
        theta: 0.0,
        theta_dot: 0.0,
    };
    let (n, r, done) = cartpole_step(s, 1);
    // Closed form at theta = 0: x_acc = F/M + m l F / (M^2 l (4/3 - m/M)).
    let total = 1.1;
    let theta_acc = -(10.0 / total) / (0.5 * (4.0 / 3.0 - 0.1 / total));
    let x_acc = 10.0 / total - 0.05 * theta_acc / total;
    assert_eq!(r, 1.0);
    assert!(!done);
    assert_eq!(n.x, 0.0);
    assert!((n.x_dot - 0.02 * x_acc).abs() < 1e-12);
    assert!((n.theta_dot - 0.02 * theta_acc).abs() < 1e-12);
    let (l, _, _) = cartpole_step(s, 0);
    assert!((l.x_dot + n.x_dot).abs() < 1e-12);
}

#[test]
fn cartpole_terminates_outside_bounds() {
    let s = CartPoleState {
        x: 2.39,
        x_dot: 2.0,
        theta: 0.0,
        theta_dot: 0.0,
    };
    assert!(cartpole_step(s, 1).2);
}

#[test]
fn effective_dim_of_isotropic_data_is_near_full() {
    let mut rng = Stream::new(4);
    let (n, d) = (2000, 6);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
    let k = effective_dim(&x, n, d).unwrap();
    assert!(k >= d - 1, "effective dim {k}");
    // One dominant direction collapses it to 1.
    let y: Vec<f64> = (0..n)
        .flat_map(|i| {
            let a = x[i * d] * 100.0;
            (0..d).map(move |j| if j == 0 { a } else { 0.01 * (j as f64) })
        })
        .collect();
    assert_eq!(effective_dim(&y, n, d).unwrap(), 1);
}

#[test]
fn probe_on_shuffled_labels_is_near_chance() {
    let ds = gen_blobs(600, 5, 4, 0.05, 8).unwrap();
    let real = linear_probe(&ds.features, ds.d, &ds.labels, 0).unwrap();
    assert!(real.accuracy > 0.9);
    let mut labels = ds.labels.clone();
    Stream::new(99).shuffle(&mut labels);
    let shuffled = linear_probe(&ds.features, ds.d, &labels, 0).unwrap();
    assert!(shuffled.accuracy < 0.25 + 0.12, "shuffled probe {}", shuffled.accuracy);
}

fn static_split(ds: &Dataset) -> Vec<InputSequence> {
    (0..ds.len()).map(|i| InputSequence::repeated(ds.row(i), 1)).collect()
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let ds = gen_blobs(120, 3, 3, 0.1, 2).unwrap();
    let x = static_split(&ds);
    let m = NetworkModel::new(&[3, 6, 3], UnitKind::Relu, 1).unwrap();
    let cfg = TrainConfig {
        patience: 3,
        ..TrainConfig::new(0.0, 10, 0)
    };
    let split = Split::new(&x, &ds.labels).unwrap();
    let out = train(&m, split, split, &cfg).unwrap();
    assert_eq!(out.model.params, m.params);
    let accs: Vec<f64> = out.history.iter().map(|e| e.val_accuracy).collect();
    assert!(accs.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(out.history.len(), 4);
}

#[test]
fn training_separable_blobs_beats_chance() {
    let ds = gen_blobs(300, 3, 3, 0.05, 2).unwrap();
    let (tr, te) = ds.stratified_split(0.3, 1).unwrap();
    let (xtr, xte) = (static_split(&tr), static_split(&te));
    let m = NetworkModel::new(&[3, 16, 3], UnitKind::Relu, 1).unwrap();
    let out = train(
        &m,
        Split::new(&xtr, &tr.labels).unwrap(),
        Split::new(&xte, &te.labels).unwrap(),
        &TrainConfig::new(1e-2, 40, 0),
    )
    .unwrap();
    let ev = evaluate(&out.model, Split::new(&xte, &te.labels).unwrap()).unwrap();
    assert!(ev.accuracy > 0.9, "accuracy {}", ev.accuracy);
    let del = deletion_robustness(&out.model, Split::new(&xte, &te.labels).unwrap(), &[0.0, 0.5], 2, 3).unwrap();
    assert_eq!(del[0].accuracy, ev.accuracy);
    assert!(del[1].accuracy <= ev.accuracy + 0.05);
}

#[test]
fn input_sequence_validates_shape() {
    assert!(InputSequence::new(vec![0.0; 5], 2, 3, InputKind::AnalogCurrent).is_err());
}
