use dynalign::encoders::{InputKind, InputSequence};
use dynalign::rng::Stream;
use dynalign::snn::{backward, forward, loss, NetworkModel, ResetMode, SpikeFn, UnitKind};

fn random_input(width: usize, t: usize, seed: u64) -> InputSequence {
    let mut rng = Stream::new(seed);
    let values = (0..width * t).map(|_| rng.uniform_range(-1.0, 2.0)).collect();
    InputSequence::new(values, t, width, InputKind::AnalogCurrent).unwrap()
}

fn max_relative_error(model: &NetworkModel, seq: &InputSequence, label: usize) -> f64 {
    let tr = forward(model, seq).unwrap();
    let mut grad = vec![0.0; model.params.len()];
    backward(model, &tr, seq, label, &mut grad).unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let mut plus = model.clone();
        plus.params[i] += eps;
        let mut minus = model.clone();
        minus.params[i] -= eps;
        let lp = loss(&forward(&plus, seq).unwrap(), label).unwrap();
        let lm = loss(&forward(&minus, seq).unwrap(), label).unwrap();
        let fd = (lp - lm) / (2.0 * eps);
        let err = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

fn smooth_net(sizes: &[usize], reset: ResetMode, seed: u64) -> NetworkModel {
    let mut m = NetworkModel::new(sizes, UnitKind::Lif, seed).unwrap();
    m.spike_fn = SpikeFn::Smooth;
    m.slope = 2.0;
    m.reset = reset;
    for p in m.params.iter_mut() {
        *p *= 1.5;
    }
    m
}

#[test]
fn lif_backward_matches_finite_differences_soft_reset() {
    let m = smooth_net(&[4, 8, 5, 3], ResetMode::Soft, 3);
    let seq = random_input(4, 6, 11);
    let err = max_relative_error(&m, &seq, 1);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn lif_backward_matches_finite_differences_hard_reset() {
    let m = smooth_net(&[3, 6, 4], ResetMode::Hard, 5);
    let seq = random_input(3, 5, 12);
    let err = max_relative_error(&m, &seq, 2);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn relu_backward_matches_finite_differences() {
    let m = NetworkModel::new(&[5, 7, 6, 4], UnitKind::Relu, 9).unwrap();
    let seq = random_input(5, 3, 13);
    let err = max_relative_error(&m, &seq, 0);
    assert!(err < 1e-4, "max relative error {err}");
}
