use proptest::prelude::*;

use dynalign::dynsys::{EncodingConfig, State3, SystemParams};
use dynalign::encoders::{batch_encode, encode, EncoderSpec};
use dynalign::infodyn::{mutual_info, MiTarget};
use dynalign::lyapunov::{spectrum, LyapunovConfig};
use dynalign::snn::{forward, lif_step, LifParams, NetworkModel, UnitKind};
use dynalign::statfit::{mann_whitney_u, pearson};
use dynalign::tasks::{discounted_returns, stratified_indices};
use dynalign::theory::{siegert_rate, variance_factor, RateInputs};
use dynalign::Stream;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oscillator_sum_is_minus_two_delta(delta in -1.5f64..10.0) {
        let sys = SystemParams::mixed_oscillator(delta);
        let sp = spectrum(&sys, State3::new(0.1, 0.0, 0.0), &LyapunovConfig::new(5.0)).unwrap();
        prop_assert!((sp.lambda_sum + 2.0 * delta).abs() < 1e-8);
        prop_assert!(sp.lambdas[0] >= sp.lambdas[1] && sp.lambdas[1] >= sp.lambdas[2]);
    }

    #[test]
    fn dynamical_encoding_shape(features in prop::collection::vec(0.0f64..1.0, 1..6), n in 1usize..6) {
        let spec = EncoderSpec::dynamical(SystemParams::lorenz(), EncodingConfig::new(2.0, n));
        let seq = encode(&spec, &features, &mut Stream::new(0)).unwrap();
        prop_assert_eq!(seq.t, n);
        prop_assert_eq!(seq.width, 3 * features.len());
        prop_assert!(seq.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spike_encoders_are_binary(features in prop::collection::vec(0.0f64..=1.0, 1..8), seed in 0u64..100) {
        for spec in [
            EncoderSpec::Rate { steps: 6 },
            EncoderSpec::Latency { steps: 6 },
            EncoderSpec::Phase { steps: 6 },
            EncoderSpec::Ttfs { steps: 6, threshold: 0.2 },
            EncoderSpec::Delta { steps: 6, threshold: 0.1 },
            EncoderSpec::Burst { steps: 6, threshold: 0.5, decay: 0.95 },
        ] {
            let seq = encode(&spec, &features, &mut Stream::new(seed)).unwrap();
            prop_assert!(seq.values.iter().all(|&v| v == 0.0 || v == 1.0), "{:?}", spec);
        }
        let lat = encode(&EncoderSpec::Latency { steps: 6 }, &features, &mut Stream::new(seed)).unwrap();
        for j in 0..features.len() {
            let count: f64 = (0..6).map(|t| lat.step(t)[j]).sum();
            prop_assert_eq!(count, 1.0);
        }
    }

    #[test]
    fn batch_encoding_is_deterministic(rows in prop::collection::vec(0.0f64..1.0, 6..18), seed in 0u64..50) {
        let d = 3;
        let n = rows.len() / d;
        let data = &rows[..n * d];
        let spec = EncoderSpec::Rate { steps: 4 };
        let all = batch_encode(&spec, data, d, seed).unwrap();
        let tail = batch_encode(&spec, &data[d..], d, seed).unwrap();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(&all, &batch_encode(&spec, data, d, seed).unwrap());
        prop_assert_eq!(tail.len(), n - 1);
    }

    #[test]
    fn soft_reset_subtracts_threshold(v in -2.0f64..2.0, i in -2.0f64..3.0) {
        let p = LifParams::default();
        let (s, v_next) = lif_step(v, i, &p);
        let v_pre = p.beta * v + i;
        prop_assert!(s == 0.0 || s == 1.0);
        prop_assert_eq!(s == 1.0, v_pre >= p.theta);
        prop_assert!((v_next - (v_pre - s * p.theta)).abs() < 1e-12);
    }

    #[test]
    fn lif_forward_emits_binary_spikes(seed in 0u64..40) {
        let m = NetworkModel::new(&[5, 7, 3], UnitKind::Lif, seed).unwrap();
        let mut rng = Stream::new(seed + 1);
        let vals: Vec<f64> = (0..5 * 4).map(|_| rng.uniform_range(0.0, 2.0)).collect();
        let seq = dynalign::encoders::InputSequence::new(vals, 4, 5, dynalign::encoders::InputKind::AnalogCurrent).unwrap();
        let tr = forward(&m, &seq).unwrap();
        prop_assert!(tr.spikes.iter().flatten().all(|&s| s == 0.0 || s == 1.0));
        prop_assert_eq!(tr.logits.len(), 4 * 3);
    }

    #[test]
    fn variance_factor_is_a_decreasing_fraction(a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(variance_factor(lo) <= 1.0 && variance_factor(hi) > 0.0);
        prop_assert!(variance_factor(lo) >= variance_factor(hi));
    }

    #[test]
    fn siegert_rate_increases_with_drive(mu in 0.3f64..1.6, dmu in 0.01f64..0.5, sigma in 0.1f64..0.8) {
        let r = |m: f64| siegert_rate(&RateInputs { mu_v: m, sigma_eff: sigma, v_th: 1.0, v_reset: 0.0, tau_m: 1.0 }, 1e-10).unwrap().rate;
        prop_assert!(r(mu + dmu) >= r(mu));
    }

    #[test]
    fn pearson_is_bounded_and_affine_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 5..30),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
        seed in 0u64..100,
    ) {
        let mut rng = Stream::new(seed);
        let y: Vec<f64> = x.iter().map(|v| v + rng.normal()).collect();
        if let (Ok(c), Ok(c2)) = (pearson(&x, &y), pearson(&x.iter().map(|v| scale * v + shift).collect::<Vec<_>>(), &y)) {
            prop_assert!((-1.0..=1.0).contains(&c.r));
            prop_assert!((0.0..=1.0).contains(&c.p));
            prop_assert!((c.r - c2.r).abs() < 1e-9);
        }
    }

    #[test]
    fn mann_whitney_u_is_complementary(a in prop::collection::vec(-5.0f64..5.0, 3..12), b in prop::collection::vec(-5.0f64..5.0, 3..12)) {
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn mutual_information_is_bounded(labels in prop::collection::vec(0usize..4, 100..200), seed in 0u64..20) {
        let mut rng = Stream::new(seed);
        let x: Vec<f64> = labels.iter().map(|&l| l as f64 + 0.3 * rng.normal()).collect();
        let mi = mutual_info(&x, 1, MiTarget::Labels(&labels), 8, 10).unwrap();
        prop_assert!((0.0..=3.0 + 1e-12).contains(&mi));
    }

    #[test]
    fn stratified_split_keeps_class_proportions(labels in prop::collection::vec(0usize..3, 30..120), seed in 0u64..50) {
        let (keep, held) = stratified_indices(&labels, 3, 0.2, seed).unwrap();
        prop_assert_eq!(keep.len() + held.len(), labels.len());
        for c in 0..3 {
            let total = labels.iter().filter(|&&l| l == c).count() as f64;
            let h = held.iter().filter(|&&i| labels[i] == c).count() as f64;
            prop_assert!((h - 0.2 * total).abs() <= 1.0);
        }
        let mut all: Vec<usize> = keep.iter().chain(&held).copied().collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), labels.len());
    }

    #[test]
    fn discounted_returns_satisfy_the_recursion(rewards in prop::collection::vec(0.0f64..2.0, 1..40), gamma in 0.5f64..1.0) {
        let g = discounted_returns(&rewards, gamma);
        let n = rewards.len();
        prop_assert!((g[n - 1] - rewards[n - 1]).abs() < 1e-12);
        for t in 0..n - 1 {
            prop_assert!((g[t] - (rewards[t] + gamma * g[t + 1])).abs() < 1e-9);
        }
    }
}
