use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmap::nn::{checkpoint_load, checkpoint_save, Activation, Architecture, Mlp, OutputActivation};

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    (
        1usize..4,
        prop::collection::vec(1usize..7, 0..4),
        1usize..4,
        prop_oneof![Just(Activation::Tanh), Just(Activation::LeakyRelu(0.2)), Just(Activation::Identity)],
        prop_oneof![Just(OutputActivation::Identity), Just(OutputActivation::Tanh)],
    )
        .prop_map(|(input_dim, hidden_widths, output_dim, activation, output_activation)| Architecture {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
            output_activation,
        })
}

fn random_net(arch: Architecture, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = arch.param_count();
    let params = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    Mlp::from_params(arch, params).unwrap()
}

fn random_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-7 || diff <= 1e-4 * analytic.abs().max(numeric.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn backward_matches_central_differences(arch in arch_strategy(), seed in any::<u64>()) {
        let net = random_net(arch.clone(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = random_point(arch.input_dim, &mut rng);
        let out_seed = random_point(arch.output_dim, &mut rng);
        let g = net.backward(&out_seed, &x).unwrap();
        let objective = |m: &Mlp, x: &[f64]| -> f64 {
            m.forward(x).unwrap().iter().zip(&out_seed).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let mut probe = net.clone();
        for i in 0..net.params().len() {
            let mut p = net.params().to_vec();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let up = objective(&probe, &x);
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down = objective(&probe, &x);
            let numeric = (up - down) / (2.0 * h);
            prop_assert!(close(g.params[i], numeric), "param {i}: {} vs {numeric}", g.params[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let up = objective(&net, &xp);
            xp[i] -= 2.0 * h;
            let numeric = (up - objective(&net, &xp)) / (2.0 * h);
            prop_assert!(close(g.input[i], numeric), "input {i}: {} vs {numeric}", g.input[i]);
        }
    }

    #[test]
    fn clipping_is_idempotent_and_elementwise(arch in arch_strategy(), seed in any::<u64>(), c in 0.01f64..2.0) {
        let net = random_net(arch, seed);
        let mut once = net.clone();
        once.clip_weights(c).unwrap();
        let mut twice = once.clone();
        twice.clip_weights(c).unwrap();
        prop_assert_eq!(once.params(), twice.params());
        for (p, q) in net.params().iter().zip(once.params()) {
            prop_assert_eq!(*q, p.clamp(-c, c));
        }
        // Clipping to a looser bound first changes nothing.
        let mut loose_first = net.clone();
        loose_first.clip_weights(2.0 * c).unwrap();
        loose_first.clip_weights(c).unwrap();
        prop_assert_eq!(loose_first.params(), once.params());
    }

    #[test]
    fn lipschitz_bound_dominates_observed_slopes(arch in arch_strategy(), seed in any::<u64>()) {
        let net = random_net(arch.clone(), seed);
        let bound = net.lipschitz_upper_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        for _ in 0..100 {
            let x = random_point(arch.input_dim, &mut rng);
            let y = random_point(arch.input_dim, &mut rng);
            let fx = net.forward(&x).unwrap();
            let fy = net.forward(&y).unwrap();
            let gap = fx.iter().zip(&fy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(gap <= bound * dist + 1e-9, "{gap} > {bound} * {dist}");
        }
    }

    #[test]
    fn checkpoints_round_trip_exactly(arch in arch_strategy(), seed in any::<u64>()) {
        let net = random_net(arch, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.model");
        checkpoint_save(&net, &path).unwrap();
        let back = checkpoint_load(&path).unwrap();
        prop_assert_eq!(back, net);
    }
}

#[test]
fn lipschitz_examples() {
    let diag = |a: f64, b: f64, activation| {
        let arch = Architecture {
            input_dim: 2,
            hidden_widths: vec![],
            output_dim: 2,
            activation,
            output_activation: OutputActivation::Tanh,
        };
        Mlp::from_params(arch, vec![a, 0.0, 0.0, b, 0.0, 0.0]).unwrap()
    };
    assert!((diag(2.0, 3.0, Activation::Tanh).lipschitz_upper_bound() - 3.0).abs() < 1e-9);
    assert!((diag(1.0, 1.0, Activation::Tanh).lipschitz_upper_bound() - 1.0).abs() < 1e-9);
    assert_eq!(diag(0.0, 0.0, Activation::Tanh).lipschitz_upper_bound(), 0.0);
}
