use osgan::nn::{backward_network, forward_network, Activation, Checkpoint, NamedNetwork, NetworkSpec, ParamSet};
use osgan::verify::random_body;
use osgan::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(seed: u64) -> (NetworkSpec, ParamSet, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.gen_range(2..6);
    let net = random_body(&mut rng, input_dim, true).unwrap();
    let params = ParamSet::init(&net, &mut rng);
    let batch = rng.gen_range(2..6);
    let len: usize = net.input_shape.iter().product();
    let x: Vec<f64> = (0..batch * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut shape = vec![batch];
    shape.extend(&net.input_shape);
    (net, params, Tensor::new(shape, x).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zeroed_output_gradient_zeroes_that_instance_trace(seed in any::<u64>(), pick in 0usize..6) {
        let (net, params, x) = random_net(seed);
        let (out, cache) = forward_network(&net, &params, &x, true).unwrap();
        let j = pick % x.batch();
        let mut seed_grad = out.map(|v| v.sin() + 1.5);
        seed_grad.instance_mut(j).iter_mut().for_each(|v| *v = 0.0);
        let b = backward_network(&net, &params, cache.as_ref().unwrap(), &seed_grad, true).unwrap();
        let trace = b.trace.unwrap();
        prop_assert_eq!(trace.records.len(), net.depth() + 1);
        for r in &trace.records {
            prop_assert!(r.grad.instance(j).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn instance_gradients_do_not_depend_on_batch_mates(seed in any::<u64>()) {
        let (net, params, x) = random_net(seed);
        let (out, cache) = forward_network(&net, &params, &x, true).unwrap();
        let g = out.map(|v| v.cos());
        let full = backward_network(&net, &params, cache.as_ref().unwrap(), &g, false).unwrap();
        let x0 = x.slice_batch(0, 1).unwrap();
        let (o0, c0) = forward_network(&net, &params, &x0, true).unwrap();
        prop_assert_eq!(o0.data(), out.instance(0));
        let g0 = g.slice_batch(0, 1).unwrap();
        let single = backward_network(&net, &params, c0.as_ref().unwrap(), &g0, false).unwrap();
        prop_assert_eq!(single.input_grad.data(), full.input_grad.instance(0));
    }

    #[test]
    fn passes_are_bitwise_deterministic(seed in any::<u64>()) {
        let run = || {
            let (net, params, x) = random_net(seed);
            let (out, cache) = forward_network(&net, &params, &x, true).unwrap();
            let b = backward_network(&net, &params, cache.as_ref().unwrap(), &out, true).unwrap();
            (out, b.input_grad, b.param_grads.unwrap().flatten(), b.trace.unwrap())
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0.data(), b.0.data());
        prop_assert_eq!(a.1.data(), b.1.data());
        prop_assert_eq!(a.2, b.2);
        prop_assert_eq!(a.3, b.3);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), step in any::<u64>()) {
        let (net, params, _) = random_net(seed);
        let head = NetworkSpec::mlp(&[3, 5, 1], Activation::Tanh, Some(Activation::Sigmoid)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let hp = ParamSet::init(&head, &mut rng);
        let ck = Checkpoint {
            seed,
            step,
            networks: vec![
                NamedNetwork { name: "body".into(), spec: net, params },
                NamedNetwork { name: "head".into(), spec: head, params: hp },
            ],
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes(), bytes);
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.networks.iter().flat_map(|n| n.params.flatten()).map(f64::to_bits).collect()
        };
        prop_assert_eq!(bits(&back), bits(&ck));
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let (net, params, _) = random_net(9);
    let ck = Checkpoint {
        seed: 9,
        step: 1,
        networks: vec![NamedNetwork { name: "d".into(), spec: net, params }],
    };
    let bytes = ck.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&flipped).is_err());
}
