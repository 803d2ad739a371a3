use autosnap::net::{MacroConfig, NetworkSpec, SnapNet};
use autosnap::nn::uniform;
use autosnap::snap::{random_snap, SnapSequence, RANDOM_LEN};
use autosnap::tensor::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_reaches_every_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let seq = random_snap(&mut rng, RANDOM_LEN).unwrap();
        let spec = NetworkSpec::from_snap(&seq, &MacroConfig::new(4, 4, 6).with_input_size(8)).unwrap();
        let mut net = SnapNet::<f64>::instantiate(&spec, &mut rng);
        let x: Tensor<f64> = uniform(&mut rng, &[2, 1, 8, 8], 1.0);
        let target: Tensor<f64> = uniform(&mut rng, &[2, 12], 1.0);
        let mut g = Graph::new();
        let vars = net.params.bind(&mut g);
        let xv = g.input(x);
        let y = net.forward(&mut g, &vars, xv, true).unwrap();
        assert_eq!(g.shape(y), &[2, 12]);
        let loss = g.mse(y, &target).unwrap();
        g.backward(loss).unwrap();
        for (b, ids) in net.block_params().iter().enumerate() {
            // blocks consisting only of pooling/topology symbols have no parameters
            if ids.is_empty() {
                continue;
            }
            let any = ids.iter().any(|id| g.grad(vars[id.0]).data().iter().any(|v| *v != 0.0));
            assert!(any, "{seq}: block {b} receives no gradient");
        }
    }
}

#[test]
fn wider_network_has_roughly_quadruple_weights() {
    let ratio = |snap: &SnapSequence| {
        let a = NetworkSpec::from_snap(snap, &MacroConfig::snapnet_a()).unwrap().param_count();
        let b = NetworkSpec::from_snap(snap, &MacroConfig::snapnet_b()).unwrap().param_count();
        b as f64 / a as f64
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ratios: Vec<f64> = (0..1000).map(|_| ratio(&random_snap(&mut rng, RANDOM_LEN).unwrap())).collect();
    ratios.sort_by(f64::total_cmp);
    println!(
        "ratio over random blocks: min {:.2} median {:.2} max {:.2}",
        ratios[0], ratios[500], ratios[999]
    );
    for s in ["C3", "D3", "S3", "B C3 M", "B D3 S3 X C1 M", "S3 B D3 C3 M"] {
        println!("{s:>16}: {:.3}", ratio(&SnapSequence::parse(s).unwrap()));
    }
    let within = ratios.iter().filter(|r| (3.0..=5.0).contains(*r)).count();
    println!("{within}/1000 random blocks within [3, 5]");
}
