#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::time::Instant;

use autosnap::autoencoder::{cosine_lr, random_corpus, AeConfig, Autoencoder};
use autosnap::snap::{random_snap, SnapSequence, RANDOM_LEN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let epochs = args.first().copied().unwrap_or(2);
    let n = args.get(1).copied().unwrap_or(5000);
    let batch = args.get(2).copied().unwrap_or(32);
    let mut held_rng = ChaCha8Rng::seed_from_u64(1);
    let held: Vec<SnapSequence> = (0..1000).map(|_| random_snap(&mut held_rng, RANDOM_LEN).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = AeConfig { batch_size: batch, ..AeConfig::default() };
    let mut ae = Autoencoder::<f32>::new(cfg, &mut rng);
    let mut opt = ae.optimizer();
    let t = Instant::now();
    for e in 0..epochs {
        opt.set_lr(cosine_lr(cfg.lr, e, epochs));
        let corpus = random_corpus(&mut rng, n, cfg.max_len);
        let l = ae.train_epoch(&mut opt, &corpus, &[], &mut rng).unwrap();
        if e % 10 == 9 || e + 1 == epochs {
            let (tok, seq) = ae.reconstruction_accuracy(&held).unwrap();
            println!("epoch {e} {:.0}s {l:?} tok={tok:.4} seq={seq:.4}", t.elapsed().as_secs_f64());
        }
    }
}
