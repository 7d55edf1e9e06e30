use opto_dfa::data::{load_mnist, Dataset};
use opto_dfa::models::{Activation, Network};
use opto_dfa::rng::SplitMix64;
use opto_dfa::train::{train, Mode, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let data = load_mnist::<f32>(std::path::Path::new("data/mnist")).unwrap();
    println!("load: {:.1}s", t0.elapsed().as_secs_f64());
    let ds = Dataset::Tabular(data);

    for mode in [Mode::Bp, Mode::Dfa] {
        let mut cfg = TrainConfig::new(mode);
        cfg.epochs = 1;
        cfg.lr = 0.05;
        let mut net =
            Network::<f32>::dense(&[784, 256, 256, 10], Activation::Tanh, &mut SplitMix64::new(1))
                .unwrap();
        let t = Instant::now();
        let reports = train(&mut net, &ds, &cfg, |_| {}).unwrap();
        let r = reports.last().unwrap();
        println!(
            "{mode}: epoch {:.1}s total {:.1}s train_acc {:.4} test_acc {:.4} loss {:.4}",
            r.seconds,
            t.elapsed().as_secs_f64(),
            r.train_acc,
            r.test_acc.unwrap(),
            r.train_loss
        );
    }
}
