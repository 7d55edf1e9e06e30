use opto_dfa::data::{load_cora, Dataset};
use opto_dfa::models::{Activation, Network};
use opto_dfa::rng::SplitMix64;
use opto_dfa::train::{cora_defaults, train, Mode};
use std::time::Instant;

fn main() {
    let g = load_cora::<f32>(
        std::path::Path::new("data/cora/cora.content.gz"),
        std::path::Path::new("data/cora/cora.cites.gz"),
    )
    .unwrap();
    let ds = Dataset::Graph(g);

    for mode in [Mode::Bp, Mode::Dfa, Mode::DfaTernary, Mode::DfaOptical, Mode::Shallow] {
        let defaults = cora_defaults(mode);
        let mut net = Network::<f32>::graph_conv(
            &defaults.dims,
            defaults.activation,
            &mut SplitMix64::new(defaults.config.weight_seed),
        )
        .unwrap();
        let t = Instant::now();
        let reports = train(&mut net, &ds, &defaults.config, |_| {}).unwrap();
        let r = reports.last().unwrap();
        println!(
            "{mode}: total {:.1}s train_acc {:.3} val {:.3} test {:.3} loss {:.4}",
            t.elapsed().as_secs_f64(),
            r.train_acc,
            r.val_acc.unwrap(),
            r.test_acc.unwrap(),
            r.train_loss
        );
    }
}
