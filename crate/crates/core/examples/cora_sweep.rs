use opto_dfa::data::{load_cora, Dataset};
use opto_dfa::models::Network;
use opto_dfa::rng::SplitMix64;
use opto_dfa::train::{cora_defaults, train, Mode};

fn main() {
    let g = load_cora::<f32>(
        std::path::Path::new("data/cora/cora.content.gz"),
        std::path::Path::new("data/cora/cora.cites.gz"),
    )
    .unwrap();
    let ds = Dataset::Graph(g);

    // (mode, lr, threshold, epochs)
    let mut cells: Vec<(Mode, f64, f64, usize)> = Vec::new();
    for &lr in &[0.3, 0.5, 0.7] {
        cells.push((Mode::Bp, lr, 1e-4, 500));
    }
    for &lr in &[1.0, 2.0, 5.0] {
        cells.push((Mode::Dfa, lr, 1e-4, 300));
    }
    for &tau in &[3e-4, 1e-3, 3e-3] {
        for &lr in &[0.05, 0.2, 0.5] {
            cells.push((Mode::DfaTernary, lr, tau, 300));
        }
    }
    for &lr in &[1.0, 5.0, 20.0] {
        cells.push((Mode::Shallow, lr, 1e-4, 300));
    }

    for (mode, lr, tau, epochs) in cells {
        let defaults = cora_defaults(mode);
        let mut cfg = defaults.config.clone();
        cfg.lr = lr;
        cfg.ternary_threshold = tau;
        cfg.epochs = epochs;
        let mut net = Network::<f32>::graph_conv(
            &defaults.dims,
            defaults.activation,
            &mut SplitMix64::new(cfg.weight_seed),
        )
        .unwrap();
        match train(&mut net, &ds, &cfg, |_| {}) {
            Ok(reports) => {
                let r = reports.last().unwrap();
                println!(
                    "{mode} lr={lr} tau={tau} ep={epochs}: val {:.3} test {:.3}",
                    r.val_acc.unwrap(),
                    r.test_acc.unwrap()
                );
            }
            Err(e) => println!("{mode} lr={lr} tau={tau}: ABORT {e}"),
        }
    }
}
