//! Feature vectors for one graph under several run configs.

use abacus::features::slot;
use abacus::{build_nsm, extract_features, load_graph, Optimizer, OperatorVocabulary, RunConfig, Structural};

fn main() -> anyhow::Result<()> {
    let g = load_graph(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/small_cnn.json"))?;
    let s = Structural::from_nsm(&build_nsm(&g, &OperatorVocabulary::default())?);

    let configs = [
        RunConfig::for_graph(&g, 1),
        RunConfig { optimizer: Optimizer::Adam, epochs: 3, ..RunConfig::for_graph(&g, 64) },
        RunConfig { input_h: 64, input_w: 64, ..RunConfig::for_graph(&g, 16) },
    ];
    for cfg in &configs {
        let f = extract_features(&g, cfg, &s)?;
        let base: Vec<String> = f.layout.columns()[..10]
            .iter()
            .zip(&f.values)
            .map(|(c, v)| format!("{c}={v}"))
            .collect();
        println!("{}", base.join(" "));
        println!("  structural nonzero: {}", f.structural().iter().filter(|v| **v != 0.0).count());
    }

    let f = extract_features(&g, &configs[0], &s)?;
    println!("\nlayout {:016x}: {} columns", f.layout.hash(), f.layout.len());
    println!("FLOPs slot {}, params slot {}", f.values[slot::FLOPS], f.values[slot::PARAMS]);
    Ok(())
}
