//! Random network families and the synthetic cost oracle.

use abacus::features::{count_flops, count_params};
use abacus::netgen::{generate_random_network, synthetic_cost, Family, GenSpec, SyntheticCostParams};
use abacus::{Optimizer, RunConfig};

fn main() -> anyhow::Result<()> {
    let cost = SyntheticCostParams::default();
    for family in Family::ALL {
        let g = generate_random_network(&GenSpec { family, nodes: 25..=25, seed: 3, ..Default::default() })?;
        let shaped = g.infer_shapes(1)?;
        println!(
            "{family:<10} nodes {:>3}  params {:>10}  MFLOPs {:>9.1}",
            g.nodes.len(),
            count_params(&shaped)?,
            count_flops(&shaped)? as f64 / 1e6
        );
        for batch in [1, 32, 33, 128, 129, 256] {
            let c = synthetic_cost(&g, &RunConfig::for_graph(&g, batch), &cost)?;
            let adam = synthetic_cost(&g, &RunConfig { optimizer: Optimizer::Adam, ..RunConfig::for_graph(&g, batch) }, &cost)?;
            println!(
                "    batch {batch:>3}: {:>8.4} s  {:>7.1} MiB (Adam {:>7.1} MiB)",
                c.time_s, c.mem_mib, adam.mem_mib
            );
        }
    }
    Ok(())
}
