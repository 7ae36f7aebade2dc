//! Network structural matrices: edge counts between operator kinds.

use abacus::netgen::{generate_random_network, Family, GenSpec};
use abacus::{build_nsm, load_graph, Nsm, OperatorVocabulary};

fn print_nonzero(name: &str, m: &Nsm) {
    println!("{name}: {} edges", m.total());
    let kinds = m.vocabulary().kinds();
    for &src in kinds {
        for &dst in kinds {
            let n = m.get(src, dst);
            if n > 0 {
                println!("  {:<12} -> {:<12} {n}", src.name(), dst.name());
            }
        }
    }
}

fn main() -> anyhow::Result<()> {
    let vocab = OperatorVocabulary::default();
    let small = load_graph(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/small_cnn.json"))?;
    print_nonzero("small_cnn", &build_nsm(&small, &vocab)?);

    let g = generate_random_network(&GenSpec { family: Family::Residual, nodes: 20..=20, seed: 7, ..Default::default() })?;
    let m = build_nsm(&g, &vocab)?;
    print_nonzero("residual-20", &m);

    // same graph, different ids: identical matrix
    let shifted = g.relabel(|id| 1000 - id);
    assert_eq!(build_nsm(&shifted, &vocab)?, m);

    println!("\nflattened length {}; full CSV:\n{}", m.flatten().len(), m.to_csv());
    Ok(())
}
