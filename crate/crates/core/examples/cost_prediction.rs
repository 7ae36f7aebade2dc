//! Generate an oracle dataset, train the model zoo and evaluate on a holdout.
//!
//! cargo run --release --example cost_prediction [-- graphs configs_per_graph]

use abacus::netgen::{generate_dataset, DatasetSpec};
use abacus::predictor::{split_dataset, train, Target, TrainedPredictor, ZooConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let graphs = args.next().transpose()?.unwrap_or(60);
    let configs = args.next().transpose()?.unwrap_or(10);

    let data = generate_dataset(&DatasetSpec { graphs, configs_per_graph: configs, seed: 42, ..Default::default() })?;
    let (train_set, test_set) = split_dataset(&data.dataset, 0.7, 42)?;
    println!("{} points: {} train / {} test", data.dataset.len(), train_set.len(), test_set.len());

    let p = train(&train_set, &ZooConfig::default(), 42)?;
    for t in Target::BOTH {
        println!("{t}:");
        let mut scores: Vec<_> = p.metadata().scores.iter().filter(|s| s.target == t).collect();
        scores.sort_by(|a, b| a.validation_mre.total_cmp(&b.validation_mre));
        for s in scores {
            println!("  {:>8.3}%  {}", 100.0 * s.validation_mre, s.member);
        }
    }
    let (time, mem) = p.evaluate(&test_set)?;
    println!("holdout MRE: time {:.2}%, memory {:.2}%", 100.0 * time, 100.0 * mem);

    let path = std::env::temp_dir().join("abacus-example.pred");
    p.save(&path)?;
    let back = TrainedPredictor::load(&path)?;
    assert_eq!(back.evaluate(&test_set)?, (time, mem));
    println!("predictor saved to {}", path.display());
    Ok(())
}
