//! WL tokens and skipgram graph embeddings over a generated corpus.

use abacus::embedding::{cosine, train_embeddings, wl_tokens, EmbeddingParams};
use abacus::netgen::{generate_random_network, Family, GenSpec};

fn main() -> anyhow::Result<()> {
    let mut corpus = Vec::new();
    let mut graphs = Vec::new();
    for (i, family) in Family::ALL.iter().cycle().take(40).enumerate() {
        let g = generate_random_network(&GenSpec { family: *family, seed: i as u64, ..Default::default() })?;
        corpus.push(wl_tokens(&g, 2).with_id(format!("{family}-{i}")));
        graphs.push((*family, g));
    }
    println!("first bag: {} tokens, e.g. {:?}", corpus[0].tokens.len(), &corpus[0].tokens[..3]);

    let params = EmbeddingParams { dims: 32, epochs: 20, seed: 1, ..Default::default() };
    let model = train_embeddings(&corpus, &params)?;
    let losses: Vec<String> = model.epoch_losses.iter().map(|l| format!("{l:.3}")).collect();
    println!("vocabulary {} tokens, loss per epoch {}", model.tokens.len(), losses.join(" "));

    // mean similarity within and across families
    for a in Family::ALL {
        let row: Vec<String> = Family::ALL
            .iter()
            .map(|b| {
                let (mut sum, mut n) = (0.0, 0);
                for (i, (fa, _)) in graphs.iter().enumerate() {
                    for (j, (fb, _)) in graphs.iter().enumerate() {
                        if i != j && *fa == a && fb == b {
                            sum += cosine(&model.graph_vectors[i], &model.graph_vectors[j]);
                            n += 1;
                        }
                    }
                }
                format!("{:>6.3}", sum / n as f64)
            })
            .collect();
        println!("{:<10}{}", a.name(), row.join(" "));
    }

    let unseen = generate_random_network(&GenSpec { seed: 999, ..Default::default() })?;
    let v = model.embed(&unseen);
    let nearest = (0..graphs.len())
        .max_by(|&i, &j| cosine(&v, &model.graph_vectors[i]).total_cmp(&cosine(&v, &model.graph_vectors[j])))
        .unwrap();
    println!("unseen graph is closest to {}", model.graph_ids[nearest]);
    Ok(())
}
