//! Load a graph file, validate it, walk it in order and infer shapes.
//!
//! cargo run --example graph_basics [-- path/to/graph.json]

use abacus::features::{count_flops, count_layers, count_params};
use abacus::load_graph;

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/small_cnn.json").into());
    let g = load_graph(&path)?;
    let report = g.validate();
    println!("{path}: {} nodes, {} edges, validation {report}", g.nodes.len(), g.edges.len());
    if !report.ok {
        return Ok(());
    }

    let batch = 32;
    let shaped = g.infer_shapes(batch)?;
    for id in shaped.topological_order()? {
        let node = shaped.node(id).unwrap();
        println!("  {id:>3} {:<12} -> {:?}", node.op.name(), node.output_shape.as_ref().unwrap().dims());
    }

    println!("layers {}, params {}, forward FLOPs/sample {}", count_layers(&shaped), count_params(&shaped)?, count_flops(&shaped)?);
    let bytes = shaped.estimate_memory_shape_inference(batch, 4)?;
    println!("shape-inference memory at batch {batch}: {:.2} MiB", bytes as f64 / (1 << 20) as f64);
    Ok(())
}
