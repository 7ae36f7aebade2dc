//! The `abacus` command line. [`run`] is the whole program; the binary only
//! sets up logging and forwards `std::env::args`.
//!
//! Exit codes: 0 success, 1 domain error (invalid graph, infeasible
//! instance, bad data), 2 usage error. Results go to stdout as CSV or a
//! single value; diagnostics go to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::embedding::{train_embeddings, wl_tokens, EmbeddingModel, EmbeddingParams};
use crate::features::{extract_features, RunConfig, Structural};
use crate::graph::{graph_to_string, load_graph, ComputationGraph};
use crate::netgen::{generate_dataset, DatasetSpec, Family, StructuralMode};
use crate::nsm::{build_nsm, OperatorVocabulary};
use crate::predictor::{split_dataset, train, Dataset, Target, TrainedPredictor, ZooConfig};
use crate::scheduler::{
    brute_force_schedule, ga_schedule, random_schedule, read_jobs_csv, GaParams, DEFAULT_ENUMERATION_CAP,
};

#[derive(Parser, Debug)]
#[command(name = "abacus", version, about = "DNN training-cost prediction and job scheduling")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StructuralArg {
    Nsm,
    Embedding,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a graph file; prints OK or the list of issues.
    Validate {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Print the feature vector of a graph under a run config.
    Features {
        #[arg(long)]
        graph: PathBuf,
        /// Run config JSON; defaults to the graph's input shape, batch 1.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nsm")]
        structural: StructuralArg,
        /// Embedding model, required with `--structural embedding`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Print the network structural matrix as CSV.
    Nsm {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Train an embedding model on graphs (`--out`) or embed graphs with an
    /// existing one (`--model`). Prints one vector per graph.
    Embed {
        #[arg(long = "graph", required = true)]
        graphs: Vec<PathBuf>,
        #[arg(long, conflicts_with = "model", requires = "seed")]
        out: Option<PathBuf>,
        #[arg(long, required_unless_present = "out")]
        model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 64)]
        dims: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
    },
    /// Generate random graphs and a synthetic-oracle dataset into a directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, value_enum, default_value = "nsm")]
        structural: StructuralArg,
        /// Restrict to these families (comma separated).
        #[arg(long, value_delimiter = ',')]
        family: Vec<String>,
        #[arg(long, default_value_t = 5)]
        min_nodes: usize,
        #[arg(long, default_value_t = 60)]
        max_nodes: usize,
    },
    /// Split a dataset, train the model zoo and write the predictor.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Training share of the split; 1 trains on everything.
        #[arg(long, default_value_t = 0.7)]
        ratio: f64,
        /// Where to write the held-out part of the split.
        #[arg(long)]
        holdout: Option<PathBuf>,
    },
    /// Predict time and memory for a dataset or a single graph.
    Predict {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, conflicts_with = "graph")]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present = "data")]
        graph: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nsm")]
        structural: StructuralArg,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-target mean relative error of a predictor on a labelled dataset.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Assign jobs to machines with the genetic algorithm.
    Schedule {
        /// Jobs CSV: job_id,machine_id,time_s,mem_mib.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        capacities: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        machines: Option<Vec<String>>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        generations: usize,
        #[arg(long, default_value_t = 20)]
        population: usize,
        /// Also run the exhaustive and random baselines.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

/// Domain failure: exit code 1.
#[derive(Debug)]
struct DomainFailure;

impl std::fmt::Display for DomainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("domain failure")
    }
}

impl std::error::Error for DomainFailure {}

pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{}", e.render());
            return 2;
        }
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n);
    }
    let mut buf = Vec::new();
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command, &mut buf)),
        Err(e) => Err(e.into()),
    };
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            if !e.is::<DomainFailure>() {
                let _ = writeln!(err, "error: {e:#}");
            }
            1
        }
    }
}

fn read_config(path: Option<&Path>, g: &ComputationGraph) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::for_graph(g, 1)),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing run config {}", p.display()))
        }
    }
}

fn structural_for(g: &ComputationGraph, mode: StructuralArg, model: Option<&Path>) -> Result<Structural> {
    Ok(match mode {
        StructuralArg::Nsm => Structural::from_nsm(&build_nsm(g, &OperatorVocabulary::default())?),
        StructuralArg::Embedding => {
            let Some(path) = model else {
                bail!("--structural embedding needs --model");
            };
            Structural::from_embedding(EmbeddingModel::load(path)?.embed(g))
        }
    })
}

fn csv_line(out: &mut dyn Write, fields: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(fields.into_iter().collect::<Vec<_>>())?;
    out.write_all(&w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    Ok(())
}

fn graph_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Validate { graph } => {
            let g = load_graph(&graph)?;
            let report = g.validate();
            writeln!(out, "{report}")?;
            if !report.ok {
                return Err(DomainFailure.into());
            }
        }
        Command::Features {
            graph,
            config,
            structural,
            model,
        } => {
            let g = load_graph(&graph)?;
            let cfg = read_config(config.as_deref(), &g)?;
            let s = structural_for(&g, structural, model.as_deref())?;
            let fv = extract_features(&g, &cfg, &s)?;
            csv_line(out, fv.layout.columns().iter().cloned())?;
            csv_line(out, fv.values.iter().map(|v| v.to_string()))?;
        }
        Command::Nsm { graph } => {
            let g = load_graph(&graph)?;
            write!(out, "{}", build_nsm(&g, &OperatorVocabulary::default())?.to_csv())?;
        }
        Command::Embed {
            graphs,
            out: out_path,
            model,
            seed,
            dims,
            depth,
            epochs,
        } => {
            let loaded = graphs
                .iter()
                .map(|p| Ok((graph_stem(p), load_graph(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let vectors: Vec<(String, Vec<f64>)> = if let Some(path) = out_path {
                let params = EmbeddingParams {
                    dims,
                    depth,
                    epochs,
                    seed: seed.expect("clap requires --seed with --out"),
                    ..Default::default()
                };
                let corpus: Vec<_> = loaded
                    .iter()
                    .map(|(id, g)| wl_tokens(g, depth).with_id(id.clone()))
                    .collect();
                let m = train_embeddings(&corpus, &params)?;
                m.save(&path)?;
                m.graph_ids.iter().cloned().zip(m.graph_vectors.iter().cloned()).collect()
            } else {
                let m = EmbeddingModel::load(model.as_deref().expect("clap requires --model"))?;
                loaded.iter().map(|(id, g)| (id.clone(), m.embed(g))).collect()
            };
            let dims = vectors.first().map_or(0, |v| v.1.len());
            csv_line(out, std::iter::once("graph_id".to_string()).chain((0..dims).map(|i| format!("emb:{i}"))))?;
            for (id, v) in vectors {
                csv_line(out, std::iter::once(id).chain(v.iter().map(|x| x.to_string())))?;
            }
        }
        Command::Generate {
            out: dir,
            seed,
            count,
            structural,
            family,
            min_nodes,
            max_nodes,
        } => {
            let mut spec = DatasetSpec {
                graphs: count,
                seed,
                ..Default::default()
            };
            spec.template.nodes = min_nodes..=max_nodes;
            if !family.is_empty() {
                spec.families = family.iter().map(|f| f.parse::<Family>()).collect::<Result<_, _>>()?;
            }
            if let StructuralArg::Embedding = structural {
                spec.structural = StructuralMode::Embedding(EmbeddingParams {
                    seed,
                    ..Default::default()
                });
            }
            let generated = generate_dataset(&spec)?;
            let graph_dir = dir.join("graphs");
            fs::create_dir_all(&graph_dir).with_context(|| format!("creating {}", graph_dir.display()))?;
            for g in &generated.graphs {
                let path = graph_dir.join(format!("{}.json", g.id));
                fs::write(&path, graph_to_string(&g.graph)).with_context(|| format!("writing {}", path.display()))?;
            }
            generated.dataset.save(dir.join("dataset.csv"))?;
            if let Some(m) = &generated.embedding {
                m.save(dir.join("embedding.emb"))?;
            }
            writeln!(out, "{}", generated.dataset.len())?;
        }
        Command::Train {
            data,
            out: out_path,
            seed,
            ratio,
            holdout,
        } => {
            let ds = Dataset::load(&data)?;
            let (train_set, test_set) = if ratio == 1.0 {
                (ds, None)
            } else {
                let (a, b) = split_dataset(&ds, ratio, seed)?;
                (a, Some(b))
            };
            let p = train(&train_set, &ZooConfig::default(), seed)?;
            p.save(&out_path)?;
            let test_mre = match &test_set {
                Some(t) => Some(p.evaluate(t)?),
                None => None,
            };
            if let (Some(path), Some(t)) = (holdout, &test_set) {
                t.save(path)?;
            }
            writeln!(out, "target,model,validation_mre,holdout_mre")?;
            for target in Target::BOTH {
                let holdout_mre = test_mre
                    .map(|(t, m)| if target == Target::Time { t } else { m })
                    .map_or(String::new(), |v| v.to_string());
                csv_line(
                    out,
                    [
                        target.column().to_string(),
                        p.selected_member(target).label(),
                        p.selected_validation_mre(target).to_string(),
                        holdout_mre,
                    ],
                )?;
            }
        }
        Command::Predict {
            pred,
            data,
            graph,
            config,
            structural,
            model,
        } => {
            let p = TrainedPredictor::load(&pred)?;
            writeln!(out, "graph_id,time_s,mem_mib")?;
            if let Some(data) = data {
                let ds = Dataset::load(&data)?;
                for (point, pr) in ds.points.iter().zip(p.predict_dataset(&ds)?) {
                    csv_line(
                        out,
                        [point.provenance.graph_id.clone(), pr.time_s.to_string(), pr.mem_mib.to_string()],
                    )?;
                }
            } else {
                let path = graph.expect("clap requires --graph without --data");
                let g = load_graph(&path)?;
                let cfg = read_config(config.as_deref(), &g)?;
                let fv = extract_features(&g, &cfg, &structural_for(&g, structural, model.as_deref())?)?;
                let pr = p.predict(&fv)?;
                csv_line(out, [graph_stem(&path), pr.time_s.to_string(), pr.mem_mib.to_string()])?;
            }
        }
        Command::Evaluate { pred, data } => {
            let p = TrainedPredictor::load(&pred)?;
            let (t, m) = p.evaluate(&Dataset::load(&data)?)?;
            writeln!(out, "target,mre")?;
            writeln!(out, "time_s,{t}")?;
            writeln!(out, "mem_mib,{m}")?;
        }
        Command::Schedule {
            data,
            capacities,
            machines,
            seed,
            generations,
            population,
            compare,
            trials,
        } => {
            let file = fs::File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let (jobs, machine_ids) = read_jobs_csv(file, machines.as_deref())?;
            if capacities.len() != machine_ids.len() {
                bail!("{} capacities for {} machines", capacities.len(), machine_ids.len());
            }
            let params = GaParams {
                population_size: population,
                generations,
                seed,
                ..Default::default()
            };
            let r = ga_schedule(&jobs, &capacities, &params)?;
            writeln!(out, "section,key,value")?;
            for (job, &m) in jobs.iter().zip(&r.assignment) {
                csv_line(out, ["assignment".into(), job.id.clone(), machine_ids[m].clone()])?;
            }
            writeln!(out, "result,makespan_s,{}", r.makespan)?;
            for s in &r.log {
                writeln!(out, "generation,{},{}", s.generation, s.best)?;
            }
            if compare {
                match brute_force_schedule(&jobs, &capacities, DEFAULT_ENUMERATION_CAP) {
                    Ok((_, opt)) => writeln!(out, "compare,optimum_s,{opt}")?,
                    Err(e) => log::warn!("exhaustive baseline skipped: {e}"),
                }
                let rb = random_schedule(&jobs, &capacities, trials, seed)?;
                writeln!(out, "compare,random_mean_s,{}", rb.mean)?;
            }
        }
    }
    Ok(())
}
