use std::path::Path;

use abacus::predictor::{mre, Dataset, Target, TrainedPredictor};
use abacus::scheduler::{ga_schedule, two_machine_instance, GaParams};

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("abacus").chain(args.iter().copied());
    let code = abacus::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CNN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/small_cnn.json");

#[test]
fn validate_reports_ok_and_problems() {
    assert_eq!(run(&["validate", "--graph", SMALL_CNN]), (0, "OK\n".into(), String::new()));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"input_shape":[3,8,8],"nodes":[{"id":0,"op":"ReLU"},{"id":1,"op":"ReLU"}],"edges":[[0,1],[1,0]]}"#).unwrap();
    let (code, out, _) = run(&["validate", "--graph", p(&bad)]);
    assert_eq!(code, 1);
    assert!(out.contains("cycle"), "{out}");

    let (code, _, err) = run(&["validate", "--graph", p(&dir.path().join("missing.json"))]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error:"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["train", "--data", "x.csv"]).0, 2);
    assert_eq!(run(&["generate", "--out", "x"]).0, 2, "seed is mandatory");
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("schedule"));
}

#[test]
fn nsm_and_features_output() {
    let (code, out, _) = run(&["nsm", "--graph", SMALL_CNN]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].starts_with("src\\dst,Add,"));

    let (code, out, _) = run(&["features", "--graph", SMALL_CNN]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 154);
    assert!(lines[1].starts_with("1,32,32,3,0.1,1,0,7,"));
}

#[test]
fn generate_train_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = d.join("gen");
    let (code, out, err) = run(&["generate", "--out", p(&gen), "--seed", "3", "--count", "40", "--max-nodes", "20"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "40\n");
    assert_eq!(std::fs::read_dir(gen.join("graphs")).unwrap().count(), 40);

    let data = gen.join("dataset.csv");
    let (a, b, hold) = (d.join("a.pred"), d.join("b.pred"), d.join("hold.csv"));
    let (code, out, err) = run(&["train", "--data", p(&data), "--out", p(&a), "--seed", "5", "--holdout", p(&hold)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("target,model,validation_mre,holdout_mre\ntime_s,"));
    assert_eq!(run(&["--jobs", "2", "train", "--data", p(&data), "--out", p(&b), "--seed", "5"]).0, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "same seed, same artifact");

    let (code, out, _) = run(&["evaluate", "--pred", p(&a), "--data", p(&hold)]);
    assert_eq!(code, 0);
    let pred = TrainedPredictor::load(&a).unwrap();
    let ds = Dataset::load(&hold).unwrap();
    let preds = pred.predict_dataset(&ds).unwrap();
    let lib = |t: Target| mre(&preds.iter().map(|x| x.get(t)).collect::<Vec<_>>(), &ds.targets(t)).unwrap();
    assert_eq!(out, format!("target,mre\ntime_s,{}\nmem_mib,{}\n", lib(Target::Time), lib(Target::Memory)));

    let (code, out, _) = run(&["predict", "--pred", p(&a), "--data", p(&hold)]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), ds.len() + 1);
    let second = out.lines().nth(1).unwrap();
    assert_eq!(second, format!("{},{},{}", ds.points[0].provenance.graph_id, preds[0].time_s, preds[0].mem_mib));

    let graph = std::fs::read_dir(gen.join("graphs")).unwrap().next().unwrap().unwrap().path();
    let (code, out, err) = run(&["predict", "--pred", p(&a), "--graph", p(&graph)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn embed_train_then_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.emb");
    let args = ["embed", "--graph", SMALL_CNN, "--out", p(&model), "--seed", "1", "--dims", "8"];
    let (code, trained, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    assert!(trained.starts_with("graph_id,emb:0,"));
    let (code, reused, _) = run(&["embed", "--graph", SMALL_CNN, "--model", p(&model)]);
    assert_eq!(code, 0);
    assert_eq!(trained, reused);
    let (code, out, _) = run(&["features", "--graph", SMALL_CNN, "--structural", "embedding", "--model", p(&model)]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().next().unwrap().split(',').count(), 18);
}

#[test]
fn schedule_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (jobs, caps) = two_machine_instance(12, 4);
    let mut csv = String::from("job_id,machine_id,time_s,mem_mib\n");
    for j in &jobs {
        for (m, name) in ["big", "small"].iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", j.id, name, j.times[m], j.mems[m]));
        }
    }
    let path = dir.path().join("jobs.csv");
    std::fs::write(&path, csv).unwrap();
    let (code, out, err) = run(&["schedule", "--data", p(&path), "--capacities", "11264,8192", "--seed", "9", "--compare"]);
    assert_eq!(code, 0, "{err}");
    let lib = ga_schedule(&jobs, &caps, &GaParams { seed: 9, ..Default::default() }).unwrap();
    assert!(out.contains(&format!("\nresult,makespan_s,{}\n", lib.makespan)));
    assert_eq!(out.lines().filter(|l| l.starts_with("generation,")).count(), 21);
    assert!(out.contains("compare,optimum_s,"));
    assert!(out.contains("compare,random_mean_s,"));

    let (code, _, err) = run(&["schedule", "--data", p(&path), "--capacities", "10,10", "--seed", "1"]);
    assert_eq!(code, 1);
    assert!(err.contains("capacities"), "{err}");
}

#[test]
fn binary_runs() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_abacus"))
        .args(["validate", "--graph", SMALL_CNN])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "OK\n");
}
