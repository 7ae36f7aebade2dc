//! Assigning whole training jobs to machines to minimise makespan under a
//! per-machine memory capacity.
//!
//! Jobs on one machine run one after another, so a machine's peak memory is
//! the largest single job placed on it, not the sum.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `assignment[i]` is the machine index of job `i`.
pub type Assignment = Vec<usize>;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 22;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("invalid job data: {0}")]
    InvalidJobs(String),
    #[error("no assignment satisfies the memory capacities")]
    InfeasibleInstance,
    #[error("{machines}^{jobs} assignments exceed the enumeration cap of {cap}")]
    TooLarge { machines: usize, jobs: usize, cap: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    /// Predicted seconds on each machine.
    pub times: Vec<f64>,
    /// Predicted peak MiB on each machine.
    pub mems: Vec<f64>,
}

impl Job {
    /// Job with the same time and memory on every machine.
    pub fn uniform(id: impl Into<String>, time_s: f64, mem_mib: f64, machines: usize) -> Self {
        Job {
            id: id.into(),
            times: vec![time_s; machines],
            mems: vec![mem_mib; machines],
        }
    }
}

fn machine_count(jobs: &[Job]) -> Result<usize, SchedulerError> {
    let m = jobs.first().map_or(0, |j| j.times.len());
    for j in jobs {
        if j.times.len() != m || j.mems.len() != m {
            return Err(SchedulerError::InvalidJobs(format!(
                "job {} has {} times / {} memories, expected {m}",
                j.id,
                j.times.len(),
                j.mems.len()
            )));
        }
        if j.times.iter().chain(&j.mems).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SchedulerError::InvalidJobs(format!("job {} has a non-positive value", j.id)));
        }
    }
    Ok(m)
}

fn check_assignment(a: &[usize], jobs: &[Job], machines: usize) -> Result<(), SchedulerError> {
    if a.len() != jobs.len() {
        return Err(SchedulerError::InvalidAssignment(format!(
            "{} genes for {} jobs",
            a.len(),
            jobs.len()
        )));
    }
    if let Some((i, &m)) = a.iter().enumerate().find(|(_, &m)| m >= machines) {
        return Err(SchedulerError::InvalidAssignment(format!(
            "job {i} assigned to machine {m}, only {machines} machines"
        )));
    }
    Ok(())
}

fn makespan_unchecked(a: &[usize], jobs: &[Job], loads: &mut [f64]) -> f64 {
    loads.iter_mut().for_each(|l| *l = 0.0);
    for (j, &m) in jobs.iter().zip(a) {
        loads[m] += j.times[m];
    }
    loads.iter().copied().fold(0.0, f64::max)
}

fn feasible_unchecked(a: &[usize], jobs: &[Job], capacities: &[f64]) -> bool {
    jobs.iter().zip(a).all(|(j, &m)| j.mems[m] <= capacities[m])
}

/// Largest total time over machines.
pub fn makespan(a: &[usize], jobs: &[Job]) -> Result<f64, SchedulerError> {
    let m = machine_count(jobs)?;
    check_assignment(a, jobs, m)?;
    Ok(makespan_unchecked(a, jobs, &mut vec![0.0; m]))
}

/// Whether every job fits its machine's capacity.
pub fn feasible(a: &[usize], jobs: &[Job], capacities: &[f64]) -> Result<bool, SchedulerError> {
    let m = check_instance(jobs, capacities)?;
    check_assignment(a, jobs, m)?;
    Ok(feasible_unchecked(a, jobs, capacities))
}

fn check_instance(jobs: &[Job], capacities: &[f64]) -> Result<usize, SchedulerError> {
    let m = machine_count(jobs)?;
    if capacities.is_empty() || (!jobs.is_empty() && capacities.len() != m) {
        return Err(SchedulerError::InvalidJobs(format!(
            "{} capacities for {m} machines",
            capacities.len()
        )));
    }
    Ok(capacities.len())
}

/// Longest-job-first onto the least-loaded machine that fits. Used to prove
/// feasibility and to seed the GA.
pub fn greedy_schedule(jobs: &[Job], capacities: &[f64]) -> Result<(Assignment, f64), SchedulerError> {
    let m = check_instance(jobs, capacities)?;
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    let longest = |j: &Job| j.times.iter().copied().fold(0.0, f64::max);
    order.sort_by(|&a, &b| longest(&jobs[b]).total_cmp(&longest(&jobs[a])).then(a.cmp(&b)));
    let mut loads = vec![0.0; m];
    let mut a = vec![0; jobs.len()];
    for i in order {
        let best = (0..m)
            .filter(|&k| jobs[i].mems[k] <= capacities[k])
            .min_by(|&x, &y| (loads[x] + jobs[i].times[x]).total_cmp(&(loads[y] + jobs[i].times[y])))
            .ok_or(SchedulerError::InfeasibleInstance)?;
        loads[best] += jobs[i].times[best];
        a[i] = best;
    }
    let span = loads.iter().copied().fold(0.0, f64::max);
    Ok((a, span))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means `1 / jobs`.
    pub mutation_rate: Option<f64>,
    /// Best parents always carried into the next generation.
    pub elitism: usize,
    /// Children bred per generation.
    pub offspring: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population_size: 20,
            generations: 20,
            crossover_rate: 0.9,
            mutation_rate: None,
            elitism: 1,
            offspring: 2000,
            seed: 0,
        }
    }
}

impl GaParams {
    fn validate(&self) -> Result<(), SchedulerError> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if self.population_size < 2 {
            return Err(SchedulerError::InvalidParams("population_size must be at least 2".into()));
        }
        if !rate_ok(self.crossover_rate) || !self.mutation_rate.is_none_or(rate_ok) {
            return Err(SchedulerError::InvalidParams("rates must lie in [0, 1]".into()));
        }
        if self.elitism > self.population_size {
            return Err(SchedulerError::InvalidParams("elitism exceeds population".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best feasible makespan so far (infinite until one is found).
    pub best: f64,
    pub feasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub assignment: Assignment,
    pub makespan: f64,
    /// Entry 0 is the initial population.
    pub log: Vec<GenerationStats>,
}

#[derive(Clone)]
struct Individual {
    genes: Assignment,
    fitness: f64,
}

fn rank(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    a.fitness.total_cmp(&b.fitness).then_with(|| a.genes.cmp(&b.genes))
}

/// Genetic algorithm with truncation selection over parents and offspring.
/// Infeasible individuals get infinite fitness.
pub fn ga_schedule(jobs: &[Job], capacities: &[f64], p: &GaParams) -> Result<GaResult, SchedulerError> {
    p.validate()?;
    let m = check_instance(jobs, capacities)?;
    let (greedy, _) = greedy_schedule(jobs, capacities)?;
    let n = jobs.len();
    if n == 0 {
        return Ok(GaResult {
            assignment: vec![],
            makespan: 0.0,
            log: vec![],
        });
    }
    let mutation = p.mutation_rate.unwrap_or(1.0 / n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let evaluate = |genes: Assignment| {
        let fitness = if feasible_unchecked(&genes, jobs, capacities) {
            makespan_unchecked(&genes, jobs, &mut vec![0.0; m])
        } else {
            f64::INFINITY
        };
        Individual { genes, fitness }
    };

    let mut genomes = vec![greedy];
    while genomes.len() < p.population_size {
        genomes.push((0..n).map(|_| rng.gen_range(0..m)).collect());
    }
    let mut pop: Vec<Individual> = genomes.into_par_iter().map(evaluate).collect();
    pop.sort_by(rank);
    let stats = |g: usize, pop: &[Individual]| GenerationStats {
        generation: g,
        best: pop[0].fitness,
        feasible: pop.iter().filter(|i| i.fitness.is_finite()).count(),
    };
    let mut log = vec![stats(0, &pop)];

    for gen in 1..=p.generations {
        let mut children = Vec::with_capacity(p.offspring + 1);
        while children.len() < p.offspring {
            let a = &pop[rng.gen_range(0..pop.len())].genes;
            let b = &pop[rng.gen_range(0..pop.len())].genes;
            let (mut c1, mut c2) = (a.clone(), b.clone());
            if n > 1 && rng.gen_bool(p.crossover_rate) {
                let cut = rng.gen_range(1..n);
                c1[cut..].copy_from_slice(&b[cut..]);
                c2[cut..].copy_from_slice(&a[cut..]);
            }
            for c in [&mut c1, &mut c2] {
                for g in c.iter_mut() {
                    if m > 1 && rng.gen_bool(mutation) {
                        let shift = rng.gen_range(1..m);
                        *g = (*g + shift) % m;
                    }
                }
            }
            children.push(c1);
            children.push(c2);
        }
        let mut pool: Vec<Individual> = children.into_par_iter().map(evaluate).collect();
        pool.extend(pop.iter().skip(p.elitism).cloned());
        pool.sort_by(rank);

        let mut next: Vec<Individual> = pop[..p.elitism].to_vec();
        let mut seen: HashSet<Assignment> = next.iter().map(|i| i.genes.clone()).collect();
        let mut spare = Vec::new();
        for ind in pool {
            if next.len() == p.population_size {
                break;
            }
            if seen.insert(ind.genes.clone()) {
                next.push(ind);
            } else {
                spare.push(ind);
            }
        }
        // Too few distinct genomes: pad with duplicates.
        next.extend(spare.into_iter().take(p.population_size - next.len()));
        next.sort_by(rank);
        pop = next;
        log.push(stats(gen, &pop));
    }

    let best = &pop[0];
    debug_assert!(best.fitness.is_finite(), "greedy seed keeps a feasible individual");
    Ok(GaResult {
        assignment: best.genes.clone(),
        makespan: best.fitness,
        log,
    })
}

/// Exact optimum by enumerating all `machines^jobs` assignments in
/// lexicographic order; ties go to the lexicographically smallest.
pub fn brute_force_schedule(
    jobs: &[Job],
    capacities: &[f64],
    cap: u64,
) -> Result<(Assignment, f64), SchedulerError> {
    let m = check_instance(jobs, capacities)?;
    let n = jobs.len();
    let total = (m as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= cap)
        .ok_or(SchedulerError::TooLarge { machines: m, jobs: n, cap })?;

    let decode = |mut idx: u64, out: &mut [usize]| {
        for g in out.iter_mut().rev() {
            *g = (idx % m as u64) as usize;
            idx /= m as u64;
        }
    };
    const CHUNK: u64 = 1 << 14;
    let best = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .filter_map(|c| {
            let mut a = vec![0; n];
            let mut loads = vec![0.0; m];
            let mut best: Option<(f64, u64)> = None;
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                decode(idx, &mut a);
                if !feasible_unchecked(&a, jobs, capacities) {
                    continue;
                }
                let s = makespan_unchecked(&a, jobs, &mut loads);
                if best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, idx));
                }
            }
            best
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
        .ok_or(SchedulerError::InfeasibleInstance)?;
    let mut a = vec![0; n];
    decode(best.1, &mut a);
    Ok((a, best.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub mean: f64,
    pub makespans: Vec<f64>,
}

/// Mean makespan of `trials` uniformly random feasible assignments.
pub fn random_schedule(
    jobs: &[Job],
    capacities: &[f64],
    trials: usize,
    seed: u64,
) -> Result<RandomBaseline, SchedulerError> {
    let m = check_instance(jobs, capacities)?;
    if trials == 0 {
        return Err(SchedulerError::InvalidParams("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loads = vec![0.0; m];
    let mut makespans = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = (0..MAX_REDRAWS)
            .map(|_| (0..jobs.len()).map(|_| rng.gen_range(0..m)).collect::<Assignment>())
            .find(|a| feasible_unchecked(a, jobs, capacities))
            .ok_or(SchedulerError::InfeasibleInstance)?;
        makespans.push(makespan_unchecked(&a, jobs, &mut loads));
    }
    Ok(RandomBaseline {
        mean: makespans.iter().sum::<f64>() / trials as f64,
        makespans,
    })
}

/// Reads `job_id,machine_id,time_s,mem_mib` rows, one per job and machine.
/// Machines are ordered as in `machines` when given, otherwise by first
/// appearance. Jobs keep their first-appearance order.
pub fn read_jobs_csv<R: Read>(r: R, machines: Option<&[String]>) -> Result<(Vec<Job>, Vec<String>), SchedulerError> {
    #[derive(Deserialize)]
    struct Row {
        job_id: String,
        machine_id: String,
        time_s: f64,
        mem_mib: f64,
    }
    let mut machine_order: Vec<String> = machines.map(<[String]>::to_vec).unwrap_or_default();
    let fixed = machines.is_some();
    let mut job_order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: Row = row?;
        if !machine_order.contains(&row.machine_id) {
            if fixed {
                return Err(SchedulerError::InvalidJobs(format!("unknown machine `{}`", row.machine_id)));
            }
            machine_order.push(row.machine_id.clone());
        }
        if !job_order.contains(&row.job_id) {
            job_order.push(row.job_id.clone());
        }
        let key = (row.job_id, row.machine_id);
        if cells.insert(key.clone(), (row.time_s, row.mem_mib)).is_some() {
            return Err(SchedulerError::InvalidJobs(format!("duplicate row for job {} on {}", key.0, key.1)));
        }
    }
    let jobs = job_order
        .into_iter()
        .map(|id| {
            let mut times = Vec::with_capacity(machine_order.len());
            let mut mems = Vec::with_capacity(machine_order.len());
            for m in &machine_order {
                let &(t, mem) = cells
                    .get(&(id.clone(), m.clone()))
                    .ok_or_else(|| SchedulerError::InvalidJobs(format!("job {id} has no row for machine {m}")))?;
                times.push(t);
                mems.push(mem);
            }
            Ok(Job { id, times, mems })
        })
        .collect::<Result<Vec<_>, SchedulerError>>()?;
    machine_count(&jobs)?;
    Ok((jobs, machine_order))
}

/// Random instance with integer job times, for tests and examples.
pub fn random_instance(n: usize, machines: usize, time_range: std::ops::RangeInclusive<u32>, seed: u64) -> Vec<Job> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = f64::from(rng.gen_range(time_range.clone()));
            let mem = f64::from(rng.gen_range(1_000..=10_000u32));
            Job::uniform(format!("job{i:02}"), t, mem, machines)
        })
        .collect()
}

/// Two machines of 11264 and 8192 MiB, machine 1 slower by a per-job factor
/// in [1, 1.5). The first `min(3, n)` jobs only fit on machine 0.
pub fn two_machine_instance(n: usize, seed: u64) -> (Vec<Job>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs = (0..n)
        .map(|i| {
            let t0 = f64::from(rng.gen_range(10..=100u32));
            let t1 = (t0 * rng.gen_range(1.0..1.5)).round();
            let mem: f64 = if i < 3 {
                rng.gen_range(8_500.0..11_000.0f64).round()
            } else {
                rng.gen_range(1_000.0..8_000.0f64).round()
            };
            Job {
                id: format!("job{i:02}"),
                times: vec![t0, t1],
                mems: vec![mem, mem],
            }
        })
        .collect();
    (jobs, vec![11_264.0, 8_192.0])
}

/// Shuffled copy of `jobs` together with the permutation applied.
pub fn shuffled(jobs: &[Job], seed: u64) -> (Vec<Job>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..jobs.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (perm.iter().map(|&i| jobs[i].clone()).collect(), perm)
}
