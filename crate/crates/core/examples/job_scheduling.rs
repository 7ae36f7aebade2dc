//! Schedule predicted training jobs onto two machines with the GA and
//! compare against exhaustive search and random placement.

use abacus::scheduler::{
    brute_force_schedule, ga_schedule, random_schedule, two_machine_instance, GaParams, DEFAULT_ENUMERATION_CAP,
};

fn main() -> anyhow::Result<()> {
    let (jobs, caps) = two_machine_instance(20, 11);
    for j in &jobs[..5] {
        println!("{}: {:?} s, {:?} MiB", j.id, j.times, j.mems);
    }
    println!("... {} jobs, capacities {caps:?} MiB", jobs.len());

    let ga = ga_schedule(&jobs, &caps, &GaParams { seed: 11, ..Default::default() })?;
    let trace: Vec<String> = ga.log.iter().map(|s| format!("{}", s.best)).collect();
    println!("GA best per generation: {}", trace.join(" "));
    let genes: String = ga.assignment.iter().map(|m| m.to_string()).collect();
    println!("GA assignment {genes}, makespan {} s", ga.makespan);

    let (opt_a, opt) = brute_force_schedule(&jobs, &caps, DEFAULT_ENUMERATION_CAP)?;
    let genes: String = opt_a.iter().map(|m| m.to_string()).collect();
    println!("optimum     {genes}, makespan {opt} s");

    let rand = random_schedule(&jobs, &caps, 100, 11)?;
    println!(
        "random placement: mean {:.1} s over {} trials ({:.1}% above GA)",
        rand.mean,
        rand.makespans.len(),
        100.0 * (rand.mean / ga.makespan - 1.0)
    );
    Ok(())
}
