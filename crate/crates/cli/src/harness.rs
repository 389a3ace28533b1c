//! Command implementations: config resolution, seeded run execution,
//! and report/CSV emission.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use banditpac::cover::{cover_radius, learn_via_cover_detailed, CoverParams};
use banditpac::env::BanditEnv;
use banditpac::frank_wolfe::{run_fw_observed, FwConfig, FwSchedule};
use banditpac::instance::{
    make_planted_instance, make_random_instance, make_rational_instance, InstanceLoadError,
};
use banditpac::learner::{
    learn, uniform_baseline, BaselineParams, LearnParams, Mode, PracticalConstants, RunReport,
    DEFAULT_SAMPLE_CAP,
};
use banditpac::logbarrier::GammaConfig;
use banditpac::oracle::TableErm;
use banditpac::reference::{
    exact_minimize_phi, exact_phi, exact_support_dataset, excess_loss, ReferenceError,
};
use banditpac::rng::{stream_rng, RngStream};
use banditpac::verify;
use banditpac::Instance64;

use crate::{build_id, Failure, FwBenchArgs, GenerateArgs, RunArgs, VerifyArgs, EXIT_INVARIANT};

/// The fixed aggregate CSV header; one row per run.
pub const CSV_HEADER: &str =
    "seed,K,N,eps,delta,gamma,mode,phase1_trials,phase2_rounds,total_samples,oracle_calls,excess,success";

/// Optional config file mirroring the command-line flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    eps: Option<f64>,
    delta: Option<f64>,
    gamma: Option<f64>,
    mode: Option<String>,
    seeds: Option<String>,
    out: Option<PathBuf>,
    c1: Option<f64>,
    c2: Option<f64>,
    cb: Option<f64>,
    cs: Option<f64>,
    t_mult: Option<f64>,
    sample_cap: Option<u64>,
    dn: Option<u32>,
}

struct Resolved {
    eps: f64,
    delta: f64,
    gamma: f64,
    theory: bool,
    seeds: Range<u64>,
    out: PathBuf,
    c1: f64,
    c2: f64,
    cb: f64,
    cs: f64,
    t_mult: f64,
    sample_cap: u64,
    dn: Option<u32>,
}

impl Resolved {
    fn learn_params(&self, seed: u64) -> LearnParams {
        let mode = if self.theory {
            Mode::Theory
        } else {
            Mode::Practical(PracticalConstants {
                c1: self.c1,
                c2: self.c2,
                t_mult: self.t_mult,
                ..PracticalConstants::default()
            })
        };
        LearnParams {
            eps: self.eps,
            delta: self.delta,
            gamma: self.gamma,
            mode,
            seed,
            sample_cap: self.sample_cap,
        }
    }
}

fn parse_seeds(text: &str) -> Result<Range<u64>, Failure> {
    let bad = || Failure::validation(format!("cannot parse seed range `{text}` (use `a..b` or `n`)"));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi <= lo {
            return Err(Failure::validation(format!("empty seed range `{text}`")));
        }
        Ok(lo..hi)
    } else {
        let seed: u64 = text.trim().parse().map_err(|_| bad())?;
        Ok(seed..seed + 1)
    }
}

fn resolve(args: &RunArgs) -> Result<Resolved, Failure> {
    let config: ConfigFile = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::generic(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::validation(format!("config {}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let mode = args
        .mode
        .clone()
        .or(config.mode)
        .unwrap_or_else(|| "practical".to_string());
    let theory = match mode.as_str() {
        "theory" => true,
        "practical" => false,
        other => {
            return Err(Failure::validation(format!(
                "unknown mode `{other}` (expected `theory` or `practical`)"
            )))
        }
    };
    let seeds_text = args.seeds.clone().or(config.seeds).unwrap_or_else(|| "0..10".to_string());
    Ok(Resolved {
        eps: args.eps.or(config.eps).unwrap_or(0.1),
        delta: args.delta.or(config.delta).unwrap_or(0.1),
        gamma: args.gamma.or(config.gamma).unwrap_or(0.5),
        theory,
        seeds: parse_seeds(&seeds_text)?,
        out: args.out.clone().or(config.out).unwrap_or_else(|| PathBuf::from("runs")),
        c1: args.c1.or(config.c1).unwrap_or(500.0),
        c2: args.c2.or(config.c2).unwrap_or(8.0),
        cb: args.cb.or(config.cb).unwrap_or(3.0),
        cs: args.cs.or(config.cs).unwrap_or(8.0),
        t_mult: args.t_mult.or(config.t_mult).unwrap_or(1.0),
        sample_cap: args.sample_cap.or(config.sample_cap).unwrap_or(DEFAULT_SAMPLE_CAP),
        dn: args.dn.or(config.dn),
    })
}

fn load_instance(path: &Path) -> Result<Instance64, Failure> {
    Instance64::read_json_file(path).map_err(|err| match err {
        InstanceLoadError::Io(e) => {
            Failure::generic(format!("reading {}: {e}", path.display()))
        }
        other => Failure::validation(format!("{}: {other}", path.display())),
    })
}

fn csv_row(seed: u64, eps: f64, report: &RunReport) -> String {
    let excess = report.excess_loss.unwrap_or(f64::NAN);
    format!(
        "{seed},{},{},{},{},{},{},{},{},{},{},{excess},{}",
        report.config.k,
        report.config.n,
        report.config.eps,
        report.config.delta,
        report.config.gamma,
        report.config.mode,
        report.phase1_trials,
        report.phase2_rounds,
        report.total_env_samples,
        report.oracle_calls,
        excess <= eps
    )
}

fn write_reports(
    out: &Path,
    eps: f64,
    results: &[(u64, RunReport)],
) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Failure::generic(format!("creating {}: {e}", out.display())))?;
    for (seed, report) in results {
        let path = out.join(format!("run_{seed}.json"));
        let body = serde_json::to_string_pretty(report).expect("reports serialize");
        fs::write(&path, body)
            .map_err(|e| Failure::generic(format!("writing {}: {e}", path.display())))?;
    }
    let mut csv = String::from(CSV_HEADER);
    for (seed, report) in results {
        csv.push('\n');
        csv.push_str(&csv_row(*seed, eps, report));
    }
    csv.push('\n');
    let path = out.join("aggregate.csv");
    fs::write(&path, csv)
        .map_err(|e| Failure::generic(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

fn summarize(label: &str, eps: f64, results: &[(u64, RunReport)], out: &Path) {
    let successes = results
        .iter()
        .filter(|(_, r)| r.excess_loss.is_some_and(|e| e <= eps))
        .count();
    let warned = results.iter().filter(|(_, r)| r.variance_warning).count();
    println!(
        "{label}: {}/{} runs with excess <= {eps} ({} variance warnings); reports in {}",
        successes,
        results.len(),
        warned,
        out.display()
    );
}

/// Run one learner configuration per seed, in parallel, with
/// deterministic output ordering.
fn run_seeded<F>(resolved: &Resolved, run_one: F) -> Result<Vec<(u64, RunReport)>, Failure>
where
    F: Fn(u64) -> Result<(usize, RunReport), Failure> + Send + Sync,
{
    let mut results = resolved
        .seeds
        .clone()
        .into_par_iter()
        .map(|seed| {
            let (_, report) = run_one(seed)?;
            Ok((seed, report))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    results.sort_by_key(|(seed, _)| *seed);
    Ok(results)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let instance = match args.kind.as_str() {
        "planted" => make_planted_instance::<f64>(args.m, args.k, args.n, args.rho, args.seed),
        "random" => make_random_instance::<f64>(args.m, args.k, args.n, args.seed),
        "rational" => make_rational_instance::<f64>(args.m, args.k, args.n, args.seed),
        other => {
            return Err(Failure::validation(format!(
                "unknown instance kind `{other}` (expected planted, random or rational)"
            )))
        }
    }
    .map_err(|e| Failure::validation(e.to_string()))?;
    instance
        .write_json_file(&args.out)
        .map_err(|e| Failure::generic(format!("writing {}: {e}", args.out.display())))?;
    print!(
        "wrote {}: K={} N={} m={} support={}",
        args.out.display(),
        instance.num_labels,
        instance.class.num_hypotheses(),
        instance.class.num_examples(),
        instance.support.len()
    );
    if args.kind == "planted" {
        print!(" planted-loss={}", instance.hypothesis_loss(0));
    }
    println!();
    Ok(())
}

pub fn cmd_learn(args: &RunArgs) -> Result<(), Failure> {
    let resolved = resolve(args)?;
    let instance = load_instance(&args.instance)?;
    let results = run_seeded(&resolved, |seed| {
        let mut env = BanditEnv::new(instance.clone(), seed);
        let (chosen, mut report) =
            learn(&mut env, &resolved.learn_params(seed)).map_err(Failure::from_learn)?;
        report.excess_loss = Some(excess_loss(&instance, chosen));
        report.config.build = Some(build_id());
        Ok((chosen, report))
    })?;
    write_reports(&resolved.out, resolved.eps, &results)?;
    summarize("learn", resolved.eps, &results, &resolved.out);
    Ok(())
}

pub fn cmd_baseline(args: &RunArgs) -> Result<(), Failure> {
    let resolved = resolve(args)?;
    let instance = load_instance(&args.instance)?;
    let results = run_seeded(&resolved, |seed| {
        let mut env = BanditEnv::new(instance.clone(), seed);
        let params = BaselineParams {
            eps: resolved.eps,
            delta: resolved.delta,
            c_b: resolved.cb,
            seed,
            sample_cap: resolved.sample_cap,
        };
        let (chosen, mut report) =
            uniform_baseline(&mut env, &params).map_err(Failure::from_learn)?;
        report.excess_loss = Some(excess_loss(&instance, chosen));
        report.config.build = Some(build_id());
        Ok((chosen, report))
    })?;
    write_reports(&resolved.out, resolved.eps, &results)?;
    summarize("baseline", resolved.eps, &results, &resolved.out);
    Ok(())
}

pub fn cmd_cover(args: &RunArgs) -> Result<(), Failure> {
    let resolved = resolve(args)?;
    let instance = load_instance(&args.instance)?;
    let cover_params = CoverParams { c_s: resolved.cs, d_n: resolved.dn };
    let results = run_seeded(&resolved, |seed| {
        let mut env = BanditEnv::new(instance.clone(), seed);
        let (chosen, mut report, cover) =
            learn_via_cover_detailed(&mut env, &resolved.learn_params(seed), &cover_params)
                .map_err(Failure::from_learn)?;
        report.excess_loss = Some(excess_loss(&instance, chosen));
        report.config.build = Some(build_id());
        if let Some(summary) = report.cover.as_mut() {
            summary.radius = Some(cover_radius(&instance, &instance.class, &cover));
        }
        Ok((chosen, report))
    })?;
    write_reports(&resolved.out, resolved.eps, &results)?;
    summarize("cover", resolved.eps, &results, &resolved.out);
    if let Some((_, first)) = results.first() {
        if let Some(summary) = &first.cover {
            println!(
                "cover: size {} of {} hypotheses, sample rounds {}, radius {}",
                summary.cover_size,
                instance.class.num_hypotheses(),
                summary.sample_rounds,
                summary.radius.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

pub fn cmd_fw_bench(args: &FwBenchArgs) -> Result<(), Failure> {
    let instance = load_instance(&args.instance)?;
    let k = instance.num_labels;
    let cfg = GammaConfig::new(args.gamma, k)
        .map_err(|e| Failure::validation(e.to_string()))?;
    let map_ref = |e: ReferenceError| match e {
        ReferenceError::GuardExceeded { .. } | ReferenceError::NotTileable(_) => {
            Failure::validation(e.to_string())
        }
        other => Failure::generic(other.to_string()),
    };
    let optimum = exact_minimize_phi(&instance, &cfg, 1e-9).map_err(map_ref)?;
    let schedule =
        FwSchedule::for_gamma(k, args.gamma, args.rounds).with_reset_batch_scale(args.scale);
    let dataset = exact_support_dataset(&instance, schedule.samples_required() as usize)
        .map_err(map_ref)?;
    let fw_cfg = FwConfig { log_rounds: args.diag.is_some(), ..FwConfig::default() };
    let mut oracle = TableErm::new(&instance.class);
    let mut rng = stream_rng(args.seed, RngStream::Optimizer);
    let n = instance.class.num_hypotheses();

    let mut rows = Vec::with_capacity(args.rounds + 1);
    let outcome = run_fw_observed(
        &instance.class,
        &dataset,
        &cfg,
        &schedule,
        &fw_cfg,
        &mut oracle,
        &mut rng,
        |t, p| {
            let value = exact_phi(&instance, &p.to_dense(n), &cfg).expect("guards checked above");
            rows.push((t, value - optimum.objective, p.support_len()));
        },
    )
    .map_err(|e| Failure::validation(e.to_string()))?;

    let mut csv = String::from("t,exact_suboptimality,support_size");
    for (t, suboptimality, support) in &rows {
        csv.push_str(&format!("\n{t},{suboptimality},{support}"));
    }
    csv.push('\n');
    fs::write(&args.out, csv)
        .map_err(|e| Failure::generic(format!("writing {}: {e}", args.out.display())))?;

    if let Some(diag_path) = &args.diag {
        let mut diag = String::from("t,eta,b,reset,phi_estimate,support_size,oracle_calls");
        for log in &outcome.diagnostics.rounds {
            diag.push_str(&format!(
                "\n{},{},{},{},{},{},{}",
                log.round, log.eta, log.batch, log.reset, log.phi_batch_mean, log.support_len,
                log.round
            ));
        }
        diag.push('\n');
        fs::write(diag_path, diag)
            .map_err(|e| Failure::generic(format!("writing {}: {e}", diag_path.display())))?;
    }

    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(t, _, _)| *t >= 16 && *t <= args.rounds)
        .map(|(t, s, _)| ((*t as f64).ln(), s.max(1e-15).ln()))
        .collect();
    let slope = if fit.len() >= 2 {
        let len = fit.len() as f64;
        let mx = fit.iter().map(|(x, _)| x).sum::<f64>() / len;
        let my = fit.iter().map(|(_, y)| y).sum::<f64>() / len;
        fit.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / fit.iter().map(|(x, _)| (x - mx) * (x - mx)).sum::<f64>()
    } else {
        f64::NAN
    };
    let last = rows.last().expect("at least one observation");
    println!(
        "fw-bench: {} rounds, final suboptimality {:.3e}, log-log slope {:.3}, loo calls {}; wrote {}",
        args.rounds,
        last.1,
        slope,
        outcome.diagnostics.loo_calls,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let outcomes = verify::run_all(args.seed);
    let mut failed = 0;
    for outcome in &outcomes {
        println!("{outcome}");
        if !outcome.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_INVARIANT,
            message: format!("{failed} of {} invariants failed", outcomes.len()),
        });
    }
    println!("all {} invariants pass", outcomes.len());
    Ok(())
}
