use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;

use ponzi_core::attacks::{self, AttackError};
use ponzi_core::ledger::{
    load_manifest, load_rates, load_transactions, save_transactions, Address, SchemeKind,
    Transaction,
};
use ponzi_core::metrics::{self, Analysis, GiniRow};
use ponzi_core::schemes::{SimError, Simulation};
use ponzi_core::similarity::{
    classify, estimate_baseline, fp_pass, load_corpus, write_fp_csv, write_matches_csv,
    BytecodeBlob, Normalization, SimilarityConfig,
};

use crate::scenario::{self, AttackScenario, SimulationScenario};
use crate::{
    AnalyzeArgs, BaselineArgs, ClassifyArgs, Cli, Command, Failure, KindArg, NormArg, ReportArgs,
    ScenarioArgs,
};

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .context("worker pool")?;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("{}", cli.out.display()))?;
    write_json(&cli.out, "run-meta.json", &RunMeta::new(cli))?;
    println!("seed: {}", cli.seed);

    match &cli.command {
        Command::Classify(args) => cmd_classify(cli, args),
        Command::Baseline(args) => cmd_baseline(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Attack(args) => cmd_attack(cli, args),
        Command::Analyze(args) => cmd_analyze(cli, args),
        Command::Report(args) => cmd_report(cli, args),
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    version: &'static str,
    seed: u64,
    workers: usize,
    out: &'a Path,
    command: &'a Command,
}

impl<'a> RunMeta<'a> {
    fn new(cli: &'a Cli) -> Self {
        RunMeta {
            version: env!("CARGO_PKG_VERSION"),
            seed: cli.seed,
            workers: cli.workers,
            out: &cli.out,
            command: &cli.command,
        }
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("{}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Metric => Normalization::Metric,
            NormArg::MaxLength => Normalization::MaxLength,
        }
    }
}

impl From<KindArg> for SchemeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Public => SchemeKind::Public,
            KindArg::Hidden => SchemeKind::Hidden,
        }
    }
}

/// Conservation breaches are invariant violations, not bad input.
fn sim_failure(e: SimError) -> Failure {
    let code = if matches!(e, SimError::ConservationBreach { .. }) {
        2
    } else {
        1
    };
    Failure {
        code,
        error: e.into(),
    }
}

fn load_seeds(path: &Path, corpus: &[BytecodeBlob]) -> anyhow::Result<Vec<BytecodeBlob>> {
    if path.is_dir() {
        return Ok(load_corpus(path)?);
    }
    let by_address: HashMap<Address, &BytecodeBlob> =
        corpus.iter().map(|b| (b.address, b)).collect();
    load_manifest(path)?
        .iter()
        .map(|d| {
            by_address
                .get(&d.address)
                .map(|b| (*b).clone())
                .ok_or_else(|| {
                    anyhow!(
                        "{}: seed {} is not in the corpus",
                        path.display(),
                        d.address
                    )
                })
        })
        .collect()
}

fn cmd_classify(cli: &Cli, args: &ClassifyArgs) -> Outcome {
    let cfg = SimilarityConfig {
        threshold: args.threshold,
        rng_seed: cli.seed,
        fp_neighbor_limit: args.fp_limit,
        normalization: args.normalization.into(),
        ..SimilarityConfig::default()
    };
    cfg.validate()?;
    let corpus = load_corpus(&args.corpus)?;
    let (matches, suspects) = if corpus.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let seeds = load_seeds(&args.seeds, &corpus)?;
        let matches = classify(&corpus, &seeds, &cfg)?;
        let flagged: Vec<BytecodeBlob> = {
            let hits: HashSet<Address> = matches.iter().map(|m| m.address).collect();
            corpus
                .iter()
                .filter(|b| hits.contains(&b.address))
                .cloned()
                .collect()
        };
        let suspects = fp_pass(&flagged, &corpus, &seeds, &cfg);
        (matches, suspects)
    };
    let mut w = create(&cli.out, "classify.csv")?;
    write_matches_csv(&mut w, &matches).context("classify.csv")?;
    w.flush()?;
    let mut w = create(&cli.out, "fp_pass.csv")?;
    write_fp_csv(&mut w, &suspects).context("fp_pass.csv")?;
    w.flush()?;
    println!("flagged: {}", matches.len());
    println!("suspected false positives: {}", suspects.len());
    Ok(())
}

fn cmd_baseline(cli: &Cli, args: &BaselineArgs) -> Outcome {
    let cfg = SimilarityConfig {
        sample_pairs: args.samples,
        rng_seed: cli.seed,
        normalization: args.normalization.into(),
        ..SimilarityConfig::default()
    };
    let corpus = load_corpus(&args.corpus)?;
    let estimate = estimate_baseline(&corpus, &cfg)?;
    write_json(&cli.out, "baseline.json", &estimate)?;
    println!(
        "baseline: mean {:.6}, standard error {:.6}, {} pairs",
        estimate.mean, estimate.std_error, estimate.samples
    );
    Ok(())
}

fn save_trace(dir: &Path, txs: &[Transaction]) -> anyhow::Result<String> {
    let path = dir.join("trace.csv");
    save_transactions(&path, txs)?;
    Ok(path.display().to_string())
}

fn cmd_simulate(cli: &Cli, args: &ScenarioArgs) -> Outcome {
    let sc: SimulationScenario = scenario::load(&args.scenario)?;
    let mut sim = Simulation::new(
        sc.params,
        sc.deployment.contract,
        sc.deployment.owner,
        &sc.failing,
    )
    .map_err(sim_failure)?;
    for (i, ev) in sc.events.iter().enumerate() {
        sim.apply(ev).map_err(|e| {
            let mut f = sim_failure(e);
            f.error = f.error.context(format!("event {i}"));
            f
        })?;
    }
    let (state, txs) = sim.into_parts();
    save_trace(&cli.out, &txs)?;
    println!(
        "conservation: ok (in {}, out {}, balance {})",
        state.total_in, state.total_out, state.balance
    );
    println!("trace rows: {}", txs.len());
    Ok(())
}

fn attack_failure(e: AttackError) -> Failure {
    match e {
        AttackError::Sim(e) => sim_failure(e),
        other => other.into(),
    }
}

fn cmd_attack(cli: &Cli, args: &ScenarioArgs) -> Outcome {
    let sc: AttackScenario = scenario::load(&args.scenario)?;
    match sc {
        AttackScenario::Dos {
            params,
            deployment,
            honest_deposits,
            attacker,
            ticks,
        } => {
            let mut report =
                attacks::dos_attack(&params, &deployment, &honest_deposits, &attacker, ticks)
                    .map_err(attack_failure)?;
            report.trace_path = Some(save_trace(&cli.out, &report.trace)?);
            write_json(&cli.out, "report.json", &report)?;
            println!("conservation: ok");
            println!("frozen: {}", report.frozen);
        }
        AttackScenario::Shutdown {
            params,
            deployment,
            prior_deposits,
            oscar,
            oscar_amount,
        } => {
            let mut report = attacks::shutdown_attack(
                &params,
                &deployment,
                &prior_deposits,
                oscar,
                oscar_amount,
            )
            .map_err(attack_failure)?;
            report.trace_path = Some(save_trace(&cli.out, &report.trace)?);
            write_json(&cli.out, "report.json", &report)?;
            println!("conservation: ok");
            println!("oscar net: {}", report.oscar_net);
            println!("backlog: {}", report.backlog);
        }
    }
    Ok(())
}

fn parse_address(raw: &str) -> anyhow::Result<Address> {
    raw.parse()
        .map_err(|_| anyhow!("--scheme: `{raw}` is not a 0x-prefixed 20-byte address"))
}

fn first_date(txs: &[Transaction]) -> Option<chrono::NaiveDate> {
    txs.iter().map(Transaction::date).min()
}

fn write_single_scheme(dir: &Path, a: &Analysis, scheme: &Address) -> anyhow::Result<()> {
    write_json(dir, "summary.json", &a.summary)?;
    metrics::write_volume_csv(create(dir, "volume.csv")?, &a.volume)?;
    let (gains, losses) = metrics::gains_and_losses(&a.nets);
    metrics::write_gains_losses_csv(create(dir, "gains_losses.csv")?, &gains, &losses)?;
    metrics::write_lorenz_csv(create(dir, "lorenz_in.csv")?, a.lorenz_in.as_ref())?;
    metrics::write_lorenz_csv(create(dir, "lorenz_out.csv")?, a.lorenz_out.as_ref())?;
    metrics::write_gini_csv(
        create(dir, "gini.csv")?,
        &[GiniRow::from_analysis(scheme.to_string(), a)],
    )?;
    Ok(())
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Outcome {
    let scheme = parse_address(&args.scheme)?;
    let txs = load_transactions(&args.txs)?;
    let rates = load_rates(&args.rates)?;
    let analysis = metrics::analyze(&txs, &scheme, &rates)?;
    write_single_scheme(&cli.out, &analysis, &scheme)?;

    let kind: SchemeKind = args.kind.into();
    let lifetimes: Vec<_> = analysis
        .lifetime_days
        .map(|d| (kind, d))
        .into_iter()
        .collect();
    metrics::write_lifetime_csv(create(&cli.out, "lifetime.csv")?, &lifetimes)?;
    let mut timeline = BTreeMap::new();
    if let Some(first) = first_date(&txs) {
        timeline.insert((first.format("%Y-%m").to_string(), kind), 1);
    }
    metrics::write_creation_csv(create(&cli.out, "creation.csv")?, &timeline)?;

    let s = &analysis.summary;
    println!(
        "in: {} wei ({} USD), out: {} wei ({} USD)",
        s.in_eth, s.in_usd, s.out_eth, s.out_usd
    );
    println!(
        "paying users: {}, paid users: {}",
        s.paying_users, s.paid_users
    );
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Outcome {
    let manifest = load_manifest(&args.manifest)?;
    let rates = load_rates(&args.rates)?;
    let mut lifetimes = Vec::new();
    let mut firsts = Vec::new();
    let mut gini = Vec::new();
    for d in &manifest {
        let path = args.txs.join(format!("{}.csv", d.address));
        if !path.exists() {
            eprintln!("warning: no ledger for {} ({})", d.name, path.display());
            continue;
        }
        let txs = load_transactions(&path)?;
        let Some(first) = first_date(&txs) else {
            continue;
        };
        let analysis = metrics::analyze(&txs, &d.address, &rates)
            .with_context(|| format!("{}", path.display()))?;
        lifetimes.push((d.kind, metrics::lifetime(&txs)?));
        firsts.push((d.clone(), first));
        gini.push(GiniRow::from_analysis(d.name.clone(), &analysis));
    }
    metrics::write_lifetime_csv(create(&cli.out, "lifetime.csv")?, &lifetimes)?;
    metrics::write_creation_csv(
        create(&cli.out, "creation.csv")?,
        &metrics::creation_timeline(&firsts),
    )?;
    metrics::write_gini_csv(create(&cli.out, "gini.csv")?, &gini)?;
    println!("schemes analysed: {}", gini.len());
    Ok(())
}
