use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shardsmith_core::corpus::{self, CorpusEntry, ExpectedVerdict};
use shardsmith_core::keygen::KeySearchConfig;
use shardsmith_core::model::{exec_sequential, parse_model, NfModel};
use shardsmith_core::packet::Trace;
use shardsmith_core::pipeline::{run_pipeline, Deployment, PipelineOptions, Strategy};
use shardsmith_core::rss::{rebalance_table, NicProfile, RssConfigBundle};
use shardsmith_core::sharding::{analyze_sharding, SolveOptions, Verdict};
use shardsmith_core::sim::{
    check_equivalence, exec_lock_based_with, exec_shared_nothing, gen_traffic, lock_mode_bundle, measure_skew,
    Abstraction, CapacityMode, Distribution, Metrics, SimConfig, TrafficSpec,
};
use shardsmith_core::{Error, Result};

/// Exit status when shared-nothing was infeasible and locks were chosen.
const EXIT_FALLBACK: u8 = 2;

#[derive(Parser)]
#[command(name = "shardsmith", version, about = "Shared-nothing parallelization of NF models via RSS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a model and write its RSS configuration.
    Analyze(AnalyzeArgs),
    /// Run a trace sequentially and in parallel and compare the outputs.
    Simulate(SimulateArgs),
    /// Generate a packet trace.
    GenTraffic(TrafficArgs),
    /// Check every corpus model against its expected outcome.
    CorpusCheck(CorpusArgs),
    /// Rebalance a configuration's indirection tables for a trace.
    Rebalance(RebalanceArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    model: PathBuf,
    /// NIC profile file; the built-in e810 profile if omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value = "auto", value_parser = ["auto", "shared-nothing", "locks"])]
    strategy: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 16)]
    cores: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Constrained pairs checked per disjunct.
    #[arg(long, default_value_t = 100_000)]
    verify_samples: usize,
    /// Where to write the RSS configuration.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Where to write the report, in addition to standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    SharedNothing,
    Locks,
}

#[derive(Args)]
struct SimulateArgs {
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 16)]
    cores: usize,
    #[arg(long, value_enum, default_value = "shared-nothing")]
    mode: Mode,
    #[arg(long, default_value = "shard", value_parser = ["shard", "replicate"])]
    capacity: String,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Append a metrics row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Zipf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Binary,
}

#[derive(Args)]
struct TrafficArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "uniform")]
    distribution: Dist,
    /// Zipf exponent; calibrated so the top 4.8% of flows carry 80% if omitted.
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long, default_value_t = 50_000)]
    packets: usize,
    #[arg(long, default_value_t = 1000)]
    flows: usize,
    /// Flow replacements per 1000 packets.
    #[arg(long, default_value_t = 0.0)]
    churn: f64,
    #[arg(long, default_value_t = 64)]
    size: u16,
    #[arg(long, default_value_t = 0.0)]
    reply_ratio: f64,
    #[arg(long, default_value_t = 0.0)]
    unsolicited_ratio: f64,
    #[arg(long, default_value_t = 0)]
    origin: u16,
    #[arg(long)]
    reply_iface: Option<u16>,
    #[arg(long, default_value_t = 1)]
    ticks_per_packet: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory with `manifest.txt` and `<name>.nf`; the bundled corpus if omitted.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    packets: usize,
    #[arg(long, default_value_t = 20_000)]
    verify_samples: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RebalanceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn seed_or_draw(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<NfModel> {
    parse_model(&read(path)?)
}

fn load_profile(path: Option<&Path>) -> Result<NicProfile> {
    match path {
        Some(p) => NicProfile::from_text(&read(p)?),
        None => Ok(NicProfile::e810()),
    }
}

fn load_trace(path: &Path) -> Result<Trace> {
    let bytes = fs::read(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    Trace::from_bytes(&bytes)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn analyze(a: AnalyzeArgs) -> Result<u8> {
    let model = load_model(&a.model)?;
    let profile = load_profile(a.profile.as_deref())?;
    let strategy: Strategy = a.strategy.parse()?;
    let opts = PipelineOptions {
        strategy,
        solve: SolveOptions::default(),
        keys: KeySearchConfig {
            seed: seed_or_draw(a.seed),
            workers: a.workers,
            cores: a.cores,
            verify_samples: a.verify_samples,
            ..KeySearchConfig::for_profile(&profile)
        },
    };
    let report = run_pipeline(&model, &profile, &opts)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &a.report {
        write(p, &text)?;
    }
    if let Some(p) = &a.out {
        write(p, report.bundle.to_text())?;
    }
    Ok(if report.deployment == Deployment::Locks && strategy == Strategy::Auto {
        EXIT_FALLBACK
    } else {
        0
    })
}

fn simulate(a: SimulateArgs) -> Result<u8> {
    let model = load_model(&a.model)?;
    let profile = load_profile(a.profile.as_deref())?;
    let trace = load_trace(&a.trace)?;
    let capacity: CapacityMode = a.capacity.parse()?;
    let seed = seed_or_draw(a.seed);
    let cfg = SimConfig {
        cores: a.cores,
        capacity,
        seed,
    };
    let config = a
        .config
        .as_deref()
        .map(|p| read(p).and_then(|t| RssConfigBundle::from_text(&t)))
        .transpose()?;
    let seq = exec_sequential(&model, &trace)?;
    let (par, metrics, bundle) = match a.mode {
        Mode::SharedNothing => {
            let analysis = analyze_sharding(&model, &profile, &SolveOptions::default());
            if analysis.diagnosis.verdict == Verdict::Infeasible {
                let reasons: Vec<String> = analysis.diagnosis.reasons.iter().map(|r| r.to_string()).collect();
                return Err(Error::Invalid(format!(
                    "shared-nothing execution refused for `{}`: {}",
                    model.name,
                    reasons.join("; ")
                )));
            }
            let bundle = config
                .ok_or_else(|| Error::Invalid("shared-nothing simulation needs --config".into()))?
                .with_cores(a.cores)?;
            let (par, metrics) = exec_shared_nothing(&model, &bundle, &trace, &cfg)?;
            (par, metrics, bundle)
        }
        Mode::Locks => {
            let bundle = match config {
                Some(b) => b.with_cores(a.cores)?,
                None => lock_mode_bundle(&model, &profile, a.cores, seed)?,
            };
            for i in model.iface_ids() {
                if !bundle.interfaces.contains_key(&i) {
                    return Err(Error::UnconfiguredInterface(i));
                }
            }
            let (par, metrics) = exec_lock_based_with(&model, &bundle.engine()?, &trace, &cfg)?;
            (par, metrics, bundle)
        }
    };
    let abstraction = match a.mode {
        Mode::SharedNothing => Abstraction::of(&model),
        Mode::Locks => Abstraction::none(),
    };
    let rep = check_equivalence(&seq, &par, &trace, &abstraction, 5);
    let table = bundle.interfaces.values().next().map(|c| c.table.clone());
    println!("equivalence: {}", rep.to_string().trim_end());
    println!("metrics:");
    println!("  {}", Metrics::csv_header());
    println!("  {}", metrics.csv_row());
    if let Some(table) = table {
        let skew = measure_skew(&metrics, &table, &bundle, &trace)?;
        let shares: Vec<String> = skew.shares.iter().map(|s| format!("{s:.4}")).collect();
        println!("skew: max/mean {:.4}, unhashed {}", skew.max_mean, skew.unhashed);
        println!("  shares {}", shares.join(" "));
    }
    if let Some(p) = &a.csv {
        let mut out = if p.exists() { read(p)? } else { format!("{}\n", Metrics::csv_header()) };
        out.push_str(&metrics.csv_row());
        out.push('\n');
        write(p, out)?;
    }
    Ok(if rep.equivalent() { 0 } else { 1 })
}

fn gen(a: TrafficArgs) -> Result<u8> {
    let spec = TrafficSpec {
        distribution: match a.distribution {
            Dist::Uniform => Distribution::Uniform,
            Dist::Zipf => Distribution::Zipf { exponent: a.exponent },
        },
        packets: a.packets,
        flows: a.flows,
        churn: a.churn,
        size: a.size,
        reply_ratio: a.reply_ratio,
        unsolicited_ratio: a.unsolicited_ratio,
        origin: a.origin,
        reply_iface: a.reply_iface,
        ticks_per_packet: a.ticks_per_packet,
    };
    let trace = gen_traffic(&spec, seed_or_draw(a.seed))?;
    match a.format {
        Format::Text => write(&a.out, trace.to_text())?,
        Format::Binary => write(&a.out, trace.to_binary())?,
    }
    println!("wrote {} packets to {}", trace.len(), a.out.display());
    Ok(0)
}

/// Runs one corpus entry; returns the table columns and whether it passed.
fn check_entry(e: &CorpusEntry, packets: usize, verify_samples: usize, seed: u64) -> (Vec<String>, bool) {
    let fail = |msg: String| (vec![e.name.clone(), expected(e.verdict).into(), msg], false);
    let model = match e.model() {
        Ok(m) => m,
        Err(err) => return fail(format!("model error: {err}")),
    };
    let opts = PipelineOptions {
        keys: KeySearchConfig {
            seed,
            verify_samples,
            ..KeySearchConfig::default()
        },
        ..PipelineOptions::default()
    };
    let report = match run_pipeline(&model, &NicProfile::e810(), &opts) {
        Ok(r) => r,
        Err(err) => return fail(format!("pipeline error: {err}")),
    };
    let verdict = match report.deployment {
        Deployment::Locks => ExpectedVerdict::Locks,
        Deployment::LoadBalance => ExpectedVerdict::NoConstraints,
        Deployment::SharedNothing => ExpectedVerdict::SharedNothing,
    };
    let mut ok = verdict == e.verdict;
    if let Some(r) = &e.rule {
        ok &= report.rule.map(|x| x.to_string()).as_deref() == Some(r.as_str());
    }
    for (iface, fields) in &e.fields {
        let want: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
        ok &= report.sharding.get(iface) == Some(&want);
    }
    let keys_ok = report.verification.as_ref().is_none_or(|v| v.is_sound());
    ok &= keys_ok;

    let trace = match gen_traffic(&e.workload(&model, TrafficSpec { packets, ..TrafficSpec::default() }), seed) {
        Ok(t) => t,
        Err(err) => return fail(format!("traffic error: {err}")),
    };
    let mut equivalent = true;
    let seq = exec_sequential(&model, &trace);
    for cores in [1, 4, 16] {
        let cfg = SimConfig::new(cores).replicate();
        let run = match report.deployment {
            Deployment::Locks => report
                .bundle
                .with_cores(cores)
                .and_then(|b| b.engine())
                .and_then(|engine| exec_lock_based_with(&model, &engine, &trace, &cfg)),
            _ => exec_shared_nothing(&model, &report.bundle, &trace, &cfg),
        };
        let abstraction = match report.deployment {
            Deployment::Locks => Abstraction::none(),
            _ => Abstraction::of(&model),
        };
        equivalent &= match (&seq, run) {
            (Ok(seq), Ok((par, metrics))) => {
                check_equivalence(seq, &par, &trace, &abstraction, 1).equivalent()
                    && (report.deployment == Deployment::Locks || metrics.cross_core == 0)
            }
            _ => false,
        };
    }
    ok &= equivalent;
    let why = report
        .reasons
        .iter()
        .find(|r| report.deployment == Deployment::Locks && r.rule >= shardsmith_core::sharding::Rule::R3)
        .map(|r| r.to_string())
        .unwrap_or_else(|| {
            report
                .sharding
                .iter()
                .map(|(i, f)| format!("{i}:{}", f.join(",")))
                .collect::<Vec<_>>()
                .join(" ")
        });
    (
        vec![
            e.name.clone(),
            expected(e.verdict).into(),
            report.deployment.to_string(),
            report.rule.map_or("-".into(), |r| r.to_string()),
            if report.verification.is_some() { if keys_ok { "ok" } else { "VIOLATED" } } else { "-" }.into(),
            if equivalent { "ok" } else { "MISMATCH" }.into(),
            if ok { "PASS" } else { "FAIL" }.into(),
            why,
        ],
        ok,
    )
}

fn expected(v: ExpectedVerdict) -> &'static str {
    match v {
        ExpectedVerdict::NoConstraints => "no-constraints",
        ExpectedVerdict::SharedNothing => "shared-nothing",
        ExpectedVerdict::Locks => "locks",
    }
}

fn corpus_check(a: CorpusArgs) -> Result<u8> {
    let entries = match &a.dir {
        Some(d) => corpus::load_corpus(d).map_err(|e| Error::Invalid(format!("corpus {}: {e}", d.display())))?,
        None => corpus::bundled(),
    };
    let seed = seed_or_draw(a.seed);
    println!(
        "{:<9} {:<15} {:<15} {:<5} {:<9} {:<11} {:<6} detail",
        "nf", "expected", "outcome", "rule", "keys", "equivalence", "result"
    );
    let mut all = true;
    for e in &entries {
        let (cols, ok) = check_entry(e, a.packets, a.verify_samples, seed);
        all &= ok;
        let get = |i: usize| cols.get(i).map_or("-", String::as_str);
        if cols.len() == 3 {
            println!("{:<9} {:<15} {}  FAIL", get(0), get(1), get(2));
        } else {
            println!(
                "{:<9} {:<15} {:<15} {:<5} {:<9} {:<11} {:<6} {}",
                get(0),
                get(1),
                get(2),
                get(3),
                get(4),
                get(5),
                get(6),
                get(7)
            );
        }
    }
    Ok(if all { 0 } else { 1 })
}

fn rebalance(a: RebalanceArgs) -> Result<u8> {
    let bundle = RssConfigBundle::from_text(&read(&a.config)?)?;
    let trace = load_trace(&a.trace)?;
    let table = bundle
        .interfaces
        .values()
        .next()
        .ok_or_else(|| Error::Invalid("configuration has no interfaces".into()))?
        .table
        .clone();
    let metrics = Metrics {
        per_core: vec![0; bundle.cores],
        ..Metrics::default()
    };
    let before = measure_skew(&metrics, &table, &bundle, &trace)?;
    let balanced = rebalance_table(&table, &before.entry_load, bundle.cores);
    let after = measure_skew(&metrics, &balanced, &bundle, &trace)?;
    println!("max/mean before {:.4}, after {:.4}", before.max_mean, after.max_mean);
    if let Some(p) = &a.out {
        write(p, bundle.with_table(balanced).to_text())?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::GenTraffic(a) => gen(a),
        Command::CorpusCheck(a) => corpus_check(a),
        Command::Rebalance(a) => rebalance(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
