//! Command-line front end: single-block analysis, corpus evaluation, and
//! bottleneck/counterfactual studies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bbtp::combine::{self, counterfactual_of};
use bbtp::io::{self, InstructionDb};
use bbtp::metrics::{self, TauVariant};
use bbtp::model::{Component, Detail, MicroArchConfig, Mode, Prediction};
use bbtp::precedence;
use bbtp::rational::{self, format2, round2, Rat};
use bbtp::report::{self, CounterfactualReport, RatValue};

#[derive(Parser)]
#[command(
    name = "bbtp",
    version,
    about = "Analytical throughput bounds for x86 basic blocks on Intel Core pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one basic block and report per-component bounds.
    Analyze(AnalyzeArgs),
    /// Score predictions against measured throughputs (MAPE, Kendall tau).
    Bench(BenchArgs),
    /// Bottleneck shares, bottleneck transitions, and idealization speedups
    /// over a corpus.
    Study(StudyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Microarchitecture name, resolved to <config-dir>/<name>.json.
    #[arg(long)]
    arch: String,
    /// Execution mode: "loop" or "unroll".
    #[arg(long, default_value = "loop")]
    mode: String,
    /// Directory holding microarchitecture configuration files.
    #[arg(long, default_value = "configs")]
    config_dir: PathBuf,
    /// Instruction-attribute database (JSON).
    #[arg(long)]
    db: Option<PathBuf>,
    /// Output format: "text" or "json".
    #[arg(long, default_value = "text")]
    output: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also report the counterfactual where this component is idealized.
    #[arg(long)]
    idealize: Option<String>,
    /// Report wall-clock analysis time on stderr.
    #[arg(long)]
    time: bool,
    /// Write the block's dependence graph in DOT format to this path
    /// (single block only).
    #[arg(long)]
    dump_graph: Option<PathBuf>,
    /// Block files (JSON). Several blocks are analyzed in one invocation;
    /// JSON output becomes an array when more than one is given.
    #[arg(required = true)]
    blocks: Vec<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// CSV with header "block,measured" (cycles per iteration).
    #[arg(long)]
    measurements: PathBuf,
    /// Base directory for block paths in the CSV. Defaults to the
    /// directory of the measurements file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Kendall tau variant: "a" or "b".
    #[arg(long, default_value = "b")]
    tau: String,
    /// Write a per-block CSV (block,measured,predicted,bottleneck) here.
    #[arg(long)]
    per_block: Option<PathBuf>,
    /// Report mean wall-clock time per block on stderr.
    #[arg(long)]
    time: bool,
}

#[derive(Args)]
struct StudyArgs {
    /// Microarchitecture names; transitions are reported between
    /// consecutive pairs.
    #[arg(long, required = true)]
    arch: Vec<String>,
    /// Execution mode: "loop" or "unroll".
    #[arg(long, default_value = "unroll")]
    mode: String,
    #[arg(long, default_value = "configs")]
    config_dir: PathBuf,
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    output: String,
    /// Directory of block files (*.json).
    #[arg(long)]
    corpus: PathBuf,
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {:#}", err);
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Study(args) => cmd_study(args),
    }
}

fn load_arch(config_dir: &Path, name: &str) -> Result<MicroArchConfig> {
    let path = config_dir.join(format!("{}.json", name));
    if !path.exists() {
        bail!(
            "unknown microarchitecture '{}' (no configuration at {})",
            name,
            path.display()
        );
    }
    io::load_arch_config(&path).map_err(|e| anyhow!(e))
}

fn load_db(path: &Option<PathBuf>) -> Result<InstructionDb> {
    let Some(path) = path else {
        return Ok(InstructionDb::empty());
    };
    let db = io::load_instruction_db(path).map_err(|e| anyhow!(e))?;
    for warning in &db.warnings {
        eprintln!("warning: {}", warning);
    }
    Ok(db)
}

fn parse_mode(s: &str) -> Result<Mode> {
    s.parse().map_err(|e: String| anyhow!(e))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let mode = parse_mode(&args.common.mode)?;
    if !matches!(args.common.output.as_str(), "text" | "json") {
        bail!(
            "unknown output format '{}' (expected 'text' or 'json')",
            args.common.output
        );
    }
    let idealize = args
        .idealize
        .as_deref()
        .map(|raw| raw.parse::<Component>().map_err(|e| anyhow!(e)))
        .transpose()?;
    if args.dump_graph.is_some() && args.blocks.len() > 1 {
        bail!("--dump-graph applies to a single block");
    }
    let cfg = load_arch(&args.common.config_dir, &args.common.arch)?;
    let db = load_db(&args.common.db)?;

    let mut reports = Vec::new();
    for (position, path) in args.blocks.iter().enumerate() {
        let block = io::load_block(path, &db, &cfg).map_err(|e| anyhow!(e))?;

        if let Some(dot_path) = &args.dump_graph {
            let graph = precedence::build_graph(&block);
            std::fs::write(dot_path, precedence::to_dot(&graph))
                .with_context(|| format!("cannot write {}", dot_path.display()))?;
        }

        let started = Instant::now();
        let prediction = combine::predict(&block, &cfg, mode)?;
        let elapsed = started.elapsed();
        if args.time {
            eprintln!("analysis time for {}: {:.1?}", path.display(), elapsed);
        }

        let cf = idealize
            .map(|component| {
                counterfactual_of(&prediction, component)
                    .map(|(ideal, speedup)| (component, ideal, speedup))
            })
            .transpose()?;

        for warning in &prediction.warnings {
            eprintln!("warning: {}: {}", path.display(), warning);
        }

        match args.common.output.as_str() {
            "json" => {
                let cf_report = cf.map(|(component, ideal, speedup)| CounterfactualReport {
                    idealized: component.name().to_string(),
                    throughput: ideal.throughput.into(),
                    speedup: speedup.map(RatValue::from),
                });
                reports.push(report::prediction_report(
                    &path.display().to_string(),
                    &cfg.name,
                    &prediction,
                    cf_report,
                ));
            }
            _ => {
                if position > 0 {
                    println!();
                }
                print_prediction_text(&path.display().to_string(), &cfg.name, &prediction);
                if let Some((component, ideal, speedup)) = cf {
                    println!("idealizing {}:", component);
                    println!(
                        "  throughput: {} cycles/iteration",
                        format2(ideal.throughput)
                    );
                    match speedup {
                        Some(s) => println!("  speedup: {}", format2(s)),
                        None => println!("  speedup: unbounded"),
                    }
                }
            }
        }
    }

    if args.common.output.as_str() == "json" {
        if reports.len() == 1 {
            println!("{}", serde_json::to_string_pretty(&reports[0])?);
        } else {
            println!("{}", serde_json::to_string_pretty(&reports)?);
        }
    }
    Ok(())
}

fn print_prediction_text(block_name: &str, arch: &str, prediction: &Prediction) {
    println!("block: {}", block_name);
    println!("arch: {}", arch);
    println!("mode: {}", prediction.mode);
    println!(
        "throughput: {} cycles/iteration",
        format2(prediction.throughput)
    );
    println!("components:");
    for result in prediction.components.values() {
        println!("  {} {}", result.component, format2(result.bound));
    }
    let names: Vec<&str> = prediction.bottlenecks.iter().map(|c| c.name()).collect();
    println!("bottlenecks: {}", names.join(", "));
    println!("primary bottleneck: {}", prediction.primary_bottleneck);
    for component in &prediction.bottlenecks {
        if let Some(text) = detail_text(&prediction.components[component].detail) {
            println!("{} detail: {}", component, text);
        }
    }
}

fn detail_text(detail: &Detail) -> Option<String> {
    match detail {
        Detail::None => None,
        Detail::Predecode { blocks } => {
            let parts: Vec<String> = blocks
                .iter()
                .map(|b| {
                    format!(
                        "block {}: L={} O={} LCP={} cycles {}+{}",
                        b.block_index,
                        b.last_byte_count,
                        b.opcode_only_count,
                        b.lcp_count,
                        b.cycles_nlcp,
                        b.cycles_lcp
                    )
                })
                .collect();
            Some(parts.join("; "))
        }
        Detail::Decode {
            window_start_iteration,
            complex_per_iteration,
        } => Some(format!(
            "complex-decoder activations per iteration {:?} (steady state from iteration {})",
            complex_per_iteration, window_start_iteration
        )),
        Detail::Ports {
            limiting,
            uop_count,
            instructions,
        } => Some(format!(
            "ports {} hold {} uops from instructions {:?}",
            limiting, uop_count, instructions
        )),
        Detail::Precedence {
            cycle,
            defaulted_latencies,
        } => {
            if cycle.is_empty() {
                return None;
            }
            let chain: Vec<String> = cycle.iter().map(|n| n.to_string()).collect();
            let mut text = format!("critical chain {}", chain.join(" -> "));
            if !defaulted_latencies.is_empty() {
                text.push_str(&format!(
                    " ({} latency entries defaulted)",
                    defaulted_latencies.len()
                ));
            }
            Some(text)
        }
    }
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mode = parse_mode(&args.common.mode)?;
    let tau_variant: TauVariant = args.tau.parse().map_err(|e: String| anyhow!(e))?;
    let cfg = load_arch(&args.common.config_dir, &args.common.arch)?;
    let db = load_db(&args.common.db)?;
    let corpus = args.corpus.clone().unwrap_or_else(|| {
        args.measurements
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });

    let measurements = io::load_measurements(&args.measurements).map_err(|e| anyhow!(e))?;

    let mut pairs: Vec<(Rat, Rat)> = Vec::new();
    let mut rows: Vec<(String, Rat, Rat, String)> = Vec::new();
    let mut skipped = 0usize;
    let mut total_time = std::time::Duration::ZERO;

    for row in measurements {
        let Some(measured) = rational::parse_decimal(&row.measured) else {
            eprintln!(
                "warning: skipping {}: unparsable measured value '{}'",
                row.block, row.measured
            );
            skipped += 1;
            continue;
        };
        if measured <= Rat::from_integer(0) {
            eprintln!(
                "warning: skipping {}: non-positive measured value {}",
                row.block, row.measured
            );
            skipped += 1;
            continue;
        }
        let path = corpus.join(&row.block);
        let started = Instant::now();
        let outcome = io::load_block(&path, &db, &cfg)
            .map_err(|e| anyhow!(e))
            .and_then(|block| combine::predict(&block, &cfg, mode).map_err(|e| anyhow!(e)));
        total_time += started.elapsed();
        let (predicted, bottleneck) = match outcome {
            Ok(prediction) => (
                round2(prediction.throughput),
                prediction.primary_bottleneck.name().to_string(),
            ),
            Err(err) => {
                eprintln!(
                    "warning: {}: {:#}; reporting a throughput of zero",
                    row.block, err
                );
                (Rat::from_integer(0), "error".to_string())
            }
        };
        pairs.push((measured, predicted));
        rows.push((row.block, measured, predicted, bottleneck));
    }

    if args.time && !rows.is_empty() {
        eprintln!(
            "mean analysis time per block: {:.1?}",
            total_time / rows.len() as u32
        );
    }

    let mape = metrics::mape(&pairs);
    let tau = metrics::kendall_tau(&pairs, tau_variant);
    let tau_name = match tau_variant {
        TauVariant::A => "tau-a",
        TauVariant::B => "tau-b",
    };

    if let Some(path) = &args.per_block {
        let mut writer = csv::Writer::from_path(path)
            .with_context(|| format!("cannot write {}", path.display()))?;
        writer.write_record(["block", "measured", "predicted", "bottleneck"])?;
        for (block, measured, predicted, bottleneck) in &rows {
            writer.write_record([
                block.as_str(),
                &format2(*measured),
                &format2(*predicted),
                bottleneck.as_str(),
            ])?;
        }
        writer.flush()?;
    }

    match args.common.output.as_str() {
        "json" => {
            let value = serde_json::json!({
                "arch": cfg.name,
                "mode": mode.to_string(),
                "blocks": rows.len(),
                "skipped": skipped,
                "mape_percent": mape.map(|m| RatValue::from(m * Rat::from_integer(100))),
                "tau_variant": tau_name,
                "tau": tau,
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        "text" => {
            println!("blocks: {} (skipped: {})", rows.len(), skipped);
            match mape {
                Some(m) => println!("MAPE: {}%", format2(m * Rat::from_integer(100))),
                None => println!("MAPE: n/a (no scored blocks)"),
            }
            println!("Kendall {}: {:.4}", tau_name, tau);
        }
        other => bail!(
            "unknown output format '{}' (expected 'text' or 'json')",
            other
        ),
    }
    Ok(())
}

/// Blocks per (bottleneck before, bottleneck after) pair.
type TransitionCounts = BTreeMap<(Component, Component), usize>;

struct ArchStudy {
    arch: String,
    /// Component keys iterate in pipeline order.
    bottlenecks: BTreeMap<Component, usize>,
    /// block name -> primary bottleneck
    per_block: BTreeMap<String, Component>,
    /// component -> speedups across blocks
    speedups: BTreeMap<Component, Vec<Rat>>,
    blocks: usize,
}

fn cmd_study(args: StudyArgs) -> Result<()> {
    let mode = parse_mode(&args.mode)?;
    let db = load_db(&args.db)?;

    let mut block_files: Vec<PathBuf> = std::fs::read_dir(&args.corpus)
        .with_context(|| format!("cannot read corpus directory {}", args.corpus.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    block_files.sort();
    if block_files.is_empty() {
        bail!("no block files (*.json) in {}", args.corpus.display());
    }

    let mut studies: Vec<ArchStudy> = Vec::new();
    for arch in &args.arch {
        let cfg = load_arch(&args.config_dir, arch)?;
        let mut study = ArchStudy {
            arch: cfg.name.clone(),
            bottlenecks: BTreeMap::new(),
            per_block: BTreeMap::new(),
            speedups: BTreeMap::new(),
            blocks: 0,
        };
        for path in &block_files {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let outcome = io::load_block(path, &db, &cfg)
                .map_err(|e| anyhow!(e))
                .and_then(|block| combine::predict(&block, &cfg, mode).map_err(|e| anyhow!(e)));
            let prediction = match outcome {
                Ok(p) => p,
                Err(err) => {
                    eprintln!("warning: {} on {}: {:#}; block skipped", arch, name, err);
                    continue;
                }
            };
            study.blocks += 1;
            let primary = prediction.primary_bottleneck;
            *study.bottlenecks.entry(primary).or_insert(0) += 1;
            study.per_block.insert(name.clone(), primary);
            for component in prediction.components.keys().copied().collect::<Vec<_>>() {
                let (_, speedup) =
                    counterfactual_of(&prediction, component).expect("component is present");
                match speedup {
                    Some(s) => study.speedups.entry(component).or_default().push(s),
                    None => eprintln!(
                        "warning: unbounded speedup idealizing {} on {}; excluded from aggregates",
                        component, name
                    ),
                }
            }
        }
        studies.push(study);
    }

    let mut transitions: Vec<(String, String, TransitionCounts)> = Vec::new();
    for pair in studies.windows(2) {
        let (from, to) = (&pair[0], &pair[1]);
        let mut counts = TransitionCounts::new();
        for (block, &from_bottleneck) in &from.per_block {
            if let Some(&to_bottleneck) = to.per_block.get(block) {
                *counts.entry((from_bottleneck, to_bottleneck)).or_insert(0) += 1;
            }
        }
        transitions.push((from.arch.clone(), to.arch.clone(), counts));
    }

    match args.output.as_str() {
        "json" => {
            let studies_json: Vec<serde_json::Value> = studies
                .iter()
                .map(|s| {
                    let shares: BTreeMap<String, serde_json::Value> = s
                        .bottlenecks
                        .iter()
                        .map(|(component, &count)| {
                            let share = Rat::new(count as i128 * 100, s.blocks.max(1) as i128);
                            (
                                component.name().to_string(),
                                serde_json::json!({
                                    "count": count,
                                    "percent": format2(share),
                                }),
                            )
                        })
                        .collect();
                    let speedups: BTreeMap<String, serde_json::Value> = s
                        .speedups
                        .iter()
                        .map(|(component, values)| {
                            (component.name().to_string(), aggregate_json(values))
                        })
                        .collect();
                    serde_json::json!({
                        "arch": s.arch,
                        "blocks": s.blocks,
                        "bottleneck_share": shares,
                        "idealization_speedup": speedups,
                    })
                })
                .collect();
            let transitions_json: Vec<serde_json::Value> = transitions
                .iter()
                .map(|(from, to, counts)| {
                    serde_json::json!({
                        "from": from,
                        "to": to,
                        "counts": counts
                            .iter()
                            .map(|(&(a, b), &c)| {
                                serde_json::json!({
                                    "from": a.name(),
                                    "to": b.name(),
                                    "blocks": c,
                                })
                            })
                            .collect::<Vec<_>>(),
                    })
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "mode": mode.to_string(),
                    "archs": studies_json,
                    "transitions": transitions_json,
                }))?
            );
        }
        "text" => {
            for s in &studies {
                println!("arch {}: {} blocks", s.arch, s.blocks);
                println!("bottleneck share:");
                for (component, &count) in &s.bottlenecks {
                    let share = Rat::new(count as i128 * 100, s.blocks.max(1) as i128);
                    println!("  {} {}% ({})", component, format2(share), count);
                }
                println!("idealization speedup (arithmetic/geometric/median):");
                for (component, values) in &s.speedups {
                    let (arith, geo, median) = aggregate(values);
                    println!(
                        "  {} {} / {:.2} / {}",
                        component,
                        format2(arith),
                        geo,
                        format2(median)
                    );
                }
                println!();
            }
            for (from, to, counts) in &transitions {
                println!("transitions {} -> {}:", from, to);
                for ((a, b), count) in counts {
                    println!("  {} -> {}: {}", a, b, count);
                }
                println!();
            }
        }
        other => bail!(
            "unknown output format '{}' (expected 'text' or 'json')",
            other
        ),
    }
    Ok(())
}

/// Arithmetic mean (exact), geometric mean (floating point), and median
/// (exact) of a non-empty speedup list.
fn aggregate(values: &[Rat]) -> (Rat, f64, Rat) {
    let n = values.len();
    let arith: Rat = values.iter().copied().sum::<Rat>() / Rat::from_integer(n as i128);
    let geo = (values
        .iter()
        .map(|r| (*r.numer() as f64 / *r.denom() as f64).ln())
        .sum::<f64>()
        / n as f64)
        .exp();
    let mut sorted = values.to_vec();
    sorted.sort();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / Rat::from_integer(2)
    };
    (arith, geo, median)
}

fn aggregate_json(values: &[Rat]) -> serde_json::Value {
    let (arith, geo, median) = aggregate(values);
    serde_json::json!({
        "arithmetic": format2(arith),
        "geometric": format!("{:.2}", geo),
        "median": format2(median),
        "blocks": values.len(),
    })
}
