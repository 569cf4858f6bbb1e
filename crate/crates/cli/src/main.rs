use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use pico_core::cost::Cluster;
use pico_core::io::{self, PieceChainFile, PlanFile, ReportFile};
use pico_core::oracle::{oracle_heterogeneous, oracle_homogeneous};
use pico_core::partition::{partition, partition_large, PieceChain, DEFAULT_MAX_DIAMETER};
use pico_core::planner::{plan_with_rule, PipelinePlan, SlotRule};
use pico_core::simulator::{simulate, Arrival, SimConfig};
use pico_core::{graph, Error};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "pico",
    version,
    about = "Plan and simulate pipelined CNN inference on device clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Max,
    Min,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a model graph into a chain of pieces.
    Partition {
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_DIAMETER)]
        max_diameter: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Solve the graph in chunks of this many layers (for very wide models).
        #[arg(long, requires = "margin")]
        chunk: Option<usize>,
        /// Distance from a chunk cut below which pieces are re-solved.
        #[arg(long, requires = "chunk")]
        margin: Option<usize>,
    },
    /// Build a pipeline plan for a cluster.
    Plan {
        pieces: PathBuf,
        cluster: PathBuf,
        /// Latency cap in seconds.
        #[arg(long, default_value = "inf")]
        t_lim: f64,
        #[arg(short, long)]
        output: PathBuf,
        /// How the adaptation step picks the stage for each device.
        #[arg(long, value_enum, default_value_t = Rule::Max)]
        slot_rule: Rule,
    },
    /// Find the optimal plan by exhaustive search (small instances only).
    Oracle {
        pieces: PathBuf,
        cluster: PathBuf,
        #[arg(long, default_value = "inf")]
        t_lim: f64,
        /// Plan whose period is compared against the optimum.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay a plan over a stream of frames.
    Simulate {
        plan: PathBuf,
        cluster: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Percent of multiplicative slowdown noise on every timed step.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        queue: usize,
        /// Offer frames at this fixed interval (seconds) instead of saturating the pipeline.
        #[arg(long)]
        interval: Option<f64>,
        /// Write the event log as JSON lines.
        #[arg(long)]
        events: Option<PathBuf>,
        /// JSON report path; a CSV with one row per device is written alongside.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Merge simulation reports into one CSV.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
    detail: Option<String>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptyModel => 2,
            _ => 1,
        };
        let detail = match &e {
            Error::Infeasible {
                best_effort: Some(plan),
                ..
            } => Some(format!("best-effort plan:\n{}", stage_table(plan))),
            _ => None,
        };
        Failure {
            code,
            message: e.to_string(),
            detail,
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: 2,
        message,
        detail: None,
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
        detail: None,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_cluster(path: &Path) -> Result<Cluster, Failure> {
    Ok(io::parse_cluster(&read(path)?)?)
}

fn load_pieces(path: &Path) -> Result<PieceChain, Failure> {
    Ok(io::parse_piece_chain(&read(path)?)?)
}

fn load_plan(path: &Path, cluster: &Cluster) -> Result<(PipelinePlan, PieceChain), Failure> {
    Ok(io::parse_plan_with_chain(&read(path)?, cluster)?)
}

fn plan_json(plan: &PipelinePlan, chain: &PieceChain) -> String {
    io::to_json(&PlanFile::with_chain(plan, chain))
}

fn stage_table(plan: &PipelinePlan) -> String {
    let mut out = String::from(
        "stage  pieces     devices                         t_comp_s     t_comm_s     t_stage_s\n",
    );
    for (k, s) in plan.stages.iter().enumerate() {
        out.push_str(&format!(
            "{:<6} {:<10} {:<31} {:<12.6} {:<12.6} {:.6}\n",
            k,
            format!("{}-{}", s.pieces.0, s.pieces.1),
            s.devices.join(","),
            s.cost.stage_compute_s,
            s.cost.stage_comm_s,
            s.cost.stage_total_s
        ));
    }
    out.push_str(&format!(
        "period {:.6} s, latency {:.6} s\n",
        plan.period_s, plan.latency_s
    ));
    out
}

fn cmd_partition(
    model: &Path,
    max_diameter: usize,
    output: &Path,
    chunk: Option<(usize, usize)>,
) -> Result<(), Failure> {
    let g = graph::parse_model(&read(model)?)?;
    let clock = Instant::now();
    let result = match chunk {
        Some((c, m)) => partition_large(&g, c, m, max_diameter)?,
        None => partition(&g, max_diameter)?,
    };
    let elapsed = clock.elapsed().as_secs_f64();
    write(
        output,
        &io::to_json(&PieceChainFile::from_result(&g, max_diameter, &result)),
    )?;
    println!(
        "model {}: {} layers, width {}",
        g.name(),
        g.len(),
        graph::width(&g)
    );
    println!("pieces {}", result.pieces.len());
    println!("objective {} redundant FLOPs", result.objective);
    println!(
        "memo entries {}, hits {}, redundancy evaluations {}",
        result.memo_stats.table_size,
        result.memo_stats.hits,
        result.memo_stats.redundancy_evaluations
    );
    println!("time {elapsed:.3} s");
    Ok(())
}

fn cmd_plan(
    pieces: &Path,
    cluster: &Path,
    t_lim: f64,
    output: &Path,
    rule: SlotRule,
) -> Result<(), Failure> {
    let chain = load_pieces(pieces)?;
    let c = load_cluster(cluster)?;
    let clock = Instant::now();
    let plan = plan_with_rule(&chain, &c, &stem(cluster), t_lim, rule)?;
    let elapsed = clock.elapsed().as_secs_f64();
    write(output, &plan_json(&plan, &chain))?;
    print!("{}", stage_table(&plan));
    println!("planning time {elapsed:.3} s");
    Ok(())
}

fn cmd_oracle(
    pieces: &Path,
    cluster: &Path,
    t_lim: f64,
    compare: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let chain = load_pieces(pieces)?;
    let c = load_cluster(cluster)?;
    let mut report = if c.is_uniform() {
        oracle_homogeneous(&chain, &c, t_lim)?
    } else {
        oracle_heterogeneous(&chain, &c, t_lim)?
    };
    report.best_plan.cluster = stem(cluster);
    println!("optimal period {:.9} s", report.best_plan.period_s);
    println!("latency {:.9} s", report.best_plan.latency_s);
    println!("explored states {}", report.explored_states);
    println!("search time {:.3} s", report.wall_time_s);
    if let Some(path) = compare {
        let (other, _) = load_plan(path, &c)?;
        println!("gap {:.6}", report.compare(&other));
    }
    if let Some(path) = output {
        write(path, &plan_json(&report.best_plan, &chain))?;
    }
    Ok(())
}

fn cmd_simulate(
    plan: &Path,
    cluster: &Path,
    cfg: SimConfig,
    events: Option<&Path>,
    output: &Path,
) -> Result<(), Failure> {
    let c = load_cluster(cluster)?;
    let (plan, chain) = load_plan(plan, &c)?;
    let report = simulate(&plan, &chain, &c, &cfg)?;
    let file = ReportFile::from_report(&plan.model, &report);
    let json_path = if output.extension().is_some_and(|e| e == "csv") {
        output.with_extension("json")
    } else {
        output.to_path_buf()
    };
    write(&json_path, &io::to_json(&file))?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    for d in &file.devices {
        csv.serialize(d).map_err(|e| usage(e.to_string()))?;
    }
    let bytes = csv.into_inner().map_err(|e| usage(e.to_string()))?;
    write(
        &json_path.with_extension("csv"),
        &String::from_utf8_lossy(&bytes),
    )?;
    if let (Some(path), Some(timeline)) = (events, &report.timeline) {
        write(path, &io::events_to_lines(timeline))?;
    }
    println!(
        "predicted period {:.6} s, latency {:.6} s",
        report.predicted_period_s, report.predicted_latency_s
    );
    println!(
        "measured period {:.6} s, latency {:.6} s",
        report.measured_period_s, report.measured_latency_s
    );
    println!("throughput {:.3} frames/min", report.throughput_fpm);
    Ok(())
}

#[derive(Serialize)]
struct MergedRow<'a> {
    run: &'a str,
    device: &'a str,
    stage: usize,
    utilization_pct: f64,
    redundancy_pct: f64,
    model_bytes: u64,
    feature_bytes: u64,
    measured_period_s: f64,
    measured_latency_s: f64,
    throughput_fpm: f64,
}

fn cmd_report(reports: &[PathBuf], output: &Path) -> Result<(), Failure> {
    let mut runs: Vec<(String, ReportFile)> = Vec::new();
    for path in reports {
        let r = io::parse_report(&read(path)?)?;
        let base = stem(path);
        let mut name = base.clone();
        let mut n = 2;
        while runs.iter().any(|(r, _)| *r == name) {
            name = format!("{base}_{n}");
            n += 1;
        }
        runs.push((name, r));
    }
    let mut csv = csv::Writer::from_writer(Vec::new());
    for (run, r) in &runs {
        for d in &r.devices {
            csv.serialize(MergedRow {
                run,
                device: &d.device,
                stage: d.stage,
                utilization_pct: d.utilization_pct,
                redundancy_pct: d.redundancy_pct,
                model_bytes: d.model_bytes,
                feature_bytes: d.feature_bytes,
                measured_period_s: r.measured_period_s,
                measured_latency_s: r.measured_latency_s,
                throughput_fpm: r.throughput_fpm,
            })
            .map_err(|e| usage(e.to_string()))?;
        }
    }
    let bytes = csv.into_inner().map_err(|e| usage(e.to_string()))?;
    write(output, &String::from_utf8_lossy(&bytes))?;
    println!("merged {} reports into {}", runs.len(), output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Partition {
            model,
            max_diameter,
            output,
            chunk,
            margin,
        } => cmd_partition(&model, max_diameter, &output, chunk.zip(margin)),
        Command::Plan {
            pieces,
            cluster,
            t_lim,
            output,
            slot_rule,
        } => {
            let rule = match slot_rule {
                Rule::Max => SlotRule::Max,
                Rule::Min => SlotRule::Min,
            };
            cmd_plan(&pieces, &cluster, t_lim, &output, rule)
        }
        Command::Oracle {
            pieces,
            cluster,
            t_lim,
            compare,
            output,
        } => cmd_oracle(
            &pieces,
            &cluster,
            t_lim,
            compare.as_deref(),
            output.as_deref(),
        ),
        Command::Simulate {
            plan,
            cluster,
            frames,
            jitter,
            seed,
            queue,
            interval,
            events,
            output,
        } => {
            let cfg = SimConfig {
                frames,
                arrival: interval.map_or(Arrival::Saturated, Arrival::FixedInterval),
                jitter_pct: jitter,
                seed,
                queue_capacity: queue,
                record_events: events.is_some(),
            };
            cmd_simulate(&plan, &cluster, cfg, events.as_deref(), &output)
        }
        Command::Report { reports, output } => cmd_report(&reports, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PICO_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            if let Some(d) = f.detail {
                println!("{d}");
            }
            log::debug!("exit code {}", f.code);
            ExitCode::from(f.code)
        }
    }
}
