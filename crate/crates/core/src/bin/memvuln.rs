use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use memvuln::cachesim::{dump::DumpWriter, simulate, CacheConfig, Discard};
use memvuln::cg::{io as cgio, PoissonSystem, SolveOptions, DEFAULT_TOL_FACTOR, DEFAULT_T_MAX};
use memvuln::faultmodel::{self, AccessTimeline, FaultModelParams};
use memvuln::inject::{self, CampaignConfig};
use memvuln::layout::{StructureId, StructureMap};
use memvuln::pipeline::{self, CampaignSetup, MetricsSetup};
use memvuln::trace::{create_trace, load_trace, record_solve, TraceInfo};
use memvuln::vulnmetrics::{self, Accumulator, DEFAULT_FIT_PER_CYCLE};

type Error = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(
    name = "memvuln",
    version,
    about = "Memory vulnerability metrics and fault injection for a CG solver"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the 27-point Poisson matrix for a cubic grid.
    Matrix {
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Run a trace through the cache hierarchy.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
        /// Write the memory request stream here.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Per-structure MVF, FEA, DVF and LD/ST from a trace.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Word size in bytes: 8 (SECDED) or 16 (ChipKill).
        #[arg(long, default_value_t = 8)]
        granularity: u64,
        /// Faults per byte per cycle used for DVF.
        #[arg(long, default_value_t = DEFAULT_FIT_PER_CYCLE)]
        fit: f64,
        /// Also write per-word MVF/FEA histograms.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Faultmodel(FaultCmd),
    #[command(subcommand)]
    Inject(InjectCmd),
    /// Simulate, compute metrics, run campaigns and compare.
    Pipeline {
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = DEFAULT_TOL_FACTOR)]
        tol: f64,
        /// Injections per structure; 0 reports metrics only.
        #[arg(long, default_value_t = 1000)]
        runs: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        parallel: Option<usize>,
        /// Comma-separated structures to inject (default: all nine).
        #[arg(long, value_delimiter = ',')]
        structures: Vec<StructureId>,
        #[arg(long, default_value = "memvuln-out")]
        out_dir: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
    },
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Trace a solve of the side³ Poisson problem.
    Record {
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = DEFAULT_TOL_FACTOR)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a trace file.
    Info { trace: PathBuf },
}

#[derive(Subcommand)]
enum FaultCmd {
    /// Compare exact, product, linear and Monte-Carlo consumption probabilities.
    Check {
        #[arg(long)]
        lambda: f64,
        /// `T <cycles>` then `<time> safe|unsafe` lines.
        #[arg(long)]
        timeline_file: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum InjectCmd {
    /// Single-bit injections into one structure.
    Campaign {
        #[arg(long)]
        structure: StructureId,
        #[arg(long, default_value_t = 1000)]
        runs: u64,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = DEFAULT_TOL_FACTOR)]
        tol: f64,
        /// Resumable per-run log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        baseline_runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CacheArgs {
    /// Cache configuration file; default is the reference hierarchy scaled
    /// to the grid side.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl CacheArgs {
    fn resolve(&self, side: usize) -> Result<CacheConfig, Error> {
        Ok(match &self.config {
            Some(p) => CacheConfig::parse(&std::fs::read_to_string(p)?)?,
            None => CacheConfig::for_grid_side(side)?,
        })
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Grid side of the standard layout, recovered from the length of `x`.
fn side_of(map: &StructureMap) -> usize {
    let n = map.get(StructureId::X).map_or(0, |r| r.words());
    (n as f64).cbrt().round() as usize
}

fn worker_exe() -> Result<PathBuf, Error> {
    Ok(std::env::current_exe()?)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Matrix { side, out } => {
            cgio::save_matrix(&out, &memvuln::cg::generate_poisson27(side)?)?;
        }
        Cmd::Trace(TraceCmd::Record { side, tol, out }) => {
            let sys = PoissonSystem::generate(side, tol)?;
            let problem = sys.problem()?;
            let writer = create_trace(&out, problem.structure_map())?;
            let opts = SolveOptions::new(sys.tol, DEFAULT_T_MAX);
            let (rec, roi, writer) = record_solve(&problem, &opts, writer)?;
            let events = writer.events_written();
            writer.finish(roi)?;
            eprintln!(
                "{} iterations, converged {}, {} events, ROI [{}, {})",
                rec.iterations, rec.converged, events, roi.roi_start, roi.roi_end
            );
        }
        Cmd::Trace(TraceCmd::Info { trace }) => {
            let reader = load_trace(&trace)?;
            let map = reader.structure_map().clone();
            let roi = reader.roi();
            let info = TraceInfo::collect(&map, roi, reader)?;
            let mut w = output(None)?;
            writeln!(w, "roi {} {}", info.roi.roi_start, info.roi.roi_end)?;
            writeln!(w, "events {} in_roi {}", info.events, info.events_in_roi)?;
            writeln!(w, "structure,loads,stores")?;
            for (name, loads, stores) in &info.per_structure {
                writeln!(w, "{name},{loads},{stores}")?;
            }
        }
        Cmd::Simulate { trace, cache, dump } => {
            let reader = load_trace(&trace)?;
            let cfg = cache.resolve(side_of(reader.structure_map()))?;
            let roi = reader.roi();
            let (total_cycles, stats) = match &dump {
                Some(p) => {
                    let out = simulate(reader, roi, &cfg, DumpWriter::new(BufWriter::new(File::create(p)?))?)?;
                    out.sink.finish()?;
                    (out.total_cycles, out.stats)
                }
                None => {
                    let out = simulate(reader, roi, &cfg, Discard)?;
                    (out.total_cycles, out.stats)
                }
            };
            println!("total_cycles {total_cycles}");
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Cmd::Metrics {
            trace,
            cache,
            format,
            granularity,
            fit,
            histogram,
            out,
        } => {
            let reader = load_trace(&trace)?;
            let map = reader.structure_map().clone();
            let cfg = cache.resolve(side_of(&map))?;
            let roi = reader.roi();
            let acc = Accumulator::new(&map, granularity)?;
            let sim = simulate(reader, roi, &cfg, acc)?;
            let ledgers: Vec<_> = sim
                .sink
                .finish(sim.total_cycles)?
                .into_iter()
                .filter(|l| StructureId::TRACKED.contains(&l.id))
                .collect();
            let reports = vulnmetrics::aggregate(&ledgers, fit)?;
            let w = output(out.as_deref())?;
            match format {
                Format::Csv => vulnmetrics::write_csv(&reports, w)?,
                Format::Json => vulnmetrics::write_json(&reports, w)?,
            }
            if let Some(h) = histogram {
                vulnmetrics::write_histogram(&ledgers, 20, BufWriter::new(File::create(h)?))?;
            }
        }
        Cmd::Faultmodel(FaultCmd::Check {
            lambda,
            timeline_file,
            trials,
            seed,
        }) => {
            let tl = AccessTimeline::parse(&std::fs::read_to_string(&timeline_file)?)?;
            let params = FaultModelParams::new(lambda, tl.roi_cycles())?;
            let mc = faultmodel::monte_carlo_consume(&tl, &params, trials, seed)?;
            let mut w = output(None)?;
            writeln!(
                w,
                "lambda_t {:e} rare_regime {}",
                params.expected_faults(),
                params.rare_regime()
            )?;
            writeln!(w, "vulnerability {:.9}", tl.vulnerability())?;
            writeln!(w, "method,probability,ci99_lo,ci99_hi")?;
            writeln!(w, "exact,{:e},,", faultmodel::p_consume_exact(&tl, &params))?;
            writeln!(w, "product,{:e},,", faultmodel::p_consume_product(&tl, &params))?;
            writeln!(w, "linear,{:e},,", faultmodel::p_consume_linear(&tl, &params))?;
            writeln!(w, "monte_carlo,{:e},{:e},{:e}", mc.estimate, mc.ci.lo, mc.ci.hi)?;
        }
        Cmd::Inject(InjectCmd::Campaign {
            structure,
            runs,
            parallel,
            seed,
            side,
            tol,
            log,
            baseline_runs,
            out,
        }) => {
            let matrix = inject::prepare_matrix(side, &inject::scratch_dir())?;
            let mut cfg = CampaignConfig::new(worker_exe()?, matrix, tol, seed);
            if let Some(p) = parallel {
                cfg.parallel = p.max(1);
            }
            cfg.baseline_runs = baseline_runs;
            cfg.log = log;
            let baseline = inject::measure_baseline(&cfg)?;
            eprintln!(
                "baseline: {} iterations, {:.4} s",
                baseline.iterations, baseline.wall_time
            );
            let result = inject::run_campaign(&cfg, &baseline, structure, runs)?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &result)?;
            writeln!(w)?;
        }
        Cmd::Pipeline {
            side,
            tol,
            runs,
            seed,
            parallel,
            structures,
            out_dir,
            cache,
        } => {
            std::fs::create_dir_all(&out_dir)?;
            let mut setup = MetricsSetup::new(side, tol);
            setup.cache = Some(cache.resolve(side)?);
            let campaign = CampaignSetup {
                worker_exe: worker_exe()?,
                runs_per_structure: runs,
                seed,
                parallel: parallel.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
                baseline_runs: 5,
                scratch: inject::scratch_dir(),
            };
            let structures = if structures.is_empty() {
                StructureId::TRACKED.to_vec()
            } else {
                structures
            };
            let (report, metrics) =
                pipeline::run_pipeline(&setup, Some(&campaign), &structures, |m| eprintln!("[pipeline] {m}"))?;
            vulnmetrics::write_csv(&metrics.reports, File::create(out_dir.join("metrics.csv"))?)?;
            pipeline::write_csv(&report, File::create(out_dir.join("validation.csv"))?)?;
            pipeline::write_plot_data(&report, File::create(out_dir.join("validation.dat"))?)?;
            std::fs::write(out_dir.join("validation.gp"), pipeline::GNUPLOT_SCRIPT)?;
            serde_json::to_writer_pretty(File::create(out_dir.join("validation.json"))?, &report)?;
            pipeline::write_csv(&report, io::stdout().lock())?;
            if !report.passed() {
                for v in &report.violations {
                    eprintln!(
                        "bound violation: {} {} = {:.4} below injection lower bound {:.4}",
                        v.structure,
                        v.metric.name(),
                        v.value,
                        v.ci_lo
                    );
                }
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // `inject run-one`: the hidden per-run worker used by campaigns
    if let Some(code) = inject::serve_worker() {
        return ExitCode::from(code as u8);
    }
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
