//! `rulefine`: file-to-file pipeline for outcome-rule mining and signal
//! refinement. Each stage reads and writes files so the expensive mining
//! step can be reused across many signals.

use std::{
    fs::{self, File},
    io::{self, BufWriter, Write},
    path::{Path, PathBuf},
    process::ExitCode,
    time::Instant,
};

use clap::{Args, Parser, Subcommand};
use rulefine::{
    basket::BasketDatabase,
    codes::{Item, READ_ITEM_LEVEL},
    events::{EventStore, LoadOptions},
    mining::{
        mine_all_rules, mine_rules, read_rules, write_rules_csv, write_rules_json,
        MiningConstraints,
    },
    refine::{refine, write_report_csv, write_report_json, RefineParams},
    signal::{
        ab_ratio, find_instances, read_instances_csv, write_instances_csv, SignalSpec, Window,
    },
    synth::{background_match_rate, expected_filter_rate, generate, ScenarioConfig},
    Error, Result,
};

#[derive(Debug, Parser)]
#[command(name = "rulefine", version, about)]
struct Cli {
    /// Worker threads for parallel stages [default: available parallelism].
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the input files; print patient/event counts as JSON.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        /// Patients with fewer active months are not eligible.
        #[arg(long, default_value_t = 24)]
        min_active_months: u32,
        /// Also write the basket of every eligible patient to this CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mine association rules; `.json` output is JSON, anything else CSV.
    Mine {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        mining: MiningArgs,
        /// Only mine rules whose consequent is this signal's outcome.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the after/before ratio and the signal instances.
    Signal {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for ab_ratio.csv and instances.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine a signal against mined rules; writes report.json and report.csv.
    Refine {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        /// Use these instances instead of deriving them from the records.
        #[arg(long)]
        instances: Option<PathBuf>,
        /// An instance is expected when a matched rule's lift exceeds this.
        #[arg(long, default_value_t = 1.0)]
        lift_threshold: f64,
        /// Count events on the outcome date as preceding the outcome.
        #[arg(long)]
        include_same_day: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort with ground-truth labels.
    Synth {
        /// Scenario configuration (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    patients: PathBuf,
    #[arg(long)]
    events: PathBuf,
    /// Drop prescriptions within this many months of registration.
    #[arg(long, default_value_t = 12)]
    exclusion_months: u32,
    /// Drop prescriptions within this many days of the database end.
    #[arg(long, default_value_t = 30)]
    end_buffer_days: u32,
}

#[derive(Debug, Args)]
struct MiningArgs {
    #[arg(long, default_value_t = 0.001)]
    min_left_support: f64,
    #[arg(long, default_value_t = 0.01)]
    min_confidence: f64,
    #[arg(long, default_value_t = 3)]
    max_antecedent: usize,
    /// Patients with fewer active months are left out of the baskets.
    #[arg(long, default_value_t = 24)]
    min_active_months: u32,
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// First day after exposure in the risk window; overrides the spec [default: 1].
    #[arg(long)]
    window_start: Option<u32>,
    /// Last day after exposure in the risk window; overrides the spec [default: 60].
    #[arg(long)]
    window_end: Option<u32>,
}

impl WindowArgs {
    fn apply(&self, spec: &mut SignalSpec) -> Result<()> {
        let start = self.window_start.unwrap_or(spec.window.start);
        let end = self.window_end.unwrap_or(spec.window.end);
        spec.window = Window::new(start, end)?;
        Ok(())
    }
}

fn log(stage: &str, started: Instant, fields: &[(&str, String)]) {
    let mut line = format!("stage={stage} elapsed_ms={}", started.elapsed().as_millis());
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

fn finish(path: &Path, mut w: impl Write) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads the records and applies the prescription exclusions.
fn load(input: &InputArgs) -> Result<(EventStore, EventStore)> {
    let t = Instant::now();
    let raw = EventStore::load(&input.patients, &input.events, &LoadOptions::default())?;
    let store = raw.apply_prescription_exclusions(input.exclusion_months, input.end_buffer_days);
    log(
        "ingest",
        t,
        &[
            ("patients", raw.patient_count().to_string()),
            ("events", raw.event_count().to_string()),
            ("events_after_exclusions", store.event_count().to_string()),
        ],
    );
    Ok((raw, store))
}

fn load_spec(path: &Path, window: &WindowArgs) -> Result<SignalSpec> {
    let mut spec = SignalSpec::from_file(path)?;
    window.apply(&mut spec)?;
    Ok(spec)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            input,
            min_active_months,
            out,
        } => {
            let (raw, store) = load(&input)?;
            let eligible = store.eligible_patients(min_active_months).len();
            let summary = serde_json::json!({
                "patients": raw.patient_count(),
                "events": raw.event_count(),
                "events_after_exclusions": store.event_count(),
                "eligible_patients": eligible,
                "db_end_date": raw.db_end_date(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(out) = out {
                let db = BasketDatabase::build(&store, min_active_months)?;
                let mut w = create(&out)?;
                db.write_csv(&mut w).map_err(csv_err(&out))?;
                finish(&out, w)?;
            }
        }
        Command::Mine {
            input,
            mining,
            spec,
            out,
        } => {
            let constraints = MiningConstraints {
                min_left_support: mining.min_left_support,
                min_confidence: mining.min_confidence,
                max_antecedent: mining.max_antecedent,
            };
            constraints.validate()?;
            let consequent = match &spec {
                Some(p) => {
                    let hoi = SignalSpec::from_file(p)?.hoi;
                    Some(Item::read(&hoi.truncate(READ_ITEM_LEVEL)?))
                }
                None => None,
            };
            let (_, store) = load(&input)?;
            let t = Instant::now();
            let db = BasketDatabase::build(&store, mining.min_active_months)?;
            log(
                "baskets",
                t,
                &[
                    ("baskets", db.len().to_string()),
                    ("items", db.item_count().to_string()),
                ],
            );
            let t = Instant::now();
            let rules = match &consequent {
                Some(c) => mine_rules(&db, c, &constraints)?,
                None => mine_all_rules(&db, &constraints)?,
            };
            log("mine", t, &[("rules", rules.len().to_string())]);
            let mut w = create(&out)?;
            if out.extension().is_some_and(|e| e == "json") {
                write_rules_json(&mut w, &rules)?;
            } else {
                write_rules_csv(&mut w, &rules).map_err(csv_err(&out))?;
            }
            finish(&out, w)?;
        }
        Command::Signal {
            input,
            window,
            spec,
            out,
        } => {
            let spec = load_spec(&spec, &window)?;
            let (_, store) = load(&input)?;
            let t = Instant::now();
            let ratio = ab_ratio(&spec, &store);
            let instances = find_instances(&spec, &store);
            log(
                "signal",
                t,
                &[
                    ("after", ratio.after_count.to_string()),
                    ("before", ratio.before_count.to_string()),
                    ("instances", instances.len().to_string()),
                ],
            );
            create_dir(&out)?;
            let path = out.join("ab_ratio.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            let code = spec.hoi.to_string();
            let header = ["hoi", "read_code", "after", "before", "ab_ratio"];
            let row = [
                spec.name.clone().unwrap_or_else(|| code.clone()),
                code,
                ratio.after_count.to_string(),
                ratio.before_count.to_string(),
                rulefine::mining::fmt_real(ratio.ratio),
            ];
            w.write_record(header).map_err(csv_err(&path))?;
            w.write_record(&row).map_err(csv_err(&path))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            let path = out.join("instances.csv");
            let mut w = create(&path)?;
            write_instances_csv(&mut w, &instances).map_err(csv_err(&path))?;
            finish(&path, w)?;
        }
        Command::Refine {
            input,
            window,
            spec,
            rules,
            instances,
            lift_threshold,
            include_same_day,
            out,
        } => {
            let spec = load_spec(&spec, &window)?;
            let rules = read_rules(&rules)?;
            let instances = instances.as_deref().map(read_instances_csv).transpose()?;
            let (_, store) = load(&input)?;
            let params = RefineParams {
                lift_threshold,
                include_same_day,
            };
            let t = Instant::now();
            let report = refine(&spec, &rules, &store, &params, instances)?;
            log(
                "refine",
                t,
                &[
                    ("hoi_rules", report.hoi_rule_count.to_string()),
                    ("instances", report.instance_count.to_string()),
                    ("expected", report.expected_count.to_string()),
                    ("exposed", report.exposure_count.to_string()),
                ],
            );
            create_dir(&out)?;
            let path = out.join("report.json");
            let mut w = create(&path)?;
            write_report_json(&mut w, &report)?;
            finish(&path, w)?;
            let path = out.join("report.csv");
            let mut w = create(&path)?;
            write_report_csv(&mut w, &report).map_err(csv_err(&path))?;
            finish(&path, w)?;
            write_report_csv(io::stdout().lock(), &report)
                .map_err(csv_err(Path::new("<stdout>")))?;
        }
        Command::Synth { spec, seed, out } => {
            let mut config = ScenarioConfig::from_file(&spec)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let t = Instant::now();
            let cohort = generate(&config)?;
            cohort.write(&out, &config)?;
            log(
                "synth",
                t,
                &[
                    ("patients", cohort.patients.len().to_string()),
                    ("events", cohort.events.len().to_string()),
                    ("outcomes", cohort.truth.len().to_string()),
                ],
            );
            let summary = serde_json::json!({
                "seed": config.seed,
                "patients": cohort.patients.len(),
                "events": cohort.events.len(),
                "outcomes": cohort.truth.len(),
                "expected_filter_rate": expected_filter_rate(&config),
                "background_match_rate": background_match_rate(&config),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        let built = if n == 0 {
            Err(Error::Config("--workers must be at least 1".into()))
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(e.to_string()))
        };
        if let Err(e) = built {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
