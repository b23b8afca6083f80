use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use smellscape::geo::AssignMode;
use smellscape::ingest::Source;
use smellscape::lexicon::{intersect_annotations, load_lexicon, read_blocklist, write_lexicon, SmellLexicon, SmellTerm};
use smellscape::pipeline::{run_pipeline, run_stage, PipelineConfig, PollutionSource, OUTPUT_DIR_ENV};
use smellscape::spatialstats::ClassSpec;
use smellscape::synth::{generate_synthetic_city, write_synthetic_city, SynthSpec};

#[derive(Parser)]
#[command(name = "smellscape", version, about = "Map urban smells from geo-referenced social-media text")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or check a smell lexicon.
    #[command(subcommand)]
    Lexicon(LexiconCommand),
    /// Match items against the lexicon.
    Match(ConfigArgs),
    /// Build the co-occurrence graph of matched words.
    Graph(ConfigArgs),
    /// Derive the category hierarchy.
    Classify(ConfigArgs),
    /// Attribute items to street segments.
    Assign(ConfigArgs),
    /// Compute smell vectors and base notes.
    Profile(ConfigArgs),
    /// Correlate smell categories with pollutants.
    Correlate(ConfigArgs),
    /// Repeat the correlation over several buffer widths.
    Sweep(ConfigArgs),
    /// Write z-scored GeoJSON layers.
    Heatmap(ConfigArgs),
    /// Generate a synthetic city.
    Synth(SynthArgs),
    /// Run every stage and write a manifest.
    Run(ConfigArgs),
}

#[derive(Subcommand)]
enum LexiconCommand {
    /// Keep the terms every annotator listed.
    Combine {
        /// One term per line; at least three files.
        #[arg(long = "annotator", required = true)]
        annotators: Vec<PathBuf>,
        /// Language code of the terms.
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Validate a lexicon file and print a summary.
    Check {
        lexicon: PathBuf,
        #[arg(long)]
        blocklist: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config (TOML, or JSON by extension).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Street buffer width in metres.
    #[arg(long)]
    buffer_width: Option<f64>,
    #[arg(long)]
    min_tags: Option<usize>,
    #[arg(long)]
    size_threshold: Option<usize>,
    #[arg(long)]
    min_edge_weight: Option<u64>,
    /// Number of equal-width classes, or comma-separated upper bounds in metres.
    #[arg(long)]
    distance_classes: Option<String>,
    #[arg(long, value_parser = parse_assign_mode)]
    assign_mode: Option<AssignMode>,
    #[arg(long, value_parser = parse_pollution_source)]
    pollution_source: Option<PollutionSource>,
    /// Comma-separated sources feeding the co-occurrence graph.
    #[arg(long, value_delimiter = ',')]
    cooccurrence_sources: Option<Vec<Source>>,
    /// Comma-separated buffer widths for the sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_sizes: Option<Vec<f64>>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the city into.
    #[arg(short, long)]
    output: PathBuf,
    /// JSON generator spec; defaults are used for missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_assign_mode(s: &str) -> Result<AssignMode, String> {
    match s {
        "multi" => Ok(AssignMode::Multi),
        "nearest" => Ok(AssignMode::Nearest),
        _ => Err(format!("expected multi or nearest, got {s:?}")),
    }
}

fn parse_pollution_source(s: &str) -> Result<PollutionSource, String> {
    match s {
        "segment" => Ok(PollutionSource::Segment),
        "station" => Ok(PollutionSource::Station),
        _ => Err(format!("expected segment or station, got {s:?}")),
    }
}

fn parse_classes(s: &str) -> Result<ClassSpec, UsageError> {
    if let Ok(n) = s.trim().parse::<usize>() {
        return Ok(ClassSpec::Count(n));
    }
    s.split(',')
        .map(|b| b.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map(ClassSpec::Bounds)
        .map_err(|_| UsageError(format!("bad --distance-classes {s:?}")))
}

/// Bad arguments or inputs; exits with status 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        if !self.config.is_file() {
            return Err(UsageError(format!("config file {} not found", self.config.display())).into());
        }
        let mut cfg = PipelineConfig::load(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.buffer_width {
            cfg.buffer_width = v;
        }
        if let Some(v) = self.min_tags {
            cfg.min_tags = v;
        }
        if let Some(v) = self.size_threshold {
            cfg.size_threshold = v;
        }
        if let Some(v) = self.min_edge_weight {
            cfg.min_edge_weight = v;
        }
        if let Some(v) = &self.distance_classes {
            cfg.distance_classes = parse_classes(v)?;
        }
        if let Some(v) = self.assign_mode {
            cfg.assign_mode = v;
        }
        if let Some(v) = self.pollution_source {
            cfg.pollution_source = v;
        }
        if let Some(v) = &self.cooccurrence_sources {
            cfg.cooccurrence_sources = v.clone();
        }
        if let Some(v) = &self.sweep_sizes {
            cfg.sweep_sizes = v.clone();
        }
        Ok(cfg)
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn stage(args: &ConfigArgs, name: &str) -> anyhow::Result<()> {
    let cfg = args.load()?;
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    print_json(&run_stage(&cfg, name)?)
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn lexicon(cmd: &LexiconCommand) -> anyhow::Result<()> {
    match cmd {
        LexiconCommand::Combine {
            annotators,
            language,
            output,
        } => {
            let lists = annotators.iter().map(|p| read_lines(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let terms = intersect_annotations(&lists)?
                .into_iter()
                .map(|surface| SmellTerm {
                    surface,
                    language: language.clone(),
                    notes: None,
                })
                .collect();
            let lex = SmellLexicon::new(terms, "combined")?;
            let file = std::fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
            write_lexicon(std::io::BufWriter::new(file), &lex)?;
            print_json(&serde_json::json!({ "terms": lex.len() }))
        }
        LexiconCommand::Check { lexicon, blocklist } => {
            let block = match blocklist {
                Some(p) => read_blocklist(p)?,
                None => Default::default(),
            };
            let (lex, report) = load_lexicon(lexicon, &block)?;
            print_json(&serde_json::json!({
                "version": lex.version(),
                "terms": lex.len(),
                "languages": lex.languages(),
                "rows": report.rows,
                "blocklisted": report.blocklisted_terms,
            }))
        }
    }
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(p) => SynthSpec::from_json(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let city = generate_synthetic_city(&spec)?;
    write_synthetic_city(&city, &args.output)?;
    print_json(&serde_json::json!({
        "items": city.items.len(),
        "segments": city.segments.len(),
        "seed": spec.seed,
    }))
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Lexicon(cmd) => lexicon(cmd),
        Command::Match(a) => stage(a, "match"),
        Command::Graph(a) => stage(a, "graph"),
        Command::Classify(a) => stage(a, "classify"),
        Command::Assign(a) => stage(a, "assign"),
        Command::Profile(a) => stage(a, "profile"),
        Command::Correlate(a) => stage(a, "correlate"),
        Command::Sweep(a) => stage(a, "sweep"),
        Command::Heatmap(a) => stage(a, "heatmap"),
        Command::Synth(a) => synth(a),
        Command::Run(a) => {
            let manifest = run_pipeline(&a.load()?)?;
            print_json(&manifest)
        }
    }
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || e.downcast_ref::<smellscape::Error>().is_some_and(smellscape::Error::is_validation)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
