//! `tabtype`: infer the type of each CSV column, label every cell as
//! type-conforming, missing, or anomalous, train the machine catalog on
//! labeled corpora, and benchmark inference scaling.
//!
//! Exit codes: 0 success, 1 unreadable input / unknown label / usage error,
//! 2 strict-mode column failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tabtype::eval::linear_fit;
use tabtype::inference::{
    column_type_posterior, infer_table, AnnotateOptions, Column, ColumnReport, RowLabel,
    TableReport, TypeSystem, TypeWeights,
};
use tabtype::machines::{CatalogManifest, MachineCatalog};
use tabtype::training::{train, TrainConfig, TrainingBatch};

#[derive(Parser)]
#[command(
    name = "tabtype",
    version,
    about = "Infer column types in tabular files and label cells as \
             type-conforming, missing, or anomalous"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate the columns of one or more CSV files
    Infer(InferArgs),
    /// Train the regular machines on a labeled corpus and write the
    /// trained catalog
    Train(TrainArgs),
    /// Time column inference across a grid of unique-value counts
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Args)]
struct InferArgs {
    /// CSV files to annotate
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Machine catalog or catalog manifest (JSON); defaults to the
    /// built-in catalog
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Mixing weights "regular,missing,anomaly" applied to every type
    /// (default 0.98,0.01,0.01)
    #[arg(long)]
    weights: Option<String>,
    /// Label a row non-type when its non-type posterior reaches this
    /// (must lie strictly between 0 and 1)
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Flag a column ambiguous when the winning type's posterior falls
    /// below this (must lie strictly between 0 and 1)
    #[arg(long, default_value_t = 0.9)]
    ambiguity_threshold: f64,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Fail on ragged rows (exit 1) and on any unannotatable column (exit 2)
    /// instead of padding and reporting per column
    #[arg(long)]
    strict: bool,
    /// Treat the first row as data and name columns by index
    #[arg(long)]
    no_header: bool,
    /// Most non-type rows listed per column in human output
    #[arg(long, default_value_t = 50)]
    max_rows: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory containing the corpus CSV files
    corpus: PathBuf,
    /// Labels CSV with header file,column,type
    labels: PathBuf,
    /// Starting catalog or manifest (JSON); defaults to the built-in catalog
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Mixing weights "regular,missing,anomaly" applied to every type
    #[arg(long)]
    weights: Option<String>,
    /// Maximum accepted optimizer steps
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Stop when |Δ objective| < tol · (1 + |objective|)
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Also train initial and stop probabilities (default: transitions only)
    #[arg(long)]
    update_initial_final: bool,
    /// Where to write the trained catalog
    #[arg(long, default_value = "trained-catalog.json")]
    out: PathBuf,
    /// Also write the objective trace, one value per line
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated unique-value counts (empty for no measurements)
    #[arg(long, default_value = "1000,10000,100000")]
    grid: String,
    /// Length of every synthetic value, 1–12 digits
    #[arg(long, default_value_t = 8)]
    length: usize,
    /// Timing repeats per grid point (best time wins)
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Seed selecting which distinct values are generated
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Machine catalog or manifest (JSON); defaults to the built-in catalog
    #[arg(long)]
    catalog: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Infer(args) => cmd_infer(args),
        Command::Train(args) => cmd_train(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing.

/// Loads a catalog file, dispatching on its "format" field: a full machine
/// catalog is deserialized as-is, a manifest is compiled.
fn load_catalog(path: Option<&Path>) -> Result<MachineCatalog, String> {
    let Some(path) = path else {
        return Ok(MachineCatalog::builtin());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read catalog {}: {e}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| format!("catalog {} is not valid JSON: {e}", path.display()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some("pfsm-catalog") => serde_json::from_str(&text)
            .map_err(|e| format!("invalid machine catalog {}: {e}", path.display())),
        Some("catalog-manifest") => {
            let manifest: CatalogManifest = serde_json::from_str(&text)
                .map_err(|e| format!("invalid catalog manifest {}: {e}", path.display()))?;
            MachineCatalog::from_manifest(&manifest)
                .map_err(|e| format!("catalog manifest {}: {e}", path.display()))
        }
        other => Err(format!(
            "catalog {}: format field is {other:?}, expected \"pfsm-catalog\" or \
             \"catalog-manifest\"",
            path.display()
        )),
    }
}

fn build_system(catalog: MachineCatalog, weights: Option<&str>) -> Result<TypeSystem, String> {
    let Some(spec) = weights else {
        return Ok(TypeSystem::with_defaults(catalog));
    };
    let parts: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("--weights {spec:?}: {e}"))?;
    let [regular, missing, anomaly] = parts[..] else {
        return Err(format!(
            "--weights expects three comma-separated probabilities \
             \"regular,missing,anomaly\", got {spec:?}"
        ));
    };
    let k = catalog.n_types();
    let triples = vec![TypeWeights { regular, missing, anomaly }; k];
    let prior = vec![1.0 / k as f64; k];
    TypeSystem::new(catalog, triples, prior).map_err(|e| e.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format!("cannot serialize to {}: {e}", path.display()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// infer

/// Reads a CSV into columns. Cells are taken byte-for-byte (invalid UTF-8
/// replaced). In lenient mode short rows are padded with empty cells and
/// wide rows grow the table; in strict mode any ragged row is an error.
fn read_table(path: &Path, no_header: bool, strict: bool) -> Result<Vec<Column>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(!no_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;

    let mut names: Vec<String> = if no_header {
        Vec::new()
    } else {
        reader
            .byte_headers()
            .map_err(|e| format!("{}: {e}", path.display()))?
            .iter()
            .map(|h| String::from_utf8_lossy(h).into_owned())
            .collect()
    };
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    for (rows, record) in reader.byte_records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        if strict && !cells.is_empty() && record.len() != cells.len() {
            return Err(format!(
                "{} row {}: {} fields where the table has {} columns",
                path.display(),
                rows + 1,
                record.len(),
                cells.len()
            ));
        }
        while cells.len() < record.len() {
            names.push(cells.len().to_string());
            cells.push(vec![String::new(); rows]);
        }
        for (i, column) in cells.iter_mut().enumerate() {
            let cell = record
                .get(i)
                .map(|bytes| String::from_utf8_lossy(bytes).into_owned())
                .unwrap_or_default();
            column.push(cell);
        }
    }
    Ok(names.into_iter().zip(cells).map(|(name, c)| Column::new(name, c)).collect())
}

#[derive(Serialize)]
struct FileReport {
    path: String,
    report: TableReport,
}

fn check_unit_interval(name: &str, value: f64) -> Result<(), String> {
    if value.is_finite() && 0.0 < value && value < 1.0 {
        Ok(())
    } else {
        Err(format!("--{name} must lie strictly between 0 and 1, got {value}"))
    }
}

fn cmd_infer(args: InferArgs) -> Result<ExitCode, String> {
    check_unit_interval("threshold", args.threshold)?;
    check_unit_interval("ambiguity-threshold", args.ambiguity_threshold)?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    let system = build_system(catalog, args.weights.as_deref())?;
    let options = AnnotateOptions {
        label_threshold: args.threshold,
        ambiguity_threshold: args.ambiguity_threshold,
    };

    let mut file_reports = Vec::new();
    let mut human = String::new();
    for path in &args.files {
        let columns = read_table(path, args.no_header, args.strict)?;
        let outcomes = match infer_table(&columns, &system, &options, args.strict) {
            Ok(outcomes) => outcomes,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return Ok(ExitCode::from(2));
            }
        };
        let report = TableReport::new(&outcomes, &columns, &system);
        match args.format {
            Format::Human => render_table(&mut human, path, &report, args.max_rows),
            Format::Json => file_reports
                .push(FileReport { path: path.display().to_string(), report }),
        }
    }
    match args.format {
        Format::Human => print!("{human}"),
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&file_reports)
                .map_err(|e| e.to_string())?;
            text.push('\n');
            print!("{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn render_table(out: &mut String, path: &Path, report: &TableReport, max_rows: usize) {
    let _ = writeln!(out, "== {} ==", path.display());
    for column in &report.columns {
        render_column(out, column, max_rows);
    }
}

fn render_column(out: &mut String, column: &ColumnReport, max_rows: usize) {
    if let Some(error) = &column.error {
        let _ = writeln!(out, "column {:?}: FAILED: {error}", column.name);
        return;
    }
    let inferred = column.inferred_type.as_deref().unwrap_or("?");
    let posterior = column
        .type_posterior
        .iter()
        .find(|t| t.r#type == inferred)
        .map(|t| t.probability)
        .unwrap_or(f64::NAN);
    let flag = if column.ambiguous { " [AMBIGUOUS]" } else { "" };
    let _ = writeln!(out, "column {:?}: {inferred} (posterior {posterior:.3}){flag}", column.name);

    let ok = column.row_labels.iter().filter(|l| **l == RowLabel::Type).count();
    let missing = column.row_labels.iter().filter(|l| **l == RowLabel::Missing).count();
    let anomaly = column.row_labels.iter().filter(|l| **l == RowLabel::Anomaly).count();
    let _ = writeln!(out, "  rows: {ok} OK, {missing} MISSING, {anomaly} ANOMALY");
    for nontype in column.nontype_rows.iter().take(max_rows) {
        let (marker, p) = match nontype.label {
            RowLabel::Missing => ("MISSING", nontype.posterior.missing_prob),
            RowLabel::Anomaly => ("ANOMALY", nontype.posterior.anomaly_prob),
            RowLabel::Type => ("OK", nontype.posterior.type_prob),
        };
        let _ = writeln!(out, "  row {}: {:?} {marker} ({p:.3})", nontype.row, nontype.value);
    }
    if column.nontype_rows.len() > max_rows {
        let _ = writeln!(out, "  … and {} more non-type rows", column.nontype_rows.len() - max_rows);
    }
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(args: TrainArgs) -> Result<ExitCode, String> {
    let catalog = load_catalog(args.catalog.as_deref())?;
    let system = build_system(catalog, args.weights.as_deref())?;
    let batch = TrainingBatch::from_corpus(&args.corpus, &args.labels)
        .map_err(|e| e.to_string())?;
    if batch.is_empty() {
        return Err(format!("labels file {} names no columns", args.labels.display()));
    }

    let config = TrainConfig {
        max_iters: args.iters,
        tolerance: args.tol,
        update_initial_final: args.update_initial_final,
        restart_every: None,
    };
    let (trained, trace) = train(&batch, &system, &config).map_err(|e| e.to_string())?;

    write_json(&args.out, trained.catalog())?;
    if let Some(path) = &args.trace {
        let lines: String = trace.iter().map(|v| format!("{v}\n")).collect();
        fs::write(path, lines).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    println!(
        "objective: initial {:.6}, final {:.6}, {} accepted steps over {} labeled columns",
        trace.first().unwrap(),
        trace.last().unwrap(),
        trace.len() - 1,
        batch.columns().len()
    );
    println!("trained catalog written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// bench

/// `count` distinct digit strings of the given length: multiplying by an odd
/// constant coprime to 10^length permutes the residues, and the seed picks
/// an offset into that permutation.
fn distinct_values(count: usize, length: usize, seed: u64) -> Vec<String> {
    let modulus = 10u64.pow(length as u32);
    let offset = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) % modulus;
    (0..count as u64)
        .map(|i| {
            let residue = i.wrapping_mul(2_654_435_761).wrapping_add(offset) % modulus;
            format!("{residue:0length$}")
        })
        .collect()
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, String> {
    if !(1..=12).contains(&args.length) {
        return Err(format!("--length must be 1–12, got {}", args.length));
    }
    if args.repeats == 0 {
        return Err("--repeats must be at least 1".to_string());
    }
    let grid: Vec<usize> = args
        .grid
        .split(',')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .map(|part| part.parse::<usize>().map_err(|e| format!("--grid {part:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let modulus = 10u64.pow(args.length as u32);
    if let Some(too_big) = grid.iter().find(|u| **u as u64 > modulus) {
        return Err(format!(
            "cannot generate {too_big} distinct values of length {}; raise --length",
            args.length
        ));
    }

    let catalog = load_catalog(args.catalog.as_deref())?;
    let system = TypeSystem::with_defaults(catalog);

    println!("{:>12} {:>12} {:>16}", "uniques", "seconds", "uniques_per_sec");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &u in &grid {
        let column = Column::new("bench", distinct_values(u, args.length, args.seed));
        let mut best = Duration::MAX;
        for _ in 0..args.repeats {
            let run = Instant::now();
            let posterior = column_type_posterior(&column, &system)
                .map_err(|e| e.to_string())?;
            std::hint::black_box(posterior);
            best = best.min(run.elapsed());
        }
        let seconds = best.as_secs_f64();
        println!("{u:>12} {seconds:>12.6} {:>16.0}", u as f64 / seconds);
        xs.push(u as f64);
        ys.push(seconds);
    }
    if xs.len() >= 2 && xs.windows(2).any(|w| w[0] != w[1]) {
        let fit = linear_fit(&xs, &ys).map_err(|e| e.to_string())?;
        println!(
            "linear fit: seconds ≈ {:.3e}·U + {:.3e}, R² = {:.4}",
            fit.slope, fit.intercept, fit.r_squared
        );
    }
    Ok(ExitCode::SUCCESS)
}
