//! Batch front end for the transverse-set toolkit. One subcommand per
//! workflow stage: generate inputs, validate them, extract a certified
//! variety, classify exact varieties, and sweep benchmarks.
//!
//! Exit codes: 0 success with certification, 2 invalid input, 3 budget
//! exhausted, 4 certification or main-path failure with fallback disabled.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use transverse::extract::{extract_variety, ExtractConfig, ExtractError, SearchMode};
use transverse::grid::{
    enumerate_transverse_small, from_lss, gen_from_bilinear, Ambient2, BilinearMapSpec, GridSet,
    TransverseSet,
};
use transverse::linalg::Subspace;
use transverse::lss::{random_system, LinearSubspaceSystem};
use transverse::report::{digest_set, ExtractionReport};
use transverse::rng::stream;
use transverse::variety::{is_exact_variety, ContainmentCertificate, VarietyError};

#[derive(Parser)]
#[command(
    name = "transverse",
    about = "Exact toolkit for certified bilinear varieties in transverse sets",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a transverse set (or a whole enumeration) to disk.
    Gen(GenArgs),
    /// Validate a set file: transversality, system validity, profile.
    Check(CheckArgs),
    /// Run the extraction pipeline and emit the certified report.
    Extract(ExtractArgs),
    /// Decide whether the set is exactly a bilinear variety.
    Oracle(OracleArgs),
    /// Sweep extraction over an instance family and tabulate codimensions.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// The full grid G x H.
    Full,
    /// Zero set of random bilinear forms, completed to a transverse set.
    Bilinear,
    /// Dual of a random linear system of subspaces.
    Lss,
    /// Every transverse set on a tiny ambient, one file each.
    Enumerate,
}

#[derive(Clone, Copy, ValueEnum, Default)]
enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long, default_value_t = 2)]
    p: u16,
    #[arg(long = "nG", default_value_t = 4)]
    n_g: u16,
    #[arg(long = "nH", default_value_t = 4)]
    n_h: u16,
    /// Number of bilinear forms (bilinear and lss kinds).
    #[arg(long, default_value_t = 1)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; for enumerate, an output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Profile level; defaults to the modal slice dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Search mode: "exhaustive", "sampled", or "sampled:RETRIES".
    #[arg(long, default_value = "sampled", value_parser = parse_mode)]
    mode: SearchMode,
    /// Anchor candidates scanned during structure recovery.
    #[arg(long, default_value_t = 4096)]
    budget: u64,
    /// Fail with a diagnostic instead of certifying the product fallback.
    #[arg(long)]
    no_fallback: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 2)]
    p: u16,
    #[arg(long = "nG", default_value_t = 2)]
    n_g: u16,
    #[arg(long = "nH", default_value_t = 2)]
    n_h: u16,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

fn parse_mode(s: &str) -> Result<SearchMode, String> {
    match s {
        "exhaustive" => Ok(SearchMode::Exhaustive),
        "sampled" => Ok(SearchMode::Sampled { retries: 64 }),
        _ => match s.strip_prefix("sampled:") {
            Some(n) => n
                .parse::<u32>()
                .map(|retries| SearchMode::Sampled { retries })
                .map_err(|e| format!("bad retry count: {e}")),
            None => Err(format!(
                "unknown mode {s:?}; use exhaustive, sampled, or sampled:RETRIES"
            )),
        },
    }
}

/// A failure with its contract exit code. Input problems are 2, exhausted
/// budgets 3, certification or disabled-fallback failures 4.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn budget(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }

    fn certification(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

fn extract_failure(e: ExtractError) -> Failure {
    match e {
        ExtractError::BadParameter(_) => Failure::input(e.to_string()),
        ExtractError::BudgetExceeded { .. } => Failure::budget(e.to_string()),
        _ => Failure::certification(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Check(args) => cmd_check(args),
        Cmd::Extract(args) => cmd_extract(args),
        Cmd::Oracle(args) => cmd_oracle(args),
        Cmd::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

/// Parses a TransverseSet file, accepting the GridSet bitset format as well.
fn load_set(path: &Path) -> Result<TransverseSet, Failure> {
    let text = read_input(path)?;
    match TransverseSet::from_json(&text) {
        Ok(t) => Ok(t),
        Err(first) => {
            let grid = GridSet::from_json(&text).map_err(|second| {
                Failure::input(format!(
                    "{}: not a transverse-set file ({first}) nor a grid file ({second})",
                    path.display()
                ))
            })?;
            grid.to_transverse()
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
        }
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let ambient = Ambient2::new(args.p, args.n_g, args.n_h)
        .map_err(|e| Failure::input(e.to_string()))?;
    match args.kind {
        GenKind::Full => {
            let h = ambient.h();
            let columns = (0..ambient.g().size()).map(|_| Subspace::full(h)).collect();
            let set = TransverseSet::new(ambient, columns)
                .map_err(|e| Failure::input(e.to_string()))?;
            write_set(&args.out, &set)
        }
        GenKind::Bilinear => {
            let spec = BilinearMapSpec {
                ambient,
                r: args.r,
                dim_u: None,
                dim_v: None,
            };
            let planted =
                gen_from_bilinear(&spec, args.seed).map_err(|e| Failure::input(e.to_string()))?;
            write_set(&args.out, &planted.set)
        }
        GenKind::Lss => {
            let mut rng = stream(args.seed, "cli-gen-lss");
            let sys = random_system(ambient.g(), ambient.h(), args.r, 0, &mut rng)
                .map_err(|e| Failure::input(e.to_string()))?;
            let set = from_lss(&sys).map_err(|e| Failure::input(e.to_string()))?;
            write_set(&args.out, &set)
        }
        GenKind::Enumerate => {
            let sets =
                enumerate_transverse_small(ambient).map_err(|e| Failure::input(e.to_string()))?;
            fs::create_dir_all(&args.out)
                .map_err(|e| Failure::input(format!("cannot create {}: {e}", args.out.display())))?;
            for (i, set) in sets.iter().enumerate() {
                let path = args.out.join(format!("transverse-{i:04}.json"));
                fs::write(&path, set.to_json())
                    .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
            }
            println!("wrote {} sets to {}", sets.len(), args.out.display());
            Ok(())
        }
    }
}

fn write_set(out: &Path, set: &TransverseSet) -> Result<(), Failure> {
    fs::write(out, set.to_json())
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", out.display())))?;
    println!("digest sha256 = {}", digest_set(set));
    Ok(())
}

#[derive(Serialize)]
struct InputBlock {
    digest_sha256: String,
    p: u16,
    n_g: u16,
    n_h: u16,
    members: u64,
    cells: u64,
    density: f64,
}

impl InputBlock {
    fn of(set: &TransverseSet) -> Self {
        let (members, cells) = set.density();
        InputBlock {
            digest_sha256: digest_set(set),
            p: set.ambient().p(),
            n_g: set.ambient().g().n(),
            n_h: set.ambient().h().n(),
            members,
            cells,
            density: members as f64 / cells as f64,
        }
    }
}

#[derive(Serialize)]
struct ProfileBlock {
    d: usize,
    eps1: f64,
    eps2: f64,
}

#[derive(Serialize)]
struct CheckReport {
    input: InputBlock,
    transverse: bool,
    witness: Option<String>,
    system_valid: bool,
    profile: ProfileBlock,
    difference_invariant: bool,
}

fn cmd_check(args: CheckArgs) -> Result<(), Failure> {
    let text = read_input(&args.input)?;
    // A grid file may fail transversality; that still deserves a report.
    let grid = match TransverseSet::from_json(&text) {
        Ok(t) => t.to_gridset(),
        Err(first) => GridSet::from_json(&text).map_err(|second| {
            Failure::input(format!(
                "{}: not a transverse-set file ({first}) nor a grid file ({second})",
                args.input.display()
            ))
        })?,
    };
    if let Err(witness) = grid.check_transverse() {
        let (members, cells) = grid.density();
        let report = CheckReport {
            input: InputBlock {
                digest_sha256: "n/a".into(),
                p: grid.ambient().p(),
                n_g: grid.ambient().g().n(),
                n_h: grid.ambient().h().n(),
                members,
                cells,
                density: members as f64 / cells as f64,
            },
            transverse: false,
            witness: Some(witness.to_string()),
            system_valid: false,
            profile: ProfileBlock {
                d: 0,
                eps1: 1.0,
                eps2: 1.0,
            },
            difference_invariant: false,
        };
        let rendered = match args.format {
            Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
            Format::Text => format!("not transverse: {witness}"),
        };
        write_output(&args.out, &rendered)?;
        return Err(Failure::input(format!("not transverse: {witness}")));
    }
    let set = grid
        .to_transverse()
        .map_err(|e| Failure::input(e.to_string()))?;
    let h = set.ambient().h();
    let sys = LinearSubspaceSystem::from_transverse(&set, &Subspace::full(h))
        .map_err(|e| Failure::input(e.to_string()))?;
    let system_valid = sys.validate().is_ok();
    let d = args.d.unwrap_or_else(|| sys.modal_dim());
    let profile = sys.quasirandomness_profile(d);
    let gridset = set.to_gridset();
    let report = CheckReport {
        input: InputBlock::of(&set),
        transverse: true,
        witness: None,
        system_valid,
        profile: ProfileBlock {
            d,
            eps1: profile.eps1(),
            eps2: profile.eps2(),
        },
        difference_invariant: gridset.dhor() == gridset && gridset.dver() == gridset,
    };
    let rendered = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Text => format!(
            "digest {}\ntransverse yes\nsystem valid {}\nprofile d={} eps1={} eps2={}\ndifference invariant {}",
            report.input.digest_sha256,
            report.system_valid,
            report.profile.d,
            report.profile.eps1,
            report.profile.eps2,
            report.difference_invariant,
        ),
    };
    write_output(&args.out, &rendered)
}

fn cmd_extract(args: ExtractArgs) -> Result<(), Failure> {
    let set = load_set(&args.input)?;
    let config = ExtractConfig {
        eps: args.eps,
        seed: args.seed,
        mode: args.mode,
        anchor_budget: args.budget,
        fallback: !args.no_fallback,
        ..ExtractConfig::default()
    };
    let out = extract_variety(&set, &config).map_err(extract_failure)?;
    let report = ExtractionReport::new(&set, &config, &out);
    let rendered = match args.format {
        Format::Json => report.to_json(),
        Format::Text => {
            let v = &out.variety;
            format!(
                "digest {}\ncodimension {} (codim U {}, codim V {}, r {})\nfallback {}\ncertified {}",
                digest_set(&set),
                v.codimension(),
                v.u().codim(),
                v.v().codim(),
                v.beta().r(),
                out.fallback_used,
                match out.certificate {
                    ContainmentCertificate::Exhaustive { member_cells } =>
                        format!("exhaustively over {member_cells} cells"),
                    ContainmentCertificate::Sampled { checked, attempted } =>
                        format!("by {checked} sampled cells of {attempted} draws"),
                },
            )
        }
    };
    write_output(&args.out, &rendered)
}

#[derive(Serialize)]
struct OracleReport {
    input: InputBlock,
    exact_variety: bool,
    r: Option<usize>,
    forms: Option<Vec<Vec<Vec<u8>>>>,
}

fn oracle_failure(e: VarietyError) -> Failure {
    match e {
        VarietyError::ScaleCapExceeded { .. } | VarietyError::SearchCapExceeded { .. } => {
            Failure::budget(e.to_string())
        }
        other => Failure::input(other.to_string()),
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let set = load_set(&args.input)?;
    let witness = is_exact_variety(&set).map_err(oracle_failure)?;
    let report = OracleReport {
        input: InputBlock::of(&set),
        exact_variety: witness.is_some(),
        r: witness.as_ref().map(|t| t.r()),
        forms: witness.as_ref().map(|t| {
            t.forms()
                .iter()
                .map(|m| {
                    (0..usize::from(m.nrows()))
                        .map(|i| (0..usize::from(m.ncols())).map(|j| m.get(i, j)).collect())
                        .collect()
                })
                .collect()
        }),
    };
    let rendered = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Text => match report.r {
            Some(r) => format!("exact variety with r = {r}"),
            None => "not an exact variety".to_string(),
        },
    };
    write_output(&args.out, &rendered)
}

#[derive(Serialize)]
struct BenchRow {
    label: String,
    density: f64,
    codimension: usize,
    r: usize,
    fallback: bool,
    certified: bool,
    /// log_p(1/density) raised to the powers 1, 2, 3: the bound shapes the
    /// achieved codimension is compared against.
    reference_curves: [f64; 3],
}

#[derive(Serialize)]
struct BenchReport {
    rows: Vec<BenchRow>,
    instances: usize,
    certified: usize,
}

fn bench_row(label: String, set: &TransverseSet, config: &ExtractConfig) -> BenchRow {
    let (members, cells) = set.density();
    let density = members as f64 / cells as f64;
    let l = if density > 0.0 && density < 1.0 {
        (1.0 / density).ln() / f64::from(set.ambient().p()).ln()
    } else {
        0.0
    };
    match extract_variety(set, config) {
        Ok(out) => BenchRow {
            label,
            density,
            codimension: out.variety.codimension(),
            r: out.variety.beta().r(),
            fallback: out.fallback_used,
            certified: true,
            reference_curves: [l, l * l, l * l * l],
        },
        Err(_) => BenchRow {
            label,
            density,
            codimension: 0,
            r: 0,
            fallback: false,
            certified: false,
            reference_curves: [l, l * l, l * l * l],
        },
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let ambient = Ambient2::new(args.p, args.n_g, args.n_h)
        .map_err(|e| Failure::input(e.to_string()))?;
    let config = ExtractConfig {
        eps: args.eps,
        seed: args.seed,
        ..ExtractConfig::default()
    };
    let mut rows = Vec::new();
    if ambient.g().size() <= 16 && ambient.h().size() <= 16 {
        let sets = enumerate_transverse_small(ambient)
            .map_err(|e| Failure::input(e.to_string()))?;
        for (i, set) in sets.iter().enumerate() {
            rows.push(bench_row(format!("enumerated-{i:04}"), set, &config));
        }
    } else {
        for r in [1usize, 2] {
            for seed in 0..5u64 {
                let spec = BilinearMapSpec {
                    ambient,
                    r,
                    dim_u: None,
                    dim_v: None,
                };
                let planted = gen_from_bilinear(&spec, args.seed.wrapping_add(seed))
                    .map_err(|e| Failure::input(e.to_string()))?;
                rows.push(bench_row(
                    format!("planted-r{r}-seed{seed}"),
                    &planted.set,
                    &config,
                ));
            }
        }
    }
    let certified = rows.iter().filter(|r| r.certified).count();
    let report = BenchReport {
        instances: rows.len(),
        certified,
        rows,
    };
    let rendered = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Text => {
            let mut lines = vec![format!(
                "{:<18}  {:>8}  {:>5}  {:>9}",
                "label", "density", "codim", "certified"
            )];
            for row in &report.rows {
                lines.push(format!(
                    "{:<18}  {:>8.4}  {:>5}  {:>9}",
                    row.label, row.density, row.codimension, row.certified
                ));
            }
            lines.push(format!(
                "certified {} of {} instances",
                report.certified, report.instances
            ));
            lines.join("\n")
        }
    };
    write_output(&args.out, &rendered)
}
