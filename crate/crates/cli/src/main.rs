use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hodgegrid::eigen::SolverOptions;
use hodgegrid::features::{self, FeatureConfig, FeatureMatrix};
use hodgegrid::field::{RawSamples, TabulatedVolume};
use hodgegrid::grid::GridComplex;
use hodgegrid::laplacian::{LaplacianKind, OperatorSet};
use hodgegrid::molio::{read_structure, MolecularStructure, Role};
use hodgegrid::persistence::{level_sweep, persistence_sweep, write_level_csv, Filtration};
use hodgegrid::presets::{linspace, Shape};
use hodgegrid::spectrum::laplacian_spectrum;
use hodgegrid::support::BoundaryCondition;
use hodgegrid::validate;
use serde_json::{json, Value};

const THREADS_ENV: &str = "HODGEGRID_THREADS";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Domain(#[from] hodgegrid::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Spectra of Laplacians on regular grids, persistent spectra along
/// filtrations, and protein–ligand featurization.
#[derive(Parser)]
#[command(name = "hodgegrid", version)]
struct Cli {
    /// Worker threads [default: $HODGEGRID_THREADS, else every core].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel dimension and smallest non-zero eigenvalues at one isovalue.
    Spectrum(SpectrumArgs),
    /// Betti numbers and leading T/C/N eigenvalues along a sweep (CSV).
    Filtration(FiltrationArgs),
    /// Persistent spectra for every (l, p) pair of a sweep.
    Persist(PersistArgs),
    /// Feature rows for protein–ligand complexes (CSV).
    Featurize(FeaturizeArgs),
    /// Quick self-checks against independent oracles.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct DomainArgs {
    /// Built-in shape: ball, shell, torus, fourballs or blob.
    #[arg(long, required_unless_present = "field", conflicts_with = "field")]
    shape: Option<String>,
    /// Tabulated scalar field (`DIMS nx ny nz SPACING h ORIGIN x y z`, then values).
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    inner: Option<f64>,
    #[arg(long)]
    outer: Option<f64>,
    #[arg(long)]
    major: Option<f64>,
    #[arg(long)]
    minor: Option<f64>,
    /// Four-ball cube edge.
    #[arg(long)]
    edge: Option<f64>,
    /// Four-ball soft-minimum width.
    #[arg(long)]
    blend: Option<f64>,
    /// Blob seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid spacing; the grid is centered and covers the shape with a margin.
    #[arg(long, conflicts_with = "resolution")]
    spacing: Option<f64>,
    /// Vertices per axis [default: 33].
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args)]
struct SolverArgs {
    /// Laplacian: big or hodge.
    #[arg(long, default_value = "big", value_parser = parse_kind)]
    kind: LaplacianKind,
    /// Non-zero eigenvalues to report.
    #[arg(long, default_value_t = 5)]
    eigs: usize,
}

#[derive(Args)]
struct OutArgs {
    /// Output file [default: stdout]; a `<out>.manifest.json` is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    domain: DomainArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Boundary condition: normal or tangential.
    #[arg(long, default_value = "normal", value_parser = parse_bc)]
    bc: BoundaryCondition,
    /// Form degree [default: all of 0..=3].
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
    k: Option<u8>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    isovalue: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct FiltrationArgs {
    #[command(flatten)]
    domain: DomainArgs,
    /// `start:end:count` or a comma-separated ascending list.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_isovalues)]
    isovalues: Isovalues,
    /// Laplacian: big or hodge.
    #[arg(long, default_value = "big", value_parser = parse_kind)]
    kind: LaplacianKind,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PersistArgs {
    #[command(flatten)]
    domain: DomainArgs,
    /// `start:end:count` or a comma-separated ascending list.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_isovalues)]
    isovalues: Isovalues,
    #[command(flatten)]
    solver: SolverArgs,
    /// Largest span p [default: the whole sweep].
    #[arg(long)]
    max_span: Option<usize>,
    /// Comma-separated form degrees.
    #[arg(long, value_delimiter = ',', default_values_t = [0u8, 1, 2, 3],
          value_parser = clap::value_parser!(u8).range(0..=3))]
    degrees: Vec<u8>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Directory of complexes `<id>/<id>_protein.<ext>` and `<id>/<id>_ligand.<ext>`.
    #[arg(long, conflicts_with_all = ["protein", "ligand"], required_unless_present = "protein")]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "ligand")]
    protein: Option<PathBuf>,
    #[arg(long, requires = "protein")]
    ligand: Option<PathBuf>,
    /// Row id for a single complex [default: the ligand file stem].
    #[arg(long)]
    id: Option<String>,
    /// Non-zero eigenvalues per manifold.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// `start:end:count` or a comma-separated ascending list [default: -0.5:-0.001:9].
    #[arg(long, allow_hyphen_values = true, value_parser = parse_isovalues)]
    isovalues: Option<Isovalues>,
    /// Base grid spacing in Å.
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Protein atoms farther than this from every ligand atom are dropped (Å).
    #[arg(long)]
    cutoff: Option<f64>,
    /// `id,label` CSV; labels of the featurized ids go to `<out stem>.labels.csv`.
    #[arg(long, requires = "out")]
    labels: Option<PathBuf>,
    /// Skip complexes that fail instead of stopping.
    #[arg(long)]
    skip_failed: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ValidateArgs {
    /// Run only these checks.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Print JSON records instead of PASS/FAIL lines.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Debug)]
struct Isovalues(Vec<f64>);

fn parse_kind(s: &str) -> Result<LaplacianKind, String> {
    s.parse().map_err(|e: hodgegrid::Error| e.to_string())
}

fn parse_bc(s: &str) -> Result<BoundaryCondition, String> {
    s.parse().map_err(|e: hodgegrid::Error| e.to_string())
}

fn parse_isovalues(s: &str) -> Result<Isovalues, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err("expected start:end:count".into());
        };
        let n: usize = n.trim().parse().map_err(|_| format!("`{n}` is not a count"))?;
        if n == 0 {
            return Err("count must be positive".into());
        }
        linspace(num(a)?, num(b)?, n)
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err("isovalues must be finite".into());
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err("isovalues must be strictly ascending".into());
    }
    Ok(Isovalues(values))
}

impl DomainArgs {
    fn shape(&self, name: &str) -> CliResult<Shape> {
        let mut shape = Shape::by_name(name).map_err(|e| CliError::Usage(e.to_string()))?;
        let given = [
            ("radius", self.radius.is_some()),
            ("inner", self.inner.is_some()),
            ("outer", self.outer.is_some()),
            ("major", self.major.is_some()),
            ("minor", self.minor.is_some()),
            ("edge", self.edge.is_some()),
            ("blend", self.blend.is_some()),
            ("seed", self.seed.is_some()),
        ];
        let accepted: &[&str] = match &mut shape {
            Shape::Ball { radius } => {
                *radius = self.radius.unwrap_or(*radius);
                &["radius"]
            }
            Shape::Shell { inner, outer } => {
                *inner = self.inner.unwrap_or(*inner);
                *outer = self.outer.unwrap_or(*outer);
                &["inner", "outer"]
            }
            Shape::Torus { major, minor } => {
                *major = self.major.unwrap_or(*major);
                *minor = self.minor.unwrap_or(*minor);
                &["major", "minor"]
            }
            Shape::FourBalls { edge, blend } => {
                *edge = self.edge.unwrap_or(*edge);
                *blend = self.blend.unwrap_or(*blend);
                &["edge", "blend"]
            }
            Shape::Blob { seed } => {
                *seed = self.seed.unwrap_or(*seed);
                &["seed"]
            }
        };
        if let Some((flag, _)) = given.iter().find(|(f, set)| *set && !accepted.contains(f)) {
            return Err(CliError::Usage(format!("--{flag} does not apply to shape `{name}`")));
        }
        Ok(shape)
    }

    /// Samples covering every isovalue up to `max_isovalue`, and a
    /// description for the manifest.
    fn samples(&self, max_isovalue: f64) -> CliResult<(RawSamples, Value)> {
        if let Some(path) = &self.field {
            if self.spacing.is_some() || self.resolution.is_some() {
                return Err(CliError::Usage("a tabulated field carries its own grid".into()));
            }
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            let vol = TabulatedVolume::read(BufReader::new(file)).map_err(|e| with_path(path, e))?;
            let samples = RawSamples::from_tabulated(&vol)?;
            let grid = vol.grid()?;
            return Ok((samples, json!({ "field": path, "grid": grid_json(&grid) })));
        }
        let name = self.shape.as_deref().expect("clap requires --shape or --field");
        let shape = self.shape(name)?;
        let grid = match (self.spacing, self.resolution) {
            (Some(h), _) => shape.grid_with_spacing(h, max_isovalue)?,
            (None, r) => shape.grid_with_resolution(r.unwrap_or(33), max_isovalue)?,
        };
        let description = json!({ "shape": format!("{shape:?}"), "grid": grid_json(&grid) });
        Ok((RawSamples::evaluate(&shape.field()?, Arc::new(grid)), description))
    }
}

fn with_path(path: &Path, e: hodgegrid::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn grid_json(g: &GridComplex) -> Value {
    json!({ "dims": g.dims(), "spacing": g.spacing(), "origin": g.origin() })
}

/// Destination of a command's main output.
struct Output {
    path: Option<PathBuf>,
    writer: Box<dyn Write>,
}

impl Output {
    fn open(args: &OutArgs) -> CliResult<Output> {
        Ok(match &args.out {
            Some(p) => Output {
                writer: Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
                path: Some(p.clone()),
            },
            None => Output {
                writer: Box::new(BufWriter::new(io::stdout().lock())),
                path: None,
            },
        })
    }

    fn error(&self, e: io::Error) -> CliError {
        CliError::io(self.path.as_deref().unwrap_or(Path::new("<stdout>")), e)
    }

    fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.writer, "{s}").map_err(|e| self.error(e))
    }

    /// Flushes and, for a file, writes its manifest.
    fn finish(mut self, command: &str, threads: usize, details: Value) -> CliResult<()> {
        self.writer.flush().map_err(|e| self.error(e))?;
        let Some(path) = &self.path else {
            return Ok(());
        };
        let manifest = json!({
            "software": "hodgegrid",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "arguments": std::env::args().skip(1).collect::<Vec<_>>(),
            "threads": threads,
            "output": path,
            "details": details,
        });
        let mpath = manifest_path(path);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&mpath, text + "\n").map_err(|e| CliError::io(&mpath, e))
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn build_ops(
    samples: &RawSamples,
    isovalue: f64,
    bc: BoundaryCondition,
    kind: LaplacianKind,
) -> CliResult<OperatorSet> {
    let sampled = Arc::new(samples.at_isovalue(isovalue));
    Ok(match kind {
        LaplacianKind::Hodge => OperatorSet::build(sampled, bc)?,
        LaplacianKind::Big => OperatorSet::build_big_only(sampled, bc)?,
    })
}

fn run_spectrum(a: &SpectrumArgs, threads: usize) -> CliResult<()> {
    let (samples, domain) = a.domain.samples(a.isovalue)?;
    let ops = build_ops(&samples, a.isovalue, a.bc, a.solver.kind)?;
    let degrees: Vec<usize> = match a.k {
        Some(k) => vec![k as usize],
        None => (0..=3).collect(),
    };
    let mut out = Output::open(&a.out)?;
    let opts = SolverOptions::default();
    for k in degrees {
        let s = laplacian_spectrum(&ops, k, a.solver.kind, a.solver.eigs, &opts)?;
        out.line(&s.to_record())?;
    }
    out.finish("spectrum", threads, domain)
}

fn filtration(domain: &DomainArgs, isovalues: &[f64], kind: LaplacianKind) -> CliResult<(Filtration, Value)> {
    let max = *isovalues.last().expect("parser rejects empty lists");
    let (samples, description) = domain.samples(max)?;
    let f = Filtration::from_samples(&samples, isovalues, kind == LaplacianKind::Hodge)?;
    Ok((f, description))
}

fn run_filtration(a: &FiltrationArgs, threads: usize) -> CliResult<()> {
    let (f, domain) = filtration(&a.domain, &a.isovalues.0, a.kind)?;
    let rows = level_sweep(&f, a.kind, &SolverOptions::default())?;
    let mut out = Output::open(&a.out)?;
    write_level_csv(&rows, &mut out.writer).map_err(|e| out.error(e))?;
    out.finish(
        "filtration",
        threads,
        json!({ "domain": domain, "isovalues": a.isovalues.0, "kind": a.kind }),
    )
}

fn run_persist(a: &PersistArgs, threads: usize) -> CliResult<()> {
    let (f, domain) = filtration(&a.domain, &a.isovalues.0, a.solver.kind)?;
    let span = a.max_span.unwrap_or(f.len() - 1);
    let degrees: Vec<usize> = a.degrees.iter().map(|&k| k as usize).collect();
    let records = persistence_sweep(
        &f,
        span,
        &degrees,
        a.solver.eigs,
        a.solver.kind,
        &SolverOptions::default(),
    )?;
    let mut out = Output::open(&a.out)?;
    for r in &records {
        out.line(&r.to_record())?;
    }
    let details = json!({ "domain": domain, "isovalues": a.isovalues.0, "kind": a.solver.kind, "max_span": span });
    out.finish("persist", threads, details)
}

/// `(id, protein, ligand)` for every complex to featurize, sorted by id.
fn complexes(a: &FeaturizeArgs) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    if let (Some(p), Some(l)) = (&a.protein, &a.ligand) {
        let id = a.id.clone().unwrap_or_else(|| {
            let stem = l.file_stem().and_then(|s| s.to_str()).unwrap_or("complex");
            stem.strip_suffix("_ligand").unwrap_or(stem).to_string()
        });
        return Ok(vec![(id, p.clone(), l.clone())]);
    }
    let dir = a.dataset.as_ref().expect("clap requires --dataset or --protein");
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    let find = |id: &str, role: &str, exts: &[&str]| -> CliResult<PathBuf> {
        exts.iter()
            .map(|e| dir.join(id).join(format!("{id}_{role}.{e}")))
            .find(|p| p.is_file())
            .ok_or_else(|| CliError::Failed(format!("{}: no {id}_{role} structure", dir.join(id).display())))
    };
    ids.into_iter()
        .map(|id| {
            let p = find(&id, "protein", &["pdb", "mol2", "xyz"])?;
            let l = find(&id, "ligand", &["mol2", "xyz", "pdb"])?;
            Ok((id, p, l))
        })
        .collect()
}

fn load(path: &Path, role: Role) -> CliResult<MolecularStructure> {
    read_structure(path, role).map_err(|e| match e {
        e @ hodgegrid::Error::Io { .. } => CliError::Domain(e),
        e => with_path(path, e),
    })
}

fn run_featurize(a: &FeaturizeArgs, threads: usize) -> CliResult<()> {
    let mut config = FeatureConfig::with_k(a.k);
    if let Some(v) = &a.isovalues {
        config.isovalues = v.0.clone();
    }
    config.spacing = a.spacing.unwrap_or(config.spacing);
    config.tau = a.tau.unwrap_or(config.tau);
    config.cutoff = a.cutoff.unwrap_or(config.cutoff);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let labels = match &a.labels {
        Some(p) => {
            let file = File::open(p).map_err(|e| CliError::io(p, e))?;
            Some(features::read_labels(BufReader::new(file)).map_err(|e| with_path(p, e))?)
        }
        None => None,
    };
    let jobs = complexes(a)?;
    let mut matrix = FeatureMatrix::default();
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (i, (id, ppath, lpath)) in jobs.iter().enumerate() {
        let result = load(ppath, Role::Protein).and_then(|p| {
            let l = load(lpath, Role::Ligand)?;
            let row =
                features::featurize_complex(id, &p, &l, &config).map_err(|e| CliError::Failed(format!("{id}: {e}")))?;
            Ok((p, l, row))
        });
        match result {
            Ok((p, l, row)) => {
                eprintln!("[{}/{}] {id}: {} empty pairs", i + 1, jobs.len(), row.empty_pairs.len());
                reports.push(json!({
                    "id": id,
                    "protein": { "path": ppath, "report": p.report },
                    "ligand": { "path": lpath, "report": l.report },
                    "empty_pairs": row.empty_pairs,
                }));
                matrix.push_row(row)?;
            }
            Err(e) if a.skip_failed => {
                eprintln!("[{}/{}] {id}: skipped: {e}", i + 1, jobs.len());
                skipped.push(json!({ "id": id, "error": e.to_string() }));
            }
            Err(e) => return Err(e),
        }
    }
    let mut out = Output::open(&a.out)?;
    features::write_features(&matrix, &mut out.writer).map_err(|e| out.error(e))?;
    let mut details = features::manifest(&config);
    details["complexes"] = json!(reports);
    details["skipped"] = json!(skipped);
    if let (Some(labels), Some(out_path)) = (labels, &a.out.out) {
        let mut picked = Vec::with_capacity(matrix.ids.len());
        for id in &matrix.ids {
            let y = labels
                .iter()
                .find(|(l, _)| l == id)
                .ok_or_else(|| CliError::Failed(format!("no label for complex `{id}`")))?;
            picked.push(y.clone());
        }
        let lpath = out_path.with_extension("labels.csv");
        let file = File::create(&lpath).map_err(|e| CliError::io(&lpath, e))?;
        features::write_labels(&picked, BufWriter::new(file)).map_err(|e| CliError::io(&lpath, e))?;
        details["labels"] = json!(lpath);
    }
    out.finish("featurize", threads, details)
}

fn run_validate(a: &ValidateArgs) -> CliResult<()> {
    let known: Vec<&str> = validate::checks().iter().map(|(n, _)| *n).collect();
    if let Some(bad) = a.only.iter().find(|o| !known.contains(&o.as_str())) {
        return Err(CliError::Usage(format!(
            "unknown check `{bad}` (known: {})",
            known.join(", ")
        )));
    }
    let outcomes = validate::run(&a.only);
    for o in &outcomes {
        if a.json {
            println!("{}", serde_json::to_string(o).expect("outcome serializes"));
        } else {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            println!("{tag} {} ({:.1} s): {}", o.name, o.seconds, o.detail);
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} checks failed",
            outcomes.len()
        )));
    }
    Ok(())
}

fn thread_count(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    Ok(n)
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = thread_count(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    match &cli.command {
        Command::Spectrum(a) => run_spectrum(a, threads),
        Command::Filtration(a) => run_filtration(a, threads),
        Command::Persist(a) => run_persist(a, threads),
        Command::Featurize(a) => run_featurize(a, threads),
        Command::Validate(a) => run_validate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
