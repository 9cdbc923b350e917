use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use semvar_core::compare::{agreement_matrices, correlation_map, correlation_map_full_ssm, mean_correlation_map};
use semvar_core::corpus::{self, corpus_stats, Document};
use semvar_core::pipeline::{run_pipeline, NamedProvider, PipelineConfig, StageStatus};
use semvar_core::render::{render_heatmap, render_timeseries};
use semvar_core::semv::{self, SimilarityFile};
use semvar_core::ssm::{build_ssm, standardize_with, successive_series, Population, TimeSeries};
use semvar_core::{
    embed_document, novelty_report, CorrelateMode, Execution, ModelId, ModelMatrix, NoveltyParams, Palette,
    ProviderConfig, RenderSpec, StandardizedSsm,
};

mod logging;

#[derive(Parser)]
#[command(name = "semvar", version, about = "Semantic structure of long documents across embedding models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a plain-text book into a sentence record.
    Ingest(IngestArgs),
    /// Embed every sentence of a document with one provider.
    Embed(EmbedArgs),
    /// Build the similarity matrix, its z-scored form and the successive series.
    Ssm(SsmArgs),
    /// Correlation and sign-agreement matrices across models.
    Compare(CompareArgs),
    /// Rank sentences by how dissimilar they are to the rest of the document.
    Novelty(NoveltyArgs),
    /// Draw heatmaps and time-series plots.
    Render(RenderArgs),
    /// Run every stage over a corpus with caching.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// UTF-8 text file.
    input: PathBuf,
    /// Output record; defaults to `<id>.sents` in the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the Project Gutenberg header and licence.
    #[arg(long)]
    no_strip: bool,
}

#[derive(Args)]
struct EmbedArgs {
    /// A `.sents` record or a plain-text book.
    input: PathBuf,
    /// `name=kind:location`, e.g. `ref64=reference:64`.
    #[arg(long)]
    provider: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args)]
struct SsmArgs {
    /// SEMV1 embeddings.
    input: PathBuf,
    /// Directory receiving ssm.semv, zssm.semv and series.csv.
    #[arg(long)]
    out: PathBuf,
    /// Standardize over the whole matrix instead of the strict upper triangle.
    #[arg(long)]
    include_diagonal: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Correlate {
    Timeseries,
    FullSsm,
}

impl From<Correlate> for CorrelateMode {
    fn from(c: Correlate) -> Self {
        match c {
            Correlate::Timeseries => CorrelateMode::Timeseries,
            Correlate::FullSsm => CorrelateMode::FullSsm,
        }
    }
}

#[derive(Args)]
struct CompareArgs {
    /// Standardized SSMs (zssm.semv), one per model, same document.
    #[arg(required_unless_present = "mean_of")]
    inputs: Vec<PathBuf>,
    /// Average existing correlation CSVs instead.
    #[arg(long, num_args = 1.., conflicts_with = "inputs")]
    mean_of: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "timeseries")]
    correlate: Correlate,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoveltyArgs {
    /// Standardized SSMs, one per model.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Sentence record used for excerpts.
    #[arg(long)]
    doc: Option<PathBuf>,
    #[arg(long, default_value_t = NoveltyParams::DEFAULT_Q)]
    novelty_q: f64,
    /// Defaults to a majority of the inputs.
    #[arg(long)]
    novelty_k: Option<usize>,
    /// Directory receiving novelty.csv and novelty.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(subcommand)]
    what: RenderWhat,
}

#[derive(Args, Clone)]
struct SpecArgs {
    #[arg(long, default_value = "viridis")]
    palette: Palette,
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
    #[arg(long, default_value_t = 256)]
    downsample: usize,
    #[arg(long, default_value = "")]
    title: String,
}

impl SpecArgs {
    fn spec(&self) -> RenderSpec {
        RenderSpec {
            palette: self.palette,
            width: self.width,
            height: self.height,
            downsample: self.downsample,
            title: self.title.clone(),
        }
    }
}

#[derive(Subcommand)]
enum RenderWhat {
    /// A `.semv` similarity matrix or a model-matrix `.csv`.
    Heatmap {
        input: PathBuf,
        /// `.svg` or `.ppm`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Stacked series plots; each input is `model=path` or a path whose
    /// parent directory names the model.
    Series {
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// Documents to process in addition to those in the config.
    documents: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Documents in flight at once; 0 means one per logical CPU.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// `name=kind:location`; replaces the configured providers when given.
    #[arg(long)]
    provider: Vec<String>,
    #[arg(long)]
    include_diagonal: bool,
    #[arg(long, value_enum)]
    correlate: Option<Correlate>,
    #[arg(long)]
    novelty_q: Option<f64>,
    #[arg(long)]
    novelty_k: Option<usize>,
    /// Artifact directory; `SEMVAR_CACHE` takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_provider(spec: &str) -> Result<NamedProvider> {
    let (name, rest) = spec
        .split_once('=')
        .with_context(|| format!("provider {spec:?} must look like name=kind:location"))?;
    Ok(NamedProvider {
        name: ModelId::new(name)?,
        provider: rest.parse::<ProviderConfig>()?,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_doc(path: &Path, strip: bool) -> Result<Document> {
    if path.extension().is_some_and(|e| e == "sents") {
        Ok(corpus::read_document(open(path)?, &path.to_string_lossy())?)
    } else {
        Ok(corpus::load_document(path, strip)?)
    }
}

fn read_standardized_all(paths: &[PathBuf]) -> Result<Vec<StandardizedSsm>> {
    paths
        .iter()
        .map(|p| semv::read_standardized(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn ingest(a: IngestArgs) -> Result<()> {
    let doc = corpus::load_document(&a.input, !a.no_strip)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("{}.sents", doc.id)));
    let mut w = create(&out)?;
    corpus::write_document(&doc, &mut w)?;
    w.flush()?;
    let stats = corpus_stats(&doc);
    println!(
        "{}\tsentences={}\ttokens={}\tmean_length={:.2}",
        doc.id, stats.sentence_count, stats.token_count, stats.mean_sentence_length
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let mut np = parse_provider(&a.provider)?;
    np.provider.batch_size = a.batch_size;
    let doc = read_doc(&a.input, true)?;
    let m = embed_document(&np.provider, &doc, &np.name)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    semv::write_embeddings(&m, &a.out)?;
    println!("{}\t{}\tn={}\td={}", m.doc_id(), m.model(), m.n(), m.d());
    Ok(())
}

fn ssm(a: SsmArgs) -> Result<()> {
    let m = semv::read_embeddings(&a.input)?;
    let s = build_ssm(&m)?;
    drop(m);
    let pop = if a.include_diagonal {
        Population::FullMatrix
    } else {
        Population::UpperTriangle
    };
    fs::create_dir_all(&a.out)?;
    semv::write_ssm(&s, a.out.join("ssm.semv"))?;
    let z = standardize_with(&s, pop, Execution::default())?;
    drop(s);
    semv::write_standardized(&z, a.out.join("zssm.semv"))?;
    let series = successive_series(&z)?;
    let mut w = create(&a.out.join("series.csv"))?;
    series.write_csv(&mut w)?;
    w.flush()?;
    println!("{}\t{}\tn={}\tmu={:.6}\tsigma={:.6}", z.doc_id, z.model, z.n(), z.mu, z.sigma);
    Ok(())
}

fn write_matrix(m: &ModelMatrix, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    m.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    if !a.mean_of.is_empty() {
        let maps = a
            .mean_of
            .iter()
            .map(|p| Ok(ModelMatrix::read_csv(open(p)?)?))
            .collect::<Result<Vec<_>>>()?;
        let mean = mean_correlation_map(&maps)?;
        let out = if a.out.extension().is_some_and(|e| e == "csv") {
            a.out
        } else {
            a.out.join("mean_correlation.csv")
        };
        return write_matrix(&mean, &out);
    }
    let zs = read_standardized_all(&a.inputs)?;
    fs::create_dir_all(&a.out)?;
    let corr = match a.correlate {
        Correlate::Timeseries => {
            let series = zs.iter().map(successive_series).collect::<semvar_core::Result<Vec<_>>>()?;
            correlation_map(&series)?
        }
        Correlate::FullSsm => correlation_map_full_ssm(&zs)?,
    };
    write_matrix(&corr, &a.out.join("correlation.csv"))?;
    let agree = agreement_matrices(&zs)?;
    write_matrix(&agree.paf, &a.out.join("paf.csv"))?;
    write_matrix(&agree.naf, &a.out.join("naf.csv"))?;
    write_matrix(&agree.ddaf, &a.out.join("ddaf.csv"))?;
    for s in &agree.summaries {
        println!(
            "{}\t{}\tpp={}\tnn={}\tpn={}\tnp={}\tpairs={}",
            s.model_a, s.model_b, s.pos_pos, s.neg_neg, s.pos_neg, s.neg_pos, s.total_pairs
        );
    }
    Ok(())
}

fn novelty(a: NoveltyArgs) -> Result<()> {
    let zs = read_standardized_all(&a.inputs)?;
    let mut params = NoveltyParams::default_for(zs.len());
    params.q = a.novelty_q;
    if let Some(k) = a.novelty_k {
        params.k = k;
    }
    let report = novelty_report(&zs, params)?;
    let doc = a.doc.as_deref().map(|p| read_doc(p, true)).transpose()?;
    if let Some(d) = &doc {
        if d.len() != report.n() {
            bail!("{} has {} sentences but the matrices have {}", d.id, d.len(), report.n());
        }
    }
    fs::create_dir_all(&a.out)?;
    let mut w = create(&a.out.join("novelty.csv"))?;
    report.write_csv(doc.as_ref(), &mut w)?;
    w.flush()?;
    let mut w = create(&a.out.join("novelty.json"))?;
    report.write_json(doc.as_ref(), &mut w)?;
    w.flush()?;
    for (i, count) in &report.flags {
        println!("{i}\t{count}");
    }
    Ok(())
}

fn series_input(s: &str) -> Result<(ModelId, PathBuf)> {
    if let Some((name, path)) = s.split_once('=') {
        return Ok((ModelId::new(name)?, PathBuf::from(path)));
    }
    let path = PathBuf::from(s);
    let name = path
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .with_context(|| format!("cannot infer a model name for {s}; use model=path"))?;
    Ok((ModelId::new(name)?, path))
}

fn render(a: RenderArgs) -> Result<()> {
    match a.what {
        RenderWhat::Heatmap { input, out, spec } => {
            let spec = spec.spec();
            if input.extension().is_some_and(|e| e == "csv") {
                let m = ModelMatrix::read_csv(open(&input)?)?;
                render_heatmap(&m, &spec, &out)?;
            } else {
                match semv::read_similarity(&input)? {
                    SimilarityFile::Raw(s) => render_heatmap(&s, &spec, &out)?,
                    SimilarityFile::Standardized(z) => render_heatmap(&z, &spec, &out)?,
                }
            }
        }
        RenderWhat::Series { inputs, out, spec } => {
            let series = inputs
                .iter()
                .map(|s| {
                    let (model, path) = series_input(s)?;
                    Ok(TimeSeries::read_csv(open(&path)?, model, "")?)
                })
                .collect::<Result<Vec<_>>>()?;
            render_timeseries(&series, &spec.spec(), &out)?;
        }
    }
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<bool> {
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::new(Vec::new(), Vec::new(), "semvar-out"),
    };
    cfg.documents.extend(a.documents);
    if !a.provider.is_empty() {
        cfg.providers = a.provider.iter().map(|p| parse_provider(p)).collect::<Result<_>>()?;
    }
    if a.include_diagonal {
        cfg.standardize_include_diagonal = true;
    }
    if let Some(c) = a.correlate {
        cfg.correlate_mode = c.into();
    }
    if let Some(q) = a.novelty_q {
        cfg.novelty.q = q;
    }
    if let Some(k) = a.novelty_k {
        cfg.novelty.k = Some(k);
    }
    if let Some(out) = a.out {
        cfg.cache_dir = out;
    }
    cfg.apply_env();

    let summary = run_pipeline(&cfg, a.jobs)?;
    let mut stdout = std::io::stdout().lock();
    for r in &summary.records {
        writeln!(stdout, "{}\t{}\t{}", r.doc, r.stage, r.status)?;
    }
    writeln!(
        stdout,
        "# ran={} cached={} skipped={} failed={} artifacts={}",
        summary.count(StageStatus::Ran),
        summary.count(StageStatus::Cached),
        summary.count(StageStatus::Skipped),
        summary.failures.len(),
        cfg.cache_dir.display()
    )?;
    Ok(summary.success())
}

fn main() -> ExitCode {
    logging::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a).map(|()| true),
        Command::Embed(a) => embed(a).map(|()| true),
        Command::Ssm(a) => ssm(a).map(|()| true),
        Command::Compare(a) => compare(a).map(|()| true),
        Command::Novelty(a) => novelty(a).map(|()| true),
        Command::Render(a) => render(a).map(|()| true),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            log::error!(target: "semvar", "cli\t-\t{e:#}");
            ExitCode::FAILURE
        }
    }
}
