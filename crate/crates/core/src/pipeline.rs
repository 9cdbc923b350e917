//! Corpus runs: every document through ingest, embed, ssm, compare, novelty
//! and render, with each stage skipped when its content key is unchanged.
//!
//! Artifact tree under `cache_dir`:
//!
//! ```text
//! docs/<id>/document.sents
//! docs/<id>/<model>/{embeddings.semv, ssm.semv, zssm.semv, series.csv, heatmap.<fmt>}
//! docs/<id>/{correlation,paf,naf,ddaf}.{csv,<fmt>}
//! docs/<id>/{timeseries.<fmt>, novelty.csv, novelty.json}
//! corpus/mean_correlation.{csv,<fmt>}
//! ```
//!
//! Keys live in `.keys/<stage>.key` next to the outputs they describe.
//!
//! Comparison stages need two models. Time-series correlation also needs a
//! series of three points, so documents under four sentences skip it and stay
//! out of the corpus mean.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::Level;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compare::{
    agreement_from_bits, correlation_map, correlation_map_flat, mean_correlation_map, MatrixKind, ModelMatrix,
    SignBits,
};
use crate::corpus::{self, Document};
use crate::embedding::{embed_document, EmbeddingMatrix, ModelId, ProviderConfig, ProviderKind};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::novelty::{report_from_scores, row_novelty_with, NoveltyParams};
use crate::render::{render_heatmap, render_timeseries, ImageFormat, RenderSpec};
use crate::semv;
use crate::ssm::{build_ssm_with, standardize_with, successive_series, Population, Ssm, StandardizedSsm, TimeSeries};

/// Bumped whenever segmentation or any stage's output format changes, so
/// old caches are never reused across incompatible builds.
pub const CACHE_VERSION: &str = "semvar-cache-1";

pub const CACHE_ENV: &str = "SEMVAR_CACHE";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelateMode {
    /// Pearson over successive-sentence series.
    #[default]
    Timeseries,
    /// Pearson over flattened standardized upper triangles.
    FullSsm,
}

impl FromStr for CorrelateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timeseries" => Ok(CorrelateMode::Timeseries),
            "full-ssm" => Ok(CorrelateMode::FullSsm),
            other => Err(Error::Config(format!("correlate mode must be timeseries or full-ssm, got {other:?}"))),
        }
    }
}

impl fmt::Display for CorrelateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelateMode::Timeseries => "timeseries",
            CorrelateMode::FullSsm => "full-ssm",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedProvider {
    pub name: ModelId,
    #[serde(flatten)]
    pub provider: ProviderConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoveltySection {
    pub q: f64,
    /// Defaults to a majority of the configured models.
    pub k: Option<usize>,
}

impl Default for NoveltySection {
    fn default() -> Self {
        NoveltySection { q: NoveltyParams::DEFAULT_Q, k: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSection {
    #[serde(flatten)]
    pub spec: RenderSpec,
    pub formats: Vec<ImageFormat>,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection {
            spec: RenderSpec::default(),
            formats: vec![ImageFormat::Svg, ImageFormat::Ppm],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub documents: Vec<PathBuf>,
    pub providers: Vec<NamedProvider>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_true")]
    pub strip_boilerplate: bool,
    #[serde(default)]
    pub standardize_include_diagonal: bool,
    #[serde(default)]
    pub correlate_mode: CorrelateMode,
    #[serde(default)]
    pub novelty: NoveltySection,
    #[serde(default)]
    pub render: RenderSection,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("semvar-out")
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn new(documents: Vec<PathBuf>, providers: Vec<NamedProvider>, cache_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            documents,
            providers,
            cache_dir: cache_dir.into(),
            strip_boilerplate: true,
            standardize_include_diagonal: false,
            correlate_mode: CorrelateMode::default(),
            novelty: NoveltySection::default(),
            render: RenderSection::default(),
        }
    }

    /// Parses TOML. Relative document paths, file-provider locations and the
    /// cache directory are resolved against `base_dir` when given.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base_dir {
            let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
            cfg.documents = cfg.documents.iter().map(|p| resolve(p)).collect();
            cfg.cache_dir = resolve(&cfg.cache_dir);
            for np in &mut cfg.providers {
                if np.provider.kind == ProviderKind::File {
                    np.provider.location = resolve(Path::new(&np.provider.location)).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    /// Applies `SEMVAR_CACHE` when set and non-empty.
    pub fn apply_env(&mut self) {
        self.apply_cache_override(std::env::var_os(CACHE_ENV).map(PathBuf::from));
    }

    pub fn apply_cache_override(&mut self, dir: Option<PathBuf>) {
        if let Some(dir) = dir.filter(|d| !d.as_os_str().is_empty()) {
            self.cache_dir = dir;
        }
    }

    pub fn population(&self) -> Population {
        if self.standardize_include_diagonal {
            Population::FullMatrix
        } else {
            Population::UpperTriangle
        }
    }

    pub fn novelty_params(&self) -> NoveltyParams {
        let mut p = NoveltyParams::default_for(self.providers.len());
        p.q = self.novelty.q;
        if let Some(k) = self.novelty.k {
            p.k = k;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.documents.is_empty() {
            return Err(Error::Config("at least one document is required".into()));
        }
        if self.providers.is_empty() {
            return Err(Error::Config("at least one provider is required".into()));
        }
        for (i, np) in self.providers.iter().enumerate() {
            if self.providers[..i].iter().any(|o| o.name == np.name) {
                return Err(Error::Config(format!("duplicate model name {}", np.name)));
            }
            np.provider
                .validate()
                .map_err(|e| Error::Config(format!("provider {}: {e}", np.name)))?;
        }
        let ids: Vec<String> = self.documents.iter().map(corpus::document_id).collect();
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::Config(format!("two documents map to the id {id}")));
            }
        }
        self.novelty_params().validate(self.providers.len())?;
        self.render.spec.validate()?;
        if self.render.formats.is_empty() {
            return Err(Error::Config("render.formats must name at least one format".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
    Skipped,
    Failed,
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageStatus::Ran => "ran",
            StageStatus::Cached => "cached",
            StageStatus::Skipped => "skipped",
            StageStatus::Failed => "failed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageRecord {
    /// Document id, or `corpus` for cross-document stages.
    pub doc: String,
    pub stage: String,
    pub status: StageStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PipelineSummary {
    pub records: Vec<StageRecord>,
    /// `(document id, error message)` for every document that failed.
    pub failures: Vec<(String, String)>,
}

impl PipelineSummary {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn count(&self, status: StageStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }
}

pub const CORPUS_SCOPE: &str = "corpus";

fn emit(level: Level, stage: &str, doc: &str, msg: impl fmt::Display) {
    log::log!(target: "semvar", level, "{stage}\t{doc}\t{msg}");
}

/// Length-prefixed SHA-256 over labelled fields.
struct KeyHasher(Sha256);

impl KeyHasher {
    fn new(stage: &str) -> Self {
        let mut h = KeyHasher(Sha256::new());
        h.field("version", CACHE_VERSION.as_bytes());
        h.field("stage", stage.as_bytes());
        h
    }

    fn field(&mut self, label: &str, bytes: &[u8]) -> &mut Self {
        for part in [label.as_bytes(), bytes] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    fn text(&mut self, label: &str, s: impl fmt::Display) -> &mut Self {
        self.field(label, s.to_string().as_bytes())
    }

    fn finish(&mut self) -> String {
        hex::encode(std::mem::take(&mut self.0).finalize())
    }
}

/// A unit of work with its key and the files it produces.
struct Stage {
    name: String,
    key: String,
    key_file: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Stage {
    fn new(dir: &Path, name: impl Into<String>, key: String, outputs: Vec<PathBuf>) -> Self {
        let name = name.into();
        let key_file = dir.join(".keys").join(format!("{}.key", name.replace('/', ".")));
        Stage { name, key, key_file, outputs }
    }

    fn is_fresh(&self) -> bool {
        fs::read_to_string(&self.key_file).is_ok_and(|k| k.trim() == self.key)
            && self.outputs.iter().all(|p| p.is_file())
    }

    fn commit(&self) -> Result<()> {
        if let Some(parent) = self.key_file.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::write(parent, e))?;
        }
        atomically(&self.key_file, |tmp| {
            fs::write(tmp, format!("{}\n", self.key)).map_err(|e| Error::write(tmp, e))
        })
    }
}

/// Writes through a sibling temporary file that keeps the extension, then
/// renames it into place, so readers never see partial artifacts.
fn atomically(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".tmp-{name}"));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::write(parent, e))?;
    }
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::write(path, e))
}

fn write_csv_file(path: &Path, write: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    atomically(path, |tmp| {
        let mut f = fs::File::create(tmp).map_err(|e| Error::write(tmp, e))?;
        write(&mut f)?;
        f.sync_all().map_err(|e| Error::write(tmp, e))
    })
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| Error::read(path, e))
}

fn read_matrix(path: &Path) -> Result<ModelMatrix> {
    ModelMatrix::read_csv(open(path)?)
}

fn render_all(
    formats: &[ImageFormat],
    spec: &RenderSpec,
    stem: &Path,
    mut draw: impl FnMut(&RenderSpec, &Path) -> Result<()>,
) -> Result<()> {
    for f in formats {
        let path = stem.with_extension(f.extension());
        atomically(&path, |tmp| draw(spec, tmp))?;
    }
    Ok(())
}

fn image_paths(formats: &[ImageFormat], stem: &Path) -> Vec<PathBuf> {
    formats.iter().map(|f| stem.with_extension(f.extension())).collect()
}

struct StageRunner<'a> {
    doc: &'a str,
    records: Vec<StageRecord>,
}

impl StageRunner<'_> {
    fn record(&mut self, stage: &str, status: StageStatus) {
        self.records.push(StageRecord {
            doc: self.doc.to_string(),
            stage: stage.to_string(),
            status,
        });
    }

    /// Runs `work` unless the stage is fresh; returns whether it ran.
    fn run(&mut self, stage: &Stage, work: impl FnOnce() -> Result<()>) -> Result<bool> {
        if stage.is_fresh() {
            emit(Level::Info, &stage.name, self.doc, "cached");
            self.record(&stage.name, StageStatus::Cached);
            return Ok(false);
        }
        let start = Instant::now();
        match work().and_then(|()| stage.commit()) {
            Ok(()) => {
                emit(
                    Level::Info,
                    &stage.name,
                    self.doc,
                    format_args!("ran in {} ms", start.elapsed().as_millis()),
                );
                self.record(&stage.name, StageStatus::Ran);
                Ok(true)
            }
            Err(e) => {
                emit(Level::Error, &stage.name, self.doc, &e);
                self.record(&stage.name, StageStatus::Failed);
                Err(e)
            }
        }
    }

    fn skip(&mut self, stage: &str, why: &str) {
        emit(Level::Warn, stage, self.doc, format_args!("skipped: {why}"));
        self.record(stage, StageStatus::Skipped);
    }
}

/// Paths and keys of one (document, model) pair.
struct ModelPlan<'a> {
    name: &'a ModelId,
    provider: &'a ProviderConfig,
    dir: PathBuf,
    embed_key: String,
    ssm_key: String,
    z_key: String,
    series_key: String,
}

impl ModelPlan<'_> {
    fn embeddings(&self) -> PathBuf {
        self.dir.join("embeddings.semv")
    }
    fn ssm(&self) -> PathBuf {
        self.dir.join("ssm.semv")
    }
    fn zssm(&self) -> PathBuf {
        self.dir.join("zssm.semv")
    }
    fn series(&self) -> PathBuf {
        self.dir.join("series.csv")
    }
}

fn provider_key(h: &mut KeyHasher, np: &NamedProvider, doc_id: &str) {
    let p = &np.provider;
    h.text("model", &np.name)
        .text("kind", format_args!("{:?}", p.kind))
        .text("dim", format_args!("{:?}", p.dim));
    match p.kind {
        ProviderKind::Reference => {}
        ProviderKind::Remote => {
            h.text("location", &p.location);
        }
        // file contents, not just the path, decide freshness
        ProviderKind::File => {
            let path = p.resolve_file(doc_id, &np.name);
            match fs::read(&path) {
                Ok(bytes) => h.field("file", &Sha256::digest(bytes)),
                Err(_) => h.text("file-missing", path.display()),
            };
        }
    }
}

/// What a finished document hands to the corpus stages.
struct DocOutcome {
    id: String,
    records: Vec<StageRecord>,
    /// Correlation map path and key, present when it exists.
    correlation: Option<(PathBuf, String)>,
    error: Option<String>,
}

fn run_document(cfg: &PipelineConfig, path: &Path, exec: Execution) -> DocOutcome {
    let id = corpus::document_id(path);
    let mut runner = StageRunner { doc: &id, records: Vec::new() };
    let result = process_document(cfg, path, &id, exec, &mut runner);
    let records = runner.records;
    match result {
        Ok(correlation) => DocOutcome { id, records, correlation, error: None },
        Err(e) => DocOutcome {
            id,
            records,
            correlation: None,
            error: Some(e.to_string()),
        },
    }
}

fn process_document(
    cfg: &PipelineConfig,
    path: &Path,
    id: &str,
    exec: Execution,
    runner: &mut StageRunner<'_>,
) -> Result<Option<(PathBuf, String)>> {
    let doc_dir = cfg.cache_dir.join("docs").join(id);
    let formats = &cfg.render.formats;
    let spec = &cfg.render.spec;
    let render_key = serde_json::to_string(&cfg.render)?;

    // ingest
    let source = fs::read(path).map_err(|e| {
        let e = Error::read(path, e);
        emit(Level::Error, "ingest", id, &e);
        runner.record("ingest", StageStatus::Failed);
        e
    })?;
    let ingest_key = KeyHasher::new("ingest")
        .field("source", &source)
        .text("strip", cfg.strip_boilerplate)
        .finish();
    let sents = doc_dir.join("document.sents");
    let ingest = Stage::new(&doc_dir, "ingest", ingest_key.clone(), vec![sents.clone()]);
    let mut fresh_doc: Option<Document> = None;
    runner.run(&ingest, || {
        let doc = corpus::load_document(path, cfg.strip_boilerplate)?;
        write_csv_file(&sents, |f| {
            corpus::write_document(&doc, f).map_err(|e| Error::write(&sents, e))
        })?;
        fresh_doc = Some(doc);
        Ok(())
    })?;
    let doc = match fresh_doc {
        Some(d) => d,
        None => corpus::read_document(open(&sents)?, &path.to_string_lossy())?,
    };

    // keys for every model first; they depend only on inputs and parameters
    let population = cfg.population();
    let plans: Vec<ModelPlan<'_>> = cfg
        .providers
        .iter()
        .map(|np| {
            let mut h = KeyHasher::new("embed");
            h.text("ingest", &ingest_key);
            provider_key(&mut h, np, id);
            let embed_key = h.finish();
            let ssm_key = KeyHasher::new("ssm").text("embed", &embed_key).finish();
            let z_key = KeyHasher::new("standardize")
                .text("ssm", &ssm_key)
                .text("population", format_args!("{population:?}"))
                .finish();
            let series_key = KeyHasher::new("series").text("z", &z_key).finish();
            ModelPlan {
                name: &np.name,
                provider: &np.provider,
                dir: doc_dir.join(np.name.as_str()),
                embed_key,
                ssm_key,
                z_key,
                series_key,
            }
        })
        .collect();

    let joined = |key: &dyn Fn(&ModelPlan<'_>) -> String| {
        let mut h = KeyHasher::new("join");
        for p in &plans {
            h.text(p.name.as_str(), key(p));
        }
        h.finish()
    };
    let z_keys = joined(&|p| p.z_key.clone());
    let series_keys = joined(&|p| p.series_key.clone());
    let params = cfg.novelty_params();
    let multi = plans.len() >= 2;

    let corr_csv = doc_dir.join("correlation.csv");
    let corr_key = KeyHasher::new("correlation")
        .text("mode", cfg.correlate_mode)
        .text(
            "inputs",
            match cfg.correlate_mode {
                CorrelateMode::Timeseries => &series_keys,
                CorrelateMode::FullSsm => &z_keys,
            },
        )
        .finish();
    let correlation = Stage::new(&doc_dir, "correlation", corr_key.clone(), vec![corr_csv.clone()]);
    let agree_csvs: Vec<PathBuf> = ["paf", "naf", "ddaf"].iter().map(|k| doc_dir.join(format!("{k}.csv"))).collect();
    let agree_key = KeyHasher::new("agreement").text("z", &z_keys).finish();
    let agreement = Stage::new(&doc_dir, "agreement", agree_key.clone(), agree_csvs.clone());
    let novelty_outputs = vec![doc_dir.join("novelty.csv"), doc_dir.join("novelty.json")];
    let novelty = Stage::new(
        &doc_dir,
        "novelty",
        KeyHasher::new("novelty")
            .text("ingest", &ingest_key)
            .text("z", &z_keys)
            .text("q", params.q)
            .text("k", params.k)
            .finish(),
        novelty_outputs.clone(),
    );

    // a series needs three points for a correlation
    let corr_defined = match cfg.correlate_mode {
        CorrelateMode::Timeseries => doc.len() >= 4,
        CorrelateMode::FullSsm => true,
    };
    let with_corr = multi && corr_defined;
    let need_corr = with_corr && !correlation.is_fresh();
    let need_agree = multi && !agreement.is_fresh();
    let need_novelty = !novelty.is_fresh();

    let mut bits: Vec<SignBits> = Vec::new();
    let mut scores: Vec<Vec<f64>> = Vec::new();
    let mut series_all: Vec<TimeSeries> = Vec::new();
    let mut uppers: Vec<(ModelId, Vec<f32>)> = Vec::new();

    for plan in &plans {
        fs::create_dir_all(&plan.dir).map_err(|e| Error::write(&plan.dir, e))?;
        let tag = |stage: &str| format!("{stage}/{}", plan.name);
        let mut emb: Option<EmbeddingMatrix> = None;
        let mut ssm: Option<Ssm> = None;
        let mut z: Option<StandardizedSsm> = None;

        let st = Stage::new(&doc_dir, tag("embed"), plan.embed_key.clone(), vec![plan.embeddings()]);
        runner.run(&st, || {
            let m = embed_document(plan.provider, &doc, plan.name)?;
            atomically(&plan.embeddings(), |tmp| semv::write_embeddings(&m, tmp))?;
            emb = Some(m);
            Ok(())
        })?;

        let st = Stage::new(&doc_dir, tag("ssm"), plan.ssm_key.clone(), vec![plan.ssm()]);
        runner.run(&st, || {
            let m = match emb.take() {
                Some(m) => m,
                None => semv::read_embeddings(plan.embeddings())?,
            };
            let s = build_ssm_with(&m, exec)?;
            atomically(&plan.ssm(), |tmp| semv::write_ssm(&s, tmp))?;
            ssm = Some(s);
            Ok(())
        })?;
        drop(emb);

        let st = Stage::new(&doc_dir, tag("standardize"), plan.z_key.clone(), vec![plan.zssm()]);
        runner.run(&st, || {
            let s = match ssm.take() {
                Some(s) => s,
                None => semv::read_ssm(plan.ssm())?,
            };
            let zz = standardize_with(&s, population, exec)?;
            drop(s);
            atomically(&plan.zssm(), |tmp| semv::write_standardized(&zz, tmp))?;
            z = Some(zz);
            Ok(())
        })?;
        drop(ssm);

        let load_z = |z: &mut Option<StandardizedSsm>| -> Result<()> {
            if z.is_none() {
                *z = Some(semv::read_standardized(plan.zssm())?);
            }
            Ok(())
        };

        let mut series: Option<TimeSeries> = None;
        let st = Stage::new(&doc_dir, tag("series"), plan.series_key.clone(), vec![plan.series()]);
        runner.run(&st, || {
            load_z(&mut z)?;
            let ts = successive_series(z.as_ref().expect("loaded"))?;
            write_csv_file(&plan.series(), |f| ts.write_csv(f))?;
            series = Some(ts);
            Ok(())
        })?;

        let heat_stem = plan.dir.join("heatmap");
        let st = Stage::new(
            &doc_dir,
            tag("render-ssm"),
            KeyHasher::new("render-ssm")
                .text("z", &plan.z_key)
                .text("ingest", &ingest_key)
                .text("render", &render_key)
                .finish(),
            image_paths(formats, &heat_stem),
        );
        runner.run(&st, || {
            load_z(&mut z)?;
            let zz = z.as_ref().expect("loaded");
            let titled = spec.with_title(title_for(spec, &doc, plan.name.as_str()));
            render_all(formats, &titled, &heat_stem, |s, p| render_heatmap(zz, s, p))
        })?;

        if need_corr || need_agree || need_novelty {
            load_z(&mut z)?;
            let zz = z.as_ref().expect("loaded");
            if need_agree {
                bits.push(SignBits::from_standardized(zz));
            }
            if need_novelty {
                scores.push(row_novelty_with(zz, exec)?);
            }
            if need_corr {
                match cfg.correlate_mode {
                    CorrelateMode::FullSsm => uppers.push((plan.name.clone(), zz.upper_triangle())),
                    CorrelateMode::Timeseries => {
                        let ts = match series.take() {
                            Some(ts) => ts,
                            None => TimeSeries::read_csv(open(&plan.series())?, plan.name.clone(), id)?,
                        };
                        series_all.push(ts);
                    }
                }
            }
        }
    }

    if with_corr {
        runner.run(&correlation, || {
            let map = match cfg.correlate_mode {
                CorrelateMode::Timeseries => correlation_map(&series_all)?,
                CorrelateMode::FullSsm => correlation_map_flat(id, &uppers)?,
            };
            write_csv_file(&corr_csv, |f| map.write_csv(f))
        })?;
    } else if multi {
        let stem = doc_dir.join(MatrixKind::Correlation.to_string());
        for stale in std::iter::once(corr_csv.clone()).chain(image_paths(formats, &stem)) {
            let _ = fs::remove_file(stale);
        }
        runner.skip("correlation", "series shorter than 3");
    }
    drop(uppers);
    if multi {
        runner.run(&agreement, || {
            let a = agreement_from_bits(&bits)?;
            for (m, p) in [&a.paf, &a.naf, &a.ddaf].into_iter().zip(&agree_csvs) {
                write_csv_file(p, |f| m.write_csv(f))?;
            }
            Ok(())
        })?;
    } else {
        runner.skip("correlation", "needs at least two models");
        runner.skip("agreement", "needs at least two models");
    }

    runner.run(&novelty, || {
        let models = plans.iter().map(|p| p.name.clone()).collect();
        let report = report_from_scores(id, models, std::mem::take(&mut scores), params)?;
        for (p, json) in novelty_outputs.iter().zip([false, true]) {
            write_csv_file(p, |f| {
                if json {
                    report.write_json(Some(&doc), f)
                } else {
                    report.write_csv(Some(&doc), f)
                }
            })?;
        }
        let top: Vec<String> = report.flags.iter().take(5).map(|(i, c)| format!("{i}({c})")).collect();
        emit(
            Level::Info,
            "novelty",
            id,
            format_args!("{} flagged; top {}", report.flags.len(), top.join(" ")),
        );
        Ok(())
    })?;

    if multi {
        let stems: Vec<(MatrixKind, PathBuf)> = [MatrixKind::Correlation, MatrixKind::Paf, MatrixKind::Naf, MatrixKind::Ddaf]
            .into_iter()
            .filter(|&k| with_corr || k != MatrixKind::Correlation)
            .map(|k| (k, doc_dir.join(k.to_string())))
            .collect();
        let st = Stage::new(
            &doc_dir,
            "render-matrices",
            KeyHasher::new("render-matrices")
                .text("correlation", if with_corr { corr_key.as_str() } else { "-" })
                .text("agreement", &agree_key)
                .text("ingest", &ingest_key)
                .text("render", &render_key)
                .finish(),
            stems.iter().flat_map(|(_, s)| image_paths(formats, s)).collect(),
        );
        runner.run(&st, || {
            for (kind, stem) in &stems {
                let m = read_matrix(&stem.with_extension("csv"))?;
                let titled = spec.with_title(title_for(spec, &doc, &kind.to_string()));
                render_all(formats, &titled, stem, |s, p| render_heatmap(&m, s, p))?;
            }
            Ok(())
        })?;
    } else {
        runner.skip("render-matrices", "needs at least two models");
    }

    let ts_stem = doc_dir.join("timeseries");
    let st = Stage::new(
        &doc_dir,
        "render-series",
        KeyHasher::new("render-series")
            .text("series", &series_keys)
            .text("ingest", &ingest_key)
            .text("render", &render_key)
            .finish(),
        image_paths(formats, &ts_stem),
    );
    runner.run(&st, || {
        let all = plans
            .iter()
            .map(|p| TimeSeries::read_csv(open(&p.series())?, p.name.clone(), id))
            .collect::<Result<Vec<_>>>()?;
        let titled = spec.with_title(title_for(spec, &doc, "successive similarity"));
        render_all(formats, &titled, &ts_stem, |s, p| render_timeseries(&all, s, p))
    })?;

    Ok(with_corr.then_some((corr_csv, corr_key)))
}

fn title_for(spec: &RenderSpec, doc: &Document, what: &str) -> String {
    if spec.title.is_empty() {
        format!("{} ({what})", doc.title)
    } else {
        format!("{} ({what})", spec.title)
    }
}

fn run_corpus(cfg: &PipelineConfig, outcomes: &[DocOutcome], summary: &mut PipelineSummary) -> Result<()> {
    let dir = cfg.cache_dir.join(CORPUS_SCOPE);
    let mut runner = StageRunner { doc: CORPUS_SCOPE, records: Vec::new() };
    let maps: Vec<&(PathBuf, String)> = outcomes.iter().filter_map(|o| o.correlation.as_ref()).collect();
    if maps.is_empty() {
        runner.skip("mean-correlation", "no per-document correlation maps");
        summary.records.append(&mut runner.records);
        return Ok(());
    }
    let mut h = KeyHasher::new("mean-correlation");
    for (_, k) in &maps {
        h.text("map", k);
    }
    let mean_key = h.finish();
    let csv = dir.join("mean_correlation.csv");
    let result = (|| -> Result<()> {
        fs::create_dir_all(&dir).map_err(|e| Error::write(&dir, e))?;
        let st = Stage::new(&dir, "mean-correlation", mean_key.clone(), vec![csv.clone()]);
        runner.run(&st, || {
            let loaded = maps.iter().map(|(p, _)| read_matrix(p)).collect::<Result<Vec<_>>>()?;
            let mean = mean_correlation_map(&loaded)?;
            write_csv_file(&csv, |f| mean.write_csv(f))
        })?;
        let stem = dir.join("mean_correlation");
        let formats = &cfg.render.formats;
        let st = Stage::new(
            &dir,
            "render-mean",
            KeyHasher::new("render-mean")
                .text("mean", &mean_key)
                .text("render", serde_json::to_string(&cfg.render)?)
                .finish(),
            image_paths(formats, &stem),
        );
        runner.run(&st, || {
            let m = read_matrix(&csv)?;
            let title = if cfg.render.spec.title.is_empty() {
                format!("mean correlation over {} documents", maps.len())
            } else {
                cfg.render.spec.title.clone()
            };
            render_all(formats, &cfg.render.spec.with_title(title), &stem, |s, p| render_heatmap(&m, s, p))
        })?;
        Ok(())
    })();
    summary.records.append(&mut runner.records);
    if let Err(e) = result {
        summary.failures.push((CORPUS_SCOPE.to_string(), e.to_string()));
    }
    Ok(())
}

/// Runs every document with up to `jobs` documents in flight (0 means one
/// per logical CPU) and then the corpus-level stages. Document failures are
/// collected in the summary; only configuration problems return `Err`.
pub fn run_pipeline(cfg: &PipelineConfig, jobs: usize) -> Result<PipelineSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.cache_dir).map_err(|e| Error::write(&cfg.cache_dir, e))?;
    let exec = Execution::default();
    let outcomes = run_documents(cfg, jobs, exec)?;

    let mut summary = PipelineSummary::default();
    for o in &outcomes {
        summary.records.extend(o.records.iter().cloned());
        if let Some(e) = &o.error {
            summary.failures.push((o.id.clone(), e.clone()));
        }
    }
    if !summary.failures.is_empty() {
        emit(
            Level::Warn,
            "pipeline",
            CORPUS_SCOPE,
            format_args!("{} of {} documents failed", summary.failures.len(), outcomes.len()),
        );
    }
    run_corpus(cfg, &outcomes, &mut summary)?;
    Ok(summary)
}

#[cfg(feature = "parallel")]
fn run_documents(cfg: &PipelineConfig, jobs: usize, exec: Execution) -> Result<Vec<DocOutcome>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| cfg.documents.par_iter().map(|p| run_document(cfg, p, exec)).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_documents(cfg: &PipelineConfig, _jobs: usize, exec: Execution) -> Result<Vec<DocOutcome>> {
    Ok(cfg.documents.iter().map(|p| run_document(cfg, p, exec)).collect())
}
