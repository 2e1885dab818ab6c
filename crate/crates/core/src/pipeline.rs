//! Reproducible end-to-end runs driven by one TOML configuration: corpus
//! synthesis, training, scoring and evaluation. Every command writes its
//! outputs below the run's output directory together with a copy of the
//! configuration it ran with.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    bin_by_quality, build_pairs, calibrate_threshold, compute_det_full, compute_erc, eer,
    fraction_grid, load_similarities_csv, pairs_within, perfect_curve, save_det_csv, save_erc_csv,
    save_similarities_csv, Calibration, DefaultComparator, DetCurve, ErcCurve, VerificationPair,
    DEFAULT_EMBED_SIZE,
};
use crate::imaging::{synthesize, DatasetManifest, FaceImage, SynthConfig};
use crate::metrics::SsimParams;
use crate::model::{
    build_discriminator, build_generator, load_checkpoint, save_checkpoint, NetworkSpec,
};
use crate::plot::{Axis, Chart, Series};
use crate::scoring::{
    corpus_items, load_external_scores, load_scores_csv, measure_column, save_scores_csv,
    score_corpus, Measure, ScoreRow, Scorer,
};
use crate::training::{load_anchors, make_training_pairs, train_stage1, train_stage2, TrainingConfig, TrainingLog};
use crate::{Net, Real};

/// Environment variable overriding the configured output root.
pub const OUT_ENV: &str = "RFQ_OUT";
pub const DEFAULT_OUT_DIR: &str = "rfq_out";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointPaths {
    pub generator: Option<PathBuf>,
    pub discriminator: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub batch_size: usize,
    /// Also write each restoration as a PNG under `scores/restorations/`.
    pub dump_restorations: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            dump_restorations: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub target_fnmr: f64,
    pub fractions: Vec<f64>,
    pub n_nonmated_per_image: usize,
    /// Measure used for quality bins (DET); ERC always covers all three.
    pub measure: Measure,
    pub bins: usize,
    pub embed_size: usize,
    /// Principal components fitted on the anchors; 0 keeps raw pixels.
    pub pca_components: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            target_fnmr: 0.10,
            fractions: fraction_grid(0.05, 1.0),
            n_nonmated_per_image: 5,
            measure: Measure::QSsim,
            bins: 3,
            embed_size: DEFAULT_EMBED_SIZE,
            pca_components: 0,
        }
    }
}

/// Run configuration. The top-level `seed` is authoritative and replaces
/// the `seed` keys of the `synth` and `training` blocks. Relative paths are
/// resolved against the directory of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub checkpoints: CheckpointPaths,
    pub synth: SynthConfig,
    pub training: TrainingConfig,
    /// SSIM settings used for the q_ssim score.
    pub ssim: SsimParams,
    pub scoring: ScoringConfig,
    pub evaluation: EvaluationConfig,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    source: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            manifest: None,
            checkpoints: CheckpointPaths::default(),
            synth: SynthConfig::default(),
            training: TrainingConfig::default(),
            ssim: SsimParams::default(),
            scoring: ScoringConfig::default(),
            evaluation: EvaluationConfig::default(),
            base_dir: PathBuf::new(),
            source: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.source = Some(text.to_string());
        cfg.apply_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the run seed and propagates it to every seeded block.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.training.seed = seed;
    }

    pub fn set_out_dir(&mut self, dir: impl Into<PathBuf>) {
        self.out_dir = dir.into();
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.training.validate()?;
        self.ssim.validate()?;
        let e = &self.evaluation;
        if !(e.target_fnmr > 0.0 && e.target_fnmr < 1.0) {
            return Err(Error::Config("evaluation.target_fnmr must be in (0, 1)".into()));
        }
        if e.fractions.is_empty()
            || e.fractions.iter().any(|r| !(0.0..1.0).contains(r))
            || e.fractions.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(
                "evaluation.fractions must be strictly increasing values in [0, 1)".into(),
            ));
        }
        if e.bins == 0 || e.embed_size == 0 || self.scoring.batch_size == 0 {
            return Err(Error::Config("bins, embed_size and batch_size must be positive".into()));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn manifest_path(&self) -> PathBuf {
        match &self.manifest {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("data").join("manifest.json"),
        }
    }

    pub fn generator_path(&self) -> PathBuf {
        match &self.checkpoints.generator {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("checkpoints").join("generator.ckpt"),
        }
    }

    pub fn discriminator_path(&self) -> PathBuf {
        match &self.checkpoints.discriminator {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("checkpoints").join("discriminator.ckpt"),
        }
    }

    pub fn scores_path(&self) -> PathBuf {
        self.out_dir().join("scores").join("scores.csv")
    }

    /// Creates `<out>/<sub>`. The output root receives the configuration
    /// file verbatim (`config.toml`, when loaded from text) and the settings
    /// actually in effect after command-line overrides (`effective.toml`).
    fn prepare(&self, sub: &str) -> Result<PathBuf> {
        let out = self.out_dir();
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let write = |name: &str, text: &str| {
            let path = out.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        if let Some(src) = &self.source {
            write("config.toml", src)?;
        }
        write("effective.toml", &self.to_toml()?)?;
        Ok(dir)
    }
}

pub struct SynthSummary {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    /// False for single-subject corpora, which cannot form non-mated pairs.
    pub nonmated_usable: bool,
}

/// Writes the synthetic corpus next to the configured manifest path.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    cfg.prepare("")?;
    let manifest_path = cfg.manifest_path();
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let corpus = synthesize::<Real>(&cfg.synth)?;
    let manifest = corpus.write(&dir)?;
    if manifest_path.file_name() != Some("manifest.json".as_ref()) {
        manifest.save(&manifest_path)?;
    }
    Ok(SynthSummary {
        nonmated_usable: manifest.subjects.len() >= 2,
        manifest,
        manifest_path,
    })
}

pub struct TrainSummary {
    pub generator: Net,
    pub discriminator: Net,
    pub log: TrainingLog,
}

const DISCRIMINATOR_SEED_OFFSET: u64 = 0x4449_5343;

/// Stage 1 then stage 2 on the configured manifest; writes both checkpoints
/// and `train/training_log.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dir = cfg.prepare("train")?;
    let manifest = DatasetManifest::load(&cfg.manifest_path())?;
    let pairs = make_training_pairs::<Real>(&manifest)?;
    let anchors = load_anchors::<Real>(&manifest)?;
    let g = build_generator::<Real>(NetworkSpec::default_generator(), cfg.seed)?;
    let d = build_discriminator::<Real>(
        NetworkSpec::default_discriminator(),
        cfg.seed ^ DISCRIMINATOR_SEED_OFFSET,
    )?;
    let (g, mut log) = train_stage1(g, &pairs, &cfg.training)?;
    let (g, d, log2) = train_stage2(g, d, &pairs, &anchors, &cfg.training)?;
    log.extend(log2);
    save_checkpoint(&g, &cfg.generator_path())?;
    save_checkpoint(&d, &cfg.discriminator_path())?;
    log.save_csv(&dir.join("training_log.csv"))?;
    Ok(TrainSummary {
        generator: g,
        discriminator: d,
        log,
    })
}

fn load_scorer(cfg: &RunConfig) -> Result<Scorer<Real>> {
    let g = load_checkpoint::<Real>(&cfg.generator_path())?;
    let d = load_checkpoint::<Real>(&cfg.discriminator_path())?;
    Scorer::new(g, d, cfg.ssim)
}

/// Scores `images` (every manifest image when empty) into
/// `scores/scores.csv`. Explicit images are identified by their path as given.
pub fn cmd_score(cfg: &RunConfig, images: &[PathBuf]) -> Result<Vec<ScoreRow>> {
    let scorer = load_scorer(cfg)?;
    let dir = cfg.prepare("scores")?;
    let items = if images.is_empty() {
        corpus_items(&DatasetManifest::load(&cfg.manifest_path())?)
    } else {
        images
            .iter()
            .map(|p| (p.to_string_lossy().into_owned(), p.clone()))
            .collect()
    };
    let dump = cfg.scoring.dump_restorations.then(|| dir.join("restorations"));
    let rows = score_corpus(&scorer, &items, cfg.scoring.batch_size, dump.as_deref())?;
    save_scores_csv(&rows, &dir.join("scores.csv"))?;
    Ok(rows)
}

/// Similarities of the seeded pair protocol under the default comparator.
pub fn default_similarities(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Vec<VerificationPair>> {
    let keys = build_pairs(manifest, cfg.evaluation.n_nonmated_per_image, cfg.seed)?;
    let mut faces: HashMap<String, FaceImage<Real>> = HashMap::new();
    for (id, _) in manifest.images() {
        faces.insert(id.to_string(), FaceImage::load(&manifest.resolve(id))?);
    }
    let mut comparator = DefaultComparator::new(cfg.evaluation.embed_size)?;
    if cfg.evaluation.pca_components > 0 {
        let anchors: Vec<FaceImage<Real>> = manifest
            .subjects
            .iter()
            .map(|s| faces[&s.anchor].clone())
            .collect();
        comparator = comparator.fit_pca(&anchors, cfg.evaluation.pca_components)?;
    }
    comparator.score_pairs(&keys, &faces)
}

fn eval_inputs(
    cfg: &RunConfig,
    scores: Option<&Path>,
    similarities: Option<&Path>,
    dir: &Path,
) -> Result<(Vec<ScoreRow>, Vec<VerificationPair>)> {
    let rows = load_scores_csv(&scores.map(Path::to_path_buf).unwrap_or_else(|| cfg.scores_path()))?;
    let pairs = match similarities {
        Some(p) => load_similarities_csv(p)?,
        None => {
            let manifest = DatasetManifest::load(&cfg.manifest_path())?;
            let pairs = default_similarities(cfg, &manifest)?;
            save_similarities_csv(&pairs, &dir.join("similarities.csv"))?;
            pairs
        }
    };
    Ok((rows, pairs))
}

fn quality_map(values: Vec<(String, f64)>) -> HashMap<String, f64> {
    values.into_iter().collect()
}

pub struct ErcReport {
    pub calibration: Calibration,
    /// Measures, external overlays, then `perfect`.
    pub curves: Vec<(String, ErcCurve)>,
}

/// ERC per quality measure plus external overlays and the PERFECT
/// reference. Writes `erc/erc.csv`, `erc/erc.svg` and `erc/calibration.json`.
pub fn cmd_erc(
    cfg: &RunConfig,
    scores: Option<&Path>,
    similarities: Option<&Path>,
    extra: &[(String, PathBuf)],
) -> Result<ErcReport> {
    let dir = cfg.prepare("erc")?;
    let (rows, pairs) = eval_inputs(cfg, scores, similarities, &dir)?;
    let mated: Vec<f64> = pairs.iter().filter(|p| p.mated).map(|p| p.similarity).collect();
    let calibration = calibrate_threshold(&mated, cfg.evaluation.target_fnmr)?;
    let fractions = &cfg.evaluation.fractions;
    let mut curves = Vec::new();
    for m in Measure::ALL {
        let q = quality_map(measure_column(&rows, m));
        curves.push((m.name().to_string(), compute_erc(&pairs, &q, calibration.threshold, fractions)?));
    }
    for (name, path) in extra {
        let q = quality_map(load_external_scores(path)?);
        curves.push((name.clone(), compute_erc(&pairs, &q, calibration.threshold, fractions)?));
    }
    curves.push(("perfect".into(), perfect_curve(calibration.achieved_fnmr, fractions)?));

    let named: Vec<(&str, &ErcCurve)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
    save_erc_csv(&named, &dir.join("erc.csv"))?;
    let json = dir.join("calibration.json");
    std::fs::write(&json, serde_json::to_string_pretty(&calibration)? + "\n").map_err(|e| Error::io(&json, e))?;
    let y_max = curves
        .iter()
        .flat_map(|(_, c)| c.fnmr.iter().copied())
        .fold(0.0, f64::max)
        .max(0.01)
        * 1.1;
    Chart {
        title: "Error versus reject".into(),
        x_label: "Fraction of images rejected".into(),
        y_label: "FNMR".into(),
        x_axis: Axis::Linear,
        y_axis: Axis::Linear,
        x_range: (0.0, 1.0),
        y_range: (0.0, y_max),
        series: curves
            .iter()
            .map(|(name, c)| Series {
                name: name.clone(),
                points: c.fractions.iter().copied().zip(c.fnmr.iter().copied()).collect(),
                dashed: name == "perfect",
            })
            .collect(),
    }
    .save(&dir.join("erc.svg"))?;
    Ok(ErcReport { calibration, curves })
}

pub struct DetReport {
    /// Quality bins from lowest to highest, then `all`.
    pub curves: Vec<(String, DetCurve)>,
    pub eers: Vec<(String, f64)>,
    pub bin_sizes: Vec<usize>,
}

fn bin_names(k: usize) -> Vec<String> {
    if k == 3 {
        vec!["low".into(), "medium".into(), "high".into()]
    } else {
        (0..k).map(|i| format!("bin{i}")).collect()
    }
}

/// DET curves of quality bins (pairs with both images inside the bin) and
/// of all pairs. Writes `det/det.csv`, one `det/det_<bin>.csv` per curve,
/// `det/eer.csv` and `det/det.svg`.
pub fn cmd_det(cfg: &RunConfig, scores: Option<&Path>, similarities: Option<&Path>) -> Result<DetReport> {
    let dir = cfg.prepare("det")?;
    let (rows, pairs) = eval_inputs(cfg, scores, similarities, &dir)?;
    let q = quality_map(measure_column(&rows, cfg.evaluation.measure));
    let referenced = crate::evaluation::rejection_order(&pairs, &q)?;
    let qualities: Vec<(String, f64)> = referenced.into_iter().map(|id| (id.clone(), q[&id])).collect();
    let bins = bin_by_quality(&qualities, cfg.evaluation.bins)?;
    let mut curves = Vec::new();
    for (name, group) in bin_names(bins.len()).into_iter().zip(&bins) {
        let within = pairs_within(&pairs, group);
        let curve = compute_det_full(&within)
            .map_err(|e| Error::Evaluation(format!("quality bin {name}: {e}")))?;
        curves.push((name, curve));
    }
    curves.push(("all".into(), compute_det_full(&pairs)?));
    let eers = curves
        .iter()
        .map(|(n, c)| Ok((n.clone(), eer(c)?)))
        .collect::<Result<Vec<_>>>()?;

    let named: Vec<(&str, &DetCurve)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
    save_det_csv(&named, &dir.join("det.csv"))?;
    for (n, c) in &named {
        save_det_csv(&[(n, c)], &dir.join(format!("det_{n}.csv")))?;
    }
    let eer_path = dir.join("eer.csv");
    let mut w = csv::Writer::from_path(&eer_path)?;
    w.write_record(["curve", "eer", "images", "mated", "nonmated"])?;
    for (i, ((name, e), (_, c))) in eers.iter().zip(&curves).enumerate() {
        let images = bins.get(i).map_or(qualities.len(), Vec::len);
        w.write_record([name.clone(), e.to_string(), images.to_string(), c.mated.to_string(), c.nonmated.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&eer_path, e))?;
    const FLOOR: f64 = 1e-3;
    Chart {
        title: format!("DET by {} bin", cfg.evaluation.measure.name()),
        x_label: "FMR".into(),
        y_label: "FNMR".into(),
        x_axis: Axis::Log,
        y_axis: Axis::Log,
        x_range: (FLOOR, 1.0),
        y_range: (FLOOR, 1.0),
        series: curves
            .iter()
            .map(|(name, c)| Series {
                name: name.clone(),
                points: c.points.iter().map(|p| (p.fmr.max(FLOOR), p.fnmr.max(FLOOR))).collect(),
                dashed: name == "all",
            })
            .collect(),
    }
    .save(&dir.join("det.svg"))?;
    Ok(DetReport {
        bin_sizes: bins.iter().map(Vec::len).collect(),
        curves,
        eers,
    })
}
