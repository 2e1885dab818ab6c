//! Restoration-based quality measures: each face is restored by the
//! generator and compared with its restoration.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DatasetManifest, FaceImage, Provenance};
use crate::metrics::{mse, ssim, SsimParams};
use crate::model::{Mode, Network, Role, Tensor};
use crate::Scalar;

/// Scores of one image. All three measures grow with estimated quality.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport<T> {
    pub q_mse: T,
    pub q_ssim: T,
    pub q_disc: T,
    pub restored: FaceImage<T>,
}

impl<T: Scalar> QualityReport<T> {
    pub fn scores(&self) -> QualityScores {
        QualityScores {
            q_mse: self.q_mse.to_f64_lossy(),
            q_ssim: self.q_ssim.to_f64_lossy(),
            q_disc: self.q_disc.to_f64_lossy(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub q_mse: f64,
    pub q_ssim: f64,
    pub q_disc: f64,
}

/// Name of one of the three measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    QMse,
    QSsim,
    QDisc,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::QMse, Measure::QSsim, Measure::QDisc];

    pub fn name(self) -> &'static str {
        match self {
            Measure::QMse => "q_mse",
            Measure::QSsim => "q_ssim",
            Measure::QDisc => "q_disc",
        }
    }

    pub fn of(self, s: &QualityScores) -> f64 {
        match self {
            Measure::QMse => s.q_mse,
            Measure::QSsim => s.q_ssim,
            Measure::QDisc => s.q_disc,
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown quality measure {s:?}")))
    }
}

/// Generator/discriminator pair used for scoring, checked once up front.
#[derive(Clone, Debug)]
pub struct Scorer<T> {
    g: Network<T>,
    d: Network<T>,
    ssim: SsimParams,
}

impl<T: Scalar> Scorer<T> {
    pub fn new(g: Network<T>, d: Network<T>, ssim: SsimParams) -> Result<Self> {
        ssim.validate()?;
        for (net, role) in [(&g, Role::Generator), (&d, Role::Discriminator)] {
            if net.role() != role {
                return Err(Error::InvalidParameter(format!("expected a {role:?} network")));
            }
            if !net.params().all_finite() {
                return Err(Error::CorruptCheckpoint(format!("{role:?} has non-finite parameters")));
            }
        }
        Ok(Self { g, d, ssim })
    }

    pub fn generator(&self) -> &Network<T> {
        &self.g
    }

    pub fn discriminator(&self) -> &Network<T> {
        &self.d
    }

    pub fn ssim_params(&self) -> &SsimParams {
        &self.ssim
    }

    pub fn restore(&self, faces: &[FaceImage<T>]) -> Result<Vec<FaceImage<T>>> {
        restore(&self.g, faces)
    }

    pub fn score(&self, face: &FaceImage<T>) -> Result<QualityReport<T>> {
        Ok(self.score_batch(std::slice::from_ref(face))?.remove(0))
    }

    /// Scores a batch with one generator and one discriminator pass.
    pub fn score_batch(&self, faces: &[FaceImage<T>]) -> Result<Vec<QualityReport<T>>> {
        if faces.is_empty() {
            return Ok(Vec::new());
        }
        let restored = self.restore(faces)?;
        let input = Tensor::from_faces(&restored)?;
        let disc = self.d.forward(&input, Mode::Eval, false)?.output.data;
        faces
            .iter()
            .zip(restored)
            .zip(disc)
            .map(|((face, restored), q_disc)| {
                Ok(QualityReport {
                    q_mse: T::one() - mse(face, &restored)?,
                    q_ssim: ssim(face, &restored, &self.ssim)?,
                    q_disc,
                    restored,
                })
            })
            .collect()
    }
}

/// Eval-mode generator pass; output order follows input order.
pub fn restore<T: Scalar>(g: &Network<T>, faces: &[FaceImage<T>]) -> Result<Vec<FaceImage<T>>> {
    if g.role() != Role::Generator {
        return Err(Error::InvalidParameter("restore needs a generator".into()));
    }
    if faces.is_empty() {
        return Ok(Vec::new());
    }
    let out = g.forward(&Tensor::from_faces(faces)?, Mode::Eval, false)?.output;
    out.to_faces(Provenance::Restored)
}

pub fn score_quality<T: Scalar>(
    g: &Network<T>,
    d: &Network<T>,
    face: &FaceImage<T>,
    ssim: &SsimParams,
) -> Result<QualityReport<T>> {
    Scorer::new(g.clone(), d.clone(), *ssim)?.score(face)
}

/// One row of a corpus score table: scores or the reason the image failed.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub image_id: String,
    pub outcome: std::result::Result<QualityScores, String>,
}

/// `(image_id, path)` for every manifest image, in manifest order.
pub fn corpus_items(manifest: &DatasetManifest) -> Vec<(String, PathBuf)> {
    manifest
        .images()
        .into_iter()
        .map(|(id, _)| (id.to_string(), manifest.resolve(id)))
        .collect()
}

/// Scores items in order. Unreadable images become error rows; model
/// failures abort. With `dump_dir`, each restoration is written to
/// `<dump_dir>/<image_id>.png`.
pub fn score_corpus<T: Scalar>(
    scorer: &Scorer<T>,
    items: &[(String, PathBuf)],
    batch_size: usize,
    dump_dir: Option<&Path>,
) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        let loaded: Vec<_> = chunk.iter().map(|(_, p)| FaceImage::<T>::load(p)).collect();
        let faces: Vec<FaceImage<T>> = loaded.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let mut reports = scorer.score_batch(&faces)?.into_iter();
        for ((id, _), face) in chunk.iter().zip(loaded) {
            let outcome = match face {
                Ok(_) => {
                    let report = reports.next().expect("one report per loaded face");
                    if let Some(dir) = dump_dir {
                        report.restored.save_png(&dir.join(format!("{id}.png")))?;
                    }
                    Ok(report.scores())
                }
                Err(e) => Err(e.to_string()),
            };
            rows.push(ScoreRow {
                image_id: id.clone(),
                outcome,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    image_id: String,
    q_mse: Option<f64>,
    q_ssim: Option<f64>,
    q_disc: Option<f64>,
    error: String,
}

/// Columns `image_id,q_mse,q_ssim,q_disc,error`; error rows leave the
/// score columns empty.
pub fn write_scores_csv(rows: &[ScoreRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        let row = match &r.outcome {
            Ok(s) => CsvRow {
                image_id: r.image_id.clone(),
                q_mse: Some(s.q_mse),
                q_ssim: Some(s.q_ssim),
                q_disc: Some(s.q_disc),
                error: String::new(),
            },
            Err(e) => CsvRow {
                image_id: r.image_id.clone(),
                q_mse: None,
                q_ssim: None,
                q_disc: None,
                error: e.clone(),
            },
        };
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_scores_csv(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores_csv(rows, std::io::BufWriter::new(f))
}

/// Reads a score table. The `error` column is optional, so plain
/// `image_id,q_mse,q_ssim,q_disc` files from other tools are accepted.
pub fn read_scores_csv(r: impl Read) -> Result<Vec<ScoreRow>> {
    #[derive(Deserialize)]
    struct InRow {
        image_id: String,
        q_mse: Option<f64>,
        q_ssim: Option<f64>,
        q_disc: Option<f64>,
        #[serde(default)]
        error: Option<String>,
    }
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        let row: InRow = rec?;
        let error = row.error.filter(|e| !e.is_empty());
        let outcome = match (error, row.q_mse, row.q_ssim, row.q_disc) {
            (None, Some(q_mse), Some(q_ssim), Some(q_disc)) => Ok(QualityScores { q_mse, q_ssim, q_disc }),
            (Some(e), ..) => Err(e),
            (None, ..) => Err("missing score values".to_string()),
        };
        rows.push(ScoreRow {
            image_id: row.image_id,
            outcome,
        });
    }
    Ok(rows)
}

pub fn load_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores_csv(std::io::BufReader::new(f))
}

/// Reads a single-measure score file `image_id,<column>` as produced by an
/// external quality method.
pub fn load_external_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::Reader::from_reader(std::io::BufReader::new(f));
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "{}: expected image_id and a score column",
                path.display()
            )));
        }
        let v: f64 = rec[1].trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("{}: bad score {:?} for {}", path.display(), &rec[1], &rec[0]))
        })?;
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

/// Successful rows projected onto one measure.
pub fn measure_column(rows: &[ScoreRow], m: Measure) -> Vec<(String, f64)> {
    rows.iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|s| (r.image_id.clone(), m.of(s))))
        .collect()
}
