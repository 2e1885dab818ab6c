use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetCurve, ErcCurve, VerificationPair};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct SimilarityRow {
    id_a: String,
    id_b: String,
    mated: u8,
    similarity: f64,
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::Csv(e.into()))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Columns `id_a,id_b,mated,similarity` with `mated` as 0/1.
pub fn write_similarities_csv(pairs: &[VerificationPair], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in pairs {
        out.serialize(SimilarityRow {
            id_a: p.id_a.clone(),
            id_b: p.id_b.clone(),
            mated: u8::from(p.mated),
            similarity: p.similarity,
        })?;
    }
    flush(out)
}

pub fn read_similarities_csv(r: impl Read) -> Result<Vec<VerificationPair>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.deserialize().enumerate() {
        let row: SimilarityRow = rec?;
        if row.mated > 1 {
            return Err(Error::Evaluation(format!("row {}: mated must be 0 or 1", i + 1)));
        }
        out.push(VerificationPair {
            id_a: row.id_a,
            id_b: row.id_b,
            mated: row.mated == 1,
            similarity: row.similarity,
        });
    }
    Ok(out)
}

pub fn save_similarities_csv(pairs: &[VerificationPair], path: &Path) -> Result<()> {
    write_similarities_csv(pairs, create(path)?)
}

pub fn load_similarities_csv(path: &Path) -> Result<Vec<VerificationPair>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_similarities_csv(std::io::BufReader::new(f))
}

#[derive(Serialize)]
struct ErcRow<'a> {
    curve: &'a str,
    fraction: f64,
    fnmr: f64,
    surviving_mated: Option<usize>,
}

/// Long format `curve,fraction,fnmr,surviving_mated`, one row per point.
pub fn write_erc_csv(curves: &[(&str, &ErcCurve)], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (name, c) in curves {
        for (i, (fraction, fnmr)) in c.fractions.iter().zip(&c.fnmr).enumerate() {
            out.serialize(ErcRow {
                curve: name,
                fraction: *fraction,
                fnmr: *fnmr,
                surviving_mated: c.surviving_mated.get(i).copied(),
            })?;
        }
    }
    flush(out)
}

pub fn save_erc_csv(curves: &[(&str, &ErcCurve)], path: &Path) -> Result<()> {
    write_erc_csv(curves, create(path)?)
}

#[derive(Serialize)]
struct DetRow<'a> {
    curve: &'a str,
    threshold: f64,
    fmr: f64,
    fnmr: f64,
}

/// Long format `curve,threshold,fmr,fnmr`.
pub fn write_det_csv(curves: &[(&str, &DetCurve)], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (name, c) in curves {
        for p in &c.points {
            out.serialize(DetRow {
                curve: name,
                threshold: p.threshold,
                fmr: p.fmr,
                fnmr: p.fnmr,
            })?;
        }
    }
    flush(out)
}

pub fn save_det_csv(curves: &[(&str, &DetCurve)], path: &Path) -> Result<()> {
    write_det_csv(curves, create(path)?)
}
