//! File loaders shared by the subcommands.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use svkit::qmf::{QmfVector, QMF_LEN};
use svkit::trialdata::{
    parse_embeddings, parse_score_file, EmbeddingFormat, EmbeddingSet, Label, ScoreSet, Trial, TrialList,
    EMBEDDING_MAGIC,
};

use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

/// Picks the binary format when the file starts with the binary magic.
pub fn detect_format(path: &Path) -> Result<EmbeddingFormat, CliError> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut magic = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match file.read(&mut magic[filled..]).map_err(|e| io_err(path, e))? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(if filled == 4 && &magic == EMBEDDING_MAGIC { EmbeddingFormat::Binary } else { EmbeddingFormat::Text })
}

pub fn embeddings(path: &Path, format: Option<EmbeddingFormat>) -> Result<EmbeddingSet, CliError> {
    let format = match format {
        Some(f) => f,
        None => detect_format(path)?,
    };
    Ok(parse_embeddings(path, format)?)
}

/// A score file as a single-system set over unlabeled trials, in file order.
pub fn score_file(path: &Path) -> Result<ScoreSet, CliError> {
    let rows = parse_score_file(path)?;
    let mut trials = Vec::with_capacity(rows.len());
    let mut scores = Vec::with_capacity(rows.len());
    for (e, t, s) in rows {
        trials.push(Trial::new(e, t, Label::Unlabeled));
        scores.push(s);
    }
    Ok(ScoreSet::single(TrialList::new(trials), scores)?)
}

/// Score files joined onto `trials`, one column per file.
pub fn systems(trials: TrialList, paths: &[impl AsRef<Path>]) -> Result<ScoreSet, CliError> {
    let systems = paths.iter().map(|p| parse_score_file(p.as_ref())).collect::<svkit::Result<Vec<_>>>()?;
    Ok(ScoreSet::from_systems(trials, &systems)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QmfRecord {
    pub enroll: String,
    pub test: String,
    pub q: [f64; QMF_LEN],
}

pub fn write_qmf(path: &Path, trials: &TrialList, qmfs: &[QmfVector]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for (t, q) in trials.iter().zip(qmfs) {
        let rec = QmfRecord { enroll: t.enroll_id.clone(), test: t.test_id.clone(), q: q.0 };
        let line = serde_json::to_string(&rec).map_err(|e| CliError::data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// QMF lines joined onto `trials` by (enroll, test).
pub fn read_qmf(path: &Path, trials: &TrialList) -> Result<Vec<QmfVector>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lookup = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QmfRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if rec.q.iter().any(|v| !v.is_finite()) {
            return Err(CliError::data(format!("{} line {}: non-finite QMF value", path.display(), i + 1)));
        }
        lookup.insert((rec.enroll, rec.test), QmfVector(rec.q));
    }
    trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            lookup.get(&(t.enroll_id.clone(), t.test_id.clone())).copied().ok_or_else(|| {
                CliError::data(format!(
                    "trial {}: no QMF vector for ({} {}) in {}",
                    i + 1,
                    t.enroll_id,
                    t.test_id,
                    path.display()
                ))
            })
        })
        .collect()
}

/// Non-empty, trimmed lines.
pub fn id_list(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}
