//! Embeddings, trials, scores and utterance metadata, with their on-disk
//! formats, plus construction of balanced calibration trial lists.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SVE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub values: Vec<f32>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("empty utterance id"));
        }
        if values.is_empty() {
            return Err(Error::invalid(format!("embedding `{id}` has dimension 0")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding `{id}` entry {pos}")));
        }
        Ok(Self { id, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Embeddings keyed by utterance id, all of one dimension, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = Embedding>) -> Result<Self> {
        let mut set = Self::new();
        for (i, rec) in records.into_iter().enumerate() {
            set.push(rec).map_err(|e| Error::Record { record: i + 1, message: e.to_string() })?;
        }
        Ok(set)
    }

    pub fn push(&mut self, emb: Embedding) -> Result<()> {
        if self.records.is_empty() {
            self.dim = emb.dim();
        } else if emb.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: emb.dim() });
        }
        if self.index.contains_key(&emb.id) {
            return Err(Error::DuplicateId(emb.id));
        }
        self.index.insert(emb.id.clone(), self.records.len());
        self.records.push(emb);
        Ok(())
    }

    /// Dimension of the stored vectors, 0 when empty.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Embedding> {
        self.records.iter()
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a Embedding;
    type IntoIter = std::slice::Iter<'a, Embedding>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Binary,
    Text,
}

pub fn parse_embeddings(path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        EmbeddingFormat::Binary => read_embeddings_binary(reader).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        }),
        EmbeddingFormat::Text => read_embeddings_text(reader),
    }
}

pub fn write_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet, format: EmbeddingFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        EmbeddingFormat::Binary => write_embeddings_binary(&mut w, set),
        EmbeddingFormat::Text => write_embeddings_text(&mut w, set),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_embeddings_binary<W: Write>(w: &mut W, set: &EmbeddingSet) -> std::io::Result<()> {
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    for rec in set {
        let id = rec.id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("id `{}` longer than 65535 bytes", rec.id))
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id)?;
        for v in &rec.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_embeddings_text<W: Write>(w: &mut W, set: &EmbeddingSet) -> std::io::Result<()> {
    for rec in set {
        write!(w, "{}", rec.id)?;
        for v in &rec.values {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], record: usize, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Record { record, message: format!("truncated while reading {what}: {e}") })
}

pub fn read_embeddings_binary<R: Read>(mut r: R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, 0, "magic")?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Record { record: 0, message: format!("bad magic {magic:?}, expected \"SVE1\"") });
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut r, &mut word, 0, "count")?;
    let count = u32::from_le_bytes(word) as usize;
    read_exact_or(&mut r, &mut word, 0, "dim")?;
    let dim = u32::from_le_bytes(word) as usize;
    if count > 0 && dim == 0 {
        return Err(Error::Record { record: 0, message: "dimension 0".into() });
    }

    let mut set = EmbeddingSet::new();
    let mut raw = vec![0u8; dim * 4];
    for i in 0..count {
        let record = i + 1;
        let mut len = [0u8; 2];
        read_exact_or(&mut r, &mut len, record, "id length")?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut r, &mut id, record, "id")?;
        let id =
            String::from_utf8(id).map_err(|_| Error::Record { record, message: "id is not valid UTF-8".into() })?;
        read_exact_or(&mut r, &mut raw, record, "values")?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let emb = Embedding::new(id, values).map_err(|e| Error::Record { record, message: e.to_string() })?;
        set.push(emb).map_err(|e| Error::Record { record, message: e.to_string() })?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io("<embeddings>", e))? != 0 {
        return Err(Error::Record { record: count + 1, message: "trailing bytes after last record".into() });
    }
    Ok(set)
}

pub fn read_embeddings_text<R: BufRead>(r: R) -> Result<EmbeddingSet> {
    let mut set = EmbeddingSet::new();
    let mut record = 0;
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        record += 1;
        let values = fields
            .map(|tok| tok.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Record { record, message: format!("bad value: {e}") })?;
        let emb = Embedding::new(id, values).map_err(|e| Error::Record { record, message: e.to_string() })?;
        set.push(emb).map_err(|e| Error::Record { record, message: e.to_string() })?;
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Target,
    Nontarget,
    Unlabeled,
}

impl Label {
    pub fn is_target(self) -> Option<bool> {
        match self {
            Label::Target => Some(true),
            Label::Nontarget => Some(false),
            Label::Unlabeled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Label,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, label: Label) -> Self {
        Self { enroll_id: enroll_id.into(), test_id: test_id.into(), label }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.enroll_id, &self.test_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    trials: Vec<Trial>,
}

impl TrialList {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self { trials }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trial> {
        self.trials.iter()
    }

    pub fn as_slice(&self) -> &[Trial] {
        &self.trials
    }

    pub fn into_inner(self) -> Vec<Trial> {
        self.trials
    }

    /// Boolean target flags; fails if any trial is unlabeled.
    pub fn labels(&self) -> Result<Vec<bool>> {
        self.trials
            .iter()
            .enumerate()
            .map(|(i, t)| t.label.is_target().ok_or_else(|| Error::invalid(format!("trial {} is unlabeled", i + 1))))
            .collect()
    }
}

impl std::ops::Index<usize> for TrialList {
    type Output = Trial;

    fn index(&self, i: usize) -> &Trial {
        &self.trials[i]
    }
}

impl<'a> IntoIterator for &'a TrialList {
    type Item = &'a Trial;
    type IntoIter = std::slice::Iter<'a, Trial>;

    fn into_iter(self) -> Self::IntoIter {
        self.trials.iter()
    }
}

pub fn parse_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trials(BufReader::new(file))
}

pub fn read_trials<R: BufRead>(r: R) -> Result<TrialList> {
    let mut trials = Vec::new();
    let mut arity = None;
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<trials>", e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Line {
                line: line_no,
                message: format!("expected 2 or 3 fields, got {}", fields.len()),
            });
        }
        match arity {
            None => arity = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(Error::Line {
                    line: line_no,
                    message: "labeled and unlabeled trials mixed in one file".into(),
                })
            }
            _ => {}
        }
        let trial = if fields.len() == 3 {
            let label = match fields[0] {
                "1" => Label::Target,
                "0" => Label::Nontarget,
                other => return Err(Error::Line { line: line_no, message: format!("label `{other}` is not 0 or 1") }),
            };
            Trial::new(fields[1], fields[2], label)
        } else {
            Trial::new(fields[0], fields[1], Label::Unlabeled)
        };
        trials.push(trial);
    }
    Ok(TrialList::new(trials))
}

pub fn write_trials(path: impl AsRef<Path>, trials: &TrialList) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        for t in trials {
            match t.label {
                Label::Target => writeln!(w, "1 {} {}", t.enroll_id, t.test_id)?,
                Label::Nontarget => writeln!(w, "0 {} {}", t.enroll_id, t.test_id)?,
                Label::Unlabeled => writeln!(w, "{} {}", t.enroll_id, t.test_id)?,
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub id: String,
    pub duration_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct MetadataSet {
    items: Vec<UtteranceMeta>,
    index: HashMap<String, usize>,
}

impl MetadataSet {
    pub fn new(items: Vec<UtteranceMeta>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, m) in items.iter().enumerate() {
            if m.id.is_empty() {
                return Err(Error::Record { record: i + 1, message: "empty id".into() });
            }
            if !(m.duration_seconds > 0.0 && m.duration_seconds.is_finite()) {
                return Err(Error::Record {
                    record: i + 1,
                    message: format!("duration_seconds must be positive, got {}", m.duration_seconds),
                });
            }
            if index.insert(m.id.clone(), i).is_some() {
                return Err(Error::Record { record: i + 1, message: format!("duplicate id `{}`", m.id) });
            }
        }
        Ok(Self { items, index })
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceMeta> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn items(&self) -> &[UtteranceMeta] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn parse_metadata(path: impl AsRef<Path>) -> Result<MetadataSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let items: Vec<UtteranceMeta> = serde_json::from_reader(BufReader::new(file))?;
    MetadataSet::new(items)
}

pub fn write_metadata(path: impl AsRef<Path>, meta: &MetadataSet) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(meta.items())?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Per-trial scores for one or more systems, rows aligned with `trials`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    trials: TrialList,
    n_systems: usize,
    scores: Vec<f64>,
}

impl ScoreSet {
    /// `scores` is row-major, `trials.len() × n_systems`.
    pub fn new(trials: TrialList, n_systems: usize, scores: Vec<f64>) -> Result<Self> {
        if n_systems == 0 {
            return Err(Error::invalid("score set needs at least one system"));
        }
        if scores.len() != trials.len() * n_systems {
            return Err(Error::invalid(format!(
                "{} scores for {} trials × {} systems",
                scores.len(),
                trials.len(),
                n_systems
            )));
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "score for trial {}, system {}",
                pos / n_systems + 1,
                pos % n_systems
            )));
        }
        Ok(Self { trials, n_systems, scores })
    }

    pub fn single(trials: TrialList, scores: Vec<f64>) -> Result<Self> {
        Self::new(trials, 1, scores)
    }

    /// Joins per-system `(enroll, test, score)` lists onto `trials`. Every
    /// system must score every trial.
    pub fn from_systems(trials: TrialList, systems: &[Vec<(String, String, f64)>]) -> Result<Self> {
        let n = systems.len();
        let mut scores = vec![0.0; trials.len() * n];
        for (j, sys) in systems.iter().enumerate() {
            let lookup: HashMap<(&str, &str), f64> =
                sys.iter().map(|(e, t, s)| ((e.as_str(), t.as_str()), *s)).collect();
            for (i, trial) in trials.iter().enumerate() {
                let s = lookup.get(&trial.key()).ok_or_else(|| {
                    Error::invalid(format!(
                        "system {j} has no score for trial {} ({} {})",
                        i + 1,
                        trial.enroll_id,
                        trial.test_id
                    ))
                })?;
                scores[i * n + j] = *s;
            }
        }
        Self::new(trials, n, scores)
    }

    pub fn trials(&self) -> &TrialList {
        &self.trials
    }

    pub fn n_systems(&self) -> usize {
        self.n_systems
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n_systems..(i + 1) * self.n_systems]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.scores.iter().skip(j).step_by(self.n_systems).copied().collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }
}

pub fn parse_score_file(path: impl AsRef<Path>) -> Result<Vec<(String, String, f64)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(BufReader::new(file))
}

pub fn read_scores<R: BufRead>(r: R) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<scores>", e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Line { line: i + 1, message };
        if fields.len() != 3 {
            return Err(bad(format!("expected `enroll test score`, got {} fields", fields.len())));
        }
        let score: f64 = fields[2].parse().map_err(|e| bad(format!("bad score: {e}")))?;
        if !score.is_finite() {
            return Err(bad("non-finite score".into()));
        }
        out.push((fields[0].to_string(), fields[1].to_string(), score));
    }
    Ok(out)
}

/// Writes one system column in `enroll test score` form.
pub fn write_score_file(path: impl AsRef<Path>, trials: &TrialList, scores: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if scores.len() != trials.len() {
        return Err(Error::invalid(format!("{} scores for {} trials", scores.len(), trials.len())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        for (t, s) in trials.iter().zip(scores) {
            writeln!(w, "{} {} {}", t.enroll_id, t.test_id, s)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Samples `count` distinct labeled trials from a speaker-labeled population:
/// `⌈count/2⌉` same-speaker pairs of distinct utterances and `⌊count/2⌋`
/// cross-speaker pairs, uniformly and without repeating an `(enroll, test)`
/// pair. The result is shuffled and depends only on the population and `seed`.
pub fn build_calibration_trials(meta: &MetadataSet, count: usize, seed: u64) -> Result<TrialList> {
    if count < 2 {
        return Err(Error::invalid("calibration trial count must be at least 2"));
    }
    let mut by_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for m in meta.items() {
        let spk =
            m.speaker.as_deref().ok_or_else(|| Error::invalid(format!("utterance `{}` has no speaker label", m.id)))?;
        by_speaker.entry(spk).or_default().push(&m.id);
    }
    for utts in by_speaker.values_mut() {
        utts.sort_unstable();
    }
    if by_speaker.len() < 2 {
        return Err(Error::invalid("need at least two speakers"));
    }
    let speakers: Vec<(&str, Vec<&str>)> = by_speaker.into_iter().collect();

    let total: u128 = speakers.iter().map(|(_, u)| u.len() as u128).sum();
    let same_capacity: u128 = speakers.iter().map(|(_, u)| (u.len() as u128) * (u.len() as u128 - 1)).sum();
    let cross_capacity: u128 = total * total - speakers.iter().map(|(_, u)| (u.len() as u128).pow(2)).sum::<u128>();

    let n_target = count.div_ceil(2);
    let n_nontarget = count / 2;
    if n_target as u128 > same_capacity {
        return Err(Error::invalid(format!(
            "{n_target} target trials requested but only {same_capacity} distinct same-speaker pairs exist"
        )));
    }
    if n_nontarget as u128 > cross_capacity {
        return Err(Error::invalid(format!(
            "{n_nontarget} nontarget trials requested but only {cross_capacity} distinct cross-speaker pairs exist"
        )));
    }

    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(count);

    // Flat utterance table for cross-speaker draws.
    let flat: Vec<(usize, &str)> =
        speakers.iter().enumerate().flat_map(|(s, (_, utts))| utts.iter().map(move |u| (s, *u))).collect();

    // Cumulative same-speaker pair counts for speaker selection.
    let cumulative: Vec<u128> = speakers
        .iter()
        .scan(0u128, |acc, (_, u)| {
            *acc += (u.len() as u128) * (u.len() as u128).saturating_sub(1);
            Some(*acc)
        })
        .collect();

    let mut seen: HashSet<(&str, &str)> = HashSet::with_capacity(count);

    // Dense requests are served by enumerating and shuffling instead of rejection.
    if (n_target as u128) * 2 > same_capacity {
        let mut all: Vec<(&str, &str)> = speakers
            .iter()
            .flat_map(|(_, utts)| {
                utts.iter().flat_map(move |a| utts.iter().filter(move |b| *b != a).map(move |b| (*a, *b)))
            })
            .collect();
        let (picked, _) = all.partial_shuffle(&mut rng, n_target);
        for &(a, b) in picked.iter() {
            out.push(Trial::new(a, b, Label::Target));
        }
    } else {
        while seen.len() < n_target {
            let r = rng.gen_range(0..same_capacity);
            let s = cumulative.partition_point(|&c| c <= r);
            let utts = &speakers[s].1;
            let a = rng.gen_range(0..utts.len());
            let mut b = rng.gen_range(0..utts.len() - 1);
            if b >= a {
                b += 1;
            }
            if seen.insert((utts[a], utts[b])) {
                out.push(Trial::new(utts[a], utts[b], Label::Target));
            }
        }
    }

    seen.clear();
    if (n_nontarget as u128) * 2 > cross_capacity {
        let mut all: Vec<(&str, &str)> = flat
            .iter()
            .flat_map(|&(sa, a)| flat.iter().filter(move |(sb, _)| *sb != sa).map(move |&(_, b)| (a, b)))
            .collect();
        let (picked, _) = all.partial_shuffle(&mut rng, n_nontarget);
        for &(a, b) in picked.iter() {
            out.push(Trial::new(a, b, Label::Nontarget));
        }
    } else {
        while seen.len() < n_nontarget {
            let (sa, a) = flat[rng.gen_range(0..flat.len())];
            let (sb, b) = flat[rng.gen_range(0..flat.len())];
            if sa != sb && seen.insert((a, b)) {
                out.push(Trial::new(a, b, Label::Nontarget));
            }
        }
    }

    out.shuffle(&mut rng);
    Ok(TrialList::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn meta(id: &str, spk: &str) -> UtteranceMeta {
        UtteranceMeta { id: id.into(), duration_seconds: 1.0, snr_db: None, speaker: Some(spk.into()) }
    }

    #[test]
    fn single_record_text() {
        let set = read_embeddings_text(Cursor::new("u1 1 0 0\n")).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.dim(), 3);
        assert_eq!(set.get("u1").unwrap().values, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn text_dimension_mismatch_reports_record_two() {
        let err = read_embeddings_text(Cursor::new("a 1 2 3\nb 1 2\n")).unwrap_err();
        match err {
            Error::Record { record, message } => {
                assert_eq!(record, 2);
                assert!(message.contains("dimension"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = read_embeddings_text(Cursor::new("a 1 2\na 3 4\n")).unwrap_err();
        assert!(matches!(err, Error::Record { record: 2, .. }));
    }

    #[test]
    fn malformed_value_is_rejected() {
        let err = read_embeddings_text(Cursor::new("a 1 x\n")).unwrap_err();
        assert!(matches!(err, Error::Record { record: 1, .. }));
    }

    #[test]
    fn binary_layout_is_exact() {
        let set = EmbeddingSet::from_records([Embedding::new("ab", vec![1.0, -2.0]).unwrap()]).unwrap();
        let mut buf = Vec::new();
        write_embeddings_binary(&mut buf, &set).unwrap();
        let mut expected = b"SVE1".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(2u16.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn binary_truncation_and_bad_magic() {
        assert!(read_embeddings_binary(Cursor::new(b"XXXX".to_vec())).is_err());
        let set = EmbeddingSet::from_records([Embedding::new("ab", vec![1.0, -2.0]).unwrap()]).unwrap();
        let mut buf = Vec::new();
        write_embeddings_binary(&mut buf, &set).unwrap();
        buf.pop();
        assert!(matches!(read_embeddings_binary(Cursor::new(buf)).unwrap_err(), Error::Record { record: 1, .. }));
    }

    #[test]
    fn trial_lines() {
        let t = read_trials(Cursor::new("1 a.wav b.wav\n0 a.wav c.wav\n")).unwrap();
        assert_eq!(t[0], Trial::new("a.wav", "b.wav", Label::Target));
        assert_eq!(t[1].label, Label::Nontarget);

        let t = read_trials(Cursor::new("a.wav b.wav\n")).unwrap();
        assert_eq!(t[0], Trial::new("a.wav", "b.wav", Label::Unlabeled));
    }

    #[test]
    fn trial_label_error_at_line_one() {
        let err = read_trials(Cursor::new("2 a b\n")).unwrap_err();
        assert!(matches!(err, Error::Line { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn trial_mixed_arity_rejected() {
        let err = read_trials(Cursor::new("1 a b\nc d\n")).unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn metadata_validation() {
        let mut bad = meta("a", "s");
        bad.duration_seconds = 0.0;
        assert!(MetadataSet::new(vec![bad]).is_err());
        assert!(MetadataSet::new(vec![meta("a", "s"), meta("a", "t")]).is_err());
        let json =
            r#"[{"id":"x","duration_seconds":2.5,"snr_db":12.0,"speaker":"s1"},{"id":"y","duration_seconds":1.0}]"#;
        let items: Vec<UtteranceMeta> = serde_json::from_str(json).unwrap();
        let set = MetadataSet::new(items).unwrap();
        assert_eq!(set.get("x").unwrap().snr_db, Some(12.0));
        assert_eq!(set.get("y").unwrap().speaker, None);
    }

    #[test]
    fn score_set_alignment() {
        let trials = TrialList::new(vec![Trial::new("a", "b", Label::Target), Trial::new("a", "c", Label::Nontarget)]);
        let sys1 = vec![("a".into(), "c".into(), 0.1), ("a".into(), "b".into(), 0.9)];
        let sys2 = vec![("a".into(), "b".into(), 2.0), ("a".into(), "c".into(), -1.0)];
        let set = ScoreSet::from_systems(trials.clone(), &[sys1.clone(), sys2]).unwrap();
        assert_eq!(set.row(0), &[0.9, 2.0]);
        assert_eq!(set.column(1), vec![2.0, -1.0]);

        let short = vec![("a".into(), "b".into(), 0.9)];
        assert!(ScoreSet::from_systems(trials, &[sys1, short]).is_err());
    }

    #[test]
    fn calibration_trials_tiny_population() {
        let m = MetadataSet::new(vec![meta("a1", "A"), meta("a2", "A"), meta("b1", "B"), meta("b2", "B")]).unwrap();
        let trials = build_calibration_trials(&m, 4, 3).unwrap();
        let labels = trials.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&t| t).count(), 2);
        assert_eq!(labels.iter().filter(|&&t| !t).count(), 2);
        assert_eq!(trials, build_calibration_trials(&m, 4, 3).unwrap());
    }

    #[test]
    fn calibration_trials_odd_count_and_capacity() {
        let m = MetadataSet::new(vec![meta("a1", "A"), meta("a2", "A"), meta("b1", "B")]).unwrap();
        // 2 ordered same-speaker pairs, 4 cross pairs.
        let t = build_calibration_trials(&m, 3, 0).unwrap();
        assert_eq!(t.labels().unwrap().iter().filter(|&&x| x).count(), 2);
        assert!(build_calibration_trials(&m, 5, 0).is_err());
        let one = MetadataSet::new(vec![meta("a1", "A"), meta("a2", "A")]).unwrap();
        assert!(build_calibration_trials(&one, 2, 0).is_err());
    }
}
