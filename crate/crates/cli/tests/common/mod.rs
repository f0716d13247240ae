#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use serde_json::Value;
use svkit::rng::{self, Rng as ChaRng};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim()).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }

    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "svkit failed: {}", self.stderr);
        self
    }
}

pub fn svkit<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_svkit")).args(args).output().expect("spawn svkit");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn p(path: &Path) -> String {
    path.to_str().expect("utf-8 temp path").to_string()
}

fn gauss(r: &mut ChaRng) -> f64 {
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Synthetic evaluation corpus on disk: two embedding systems with
/// independent noise that shrinks with utterance duration, speaker-labeled
/// metadata and a disjoint imposter cohort.
pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub embeddings: PathBuf,
    pub embeddings_b: PathBuf,
    pub metadata: PathBuf,
    pub cohort: PathBuf,
    pub cohort_size: usize,
}

impl Corpus {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub const DIM: usize = 24;

fn emb_line(out: &mut String, id: &str, v: &[f64]) {
    write!(out, "{id}").unwrap();
    for x in v {
        write!(out, " {}", *x as f32).unwrap();
    }
    out.push('\n');
}

pub fn corpus(seed: u64, n_speakers: usize, per_speaker: usize, cohort_size: usize) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng::seeded(seed);
    let (mut a, mut b, mut c) = (String::new(), String::new(), String::new());
    let mut meta = Vec::new();
    for s in 0..n_speakers {
        let centre: Vec<f64> = (0..DIM).map(|_| gauss(&mut r)).collect();
        for u in 0..per_speaker {
            let id = format!("spk{s:03}-u{u:02}");
            let dur: f64 = r.gen_range(2.0..20.0);
            let snr: f64 = r.gen_range(0.0..30.0);
            let sigma = 3.0 / dur.sqrt();
            let va: Vec<f64> = centre.iter().map(|m| m + sigma * gauss(&mut r)).collect();
            let vb: Vec<f64> = centre.iter().map(|m| m + sigma * gauss(&mut r)).collect();
            emb_line(&mut a, &id, &va);
            emb_line(&mut b, &id, &vb);
            meta.push(serde_json::json!({
                "id": id,
                "duration_seconds": dur,
                "snr_db": snr,
                "speaker": format!("spk{s:03}"),
            }));
        }
    }
    for i in 0..cohort_size {
        let v: Vec<f64> = (0..DIM).map(|_| gauss(&mut r)).collect();
        emb_line(&mut c, &format!("coh{i:04}"), &v);
    }
    let corpus = Corpus {
        embeddings: dir.path().join("emb_a.txt"),
        embeddings_b: dir.path().join("emb_b.txt"),
        metadata: dir.path().join("meta.json"),
        cohort: dir.path().join("cohort.txt"),
        cohort_size,
        dir,
    };
    std::fs::write(&corpus.embeddings, a).unwrap();
    std::fs::write(&corpus.embeddings_b, b).unwrap();
    std::fs::write(&corpus.cohort, c).unwrap();
    std::fs::write(&corpus.metadata, serde_json::to_string_pretty(&meta).unwrap()).unwrap();
    corpus
}

pub fn read_scores(path: &Path) -> Vec<(String, String, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

pub fn read_embeddings(path: &Path) -> Vec<(String, Vec<f32>)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut f = l.split_whitespace();
            let id = f.next().unwrap().to_string();
            (id, f.map(|x| x.parse().unwrap()).collect())
        })
        .collect()
}

pub fn manifest(path: &Path) -> Value {
    let mut name = path.as_os_str().to_os_string();
    name.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(name).unwrap()).unwrap()
}

/// Labeled trials, scores for system A and B and QMFs for a fresh corpus.
pub struct Pipeline {
    pub corpus: Corpus,
    pub trials: PathBuf,
    pub scores_a: PathBuf,
    pub scores_b: PathBuf,
    pub asnorm_a: PathBuf,
    pub qmf: PathBuf,
}

pub fn pipeline(seed: u64, count: usize, top_k: usize) -> Pipeline {
    let corpus = corpus(seed, 30, 10, 60);
    let trials = corpus.path("trials.txt");
    let seed_s = seed.to_string();
    let count_s = count.to_string();
    svkit(&[
        "build-trials",
        "--metadata",
        &p(&corpus.metadata),
        "--count",
        &count_s,
        "--seed",
        &seed_s,
        "--out",
        &p(&trials),
    ])
    .ok();
    let scores_a = corpus.path("scores_a.txt");
    let scores_b = corpus.path("scores_b.txt");
    svkit(&["score", "--embeddings", &p(&corpus.embeddings), "--trials", &p(&trials), "--out", &p(&scores_a)]).ok();
    svkit(&["score", "--embeddings", &p(&corpus.embeddings_b), "--trials", &p(&trials), "--out", &p(&scores_b)]).ok();
    let asnorm_a = corpus.path("asnorm_a.txt");
    let k = top_k.to_string();
    svkit(&[
        "asnorm",
        "--scores",
        &p(&scores_a),
        "--embeddings",
        &p(&corpus.embeddings),
        "--cohort",
        &p(&corpus.cohort),
        "--top-k",
        &k,
        "--out",
        &p(&asnorm_a),
    ])
    .ok();
    let qmf = corpus.path("qmf.jsonl");
    svkit(&["qmf", "--trials", &p(&trials), "--metadata", &p(&corpus.metadata), "--out", &p(&qmf)]).ok();
    Pipeline { corpus, trials, scores_a, scores_b, asnorm_a, qmf }
}
