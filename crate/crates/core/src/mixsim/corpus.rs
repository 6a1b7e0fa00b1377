use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::mix::generate_example;
use super::render::SpeakerPool;
use super::{residual_noise, CorpusConfig, MixError, MixMeta, MixtureExample};
use crate::dsp::{read_wav, write_wav};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Eval => 3,
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<MixtureExample>,
    pub dev: Vec<MixtureExample>,
    pub eval: Vec<MixtureExample>,
}

impl Corpus {
    /// Generates every split in memory (no quantisation).
    pub fn generate(cfg: &CorpusConfig, n_train: usize, n_dev: usize, n_eval: usize) -> Result<Self, MixError> {
        cfg.validate()?;
        let pool = SpeakerPool::new(cfg);
        let make = |split, n: usize| (0..n as u64).map(|i| generate_example(cfg, &pool, split, i)).collect::<Result<Vec<_>, _>>();
        Ok(Self {
            config: cfg.clone(),
            train: make(Split::Train, n_train)?,
            dev: make(Split::Dev, n_dev)?,
            eval: make(Split::Eval, n_eval)?,
        })
    }

    pub fn split(&self, split: Split) -> &[MixtureExample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<MixtureExample> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Eval => &mut self.eval,
        }
    }

    /// Every example as it reads back after a 16-bit round trip.
    pub fn quantized(&self) -> Corpus {
        let q = |v: &[MixtureExample]| v.iter().map(MixtureExample::quantized).collect();
        Corpus { config: self.config.clone(), train: q(&self.train), dev: q(&self.dev), eval: q(&self.eval) }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MixError + '_ {
    move |source| MixError::Io { path: path.to_path_buf(), source }
}

fn write_text(path: &Path, text: &str) -> Result<(), MixError> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, MixError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Generates and writes a corpus; returns the in-memory (unquantised) data.
pub fn write_corpus(dir: &Path, n_train: usize, n_dev: usize, n_eval: usize, cfg: &CorpusConfig) -> Result<Corpus, MixError> {
    let corpus = Corpus::generate(cfg, n_train, n_dev, n_eval)?;
    write_corpus_data(dir, &corpus)?;
    Ok(corpus)
}

pub fn write_corpus_data(dir: &Path, corpus: &Corpus) -> Result<(), MixError> {
    let mut manifest = String::new();
    let mut conf = String::new();
    for (k, v) in corpus.config.to_kv() {
        writeln!(conf, "{k} = {v}").unwrap();
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_text(&dir.join("corpus.conf"), &conf)?;
    for split in Split::ALL {
        let sdir = dir.join(split.name());
        fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
        for ex in corpus.split(split) {
            writeln!(manifest, "{} {}", split.name(), ex.id).unwrap();
            write_wav(&sdir.join(format!("{}_mix.wav", ex.id)), &ex.mixture)?;
            for (s, r) in ex.references.iter().enumerate() {
                write_wav(&sdir.join(format!("{}_ref{s}.wav", ex.id)), r)?;
            }
            let line = |l: &[usize]| l.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
            write_text(
                &sdir.join(format!("{}.labels", ex.id)),
                &format!("{}\n{}\n", line(&ex.frame_labels[0]), line(&ex.frame_labels[1])),
            )?;
            write_text(
                &sdir.join(format!("{}.meta", ex.id)),
                &format!(
                    "snr_db={}\nt60_s={}\nseed={}\nspeakers={},{}\n",
                    ex.meta.snr_db, ex.meta.t60_s, ex.meta.seed, ex.speakers[0], ex.speakers[1]
                ),
            )?;
        }
    }
    write_text(&dir.join("manifest.txt"), &manifest)
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> MixError {
    MixError::Parse { path: path.to_path_buf(), line, detail: detail.into() }
}

fn read_config(path: &Path) -> Result<CorpusConfig, MixError> {
    let mut cfg = CorpusConfig::default();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(path, i + 1, "expected key = value"))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| parse_err(path, i + 1, e))?;
    }
    Ok(cfg)
}

fn read_labels(path: &Path) -> Result<[Vec<usize>; 2], MixError> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let mut next = |n: usize| -> Result<Vec<usize>, MixError> {
        let line = lines.next().ok_or_else(|| parse_err(path, n, "missing label line"))?;
        line.split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(path, n, format!("bad label `{t}`"))))
            .collect()
    };
    Ok([next(1)?, next(2)?])
}

fn read_meta(path: &Path) -> Result<(MixMeta, [usize; 2]), MixError> {
    let mut meta = MixMeta { snr_db: f64::NAN, t60_s: f64::NAN, seed: 0 };
    let mut speakers = [0, 0];
    let mut seen = 0;
    for (i, line) in read_text(path)?.lines().enumerate() {
        let bad = |d: &str| parse_err(path, i + 1, d.to_string());
        let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        match k {
            "snr_db" => meta.snr_db = v.parse().map_err(|_| bad("bad snr_db"))?,
            "t60_s" => meta.t60_s = v.parse().map_err(|_| bad("bad t60_s"))?,
            "seed" => meta.seed = v.parse().map_err(|_| bad("bad seed"))?,
            "speakers" => {
                let (a, b) = v.split_once(',').ok_or_else(|| bad("bad speakers"))?;
                speakers = [a.parse().map_err(|_| bad("bad speakers"))?, b.parse().map_err(|_| bad("bad speakers"))?];
            }
            _ => return Err(bad(&format!("unknown key `{k}`"))),
        }
        seen += 1;
    }
    if seen != 4 {
        return Err(parse_err(path, 0, "expected snr_db, t60_s, seed and speakers"));
    }
    Ok((meta, speakers))
}

/// Inverse of [`write_corpus_data`]; returns the quantised corpus.
pub fn read_corpus(dir: &Path) -> Result<Corpus, MixError> {
    let config = read_config(&dir.join("corpus.conf"))?;
    let mut corpus = Corpus { config, train: vec![], dev: vec![], eval: vec![] };
    let manifest_path: PathBuf = dir.join("manifest.txt");
    for (i, line) in read_text(&manifest_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (split, id) = line
            .split_once(' ')
            .and_then(|(s, id)| Some((Split::parse(s)?, id.to_string())))
            .ok_or_else(|| parse_err(&manifest_path, i + 1, "expected `<split> <id>`"))?;
        let sdir = dir.join(split.name());
        let mixture = read_wav(&sdir.join(format!("{id}_mix.wav")))?;
        let references = [read_wav(&sdir.join(format!("{id}_ref0.wav")))?, read_wav(&sdir.join(format!("{id}_ref1.wav")))?];
        if references.iter().any(|r| r.len() != mixture.len()) {
            return Err(parse_err(&sdir.join(format!("{id}_ref0.wav")), 0, "reference length differs from mixture"));
        }
        let frame_labels = read_labels(&sdir.join(format!("{id}.labels")))?;
        let (meta, speakers) = read_meta(&sdir.join(format!("{id}.meta")))?;
        let noise = residual_noise(&mixture, &references);
        corpus.split_mut(split).push(MixtureExample { id, mixture, references, noise, frame_labels, speakers, meta });
    }
    Ok(corpus)
}
