//! Versioned binary model files.
//!
//! Layout: magic `HMDB`, format version, model tag, then fixed-order
//! little-endian sections. Serialization is deterministic (equal models
//! produce identical bytes). Codebook centroids are stored as f32 so a
//! trained Markov signature stays a few kilobytes; everything that enters
//! log-probability or kernel arithmetic directly stays f64.

use std::fs;
use std::path::Path;

use crate::baseline::{BaselineConfig, BaselineModel};
use crate::bow::BowModel;
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Wavelet};
use crate::markov::{MarkovConfig, MarkovModel};
use crate::ocsvm::OcSvmModel;
use crate::pipeline::PipelineFit;
use crate::preprocess::{PowerTransform, PreprocessConfig};
use crate::supervised::{Node, RandomForestConfig, RandomForestModel, Tree};

const MAGIC: &[u8; 4] = b"HMDB";
const FORMAT_VERSION: u16 = 1;

const TAG_MARKOV: u8 = 1;
const TAG_BOW: u8 = 2;
const TAG_BASELINE: u8 = 3;
const TAG_RF: u8 = 4;

/// Markov detector bundle: fitted front end plus the trained chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovBundle {
    pub pipeline: PipelineFit,
    pub model: MarkovModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowBundle {
    pub pipeline: PipelineFit,
    pub model: BowModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBundle {
    pub model: BaselineModel,
}

/// Random-forest bundle; features are bag-of-words histograms, so the
/// codebook and TTD ride along.
#[derive(Debug, Clone, PartialEq)]
pub struct RfBundle {
    pub pipeline: PipelineFit,
    pub codebook: Codebook,
    pub ttd_ms: f64,
    pub model: RandomForestModel,
    /// Malicious-probability threshold used for flagging.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Markov(MarkovBundle),
    Bow(BowBundle),
    Baseline(BaselineBundle),
    Rf(RfBundle),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Markov(_) => "markov",
            ModelFile::Bow(_) => "bow",
            ModelFile::Baseline(_) => "baseline",
            ModelFile::Rf(_) => "rf",
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ModelFormat("truncated model file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn bool(&mut self) -> Result<bool> {
        Ok(self.u8()? != 0)
    }
}

fn write_codebook(w: &mut Writer, cb: &Codebook) {
    w.u32(cb.m as u32);
    w.u32(cb.dim as u32);
    w.f64(cb.novelty_threshold);
    for c in &cb.centroids {
        for &v in c {
            w.f32(v as f32);
        }
    }
}

fn read_codebook(r: &mut Reader) -> Result<Codebook> {
    let m = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let novelty_threshold = r.f64()?;
    let mut centroids = Vec::with_capacity(m);
    for _ in 0..m {
        let mut c = Vec::with_capacity(dim);
        for _ in 0..dim {
            c.push(f64::from(r.f32()?));
        }
        centroids.push(c);
    }
    Ok(Codebook {
        m,
        dim,
        centroids,
        novelty_threshold,
    })
}

fn write_pipeline(w: &mut Writer, p: &PipelineFit) {
    w.f64(p.preprocess.clip_percentile);
    w.f64(p.preprocess.smooth_window_ms);
    w.bool(p.preprocess.normalize);
    w.f64(p.features.state_window_ms);
    w.f64(p.features.shift_step_ms);
    w.u8(match p.features.wavelet {
        Wavelet::Db3 => 0,
        Wavelet::Haar => 1,
    });
    w.u32(p.features.levels as u32);
    w.u32(p.ranges.len() as u32);
    for &(lo, hi) in &p.ranges {
        w.f64(lo);
        w.f64(hi);
    }
}

fn read_pipeline(r: &mut Reader) -> Result<PipelineFit> {
    let clip_percentile = r.f64()?;
    let smooth_window_ms = r.f64()?;
    let normalize = r.bool()?;
    let state_window_ms = r.f64()?;
    let shift_step_ms = r.f64()?;
    let wavelet = match r.u8()? {
        0 => Wavelet::Db3,
        1 => Wavelet::Haar,
        t => return Err(Error::ModelFormat(format!("unknown wavelet tag {t}"))),
    };
    let levels = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut ranges = Vec::with_capacity(n);
    for _ in 0..n {
        ranges.push((r.f64()?, r.f64()?));
    }
    Ok(PipelineFit {
        preprocess: PreprocessConfig {
            clip_percentile,
            smooth_window_ms,
            normalize,
        },
        features: FeatureConfig {
            state_window_ms,
            shift_step_ms,
            wavelet,
            levels,
        },
        ranges,
    })
}

fn write_ocsvm(w: &mut Writer, m: &OcSvmModel) {
    w.f64(m.rho);
    w.f64(m.gamma);
    w.f64(m.nu);
    w.u32(m.support_vectors.len() as u32);
    w.u32(m.dim() as u32);
    w.f64s(&m.alphas);
    for sv in &m.support_vectors {
        for &v in sv {
            w.f64(v);
        }
    }
}

fn read_ocsvm(r: &mut Reader) -> Result<OcSvmModel> {
    let rho = r.f64()?;
    let gamma = r.f64()?;
    let nu = r.f64()?;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let alphas = r.f64s()?;
    if alphas.len() != n {
        return Err(Error::ModelFormat("alpha count mismatch".into()));
    }
    let mut support_vectors = Vec::with_capacity(n);
    for _ in 0..n {
        let mut sv = Vec::with_capacity(dim);
        for _ in 0..dim {
            sv.push(r.f64()?);
        }
        support_vectors.push(sv);
    }
    Ok(OcSvmModel {
        support_vectors,
        alphas,
        rho,
        gamma,
        nu,
    })
}

/// Serializes a model bundle to deterministic bytes.
pub fn model_to_bytes(model: &ModelFile) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);
    match model {
        ModelFile::Markov(b) => {
            w.u8(TAG_MARKOV);
            write_pipeline(&mut w, &b.pipeline);
            write_codebook(&mut w, &b.model.codebook);
            let n = b.model.n_states();
            w.u32(n as u32);
            for row in &b.model.transition {
                for &v in row {
                    w.f64(v);
                }
            }
            for &v in &b.model.initial {
                w.f64(v);
            }
            w.f64(b.model.threshold);
            match b.model.config.self_transition {
                Some(st) => {
                    w.bool(true);
                    w.f64(st);
                }
                None => w.bool(false),
            }
            w.f64(b.model.config.prob_floor);
            w.u32(b.model.config.consecutive_required as u32);
            w.u32(b.model.config.prob_smooth_window as u32);
        }
        ModelFile::Bow(b) => {
            w.u8(TAG_BOW);
            write_pipeline(&mut w, &b.pipeline);
            write_codebook(&mut w, &b.model.codebook);
            w.f64(b.model.ttd_ms);
            w.f64(b.model.decision_threshold);
            write_ocsvm(&mut w, &b.model.ocsvm);
        }
        ModelFile::Baseline(b) => {
            w.u8(TAG_BASELINE);
            let m = &b.model;
            w.bool(m.config.temporal);
            w.f64(m.config.nu);
            w.f64(m.config.gamma);
            w.f64(m.config.clip_percentile);
            w.f64(m.config.ttd_ms);
            w.u64(m.config.max_train_rows as u64);
            w.u32(m.transforms.len() as u32);
            for t in &m.transforms {
                w.f64(t.lambda);
                w.f64(t.shift);
            }
            w.u32(m.ranges.len() as u32);
            for &(lo, hi) in &m.ranges {
                w.f64(lo);
                w.f64(hi);
            }
            w.f64(m.decision_threshold);
            write_ocsvm(&mut w, &m.ocsvm);
        }
        ModelFile::Rf(b) => {
            w.u8(TAG_RF);
            write_pipeline(&mut w, &b.pipeline);
            write_codebook(&mut w, &b.codebook);
            w.f64(b.ttd_ms);
            w.f64(b.threshold);
            w.u32(b.model.dim as u32);
            w.u32(b.model.config.n_trees as u32);
            w.u32(b.model.config.max_depth as u32);
            w.u32(b.model.config.features_per_split.unwrap_or(0) as u32);
            w.u32(b.model.config.min_samples_split as u32);
            w.u32(b.model.trees.len() as u32);
            for tree in &b.model.trees {
                w.u32(tree.nodes.len() as u32);
                for node in &tree.nodes {
                    match node {
                        Node::Leaf { benign, malicious } => {
                            w.u8(0);
                            w.u32(*benign);
                            w.u32(*malicious);
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            w.u8(1);
                            w.u32(*feature as u32);
                            w.f64(*threshold);
                            w.u32(*left as u32);
                            w.u32(*right as u32);
                        }
                    }
                }
            }
        }
    }
    w.buf
}

/// Parses a model bundle from bytes.
pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic; not a model file".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version}"
        )));
    }
    match r.u8()? {
        TAG_MARKOV => {
            let pipeline = read_pipeline(&mut r)?;
            let codebook = read_codebook(&mut r)?;
            let n = r.u32()? as usize;
            if n != codebook.n_symbols() {
                return Err(Error::ModelFormat("state-count mismatch".into()));
            }
            let mut transition = Vec::with_capacity(n);
            for _ in 0..n {
                let mut row = Vec::with_capacity(n);
                for _ in 0..n {
                    row.push(r.f64()?);
                }
                transition.push(row);
            }
            let mut initial = Vec::with_capacity(n);
            for _ in 0..n {
                initial.push(r.f64()?);
            }
            let threshold = r.f64()?;
            let self_transition = if r.bool()? { Some(r.f64()?) } else { None };
            let prob_floor = r.f64()?;
            let consecutive_required = r.u32()? as usize;
            let prob_smooth_window = r.u32()? as usize;
            Ok(ModelFile::Markov(MarkovBundle {
                pipeline,
                model: MarkovModel {
                    codebook,
                    transition,
                    initial,
                    config: MarkovConfig {
                        self_transition,
                        prob_floor,
                        consecutive_required,
                        prob_smooth_window,
                    },
                    threshold,
                },
            }))
        }
        TAG_BOW => {
            let pipeline = read_pipeline(&mut r)?;
            let codebook = read_codebook(&mut r)?;
            let ttd_ms = r.f64()?;
            let decision_threshold = r.f64()?;
            let ocsvm = read_ocsvm(&mut r)?;
            Ok(ModelFile::Bow(BowBundle {
                pipeline,
                model: BowModel {
                    codebook,
                    ttd_ms,
                    ocsvm,
                    decision_threshold,
                },
            }))
        }
        TAG_BASELINE => {
            let temporal = r.bool()?;
            let nu = r.f64()?;
            let gamma = r.f64()?;
            let clip_percentile = r.f64()?;
            let ttd_ms = r.f64()?;
            let max_train_rows = r.u64()? as usize;
            let nt = r.u32()? as usize;
            let mut transforms = Vec::with_capacity(nt);
            for _ in 0..nt {
                transforms.push(PowerTransform {
                    lambda: r.f64()?,
                    shift: r.f64()?,
                });
            }
            let nr = r.u32()? as usize;
            let mut ranges = Vec::with_capacity(nr);
            for _ in 0..nr {
                ranges.push((r.f64()?, r.f64()?));
            }
            let decision_threshold = r.f64()?;
            let ocsvm = read_ocsvm(&mut r)?;
            Ok(ModelFile::Baseline(BaselineBundle {
                model: BaselineModel {
                    transforms,
                    ranges,
                    config: BaselineConfig {
                        temporal,
                        nu,
                        gamma,
                        clip_percentile,
                        ttd_ms,
                        max_train_rows,
                    },
                    ocsvm,
                    decision_threshold,
                },
            }))
        }
        TAG_RF => {
            let pipeline = read_pipeline(&mut r)?;
            let codebook = read_codebook(&mut r)?;
            let ttd_ms = r.f64()?;
            let threshold = r.f64()?;
            let dim = r.u32()? as usize;
            let n_trees = r.u32()? as usize;
            let max_depth = r.u32()? as usize;
            let fps = r.u32()? as usize;
            let min_samples_split = r.u32()? as usize;
            let tree_count = r.u32()? as usize;
            let mut trees = Vec::with_capacity(tree_count);
            for _ in 0..tree_count {
                let n_nodes = r.u32()? as usize;
                let mut nodes = Vec::with_capacity(n_nodes);
                for _ in 0..n_nodes {
                    nodes.push(match r.u8()? {
                        0 => Node::Leaf {
                            benign: r.u32()?,
                            malicious: r.u32()?,
                        },
                        1 => Node::Split {
                            feature: r.u32()? as usize,
                            threshold: r.f64()?,
                            left: r.u32()? as usize,
                            right: r.u32()? as usize,
                        },
                        t => {
                            return Err(Error::ModelFormat(format!("unknown node tag {t}")))
                        }
                    });
                }
                trees.push(Tree { nodes });
            }
            Ok(ModelFile::Rf(RfBundle {
                pipeline,
                codebook,
                ttd_ms,
                model: RandomForestModel {
                    trees,
                    config: RandomForestConfig {
                        n_trees,
                        max_depth,
                        features_per_split: (fps > 0).then_some(fps),
                        min_samples_split,
                    },
                    dim,
                },
                threshold,
            }))
        }
        t => Err(Error::ModelFormat(format!("unknown model tag {t}"))),
    }
}

pub fn write_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    crate::trace::write_atomic(path.as_ref(), &model_to_bytes(model))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::train_markov;

    fn toy_pipeline() -> PipelineFit {
        PipelineFit {
            preprocess: PreprocessConfig::default(),
            features: FeatureConfig::default(),
            ranges: vec![(0.0, 10.0); 6],
        }
    }

    fn toy_codebook(m: usize, dim: usize) -> Codebook {
        Codebook {
            m,
            dim,
            centroids: (0..m)
                .map(|i| (0..dim).map(|j| (i * dim + j) as f64 * 0.125).collect())
                .collect(),
            novelty_threshold: 1.25,
        }
    }

    fn toy_markov_bundle(m: usize, dim: usize) -> MarkovBundle {
        let cb = toy_codebook(m, dim);
        let seqs: Vec<Vec<usize>> = (0..3)
            .map(|s| (0..200).map(|t| (t * (s + 1)) % (m + 1)).collect())
            .collect();
        let mut model = train_markov(&seqs, cb, MarkovConfig::default()).unwrap();
        model.threshold = -12.5;
        MarkovBundle {
            pipeline: toy_pipeline(),
            model,
        }
    }

    #[test]
    fn markov_round_trip_is_stable() {
        let bundle = toy_markov_bundle(8, 16);
        let bytes = model_to_bytes(&ModelFile::Markov(bundle));
        let back = model_from_bytes(&bytes).unwrap();
        // A second serialization of the parsed model is byte-identical.
        let bytes2 = model_to_bytes(&back);
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn markov_model_m20_stays_under_16_kib() {
        // m = 20 states with the default feature dimensionality (96).
        let bundle = toy_markov_bundle(20, 96);
        let bytes = model_to_bytes(&ModelFile::Markov(bundle));
        assert!(
            bytes.len() < 16_384,
            "markov model serialized to {} bytes",
            bytes.len()
        );
    }

    #[test]
    fn header_only_file_is_rejected_but_nonempty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.model");
        std::fs::write(&p, [MAGIC.as_slice(), &FORMAT_VERSION.to_le_bytes()].concat()).unwrap();
        assert!(crate::eval::model_size(&p).unwrap() > 0);
        assert!(read_model(&p).is_err());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let err = model_from_bytes(b"NOPE....").unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn size_is_deterministic() {
        let bundle = toy_markov_bundle(12, 32);
        let a = model_to_bytes(&ModelFile::Markov(bundle.clone()));
        let b = model_to_bytes(&ModelFile::Markov(bundle));
        assert_eq!(a, b);
    }
}
