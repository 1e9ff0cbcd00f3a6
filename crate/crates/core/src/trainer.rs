//! The optimization loop: shuffled mini-batches, per-view forward passes,
//! consensus pseudolabels, the combined loss, analytic backward and one
//! joint Adam step over every view's parameters. Also checkpoints and
//! evaluation-mode prediction.
//!
//! All randomness is keyed by `(seed, epoch, batch, view)` through
//! [`derived_rng`], so the completed-epoch counter is the only RNG position a
//! checkpoint needs to carry.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{pseudo_labels, total_loss_with_floor, LossBreakdown};
use crate::dataio::{make_batches, read_bytes, read_tensor, write_tensor, Dtype, MultiviewDataset};
use crate::error::{MsrlError, Result};
use crate::fsrl::{Mode, ViewModel};
use crate::numerics::{AdamState, Matrix, DELTA_FLOOR};
use crate::rng::{derived_rng, stream};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    pub row_normalize: bool,
    pub delta_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 1.0,
            lr: 1e-3,
            batch_size: 500,
            epochs: 100,
            seed: 0,
            dropout_rate: 0.1,
            row_normalize: false,
            delta_floor: DELTA_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, clusters: usize) -> Result<()> {
        let bad = |msg: String| Err(MsrlError::InvalidArgument(msg));
        if clusters < 2 {
            return bad(format!("need at least 2 clusters, got {clusters}"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and ≥ 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and ≥ 0, got {}", self.beta));
        }
        // lr = 0 is allowed: it is the "parameters stay at initialization" probe.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and ≥ 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.delta_floor > 0.0 && self.delta_floor <= 1.0 / clusters as f64) {
            return bad(format!(
                "simplex floor {} outside (0, 1/{clusters}]",
                self.delta_floor
            ));
        }
        Ok(())
    }
}

/// Batch-size-weighted mean of each loss term over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub semantic: f64,
    pub diversity: f64,
    pub consistency: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    clusters: usize,
    epoch: usize,
    dims: Vec<usize>,
    adam_step: u64,
    loss_trace: Vec<EpochLoss>,
}

/// Everything needed to continue or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub clusters: usize,
    /// Completed epochs; doubles as the RNG position.
    pub epoch: usize,
    pub views: Vec<ViewModel>,
    pub adam: AdamState,
    pub loss_trace: Vec<EpochLoss>,
}

impl Checkpoint {
    /// Fresh parameters for `dataset` before any update.
    pub fn initialize(dataset: &MultiviewDataset, clusters: usize, config: &TrainConfig) -> Result<Self> {
        config.validate(clusters)?;
        if let Some(c) = dataset.clusters {
            if c != clusters {
                return Err(MsrlError::InvalidArgument(format!(
                    "dataset declares {c} clusters but {clusters} were requested"
                )));
            }
        }
        let views: Vec<ViewModel> = dataset
            .views
            .iter()
            .enumerate()
            .map(|(l, v)| {
                let mut rng = derived_rng(config.seed, &[stream::INIT, l as u64]);
                ViewModel::init(v.dim(), clusters, config.dropout_rate, config.row_normalize, &mut rng)
            })
            .collect();
        let n_params = views.iter().map(ViewModel::num_params).sum();
        Ok(Self {
            config: config.clone(),
            clusters,
            epoch: 0,
            views,
            adam: AdamState::new(n_params, config.lr),
            loss_trace: Vec::new(),
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(ViewModel::input_dim).collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.adam.len());
        for v in &self.views {
            v.flatten_into(&mut out);
        }
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        for v in &mut self.views {
            let k = v.num_params();
            v.load_flat(&flat[offset..offset + k])?;
            offset += k;
        }
        Ok(())
    }

    fn check_dataset(&self, dataset: &MultiviewDataset) -> Result<()> {
        let dims = dataset.dims();
        if dims != self.dims() {
            return Err(MsrlError::shape(
                "feature dimensions",
                format!("{:?}", self.dims()),
                format!("{dims:?}"),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            clusters: self.clusters,
            epoch: self.epoch,
            dims: self.dims(),
            adam_step: self.adam.step,
            loss_trace: self.loss_trace.clone(),
        };
        let json = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
        out.extend_from_slice(&json);
        for v in &self.views {
            write_tensor(&mut out, &v.weights, Dtype::F64).unwrap();
            let att = Matrix::from_vec(1, v.attention.len(), v.attention.clone()).unwrap();
            write_tensor(&mut out, &att, Dtype::F64).unwrap();
        }
        for moment in [&self.adam.m, &self.adam.v] {
            let m = Matrix::from_vec(1, moment.len(), moment.clone()).unwrap();
            write_tensor(&mut out, &m, Dtype::F64).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |expected: usize| MsrlError::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        };
        if bytes.len() < 12 {
            return Err(truncated(12));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(MsrlError::BadMagic {
                path: path.to_path_buf(),
                expected: "MVCK",
            });
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != CHECKPOINT_VERSION {
            return Err(MsrlError::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let json_len = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let mut pos = 12 + json_len;
        if bytes.len() < pos {
            return Err(truncated(pos));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[12..pos])?;
        let next = |pos: &mut usize| -> Result<Matrix> {
            let (m, dtype, used) = read_tensor(&bytes[*pos..], path, false)?;
            if dtype != Dtype::F64 {
                return Err(MsrlError::UnsupportedDtype {
                    path: path.to_path_buf(),
                    code: dtype as u32,
                });
            }
            *pos += used;
            Ok(m)
        };
        let mut views = Vec::with_capacity(meta.dims.len());
        for &dim in &meta.dims {
            let w = next(&mut pos)?;
            let v = next(&mut pos)?;
            if w.shape() != (dim, meta.clusters) {
                return Err(MsrlError::shape(
                    "checkpoint weights",
                    format!("({dim}, {})", meta.clusters),
                    format!("{:?}", w.shape()),
                ));
            }
            let mut model = ViewModel::new(w, v.into_vec())?;
            model.dropout_rate = meta.config.dropout_rate;
            model.row_normalize = meta.config.row_normalize;
            views.push(model);
        }
        let m = next(&mut pos)?.into_vec();
        let v = next(&mut pos)?.into_vec();
        if pos != bytes.len() {
            return Err(MsrlError::SizeMismatch {
                path: path.to_path_buf(),
                declared: pos as u64,
                actual: bytes.len() as u64,
            });
        }
        let n_params: usize = views.iter().map(ViewModel::num_params).sum();
        if m.len() != n_params || v.len() != n_params {
            return Err(MsrlError::shape("checkpoint optimizer state", n_params, m.len()));
        }
        let mut adam = AdamState::new(n_params, meta.config.lr);
        adam.step = meta.adam_step;
        adam.m = m;
        adam.v = v;
        Ok(Self {
            config: meta.config,
            clusters: meta.clusters,
            epoch: meta.epoch,
            views,
            adam,
            loss_trace: meta.loss_trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| MsrlError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| MsrlError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, path)
    }

    /// `epoch,L_s,L_a,L_c,total`
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,L_s,L_a,L_c,total\n");
        for e in &self.loss_trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.semantic, e.diversity, e.consistency, e.total
            );
        }
        s
    }
}

/// One optimization step on the rows `idx`; returns the loss before the update.
fn train_batch(
    ckpt: &mut Checkpoint,
    dataset: &MultiviewDataset,
    idx: &[usize],
    epoch: usize,
    batch: usize,
) -> Result<LossBreakdown> {
    let cfg = ckpt.config.clone();
    let traces = ckpt
        .views
        .par_iter()
        .zip(&dataset.views)
        .enumerate()
        .map(|(l, (model, view))| {
            let x = view.data.select_rows(idx);
            let mut rng = derived_rng(
                cfg.seed,
                &[stream::DROPOUT, epoch as u64, batch as u64, l as u64],
            );
            model.forward(&x, Mode::Train(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let assignments: Vec<Matrix> = traces.iter().map(|t| t.assignments.clone()).collect();
    let out = total_loss_with_floor(&assignments, cfg.alpha, cfg.beta, cfg.delta_floor)?;
    if let Some(term) = out.breakdown.non_finite_term() {
        return Err(MsrlError::NonFiniteLoss {
            epoch,
            batch,
            term,
        });
    }
    let grads = ckpt
        .views
        .par_iter()
        .zip(&traces)
        .zip(&out.grads)
        .map(|((model, trace), g)| model.backward(trace, g))
        .collect::<Result<Vec<_>>>()?;
    // Fixed view order keeps the flat layout (and hence Adam) deterministic.
    let mut flat_grad = Vec::with_capacity(ckpt.adam.len());
    for g in &grads {
        g.flatten_into(&mut flat_grad);
    }
    let mut params = ckpt.flat_params();
    ckpt.adam.step(&mut params, &flat_grad)?;
    ckpt.load_flat(&params)?;
    if cfg.row_normalize {
        ckpt.views.iter_mut().for_each(ViewModel::normalize_columns);
    }
    Ok(out.breakdown)
}

/// Continues `ckpt` until `until_epoch` epochs have completed. The stored
/// epoch budget is raised to match, so a resumed run serializes exactly like
/// an uninterrupted one.
pub fn resume(ckpt: &mut Checkpoint, dataset: &MultiviewDataset, until_epoch: usize) -> Result<()> {
    ckpt.check_dataset(dataset)?;
    ckpt.config.epochs = ckpt.config.epochs.max(until_epoch);
    let n = dataset.n();
    // A batch larger than the dataset is just the whole dataset.
    let batch_size = ckpt.config.batch_size.min(n);
    for epoch in ckpt.epoch..until_epoch {
        let plan = make_batches(n, batch_size, ckpt.config.seed, epoch)?;
        let mut acc = [0.0f64; 4];
        for (b, idx) in plan.batches().enumerate() {
            let loss = train_batch(ckpt, dataset, idx, epoch, b)?;
            let w = idx.len() as f64;
            acc[0] += w * loss.semantic;
            acc[1] += w * loss.diversity;
            acc[2] += w * loss.consistency;
            acc[3] += w * loss.total;
        }
        let n = n as f64;
        ckpt.loss_trace.push(EpochLoss {
            epoch,
            semantic: acc[0] / n,
            diversity: acc[1] / n,
            consistency: acc[2] / n,
            total: acc[3] / n,
        });
        ckpt.epoch = epoch + 1;
    }
    Ok(())
}

/// Runs the full optimization for `config.epochs` epochs from a fresh initialization.
pub fn train(dataset: &MultiviewDataset, clusters: usize, config: &TrainConfig) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::initialize(dataset, clusters, config)?;
    resume(&mut ckpt, dataset, config.epochs)?;
    Ok(ckpt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub consensus: Matrix,
}

impl Prediction {
    /// `index,label`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,label\n");
        for (i, y) in self.labels.iter().enumerate() {
            let _ = writeln!(s, "{i},{y}");
        }
        s
    }
}

/// Evaluation-mode consensus for the samples in `order`, chunked into batches.
/// Rows of the result follow sample index, not `order`.
fn predict_in_order(
    ckpt: &Checkpoint,
    dataset: &MultiviewDataset,
    order: &[usize],
    batch_size: usize,
) -> Result<Prediction> {
    ckpt.check_dataset(dataset)?;
    if batch_size == 0 {
        return Err(MsrlError::InvalidArgument("batch size must be ≥ 1".into()));
    }
    let c = ckpt.clusters;
    let mut consensus = Matrix::zeros(dataset.n(), c);
    let inv_l = 1.0 / ckpt.views.len() as f64;
    for idx in order.chunks(batch_size) {
        let per_view = ckpt
            .views
            .par_iter()
            .zip(&dataset.views)
            .map(|(model, view)| {
                model
                    .forward(&view.data.select_rows(idx), Mode::Eval)
                    .map(|t| t.assignments)
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, &i) in idx.iter().enumerate() {
            let dst = consensus.row_mut(i);
            for s in &per_view {
                dst.iter_mut().zip(s.row(r)).for_each(|(a, b)| *a += b);
            }
            dst.iter_mut().for_each(|a| *a *= inv_l);
        }
    }
    let labels = pseudo_labels(&consensus);
    Ok(Prediction { labels, consensus })
}

/// Consensus distributions and labels with dropout off, batching samples in
/// their natural order. Each sample's output depends on its batch-mates.
pub fn predict(ckpt: &Checkpoint, dataset: &MultiviewDataset, batch_size: usize) -> Result<Prediction> {
    let order: Vec<usize> = (0..dataset.n()).collect();
    predict_in_order(ckpt, dataset, &order, batch_size)
}

/// How much predictions depend on batch composition: the largest fraction of
/// labels that differ between any two of `draws` random batchings.
pub fn batch_sensitivity(
    ckpt: &Checkpoint,
    dataset: &MultiviewDataset,
    batch_size: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let n = dataset.n();
    let runs = (0..draws.max(2))
        .map(|d| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut derived_rng(seed, &[stream::DIAGNOSTIC, d as u64]));
            predict_in_order(ckpt, dataset, &order, batch_size).map(|p| p.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let flips = runs[a].iter().zip(&runs[b]).filter(|(x, y)| x != y).count();
            worst = worst.max(flips as f64 / n as f64);
        }
    }
    Ok(worst)
}
