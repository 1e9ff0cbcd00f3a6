//! On-disk multiview feature format, manifest loading, the synthetic
//! heterogeneous dataset generator, and deterministic mini-batch plans.
//!
//! All integers are little-endian.
//!
//! ```text
//! MVFV  magic "MVFV" | u32 version=1 | u64 n | u32 dim | u32 dtype | n·dim values, row-major
//!       dtype 0 = f32, 1 = f64
//! MVLB  magic "MVLB" | u32 version=1 | u64 n | n × i32
//! ```
//!
//! The manifest is a JSON object
//! `{"views":[{"path":…,"backbone":…}], "labels": "…", "clusters": C}`;
//! relative paths resolve against the manifest's directory.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MsrlError, Result};
use crate::numerics::Matrix;
use crate::rng::{derived_rng, stream};

pub const VIEW_MAGIC: &[u8; 4] = b"MVFV";
pub const LABELS_MAGIC: &[u8; 4] = b"MVLB";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes before the payload of an MVFV block.
pub const VIEW_HEADER_LEN: usize = 24;
/// Bytes before the payload of an MVLB file.
pub const LABELS_HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(code: u32, path: &Path) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            _ => Err(MsrlError::UnsupportedDtype {
                path: path.to_path_buf(),
                code,
            }),
        }
    }

    fn width(self) -> u64 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// One backbone's frozen features for every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureView {
    pub view_id: usize,
    pub backbone: String,
    /// `n × dim`, row `i` is sample `i`.
    pub data: Matrix,
}

impl FeatureView {
    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiviewDataset {
    pub views: Vec<FeatureView>,
    /// Ground truth, consumed by metrics only.
    pub labels: Option<Vec<usize>>,
    pub clusters: Option<usize>,
}

impl MultiviewDataset {
    /// Checks the cross-view alignment invariants.
    pub fn new(
        views: Vec<FeatureView>,
        labels: Option<Vec<usize>>,
        clusters: Option<usize>,
    ) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| MsrlError::Misaligned("dataset has no views".into()))?;
        let n = first.n();
        for v in &views {
            if v.n() != n {
                return Err(MsrlError::Misaligned(format!(
                    "view {} has {} samples, view {} has {n}",
                    v.view_id,
                    v.n(),
                    first.view_id
                )));
            }
            if v.n() == 0 || v.dim() == 0 {
                return Err(MsrlError::InvalidArgument(format!(
                    "view {} is empty ({}×{})",
                    v.view_id,
                    v.n(),
                    v.dim()
                )));
            }
            if !v.data.is_finite() {
                return Err(MsrlError::NonFinite(format!("view {}", v.view_id)));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(MsrlError::Misaligned(format!(
                    "{} labels for {n} samples",
                    l.len()
                )));
            }
        }
        Ok(Self {
            views,
            labels,
            clusters,
        })
    }

    pub fn n(&self) -> usize {
        self.views[0].n()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(FeatureView::dim).collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MsrlError::io(path, e))
}

fn truncated(path: &Path, expected: u64, found: u64) -> MsrlError {
    MsrlError::Truncated {
        path: path.to_path_buf(),
        expected,
        found,
    }
}

/// Writes one MVFV block (header plus payload) to `w`.
pub fn write_tensor<W: Write>(w: &mut W, m: &Matrix, dtype: Dtype) -> std::io::Result<()> {
    w.write_all(VIEW_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(m.rows() as u64)?;
    w.write_u32::<LittleEndian>(m.cols() as u32)?;
    w.write_u32::<LittleEndian>(dtype as u32)?;
    match dtype {
        Dtype::F32 => {
            for &x in m.as_slice() {
                w.write_f32::<LittleEndian>(x as f32)?;
            }
        }
        Dtype::F64 => {
            for &x in m.as_slice() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
    }
    Ok(())
}

/// Reads one MVFV block from `bytes`, returning the matrix and the bytes consumed.
///
/// With `exact`, trailing bytes after the payload are an error.
pub fn read_tensor(bytes: &[u8], path: &Path, exact: bool) -> Result<(Matrix, Dtype, usize)> {
    if bytes.len() < 4 || &bytes[..4] != VIEW_MAGIC {
        return Err(MsrlError::BadMagic {
            path: path.to_path_buf(),
            expected: "MVFV",
        });
    }
    if bytes.len() < VIEW_HEADER_LEN {
        return Err(truncated(path, VIEW_HEADER_LEN as u64, bytes.len() as u64));
    }
    let mut cur = &bytes[4..VIEW_HEADER_LEN];
    let io = |e| MsrlError::io(path, e);
    let version = cur.read_u32::<LittleEndian>().map_err(io)?;
    if version != FORMAT_VERSION {
        return Err(MsrlError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = cur.read_u64::<LittleEndian>().map_err(io)?;
    let dim = cur.read_u32::<LittleEndian>().map_err(io)? as u64;
    let dtype = Dtype::from_code(cur.read_u32::<LittleEndian>().map_err(io)?, path)?;

    let declared = n
        .checked_mul(dim)
        .ok_or_else(|| MsrlError::InvalidArgument(format!("{}: n·dim overflows", path.display())))?;
    let payload = (bytes.len() - VIEW_HEADER_LEN) as u64;
    let need = declared * dtype.width();
    if payload < need {
        return Err(truncated(path, VIEW_HEADER_LEN as u64 + need, bytes.len() as u64));
    }
    if exact && payload != need {
        return Err(MsrlError::SizeMismatch {
            path: path.to_path_buf(),
            declared,
            actual: payload / dtype.width(),
        });
    }
    let mut cur = &bytes[VIEW_HEADER_LEN..VIEW_HEADER_LEN + need as usize];
    let mut data = Vec::with_capacity(declared as usize);
    for _ in 0..declared {
        let x = match dtype {
            Dtype::F32 => cur.read_f32::<LittleEndian>().map_err(io)? as f64,
            Dtype::F64 => cur.read_f64::<LittleEndian>().map_err(io)?,
        };
        data.push(x);
    }
    let m = Matrix::from_vec(n as usize, dim as usize, data)?;
    Ok((m, dtype, VIEW_HEADER_LEN + need as usize))
}

pub fn write_view(view: &FeatureView, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(VIEW_HEADER_LEN + 4 * view.data.as_slice().len());
    write_tensor(&mut buf, &view.data, Dtype::F32).map_err(|e| MsrlError::io(path, e))?;
    fs::write(path, buf).map_err(|e| MsrlError::io(path, e))
}

/// Reads an MVFV view file. `view_id` and `backbone` are not stored in the
/// file; the manifest supplies them.
pub fn read_view(path: &Path) -> Result<FeatureView> {
    let bytes = read_file(path)?;
    let (data, _, _) = read_tensor(&bytes, path, true)?;
    if data.rows() == 0 || data.cols() == 0 {
        return Err(MsrlError::InvalidArgument(format!(
            "{}: empty view ({}×{})",
            path.display(),
            data.rows(),
            data.cols()
        )));
    }
    if !data.is_finite() {
        return Err(MsrlError::NonFinite(path.display().to_string()));
    }
    Ok(FeatureView {
        view_id: 0,
        backbone: String::new(),
        data,
    })
}

pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(LABELS_HEADER_LEN + 4 * labels.len());
    buf.extend_from_slice(LABELS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for &l in labels {
        let v = i32::try_from(l)
            .map_err(|_| MsrlError::InvalidArgument(format!("label {l} exceeds i32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| MsrlError::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    if bytes.len() < 4 || &bytes[..4] != LABELS_MAGIC {
        return Err(MsrlError::BadMagic {
            path: path.to_path_buf(),
            expected: "MVLB",
        });
    }
    if bytes.len() < LABELS_HEADER_LEN {
        return Err(truncated(path, LABELS_HEADER_LEN as u64, bytes.len() as u64));
    }
    let mut cur = &bytes[4..];
    let io = |e| MsrlError::io(path, e);
    let version = cur.read_u32::<LittleEndian>().map_err(io)?;
    if version != FORMAT_VERSION {
        return Err(MsrlError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = cur.read_u64::<LittleEndian>().map_err(io)?;
    let payload = (bytes.len() - LABELS_HEADER_LEN) as u64;
    if payload < 4 * n {
        return Err(truncated(path, LABELS_HEADER_LEN as u64 + 4 * n, bytes.len() as u64));
    }
    if payload != 4 * n {
        return Err(MsrlError::SizeMismatch {
            path: path.to_path_buf(),
            declared: n,
            actual: payload / 4,
        });
    }
    (0..n)
        .map(|_| {
            let v = cur.read_i32::<LittleEndian>().map_err(io)?;
            usize::try_from(v).map_err(|_| {
                MsrlError::InvalidArgument(format!("{}: negative label {v}", path.display()))
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub path: String,
    pub backbone: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub views: Vec<ManifestView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let m: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| MsrlError::Manifest(format!("{}: {e}", path.display())))?;
        if m.views.is_empty() {
            return Err(MsrlError::Manifest(format!("{}: no views listed", path.display())));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| MsrlError::io(path, e))
    }

    fn resolve(base: &Path, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Absolute (or manifest-relative) paths of every view file.
    pub fn view_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.views.iter().map(|v| Self::resolve(base, &v.path)).collect()
    }

    pub fn labels_path(&self, manifest_path: &Path) -> Option<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.labels.as_deref().map(|p| Self::resolve(base, p))
    }
}

/// Loads every view listed in a manifest (in parallel) plus optional labels.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiviewDataset> {
    let manifest = Manifest::read(manifest_path)?;
    let paths = manifest.view_paths(manifest_path);
    let views = paths
        .par_iter()
        .zip(manifest.views.par_iter())
        .enumerate()
        .map(|(id, (path, entry))| {
            let mut v = read_view(path)?;
            v.view_id = id;
            v.backbone = entry.backbone.clone();
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = manifest
        .labels_path(manifest_path)
        .map(|p| read_labels(&p))
        .transpose()?;
    MultiviewDataset::new(views, labels, manifest.clusters)
}

/// Parameters of the synthetic heterogeneous multiview generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub views: usize,
    pub samples: usize,
    pub dims: Vec<usize>,
    /// Centroid spread in units of the within-cluster standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 {
            return Err(MsrlError::InvalidArgument("clusters must be ≥ 2".into()));
        }
        if self.views < 1 {
            return Err(MsrlError::InvalidArgument("views must be ≥ 1".into()));
        }
        if self.samples < 1 {
            return Err(MsrlError::InvalidArgument("samples must be ≥ 1".into()));
        }
        if self.dims.len() != self.views {
            return Err(MsrlError::InvalidArgument(format!(
                "{} dims given for {} views",
                self.dims.len(),
                self.views
            )));
        }
        if self.dims.contains(&0) {
            return Err(MsrlError::InvalidArgument("dims must be ≥ 1".into()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(MsrlError::InvalidArgument("separation must be > 0".into()));
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random orthogonal matrix via Gram–Schmidt on a Gaussian matrix.
fn random_rotation<R: Rng>(rng: &mut R, dim: usize) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = gaussian_vec(rng, dim);
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = crate::numerics::l2_norm(&v);
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Matrix::from_rows(&basis).expect("square basis")
}

/// `C` centroids with every pairwise distance equal to `separation`: the
/// vertices of a randomly oriented regular simplex, all on one sphere about
/// the origin. When `dim < C` the simplex does not fit, and centroids are drawn
/// uniformly on the sphere of radius `separation / 2` instead.
fn simplex_centroids<R: Rng>(rng: &mut R, clusters: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    if dim < clusters {
        return (0..clusters)
            .map(|_| loop {
                let mut c = gaussian_vec(rng, dim);
                let norm = crate::numerics::l2_norm(&c);
                if norm > 1e-12 {
                    c.iter_mut().for_each(|x| *x *= separation / 2.0 / norm);
                    break c;
                }
            })
            .collect();
    }
    let basis = random_rotation(rng, dim);
    let scale = separation / std::f64::consts::SQRT_2;
    let mean: Vec<f64> = (0..dim)
        .map(|k| (0..clusters).map(|j| basis[(j, k)]).sum::<f64>() / clusters as f64)
        .collect();
    (0..clusters)
        .map(|j| (0..dim).map(|k| scale * (basis[(j, k)] - mean[k])).collect())
        .collect()
}

/// Generates `spec.views` heterogeneous views of one labelled Gaussian mixture.
///
/// Per view: `C` centroids at mutual distance `separation` (see
/// [`simplex_centroids`]), unit-variance isotropic noise, then a random
/// rotation and a positive diagonal scaling drawn from `[0.5, 2]`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiviewDataset> {
    spec.validate()?;
    let mut label_rng = derived_rng(spec.seed, &[stream::SYNTH, u64::MAX]);
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.clusters).collect();
    labels.shuffle(&mut label_rng);

    let views = spec
        .dims
        .iter()
        .enumerate()
        .map(|(l, &dim)| {
            let mut rng = derived_rng(spec.seed, &[stream::SYNTH, l as u64]);
            let centroids = simplex_centroids(&mut rng, spec.clusters, dim, spec.separation);
            let rotation = random_rotation(&mut rng, dim);
            let scaling: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();

            let mut data = Matrix::zeros(spec.samples, dim);
            let mut raw = vec![0.0; dim];
            for (i, &y) in labels.iter().enumerate() {
                for (r, c) in raw.iter_mut().zip(&centroids[y]) {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    *r = c + noise;
                }
                let out = data.row_mut(i);
                for (k, o) in out.iter_mut().enumerate() {
                    let rotated: f64 = rotation.row(k).iter().zip(&raw).map(|(a, b)| a * b).sum();
                    *o = scaling[k] * rotated;
                }
            }
            FeatureView {
                view_id: l,
                backbone: format!("synthetic-{l}"),
                data,
            }
        })
        .collect();
    MultiviewDataset::new(views, Some(labels), Some(spec.clusters))
}

/// Writes a dataset as `view_<l>.mvfv`, `labels.mvlb` and `manifest.json` under `dir`.
pub fn write_dataset(dataset: &MultiviewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| MsrlError::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.num_views());
    for (l, v) in dataset.views.iter().enumerate() {
        let name = format!("view_{l}.mvfv");
        write_view(v, &dir.join(&name))?;
        entries.push(ManifestView {
            path: name,
            backbone: v.backbone.clone(),
        });
    }
    let labels = match &dataset.labels {
        Some(l) => {
            write_labels(l, &dir.join("labels.mvlb"))?;
            Some("labels.mvlb".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        views: entries,
        labels,
        clusters: dataset.clusters,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

/// One epoch's sample order, chunked into mini-batches. The last batch may be short.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub order: Vec<usize>,
}

impl BatchPlan {
    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(self.batch_size)
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<BatchPlan> {
    if batch_size < 1 {
        return Err(MsrlError::InvalidArgument("batch_size must be ≥ 1".into()));
    }
    if batch_size > n {
        return Err(MsrlError::InvalidArgument(format!(
            "batch_size {batch_size} exceeds sample count {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derived_rng(seed, &[stream::BATCH, epoch as u64]);
    order.shuffle(&mut rng);
    Ok(BatchPlan { batch_size, order })
}

/// Copies raw bytes of a file (for hashing inputs).
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| MsrlError::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| MsrlError::io(path, e))?;
    Ok(buf)
}
