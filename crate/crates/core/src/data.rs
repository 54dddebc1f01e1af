//! Dataset ingestion (IDX binary files), synthetic task generation, and the
//! Gaussian-noise corruption protocol used by robustness experiments.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

/// A labeled split with inputs normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub input_shape: Vec<usize>,
    pub split: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if self.inputs.len() != self.labels.len() {
            return Err(Error::Data(format!(
                "{} inputs vs {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        for (i, x) in self.inputs.iter().enumerate() {
            if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Data(format!(
                    "sample {i} has values outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluation-time Gaussian corruption settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation in normalized-pixel units, >= 0.
    pub sigma: f64,
    pub seed: u64,
    /// Clip corrupted values back to [0, 1].
    pub clip: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: 0.0,
            seed: 0,
            clip: true,
        }
    }
}

// ---- IDX binary format ----
//
// Classic layout: magic [0, 0, dtype, ndims], big-endian u32 dimension
// sizes, then the payload. Only the unsigned-byte dtype (0x08) is
// supported.

const IDX_U8: u8 = 0x08;

/// Parsed raw IDX file: dimensions and byte payload.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxFile {
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: "file shorter than the 4-byte magic".into(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic prefix {:02x}{:02x}", bytes[0], bytes[1]),
        });
    }
    if bytes[2] != IDX_U8 {
        return Err(Error::Format {
            offset: 2,
            detail: format!("unsupported dtype 0x{:02x} (only u8 is supported)", bytes[2]),
        });
    }
    let ndims = bytes[3] as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("truncated header: need {header_len} bytes for {ndims} dims"),
        });
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let off = 4 + 4 * d;
        dims.push(u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    let expected: usize = dims.iter().map(|&d| d as usize).product();
    if bytes.len() != header_len + expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!(
                "payload length {} does not match dims {:?} (expected {})",
                bytes.len() - header_len,
                dims,
                expected
            ),
        });
    }
    Ok(IdxFile {
        dims,
        payload: bytes[header_len..].to_vec(),
    })
}

pub fn write_idx(file: &IdxFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * file.dims.len() + file.payload.len());
    out.extend_from_slice(&[0, 0, IDX_U8, file.dims.len() as u8]);
    for &d in &file.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&file.payload);
    out
}

pub fn read_idx_file(path: &Path) -> Result<IdxFile> {
    parse_idx(&std::fs::read(path)?)
}

/// Load an image/label IDX pair into a dataset; pixels are scaled to
/// [0, 1] by dividing by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_idx_file(images_path)?;
    let labels = read_idx_file(labels_path)?;
    if images.dims.is_empty() || labels.dims.len() != 1 {
        return Err(Error::Format {
            offset: 0,
            detail: format!(
                "expected image dims [n, ...] and label dims [n], got {:?} / {:?}",
                images.dims, labels.dims
            ),
        });
    }
    let n = images.dims[0] as usize;
    if labels.dims[0] as usize != n {
        return Err(Error::Data(format!(
            "{} images vs {} labels",
            n, labels.dims[0]
        )));
    }
    let sample_shape: Vec<usize> = images.dims[1..].iter().map(|&d| d as usize).collect();
    let sample_len: usize = sample_shape.iter().product();
    let mut inputs = Vec::with_capacity(n);
    for i in 0..n {
        let bytes = &images.payload[i * sample_len..(i + 1) * sample_len];
        let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        inputs.push(Tensor::new(sample_shape.clone(), data)?);
    }
    let label_values: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    let classes = label_values.iter().copied().max().unwrap_or(0) + 1;
    let ds = Dataset {
        inputs,
        labels: label_values,
        classes,
        input_shape: sample_shape,
        split: "idx".into(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Class prototypes for the synthetic task: class `c` lights up its own
/// block of `dim / classes` coordinates at an amplitude chosen so that
/// prototype separation equals `margin`.
pub fn synth_prototypes(classes: usize, dim: usize, margin: f64) -> Result<Vec<Tensor>> {
    if classes < 2 || dim < classes {
        return Err(Error::Parameter(format!(
            "need dim >= classes >= 2, got dim {dim}, classes {classes}"
        )));
    }
    if !(margin > 0.0) {
        return Err(Error::Parameter("margin must be > 0".into()));
    }
    let block = dim / classes;
    let amplitude = margin / (2.0 * block as f64).sqrt();
    if amplitude > 1.0 {
        return Err(Error::Parameter(format!(
            "margin {margin} is unreachable inside the unit box at dim {dim} / {classes} classes"
        )));
    }
    let mut protos = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut v = vec![0.0; dim];
        for j in c * block..(c + 1) * block {
            v[j] = amplitude;
        }
        protos.push(Tensor::from_vec(v));
    }
    Ok(protos)
}

/// Cluster standard deviation used by [`synth_patterns`]: a tenth of the
/// margin, so prototypes sit ten cluster sigmas apart.
pub fn synth_cluster_sigma(margin: f64) -> f64 {
    margin / 10.0
}

/// Gaussian clusters around orthogonal prototypes, clipped to [0, 1],
/// exactly balanced across classes. Deterministic under the given rng.
pub fn synth_patterns(
    classes: usize,
    samples_per_class: usize,
    dim: usize,
    margin: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    let protos = synth_prototypes(classes, dim, margin)?;
    let sigma = synth_cluster_sigma(margin);
    let mut inputs = Vec::with_capacity(classes * samples_per_class);
    let mut labels = Vec::with_capacity(classes * samples_per_class);
    for c in 0..classes {
        for _ in 0..samples_per_class {
            let noise = Tensor::gaussian(rng, &[dim], 0.0, sigma)?;
            let x = protos[c].add(&noise)?.clamp(0.0, 1.0);
            inputs.push(x);
            labels.push(c);
        }
    }
    let ds = Dataset {
        inputs,
        labels,
        classes,
        input_shape: vec![dim],
        split: "synthetic".into(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Elementwise Gaussian corruption: a fresh dataset with
/// `x + N(0, sigma^2)`, clipped back to [0, 1] when requested. Labels are
/// untouched. Each sample draws from its own substream of
/// `(seed, sample index)`, so corruption is independent of iteration order.
pub fn apply_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if spec.sigma < 0.0 {
        return Err(Error::Parameter(format!(
            "noise sigma must be >= 0, got {}",
            spec.sigma
        )));
    }
    let mut out = dataset.clone();
    if spec.sigma == 0.0 {
        return Ok(out);
    }
    for (i, x) in out.inputs.iter_mut().enumerate() {
        let mut rng = Rng::substream(spec.seed, i as u64);
        let noise = Tensor::gaussian(&mut rng, x.shape(), 0.0, spec.sigma)?;
        let mut noisy = x.add(&noise)?;
        if spec.clip {
            noisy = noisy.clamp(0.0, 1.0);
        }
        *x = noisy;
    }
    Ok(out)
}

/// Write a split manifest: one `name size sha256` line per file.
pub fn write_manifest(path: &Path, entries: &[(String, &[u8])]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (name, bytes) in entries {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        writeln!(w, "{name} {} {:x}", bytes.len(), hasher.finalize())?;
    }
    Ok(())
}
