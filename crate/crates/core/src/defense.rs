//! The five defended classifiers: three input/output-layer-modified dense
//! networks (IBOL, INOI, IBOI) and two preprocessing baselines (CDR, TVM).
//! Each exposes a single black-box [`DefendedModel::predict`].
//!
//! IBOL binarizes the input and reads class logits. INOI and IBOI are
//! recall models: the network maps the (raw or binarized) input to a
//! reconstructed image, and the predicted class is the per-class
//! representative image at the smallest L2 distance. CDR reduces color
//! depth and TVM runs total-variation denoising before a plain logit
//! classifier.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    DataError, Image, PixelDomain, RepresentativeSet, IMAGE_PIXELS, IMAGE_SIDE, NUM_CLASSES,
};
use crate::nn::{argmax_slice, DenseNet, NnError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{kind:?} needs a {expected}-output head, found {found}")]
    HeadMismatch {
        kind: VariantKind,
        expected: usize,
        found: usize,
    },
    #[error("{0:?} is a recall variant and needs representative images")]
    MissingReps(VariantKind),
    #[error("color bit {0} outside 0..=8")]
    BitOutOfRange(u8),
    #[error("expected a {expected:?} image, found {found:?}")]
    DomainMismatch {
        expected: PixelDomain,
        found: PixelDomain,
    },
    #[error("input contains non-finite pixels")]
    NonFiniteInput,
    #[error("preprocessing config out of range: {0}")]
    ConfigOutOfRange(String),
    #[error("bad model bundle: {0}")]
    BadBundle(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The five rows of the benchmark grid.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Inputs binarized, outputs logits.
    Ibol,
    /// Inputs non-binarized, outputs images (recall head).
    Inoi,
    /// Inputs binarized, outputs images (recall head).
    Iboi,
    /// Color-depth-reduction baseline over a plain logit classifier.
    Cdr,
    /// Total-variation-minimization baseline over a plain logit classifier.
    Tvm,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Cdr,
        VariantKind::Tvm,
        VariantKind::Ibol,
        VariantKind::Inoi,
        VariantKind::Iboi,
    ];

    /// Recall variants reconstruct an image; the rest output logits.
    pub fn is_recall(self) -> bool {
        matches!(self, VariantKind::Inoi | VariantKind::Iboi)
    }

    /// Output width the network head must have.
    pub fn head_dim(self) -> usize {
        if self.is_recall() {
            IMAGE_PIXELS
        } else {
            NUM_CLASSES
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Ibol => "ibol",
            VariantKind::Inoi => "inoi",
            VariantKind::Iboi => "iboi",
            VariantKind::Cdr => "cdr",
            VariantKind::Tvm => "tvm",
        }
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VariantKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ibol" => Ok(VariantKind::Ibol),
            "inoi" => Ok(VariantKind::Inoi),
            "iboi" => Ok(VariantKind::Iboi),
            "cdr" => Ok(VariantKind::Cdr),
            "tvm" => Ok(VariantKind::Tvm),
            other => Err(format!(
                "unknown model '{other}' (expected ibol|inoi|iboi|cdr|tvm)"
            )),
        }
    }
}

/// Preprocessing hyperparameters shared by all variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Pixels at or above this raw value binarize to 1.
    pub binarize_threshold: u8,
    /// Color-depth reduction keeps `8 - cdr_color_bit` effective bits.
    pub cdr_color_bit: u8,
    /// Total-variation denoising weight (larger smooths more).
    pub tvm_weight: f64,
    /// Iteration cap for the TV dual projection.
    pub tvm_max_iter: usize,
    /// Relative energy-change tolerance that stops the TV iteration.
    pub tvm_tol: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            binarize_threshold: 128,
            cdr_color_bit: 5,
            tvm_weight: 0.1,
            tvm_max_iter: 200,
            tvm_tol: 2e-4,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.binarize_threshold == 0 {
            return Err(ModelError::ConfigOutOfRange(
                "binarize_threshold must be in 1..=255".into(),
            ));
        }
        if self.cdr_color_bit > 8 {
            return Err(ModelError::ConfigOutOfRange(
                "cdr_color_bit must be in 0..=8".into(),
            ));
        }
        if !(self.tvm_weight > 0.0) || !self.tvm_weight.is_finite() {
            return Err(ModelError::ConfigOutOfRange(
                "tvm_weight must be positive".into(),
            ));
        }
        if !(self.tvm_tol > 0.0) || !self.tvm_tol.is_finite() {
            return Err(ModelError::ConfigOutOfRange(
                "tvm_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Thresholds an image to `{0, 1}`: raw value `>= threshold` maps to 1.
/// Unit and Binary inputs are first rescaled by 255 with half-up rounding.
pub fn binarize(img: &Image, threshold: u8) -> Image {
    let thr = f64::from(threshold);
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            let raw = match img.domain() {
                PixelDomain::Raw255 => p,
                PixelDomain::Unit | PixelDomain::Binary => (p * 255.0 + 0.5).floor(),
            };
            if raw >= thr {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Image::new(PixelDomain::Binary, pixels).expect("binarized pixels are 0 or 1")
}

/// Color-depth reduction: every pixel `X <- X - (X mod 2^color_bit)`,
/// dropping the lowest `color_bit` bits of intensity.
pub fn cdr(img: &Image, color_bit: u8) -> Result<Image, ModelError> {
    if color_bit > 8 {
        return Err(ModelError::BitOutOfRange(color_bit));
    }
    if img.domain() != PixelDomain::Raw255 {
        return Err(ModelError::DomainMismatch {
            expected: PixelDomain::Raw255,
            found: img.domain(),
        });
    }
    let q = f64::from(1u32 << color_bit);
    let pixels = img.pixels().iter().map(|&p| p - (p % q)).collect();
    Ok(Image::new(PixelDomain::Raw255, pixels).expect("quantized pixels stay in range"))
}

/// Total-variation denoising of a unit-domain image via the Chambolle dual
/// projection iteration, mirroring the reference scikit-image
/// `denoise_tv_chambolle` loop. Output is clipped to `[0, 1]`.
pub fn tvm_denoise(
    img: &Image,
    weight: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Image, ModelError> {
    if img.domain() == PixelDomain::Raw255 {
        return Err(ModelError::DomainMismatch {
            expected: PixelDomain::Unit,
            found: img.domain(),
        });
    }
    if img.pixels().iter().any(|p| !p.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let mut out = tv_chambolle(img.pixels(), IMAGE_SIDE, IMAGE_SIDE, weight, max_iter, tol);
    for p in &mut out {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(Image::new(PixelDomain::Unit, out).expect("clipped pixels are in unit range"))
}

/// Chambolle dual-projection TV denoising on an `height x width` image
/// stored row-major. Stops at `max_iter` or when the relative change of the
/// dual energy drops below `tol`.
pub fn tv_chambolle(
    data: &[f64],
    height: usize,
    width: usize,
    weight: f64,
    max_iter: usize,
    tol: f64,
) -> Vec<f64> {
    assert_eq!(data.len(), height * width);
    let size = height * width;
    let idx = |r: usize, c: usize| r * width + c;
    // dual field p = (p_row, p_col), gradient workspace g, divergence d
    let mut p_row = vec![0.0f64; size];
    let mut p_col = vec![0.0f64; size];
    let mut g_row = vec![0.0f64; size];
    let mut g_col = vec![0.0f64; size];
    let mut d = vec![0.0f64; size];
    let mut out: Vec<f64> = data.to_vec();
    let tau = 0.25; // 1 / (2 * ndim) for 2-D
    let mut energy_init = 0.0;
    let mut energy_prev = 0.0;

    for iter in 0..max_iter {
        if iter > 0 {
            // d = divergence of p (adjoint of the forward-difference gradient)
            for r in 0..height {
                for c in 0..width {
                    let mut v = -p_row[idx(r, c)] - p_col[idx(r, c)];
                    if r > 0 {
                        v += p_row[idx(r - 1, c)];
                    }
                    if c > 0 {
                        v += p_col[idx(r, c - 1)];
                    }
                    d[idx(r, c)] = v;
                }
            }
            for i in 0..size {
                out[i] = data[i] + d[i];
            }
        }

        let mut energy: f64 = d.iter().map(|&v| v * v).sum();

        // forward differences of the current estimate
        for r in 0..height {
            for c in 0..width {
                g_row[idx(r, c)] = if r + 1 < height {
                    out[idx(r + 1, c)] - out[idx(r, c)]
                } else {
                    0.0
                };
                g_col[idx(r, c)] = if c + 1 < width {
                    out[idx(r, c + 1)] - out[idx(r, c)]
                } else {
                    0.0
                };
            }
        }

        for i in 0..size {
            let norm = (g_row[i] * g_row[i] + g_col[i] * g_col[i]).sqrt();
            energy += weight * norm;
            let denom = norm * (tau / weight) + 1.0;
            p_row[i] = (p_row[i] - tau * g_row[i]) / denom;
            p_col[i] = (p_col[i] - tau * g_col[i]) / denom;
        }
        energy /= size as f64;

        if iter == 0 {
            energy_init = energy;
            energy_prev = energy;
        } else {
            if (energy_prev - energy).abs() < tol * energy_init {
                break;
            }
            energy_prev = energy;
        }
    }
    out
}

/// Euclidean distance between two images: the root of the sum of squared
/// per-pixel differences. The images must live on the same value scale;
/// Unit and Binary are comparable, Raw255 only compares with itself.
pub fn l2_distance(a: &Image, b: &Image) -> Result<f64, ModelError> {
    let compatible = a.domain() == b.domain()
        || matches!(
            (a.domain(), b.domain()),
            (PixelDomain::Unit, PixelDomain::Binary) | (PixelDomain::Binary, PixelDomain::Unit)
        );
    if !compatible {
        return Err(ModelError::DomainMismatch {
            expected: a.domain(),
            found: b.domain(),
        });
    }
    Ok(a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Classifies a recalled image as the class of the nearest representative
/// by L2 distance; ties break toward the lowest class index.
pub fn recall_classify(recalled: &Image, reps: &[Image]) -> usize {
    debug_assert_eq!(reps.len(), NUM_CLASSES);
    let mut best = 0usize;
    let mut best_distance = f64::INFINITY;
    for (class, rep) in reps.iter().enumerate() {
        let distance =
            l2_distance(recalled, rep).expect("recalled image and reps share a value scale");
        if distance < best_distance {
            best_distance = distance;
            best = class;
        }
    }
    best
}

/// A fully assembled defended classifier. Immutable after construction;
/// `predict` is pure and safe to call from many attack workers at once.
#[derive(Debug, Clone)]
pub struct DefendedModel {
    kind: VariantKind,
    preprocess: PreprocessConfig,
    net: DenseNet,
    raw_reps: Option<RepresentativeSet>,
    recall_refs: Option<Vec<Image>>,
}

/// Representative images converted into the recall head's output scale:
/// unit-domain for INOI, binarized for IBOI.
pub fn recall_targets_for(
    kind: VariantKind,
    reps: &RepresentativeSet,
    preprocess: &PreprocessConfig,
) -> Vec<Image> {
    reps.reps()
        .iter()
        .map(|rep| match kind {
            VariantKind::Iboi => binarize(rep, preprocess.binarize_threshold),
            _ => rep.to_unit(),
        })
        .collect()
}

/// Assembles a defended model, checking the head width against the variant
/// and requiring representatives (in dataset Raw255 form) for recall
/// variants. The model derives its own unit/binary recall references.
pub fn build_model(
    kind: VariantKind,
    net: DenseNet,
    reps: Option<RepresentativeSet>,
    preprocess: PreprocessConfig,
) -> Result<DefendedModel, ModelError> {
    preprocess.validate()?;
    if net.output_dim() != kind.head_dim() {
        return Err(ModelError::HeadMismatch {
            kind,
            expected: kind.head_dim(),
            found: net.output_dim(),
        });
    }
    let recall_refs = if kind.is_recall() {
        let reps_ref = reps.as_ref().ok_or(ModelError::MissingReps(kind))?;
        Some(recall_targets_for(kind, reps_ref, &preprocess))
    } else {
        None
    };
    Ok(DefendedModel {
        kind,
        preprocess,
        net,
        raw_reps: reps,
        recall_refs,
    })
}

impl DefendedModel {
    pub fn kind(&self) -> VariantKind {
        self.kind
    }

    pub fn preprocess(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn representatives(&self) -> Option<&RepresentativeSet> {
        self.raw_reps.as_ref()
    }

    /// The variant's preprocessing stage: the network input for a raw image.
    pub fn preprocess_input(&self, img: &Image) -> Image {
        match self.kind {
            VariantKind::Ibol | VariantKind::Iboi => {
                binarize(img, self.preprocess.binarize_threshold)
            }
            VariantKind::Inoi => img.to_unit(),
            VariantKind::Cdr => {
                let reduced = cdr(img, self.preprocess.cdr_color_bit)
                    .expect("config validated at build time");
                reduced.to_unit()
            }
            VariantKind::Tvm => tvm_denoise(
                &img.to_unit(),
                self.preprocess.tvm_weight,
                self.preprocess.tvm_max_iter,
                self.preprocess.tvm_tol,
            )
            .expect("finite unit image"),
        }
    }

    /// Black-box decision: preprocess, run the network, and classify by
    /// argmax logits or by the nearest recall reference. Total on valid
    /// Raw255 images and deterministic.
    pub fn predict(&self, img: &Image) -> usize {
        assert_eq!(
            img.domain(),
            PixelDomain::Raw255,
            "predict operates on raw images"
        );
        let input = self.preprocess_input(img);
        let output = self
            .net
            .forward(input.pixels())
            .expect("preprocessed input matches the network input width");
        match &self.recall_refs {
            None => argmax_slice(&output),
            Some(refs) => {
                let recalled = Image::new(
                    PixelDomain::Unit,
                    output.iter().map(|&v| v.clamp(0.0, 1.0)).collect(),
                )
                .expect("clamped outputs are unit pixels");
                recall_classify(&recalled, refs)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    kind: VariantKind,
    preprocess: PreprocessConfig,
    rep_source_indices: Option<Vec<usize>>,
}

const NET_FILE: &str = "net.bin";
const MANIFEST_FILE: &str = "manifest.json";
const REPS_FILE: &str = "reps.bin";

/// Persists a model as a bundle directory: the network weights file, a JSON
/// manifest (variant, preprocessing, representative provenance), and the 10
/// representative images as raw 784-byte blocks.
pub fn save_bundle(
    model: &DefendedModel,
    loss: crate::nn::LossKind,
    seed: u64,
    dir: &Path,
) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    crate::nn::save_net(&model.net, loss, seed, &dir.join(NET_FILE))?;
    let manifest = BundleManifest {
        kind: model.kind,
        preprocess: model.preprocess,
        rep_source_indices: model
            .raw_reps
            .as_ref()
            .map(|r| r.source_indices().to_vec()),
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    if let Some(reps) = &model.raw_reps {
        let mut bytes = Vec::with_capacity(NUM_CLASSES * IMAGE_PIXELS);
        for rep in reps.reps() {
            for &p in rep.pixels() {
                bytes.push(p as u8);
            }
        }
        fs::write(dir.join(REPS_FILE), bytes)?;
    }
    Ok(())
}

/// Loads a bundle saved by [`save_bundle`], rebuilding the model through
/// [`build_model`] so all invariants are re-checked.
pub fn load_bundle(dir: &Path) -> Result<DefendedModel, ModelError> {
    let manifest: BundleManifest =
        serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let (net, _loss, _seed) = crate::nn::load_net(&dir.join(NET_FILE))?;
    let reps = match &manifest.rep_source_indices {
        None => None,
        Some(indices) => {
            let bytes = fs::read(dir.join(REPS_FILE))?;
            if bytes.len() != NUM_CLASSES * IMAGE_PIXELS {
                return Err(ModelError::BadBundle(format!(
                    "reps file has {} bytes, expected {}",
                    bytes.len(),
                    NUM_CLASSES * IMAGE_PIXELS
                )));
            }
            if indices.len() != NUM_CLASSES {
                return Err(ModelError::BadBundle(
                    "manifest lists the wrong number of representative indices".into(),
                ));
            }
            let reps: Vec<Image> = bytes
                .chunks_exact(IMAGE_PIXELS)
                .map(Image::from_raw_bytes)
                .collect::<Result<_, _>>()?;
            let mut source_indices = [0usize; NUM_CLASSES];
            source_indices.copy_from_slice(indices);
            Some(RepresentativeSet::from_parts(reps, source_indices)?)
        }
    };
    build_model(manifest.kind, net, reps, manifest.preprocess)
}
