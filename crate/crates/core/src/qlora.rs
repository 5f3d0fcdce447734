//! 4-bit NormalFloat block quantization, the quantized-backbone-plus-adapter
//! forward pass, and memory accounting for sharing one backbone across
//! several adapted agents.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// The 16 NormalFloat levels, ascending, with exact 0 and ±1.
pub const NF4_LEVELS: [f64; 16] = [
    -1.0,
    -0.696_192_800_998_687_7,
    -0.525_073_051_452_636_7,
    -0.394_917_488_098_144_53,
    -0.284_441_381_692_886_35,
    -0.184_773_430_228_233_34,
    -0.091_050_036_251_544_95,
    0.0,
    0.079_580_295_085_906_98,
    0.160_930_201_411_247_25,
    0.246_112_301_945_686_34,
    0.337_915_241_718_292_24,
    0.440_709_829_330_444_34,
    0.562_617_003_917_694_1,
    0.722_956_836_223_602_3,
    1.0,
];

/// Code of the zero level.
pub const NF4_ZERO: u8 = 7;

/// Nearest codebook index of `v ∈ [−1, 1]`; ties go to the lower level.
pub fn nf4_code(v: f64) -> u8 {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &lv) in NF4_LEVELS.iter().enumerate() {
        let d = (v - lv).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best as u8
}

/// Half of the widest gap between adjacent levels.
pub fn nf4_half_max_gap() -> f64 {
    NF4_LEVELS.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max) / 2.0
}

/// Row-major 4-bit codes with one absmax scale per block of `block_size`
/// consecutive elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix<T: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub codes: Vec<u8>,
    pub block_scales: Vec<T>,
}

impl<T: Scalar> QuantizedMatrix<T> {
    #[inline]
    pub fn value(&self, r: usize, c: usize) -> T {
        let i = r * self.cols + c;
        T::of(NF4_LEVELS[self.codes[i] as usize]) * self.block_scales[i / self.block_size]
    }
}

pub fn nf4_quantize<T: Scalar>(weights: &DMatrix<T>, block_size: usize) -> Result<QuantizedMatrix<T>> {
    if block_size == 0 {
        return Err(invalid("block size must be at least 1"));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(invalid("weights must be finite"));
    }
    let (rows, cols) = weights.shape();
    let flat: Vec<T> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| weights[(r, c)]).collect();
    let mut codes = Vec::with_capacity(flat.len());
    let mut block_scales = Vec::with_capacity(flat.len().div_ceil(block_size));
    for block in flat.chunks(block_size) {
        let absmax = block.iter().fold(T::zero(), |m, w| m.max(w.abs()));
        let scale = if absmax > T::zero() { absmax } else { T::one() };
        block_scales.push(scale);
        codes.extend(block.iter().map(|&w| nf4_code((w / scale).to64())));
    }
    Ok(QuantizedMatrix { rows, cols, block_size, codes, block_scales })
}

pub fn nf4_dequantize<T: Scalar>(q: &QuantizedMatrix<T>) -> DMatrix<T> {
    DMatrix::from_fn(q.rows, q.cols, |r, c| q.value(r, c))
}

/// Low-rank adapter `A (d_out × d_r)`, `B (d_r × d_in)` with scale `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapter<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub eta: T,
}

impl<T: Scalar> Adapter<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, eta: T) -> Result<Self> {
        let d_r = a.ncols();
        if b.nrows() != d_r || d_r == 0 {
            return Err(invalid("adapter factors must share a nonzero inner rank"));
        }
        if 4 * d_r > a.nrows().min(b.ncols()) {
            return Err(invalid(format!(
                "rank {d_r} exceeds a quarter of min(d_out, d_in) = {}",
                a.nrows().min(b.ncols())
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) || !eta.is_finite() {
            return Err(invalid("adapter entries must be finite"));
        }
        Ok(Self { a, b, eta })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }
}

/// `y = θ̂x + (η/d_r)·A(Bx)`, dequantizing the backbone row by row.
pub fn adapter_forward<T: Scalar>(q: &QuantizedMatrix<T>, adapter: &Adapter<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != q.cols || adapter.b.ncols() != q.cols || adapter.a.nrows() != q.rows {
        return Err(invalid("backbone, adapter and input dimensions disagree"));
    }
    let bx: Vec<T> = (0..adapter.rank())
        .map(|i| (0..q.cols).fold(T::zero(), |acc, j| acc + adapter.b[(i, j)] * x[j]))
        .collect();
    let s = adapter.eta / T::of(adapter.rank() as f64);
    Ok((0..q.rows)
        .map(|r| {
            let base = (0..q.cols).fold(T::zero(), |acc, c| acc + q.value(r, c) * x[c]);
            let low = (0..adapter.rank()).fold(T::zero(), |acc, i| acc + adapter.a[(r, i)] * bx[i]);
            base + s * low
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Precision {
    Fp16,
    Nf4 {
        block_size: usize,
        /// Count one 16-bit absmax scale per block.
        include_block_scales: bool,
    },
}

impl Precision {
    pub fn bytes_per_param(&self) -> f64 {
        match *self {
            Precision::Fp16 => 2.0,
            Precision::Nf4 { block_size, include_block_scales } => {
                0.5 + if include_block_scales { 2.0 / block_size as f64 } else { 0.0 }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Deployment {
    /// One full copy of the backbone per agent.
    Separate { copies: usize },
    /// One backbone plus 16-bit adapters.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterShape {
    pub d_out: usize,
    pub d_in: usize,
    pub rank: usize,
}

impl AdapterShape {
    pub fn params(&self) -> usize {
        self.rank * (self.d_out + self.d_in)
    }
}

/// Bytes held by a deployment.
pub fn memory_accounting(params: f64, precision: Precision, adapters: &[AdapterShape], deployment: Deployment) -> Result<f64> {
    if !(params > 0.0) {
        return Err(invalid("parameter count must be positive"));
    }
    let backbone = params * precision.bytes_per_param();
    Ok(match deployment {
        Deployment::Separate { copies } => {
            if copies == 0 {
                return Err(invalid("need at least one copy"));
            }
            backbone * copies as f64
        }
        Deployment::Shared => backbone + adapters.iter().map(|a| a.params() as f64 * 2.0).sum::<f64>(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixShape {
    pub name: String,
    pub d_out: usize,
    pub d_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub name: String,
    pub architecture: String,
    pub effective_params: f64,
    pub num_layers: usize,
    pub adapter_rank: usize,
    pub adapter_scale: f64,
    pub num_adapters: usize,
    pub adapted_matrices: Vec<MatrixShape>,
}

impl ModelManifest {
    /// Every adapter of every agent, layer by layer.
    pub fn adapter_shapes(&self) -> Vec<AdapterShape> {
        let per_layer = self.adapted_matrices.iter().map(|m| AdapterShape { d_out: m.d_out, d_in: m.d_in, rank: self.adapter_rank });
        let one: Vec<AdapterShape> = (0..self.num_layers).flat_map(|_| per_layer.clone()).collect();
        (0..self.num_adapters).flat_map(|_| one.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub version: u32,
    pub models: Vec<ModelManifest>,
}

const BUNDLED_MANIFEST: &str = include_str!("../data/layer_manifest.json");

impl LayerManifest {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_MANIFEST).expect("bundled layer manifest parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.version != 1 {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }
}

/// One model's four deployments, gigabytes (10⁹ bytes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingRow {
    pub model: String,
    pub fp16_separate_gb: f64,
    pub fp16_shared_gb: f64,
    pub nf4_separate_gb: f64,
    pub nf4_shared_gb: f64,
    /// Shared NF4 against separate FP16 copies, percent.
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingConfig {
    pub block_size: usize,
    pub include_block_scales: bool,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        Self { block_size: 64, include_block_scales: false }
    }
}

pub fn accounting_table(manifest: &LayerManifest, cfg: &AccountingConfig) -> Result<Vec<AccountingRow>> {
    let nf4 = Precision::Nf4 { block_size: cfg.block_size, include_block_scales: cfg.include_block_scales };
    manifest
        .models
        .iter()
        .map(|m| {
            let shapes = m.adapter_shapes();
            let copies = Deployment::Separate { copies: m.num_adapters };
            let gb = |p, d| memory_accounting(m.effective_params, p, &shapes, d).map(|b| b / 1e9);
            let fp16_separate_gb = gb(Precision::Fp16, copies)?;
            let nf4_shared_gb = gb(nf4, Deployment::Shared)?;
            Ok(AccountingRow {
                model: m.name.clone(),
                fp16_separate_gb,
                fp16_shared_gb: gb(Precision::Fp16, Deployment::Shared)?,
                nf4_separate_gb: gb(nf4, copies)?,
                nf4_shared_gb,
                reduction_pct: 100.0 * (1.0 - nf4_shared_gb / fp16_separate_gb),
            })
        })
        .collect()
}

pub fn render_table(rows: &[AccountingRow]) -> String {
    let mut s = format!(
        "{:<8} {:>14} {:>16} {:>14} {:>16} {:>10}\n",
        "model", "FP16 separate", "FP16 + adapters", "NF4 separate", "NF4 + adapters", "reduction"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<8} {:>11.2} GB {:>13.2} GB {:>11.2} GB {:>13.2} GB {:>9.1}%\n",
            r.model, r.fp16_separate_gb, r.fp16_shared_gb, r.nf4_separate_gb, r.nf4_shared_gb, r.reduction_pct
        ));
    }
    s
}
