//! Experience memory: converged per-user weights and penalties keyed by an
//! autoencoder embedding of the radio environment and the requested rates.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::net_model::LargeScaleFading;
use crate::scalar::Scalar;

const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub d_emb: usize,
    pub sim_threshold: f64,
    pub dedup_tol: f64,
    /// Minimum rates enter the features divided by this, Mbps.
    pub reference_rate_mbps: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { d_emb: 32, sim_threshold: 0.95, dedup_tol: 0.999, reference_rate_mbps: 10.0 }
    }
}

/// Raw feature vector, user-major: `[log10 β_{k,1}, …, log10 β_{k,L}, R_min_k / R_ref]`.
pub fn raw_features<T: Scalar>(fading: &LargeScaleFading<T>, r_min_mbps: &[T], reference_rate_mbps: f64) -> Result<Vec<f64>> {
    let (k_n, l_n) = (fading.num_users(), fading.num_orus());
    if r_min_mbps.len() != k_n {
        return Err(invalid("one minimum rate per user"));
    }
    if !(reference_rate_mbps > 0.0) {
        return Err(invalid("reference rate must be positive"));
    }
    let mut x = Vec::with_capacity(k_n * (l_n + 1));
    for k in 0..k_n {
        for l in 0..l_n {
            let b = fading.get(k, l).to64();
            if !(b > 0.0) {
                return Err(invalid(format!("β[{k}][{l}] must be positive")));
            }
            x.push(b.log10());
        }
        x.push(r_min_mbps[k].to64() / reference_rate_mbps);
    }
    Ok(x)
}

/// Per-feature standardization of the `log10 β` entries; rate entries pass
/// through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub num_users: usize,
    pub num_orus: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Preprocessor {
    pub fn identity(num_users: usize, num_orus: usize) -> Self {
        let n = num_users * (num_orus + 1);
        Self { num_users, num_orus, mean: vec![0.0; n], scale: vec![1.0; n] }
    }

    pub fn fit(num_users: usize, num_orus: usize, corpus: &[Vec<f64>]) -> Result<Self> {
        let n = num_users * (num_orus + 1);
        if corpus.is_empty() || corpus.iter().any(|x| x.len() != n) {
            return Err(invalid(format!("corpus rows must have {n} features")));
        }
        let mut p = Self::identity(num_users, num_orus);
        let m = corpus.len() as f64;
        for j in 0..n {
            if j % (num_orus + 1) == num_orus {
                continue;
            }
            let mean = corpus.iter().map(|x| x[j]).sum::<f64>() / m;
            let var = corpus.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / m;
            p.mean[j] = mean;
            p.scale[j] = if var.sqrt() > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.input_dim() {
            return Err(invalid(format!("expected {} features, got {}", self.input_dim(), raw.len())));
        }
        Ok(raw.iter().zip(self.mean.iter().zip(&self.scale)).map(|(x, (m, s))| (x - m) * s).collect())
    }
}

/// Linear bottleneck autoencoder `x̂ = W_d (W_e x + b_e) + b_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder<T: Scalar> {
    pub enc_w: DMatrix<T>,
    pub enc_b: DVector<T>,
    pub dec_w: DMatrix<T>,
    pub dec_b: DVector<T>,
}

impl<T: Scalar> Autoencoder<T> {
    /// Small random weights, zero biases.
    pub fn init(input_dim: usize, d_emb: usize, seed: u64) -> Result<Self> {
        if d_emb == 0 || d_emb >= input_dim {
            return Err(invalid(format!("embedding dimension {d_emb} must lie in [1, {input_dim})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (input_dim + d_emb) as f64).sqrt();
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| T::of(rng.random_range(-bound..=bound)));
        let enc_w = draw(d_emb, input_dim);
        let dec_w = draw(input_dim, d_emb);
        Ok(Self { enc_w, enc_b: DVector::zeros(d_emb), dec_w, dec_b: DVector::zeros(input_dim) })
    }

    /// Encoder and decoder both the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            enc_w: DMatrix::identity(dim, dim),
            enc_b: DVector::zeros(dim),
            dec_w: DMatrix::identity(dim, dim),
            dec_b: DVector::zeros(dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_w.ncols()
    }

    pub fn d_emb(&self) -> usize {
        self.enc_w.nrows()
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!("encoder expects {} inputs, got {}", self.input_dim(), x.len())));
        }
        let q = &self.enc_w * DVector::from_column_slice(x) + &self.enc_b;
        Ok(q.iter().copied().collect())
    }

    pub fn reconstruct(&self, x: &[T]) -> Result<Vec<T>> {
        let q = DVector::from_vec(self.encode(x)?);
        Ok((&self.dec_w * q + &self.dec_b).iter().copied().collect())
    }

    fn data(corpus: &[Vec<T>], n: usize) -> Result<DMatrix<T>> {
        if corpus.iter().any(|x| x.len() != n) {
            return Err(invalid(format!("corpus rows must have {n} features")));
        }
        Ok(DMatrix::from_fn(n, corpus.len(), |i, j| corpus[j][i]))
    }

    /// Mean squared reconstruction error per sample and feature.
    pub fn loss(&self, corpus: &[Vec<T>]) -> Result<T> {
        let x = Self::data(corpus, self.input_dim())?;
        Ok(self.loss_of(&x))
    }

    fn loss_of(&self, x: &DMatrix<T>) -> T {
        let r = self.residual(x);
        r.iter().fold(T::zero(), |a, &v| a + v * v) / T::of((x.nrows() * x.ncols()) as f64)
    }

    fn residual(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let mut h = &self.enc_w * x;
        for mut c in h.column_iter_mut() {
            c += &self.enc_b;
        }
        let mut y = &self.dec_w * &h;
        for mut c in y.column_iter_mut() {
            c += &self.dec_b;
        }
        y - x
    }

    /// Full-batch gradient descent on the reconstruction error; returns the
    /// loss after every epoch.
    pub fn train(&mut self, corpus: &[Vec<T>], epochs: usize, lr: f64) -> Result<Vec<T>> {
        let n = self.input_dim();
        if corpus.len() < self.d_emb() {
            return Err(invalid(format!(
                "corpus of {} samples is smaller than the embedding dimension {}",
                corpus.len(),
                self.d_emb()
            )));
        }
        let x = Self::data(corpus, n)?;
        let scale = T::of(2.0 / (n * corpus.len()) as f64);
        let lr = T::of(lr);
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut h = &self.enc_w * &x;
            for mut c in h.column_iter_mut() {
                c += &self.enc_b;
            }
            let r = self.residual(&x) * scale;
            let g_dec_w = &r * h.transpose();
            let g_dec_b = r.column_sum();
            let back = self.dec_w.transpose() * &r;
            let g_enc_w = &back * x.transpose();
            let g_enc_b = back.column_sum();
            self.dec_w -= g_dec_w * lr;
            self.dec_b -= g_dec_b * lr;
            self.enc_w -= g_enc_w * lr;
            self.enc_b -= g_enc_b * lr;
            history.push(self.loss_of(&x));
        }
        Ok(history)
    }
}

/// Preprocessing plus encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    pub reference_rate_mbps: f64,
    pub pre: Preprocessor,
    pub ae: Autoencoder<f64>,
}

impl Embedder {
    pub fn new(reference_rate_mbps: f64, pre: Preprocessor, ae: Autoencoder<f64>) -> Result<Self> {
        if pre.input_dim() != ae.input_dim() {
            return Err(invalid("preprocessor and autoencoder widths differ"));
        }
        Ok(Self { reference_rate_mbps, pre, ae })
    }

    /// Fits the preprocessor and trains the autoencoder on a corpus of raw
    /// feature vectors.
    pub fn fit(
        num_users: usize,
        num_orus: usize,
        corpus: &[Vec<f64>],
        cfg: &MemoryConfig,
        epochs: usize,
        lr: f64,
        seed: u64,
    ) -> Result<(Self, f64)> {
        let pre = Preprocessor::fit(num_users, num_orus, corpus)?;
        let xs = corpus.iter().map(|x| pre.apply(x)).collect::<Result<Vec<_>>>()?;
        let n = pre.input_dim();
        let mut ae = Autoencoder::init(n, cfg.d_emb.min(n - 1).max(1), seed)?;
        let hist = ae.train(&xs, epochs, lr)?;
        let final_loss = match hist.last() {
            Some(&l) => l,
            None => ae.loss(&xs)?,
        };
        tracing::debug!(target: "memory", final_loss, epochs, "autoencoder trained");
        Ok((Self { reference_rate_mbps: cfg.reference_rate_mbps, pre, ae }, final_loss))
    }

    pub fn embed_raw(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.ae.encode(&self.pre.apply(raw)?)
    }

    pub fn embed<T: Scalar>(&self, fading: &LargeScaleFading<T>, r_min_mbps: &[T]) -> Result<Vec<f64>> {
        if fading.num_users() != self.pre.num_users || fading.num_orus() != self.pre.num_orus {
            return Err(invalid("feature layout differs from the embedder's"));
        }
        self.embed_raw(&raw_features(fading, r_min_mbps, self.reference_rate_mbps)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// `⟨a, b⟩ / (‖a‖ ‖b‖)`; zero when either vector vanishes.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceMeta {
    pub intent_kind: String,
    pub loops_to_converge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub key: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub meta: ExperienceMeta,
}

impl Experience {
    pub fn validate(&self) -> Result<()> {
        if !(self.key.iter().map(|x| x * x).sum::<f64>() > 0.0) || self.key.iter().any(|x| !x.is_finite()) {
            return Err(invalid("experience key must be finite and nonzero"));
        }
        if self.alpha.len() != self.lambda.len() {
            return Err(invalid("one α and one λ per user"));
        }
        if self.alpha.iter().chain(&self.lambda).any(|x| !x.is_finite()) {
            return Err(invalid("experience value must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    seq: u64,
    experience: Experience,
}

/// Key-value store searched exhaustively by cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    version: u32,
    pub d_emb: usize,
    pub num_users: usize,
    pub num_orus: usize,
    pub sim_threshold: f64,
    pub dedup_tol: f64,
    next_seq: u64,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub index: usize,
    pub similarity: f64,
    pub experience: Experience,
}

impl MemoryStore {
    pub fn new(d_emb: usize, num_users: usize, num_orus: usize, cfg: &MemoryConfig) -> Self {
        Self {
            version: STORE_VERSION,
            d_emb,
            num_users,
            num_orus,
            sim_threshold: cfg.sim_threshold,
            dedup_tol: cfg.dedup_tol,
            next_seq: 0,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn experiences(&self) -> impl Iterator<Item = &Experience> {
        self.entries.iter().map(|e| &e.experience)
    }

    /// Appends, or overwrites the value of an existing entry of the same
    /// intent kind whose key is a near-duplicate.
    pub fn store(&mut self, experience: Experience) -> Result<()> {
        experience.validate()?;
        if experience.key.len() != self.d_emb {
            return Err(invalid(format!("key has {} entries, store expects {}", experience.key.len(), self.d_emb)));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let dup = self.entries.iter_mut().find(|e| {
            e.experience.meta.intent_kind == experience.meta.intent_kind
                && cosine_similarity(&e.experience.key, &experience.key) > self.dedup_tol
        });
        match dup {
            Some(e) => {
                e.experience.alpha = experience.alpha;
                e.experience.lambda = experience.lambda;
                e.experience.meta = experience.meta;
                e.seq = seq;
            }
            None => self.entries.push(Entry { seq, experience }),
        }
        Ok(())
    }

    /// Most similar entry, optionally restricted to one intent kind, if its
    /// similarity reaches the threshold. Ties go to the most recent entry.
    pub fn retrieve(&self, q: &[f64], intent_kind: Option<&str>) -> Result<Option<Retrieved>> {
        self.retrieve_with_threshold(q, intent_kind, self.sim_threshold)
    }

    pub fn retrieve_with_threshold(&self, q: &[f64], intent_kind: Option<&str>, threshold: f64) -> Result<Option<Retrieved>> {
        if q.len() != self.d_emb {
            return Err(invalid(format!("query has {} entries, store expects {}", q.len(), self.d_emb)));
        }
        if !(q.iter().map(|x| x * x).sum::<f64>() > 0.0) {
            return Err(invalid("query must be nonzero"));
        }
        let mut best: Option<(usize, f64, u64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if intent_kind.is_some_and(|k| k != e.experience.meta.intent_kind) {
                continue;
            }
            let s = cosine_similarity(q, &e.experience.key);
            let better = match best {
                None => true,
                Some((_, bs, bseq)) => s > bs || (s == bs && e.seq > bseq),
            };
            if better {
                best = Some((i, s, e.seq));
            }
        }
        Ok(best.filter(|&(_, s, _)| s >= threshold).map(|(index, similarity, _)| Retrieved {
            index,
            similarity,
            experience: self.entries[index].experience.clone(),
        }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: Self = serde_json::from_slice(&fs::read(path)?)?;
        if s.version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported memory store version {}", s.version)));
        }
        if s.entries.iter().any(|e| e.experience.key.len() != s.d_emb) {
            return Err(Error::Format("stored key width differs from the header".into()));
        }
        Ok(s)
    }
}
