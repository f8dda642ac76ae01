//! Joint training of temporally smoothed embeddings.
//!
//! Minimizes, over slices `U(1..T)` of shape `n x k`,
//!
//! ```text
//! 1/2 sum_t ||Y(t) - U(t)U(t)^T||_F^2
//!   + lambda/2 sum_t ||U(t)||_F^2
//!   + tau/2 sum_{t>=2} ||U(t-1) - U(t)||_F^2
//! ```
//!
//! by block-coordinate sweeps over `t`. Each block linearizes `U U^T`
//! about the current iterate `Û` and solves the `k x k` ridge system
//!
//! ```text
//! U (2 Û^T Û + (lambda + c tau) I) = 2 Y Û + tau * (sum of neighbours)
//! ```
//!
//! whose fixed points are exactly the stationary points of the objective.
//! The solve gives a search direction; the step starts at `initial_step`
//! and is halved until the objective does not increase.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::par;
use crate::sparse::SymCsr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    /// Full sweeps over all slices.
    pub iterations: usize,
    pub lambda: f64,
    pub tau: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian init; `1/sqrt(k)` when unset.
    pub init_scale: Option<f64>,
    /// First step tried along each block direction.
    pub initial_step: f64,
    /// Step halvings before a block update is rejected.
    pub max_halvings: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 50,
            iterations: 10,
            lambda: 10.0,
            tau: 50.0,
            seed: 0,
            init_scale: None,
            initial_step: 0.5,
            max_halvings: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be finite and >= 0");
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 1.0) {
            return bad("initial_step must be in (0, 1]");
        }
        if self.init_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("init_scale must be positive");
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.init_scale.unwrap_or(1.0 / (self.k as f64).sqrt())
    }
}

/// `T x n x k` embeddings stored slice-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    slices: usize,
    n: usize,
    k: usize,
    data: Vec<f64>,
    fingerprint: [u8; 32],
}

impl EmbeddingTensor {
    pub fn from_data(slices: usize, n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != slices * n * k {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {slices}x{n}x{k}",
                data.len()
            )));
        }
        Ok(EmbeddingTensor {
            slices,
            n,
            k,
            data,
            fingerprint: [0; 32],
        })
    }

    pub fn zeros(slices: usize, n: usize, k: usize) -> Self {
        Self::from_data(slices, n, k, vec![0.0; slices * n * k]).unwrap()
    }

    pub fn with_fingerprint(mut self, fingerprint: [u8; 32]) -> Self {
        self.fingerprint = fingerprint;
        self
    }

    pub fn num_slices(&self) -> usize {
        self.slices
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let len = self.n * self.k;
        &self.data[t * len..(t + 1) * len]
    }

    pub fn slice_mut(&mut self, t: usize) -> &mut [f64] {
        let len = self.n * self.k;
        &mut self.data[t * len..(t + 1) * len]
    }

    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let off = (t * self.n + i) * self.k;
        &self.data[off..off + self.k]
    }

    /// Errors unless this tensor was trained against `vocab`.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.n || vocab.fingerprint() != self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        Ok(())
    }

    /// `||U(t) - U(t-1)||_F` for `t = 1..T`.
    pub fn adjacent_drift(&self) -> Vec<f64> {
        (1..self.slices)
            .map(|t| {
                self.slice(t)
                    .iter()
                    .zip(self.slice(t - 1))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// I.i.d. Gaussian entries with mean 0 and standard deviation `scale`.
pub fn init_embeddings(slices: usize, n: usize, k: usize, seed: u64, scale: f64) -> Result<EmbeddingTensor> {
    if slices == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidArgument("embedding dimensions must be positive".into()));
    }
    let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..slices * n * k).map(|_| normal.sample(&mut rng)).collect();
    EmbeddingTensor::from_data(slices, n, k, data)
}

fn check_shapes(tensor: &EmbeddingTensor, ys: &[SymCsr]) -> Result<()> {
    if ys.len() != tensor.slices {
        return Err(Error::ShapeMismatch(format!(
            "{} target matrices for {} slices",
            ys.len(),
            tensor.slices
        )));
    }
    if let Some((t, y)) = ys.iter().enumerate().find(|(_, y)| y.n() != tensor.n) {
        return Err(Error::ShapeMismatch(format!(
            "target {t} is {}x{}, embeddings have n={}",
            y.n(),
            y.n(),
            tensor.n
        )));
    }
    Ok(())
}

/// `U^T U`, accumulated row by row in index order.
fn gram(u: &[f64], k: usize) -> Vec<f64> {
    let mut g = vec![0.0; k * k];
    for row in u.chunks_exact(k) {
        for a in 0..k {
            let ra = row[a];
            for b in a..k {
                g[a * k + b] += ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            g[a * k + b] = g[b * k + a];
        }
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `1/2 ||Y - U U^T||_F^2` given `Y U`, via
/// `||Y||^2 - 2 <Y U, U> + ||U^T U||^2`.
fn reconstruction(y_sq: f64, u: &[f64], yu: &[f64], k: usize) -> f64 {
    let g = gram(u, k);
    0.5 * (y_sq - 2.0 * dot(u, yu) + dot(&g, &g))
}

/// Objective terms that involve slice `t`, evaluated at `u` for that slice.
#[allow(clippy::too_many_arguments)]
fn local_objective(
    tensor: &EmbeddingTensor,
    t: usize,
    u: &[f64],
    yu: &[f64],
    y_sq: f64,
    lambda: f64,
    tau: f64,
) -> f64 {
    let k = tensor.k;
    let mut f = reconstruction(y_sq, u, yu, k) + 0.5 * lambda * dot(u, u);
    if tau != 0.0 {
        if t > 0 {
            f += 0.5 * tau * dist_sq(u, tensor.slice(t - 1));
        }
        if t + 1 < tensor.slices {
            f += 0.5 * tau * dist_sq(u, tensor.slice(t + 1));
        }
    }
    f
}

/// Full objective value.
pub fn objective(tensor: &EmbeddingTensor, ys: &[SymCsr], lambda: f64, tau: f64) -> Result<f64> {
    check_shapes(tensor, ys)?;
    let k = tensor.k;
    let mut total = 0.0;
    for (t, y) in ys.iter().enumerate() {
        let u = tensor.slice(t);
        let yu = y.mul_dense(u, k);
        total += reconstruction(y.frobenius_sq(), u, &yu, k) + 0.5 * lambda * dot(u, u);
    }
    for t in 1..tensor.slices {
        total += 0.5 * tau * dist_sq(tensor.slice(t - 1), tensor.slice(t));
    }
    Ok(total)
}

/// Analytic gradient, same layout as the tensor:
/// `2 (U U^T - Y) U + lambda U + tau * sum_neighbours (U - U_nb)`.
pub fn objective_gradient(tensor: &EmbeddingTensor, ys: &[SymCsr], lambda: f64, tau: f64) -> Result<EmbeddingTensor> {
    check_shapes(tensor, ys)?;
    let (n, k) = (tensor.n, tensor.k);
    let mut grad = EmbeddingTensor::zeros(tensor.slices, n, k);
    for (t, y) in ys.iter().enumerate() {
        let u = tensor.slice(t);
        let yu = y.mul_dense(u, k);
        let g = gram(u, k);
        let prev = (t > 0).then(|| tensor.slice(t - 1));
        let next = (t + 1 < tensor.slices).then(|| tensor.slice(t + 1));
        par::for_each_row(grad.slice_mut(t), k, |i, out| {
            let ui = &u[i * k..(i + 1) * k];
            for c in 0..k {
                let ugc: f64 = (0..k).map(|a| ui[a] * g[a * k + c]).sum();
                let mut v = 2.0 * (ugc - yu[i * k + c]) + lambda * ui[c];
                if let Some(p) = prev {
                    v += tau * (ui[c] - p[i * k + c]);
                }
                if let Some(nx) = next {
                    v += tau * (ui[c] - nx[i * k + c]);
                }
                out[c] = v;
            }
        });
    }
    Ok(grad)
}

/// Per-sweep bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    pub objective_before: f64,
    pub objective_after: f64,
    /// Block updates rejected after exhausting step halvings.
    pub rejected_blocks: usize,
}

/// Solve `X A = B` for symmetric positive definite `A` (`k x k`) and
/// row-major `B` (`n x k`).
fn solve_right_spd(a: &[f64], b: &[f64], k: usize, slice: usize) -> Result<Vec<f64>> {
    let a = DMatrix::from_row_slice(k, k, a);
    let chol = a.cholesky().ok_or(Error::Singular { slice })?;
    let mut out = vec![0.0; b.len()];
    // A is symmetric, so each row x_i solves A x_i = b_i.
    par::for_each_row(&mut out, k, |i, row| {
        let rhs = DVector::from_row_slice(&b[i * k..(i + 1) * k]);
        let x = chol.solve(&rhs);
        row.copy_from_slice(x.as_slice());
    });
    Ok(out)
}

/// One linearized block update of slice `t`. Returns whether the update
/// was accepted.
fn update_block(tensor: &mut EmbeddingTensor, ys: &[SymCsr], t: usize, config: &TrainConfig) -> Result<bool> {
    let (n, k) = (tensor.n, tensor.k);
    let (lambda, tau) = (config.lambda, config.tau);
    let y = &ys[t];
    let y_sq = y.frobenius_sq();
    let u_hat = tensor.slice(t).to_vec();
    let yu_hat = y.mul_dense(&u_hat, k);

    let has_prev = t > 0;
    let has_next = t + 1 < tensor.slices;
    let neighbours = has_prev as usize + has_next as usize;

    let mut system = gram(&u_hat, k);
    system.iter_mut().for_each(|g| *g *= 2.0);
    for a in 0..k {
        system[a * k + a] += lambda + neighbours as f64 * tau;
    }
    let mut rhs: Vec<f64> = yu_hat.iter().map(|v| 2.0 * v).collect();
    if tau != 0.0 {
        for (s, present) in [(t.wrapping_sub(1), has_prev), (t + 1, has_next)] {
            if present {
                rhs.iter_mut().zip(tensor.slice(s)).for_each(|(r, v)| *r += tau * v);
            }
        }
    }
    let solved = solve_right_spd(&system, &rhs, k, t)?;
    if solved.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { slice: t });
    }

    let direction: Vec<f64> = solved.iter().zip(&u_hat).map(|(s, u)| s - u).collect();
    let y_dir = y.mul_dense(&direction, k);
    let before = local_objective(tensor, t, &u_hat, &yu_hat, y_sq, lambda, tau);

    let mut step = config.initial_step;
    let mut trial = vec![0.0; n * k];
    let mut y_trial = vec![0.0; n * k];
    for _ in 0..=config.max_halvings {
        for i in 0..n * k {
            trial[i] = u_hat[i] + step * direction[i];
            y_trial[i] = yu_hat[i] + step * y_dir[i];
        }
        let after = local_objective(tensor, t, &trial, &y_trial, y_sq, lambda, tau);
        if !after.is_finite() {
            return Err(Error::NonFinite { slice: t });
        }
        if after <= before {
            tensor.slice_mut(t).copy_from_slice(&trial);
            return Ok(true);
        }
        step *= 0.5;
    }
    Ok(false)
}

/// One pass of block updates over `t = 0..T`. The objective never
/// increases: block steps that would raise it are rejected.
pub fn sweep(tensor: &mut EmbeddingTensor, ys: &[SymCsr], config: &TrainConfig) -> Result<SweepStats> {
    config.validate()?;
    check_shapes(tensor, ys)?;
    if config.k != tensor.k {
        return Err(Error::ShapeMismatch(format!("config k={} but tensor k={}", config.k, tensor.k)));
    }
    let objective_before = objective(tensor, ys, config.lambda, config.tau)?;
    let mut rejected_blocks = 0;
    for t in 0..tensor.slices {
        if !update_block(tensor, ys, t, config)? {
            rejected_blocks += 1;
        }
    }
    let objective_after = objective(tensor, ys, config.lambda, config.tau)?;
    Ok(SweepStats {
        objective_before,
        objective_after,
        rejected_blocks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub tensor: EmbeddingTensor,
    /// Objective at initialization followed by its value after each sweep.
    pub objective_log: Vec<f64>,
}

/// Run `config.iterations` sweeps starting from `tensor`.
pub fn train_from(mut tensor: EmbeddingTensor, ys: &[SymCsr], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    check_shapes(&tensor, ys)?;
    let mut objective_log = vec![objective(&tensor, ys, config.lambda, config.tau)?];
    for it in 0..config.iterations {
        let stats = sweep(&mut tensor, ys, config)?;
        log::debug!(
            "sweep {}: objective {:.6e} -> {:.6e} ({} rejected)",
            it + 1,
            stats.objective_before,
            stats.objective_after,
            stats.rejected_blocks
        );
        objective_log.push(stats.objective_after);
    }
    Ok(Trained { tensor, objective_log })
}

/// Seeded Gaussian init followed by `config.iterations` sweeps.
pub fn train(ys: &[SymCsr], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    let n = ys.first().ok_or_else(|| Error::InvalidArgument("no target matrices".into()))?.n();
    let tensor = init_embeddings(ys.len(), n, config.k, config.seed, config.scale())?;
    train_from(tensor, ys, config)
}

const MAGIC: &[u8; 4] = b"DYNE";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 32;

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl EmbeddingTensor {
    /// Little-endian binary encoding: magic, version, `T n k`, vocabulary
    /// fingerprint, values, then a 64-bit checksum of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 8 + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.slices, self.n, self.k] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.fingerprint);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let (slices, n, k) = (word(8) as usize, word(12) as usize, word(16) as usize);
        let values = slices as u64 * n as u64 * k as u64;
        let expected = HEADER_LEN as u64 + values * 8 + 8;
        let found = bytes.len() as u64;
        if found < expected {
            return Err(Error::Truncated { expected, found });
        }
        if found > expected {
            return Err(Error::malformed("embedding file", format!("{} trailing bytes", found - expected)));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if checksum(body) != stored {
            return Err(Error::BadChecksum);
        }
        let fingerprint: [u8; 32] = bytes[20..52].try_into().unwrap();
        let data: Vec<f64> = body[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(EmbeddingTensor::from_data(slices, n, k, data)?.with_fingerprint(fingerprint))
    }
}

pub fn save_embeddings(tensor: &EmbeddingTensor, path: &Path) -> Result<()> {
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTensor::from_bytes(&bytes)
}
