//! Desk-scale statistics: product-moment correlation and least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("series lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub residual_ss: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }
}

const RANK_TOL: f64 = 1e-10;

/// Least squares through a thin QR decomposition of the design matrix.
/// `rows` are observations; every row must have `names.len()` columns.
pub fn ols_fit(rows: &[Vec<f64>], y: &[f64], names: &[&str]) -> Result<OlsFit> {
    let p = names.len();
    let n = rows.len();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} design rows, {} outcomes", y.len())));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::ShapeMismatch(format!("row of width {}, expected {p}", r.len())));
    }
    if p == 0 || n < p {
        return Err(Error::RankDeficient);
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= RANK_TOL * max_diag) {
        return Err(Error::RankDeficient);
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    let resid = &yv - &x * &beta;
    let residual_ss = resid.dot(&resid);
    let dof = n.saturating_sub(p);
    let sigma2 = if dof > 0 { residual_ss / dof as f64 } else { f64::NAN };
    let r_inv = r.try_inverse().ok_or(Error::RankDeficient)?;
    let cov = &r_inv * r_inv.transpose();
    Ok(OlsFit {
        names: names.iter().map(|s| s.to_string()).collect(),
        estimates: beta.iter().copied().collect(),
        std_errors: (0..p).map(|i| (sigma2 * cov[(i, i)]).sqrt()).collect(),
        residual_ss,
        n,
    })
}
