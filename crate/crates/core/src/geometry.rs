//! Simplex-geometry regularizers on the hyperspectral endmember matrix `A` (M×N).
//!
//! The weighted simplex shrinkage (WSS) term pulls every endmember towards the
//! simplex center `c` with a weight that grows with the sparsity of its abundance
//! map, and anchors `A` to the previous iterate:
//!
//! ```text
//! WSS(A) = λ3/2 · Σ_n w_n ‖a_n − c‖² + λ4/2 · ‖A − Aᵏ‖²_F
//! ```
//!
//! The quadratic minimum-volume surrogates (Center, TV, SSD, nWSS) are provided for
//! ablation. Every variant is a quadratic in `A` whose gradient can be written as
//! `A·Q − K`; [`MvRegularizer::quadratic_form`] exposes `(Q, K)` for the A-update.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{sq_norm, Mat, Tensor3};

/// Shrinkage weights `w = softmax(L'_1, …, L'_N)` with `L_n = 1/‖S0_n‖₁`, `L' = L / max L`.
pub fn sparsity_weights(s0: &Tensor3) -> Result<Vec<f64>> {
    let n = s0.channels();
    let mut recip = Vec::with_capacity(n);
    for k in 0..n {
        let l1: f64 = s0.band(k).iter().map(|v| v.abs()).sum();
        if !(l1 > 0.0) || !l1.is_finite() {
            return Err(Error::Degenerate(format!(
                "abundance channel {k} has zero l1 norm; sparsity weight undefined"
            )));
        }
        recip.push(1.0 / l1);
    }
    let max = recip.iter().cloned().fold(f64::MIN, f64::max);
    Ok(softmax(&recip.iter().map(|l| l / max).collect::<Vec<_>>()))
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean of the columns of `A0`.
pub fn simplex_center(a0: &Mat) -> Vec<f64> {
    let n = a0.cols().max(1) as f64;
    (0..a0.rows()).map(|r| a0.row(r).iter().sum::<f64>() / n).collect()
}

/// Parameters of the WSS term.
#[derive(Debug, Clone)]
pub struct WssContext {
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    /// Effective weights (already multiplied by the scale).
    pub lambda3: f64,
    pub lambda4: f64,
    pub a_prev: Mat,
}

impl WssContext {
    fn check(&self, a: &Mat) -> Result<()> {
        let (m, n) = a.shape();
        if self.w.len() != n || self.c.len() != m || self.a_prev.shape() != (m, n) {
            return Err(invalid(format!(
                "WSS context (w: {}, c: {}, A^k: {:?}) does not conform to A {m}x{n}",
                self.w.len(),
                self.c.len(),
                self.a_prev.shape()
            )));
        }
        Ok(())
    }

    /// Same context with all weights set to one.
    pub fn unweighted(&self) -> WssContext {
        WssContext { w: vec![1.0; self.w.len()], ..self.clone() }
    }
}

pub fn wss_value(a: &Mat, ctx: &WssContext) -> Result<f64> {
    ctx.check(a)?;
    let (m, n) = a.shape();
    let mut shrink = 0.0;
    for j in 0..n {
        let d: f64 = (0..m).map(|i| (a.get(i, j) - ctx.c[i]).powi(2)).sum();
        shrink += ctx.w[j] * d;
    }
    let anchor = sq_norm(a.sub(&ctx.a_prev)?.data());
    Ok(0.5 * ctx.lambda3 * shrink + 0.5 * ctx.lambda4 * anchor)
}

/// `λ3 (A − c1ᵀ) Diag(w) + λ4 (A − Aᵏ)`.
pub fn wss_grad(a: &Mat, ctx: &WssContext) -> Result<Mat> {
    ctx.check(a)?;
    let (m, n) = a.shape();
    Ok(Mat::from_fn(m, n, |i, j| {
        ctx.lambda3 * (a.get(i, j) - ctx.c[i]) * ctx.w[j]
            + ctx.lambda4 * (a.get(i, j) - ctx.a_prev.get(i, j))
    }))
}

/// Minimum-volume regularizer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MvVariant {
    #[default]
    Wss,
    Nwss,
    Center,
    Tv,
    Ssd,
}

impl MvVariant {
    pub const ALL: [MvVariant; 5] =
        [MvVariant::Wss, MvVariant::Nwss, MvVariant::Center, MvVariant::Tv, MvVariant::Ssd];

    /// Whether the variant carries the `λ4` anchor to the previous iterate.
    pub fn anchored(self) -> bool {
        matches!(self, MvVariant::Wss | MvVariant::Nwss)
    }
}

impl fmt::Display for MvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MvVariant::Wss => "wss",
            MvVariant::Nwss => "nwss",
            MvVariant::Center => "center",
            MvVariant::Tv => "tv",
            MvVariant::Ssd => "ssd",
        })
    }
}

impl FromStr for MvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wss" => Ok(MvVariant::Wss),
            "nwss" => Ok(MvVariant::Nwss),
            "center" => Ok(MvVariant::Center),
            "tv" => Ok(MvVariant::Tv),
            "ssd" => Ok(MvVariant::Ssd),
            "boundary" => Err(Error::Config(
                "the boundary regularizer is not supported (use wss|nwss|center|tv|ssd)".into(),
            )),
            other => Err(Error::Config(format!(
                "unknown mv variant '{other}' (use wss|nwss|center|tv|ssd)"
            ))),
        }
    }
}

/// Bare surrogate value: Center `½‖A − c1ᵀ‖²`, TV `½‖A(I − 11ᵀ/N)‖²`,
/// SSD `½Σ_{i<j}‖a_i − a_j‖²`; nWSS is [`wss_value`] with unit weights.
pub fn mv_value(a: &Mat, variant: MvVariant, ctx: &WssContext) -> Result<f64> {
    let (m, n) = a.shape();
    match variant {
        MvVariant::Wss => Err(Error::Config(
            "mv_value covers the ablation surrogates; use wss_value for WSS".into(),
        )),
        MvVariant::Nwss => wss_value(a, &ctx.unweighted()),
        MvVariant::Center => {
            if ctx.c.len() != m {
                return Err(invalid("center length does not match A"));
            }
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..n {
                    s += (a.get(i, j) - ctx.c[i]).powi(2);
                }
            }
            Ok(0.5 * s)
        }
        MvVariant::Tv => {
            let mut s = 0.0;
            for i in 0..m {
                let mean = a.row(i).iter().sum::<f64>() / n as f64;
                s += a.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            Ok(0.5 * s)
        }
        MvVariant::Ssd => {
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += (0..m).map(|r| (a.get(r, i) - a.get(r, j)).powi(2)).sum::<f64>();
                }
            }
            Ok(0.5 * s)
        }
    }
}

/// A minimum-volume regularizer as it enters the A-subproblem.
#[derive(Debug, Clone)]
pub struct MvRegularizer {
    pub variant: MvVariant,
    pub ctx: WssContext,
}

impl MvRegularizer {
    pub fn new(variant: MvVariant, ctx: WssContext) -> Self {
        Self { variant, ctx }
    }

    fn effective_ctx(&self) -> WssContext {
        match self.variant {
            MvVariant::Nwss => self.ctx.unweighted(),
            _ => self.ctx.clone(),
        }
    }

    /// Regularizer value including its trade-off weights.
    pub fn value(&self, a: &Mat) -> Result<f64> {
        match self.variant {
            MvVariant::Wss | MvVariant::Nwss => wss_value(a, &self.effective_ctx()),
            v => Ok(self.ctx.lambda3 * mv_value(a, v, &self.ctx)?),
        }
    }

    /// `(Q, K)` such that the gradient is `A·Q − K`.
    pub fn quadratic_form(&self) -> (Mat, Mat) {
        let ctx = self.effective_ctx();
        let (m, n) = ctx.a_prev.shape();
        let l3 = ctx.lambda3;
        match self.variant {
            MvVariant::Wss | MvVariant::Nwss => {
                let q = Mat::from_fn(n, n, |i, j| {
                    if i == j {
                        l3 * ctx.w[i] + ctx.lambda4
                    } else {
                        0.0
                    }
                });
                let k = Mat::from_fn(m, n, |i, j| {
                    l3 * ctx.c[i] * ctx.w[j] + ctx.lambda4 * ctx.a_prev.get(i, j)
                });
                (q, k)
            }
            MvVariant::Center => {
                (Mat::identity(n).scale(l3), Mat::from_fn(m, n, |i, _| l3 * ctx.c[i]))
            }
            MvVariant::Tv => {
                let q = Mat::from_fn(n, n, |i, j| {
                    l3 * (if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64)
                });
                (q, Mat::zeros(m, n))
            }
            MvVariant::Ssd => {
                let q = Mat::from_fn(n, n, |i, j| {
                    l3 * (if i == j { n as f64 } else { 0.0 } - 1.0)
                });
                (q, Mat::zeros(m, n))
            }
        }
    }

    pub fn grad(&self, a: &Mat) -> Result<Mat> {
        let (q, k) = self.quadratic_form();
        a.matmul(&q)?.sub(&k)
    }
}
