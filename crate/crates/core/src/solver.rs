//! The GQ-μ alternating solver.
//!
//! All linear algebra works on mode-3 matricizations: `S(3)` is N×L, `Z_m(3)` is
//! P×L and `Z_h(3)` is M×L, with pixel column `l1 + l2·L1`. The objective is
//!
//! ```text
//! ½‖Z_m(3) − D·A·S(3)‖² + ½‖Z_h(3) − A·S(3)‖² + λ1‖S‖₁ + λ2/2‖S − S_qu‖² + MV(A)
//! ```
//!
//! minimized over `S ≥ 0` by ADMM (S-update, soft-threshold, scaled dual) and over
//! `A ≥ 0` by one Kronecker-structured linear solve per outer iteration.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::augment::{augment, determine_tau, Denoiser};
use crate::error::{Error, Result};
use crate::geometry::{simplex_center, sparsity_weights, MvRegularizer, MvVariant, WssContext};
use crate::prior::{ls_prior, qdip_train, PriorKind, QdipConfig};
use crate::tensor::{fold3, kron, mode3_matricize, soft_threshold, Cholesky, Mat, Tensor3};

/// Iterations of the projected-gradient abundance initializer.
pub const NNLS_ITERS: usize = 500;
/// Iterations of the capped-simplex projection inside [`snpa_init`].
pub const SNPA_INNER_ITERS: usize = 300;
/// Pixel count at which the automatic scale equals 1e4.
pub const SCALE_REFERENCE_PIXELS: f64 = 65536.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Initializer {
    /// Successive nonnegative projection.
    #[default]
    Snpa,
    /// Orthogonal successive projection.
    Spa,
}

impl fmt::Display for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Initializer::Snpa => "snpa",
            Initializer::Spa => "spa",
        })
    }
}

impl FromStr for Initializer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "snpa" => Ok(Initializer::Snpa),
            "spa" => Ok(Initializer::Spa),
            other => Err(Error::Config(format!("unknown initializer '{other}' (expected snpa or spa)"))),
        }
    }
}

/// Multiplier applied to λ3† and λ4†.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Scale {
    /// `1e4 · L / 65536` for an image of L pixels.
    #[default]
    Auto,
    Fixed(f64),
}

impl Scale {
    pub fn resolve(self, pixels: usize) -> f64 {
        match self {
            Scale::Auto => 1e4 * pixels as f64 / SCALE_REFERENCE_PIXELS,
            Scale::Fixed(v) => v,
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scale::Auto => f.write_str("auto"),
            Scale::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Scale::Auto);
        }
        s.parse::<f64>()
            .map(Scale::Fixed)
            .map_err(|_| Error::Config(format!("scale must be 'auto' or a number, got '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3_dag: f64,
    pub lambda4_dag_init: f64,
    pub lambda4_growth: f64,
    pub scale: Scale,
    pub mu: f64,
    pub outer_iters: usize,
    pub admm_iters: usize,
    pub prior: PriorKind,
    /// QDIP settings; its `seed` is replaced by [`SolverConfig::seed`].
    pub qdip: QdipConfig,
    pub denoiser: Denoiser,
    pub mv_variant: MvVariant,
    pub n_sources: usize,
    pub seed: u64,
    /// Split factor; `None` picks the smallest τ with τP ≥ N.
    pub tau: Option<usize>,
    pub initializer: Initializer,
    /// Recompute the shrinkage weights from the current S every outer iteration.
    pub recompute_weights: bool,
    /// Stop the ADMM loop early once ‖S_{q+1} − S_q‖_F ≤ tol·‖S_q‖_F.
    pub tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1e-2,
            lambda3_dag: 1e-1,
            lambda4_dag_init: 1e-2,
            lambda4_growth: 1.2,
            scale: Scale::Auto,
            mu: 1.0,
            outer_iters: 5,
            admm_iters: 20,
            prior: PriorKind::Qdip,
            qdip: QdipConfig::default(),
            denoiser: Denoiser::default(),
            mv_variant: MvVariant::Wss,
            n_sources: 0,
            seed: 0,
            tau: None,
            initializer: Initializer::Snpa,
            recompute_weights: false,
            tol: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3_dag", self.lambda3_dag),
            ("lambda4_dag_init", self.lambda4_dag_init),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.lambda4_growth > 0.0 && self.lambda4_growth.is_finite()) {
            return Err(Error::Config("lambda4_growth must be > 0".into()));
        }
        if let Scale::Fixed(v) = self.scale {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("scale must be finite and >= 0, got {v}")));
            }
        }
        if self.outer_iters == 0 || self.admm_iters == 0 {
            return Err(Error::Config("iteration counts must be >= 1".into()));
        }
        if self.n_sources == 0 {
            return Err(Error::Config("n_sources must be >= 1".into()));
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0) {
                return Err(Error::Config("tol must be >= 0".into()));
            }
        }
        Ok(())
    }
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Successive projection: picks `n` pixel spectra of maximal norm in the orthogonal
/// complement of the previous picks. Returns the matrix and the chosen pixel
/// columns (in `l1 + l2·L1` order).
pub fn spa_init(z_h: &Tensor3, n: usize) -> Result<(Mat, Vec<usize>)> {
    let x = mode3_matricize(z_h);
    let (m, l) = x.shape();
    if n == 0 || m < n || l < n {
        return Err(Error::Config(format!(
            "successive projection needs 1 <= N <= min(bands, pixels); N = {n}, {m} bands, {l} pixels"
        )));
    }
    let picks = spa_select(&x, n, false)?;
    Ok((x.select_cols(&picks), picks))
}

/// Column selection behind [`spa_init`]. With `relaxed`, selection keeps going on
/// whatever residual is left after the span is exhausted (noise or round-off) and
/// only stops on an exactly zero residual.
pub(crate) fn spa_select(x: &Mat, n: usize, relaxed: bool) -> Result<Vec<usize>> {
    let (m, l) = x.shape();
    let mut r = x.clone();
    let norms0: Vec<f64> = (0..l).map(|j| col_sq_norm(&r, j)).collect();
    let floor = if relaxed {
        0.0
    } else {
        1e-20 * norms0.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE)
    };
    let mut picks = Vec::with_capacity(n);
    for k in 0..n {
        let norms: Vec<f64> = (0..l).map(|j| col_sq_norm(&r, j)).collect();
        let j = argmax_first(&norms);
        if norms[j] <= floor {
            return Err(Error::Degenerate(format!(
                "data rank collapsed after {k} of {n} successive projections; \
                 try initializer = snpa or fewer sources"
            )));
        }
        picks.push(j);
        let u: Vec<f64> = r.col(j).iter().map(|v| v / norms[j].sqrt()).collect();
        for c in 0..l {
            let proj: f64 = (0..m).map(|i| u[i] * r.get(i, c)).sum();
            for i in 0..m {
                r.set(i, c, r.get(i, c) - proj * u[i]);
            }
        }
    }
    Ok(picks)
}

fn col_sq_norm(x: &Mat, j: usize) -> f64 {
    (0..x.rows()).map(|i| x.get(i, j).powi(2)).sum()
}

/// Euclidean projection onto `{h ≥ 0, Σh ≤ 1}`.
pub fn project_capped_simplex(v: &mut [f64]) {
    let pos: f64 = v.iter().map(|x| x.max(0.0)).sum();
    if pos <= 1.0 {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
        return;
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cs = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cs += ui;
        let t = (cs - 1.0) / (i + 1) as f64;
        if ui > t {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Successive nonnegative projection: the residual of a pixel is its distance to
/// the convex hull of the origin and the spectra picked so far.
pub fn snpa_init(z_h: &Tensor3, n: usize) -> Result<(Mat, Vec<usize>)> {
    let x = mode3_matricize(z_h);
    let (m, l) = x.shape();
    if n == 0 || l < n {
        return Err(Error::Config(format!("SNPA needs 1 <= N <= pixels; N = {n}, {l} pixels")));
    }
    let norms0: Vec<f64> = (0..l).map(|j| col_sq_norm(&x, j)).collect();
    let floor = 1e-20 * norms0.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut picks = vec![argmax_first(&norms0)];
    if norms0[picks[0]] <= floor {
        return Err(Error::Degenerate("all pixels are zero".into()));
    }
    while picks.len() < n {
        let w = x.select_cols(&picks);
        let k = picks.len();
        let g = w.transpose().matmul(&w)?;
        let lip = g.max_eigenvalue_psd();
        let step = 1.0 / lip;
        let wtx = w.transpose().matmul(&x)?;
        let mut resid = vec![0.0; l];
        let mut h = vec![0.0; k];
        for (j, r) in resid.iter_mut().enumerate() {
            h.iter_mut().for_each(|v| *v = 0.0);
            for _ in 0..SNPA_INNER_ITERS {
                let gh = g.matvec(&h)?;
                for i in 0..k {
                    h[i] -= step * (gh[i] - wtx.get(i, j));
                }
                project_capped_simplex(&mut h);
            }
            let wh = w.matvec(&h)?;
            *r = (0..m).map(|i| (x.get(i, j) - wh[i]).powi(2)).sum();
        }
        let j = argmax_first(&resid);
        if resid[j] <= floor {
            return Err(Error::Degenerate(format!(
                "every pixel lies in the hull of the first {k} picks; fewer than {n} sources present"
            )));
        }
        picks.push(j);
    }
    Ok((x.select_cols(&picks), picks))
}

/// Per-pixel NNLS by projected gradient from the uniform start `1/N`, with step
/// `1/λmax(A0ᵀA0)`. Also returns the objective `½‖Z_h(3) − A0·S(3)‖²` before the
/// first and after every iteration when `trace` is set.
fn nnls_core(z_h: &Tensor3, a0: &Mat, iters: usize, trace: bool) -> Result<(Tensor3, Vec<f64>)> {
    let (l1, l2, m) = z_h.dims();
    if a0.rows() != m {
        return Err(Error::Config(format!("A0 has {} rows, Z_h has {m} bands", a0.rows())));
    }
    let n = a0.cols();
    let g = a0.transpose().matmul(a0)?;
    let lip = g.max_eigenvalue_psd();
    if !(lip > 0.0) {
        return Err(Error::Degenerate("A0 is zero; abundances undefined".into()));
    }
    let step = 1.0 / lip;
    let x = mode3_matricize(z_h);
    let atx = a0.transpose().matmul(&x)?;
    let mut s = Mat::new(n, l1 * l2, vec![1.0 / n as f64; n * l1 * l2])?;
    let objective = |s: &Mat| -> Result<f64> { Ok(0.5 * x.sub(&a0.matmul(s)?)?.frobenius_norm().powi(2)) };
    let mut values = Vec::new();
    if trace {
        values.push(objective(&s)?);
    }
    for _ in 0..iters {
        let gs = g.matmul(&s)?;
        for (v, (gv, b)) in s.data_mut().iter_mut().zip(gs.data().iter().zip(atx.data())) {
            *v = (*v - step * (gv - b)).max(0.0);
        }
        if trace {
            values.push(objective(&s)?);
        }
    }
    Ok((fold3(&s, l1, l2)?, values))
}

pub fn nnls_abundances_traced(z_h: &Tensor3, a0: &Mat, iters: usize) -> Result<(Tensor3, Vec<f64>)> {
    nnls_core(z_h, a0, iters, true)
}

pub fn nnls_abundances(z_h: &Tensor3, a0: &Mat) -> Result<Tensor3> {
    Ok(nnls_core(z_h, a0, NNLS_ITERS, false)?.0)
}

/// The fixed parts of the S-subproblem for a given `A`.
#[derive(Debug, Clone)]
pub struct SSubproblem {
    chol: Cholesky,
    /// `AᵀDᵀZ_m(3) + AᵀZ_h(3) + λ2·S_qu(3)`
    p: Mat,
    mu: f64,
    l1: usize,
    l2: usize,
}

impl SSubproblem {
    pub fn new(a: &Mat, z_m: &Tensor3, z_h: &Tensor3, d: &Mat, s_qu: &Tensor3, lambda2: f64, mu: f64) -> Result<Self> {
        let (l1, l2, p_bands) = z_m.dims();
        let (h1, h2, m) = z_h.dims();
        let n = a.cols();
        if (h1, h2) != (l1, l2) || a.rows() != m || d.shape() != (p_bands, m) || s_qu.dims() != (l1, l2, n) {
            return Err(Error::Config(format!(
                "S-update shapes do not conform: A {:?}, D {:?}, Z_m {:?}, Z_h {:?}, S_qu {:?}",
                a.shape(),
                d.shape(),
                z_m.dims(),
                z_h.dims(),
                s_qu.dims()
            )));
        }
        if !(mu >= 0.0 && lambda2 >= 0.0) {
            return Err(Error::Config("S-update needs mu >= 0 and lambda2 >= 0".into()));
        }
        let da = d.matmul(a)?;
        let at = a.transpose();
        let dat = da.transpose();
        let mut r = dat.matmul(&da)?.add(&at.matmul(a)?)?;
        for i in 0..n {
            r.set(i, i, r.get(i, i) + lambda2 + mu);
        }
        let chol = Cholesky::factor(&r)?;
        let p = dat
            .matmul(&mode3_matricize(z_m))?
            .add(&at.matmul(&mode3_matricize(z_h))?)?
            .add(&mode3_matricize(s_qu).scale(lambda2))?;
        Ok(Self { chol, p, mu, l1, l2 })
    }

    /// Unprojected minimizer given `T = Y − V` (matricized, N×L).
    pub fn solve_pre(&self, t: &Mat) -> Result<Mat> {
        self.chol.solve(&self.p.add(&t.scale(self.mu))?)
    }

    /// Projected S for the current `Y`, `V`.
    pub fn update(&self, y: &Tensor3, v: &Tensor3) -> Result<Tensor3> {
        let t = mode3_matricize(y).sub(&mode3_matricize(v))?;
        fold3(&self.solve_pre(&t)?.project_nonneg(), self.l1, self.l2)
    }
}

/// Pre- and post-projection result of one S-update.
#[derive(Debug, Clone)]
pub struct SUpdate {
    /// Unprojected minimizer, matricized N×L.
    pub pre: Mat,
    pub s: Tensor3,
}

/// One closed-form S-update.
#[allow(clippy::too_many_arguments)]
pub fn admm_update_s(
    a: &Mat,
    z_m: &Tensor3,
    z_h: &Tensor3,
    d: &Mat,
    s_qu: &Tensor3,
    y: &Tensor3,
    v: &Tensor3,
    lambda2: f64,
    mu: f64,
) -> Result<SUpdate> {
    let sub = SSubproblem::new(a, z_m, z_h, d, s_qu, lambda2, mu)?;
    if y.dims() != s_qu.dims() || v.dims() != s_qu.dims() {
        return Err(Error::Config("Y and V must match the abundance shape".into()));
    }
    let pre = sub.solve_pre(&mode3_matricize(y).sub(&mode3_matricize(v))?)?;
    let (l1, l2, _) = y.dims();
    let s = fold3(&pre.project_nonneg(), l1, l2)?;
    Ok(SUpdate { pre, s })
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub s: Tensor3,
    /// Final sparse copy.
    pub y: Tensor3,
    pub v: Tensor3,
    /// `‖Y − S‖_F` after every inner iteration.
    pub residuals: Vec<f64>,
}

/// Inner ADMM loop started from `Y = S_k`, `V = 0`.
#[allow(clippy::too_many_arguments)]
pub fn admm_solve(
    a: &Mat,
    z_m: &Tensor3,
    z_h: &Tensor3,
    d: &Mat,
    s_qu: &Tensor3,
    s_k: &Tensor3,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    iters: usize,
    tol: Option<f64>,
) -> Result<AdmmOutcome> {
    let sub = SSubproblem::new(a, z_m, z_h, d, s_qu, lambda2, mu)?;
    let (l1, l2, n) = s_k.dims();
    if s_k.dims() != s_qu.dims() {
        return Err(Error::Config("S_k must match the abundance shape".into()));
    }
    let mut s = s_k.clone();
    let mut y = s_k.clone();
    let mut v = Tensor3::zeros(l1, l2, n);
    let mut residuals = Vec::with_capacity(iters);
    for _ in 0..iters {
        let s_next = sub.update(&y, &v)?;
        let change = s_next.sub(&s)?.frobenius_norm();
        let base = s.frobenius_norm();
        s = s_next;
        y = soft_threshold(&s.add(&v)?, lambda1 / mu)?;
        let r = y.sub(&s)?;
        v = v.sub(&r)?;
        residuals.push(r.frobenius_norm());
        if let Some(t) = tol {
            if change <= t * base {
                break;
            }
        }
    }
    Ok(AdmmOutcome { s, y, v, residuals })
}

/// Pre- and post-projection result of one A-update.
#[derive(Debug, Clone)]
pub struct AUpdate {
    pub pre: Mat,
    pub a: Mat,
}

/// Solves the Kronecker-structured normal equations of the A-subproblem and
/// projects the solution to the nonnegative orthant.
pub fn update_a(s: &Tensor3, z_m: &Tensor3, z_h: &Tensor3, d: &Mat, reg: &MvRegularizer) -> Result<AUpdate> {
    let (l1, l2, n) = s.dims();
    let m = z_h.channels();
    if z_m.dims().0 != l1 || z_m.dims().1 != l2 || z_h.dims().0 != l1 || z_h.dims().1 != l2 {
        return Err(Error::Config("S, Z_m and Z_h must share the spatial size".into()));
    }
    if d.shape() != (z_m.channels(), m) || reg.ctx.a_prev.shape() != (m, n) {
        return Err(Error::Config(format!(
            "A-update shapes do not conform: D {:?}, A^k {:?}, M = {m}, N = {n}",
            d.shape(),
            reg.ctx.a_prev.shape()
        )));
    }
    let s3 = mode3_matricize(s);
    let sst = s3.matmul_t(&s3)?;
    let dtd = d.transpose().matmul(d)?;
    let (q, k) = reg.quadratic_form();
    let j1 = kron(&sst, &dtd).add(&kron(&sst, &Mat::identity(m)))?.add(&kron(&q, &Mat::identity(m)))?;
    let rhs = d
        .transpose()
        .matmul(&mode3_matricize(z_m).matmul_t(&s3)?)?
        .add(&mode3_matricize(z_h).matmul_t(&s3)?)?
        .add(&k)?;
    let mut x = rhs.vec_cols();
    Cholesky::factor(&j1)?.solve_vec_in_place(&mut x);
    let pre = Mat::from_vec_cols(m, n, &x)?;
    let a = pre.project_nonneg();
    Ok(AUpdate { pre, a })
}

/// Objective value (with the regularizer's current anchor).
#[allow(clippy::too_many_arguments)]
pub fn objective(
    z_m: &Tensor3,
    z_h: &Tensor3,
    d: &Mat,
    a: &Mat,
    s: &Tensor3,
    s_qu: &Tensor3,
    lambda1: f64,
    lambda2: f64,
    reg: &MvRegularizer,
) -> Result<f64> {
    let s3 = mode3_matricize(s);
    let fit_h = mode3_matricize(z_h).sub(&a.matmul(&s3)?)?.frobenius_norm().powi(2);
    let fit_m = mode3_matricize(z_m).sub(&d.matmul(a)?.matmul(&s3)?)?.frobenius_norm().powi(2);
    let prior = s.sub(s_qu)?.frobenius_norm().powi(2);
    Ok(0.5 * fit_m + 0.5 * fit_h + lambda1 * s.l1_norm() + 0.5 * lambda2 * prior + reg.value(a)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub lambda4_dag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    /// Objective at the initialization.
    pub initial_objective: f64,
    /// Inner residual traces, one per outer iteration.
    pub admm_residuals: Vec<Vec<f64>>,
    pub prior: PriorKind,
    /// Whether a circuit and decoder were built.
    pub quantum_constructed: bool,
    pub qdip_losses: Vec<f64>,
    pub initializer: Initializer,
    /// Pixel columns picked by the initializer (`l1 + l2·L1`).
    pub init_pixels: Vec<usize>,
    pub tau: usize,
    pub scale: f64,
    pub clipped_entries: usize,
    /// Wall time; left out of serialized output so emitted files stay reproducible.
    #[serde(skip)]
    pub runtime_sec: f64,
}

#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub b_star: Mat,
    pub s_star: Tensor3,
    pub a_star: Mat,
    pub z_h: Tensor3,
    pub d: Mat,
    /// Sparse ADMM copy from the last outer iteration.
    pub y_final: Tensor3,
    pub a0: Mat,
    pub s0: Tensor3,
    pub s_qu: Tensor3,
    pub diagnostics: Diagnostics,
}

/// Full pipeline: augmentation, initialization, prior, alternating updates.
pub fn gqmu_run(z_m: &Tensor3, cfg: &SolverConfig) -> Result<UnmixResult> {
    let start = Instant::now();
    cfg.validate()?;
    let (l1, l2, p) = z_m.dims();
    let n = cfg.n_sources;
    if z_m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("MSI contains non-finite values".into()));
    }
    if p < 2 {
        return Err(Error::Config(format!("need at least 2 MSI bands, got {p}")));
    }
    let tau = cfg.tau.unwrap_or_else(|| determine_tau(p, n));
    if n > tau * p {
        return Err(Error::Config(format!("N = {n} exceeds tau*P = {}", tau * p)));
    }
    if n > l1 * l2 {
        return Err(Error::Config(format!("N = {n} exceeds the pixel count {}", l1 * l2)));
    }
    let aug = augment(z_m, tau, &cfg.denoiser)?;
    let z_h = aug.z_h;
    let d = aug.split.d;

    let (a0, init_pixels) = match cfg.initializer {
        Initializer::Snpa => snpa_init(&z_h, n)?,
        Initializer::Spa => spa_init(&z_h, n)?,
    };
    let s0 = nnls_abundances(&z_h, &a0)?;

    let (s_qu, qdip_losses, quantum_constructed) = match cfg.prior {
        PriorKind::Ls => (ls_prior(&s0), Vec::new(), false),
        PriorKind::Qdip => {
            let qcfg = QdipConfig { seed: cfg.seed, ..cfg.qdip.clone() };
            let out = qdip_train(&z_h, &a0, &qcfg)?;
            (out.s_qu, out.losses, true)
        }
    };

    let mut weights = sparsity_weights(&s0)?;
    let center = simplex_center(&a0);
    let scale = cfg.scale.resolve(l1 * l2);
    let mut lambda4_dag = cfg.lambda4_dag_init;
    let reg_for = |w: &[f64], l4: f64, a_prev: &Mat| {
        MvRegularizer::new(
            cfg.mv_variant,
            WssContext {
                w: w.to_vec(),
                c: center.clone(),
                lambda3: cfg.lambda3_dag * scale,
                lambda4: l4 * scale,
                a_prev: a_prev.clone(),
            },
        )
    };

    let mut a = a0.clone();
    let mut s = s0.clone();
    let mut y_final = s0.clone();
    let initial_objective =
        objective(z_m, &z_h, &d, &a, &s, &s_qu, cfg.lambda1, cfg.lambda2, &reg_for(&weights, lambda4_dag, &a))?;
    let mut records = Vec::with_capacity(cfg.outer_iters);
    let mut admm_residuals = Vec::with_capacity(cfg.outer_iters);
    for k in 0..cfg.outer_iters {
        let admm = admm_solve(
            &a,
            z_m,
            &z_h,
            &d,
            &s_qu,
            &s,
            cfg.lambda1,
            cfg.lambda2,
            cfg.mu,
            cfg.admm_iters,
            cfg.tol,
        )?;
        s = admm.s;
        y_final = admm.y;
        if cfg.recompute_weights {
            if let Ok(w) = sparsity_weights(&s) {
                weights = w;
            }
        }
        lambda4_dag *= cfg.lambda4_growth;
        let reg = reg_for(&weights, lambda4_dag, &a);
        a = update_a(&s, z_m, &z_h, &d, &reg)?.a;
        let obj = objective(z_m, &z_h, &d, &a, &s, &s_qu, cfg.lambda1, cfg.lambda2, &reg)?;
        if !obj.is_finite() {
            return Err(Error::Degenerate(format!("objective became non-finite at outer iteration {k}")));
        }
        records.push(IterationRecord {
            iteration: k + 1,
            objective: obj,
            primal_residual: admm.residuals.last().copied().unwrap_or(0.0),
            lambda4_dag,
        });
        admm_residuals.push(admm.residuals);
    }
    let b_star = d.matmul(&a)?;
    let diagnostics = Diagnostics {
        iterations: records,
        initial_objective,
        admm_residuals,
        prior: cfg.prior,
        quantum_constructed,
        qdip_losses,
        initializer: cfg.initializer,
        init_pixels,
        tau,
        scale,
        clipped_entries: aug.split.clipped,
        runtime_sec: start.elapsed().as_secs_f64(),
    };
    Ok(UnmixResult { b_star, s_star: s, a_star: a, z_h, d, y_final, a0, s0, s_qu, diagnostics })
}
