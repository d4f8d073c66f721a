//! Evaluation harness: synthetic ground truth, MSI synthesis, permutation-matched
//! metrics and a naive underdetermined baseline.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{Denoise, Denoiser};
use crate::error::{Error, Result};
use crate::solver::{gqmu_run, project_capped_simplex, spa_select, SolverConfig, UnmixResult};
use crate::tensor::{fold3, mode3_matricize, mode3_mul, sq_norm, Cholesky, Mat, Tensor3};

/// Landsat-like band ranges in nm.
pub const DEFAULT_RANGES: [(f64, f64); 4] = [(450.0, 520.0), (520.0, 600.0), (630.0, 690.0), (760.0, 900.0)];

/// Largest N for exhaustive permutation search.
pub const MAX_EXHAUSTIVE: usize = 9;

const MAX_TRIES: usize = 1000;
const MIN_ANGLE_DEG: f64 = 10.0;
/// Neighbouring bands may grow by at most this factor, which keeps every band
/// split nonnegative.
const MAX_BAND_RATIO: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub b_ref: Mat,
    pub s_ref: Tensor3,
    pub a_ref: Option<Mat>,
    pub wavelengths_nm: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub l1: usize,
    pub l2: usize,
    pub p: usize,
    pub n: usize,
    /// Maximum abundance of any source in a mixed pixel.
    pub purity: f64,
    pub pure_pixels: bool,
    pub noise: f64,
    /// Use the residual of `denoiser` on the clean MSI as the deviation tensor.
    pub residual_noise: bool,
    pub denoiser: Denoiser,
    /// Minimum relative distance of every endmember from the hull of the others
    /// and the origin.
    pub hull_margin: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            l1: 32,
            l2: 32,
            p: 4,
            n: 6,
            purity: 1.0,
            pure_pixels: false,
            noise: 1e-4,
            residual_noise: false,
            denoiser: Denoiser::default(),
            hull_margin: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l1 == 0 || self.l2 == 0 || self.p < 2 || self.n == 0 {
            return Err(Error::Config("synthetic data needs L1, L2, N >= 1 and P >= 2".into()));
        }
        if !(self.purity > 0.0 && self.purity <= 1.0) {
            return Err(Error::Config(format!("purity must lie in (0, 1], got {}", self.purity)));
        }
        if self.purity < 1.0 / self.n as f64 {
            return Err(Error::Config(format!("purity {} is below 1/N", self.purity)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise scale must be finite and >= 0".into()));
        }
        if self.pure_pixels && self.l1 * self.l2 < self.n {
            return Err(Error::Config("fewer pixels than sources for pure-pixel placement".into()));
        }
        if !(self.hull_margin >= 0.0) {
            return Err(Error::Config("hull margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// Angle between two vectors in radians; `None` if either is zero.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (sq_norm(a).sqrt(), sq_norm(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // 2·atan2(‖â − b̂‖, ‖â + b̂‖) stays accurate near 0 and π, unlike acos.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Relative distance of `x` from `{W h : h ≥ 0, Σh ≤ 1}`.
pub fn hull_distance(w: &Mat, x: &[f64]) -> Result<f64> {
    let nx = sq_norm(x).sqrt();
    if w.cols() == 0 {
        return Ok(1.0);
    }
    let g = w.transpose().matmul(w)?;
    let step = 1.0 / g.max_eigenvalue_psd();
    let wtx = w.transpose().matvec(x)?;
    let mut h = vec![0.0; w.cols()];
    for _ in 0..3000 {
        let gh = g.matvec(&h)?;
        for i in 0..h.len() {
            h[i] -= step * (gh[i] - wtx[i]);
        }
        project_capped_simplex(&mut h);
    }
    let wh = w.matvec(&h)?;
    let r: f64 = x.iter().zip(&wh).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(r.sqrt() / nx)
}

fn draw_spectrum(rng: &mut ChaCha8Rng, p: usize) -> Option<Vec<f64>> {
    let mut acc = 0.0;
    let mut b: Vec<f64> = (0..p)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            acc += z.abs();
            acc
        })
        .collect();
    let max = acc;
    if !(max > 0.0) {
        return None;
    }
    b.iter_mut().for_each(|v| *v /= max);
    if b.windows(2).any(|w| w[1] > MAX_BAND_RATIO * w[0]) {
        return None;
    }
    Some(b)
}

/// Smooth random endmembers with pairwise angles ≥ 10° and a hull margin.
pub fn gen_endmembers(p: usize, n: usize, hull_margin: f64, rng: &mut ChaCha8Rng) -> Result<Mat> {
    let min_angle = MIN_ANGLE_DEG.to_radians();
    for _ in 0..MAX_TRIES {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut draws = 0;
        while cols.len() < n && draws < MAX_TRIES {
            draws += 1;
            let Some(b) = draw_spectrum(rng, p) else { continue };
            if cols.iter().all(|o| spectral_angle(&b, o).is_some_and(|a| a >= min_angle)) {
                cols.push(b);
            }
        }
        if cols.len() < n {
            continue;
        }
        let b = Mat::from_fn(p, n, |i, j| cols[j][i]);
        let mut ok = true;
        for j in 0..n {
            let others: Vec<usize> = (0..n).filter(|&k| k != j).collect();
            if hull_distance(&b.select_cols(&others), &cols[j])? < hull_margin {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(b);
        }
    }
    Err(Error::Degenerate(format!(
        "could not draw {n} endmembers over {p} bands meeting the angle and hull constraints \
         in {MAX_TRIES} tries"
    )))
}

/// Dirichlet(1) abundances shrunk towards uniform so no entry exceeds `purity`.
pub fn gen_abundances(l1: usize, l2: usize, n: usize, purity: f64, rng: &mut ChaCha8Rng) -> Tensor3 {
    let px = l1 * l2;
    let u = 1.0 / n as f64;
    let mut data = vec![0.0; n * px];
    let mut s = vec![0.0; n];
    for p in 0..px {
        for v in s.iter_mut() {
            *v = rng.sample(Exp1);
        }
        let t: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= t);
        let max = s.iter().cloned().fold(0.0, f64::max);
        if max > purity {
            let k = (purity - u) / (max - u);
            s.iter_mut().for_each(|v| *v = u + k * (*v - u));
        }
        for c in 0..n {
            data[c * px + p] = s[c];
        }
    }
    Tensor3::new(l1, l2, n, data).expect("shape")
}

/// Row-major pixel index that holds the pure pixel of source `k`.
pub fn pure_pixel_index(k: usize, n: usize, pixels: usize) -> usize {
    k * pixels / n
}

/// `Z_m = max(S ×₃ B + e·N, 0)` with a standard normal `N` drawn from `seed`.
pub fn synthesize_msi(s_ref: &Tensor3, b_ref: &Mat, e: f64, seed: u64) -> Result<Tensor3> {
    let clean = mode3_mul(s_ref, b_ref)?;
    if e == 0.0 {
        return Ok(clean.project_nonneg());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = clean;
    for v in z.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += e * n;
    }
    Ok(z.project_nonneg())
}

/// Synthetic ground truth and its MSI.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(GroundTruth, Tensor3)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let b_ref = gen_endmembers(cfg.p, cfg.n, cfg.hull_margin, &mut rng)?;
    let mut s_ref = gen_abundances(cfg.l1, cfg.l2, cfg.n, cfg.purity, &mut rng);
    if cfg.pure_pixels {
        let px = cfg.l1 * cfg.l2;
        for k in 0..cfg.n {
            let idx = pure_pixel_index(k, cfg.n, px);
            for c in 0..cfg.n {
                s_ref.set(idx / cfg.l2, idx % cfg.l2, c, if c == k { 1.0 } else { 0.0 });
            }
        }
    }
    let noise_seed = rng.random::<u64>();
    let z_m = if cfg.residual_noise {
        let clean = mode3_mul(&s_ref, &b_ref)?;
        let den = cfg.denoiser.denoise(&clean);
        clean.add(&clean.sub(&den)?.scale(cfg.noise))?.project_nonneg()
    } else {
        synthesize_msi(&s_ref, &b_ref, cfg.noise, noise_seed)?
    };
    Ok((GroundTruth { b_ref, s_ref, a_ref: None, wavelengths_nm: None }, z_m))
}

/// Band-averaged endmembers: `B(p, n)` is the mean of `A_ref(m, n)` over bands
/// whose center wavelength lies in range `p` (inclusive).
pub fn spectral_downsample(a_ref: &Mat, wavelengths_nm: &[f64], ranges: &[(f64, f64)]) -> Result<Mat> {
    if wavelengths_nm.len() != a_ref.rows() {
        return Err(Error::Protocol(format!(
            "{} wavelengths for {} reference bands",
            wavelengths_nm.len(),
            a_ref.rows()
        )));
    }
    let n = a_ref.cols();
    let mut b = Mat::zeros(ranges.len(), n);
    for (p, &(lo, hi)) in ranges.iter().enumerate() {
        let bands: Vec<usize> = (0..wavelengths_nm.len())
            .filter(|&m| wavelengths_nm[m] >= lo && wavelengths_nm[m] <= hi)
            .collect();
        if bands.is_empty() {
            return Err(Error::Protocol(format!("no reference band lies in range {lo}-{hi} nm")));
        }
        for j in 0..n {
            let mean = bands.iter().map(|&m| a_ref.get(m, j)).sum::<f64>() / bands.len() as f64;
            b.set(p, j, mean);
        }
    }
    Ok(b)
}

fn columns(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| m.col(j)).collect()
}

fn channels(t: &Tensor3) -> Vec<Vec<f64>> {
    (0..t.channels()).map(|k| t.band(k).to_vec()).collect()
}

/// Squared-angle cost matrix `cost[i][j] = angle(ref_i, est_j)²`.
fn angle_costs(reference: &[Vec<f64>], estimate: &[Vec<f64>], what: &str) -> Result<Vec<Vec<f64>>> {
    if reference.len() != estimate.len() {
        return Err(Error::Metric(format!(
            "{what}: reference has {} items, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    for (name, set) in [("reference", reference), ("estimate", estimate)] {
        if let Some(k) = set.iter().position(|v| sq_norm(v) == 0.0) {
            return Err(Error::Metric(format!("{what}: {name} {k} is zero; angle undefined")));
        }
    }
    reference
        .iter()
        .map(|r| {
            estimate
                .iter()
                .map(|e| {
                    if r.len() != e.len() {
                        return Err(Error::Metric(format!("{what}: length mismatch")));
                    }
                    Ok(spectral_angle(r, e).expect("nonzero").powi(2))
                })
                .collect()
        })
        .collect()
}

/// Result of permutation matching; `exhaustive` is false when the greedy fallback ran.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `perm[i]` is the estimate index matched to reference `i`.
    pub perm: Vec<usize>,
    pub cost: f64,
    pub exhaustive: bool,
}

/// Minimizes `Σ_i cost[i][perm[i]]`. Exhaustive in lexicographic order (first
/// minimum wins) for `N ≤ 9`, greedy smallest-pair-first above.
pub fn assign(cost: &[Vec<f64>]) -> Matching {
    let n = cost.len();
    if n > MAX_EXHAUSTIVE {
        let mut perm = vec![usize::MAX; n];
        let mut used = vec![false; n];
        let mut pairs: Vec<(f64, usize, usize)> =
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (cost[i][j], i, j)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (_, i, j) in pairs {
            if perm[i] == usize::MAX && !used[j] {
                perm[i] = j;
                used[j] = true;
            }
        }
        let total = (0..n).map(|i| cost[i][perm[i]]).sum();
        return Matching { perm, cost: total, exhaustive: false };
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let c: f64 = (0..n).map(|i| cost[i][perm[i]]).sum();
        if c < best_cost {
            best_cost = c;
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Matching { perm: best, cost: best_cost, exhaustive: true }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn rms_degrees(m: &Matching) -> f64 {
    (m.cost / m.perm.len() as f64).sqrt().to_degrees()
}

/// Endmember permutation minimizing the mean squared spectral angle.
pub fn match_permutation(b_ref: &Mat, b_hat: &Mat) -> Result<Matching> {
    Ok(assign(&angle_costs(&columns(b_ref), &columns(b_hat), "endmembers")?))
}

/// RMS spectral angle of endmembers in degrees, minimized over permutations.
pub fn phi_en(b_ref: &Mat, b_hat: &Mat) -> Result<f64> {
    Ok(rms_degrees(&match_permutation(b_ref, b_hat)?))
}

/// Abundance-channel matching (same definition on vectorized channels).
pub fn match_abundances(s_ref: &Tensor3, s_hat: &Tensor3) -> Result<Matching> {
    if s_ref.dims() != s_hat.dims() {
        return Err(Error::Metric(format!("abundance shapes {:?} and {:?} differ", s_ref.dims(), s_hat.dims())));
    }
    Ok(assign(&angle_costs(&channels(s_ref), &channels(s_hat), "abundance channels")?))
}

pub fn phi_ab(s_ref: &Tensor3, s_hat: &Tensor3) -> Result<f64> {
    Ok(rms_degrees(&match_abundances(s_ref, s_hat)?))
}

/// `100·√(‖S_ref − S_hat∘π‖²_F / (L·N))`.
pub fn rmse(s_ref: &Tensor3, s_hat: &Tensor3, perm: &[usize]) -> Result<f64> {
    let n = s_ref.channels();
    if s_ref.dims() != s_hat.dims() || perm.len() != n {
        return Err(Error::Metric("rmse: shapes or permutation do not conform".into()));
    }
    let mut seen = vec![false; n];
    for &j in perm {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::Metric("rmse: permutation is not a bijection".into()));
        }
    }
    let mut ss = 0.0;
    for (i, &j) in perm.iter().enumerate() {
        ss += s_ref.band(i).iter().zip(s_hat.band(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(100.0 * (ss / (s_ref.pixels() * n) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub phi_en_deg: f64,
    pub phi_ab_deg: f64,
    pub rmse_x100: f64,
    /// Abundance matching: entry `i` is the estimated source matched to reference `i`.
    pub permutation: Vec<usize>,
    pub runtime_sec: f64,
}

/// All three metrics; `greedy` reports whether any matching fell back to greedy.
pub fn evaluate(
    b_ref: &Mat,
    s_ref: &Tensor3,
    b_hat: &Mat,
    s_hat: &Tensor3,
    runtime_sec: f64,
) -> Result<(MetricsReport, bool)> {
    let en = match_permutation(b_ref, b_hat)?;
    let ab = match_abundances(s_ref, s_hat)?;
    let report = MetricsReport {
        phi_en_deg: rms_degrees(&en),
        phi_ab_deg: rms_degrees(&ab),
        rmse_x100: rmse(s_ref, s_hat, &ab.perm)?,
        permutation: ab.perm.clone(),
        runtime_sec,
    };
    Ok((report, !(en.exhaustive && ab.exhaustive)))
}

/// SPA on the MSI itself (continuing past its rank on the residual) with
/// pseudo-inverse abundances clipped at zero.
pub fn baseline(z_m: &Tensor3, n: usize) -> Result<(Mat, Tensor3)> {
    let (l1, l2, _) = z_m.dims();
    let x = mode3_matricize(z_m);
    if n == 0 || n > l1 * l2 {
        return Err(Error::Config(format!("baseline needs 1 <= N <= pixels, N = {n}")));
    }
    let picks = spa_select(&x, n, true)?;
    let b = x.select_cols(&picks);
    let s3 = pinv(&b)?.matmul(&x)?.project_nonneg();
    Ok((b, fold3(&s3, l1, l2)?))
}

/// Moore–Penrose pseudo-inverse through the smaller Gram matrix, with a relative
/// ridge of 1e-12 on its diagonal.
fn pinv(b: &Mat) -> Result<Mat> {
    let (r, c) = b.shape();
    let wide = c >= r;
    let g = if wide { b.matmul_t(b)? } else { b.transpose().matmul(b)? };
    let k = g.rows();
    let tr: f64 = (0..k).map(|i| g.get(i, i)).sum();
    let mut gr = g.clone();
    for i in 0..k {
        gr.set(i, i, g.get(i, i) + 1e-12 * tr / k as f64);
    }
    let chol = Cholesky::factor(&gr)?;
    if wide {
        // Bᵀ (B Bᵀ)⁻¹
        Ok(chol.solve(b)?.transpose())
    } else {
        chol.solve(&b.transpose())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub method: MetricsReport,
    pub baseline: MetricsReport,
}

/// Everything produced by one protocol trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub truth: GroundTruth,
    pub z_m: Tensor3,
    pub result: UnmixResult,
    pub baseline_b: Mat,
    pub baseline_s: Tensor3,
    pub report: ProtocolReport,
    /// Some matching used the greedy fallback.
    pub greedy: bool,
}

fn evaluate_both(truth: &GroundTruth, z_m: &Tensor3, cfg: &SolverConfig) -> Result<Trial> {
    let n = truth.b_ref.cols();
    let cfg = SolverConfig { n_sources: n, ..cfg.clone() };
    let t0 = Instant::now();
    let result = gqmu_run(z_m, &cfg)?;
    let t_method = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (bb, sb) = baseline(z_m, n)?;
    let t_base = t1.elapsed().as_secs_f64();
    let (method, g1) = evaluate(&truth.b_ref, &truth.s_ref, &result.b_star, &result.s_star, t_method)?;
    let (base, g2) = evaluate(&truth.b_ref, &truth.s_ref, &bb, &sb, t_base)?;
    Ok(Trial {
        truth: truth.clone(),
        z_m: z_m.clone(),
        result,
        baseline_b: bb,
        baseline_s: sb,
        report: ProtocolReport { method, baseline: base },
        greedy: g1 || g2,
    })
}

/// Synthetic trial: generate, unmix, run the baseline, score both.
pub fn run_protocol(synth: &SynthConfig, cfg: &SolverConfig) -> Result<Trial> {
    let (truth, z_m) = gen_synthetic(synth)?;
    evaluate_both(&truth, &z_m, cfg)
}

/// Wald-style trial on user-supplied references: band-average `A_ref` to the
/// MSI ranges, synthesize the MSI, then score as in [`run_protocol`].
pub fn run_wald(
    a_ref: &Mat,
    wavelengths_nm: &[f64],
    s_ref: &Tensor3,
    ranges: &[(f64, f64)],
    noise: f64,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<Trial> {
    if a_ref.cols() != s_ref.channels() {
        return Err(Error::Protocol(format!(
            "A_ref has {} endmembers but S_ref has {} channels",
            a_ref.cols(),
            s_ref.channels()
        )));
    }
    let b_ref = spectral_downsample(a_ref, wavelengths_nm, ranges)?;
    let z_m = synthesize_msi(s_ref, &b_ref, noise, seed)?;
    let truth = GroundTruth {
        b_ref,
        s_ref: s_ref.clone(),
        a_ref: Some(a_ref.clone()),
        wavelengths_nm: Some(wavelengths_nm.to_vec()),
    };
    evaluate_both(&truth, &z_m, cfg)
}

/// Worker count: `GQMU_THREADS` if set, else all cores.
pub fn parallelism() -> usize {
    std::env::var("GQMU_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` over `seeds` on up to [`parallelism`] threads; results keep seed order.
pub fn run_trials<T: Send>(seeds: &[u64], f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let workers = parallelism().min(seeds.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..seeds.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let out = f(seeds[i]);
                results.lock().expect("poisoned")[i] = Some(out);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every trial ran")).collect()
}
