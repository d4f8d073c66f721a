//! Abundance priors: the quantum deep image prior (QDIP) and a pass-through
//! fallback that reuses the initializer's abundances.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::quantum::{Circuit, CircuitParams};
use crate::tensor::{mode3_mul, Mat, Tensor3};

/// Side length of the square seed map fed to the decoder.
pub const SEED_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    #[default]
    Qdip,
    Ls,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Qdip => "qdip",
            PriorKind::Ls => "ls",
        })
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qdip" => Ok(PriorKind::Qdip),
            "ls" => Ok(PriorKind::Ls),
            other => Err(Error::Config(format!("unknown prior '{other}' (expected qdip or ls)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QdipConfig {
    pub n_q: usize,
    /// Output channels of every decoder block except the last; `None` picks
    /// the trailing entries of [`crate::decoder::DEFAULT_WIDTHS`].
    pub hidden_widths: Option<Vec<usize>>,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// `false` drops the XX and Toffoli layers.
    pub entangle: bool,
}

impl Default for QdipConfig {
    fn default() -> Self {
        Self { n_q: 16, hidden_widths: None, learning_rate: 5e-2, iterations: 200, seed: 0, entangle: true }
    }
}

/// Number of stride-2 blocks needed to grow the seed to `(l1, l2)`.
pub fn decoder_depth(l1: usize, l2: usize) -> Result<usize> {
    let reachable = |l: usize| l >= 2 * SEED_SIDE && l % SEED_SIDE == 0 && (l / SEED_SIDE).is_power_of_two();
    if l1 != l2 || !reachable(l1) {
        return Err(Error::Config(format!(
            "QDIP output must be square with side 4*2^t (t >= 1), e.g. 8, 16, 32, 64, 128, 256; \
             got {l1}x{l2}. Crop or pad the image to a supported size, or use --prior ls"
        )));
    }
    Ok((l1 / SEED_SIDE).trailing_zeros() as usize)
}

/// Circuit angles plus decoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QdipModel {
    pub circuit: Circuit,
    pub params: CircuitParams,
    pub decoder: Decoder,
}

impl QdipModel {
    /// Seeded initialization reaching `(l1, l2, n)`.
    pub fn new(cfg: &QdipConfig, dims: (usize, usize, usize)) -> Result<Self> {
        let (l1, l2, n) = dims;
        if cfg.n_q != SEED_SIDE * SEED_SIDE {
            return Err(Error::Config(format!(
                "QDIP read-out fills a {SEED_SIDE}x{SEED_SIDE} seed map and needs n_q = {}, got {}",
                SEED_SIDE * SEED_SIDE,
                cfg.n_q
            )));
        }
        if n == 0 {
            return Err(Error::Config("QDIP needs at least one output channel".into()));
        }
        let depth = decoder_depth(l1, l2)?;
        let widths = match &cfg.hidden_widths {
            None => Decoder::default_widths(depth, n),
            Some(h) => {
                if h.len() + 1 != depth {
                    return Err(Error::Config(format!(
                        "{l1}x{l2} output needs {depth} decoder blocks ({} hidden widths), got {}",
                        depth - 1,
                        h.len()
                    )));
                }
                let mut w = h.clone();
                w.push(n);
                w
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = CircuitParams::random(cfg.n_q, &mut rng);
        let decoder = Decoder::new(1, (SEED_SIDE, SEED_SIDE), &widths, &mut rng)?;
        let circuit = Circuit { qubits: cfg.n_q, entangle: cfg.entangle };
        Ok(Self { circuit, params, decoder })
    }

    pub fn output_dims(&self) -> (usize, usize, usize) {
        let (h, w) = self.decoder.out_size();
        (h, w, self.decoder.out_channels())
    }

    pub fn param_count(&self) -> usize {
        self.params.len() + self.decoder.param_count()
    }

    /// Circuit angles followed by decoder weights.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.params.to_flat();
        v.extend(self.decoder.to_flat());
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        let nc = self.params.len();
        if v.len() != self.param_count() {
            return Err(Error::Config(format!("QDIP expects {} parameters, got {}", self.param_count(), v.len())));
        }
        self.params = CircuitParams::from_flat(self.circuit.qubits, &v[..nc])?;
        self.decoder.set_flat(&v[nc..])
    }

    fn seed_map(&self) -> Result<Vec<f64>> {
        Ok(self.circuit.forward(&self.params)?.iter().map(|z| 0.5 * (1.0 + z)).collect())
    }

    fn logits_to_abundance(&self, logits: Vec<f64>) -> Result<Tensor3> {
        let (l1, l2, n) = self.output_dims();
        let mut data = logits;
        let px = l1 * l2;
        for p in 0..px {
            let max = (0..n).map(|c| data[c * px + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..n {
                let e = (data[c * px + p] - max).exp();
                data[c * px + p] = e;
                sum += e;
            }
            for c in 0..n {
                data[c * px + p] /= sum;
            }
        }
        Tensor3::new(l1, l2, n, data)
    }

    /// Abundance map: circuit read-out, decoder, channelwise softmax.
    pub fn forward(&self) -> Result<Tensor3> {
        let seed = self.seed_map()?;
        let logits = self.decoder.forward(&seed)?;
        self.logits_to_abundance(logits)
    }

    /// `‖Z_h − S ×₃ A0‖²_F` at the current parameters.
    pub fn loss(&self, z_h: &Tensor3, a0: &Mat) -> Result<f64> {
        let s = self.forward()?;
        fidelity_loss(z_h, &s, a0)
    }

    /// Loss and its gradient in [`QdipModel::to_flat`] order.
    pub fn loss_and_grad(&self, z_h: &Tensor3, a0: &Mat) -> Result<(f64, Vec<f64>)> {
        let seed = self.seed_map()?;
        let (logits, trace) = self.decoder.forward_traced(&seed)?;
        let s = self.logits_to_abundance(logits)?;
        let resid = z_h.sub(&mode3_mul(&s, a0)?)?;
        let loss = resid.frobenius_norm().powi(2);
        // dL/dS = −2 · resid ×₃ A0ᵀ
        let g_s = mode3_mul(&resid, &a0.transpose())?.scale(-2.0);
        let (l1, l2, n) = s.dims();
        let px = l1 * l2;
        let (sd, gd) = (s.data(), g_s.data());
        let mut g_logit = vec![0.0; n * px];
        for p in 0..px {
            let inner: f64 = (0..n).map(|c| sd[c * px + p] * gd[c * px + p]).sum();
            for c in 0..n {
                g_logit[c * px + p] = sd[c * px + p] * (gd[c * px + p] - inner);
            }
        }
        let (g_dec, g_seed) = self.decoder.backward(&trace, &g_logit);
        let upstream: Vec<f64> = g_seed.iter().map(|g| 0.5 * g).collect();
        let mut grad = self.circuit.grad_adjoint(&self.params, &upstream)?;
        grad.extend(g_dec);
        Ok((loss, grad))
    }
}

/// `‖Z_h − S ×₃ A0‖²_F`.
pub fn fidelity_loss(z_h: &Tensor3, s: &Tensor3, a0: &Mat) -> Result<f64> {
    Ok(z_h.sub(&mode3_mul(s, a0)?)?.frobenius_norm().powi(2))
}

/// Forward pass of a model whose output must match `dims`.
pub fn qdip_forward(model: &QdipModel, dims: (usize, usize, usize)) -> Result<Tensor3> {
    decoder_depth(dims.0, dims.1)?;
    if model.output_dims() != dims {
        return Err(Error::Config(format!(
            "QDIP model produces {:?}, requested {:?}",
            model.output_dims(),
            dims
        )));
    }
    model.forward()
}

#[derive(Debug, Clone)]
pub struct QdipOutcome {
    pub s_qu: Tensor3,
    /// Loss before every Adam step, then the final loss (`iterations + 1` entries).
    pub losses: Vec<f64>,
    pub model: QdipModel,
}

/// Plain Adam on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Fits the prior to `Z_h` through the fixed endmembers `A0`.
pub fn qdip_train(z_h: &Tensor3, a0: &Mat, cfg: &QdipConfig) -> Result<QdipOutcome> {
    let (l1, l2, m) = z_h.dims();
    if a0.rows() != m {
        return Err(Error::Config(format!("A0 has {} rows but Z_h has {m} bands", a0.rows())));
    }
    if a0.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Config("A0 must be finite and nonnegative".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Config("QDIP learning rate must be positive".into()));
    }
    let mut model = QdipModel::new(cfg, (l1, l2, a0.cols()))?;
    let mut theta = model.to_flat();
    let mut adam = Adam::new(theta.len(), cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..cfg.iterations {
        let (loss, grad) = model.loss_and_grad(z_h, a0)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { iteration: it, loss });
        }
        losses.push(loss);
        adam.step(&mut theta, &grad);
        model.set_flat(&theta)?;
    }
    let s_qu = model.forward()?;
    let last = fidelity_loss(z_h, &s_qu, a0)?;
    if !last.is_finite() {
        return Err(Error::TrainingDiverged { iteration: cfg.iterations, loss: last });
    }
    losses.push(last);
    Ok(QdipOutcome { s_qu, losses, model })
}

/// Fallback provider: the initializer's abundances.
pub fn ls_prior(s0: &Tensor3) -> Tensor3 {
    s0.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(l: usize, m: usize, n: usize, seed: u64) -> (Tensor3, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a0 = Mat::from_fn(m, n, |_, _| rng.random_range(0.1..1.0));
        let s = Tensor3::from_fn(l, l, n, |i, j, k| {
            let t = (i as f64 / l as f64 + j as f64 / (2.0 * l as f64)).fract();
            if k == 0 { t } else { (1.0 - t) / (n - 1) as f64 }
        });
        (mode3_mul(&s, &a0).unwrap(), a0)
    }

    #[test]
    fn depth_rules() {
        assert_eq!(decoder_depth(8, 8).unwrap(), 1);
        assert_eq!(decoder_depth(16, 16).unwrap(), 2);
        assert_eq!(decoder_depth(256, 256).unwrap(), 6);
        for (a, b) in [(4, 4), (12, 12), (16, 32), (100, 100)] {
            let e = decoder_depth(a, b).unwrap_err().to_string();
            assert!(e.contains("Crop or pad"), "{e}");
        }
    }

    #[test]
    fn output_is_on_simplex() {
        let model = QdipModel::new(&QdipConfig::default(), (16, 16, 3)).unwrap();
        let s = qdip_forward(&model, (16, 16, 3)).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let p = s.pixel(i, j);
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn zero_decoder_gives_uniform() {
        let mut model = QdipModel::new(&QdipConfig::default(), (8, 8, 4)).unwrap();
        let nc = model.params.len();
        let mut theta = model.to_flat();
        theta[nc..].fill(0.0);
        model.set_flat(&theta).unwrap();
        let s = model.forward().unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn seeded_determinism() {
        let a = QdipModel::new(&QdipConfig::default(), (8, 8, 2)).unwrap().forward().unwrap();
        let b = QdipModel::new(&QdipConfig::default(), (8, 8, 2)).unwrap().forward().unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_bad_qubit_count() {
        let cfg = QdipConfig { n_q: 9, ..QdipConfig::default() };
        assert!(matches!(QdipModel::new(&cfg, (8, 8, 2)), Err(Error::Config(_))));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (z, a0) = toy(8, 3, 2, 3);
        let mut model = QdipModel::new(&QdipConfig::default(), (8, 8, 2)).unwrap();
        let (_, g) = model.loss_and_grad(&z, &a0).unwrap();
        let theta = model.to_flat();
        let h = 1e-5;
        // every circuit parameter plus a spread of decoder parameters
        let idx: Vec<usize> = (0..80).chain((80..theta.len()).step_by(7)).collect();
        for i in idx {
            let mut t = theta.clone();
            t[i] += h;
            model.set_flat(&t).unwrap();
            let lp = model.loss(&z, &a0).unwrap();
            t[i] -= 2.0 * h;
            model.set_flat(&t).unwrap();
            let lm = model.loss(&z, &a0).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-2), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn uniform_target_stays_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a0 = Mat::from_fn(3, 2, |_, _| rng.random_range(0.1..1.0));
        let z = mode3_mul(&Tensor3::filled(8, 8, 2, 0.5), &a0).unwrap();
        let mut model = QdipModel::new(&QdipConfig::default(), (8, 8, 2)).unwrap();
        let nc = model.params.len();
        let mut theta = model.to_flat();
        theta[nc..].fill(0.0);
        model.set_flat(&theta).unwrap();
        assert!(model.loss(&z, &a0).unwrap() < 1e-25);
    }

    #[test]
    fn training_reduces_loss() {
        let (z, a0) = toy(8, 4, 2, 5);
        let cfg = QdipConfig { iterations: 40, ..QdipConfig::default() };
        let out = qdip_train(&z, &a0, &cfg).unwrap();
        assert_eq!(out.losses.len(), 41);
        assert!(out.losses[40] <= out.losses[0]);
    }

    #[test]
    fn ls_prior_passes_through() {
        let (z, _) = toy(4, 3, 2, 6);
        assert_eq!(ls_prior(&z), z);
    }

    #[test]
    fn prior_kind_parsing() {
        assert_eq!("LS".parse::<PriorKind>().unwrap(), PriorKind::Ls);
        assert_eq!(PriorKind::Qdip.to_string(), "qdip");
        assert!("hisun".parse::<PriorKind>().is_err());
    }
}
