//! Statevector simulation of the QDIP core circuit.
//!
//! Layer order on `n` qubits: `R_X(α) – XX(β) – R_Z(δ) – XX(ρ) – R_X(ε)`, followed by
//! Toffoli gates on the triples `(i, i+1, i+2 mod n)` for `i = 0, 3, 6, …`, and a
//! Pauli-Z read-out of every qubit. The XX sublayers act on ring pairs
//! `(i, i+1 mod n)`. Conventions:
//!
//! ```text
//! R_X(θ) = exp(−iθX/2)   R_Z(θ) = exp(−iθZ/2)   XX(θ) = exp(−iθ X⊗X/2)
//! ```
//!
//! Qubit `q` is bit `q` of the basis-state index.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 20;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Dense statevector over `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩`.
    pub fn zero_state(n: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Self { n, amps }
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn apply_rx(&mut self, q: usize, theta: f64) {
        let (s, c) = (0.5 * theta).sin_cos();
        let m = 1usize << q;
        for b in 0..self.amps.len() {
            if b & m == 0 {
                let a0 = self.amps[b];
                let a1 = self.amps[b | m];
                // [[c, -is], [-is, c]]
                self.amps[b] = Complex64::new(c * a0.re + s * a1.im, c * a0.im - s * a1.re);
                self.amps[b | m] = Complex64::new(c * a1.re + s * a0.im, c * a1.im - s * a0.re);
            }
        }
    }

    pub fn apply_rz(&mut self, q: usize, theta: f64) {
        let (s, c) = (0.5 * theta).sin_cos();
        let lo = Complex64::new(c, -s);
        let hi = Complex64::new(c, s);
        let m = 1usize << q;
        for (b, a) in self.amps.iter_mut().enumerate() {
            *a *= if b & m == 0 { lo } else { hi };
        }
    }

    pub fn apply_xx(&mut self, q1: usize, q2: usize, theta: f64) {
        let (s, c) = (0.5 * theta).sin_cos();
        let mask = (1usize << q1) | (1usize << q2);
        for b in 0..self.amps.len() {
            let partner = b ^ mask;
            if b < partner {
                let a0 = self.amps[b];
                let a1 = self.amps[partner];
                self.amps[b] = Complex64::new(c * a0.re + s * a1.im, c * a0.im - s * a1.re);
                self.amps[partner] = Complex64::new(c * a1.re + s * a0.im, c * a1.im - s * a0.re);
            }
        }
    }

    pub fn apply_toffoli(&mut self, c1: usize, c2: usize, t: usize) {
        let cm = (1usize << c1) | (1usize << c2);
        let tm = 1usize << t;
        for b in 0..self.amps.len() {
            if b & cm == cm && b & tm == 0 {
                self.amps.swap(b, b | tm);
            }
        }
    }

    /// `⟨Z_q⟩` for every qubit.
    pub fn z_expectations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (b, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, o) in out.iter_mut().enumerate() {
                if b >> q & 1 == 0 {
                    *o += p;
                } else {
                    *o -= p;
                }
            }
        }
        out
    }
}

/// Rotation angles of the five sublayers.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub rho: Vec<f64>,
    pub epsilon: Vec<f64>,
}

/// Parameter families in flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Alpha,
    Beta,
    Delta,
    Rho,
    Epsilon,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Alpha, Family::Beta, Family::Delta, Family::Rho, Family::Epsilon];
}

impl CircuitParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
            delta: vec![0.0; n],
            rho: vec![0.0; n],
            epsilon: vec![0.0; n],
        }
    }

    /// Angles drawn uniformly from `[-π, π)`.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || (0..n).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
        Self { alpha: draw(), beta: draw(), delta: draw(), rho: draw(), epsilon: draw() }
    }

    pub fn qubits(&self) -> usize {
        self.alpha.len()
    }

    pub fn len(&self) -> usize {
        5 * self.qubits()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `[α, β, δ, ρ, ε]` concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for f in [&self.alpha, &self.beta, &self.delta, &self.rho, &self.epsilon] {
            v.extend_from_slice(f);
        }
        v
    }

    pub fn from_flat(n: usize, v: &[f64]) -> Result<Self> {
        if v.len() != 5 * n {
            return Err(Error::Config(format!(
                "expected {} circuit parameters for {n} qubits, got {}",
                5 * n,
                v.len()
            )));
        }
        let part = |i: usize| v[i * n..(i + 1) * n].to_vec();
        Ok(Self { alpha: part(0), beta: part(1), delta: part(2), rho: part(3), epsilon: part(4) })
    }

    /// Family and qubit index of flat parameter `i`.
    pub fn locate(&self, i: usize) -> (Family, usize) {
        let n = self.qubits();
        (Family::ALL[i / n], i % n)
    }

    fn validate(&self) -> Result<()> {
        let n = self.qubits();
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::Config(format!("qubit count must be in 1..={MAX_QUBITS}, got {n}")));
        }
        for f in [&self.beta, &self.delta, &self.rho, &self.epsilon] {
            if f.len() != n {
                return Err(Error::Config("circuit angle vectors must all have n_q entries".into()));
            }
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("circuit angles must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Gate {
    Rx { q: usize, p: usize },
    Rz { q: usize, p: usize },
    Xx { a: usize, b: usize, p: usize },
    Toffoli { c1: usize, c2: usize, t: usize },
}

/// Circuit structure. `entangle = false` drops the XX sublayers and the Toffoli
/// layer (a product-state debugging mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Circuit {
    pub qubits: usize,
    pub entangle: bool,
}

impl Circuit {
    pub fn new(qubits: usize) -> Self {
        Self { qubits, entangle: true }
    }

    pub fn without_entanglement(qubits: usize) -> Self {
        Self { qubits, entangle: false }
    }

    fn gates(&self) -> Vec<Gate> {
        let n = self.qubits;
        let mut g = Vec::new();
        let ring = self.entangle && n >= 2;
        g.extend((0..n).map(|q| Gate::Rx { q, p: q }));
        if ring {
            g.extend((0..n).map(|i| Gate::Xx { a: i, b: (i + 1) % n, p: n + i }));
        }
        g.extend((0..n).map(|q| Gate::Rz { q, p: 2 * n + q }));
        if ring {
            g.extend((0..n).map(|i| Gate::Xx { a: i, b: (i + 1) % n, p: 3 * n + i }));
        }
        g.extend((0..n).map(|q| Gate::Rx { q, p: 4 * n + q }));
        if self.entangle && n >= 3 {
            g.extend((0..n).step_by(3).map(|i| Gate::Toffoli {
                c1: i,
                c2: (i + 1) % n,
                t: (i + 2) % n,
            }));
        }
        g
    }

    fn check(&self, p: &CircuitParams) -> Result<()> {
        p.validate()?;
        if p.qubits() != self.qubits {
            return Err(Error::Config(format!(
                "parameters are for {} qubits, circuit has {}",
                p.qubits(),
                self.qubits
            )));
        }
        Ok(())
    }

    fn apply(state: &mut StateVector, gate: Gate, theta: &[f64], sign: f64) {
        match gate {
            Gate::Rx { q, p } => state.apply_rx(q, sign * theta[p]),
            Gate::Rz { q, p } => state.apply_rz(q, sign * theta[p]),
            Gate::Xx { a, b, p } => state.apply_xx(a, b, sign * theta[p]),
            Gate::Toffoli { c1, c2, t } => state.apply_toffoli(c1, c2, t),
        }
    }

    /// Final state starting from `|0…0⟩`.
    pub fn state(&self, p: &CircuitParams) -> Result<StateVector> {
        self.check(p)?;
        Ok(self.state_flat(&p.to_flat()))
    }

    fn state_flat(&self, theta: &[f64]) -> StateVector {
        let mut s = StateVector::zero_state(self.qubits);
        for g in self.gates() {
            Self::apply(&mut s, g, theta, 1.0);
        }
        s
    }

    /// Pauli-Z expectations of every qubit.
    pub fn forward(&self, p: &CircuitParams) -> Result<Vec<f64>> {
        Ok(self.state(p)?.z_expectations())
    }

    fn weighted_expectation(&self, theta: &[f64], upstream: &[f64]) -> f64 {
        let z = self.state_flat(theta).z_expectations();
        z.iter().zip(upstream).map(|(a, b)| a * b).sum()
    }

    /// Gradient of `Σ_i u_i ⟨Z_i⟩` by the parameter-shift rule (flat order).
    pub fn grad_parameter_shift(&self, p: &CircuitParams, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check(p)?;
        self.check_upstream(upstream)?;
        let mut theta = p.to_flat();
        let shift = std::f64::consts::FRAC_PI_2;
        let mut grad = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let orig = theta[i];
            theta[i] = orig + shift;
            let plus = self.weighted_expectation(&theta, upstream);
            theta[i] = orig - shift;
            let minus = self.weighted_expectation(&theta, upstream);
            theta[i] = orig;
            grad[i] = 0.5 * (plus - minus);
        }
        Ok(grad)
    }

    /// Same gradient by reverse-mode (adjoint) differentiation of the statevector;
    /// costs about three circuit evaluations regardless of the parameter count.
    pub fn grad_adjoint(&self, p: &CircuitParams, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check(p)?;
        self.check_upstream(upstream)?;
        let theta = p.to_flat();
        let gates = self.gates();
        let mut psi = self.state_flat(&theta);
        // λ = O ψ with O = Σ u_q Z_q (diagonal)
        let mut lam = psi.clone();
        for (b, a) in lam.amps.iter_mut().enumerate() {
            let o: f64 = upstream
                .iter()
                .enumerate()
                .map(|(q, u)| if b >> q & 1 == 0 { *u } else { -*u })
                .sum();
            *a *= o;
        }
        let mut grad = vec![0.0; theta.len()];
        let mut scratch = psi.clone();
        for &g in gates.iter().rev() {
            let pidx = match g {
                Gate::Rx { p, .. } | Gate::Rz { p, .. } | Gate::Xx { p, .. } => Some(p),
                Gate::Toffoli { .. } => None,
            };
            if let Some(pi) = pidx {
                // d/dθ ⟨ψ|O|ψ⟩ = 2 Im ⟨λ| g |ψ⟩ with generator g = σ/2
                scratch.amps.copy_from_slice(&psi.amps);
                match g {
                    Gate::Rx { q, .. } => apply_x(&mut scratch, 1 << q),
                    Gate::Xx { a, b, .. } => apply_x(&mut scratch, (1 << a) | (1 << b)),
                    Gate::Rz { q, .. } => {
                        let m = 1usize << q;
                        for (b, a) in scratch.amps.iter_mut().enumerate() {
                            if b & m != 0 {
                                *a = -*a;
                            }
                        }
                    }
                    Gate::Toffoli { .. } => unreachable!(),
                }
                let inner: Complex64 =
                    lam.amps.iter().zip(&scratch.amps).map(|(l, s)| l.conj() * s).sum();
                grad[pi] = inner.im;
            }
            Self::apply(&mut psi, g, &theta, -1.0);
            Self::apply(&mut lam, g, &theta, -1.0);
        }
        Ok(grad)
    }

    fn check_upstream(&self, upstream: &[f64]) -> Result<()> {
        if upstream.len() != self.qubits {
            return Err(Error::Config(format!(
                "upstream gradient has {} entries, circuit has {} qubits",
                upstream.len(),
                self.qubits
            )));
        }
        Ok(())
    }
}

fn apply_x(s: &mut StateVector, mask: usize) {
    for b in 0..s.amps.len() {
        let partner = b ^ mask;
        if b < partner {
            s.amps.swap(b, partner);
        }
    }
}

/// Expectations of the full entangled circuit.
pub fn circuit_forward(p: &CircuitParams) -> Result<Vec<f64>> {
    Circuit::new(p.qubits()).forward(p)
}

/// Parameter-shift gradient of `Σ upstream_i ⟨Z_i⟩`, flat `[α, β, δ, ρ, ε]` order.
pub fn circuit_grad(p: &CircuitParams, upstream: &[f64]) -> Result<Vec<f64>> {
    Circuit::new(p.qubits()).grad_parameter_shift(p, upstream)
}
