//! Spectral augmentation: lifting a P-band MSI into a τP-band virtual HSI.
//!
//! Each MSI band is split into two virtual bands whose sum reproduces the band
//! exactly; the split offset follows the local spectral slope. The split image is
//! then clipped to the nonnegative orthant and refined by a plug-and-play denoiser.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::tensor::{kron, Mat, Tensor3};

/// Smallest `τ ≥ 1` with `τ·P ≥ N`.
pub fn determine_tau(p: usize, n: usize) -> usize {
    let p = p.max(1);
    n.div_ceil(p).max(1)
}

/// Virtual spectral response `D = I_P ⊗ 1ᵀ_τ`.
pub fn build_srf(p: usize, tau: usize) -> Mat {
    kron(&Mat::identity(p), &Mat::new(1, tau, vec![1.0; tau]).expect("row of ones"))
}

/// Output of [`bsp_split`].
#[derive(Debug, Clone)]
pub struct BspResult {
    /// Split image after clipping negatives to zero.
    pub z_tilde: Tensor3,
    /// Virtual spectral response (P × τP).
    pub d: Mat,
    pub tau: usize,
    /// Number of entries that were negative before clipping.
    pub clipped: usize,
}

/// One doubling step: P bands in, 2P bands out, no clipping.
fn split_once(z: &Tensor3) -> Result<Tensor3> {
    let (l1, l2, p) = z.dims();
    if p < 2 {
        return Err(invalid(format!("band splitting needs at least 2 bands, got {p}")));
    }
    let n = l1 * l2;
    let mut out = vec![0.0; 2 * p * n];
    for q in 0..p {
        // H_q = (Z_{q+1} - Z_q)/4, last band reuses the final difference.
        let (lo, hi) = if q + 1 < p { (q, q + 1) } else { (p - 2, p - 1) };
        let zq = z.band(q);
        let zlo = z.band(lo);
        let zhi = z.band(hi);
        let (odd, even) = out[2 * q * n..(2 * q + 2) * n].split_at_mut(n);
        for i in 0..n {
            let h = 0.25 * (zhi[i] - zlo[i]);
            odd[i] = 0.5 * (zq[i] - h);
            even[i] = 0.5 * (zq[i] + h);
        }
    }
    Tensor3::new(l1, l2, 2 * p, out)
}

/// The linear (pre-clipping) band split for `τ ∈ {2, 4}`.
pub fn split_bands(z_m: &Tensor3, tau: usize) -> Result<Tensor3> {
    match tau {
        2 => split_once(z_m),
        4 => split_once(&split_once(z_m)?),
        other => Err(Error::UnsupportedTau(other)),
    }
}

/// Splits every MSI band into `τ` virtual bands and builds the matching SRF.
pub fn bsp_split(z_m: &Tensor3, tau: usize) -> Result<BspResult> {
    let raw = split_bands(z_m, tau)?;
    let clipped = raw.data().iter().filter(|&&v| v < 0.0).count();
    Ok(BspResult {
        z_tilde: raw.project_nonneg(),
        d: build_srf(z_m.channels(), tau),
        tau,
        clipped,
    })
}

/// A shape-preserving image mapping used as the proximal step of the refinement.
pub trait Denoise {
    fn name(&self) -> String;
    fn denoise(&self, t: &Tensor3) -> Tensor3;
}

/// Built-in denoisers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Denoiser {
    Identity,
    /// 5×5 truncated Gaussian, replicate boundary, applied band by band.
    Gaussian { sigma: f64 },
}

impl Default for Denoiser {
    fn default() -> Self {
        Denoiser::Gaussian { sigma: 0.5 }
    }
}

impl Denoiser {
    /// Normalized 5×5 kernel, row-major.
    pub fn gaussian_kernel(sigma: f64) -> [f64; 25] {
        let mut k = [0.0; 25];
        let mut sum = 0.0;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                k[((dy + 2) * 5 + (dx + 2)) as usize] = v;
                sum += v;
            }
        }
        for v in k.iter_mut() {
            *v /= sum;
        }
        k
    }

    fn blur_band(src: &[f64], rows: usize, cols: usize, kernel: &[f64; 25], dst: &mut [f64]) {
        let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for dy in -2i64..=2 {
                    let rr = clamp(r as i64 + dy, rows);
                    for dx in -2i64..=2 {
                        let cc = clamp(c as i64 + dx, cols);
                        acc += kernel[((dy + 2) * 5 + (dx + 2)) as usize] * src[rr * cols + cc];
                    }
                }
                dst[r * cols + c] = acc;
            }
        }
    }
}

impl Denoise for Denoiser {
    fn name(&self) -> String {
        self.to_string()
    }

    fn denoise(&self, t: &Tensor3) -> Tensor3 {
        match *self {
            Denoiser::Identity => t.clone(),
            Denoiser::Gaussian { sigma } => {
                let kernel = Self::gaussian_kernel(sigma);
                let (l1, l2, k) = t.dims();
                let mut out = Tensor3::zeros(l1, l2, k);
                for b in 0..k {
                    Self::blur_band(t.band(b), l1, l2, &kernel, out.band_mut(b));
                }
                out
            }
        }
    }
}

impl fmt::Display for Denoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Denoiser::Identity => write!(f, "identity"),
            Denoiser::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
        }
    }
}

impl FromStr for Denoiser {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("identity") {
            return Ok(Denoiser::Identity);
        }
        let rest = s
            .strip_prefix("gaussian")
            .ok_or_else(|| Error::Config(format!("unknown denoiser '{s}' (identity|gaussian:SIGMA)")))?;
        if rest.is_empty() {
            return Ok(Denoiser::default());
        }
        let sigma: f64 = rest
            .strip_prefix(':')
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad gaussian sigma in '{s}'")))?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("gaussian sigma must be positive, got {sigma}")));
        }
        Ok(Denoiser::Gaussian { sigma })
    }
}

/// `Z_h = Π(denoiser(Z̃_h))`.
pub fn refine_virtual_hsi(z_tilde: &Tensor3, denoiser: &dyn Denoise) -> Result<Tensor3> {
    let out = denoiser.denoise(z_tilde);
    if out.dims() != z_tilde.dims() {
        return Err(Error::Contract(format!(
            "denoiser '{}' changed shape {:?} -> {:?}",
            denoiser.name(),
            z_tilde.dims(),
            out.dims()
        )));
    }
    if let Some(pos) = out.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "denoiser '{}' produced a non-finite value at offset {pos}",
            denoiser.name()
        )));
    }
    Ok(out.project_nonneg())
}

/// Full augmentation: split, clip, refine.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub z_h: Tensor3,
    pub split: BspResult,
}

pub fn augment(z_m: &Tensor3, tau: usize, denoiser: &dyn Denoise) -> Result<Augmented> {
    let split = bsp_split(z_m, tau)?;
    let z_h = refine_virtual_hsi(&split.z_tilde, denoiser)?;
    Ok(Augmented { z_h, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::mode3_mul;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tau_rule() {
        assert_eq!(determine_tau(4, 6), 2);
        assert_eq!(determine_tau(4, 4), 1);
        assert_eq!(determine_tau(3, 10), 4);
    }

    #[test]
    fn srf_examples() {
        assert_eq!(
            build_srf(2, 2),
            Mat::from_rows(&[[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]).unwrap()
        );
        assert_eq!(build_srf(1, 3), Mat::new(1, 3, vec![1.0; 3]).unwrap());
        assert_eq!(build_srf(3, 1), Mat::identity(3));
        let d = build_srf(4, 2);
        for r in 0..4 {
            assert_eq!(d.row(r).iter().sum::<f64>(), 2.0);
        }
        for c in 0..8 {
            assert_eq!(d.col(c).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn single_pixel_split() {
        let z = Tensor3::new(1, 1, 2, vec![0.2, 0.6]).unwrap();
        let r = bsp_split(&z, 2).unwrap();
        let expect = [0.05, 0.15, 0.25, 0.35];
        for (a, b) in r.z_tilde.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let back = mode3_mul(&r.z_tilde, &r.d).unwrap();
        assert!((back.data()[0] - 0.2).abs() < 1e-15);
        assert!((back.data()[1] - 0.6).abs() < 1e-15);
        assert_eq!(r.clipped, 0);
    }

    #[test]
    fn constant_spectrum_halves() {
        let z = Tensor3::filled(2, 2, 3, 0.4);
        let r = bsp_split(&z, 2).unwrap();
        assert!(r.z_tilde.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn reconstruction_random_msi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = Tensor3::from_fn(4, 4, 4, |_, _, _| rng.random_range(0.5..1.0));
        for tau in [2, 4] {
            let raw = split_bands(&z, tau).unwrap();
            let back = mode3_mul(&raw, &build_srf(4, tau)).unwrap();
            let err = back.sub(&z).unwrap().frobenius_norm() / z.frobenius_norm();
            assert!(err <= 1e-15, "tau={tau} err={err}");
        }
    }

    #[test]
    fn negative_entries_clipped() {
        // band 1 = 0.5*(0.1 - 0.25*(1.0-0.1)) < 0
        let z = Tensor3::new(1, 1, 2, vec![0.1, 1.0]).unwrap();
        let r = bsp_split(&z, 2).unwrap();
        assert_eq!(r.clipped, 1);
        assert_eq!(r.z_tilde.data()[0], 0.0);
    }

    #[test]
    fn split_errors() {
        let one_band = Tensor3::filled(2, 2, 1, 1.0);
        assert!(matches!(bsp_split(&one_band, 2), Err(Error::InvalidInput(_))));
        let z = Tensor3::filled(2, 2, 3, 1.0);
        assert!(matches!(bsp_split(&z, 3), Err(Error::UnsupportedTau(3))));
    }

    #[test]
    fn identity_refinement_is_noop_on_nonneg() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = Tensor3::from_fn(3, 5, 2, |_, _, _| rng.random_range(0.0..1.0));
        assert_eq!(refine_virtual_hsi(&z, &Denoiser::Identity).unwrap(), z);
    }

    #[test]
    fn gaussian_fixes_constant_image() {
        let z = Tensor3::filled(6, 7, 2, 0.3);
        let out = refine_virtual_hsi(&z, &Denoiser::Gaussian { sigma: 0.5 }).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn gaussian_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (l1, l2) = (6, 5);
        let z = Tensor3::from_fn(l1, l2, 2, |_, _, _| rng.random_range(0.0..1.0));
        let sigma: f64 = 0.8;
        let out = Denoiser::Gaussian { sigma }.denoise(&z);
        // Independent kernel build and convolution with explicit boundary replication.
        let mut w = [[0.0; 5]; 5];
        let mut tot = 0.0;
        for (a, row) in w.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                let (x, y) = (a as f64 - 2.0, b as f64 - 2.0);
                *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
                tot += *v;
            }
        }
        for k in 0..2 {
            for i in 0..l1 {
                for j in 0..l2 {
                    let mut acc = 0.0;
                    for a in 0..5 {
                        for b in 0..5 {
                            let ii = (i as i64 + a as i64 - 2).max(0).min(l1 as i64 - 1) as usize;
                            let jj = (j as i64 + b as i64 - 2).max(0).min(l2 as i64 - 1) as usize;
                            acc += w[a][b] / tot * z.get(ii, jj, k);
                        }
                    }
                    assert!((out.get(i, j, k) - acc).abs() < 1e-14);
                }
            }
        }
    }

    struct Shrinker;
    impl Denoise for Shrinker {
        fn name(&self) -> String {
            "shrinker".into()
        }
        fn denoise(&self, _t: &Tensor3) -> Tensor3 {
            Tensor3::zeros(1, 1, 1)
        }
    }

    #[test]
    fn shape_changing_denoiser_rejected() {
        let z = Tensor3::filled(2, 2, 2, 1.0);
        assert!(matches!(refine_virtual_hsi(&z, &Shrinker), Err(Error::Contract(_))));
    }

    #[test]
    fn denoiser_parsing() {
        assert_eq!("identity".parse::<Denoiser>().unwrap(), Denoiser::Identity);
        assert_eq!("gaussian:1.5".parse::<Denoiser>().unwrap(), Denoiser::Gaussian { sigma: 1.5 });
        assert_eq!("gaussian".parse::<Denoiser>().unwrap(), Denoiser::default());
        assert!("median".parse::<Denoiser>().is_err());
        assert!("gaussian:-1".parse::<Denoiser>().is_err());
    }
}
