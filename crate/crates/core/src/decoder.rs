//! Transposed-convolution decoder used by the quantum prior.
//!
//! Every block is a 4×4 transposed convolution with stride 2 and padding 1, so
//! each block doubles the spatial size. All blocks except the last are followed
//! by a leaky ReLU with slope 0.1. Feature maps are channel-major:
//! `index = c·h·w + y·w + x`.

use rand::Rng;

use crate::error::{Error, Result};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const LEAKY_SLOPE: f64 = 0.1;

/// Hidden widths used for the largest supported decoder; shallower decoders use
/// the trailing entries.
pub const DEFAULT_WIDTHS: [usize; 5] = [32, 32, 16, 16, 8];

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub cin: usize,
    pub cout: usize,
    /// `[cin][cout][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: bool,
}

impl Block {
    fn widx(&self, ci: usize, co: usize, ky: usize, kx: usize) -> usize {
        ((ci * self.cout + co) * KERNEL + ky) * KERNEL + kx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Pre-activation output for an input of spatial size `h × w`.
    fn forward_linear(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = (STRIDE * h, STRIDE * w);
        let mut out = vec![0.0; self.cout * oh * ow];
        for co in 0..self.cout {
            out[co * oh * ow..(co + 1) * oh * ow].fill(self.bias[co]);
        }
        for ci in 0..self.cin {
            for iy in 0..h {
                for ix in 0..w {
                    let v = input[(ci * h + iy) * w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for ky in 0..KERNEL {
                        let y = STRIDE * iy + ky;
                        if y < PADDING || y - PADDING >= oh {
                            continue;
                        }
                        let y = y - PADDING;
                        for kx in 0..KERNEL {
                            let x = STRIDE * ix + kx;
                            if x < PADDING || x - PADDING >= ow {
                                continue;
                            }
                            let x = x - PADDING;
                            for co in 0..self.cout {
                                out[(co * oh + y) * ow + x] += v * self.weight[self.widx(ci, co, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient, given the
    /// gradient with respect to the pre-activation output.
    fn backward_linear(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        g_out: &[f64],
        g_weight: &mut [f64],
        g_bias: &mut [f64],
    ) -> Vec<f64> {
        let (oh, ow) = (STRIDE * h, STRIDE * w);
        for co in 0..self.cout {
            g_bias[co] += g_out[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
        }
        let mut g_in = vec![0.0; self.cin * h * w];
        for ci in 0..self.cin {
            for iy in 0..h {
                for ix in 0..w {
                    let v = input[(ci * h + iy) * w + ix];
                    let mut acc = 0.0;
                    for ky in 0..KERNEL {
                        let y = STRIDE * iy + ky;
                        if y < PADDING || y - PADDING >= oh {
                            continue;
                        }
                        let y = y - PADDING;
                        for kx in 0..KERNEL {
                            let x = STRIDE * ix + kx;
                            if x < PADDING || x - PADDING >= ow {
                                continue;
                            }
                            let x = x - PADDING;
                            for co in 0..self.cout {
                                let g = g_out[(co * oh + y) * ow + x];
                                let wi = self.widx(ci, co, ky, kx);
                                g_weight[wi] += v * g;
                                acc += self.weight[wi] * g;
                            }
                        }
                    }
                    g_in[(ci * h + iy) * w + ix] = acc;
                }
            }
        }
        g_in
    }
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each block (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each block.
    pre: Vec<Vec<f64>>,
    sizes: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub blocks: Vec<Block>,
    pub in_size: (usize, usize),
}

impl Decoder {
    /// `widths` lists the output channels of every block (the last one is the
    /// output channel count). Weights and biases are drawn uniformly from
    /// `[-1/√fan_in, 1/√fan_in]` with `fan_in = cin·4·4`.
    pub fn new(in_channels: usize, in_size: (usize, usize), widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || in_channels == 0 {
            return Err(Error::Config("decoder needs at least one block and nonzero widths".into()));
        }
        let mut blocks = Vec::with_capacity(widths.len());
        let mut cin = in_channels;
        for (i, &cout) in widths.iter().enumerate() {
            let bound = 1.0 / ((cin * KERNEL * KERNEL) as f64).sqrt();
            let weight = (0..cin * cout * KERNEL * KERNEL).map(|_| rng.random_range(-bound..=bound)).collect();
            let bias = (0..cout).map(|_| rng.random_range(-bound..=bound)).collect();
            blocks.push(Block { cin, cout, weight, bias, activation: i + 1 < widths.len() });
            cin = cout;
        }
        Ok(Self { blocks, in_size })
    }

    /// Block widths for a decoder with `depth` blocks ending in `out_channels`.
    pub fn default_widths(depth: usize, out_channels: usize) -> Vec<usize> {
        let hidden = depth.saturating_sub(1);
        let mut w: Vec<usize> = if hidden <= DEFAULT_WIDTHS.len() {
            DEFAULT_WIDTHS[DEFAULT_WIDTHS.len() - hidden..].to_vec()
        } else {
            let mut v = vec![DEFAULT_WIDTHS[0]; hidden - DEFAULT_WIDTHS.len()];
            v.extend_from_slice(&DEFAULT_WIDTHS);
            v
        };
        w.push(out_channels);
        w
    }

    pub fn out_size(&self) -> (usize, usize) {
        let f = 1usize << self.blocks.len();
        (self.in_size.0 * f, self.in_size.1 * f)
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.cout)
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(Block::param_count).sum()
    }

    /// All weights and biases, block by block (weights before bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            v.extend_from_slice(&b.weight);
            v.extend_from_slice(&b.bias);
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(Error::Config(format!(
                "decoder expects {} parameters, got {}",
                self.param_count(),
                v.len()
            )));
        }
        let mut off = 0;
        for b in &mut self.blocks {
            let nw = b.weight.len();
            b.weight.copy_from_slice(&v[off..off + nw]);
            off += nw;
            let nb = b.bias.len();
            b.bias.copy_from_slice(&v[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(input)?.0)
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
        let (mut h, mut w) = self.in_size;
        let cin = self.blocks.first().map_or(0, |b| b.cin);
        if input.len() != cin * h * w {
            return Err(Error::Config(format!(
                "decoder input has {} values, expected {}",
                input.len(),
                cin * h * w
            )));
        }
        let mut trace = Trace { inputs: Vec::new(), pre: Vec::new(), sizes: Vec::new() };
        let mut x = input.to_vec();
        for b in &self.blocks {
            let pre = b.forward_linear(&x, h, w);
            let post = if b.activation { pre.iter().map(|&v| leaky(v)).collect() } else { pre.clone() };
            trace.inputs.push(std::mem::replace(&mut x, post));
            trace.pre.push(pre);
            trace.sizes.push((h, w));
            h *= STRIDE;
            w *= STRIDE;
        }
        Ok((x, trace))
    }

    /// Returns `(parameter gradient in flat order, input gradient)`.
    pub fn backward(&self, trace: &Trace, g_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.blocks.len());
        let mut g = g_out.to_vec();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            if b.activation {
                for (gv, &p) in g.iter_mut().zip(&trace.pre[i]) {
                    if p <= 0.0 {
                        *gv *= LEAKY_SLOPE;
                    }
                }
            }
            let mut gw = vec![0.0; b.weight.len()];
            let mut gb = vec![0.0; b.bias.len()];
            let (h, w) = trace.sizes[i];
            g = b.backward_linear(&trace.inputs[i], h, w, &g, &mut gw, &mut gb);
            grads.push((gw, gb));
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads.into_iter().rev() {
            flat.extend(gw);
            flat.extend(gb);
        }
        (flat, g)
    }
}
