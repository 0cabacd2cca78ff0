//! Layer kernels with hand-written backward passes.
//!
//! Tensors are flat channel-planar slices; parameters live in caller-owned
//! slices so a whole network can keep one contiguous parameter vector.

use crate::num;

/// 3×3 convolution, stride 1, zero padding 1.
///
/// `weight` is `[cout][cin][3][3]`, `bias` is `[cout]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
}

/// Valid `(x_lo, x_hi)` output columns for horizontal tap offset `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len - d as usize } else { len };
    (lo, hi)
}

impl Conv3x3 {
    pub const fn weight_len(&self) -> usize {
        self.cout * self.cin * 9
    }

    pub const fn in_len(&self) -> usize {
        self.cin * self.height * self.width
    }

    pub const fn out_len(&self) -> usize {
        self.cout * self.height * self.width
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        debug_assert_eq!(input.len(), self.in_len());
        debug_assert_eq!(out.len(), self.out_len());
        for co in 0..self.cout {
            let o = &mut out[co * plane..(co + 1) * plane];
            o.fill(bias[co]);
            for ci in 0..self.cin {
                let src = &input[ci * plane..(ci + 1) * plane];
                let k = &weight[(co * self.cin + ci) * 9..(co * self.cin + ci + 1) * 9];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y_lo, y_hi) = span(h, dy);
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        let dx = kx as isize - 1;
                        let (x_lo, x_hi) = span(w, dx);
                        for y in y_lo..y_hi {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut o[y * w + x_lo..y * w + x_hi];
                            let sx0 = (x_lo as isize + dx) as usize;
                            let srow = &src[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)];
                            num::axpy(wv, srow, orow);
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients and returns `∂L/∂input`.
    pub fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
        need_input_grad: bool,
    ) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let mut grad_in = if need_input_grad { vec![0.0; self.in_len()] } else { Vec::new() };
        for co in 0..self.cout {
            let go = &grad_out[co * plane..(co + 1) * plane];
            grad_bias[co] += num::sum(go);
            for ci in 0..self.cin {
                let src = &input[ci * plane..(ci + 1) * plane];
                let base = (co * self.cin + ci) * 9;
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y_lo, y_hi) = span(h, dy);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x_lo, x_hi) = span(w, dx);
                        let sx0 = (x_lo as isize + dx) as usize;
                        let n = x_hi - x_lo;
                        let mut acc = 0.0;
                        for y in y_lo..y_hi {
                            let sy = (y as isize + dy) as usize;
                            acc += num::dot(&go[y * w + x_lo..y * w + x_hi], &src[sy * w + sx0..sy * w + sx0 + n]);
                        }
                        grad_weight[base + ky * 3 + kx] += acc;
                        if need_input_grad {
                            let wv = weight[base + ky * 3 + kx];
                            let gi = &mut grad_in[ci * plane..(ci + 1) * plane];
                            for y in y_lo..y_hi {
                                let sy = (y as isize + dy) as usize;
                                num::axpy(wv, &go[y * w + x_lo..y * w + x_hi], &mut gi[sy * w + sx0..sy * w + sx0 + n]);
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

/// Fully connected layer: `out = W·x + b`, `W` is `[out][in]`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub const fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn forward(&self, x: &[f64], weight: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(weight.chunks_exact(self.inputs)) {
            *o = num::dot(row, x);
        }
        if let Some(b) = bias {
            for (o, b) in out.iter_mut().zip(b) {
                *o += b;
            }
        }
    }

    /// Accumulates `∂L/∂W` (and `∂L/∂b`), returning `∂L/∂x` when requested.
    pub fn backward(
        &self,
        x: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: Option<&mut [f64]>,
        need_input_grad: bool,
    ) -> Vec<f64> {
        for (g, gw_row) in grad_out.iter().zip(grad_weight.chunks_exact_mut(self.inputs)) {
            if *g != 0.0 {
                num::axpy(*g, x, gw_row);
            }
        }
        if let Some(gb) = grad_bias {
            for (gb, g) in gb.iter_mut().zip(grad_out) {
                *gb += g;
            }
        }
        let mut gx = Vec::new();
        if need_input_grad {
            gx = vec![0.0; self.inputs];
            for (g, row) in grad_out.iter().zip(weight.chunks_exact(self.inputs)) {
                if *g != 0.0 {
                    num::axpy(*g, row, &mut gx);
                }
            }
        }
        gx
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * num::logistic(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = num::logistic(x);
    s * (1.0 + x * (1.0 - s))
}
