//! The noise-prediction network.
//!
//! A stack of 3×3 convolutions with SiLU activations runs alongside a dense
//! branch that sees the whole flattened latent. Hidden convolutions receive
//! a per-channel bias projected from the step (and optional class)
//! embedding; the dense branch receives the embedding as extra inputs. The
//! dense branch gives the network image-wide receptive field, which the
//! convolutions alone lack at this depth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Result};
use crate::image::{Image, Shape};
use crate::num;

use super::nn::{silu, silu_grad, Conv3x3, Dense};

/// Anything that predicts the noise in `z_t`.
pub trait NoisePredictor: Sync {
    fn latent_shape(&self) -> Shape;

    fn predict(&self, z_t: &Image, t: usize, class: Option<usize>) -> Result<Image>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub latent: Shape,
    pub hidden: usize,
    /// Total convolutions including the input and output ones.
    pub conv_layers: usize,
    pub embed_dim: usize,
    pub global_hidden: usize,
    /// Number of conditioning classes; 0 for an unconditional model.
    pub classes: usize,
}

impl DenoiserConfig {
    pub fn new(latent: Shape) -> Self {
        DenoiserConfig {
            latent,
            hidden: 16,
            conv_layers: 3,
            embed_dim: 32,
            global_hidden: 64,
            classes: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.latent.validate(1)?;
        ensure!(self.conv_layers >= 2, InvalidArgument, "need at least two convolutions");
        ensure!(self.hidden >= 1, InvalidArgument, "hidden width must be positive");
        ensure!(
            self.embed_dim >= 2 && self.embed_dim % 2 == 0,
            InvalidArgument,
            "embedding width must be even and at least 2"
        );
        ensure!(self.global_hidden >= 1, InvalidArgument, "global width must be positive");
        Ok(())
    }

    fn conv(&self, l: usize) -> Conv3x3 {
        let c = self.latent.channels;
        Conv3x3 {
            cin: if l == 0 { c } else { self.hidden },
            cout: if l + 1 == self.conv_layers { c } else { self.hidden },
            height: self.latent.height,
            width: self.latent.width,
        }
    }

    fn g1(&self) -> Dense {
        Dense {
            inputs: self.latent.len() + self.embed_dim,
            outputs: self.global_hidden,
        }
    }

    fn g2(&self) -> Dense {
        Dense {
            inputs: self.global_hidden,
            outputs: self.latent.len(),
        }
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
struct Layout {
    conv_w: Vec<usize>,
    conv_b: Vec<usize>,
    temb: Vec<usize>,
    class_table: Option<usize>,
    g1_w: usize,
    g1_b: usize,
    g2_w: usize,
    g2_b: usize,
}

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    emb: Vec<f64>,
    /// Input of every convolution.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of every hidden convolution.
    pres: Vec<Vec<f64>>,
    g_in: Vec<f64>,
    g_pre: Vec<f64>,
    g_act: Vec<f64>,
    class: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    specs: Vec<TensorSpec>,
    layout: Layout,
    params: Vec<f64>,
}

impl Denoiser {
    /// Randomly initialized network; the same seed gives the same weights.
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = cfg.embed_dim as f64;
        for spec in model.specs.clone() {
            let std = match spec.name.as_str() {
                n if n.starts_with("conv") && n.ends_with(".weight") => {
                    let fan_in = (spec.dims[1] * 9) as f64;
                    let last = n == format!("conv{}.weight", cfg.conv_layers - 1);
                    if last {
                        (1.0 / fan_in).sqrt()
                    } else {
                        (2.0 / fan_in).sqrt()
                    }
                }
                n if n.starts_with("temb") => 0.5 / e.sqrt(),
                "class_embed" => 1.0,
                "global1.weight" => (1.0 / spec.dims[1] as f64).sqrt(),
                "global2.weight" => 0.1 / (spec.dims[1] as f64).sqrt(),
                _ => 0.0,
            };
            if std > 0.0 {
                for p in &mut model.params[spec.range()] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *p = z * std;
                }
            }
        }
        Ok(model)
    }

    /// Network with every parameter set to zero.
    pub fn zeroed(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, dims: Vec<usize>| {
            let s = TensorSpec { name, dims, offset };
            offset += s.len();
            specs.push(s);
            specs.len() - 1
        };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut temb = Vec::new();
        for l in 0..cfg.conv_layers {
            let c = cfg.conv(l);
            conv_w.push(push(format!("conv{l}.weight"), vec![c.cout, c.cin, 3, 3]));
            conv_b.push(push(format!("conv{l}.bias"), vec![c.cout]));
            if l + 1 < cfg.conv_layers {
                temb.push(push(format!("temb{l}.weight"), vec![c.cout, cfg.embed_dim]));
            }
        }
        let class_table = (cfg.classes > 0).then(|| push("class_embed".into(), vec![cfg.classes, cfg.embed_dim]));
        let (g1, g2) = (cfg.g1(), cfg.g2());
        let g1_w = push("global1.weight".into(), vec![g1.outputs, g1.inputs]);
        let g1_b = push("global1.bias".into(), vec![g1.outputs]);
        let g2_w = push("global2.weight".into(), vec![g2.outputs, g2.inputs]);
        let g2_b = push("global2.bias".into(), vec![g2.outputs]);
        let layout = Layout { conv_w, conv_b, temb, class_table, g1_w, g1_b, g2_w, g2_b };
        Ok(Denoiser { cfg, specs, layout, params: vec![0.0; offset] })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn slice(&self, idx: usize) -> &[f64] {
        &self.params[self.specs[idx].range()]
    }

    /// Sinusoidal step features plus the class row, if any.
    fn embedding(&self, t: usize, class: Option<usize>) -> Vec<f64> {
        let half = self.cfg.embed_dim / 2;
        let mut e = vec![0.0; self.cfg.embed_dim];
        for k in 0..half {
            let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            let a = t as f64 * freq;
            e[k] = a.sin();
            e[half + k] = a.cos();
        }
        if let (Some(c), Some(idx)) = (class, self.layout.class_table) {
            let row = &self.slice(idx)[c * self.cfg.embed_dim..(c + 1) * self.cfg.embed_dim];
            for (a, b) in e.iter_mut().zip(row) {
                *a += b;
            }
        }
        e
    }

    fn check_input(&self, z: &Image, class: Option<usize>) -> Result<()> {
        ensure!(
            z.shape() == self.cfg.latent,
            ShapeMismatch,
            "latent {} does not match model input {}",
            z.shape(),
            self.cfg.latent
        );
        if let Some(c) = class {
            ensure!(
                c < self.cfg.classes,
                InvalidArgument,
                "class {c} outside the model's {} classes",
                self.cfg.classes
            );
        }
        Ok(())
    }

    /// Forward pass keeping what the backward pass needs.
    pub fn forward(&self, z: &Image, t: usize, class: Option<usize>) -> Result<(Image, ForwardCache)> {
        self.check_input(z, class)?;
        let cfg = &self.cfg;
        let plane = cfg.latent.plane();
        let emb = self.embedding(t, class);
        let mut acts = vec![z.data().to_vec()];
        let mut pres = Vec::new();
        let mut out = vec![0.0; cfg.latent.len()];
        for l in 0..cfg.conv_layers {
            let conv = cfg.conv(l);
            let w = self.slice(self.layout.conv_w[l]);
            let b = self.slice(self.layout.conv_b[l]);
            if l + 1 == cfg.conv_layers {
                conv.forward(&acts[l], w, b, &mut out);
                break;
            }
            let mut pre = vec![0.0; conv.out_len()];
            conv.forward(&acts[l], w, b, &mut pre);
            let tw = self.slice(self.layout.temb[l]);
            for co in 0..conv.cout {
                let shift = num::dot(&tw[co * cfg.embed_dim..(co + 1) * cfg.embed_dim], &emb);
                for v in &mut pre[co * plane..(co + 1) * plane] {
                    *v += shift;
                }
            }
            acts.push(pre.iter().map(|&v| silu(v)).collect());
            pres.push(pre);
        }

        let (g1, g2) = (cfg.g1(), cfg.g2());
        let mut g_in = z.data().to_vec();
        g_in.extend_from_slice(&emb);
        let mut g_pre = vec![0.0; g1.outputs];
        g1.forward(&g_in, self.slice(self.layout.g1_w), Some(self.slice(self.layout.g1_b)), &mut g_pre);
        let g_act: Vec<f64> = g_pre.iter().map(|&v| silu(v)).collect();
        let mut g_out = vec![0.0; g2.outputs];
        g2.forward(&g_act, self.slice(self.layout.g2_w), Some(self.slice(self.layout.g2_b)), &mut g_out);
        for (o, g) in out.iter_mut().zip(&g_out) {
            *o += g;
        }
        let cache = ForwardCache { emb, acts, pres, g_in, g_pre, g_act, class };
        Ok((Image::from_vec(cfg.latent, out)?, cache))
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Image, grads: &mut [f64]) -> Result<()> {
        ensure!(
            grad_out.shape() == self.cfg.latent && grads.len() == self.params.len(),
            ShapeMismatch,
            "backward expects a {} gradient and {} parameter slots",
            self.cfg.latent,
            self.params.len()
        );
        let cfg = &self.cfg;
        let plane = cfg.latent.plane();
        let go = grad_out.data();
        let ranges: Vec<_> = self.specs.iter().map(TensorSpec::range).collect();
        let mut grad_emb = vec![0.0; cfg.embed_dim];

        // global branch
        let (g1, g2) = (cfg.g1(), cfg.g2());
        let (gw2, gb2) = split_pair(grads, &ranges[self.layout.g2_w], &ranges[self.layout.g2_b]);
        let d_act = g2.backward(&cache.g_act, self.slice(self.layout.g2_w), go, gw2, Some(gb2), true);
        let d_pre: Vec<f64> = d_act.iter().zip(&cache.g_pre).map(|(d, p)| d * silu_grad(*p)).collect();
        let (gw1, gb1) = split_pair(grads, &ranges[self.layout.g1_w], &ranges[self.layout.g1_b]);
        let need_emb_grad = cache.class.is_some();
        let d_in = g1.backward(&cache.g_in, self.slice(self.layout.g1_w), &d_pre, gw1, Some(gb1), need_emb_grad);
        if need_emb_grad {
            for (a, b) in grad_emb.iter_mut().zip(&d_in[cfg.latent.len()..]) {
                *a += b;
            }
        }

        // convolution stack, output layer first
        let mut d_next = go.to_vec();
        for l in (0..cfg.conv_layers).rev() {
            let conv = cfg.conv(l);
            if l + 1 < cfg.conv_layers {
                let pre = &cache.pres[l];
                let d_pre: Vec<f64> = d_next.iter().zip(pre).map(|(d, p)| d * silu_grad(*p)).collect();
                let tw = self.slice(self.layout.temb[l]);
                let gtw = &mut grads[ranges[self.layout.temb[l]].clone()];
                for co in 0..conv.cout {
                    let ds = num::sum(&d_pre[co * plane..(co + 1) * plane]);
                    num::axpy(ds, &cache.emb, &mut gtw[co * cfg.embed_dim..(co + 1) * cfg.embed_dim]);
                    if need_emb_grad {
                        num::axpy(ds, &tw[co * cfg.embed_dim..(co + 1) * cfg.embed_dim], &mut grad_emb);
                    }
                }
                d_next = d_pre;
            }
            let (gw, gb) = split_pair(grads, &ranges[self.layout.conv_w[l]], &ranges[self.layout.conv_b[l]]);
            d_next = conv.backward(&cache.acts[l], self.slice(self.layout.conv_w[l]), &d_next, gw, gb, l > 0);
        }

        if let (Some(c), Some(idx)) = (cache.class, self.layout.class_table) {
            let r = ranges[idx].clone();
            let row = &mut grads[r][c * cfg.embed_dim..(c + 1) * cfg.embed_dim];
            for (a, b) in row.iter_mut().zip(&grad_emb) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Replaces the parameter vector, checking its length.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        ensure!(
            params.len() == self.params.len(),
            ShapeMismatch,
            "{} parameters supplied for a {}-parameter model",
            params.len(),
            self.params.len()
        );
        self.params = params;
        Ok(())
    }
}

/// Two disjoint mutable sub-slices of `v`.
fn split_pair<'a>(
    v: &'a mut [f64],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

impl NoisePredictor for Denoiser {
    fn latent_shape(&self) -> Shape {
        self.cfg.latent
    }

    fn predict(&self, z_t: &Image, t: usize, class: Option<usize>) -> Result<Image> {
        Ok(self.forward(z_t, t, class)?.0)
    }
}
