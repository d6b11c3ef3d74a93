//! Bidirectional multi-layer LSTM encoder with hierarchical subsampling.
//!
//! Each layer runs one LSTM per direction and concatenates their hidden
//! states. Between layers, adjacent frame groups are concatenated so the
//! sequence shrinks by the configured factor (the final frame is repeated
//! to pad a ragged tail). Inverted dropout is applied to every layer input
//! during training, the raw feature frames included, so inference needs no
//! rescaling. The full pass is cached in a tape for exact backpropagation
//! through time.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::numerics::{mix_seed, seeded_init, seeded_rng, InitScheme};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Frame-concatenation factors applied to the inputs of layers
    /// `1..num_layers`; length must be `num_layers - 1`.
    pub subsample: Vec<usize>,
    /// Probability of zeroing a layer-input activation during training.
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::Config(
                "encoder dims and layer count must be positive".into(),
            ));
        }
        if self.subsample.len() != self.num_layers - 1 {
            return Err(Error::Config(format!(
                "encoder.subsample needs {} factors for {} layers, got {}",
                self.num_layers - 1,
                self.num_layers,
                self.subsample.len()
            )));
        }
        if self.subsample.contains(&0) {
            return Err(Error::Config("subsample factors must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the encoder output: forward and backward states concatenated.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.subsample[layer - 1] * 2 * self.hidden_dim
        }
    }

    /// Number of output frames for an input of length `t`: successive
    /// ceiling divisions by the subsampling factors.
    pub fn output_len(&self, t: usize) -> usize {
        self.subsample.iter().fold(t, |acc, &f| acc.div_ceil(f))
    }
}

/// One direction of one LSTM layer. Gate rows are stacked i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmDirParams {
    fn init(in_dim: usize, hidden: usize, seed: u64) -> Self {
        let w_ih = seeded_init(
            4 * hidden,
            in_dim,
            mix_seed(&[seed, 1]),
            InitScheme::UniformScaled,
        );
        let w_hh = seeded_init(
            4 * hidden,
            hidden,
            mix_seed(&[seed, 2]),
            InitScheme::UniformScaled,
        );
        let mut bias = Array1::zeros(4 * hidden);
        // Forget gates open at the start so state can persist early in training.
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self { w_ih, w_hh, bias }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w_ih: Array2::zeros(self.w_ih.raw_dim()),
            w_hh: Array2::zeros(self.w_hh.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn hidden_dim(&self) -> usize {
        self.w_hh.ncols()
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        self.w_ih.scaled_add(s, &other.w_ih);
        self.w_hh.scaled_add(s, &other.w_hh);
        self.bias.scaled_add(s, &other.bias);
    }

    fn scale(&mut self, s: f64) {
        self.w_ih *= s;
        self.w_hh *= s;
        self.bias *= s;
    }

    fn l2_norm_sq(&self) -> f64 {
        self.w_ih.iter().map(|v| v * v).sum::<f64>()
            + self.w_hh.iter().map(|v| v * v).sum::<f64>()
            + self.bias.iter().map(|v| v * v).sum::<f64>()
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(
            &format!("{prefix}.w_ih"),
            self.w_ih.as_slice().expect("row-major"),
        );
        f(
            &format!("{prefix}.w_hh"),
            self.w_hh.as_slice().expect("row-major"),
        );
        f(
            &format!("{prefix}.bias"),
            self.bias.as_slice().expect("contiguous"),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(
            &format!("{prefix}.w_ih"),
            self.w_ih.as_slice_mut().expect("row-major"),
        );
        f(
            &format!("{prefix}.w_hh"),
            self.w_hh.as_slice_mut().expect("row-major"),
        );
        f(
            &format!("{prefix}.bias"),
            self.bias.as_slice_mut().expect("contiguous"),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<LstmLayerParams>,
}

impl EncoderParams {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.num_layers)
            .map(|l| {
                let in_dim = config.layer_input_dim(l);
                LstmLayerParams {
                    fwd: LstmDirParams::init(
                        in_dim,
                        config.hidden_dim,
                        mix_seed(&[seed, l as u64, 0]),
                    ),
                    bwd: LstmDirParams::init(
                        in_dim,
                        config.hidden_dim,
                        mix_seed(&[seed, l as u64, 1]),
                    ),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayerParams {
                    fwd: l.fwd.zeros_like(),
                    bwd: l.bwd.zeros_like(),
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.fwd.add_scaled(&b.fwd, s);
            a.bwd.add_scaled(&b.bwd, s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.fwd.scale(s);
            l.bwd.scale(s);
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.fwd.l2_norm_sq() + l.bwd.l2_norm_sq())
            .sum()
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.fwd.visit(&format!("enc.l{i}.fwd"), f);
            l.bwd.visit(&format!("enc.l{i}.bwd"), f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.fwd.visit_mut(&format!("enc.l{i}.fwd"), f);
            l.bwd.visit_mut(&format!("enc.l{i}.bwd"), f);
        }
    }
}

/// Concatenate `factor` adjacent rows into one; a ragged tail repeats the
/// final row.
pub fn subsample_concat(x: &Array2<f64>, factor: usize) -> Array2<f64> {
    assert!(factor >= 1 && x.nrows() >= 1);
    let (t_in, d) = (x.nrows(), x.ncols());
    let t_out = t_in.div_ceil(factor);
    let mut out = Array2::zeros((t_out, factor * d));
    for j in 0..t_out {
        for k in 0..factor {
            let src = (j * factor + k).min(t_in - 1);
            out.slice_mut(s![j, k * d..(k + 1) * d]).assign(&x.row(src));
        }
    }
    out
}

fn subsample_backward(d_out: &Array2<f64>, factor: usize, t_in: usize, d: usize) -> Array2<f64> {
    let mut d_x = Array2::zeros((t_in, d));
    for j in 0..d_out.nrows() {
        for k in 0..factor {
            let src = (j * factor + k).min(t_in - 1);
            let seg = d_out.slice(s![j, k * d..(k + 1) * d]);
            let mut row = d_x.row_mut(src);
            row += &seg;
        }
    }
    d_x
}

fn dropout_mask(rows: usize, cols: usize, p: f64, seed: u64) -> Array2<f64> {
    let scale = 1.0 / (1.0 - p);
    let mut rng = seeded_rng(seed);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-direction forward cache: post-activation gates (columns i|f|g|o),
/// cell states, and hidden states, all indexed by frame.
struct DirTape {
    gates: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
}

fn prev_step(t: usize, t_len: usize, reverse: bool) -> Option<usize> {
    if reverse {
        if t + 1 < t_len {
            Some(t + 1)
        } else {
            None
        }
    } else {
        t.checked_sub(1)
    }
}

fn run_dir(p: &LstmDirParams, x: &Array2<f64>, reverse: bool) -> DirTape {
    let t_len = x.nrows();
    let h_dim = p.hidden_dim();
    let pre = x.dot(&p.w_ih.t());
    let mut gates = Array2::zeros((t_len, 4 * h_dim));
    let mut c = Array2::zeros((t_len, h_dim));
    let mut h = Array2::zeros((t_len, h_dim));
    let mut h_prev: Array1<f64> = Array1::zeros(h_dim);
    let mut c_prev: Array1<f64> = Array1::zeros(h_dim);
    let steps: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for &t in &steps {
        let mut g_t = pre.row(t).to_owned() + p.w_hh.dot(&h_prev) + &p.bias;
        for k in 0..h_dim {
            g_t[k] = sigmoid(g_t[k]);
            g_t[h_dim + k] = sigmoid(g_t[h_dim + k]);
            g_t[2 * h_dim + k] = g_t[2 * h_dim + k].tanh();
            g_t[3 * h_dim + k] = sigmoid(g_t[3 * h_dim + k]);
        }
        for k in 0..h_dim {
            let c_new = g_t[h_dim + k] * c_prev[k] + g_t[k] * g_t[2 * h_dim + k];
            c[[t, k]] = c_new;
            h[[t, k]] = g_t[3 * h_dim + k] * c_new.tanh();
        }
        gates.row_mut(t).assign(&g_t);
        h_prev.assign(&h.row(t));
        c_prev.assign(&c.row(t));
    }
    DirTape { gates, c, h }
}

fn backward_dir(
    p: &LstmDirParams,
    x: &Array2<f64>,
    tape: &DirTape,
    d_h_out: &Array2<f64>,
    reverse: bool,
) -> (LstmDirParams, Array2<f64>) {
    let t_len = x.nrows();
    let h_dim = p.hidden_dim();
    let mut d_pre = Array2::zeros((t_len, 4 * h_dim));
    let mut dh_rec = Array1::zeros(h_dim);
    let mut dc = Array1::<f64>::zeros(h_dim);
    let steps: Vec<usize> = if reverse {
        (0..t_len).collect()
    } else {
        (0..t_len).rev().collect()
    };
    for &t in &steps {
        let prev = prev_step(t, t_len, reverse);
        for k in 0..h_dim {
            let i = tape.gates[[t, k]];
            let f = tape.gates[[t, h_dim + k]];
            let g = tape.gates[[t, 2 * h_dim + k]];
            let o = tape.gates[[t, 3 * h_dim + k]];
            let tc = tape.c[[t, k]].tanh();
            let dh = d_h_out[[t, k]] + dh_rec[k];
            let d_o = dh * tc;
            let d_c = dc[k] + dh * o * (1.0 - tc * tc);
            let c_prev = prev.map_or(0.0, |pt| tape.c[[pt, k]]);
            dc[k] = d_c * f;
            d_pre[[t, k]] = d_c * g * i * (1.0 - i);
            d_pre[[t, h_dim + k]] = d_c * c_prev * f * (1.0 - f);
            d_pre[[t, 2 * h_dim + k]] = d_c * i * (1.0 - g * g);
            d_pre[[t, 3 * h_dim + k]] = d_o * o * (1.0 - o);
        }
        let row = d_pre.row(t).to_owned();
        dh_rec = p.w_hh.t().dot(&row);
    }
    let mut h_prev_mat = Array2::zeros((t_len, h_dim));
    for t in 0..t_len {
        if let Some(pt) = prev_step(t, t_len, reverse) {
            h_prev_mat.row_mut(t).assign(&tape.h.row(pt));
        }
    }
    let grads = LstmDirParams {
        w_ih: d_pre.t().dot(x),
        w_hh: d_pre.t().dot(&h_prev_mat),
        bias: d_pre.sum_axis(Axis(0)),
    };
    let d_x = d_pre.dot(&p.w_ih);
    (grads, d_x)
}

struct LayerTape {
    /// Layer input after subsampling and dropout, as fed to both directions.
    x: Array2<f64>,
    mask: Option<Array2<f64>>,
    /// Frame count before this layer's subsampling (for gradient routing).
    pre_rows: usize,
    fwd: DirTape,
    bwd: DirTape,
}

pub struct EncoderTape {
    layers: Vec<LayerTape>,
}

fn encode_impl(
    params: &EncoderParams,
    config: &EncoderConfig,
    x: &Array2<f64>,
    dropout_seed: Option<u64>,
) -> Result<(Array2<f64>, EncoderTape)> {
    if x.nrows() == 0 {
        return Err(Error::EmptyUtterance);
    }
    if x.ncols() != config.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "expected {} feature dims, got {}",
            config.input_dim,
            x.ncols()
        )));
    }
    let mut cur = x.to_owned();
    let mut layers = Vec::with_capacity(config.num_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let pre_rows = cur.nrows();
        if l > 0 {
            cur = subsample_concat(&cur, config.subsample[l - 1]);
        }
        let mask = match dropout_seed {
            Some(seed) if config.dropout > 0.0 => {
                let m = dropout_mask(
                    cur.nrows(),
                    cur.ncols(),
                    config.dropout,
                    mix_seed(&[seed, l as u64]),
                );
                cur *= &m;
                Some(m)
            }
            _ => None,
        };
        let fwd = run_dir(&layer.fwd, &cur, false);
        let bwd = run_dir(&layer.bwd, &cur, true);
        let mut out = Array2::zeros((cur.nrows(), 2 * config.hidden_dim));
        out.slice_mut(s![.., ..config.hidden_dim]).assign(&fwd.h);
        out.slice_mut(s![.., config.hidden_dim..]).assign(&bwd.h);
        layers.push(LayerTape {
            x: cur,
            mask,
            pre_rows,
            fwd,
            bwd,
        });
        cur = out;
    }
    Ok((cur, EncoderTape { layers }))
}

/// Inference pass: no dropout, no tape. Returns the `T' x 2H` hidden states.
pub fn encode(params: &EncoderParams, config: &EncoderConfig, x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(encode_impl(params, config, x, None)?.0)
}

/// Training pass with seeded dropout. The tape holds everything
/// `encode_backward` needs.
pub fn encode_training(
    params: &EncoderParams,
    config: &EncoderConfig,
    x: &Array2<f64>,
    dropout_seed: u64,
) -> Result<(Array2<f64>, EncoderTape)> {
    encode_impl(params, config, x, Some(dropout_seed))
}

/// Backpropagate a loss gradient on the encoder output through every layer.
/// Gradients into the raw feature frames are discarded.
pub fn encode_backward(
    params: &EncoderParams,
    config: &EncoderConfig,
    tape: &EncoderTape,
    d_h: &Array2<f64>,
) -> EncoderParams {
    let mut grads = params.zeros_like();
    let h_dim = config.hidden_dim;
    let mut d_cur = d_h.to_owned();
    for l in (0..tape.layers.len()).rev() {
        let lt = &tape.layers[l];
        let d_fwd = d_cur.slice(s![.., ..h_dim]).to_owned();
        let d_bwd = d_cur.slice(s![.., h_dim..]).to_owned();
        let (g_f, dx_f) = backward_dir(&params.layers[l].fwd, &lt.x, &lt.fwd, &d_fwd, false);
        let (g_b, dx_b) = backward_dir(&params.layers[l].bwd, &lt.x, &lt.bwd, &d_bwd, true);
        grads.layers[l].fwd = g_f;
        grads.layers[l].bwd = g_b;
        let mut d_x = dx_f + dx_b;
        if let Some(m) = &lt.mask {
            d_x *= m;
        }
        if l > 0 {
            d_cur = subsample_backward(&d_x, config.subsample[l - 1], lt.pre_rows, 2 * h_dim);
        }
    }
    grads
}
