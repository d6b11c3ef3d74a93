//! Segmental CRF head over encoder hidden states.
//!
//! A candidate segment ⟨s, n⟩ with label y is scored by a small feature
//! network applied to the label embedding and the segment embedding
//! concat(h_s, h_n). The loss marginalizes over segmentations with two
//! dynamic programs, one over segmentations of the observed label sequence
//! and one over all label sequences, both capped at `max_seg_len` frames
//! per segment. Gradients come from forward-backward segment posteriors,
//! so no graph library is involved.
//!
//! Frame indices are 0-based and segment bounds are inclusive throughout.

use ndarray::{s, Array1, Array2, Array3};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{log_add, mix_seed, seeded_init, InitScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative expressed through the activation output.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScrfConfig {
    /// Size of the label inventory this head scores (no blank).
    pub num_labels: usize,
    /// Label embedding width.
    pub embed_dim: usize,
    /// Feature layer output width; also the width of the scoring vector.
    pub feature_dim: usize,
    /// Hard cap on segment duration in encoder frames.
    pub max_seg_len: usize,
    pub activation: Activation,
    /// Additional square feature layers stacked after the first.
    pub extra_layers: usize,
}

impl ScrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels == 0
            || self.embed_dim == 0
            || self.feature_dim == 0
            || self.max_seg_len == 0
        {
            return Err(Error::Config(
                "scrf dims and max segment length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One stacked feature layer: `z' = act(w z + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScrfParams {
    /// Label embeddings, one row per label.
    pub m: Array2<f64>,
    /// Maps label embeddings into feature space.
    pub w1: Array2<f64>,
    /// Maps segment embeddings (start and end states concatenated) into
    /// feature space.
    pub w2: Array2<f64>,
    pub b: Array1<f64>,
    /// Scoring vector applied to the final feature output.
    pub w: Array1<f64>,
    pub extra: Vec<FeatureLayer>,
}

impl ScrfParams {
    /// `hidden_dim` is the encoder output width; segment embeddings are
    /// twice that.
    pub fn init(config: &ScrfConfig, hidden_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if hidden_dim == 0 {
            return Err(Error::Config("encoder output width must be positive".into()));
        }
        let k = config.num_labels;
        let e = config.embed_dim;
        let f = config.feature_dim;
        let extra = (0..config.extra_layers)
            .map(|i| FeatureLayer {
                w: seeded_init(f, f, mix_seed(&[seed, 20 + i as u64]), InitScheme::UniformScaled),
                b: Array1::zeros(f),
            })
            .collect();
        Ok(Self {
            m: seeded_init(k, e, mix_seed(&[seed, 10]), InitScheme::UniformScaled),
            w1: seeded_init(f, e, mix_seed(&[seed, 11]), InitScheme::UniformScaled),
            w2: seeded_init(f, 2 * hidden_dim, mix_seed(&[seed, 12]), InitScheme::UniformScaled),
            b: Array1::zeros(f),
            w: seeded_init(1, f, mix_seed(&[seed, 13]), InitScheme::UniformScaled)
                .row(0)
                .to_owned(),
            extra,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            m: Array2::zeros(self.m.raw_dim()),
            w1: Array2::zeros(self.w1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            w: Array1::zeros(self.w.raw_dim()),
            extra: self
                .extra
                .iter()
                .map(|l| FeatureLayer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        self.m.scaled_add(s, &other.m);
        self.w1.scaled_add(s, &other.w1);
        self.w2.scaled_add(s, &other.w2);
        self.b.scaled_add(s, &other.b);
        self.w.scaled_add(s, &other.w);
        for (a, b) in self.extra.iter_mut().zip(&other.extra) {
            a.w.scaled_add(s, &b.w);
            a.b.scaled_add(s, &b.b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.m *= s;
        self.w1 *= s;
        self.w2 *= s;
        self.b *= s;
        self.w *= s;
        for l in &mut self.extra {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let mut total = 0.0;
        self.visit(&mut |_, s| total += s.iter().map(|v| v * v).sum::<f64>());
        total
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("scrf.m", self.m.as_slice().expect("row-major"));
        f("scrf.w1", self.w1.as_slice().expect("row-major"));
        f("scrf.w2", self.w2.as_slice().expect("row-major"));
        f("scrf.b", self.b.as_slice().expect("contiguous"));
        f("scrf.w", self.w.as_slice().expect("contiguous"));
        for (i, l) in self.extra.iter().enumerate() {
            f(&format!("scrf.extra{i}.w"), l.w.as_slice().expect("row-major"));
            f(&format!("scrf.extra{i}.b"), l.b.as_slice().expect("contiguous"));
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("scrf.m", self.m.as_slice_mut().expect("row-major"));
        f("scrf.w1", self.w1.as_slice_mut().expect("row-major"));
        f("scrf.w2", self.w2.as_slice_mut().expect("row-major"));
        f("scrf.b", self.b.as_slice_mut().expect("contiguous"));
        f("scrf.w", self.w.as_slice_mut().expect("contiguous"));
        for (i, l) in self.extra.iter_mut().enumerate() {
            f(
                &format!("scrf.extra{i}.w"),
                l.w.as_slice_mut().expect("row-major"),
            );
            f(
                &format!("scrf.extra{i}.b"),
                l.b.as_slice_mut().expect("contiguous"),
            );
        }
    }
}

/// One labeled span of encoder frames, 0-based inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn duration(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Checks that `segments` tile frames `0..t_len` in order and respect the
/// duration cap.
pub fn validate_segmentation(segments: &[Segment], t_len: usize, max_seg_len: usize) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::LabelSequenceUnreachable(
            "segmentation has no segments".into(),
        ));
    }
    let mut expect = 0;
    for seg in segments {
        if seg.start != expect || seg.end < seg.start || seg.duration() > max_seg_len {
            return Err(Error::LabelSequenceUnreachable(format!(
                "segment ({}, {}) breaks the contiguous cover at frame {expect}",
                seg.start, seg.end
            )));
        }
        expect = seg.end + 1;
    }
    if expect != t_len {
        return Err(Error::LabelSequenceUnreachable(format!(
            "segments cover {expect} of {t_len} frames"
        )));
    }
    Ok(())
}

/// True when a label sequence of length `j` can tile `t` frames under the
/// duration cap `l`.
pub fn reachable(j: usize, t: usize, l: usize) -> bool {
    j >= 1 && j <= t && t <= j * l
}

pub fn label_embedding(y: usize, m: &Array2<f64>) -> Result<Array1<f64>> {
    if y >= m.nrows() {
        return Err(Error::LabelOutOfVocab {
            id: y,
            vocab: m.nrows(),
        });
    }
    Ok(m.row(y).to_owned())
}

/// Segment embedding: start and end hidden states concatenated.
pub fn segment_embedding(h: &Array2<f64>, start: usize, end: usize) -> Result<Array1<f64>> {
    if start > end || end >= h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "segment ({start}, {end}) out of range for {} frames",
            h.nrows()
        )));
    }
    let d = h.ncols();
    let mut out = Array1::zeros(2 * d);
    out.slice_mut(s![..d]).assign(&h.row(start));
    out.slice_mut(s![d..]).assign(&h.row(end));
    Ok(out)
}

fn score_from_feature(z0: Array1<f64>, params: &ScrfParams, config: &ScrfConfig) -> f64 {
    if params.extra.is_empty() {
        return params.w.dot(&z0);
    }
    let mut z = z0;
    for layer in &params.extra {
        let mut q = layer.w.dot(&z) + &layer.b;
        q.mapv_inplace(|v| config.activation.apply(v));
        z = q;
    }
    params.w.dot(&z)
}

/// Straight-line segment score used by the oracles; the DP path goes
/// through [`build_score_table`] instead.
pub fn segment_score(
    y: usize,
    start: usize,
    end: usize,
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<f64> {
    let duration = end - start + 1;
    debug_assert!(duration <= config.max_seg_len);
    let u = label_embedding(y, &params.m)?;
    let xbar = segment_embedding(h, start, end)?;
    let mut pre = params.w1.dot(&u) + params.w2.dot(&xbar) + &params.b;
    pre.mapv_inplace(|v| config.activation.apply(v));
    Ok(score_from_feature(pre, params, config))
}

/// Memoized segment scores plus the shared projections the gradient pass
/// reuses. Storage is `|Y| x T' x L_eff`, never quadratic in `T'` times
/// the hidden width.
pub struct SegmentScoreTable {
    /// `scores[[y, n, d-1]]` holds the score of segment ⟨n-d+1, n⟩ with
    /// label y; unpopulated cells stay at `-inf`.
    scores: Array3<f64>,
    a: Array2<f64>,
    p_start: Array2<f64>,
    p_end: Array2<f64>,
    len_cap: usize,
}

impl SegmentScoreTable {
    pub fn t_len(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn num_labels(&self) -> usize {
        self.scores.shape()[0]
    }

    /// Effective duration cap: `min(max_seg_len, T')`.
    pub fn len_cap(&self) -> usize {
        self.len_cap
    }

    pub fn get(&self, y: usize, start: usize, end: usize) -> f64 {
        self.scores[[y, end, end - start]]
    }
}

pub fn build_score_table(
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<SegmentScoreTable> {
    config.validate()?;
    let t_len = h.nrows();
    if t_len == 0 {
        return Err(Error::EmptyUtterance);
    }
    let d_h = h.ncols();
    if params.w2.ncols() != 2 * d_h {
        return Err(Error::DimensionMismatch(format!(
            "segment projection expects {} state dims, encoder produced {}",
            params.w2.ncols() / 2,
            d_h
        )));
    }
    let k = config.num_labels;
    let f_dim = config.feature_dim;
    let len_cap = config.max_seg_len.min(t_len);
    let a = params.m.dot(&params.w1.t());
    let p_start = h.dot(&params.w2.slice(s![.., ..d_h]).t());
    let p_end = h.dot(&params.w2.slice(s![.., d_h..]).t());
    let mut scores = Array3::from_elem((k, t_len, len_cap), f64::NEG_INFINITY);
    let mut pre = Array1::zeros(f_dim);
    for y in 0..k {
        for n in 0..t_len {
            for d in 1..=len_cap.min(n + 1) {
                let start = n + 1 - d;
                for fi in 0..f_dim {
                    pre[fi] = a[[y, fi]] + p_start[[start, fi]] + p_end[[n, fi]] + params.b[fi];
                }
                let z0 = pre.mapv(|v| config.activation.apply(v));
                scores[[y, n, d - 1]] = score_from_feature(z0, params, config);
            }
        }
    }
    Ok(SegmentScoreTable {
        scores,
        a,
        p_start,
        p_end,
        len_cap,
    })
}

fn check_labels(y: &[usize], t_len: usize, k: usize) -> Result<()> {
    if y.is_empty() {
        return Err(Error::LabelSequenceUnreachable(
            "empty label sequence: this model emits at least one segment".into(),
        ));
    }
    if y.len() > t_len {
        return Err(Error::MoreLabelsThanFrames {
            labels: y.len(),
            frames: t_len,
        });
    }
    for &id in y {
        if id >= k {
            return Err(Error::LabelOutOfVocab { id, vocab: k });
        }
    }
    Ok(())
}

/// Forward DP over segmentations of the observed labels.
/// `alpha[[j, t]]` = log mass of covering the first `t` frames with the
/// first `j` labels.
fn numerator_forward(table: &SegmentScoreTable, y: &[usize]) -> Array2<f64> {
    let t_len = table.t_len();
    let jn = y.len();
    let mut alpha = Array2::from_elem((jn + 1, t_len + 1), f64::NEG_INFINITY);
    alpha[[0, 0]] = 0.0;
    for j in 1..=jn {
        for t in j..=t_len {
            let mut acc = f64::NEG_INFINITY;
            for d in 1..=table.len_cap.min(t) {
                let prev = alpha[[j - 1, t - d]];
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                acc = log_add(acc, prev + table.scores[[y[j - 1], t - 1, d - 1]]);
            }
            alpha[[j, t]] = acc;
        }
    }
    alpha
}

/// Mirror of [`numerator_forward`]: `alpha_b[[j, t]]` = log mass of
/// covering frames `t..T'` with labels `j..J`.
fn numerator_backward(table: &SegmentScoreTable, y: &[usize]) -> Array2<f64> {
    let t_len = table.t_len();
    let jn = y.len();
    let mut alpha_b = Array2::from_elem((jn + 1, t_len + 1), f64::NEG_INFINITY);
    alpha_b[[jn, t_len]] = 0.0;
    for j in (0..jn).rev() {
        for t in (0..t_len).rev() {
            let mut acc = f64::NEG_INFINITY;
            for d in 1..=table.len_cap.min(t_len - t) {
                let next = alpha_b[[j + 1, t + d]];
                if next == f64::NEG_INFINITY {
                    continue;
                }
                acc = log_add(acc, next + table.scores[[y[j], t + d - 1, d - 1]]);
            }
            alpha_b[[j, t]] = acc;
        }
    }
    alpha_b
}

/// Forward DP over all label sequences: `beta[t]` = log mass of covering
/// the first `t` frames with any labels.
fn partition_forward(table: &SegmentScoreTable) -> Vec<f64> {
    let t_len = table.t_len();
    let k = table.num_labels();
    let mut beta = vec![f64::NEG_INFINITY; t_len + 1];
    beta[0] = 0.0;
    for t in 1..=t_len {
        let mut acc = f64::NEG_INFINITY;
        for d in 1..=table.len_cap.min(t) {
            if beta[t - d] == f64::NEG_INFINITY {
                continue;
            }
            for y in 0..k {
                acc = log_add(acc, beta[t - d] + table.scores[[y, t - 1, d - 1]]);
            }
        }
        beta[t] = acc;
    }
    beta
}

fn partition_backward(table: &SegmentScoreTable) -> Vec<f64> {
    let t_len = table.t_len();
    let k = table.num_labels();
    let mut beta_b = vec![f64::NEG_INFINITY; t_len + 1];
    beta_b[t_len] = 0.0;
    for t in (0..t_len).rev() {
        let mut acc = f64::NEG_INFINITY;
        for d in 1..=table.len_cap.min(t_len - t) {
            if beta_b[t + d] == f64::NEG_INFINITY {
                continue;
            }
            for y in 0..k {
                acc = log_add(acc, beta_b[t + d] + table.scores[[y, t + d - 1, d - 1]]);
            }
        }
        beta_b[t] = acc;
    }
    beta_b
}

pub fn log_numerator_from_table(table: &SegmentScoreTable, y: &[usize]) -> Result<f64> {
    check_labels(y, table.t_len(), table.num_labels())?;
    let alpha = numerator_forward(table, y);
    Ok(alpha[[y.len(), table.t_len()]])
}

pub fn log_partition_from_table(table: &SegmentScoreTable) -> f64 {
    let beta = partition_forward(table);
    beta[table.t_len()]
}

/// log Z(X, y): mass of all segmentations of the observed label sequence.
/// `-inf` when no segmentation fits under the duration cap.
pub fn scrf_log_numerator(
    h: &Array2<f64>,
    y: &[usize],
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<f64> {
    let table = build_score_table(h, params, config)?;
    log_numerator_from_table(&table, y)
}

/// log Z(X): mass of all label sequences and segmentations.
pub fn scrf_log_partition(
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<f64> {
    let table = build_score_table(h, params, config)?;
    Ok(log_partition_from_table(&table))
}

#[derive(Debug, Clone)]
pub struct ScrfLossOutput {
    pub loss: f64,
    pub grads: ScrfParams,
    pub d_h: Array2<f64>,
}

/// Negative log conditional probability of `y` plus analytic gradients for
/// the head parameters and the encoder states.
pub fn scrf_loss(
    h: &Array2<f64>,
    y: &[usize],
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<ScrfLossOutput> {
    let table = build_score_table(h, params, config)?;
    let t_len = table.t_len();
    check_labels(y, t_len, table.num_labels())?;
    if !reachable(y.len(), t_len, table.len_cap) {
        return Err(Error::LabelSequenceUnreachable(format!(
            "{} labels cannot tile {} frames with segments of at most {} frames",
            y.len(),
            t_len,
            table.len_cap
        )));
    }
    let jn = y.len();
    let alpha = numerator_forward(&table, y);
    let log_zy = alpha[[jn, t_len]];
    if log_zy == f64::NEG_INFINITY {
        return Err(Error::LabelSequenceUnreachable(format!(
            "no segmentation of {jn} labels covers {t_len} frames"
        )));
    }
    let alpha_b = numerator_backward(&table, y);
    let beta = partition_forward(&table);
    let beta_b = partition_backward(&table);
    let log_z = beta[t_len];
    let loss = log_z - log_zy;

    // d loss / d score(y, seg) = posterior under Z minus posterior under
    // Z(·, y), accumulated per table cell.
    let mut d_score = Array3::zeros(table.scores.raw_dim());
    let k = table.num_labels();
    for t in 1..=t_len {
        for d in 1..=table.len_cap.min(t) {
            if beta[t - d] == f64::NEG_INFINITY || beta_b[t] == f64::NEG_INFINITY {
                continue;
            }
            for lab in 0..k {
                let p = (beta[t - d] + table.scores[[lab, t - 1, d - 1]] + beta_b[t] - log_z).exp();
                d_score[[lab, t - 1, d - 1]] += p;
            }
        }
    }
    for j in 1..=jn {
        for t in j..=t_len {
            if alpha_b[[j, t]] == f64::NEG_INFINITY {
                continue;
            }
            for d in 1..=table.len_cap.min(t) {
                if alpha[[j - 1, t - d]] == f64::NEG_INFINITY {
                    continue;
                }
                let p = (alpha[[j - 1, t - d]]
                    + table.scores[[y[j - 1], t - 1, d - 1]]
                    + alpha_b[[j, t]]
                    - log_zy)
                    .exp();
                d_score[[y[j - 1], t - 1, d - 1]] -= p;
            }
        }
    }

    let (grads, d_h) = feature_backward(&table, h, params, config, &d_score);
    Ok(ScrfLossOutput { loss, grads, d_h })
}

/// Pushes per-segment score gradients back through the feature network
/// into head parameters and hidden states.
fn feature_backward(
    table: &SegmentScoreTable,
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
    d_score: &Array3<f64>,
) -> (ScrfParams, Array2<f64>) {
    let t_len = table.t_len();
    let k = table.num_labels();
    let f_dim = config.feature_dim;
    let d_h_dim = h.ncols();
    let mut grads = params.zeros_like();
    let mut d_a = Array2::zeros((k, f_dim));
    let mut d_p_start = Array2::zeros((t_len, f_dim));
    let mut d_p_end = Array2::zeros((t_len, f_dim));
    let mut pre = Array1::zeros(f_dim);
    for y in 0..k {
        for n in 0..t_len {
            for d in 1..=table.len_cap.min(n + 1) {
                let ds = d_score[[y, n, d - 1]];
                if ds == 0.0 {
                    continue;
                }
                let start = n + 1 - d;
                for fi in 0..f_dim {
                    pre[fi] = table.a[[y, fi]]
                        + table.p_start[[start, fi]]
                        + table.p_end[[n, fi]]
                        + params.b[fi];
                }
                let mut zs = Vec::with_capacity(params.extra.len() + 1);
                zs.push(pre.mapv(|v| config.activation.apply(v)));
                for layer in &params.extra {
                    let mut q = layer.w.dot(zs.last().expect("nonempty")) + &layer.b;
                    q.mapv_inplace(|v| config.activation.apply(v));
                    zs.push(q);
                }
                grads.w.scaled_add(ds, zs.last().expect("nonempty"));
                let mut dz = &params.w * ds;
                for (i, layer) in params.extra.iter().enumerate().rev() {
                    let z_out = &zs[i + 1];
                    let dq = Array1::from_shape_fn(f_dim, |fi| {
                        dz[fi] * config.activation.grad_from_output(z_out[fi])
                    });
                    grads.extra[i].b += &dq;
                    for (mut w_row, &d) in grads.extra[i].w.rows_mut().into_iter().zip(&dq) {
                        w_row.scaled_add(d, &zs[i]);
                    }
                    dz = layer.w.t().dot(&dq);
                }
                for fi in 0..f_dim {
                    let d_pre = dz[fi] * config.activation.grad_from_output(zs[0][fi]);
                    d_a[[y, fi]] += d_pre;
                    d_p_start[[start, fi]] += d_pre;
                    d_p_end[[n, fi]] += d_pre;
                    grads.b[fi] += d_pre;
                }
            }
        }
    }
    grads.m = d_a.dot(&params.w1);
    grads.w1 = d_a.t().dot(&params.m);
    let w2_start = params.w2.slice(s![.., ..d_h_dim]);
    let w2_end = params.w2.slice(s![.., d_h_dim..]);
    grads
        .w2
        .slice_mut(s![.., ..d_h_dim])
        .assign(&d_p_start.t().dot(h));
    grads
        .w2
        .slice_mut(s![.., d_h_dim..])
        .assign(&d_p_end.t().dot(h));
    let d_h_out = d_p_start.dot(&w2_start) + d_p_end.dot(&w2_end);
    (grads, d_h_out)
}

/// Best label sequence and segmentation by total segment score.
///
/// Exact score ties at a DP cell are resolved toward the smaller label id,
/// then the shorter segment, so decoding is reproducible.
pub fn scrf_viterbi_decode(
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<(Vec<usize>, Vec<Segment>, f64)> {
    let table = build_score_table(h, params, config)?;
    let t_len = table.t_len();
    let k = table.num_labels();
    let mut v = vec![f64::NEG_INFINITY; t_len + 1];
    let mut back: Vec<(usize, usize)> = vec![(0, 0); t_len + 1];
    v[0] = 0.0;
    for t in 1..=t_len {
        let mut best = f64::NEG_INFINITY;
        let mut best_pick = (0usize, 0usize);
        for y in 0..k {
            for d in 1..=table.len_cap.min(t) {
                let cand = v[t - d] + table.scores[[y, t - 1, d - 1]];
                if cand > best || (cand == best && (y, d) < best_pick) {
                    best = cand;
                    best_pick = (y, d);
                }
            }
        }
        v[t] = best;
        back[t] = best_pick;
    }
    let mut labels = Vec::new();
    let mut segments = Vec::new();
    let mut t = t_len;
    while t > 0 {
        let (y, d) = back[t];
        labels.push(y);
        segments.push(Segment {
            start: t - d,
            end: t - 1,
        });
        t -= d;
    }
    labels.reverse();
    segments.reverse();
    Ok((labels, segments, v[t_len]))
}
