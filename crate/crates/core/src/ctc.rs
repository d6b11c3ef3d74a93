//! Frame-level classification head with blank-token alignment marginals.
//!
//! A linear projection of the encoder states gives per-frame logits over
//! the label inventory plus a blank token at index 0; true label y maps to
//! class y + 1. The loss sums over every frame path whose collapse (merge
//! adjacent repeats, then delete blanks) equals the target, computed by the
//! usual forward-backward recursion over the blank-interleaved expansion of
//! the target. Logit gradients take the closed form posterior minus state
//! occupancy, so they flow straight back into the encoder.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::numerics::{argmax, log_add, mix_seed, seeded_init, softmax_in_place, InitScheme};

/// Class index reserved for the blank token.
pub const BLANK: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct CtcParams {
    /// Projection to `|Y| + 1` classes, blank first.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl CtcParams {
    pub fn init(num_labels: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if num_labels == 0 || hidden_dim == 0 {
            return Err(Error::Config(
                "label count and encoder output width must be positive".into(),
            ));
        }
        Ok(Self {
            w: seeded_init(
                num_labels + 1,
                hidden_dim,
                mix_seed(&[seed, 30]),
                InitScheme::UniformScaled,
            ),
            b: Array1::zeros(num_labels + 1),
        })
    }

    pub fn num_labels(&self) -> usize {
        self.w.nrows() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        self.w.scaled_add(s, &other.w);
        self.b.scaled_add(s, &other.b);
    }

    pub fn scale(&mut self, s: f64) {
        self.w *= s;
        self.b *= s;
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>() + self.b.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("ctc.w", self.w.as_slice().expect("row-major"));
        f("ctc.b", self.b.as_slice().expect("contiguous"));
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("ctc.w", self.w.as_slice_mut().expect("row-major"));
        f("ctc.b", self.b.as_slice_mut().expect("contiguous"));
    }
}

/// Row-normalized per-frame class posteriors, `T' x (|Y| + 1)`.
pub fn ctc_posteriors(h: &Array2<f64>, params: &CtcParams) -> Result<Array2<f64>> {
    if h.nrows() == 0 {
        return Err(Error::EmptyUtterance);
    }
    if params.w.ncols() != h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "projection expects {} state dims, encoder produced {}",
            params.w.ncols(),
            h.ncols()
        )));
    }
    let mut logits = h.dot(&params.w.t());
    logits += &params.b;
    for mut row in logits.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("row-major"));
    }
    Ok(logits)
}

/// Merge adjacent repeats, then delete blanks. Input is in class indices
/// (blank 0); output is in label ids.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev {
            if p != BLANK {
                out.push(p - 1);
            }
            prev = Some(p);
        }
    }
    out
}

/// Shortest frame path that collapses to `y`: one frame per label plus a
/// separating blank inside each adjacent repeat.
pub fn ctc_min_frames(y: &[usize]) -> usize {
    let repeats = y.windows(2).filter(|w| w[0] == w[1]).count();
    y.len() + repeats
}

/// Blank-interleaved expansion of the target, length `2J + 1`.
fn expanded(y: &[usize]) -> Vec<usize> {
    let mut z = Vec::with_capacity(2 * y.len() + 1);
    z.push(BLANK);
    for &lab in y {
        z.push(lab + 1);
        z.push(BLANK);
    }
    z
}

fn validate_target(post: &Array2<f64>, y: &[usize]) -> Result<()> {
    if post.nrows() == 0 {
        return Err(Error::EmptyUtterance);
    }
    let k = post.ncols() - 1;
    for &id in y {
        if id >= k {
            return Err(Error::LabelOutOfVocab { id, vocab: k });
        }
    }
    let min = ctc_min_frames(y);
    if post.nrows() < min {
        return Err(Error::LabelSequenceUnalignable(format!(
            "{} labels with {} adjacent repeats need at least {min} frames, got {}",
            y.len(),
            min - y.len(),
            post.nrows()
        )));
    }
    Ok(())
}

/// log P(y | X) by the forward recursion alone: two rolling rows over the
/// expanded states, so memory stays linear in the target length.
pub fn ctc_log_prob(post: &Array2<f64>, y: &[usize]) -> Result<f64> {
    validate_target(post, y)?;
    let z = expanded(y);
    let s_len = z.len();
    let t_len = post.nrows();
    let mut prev = vec![f64::NEG_INFINITY; s_len];
    prev[0] = post[[0, z[0]]].ln();
    if s_len > 1 {
        prev[1] = post[[0, z[1]]].ln();
    }
    let mut cur = vec![f64::NEG_INFINITY; s_len];
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if s >= 2 && z[s] != BLANK && z[s] != z[s - 2] {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                acc + post[[t, z[s]]].ln()
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(if s_len > 1 {
        log_add(prev[s_len - 1], prev[s_len - 2])
    } else {
        prev[0]
    })
}

/// Loss `-log P(y | X)` plus the gradient w.r.t. the logits that produced
/// `post`: per-frame posterior minus expected state occupancy.
pub fn ctc_loss(post: &Array2<f64>, y: &[usize]) -> Result<(f64, Array2<f64>)> {
    validate_target(post, y)?;
    let z = expanded(y);
    let s_len = z.len();
    let t_len = post.nrows();
    let lp = post.mapv(f64::ln);

    // alpha[[t, s]]: prefix mass ending in state s, emission at t included
    let mut alpha = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    alpha[[0, 0]] = lp[[0, z[0]]];
    if s_len > 1 {
        alpha[[0, 1]] = lp[[0, z[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if s >= 2 && z[s] != BLANK && z[s] != z[s - 2] {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = if acc == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                acc + lp[[t, z[s]]]
            };
        }
    }
    let log_p = if s_len > 1 {
        log_add(alpha[[t_len - 1, s_len - 1]], alpha[[t_len - 1, s_len - 2]])
    } else {
        alpha[[t_len - 1, 0]]
    };
    if log_p == f64::NEG_INFINITY {
        return Err(Error::LabelSequenceUnalignable(
            "target has zero probability under the posteriors".into(),
        ));
    }

    // beta[[t, s]]: suffix mass from state s, emissions after t only
    let mut beta = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    beta[[t_len - 1, s_len - 1]] = 0.0;
    if s_len > 1 {
        beta[[t_len - 1, s_len - 2]] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[[t + 1, s]] + lp[[t + 1, z[s]]];
            if s + 1 < s_len {
                acc = log_add(acc, beta[[t + 1, s + 1]] + lp[[t + 1, z[s + 1]]]);
            }
            if s + 2 < s_len && z[s + 2] != BLANK && z[s + 2] != z[s] {
                acc = log_add(acc, beta[[t + 1, s + 2]] + lp[[t + 1, z[s + 2]]]);
            }
            beta[[t, s]] = acc;
        }
    }

    let mut d_logits = post.clone();
    for t in 0..t_len {
        for s in 0..s_len {
            let g = alpha[[t, s]] + beta[[t, s]] - log_p;
            if g > f64::NEG_INFINITY {
                d_logits[[t, z[s]]] -= g.exp();
            }
        }
    }
    Ok((-log_p, d_logits))
}

#[derive(Debug, Clone)]
pub struct CtcLossOutput {
    pub loss: f64,
    pub grads: CtcParams,
    pub d_h: Array2<f64>,
}

/// Full head pass: states to posteriors to loss, with gradients for the
/// projection and the encoder states.
pub fn ctc_head_loss(h: &Array2<f64>, params: &CtcParams, y: &[usize]) -> Result<CtcLossOutput> {
    let post = ctc_posteriors(h, params)?;
    let (loss, d_logits) = ctc_loss(&post, y)?;
    Ok(CtcLossOutput {
        loss,
        grads: CtcParams {
            w: d_logits.t().dot(h),
            b: d_logits.sum_axis(Axis(0)),
        },
        d_h: d_logits.dot(&params.w),
    })
}

/// Per-frame argmax followed by collapse. Argmax ties resolve toward blank,
/// then the lowest label id, which is the natural class order.
pub fn ctc_best_path_decode(post: &Array2<f64>) -> Vec<usize> {
    let path: Vec<usize> = post
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("row-major")))
        .collect();
    collapse(&path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, rel_err};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_states(t: usize, d: usize, seed: u64) -> Array2<f64> {
        seeded_init(t, d, seed, InitScheme::UniformScaled)
    }

    fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
        let mut p = logits.clone();
        for mut row in p.rows_mut() {
            softmax_in_place(row.as_slice_mut().unwrap());
        }
        p
    }

    #[test]
    fn zero_weights_give_uniform_posteriors() {
        let h = random_states(3, 4, 1);
        let params = CtcParams {
            w: Array2::zeros((3, 4)),
            b: Array1::zeros(3),
        };
        let p = ctc_posteriors(&h, &params).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let h = random_states(5, 4, 2);
        let params = CtcParams::init(2, 4, 3).unwrap();
        let p = ctc_posteriors(&h, &params).unwrap();
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn collapse_rules() {
        // class 1 is label 0, class 2 is label 1
        assert_eq!(collapse(&[1, 1, 0, 1]), vec![0, 0]);
        assert_eq!(collapse(&[0, 0, 0]), Vec::<usize>::new());
        assert_eq!(collapse(&[1, 1, 2, 2]), vec![0, 1]);
        assert_eq!(collapse(&[]), Vec::<usize>::new());
        assert_eq!(collapse(&[0, 1, 0, 0, 2, 2, 0]), vec![0, 1]);
    }

    #[test]
    fn min_frames_counts_repeat_separators() {
        assert_eq!(ctc_min_frames(&[]), 0);
        assert_eq!(ctc_min_frames(&[0]), 1);
        assert_eq!(ctc_min_frames(&[0, 0]), 3);
        assert_eq!(ctc_min_frames(&[0, 1, 1, 1]), 6);
    }

    #[test]
    fn single_frame_loss_is_label_posterior() {
        let post = array![[0.2, 0.5, 0.3]];
        let (loss, _) = ctc_loss(&post, &[0]).unwrap();
        assert_abs_diff_eq!(loss, -0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_two_frame_example() {
        // frames over {blank, a} at 0.5 each; paths aa, a-, -a collapse to [a]
        let post = array![[0.5, 0.5], [0.5, 0.5]];
        let (loss, _) = ctc_loss(&post, &[0]).unwrap();
        assert_abs_diff_eq!(loss, -0.75f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.2876820724517809, epsilon = 1e-15);
    }

    #[test]
    fn repeated_label_needs_a_separator_frame() {
        let post = array![[0.5, 0.5], [0.5, 0.5]];
        match ctc_loss(&post, &[0, 0]) {
            Err(Error::LabelSequenceUnalignable(_)) => {}
            other => panic!("expected unalignable error, got {other:?}"),
        }
        match ctc_loss(&array![[0.4, 0.3, 0.3]], &[0, 1]) {
            Err(Error::LabelSequenceUnalignable(_)) => {}
            other => panic!("expected unalignable error, got {other:?}"),
        }
    }

    #[test]
    fn empty_target_forces_all_blanks() {
        let post = softmax_rows(&random_states(4, 3, 5));
        let (loss, _) = ctc_loss(&post, &[]).unwrap();
        let expected: f64 = -(0..4).map(|t| post[[t, BLANK]].ln()).sum::<f64>();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-10);
    }

    #[test]
    fn rolling_forward_matches_full_forward_backward() {
        let post = softmax_rows(&(random_states(6, 4, 7) * 2.0));
        for y in [vec![0], vec![2, 1], vec![1, 1, 0], vec![]] {
            let (loss, _) = ctc_loss(&post, &y).unwrap();
            let lp = ctc_log_prob(&post, &y).unwrap();
            assert_abs_diff_eq!(loss, -lp, epsilon = 1e-10);
        }
    }

    #[test]
    fn loss_invariant_under_per_frame_logit_shift() {
        let logits = random_states(5, 4, 9) * 3.0;
        let mut shifted = logits.clone();
        for (t, mut row) in shifted.rows_mut().into_iter().enumerate() {
            row += t as f64 * 1.7 - 2.0;
        }
        let y = vec![1, 2];
        let (a, _) = ctc_loss(&softmax_rows(&logits), &y).unwrap();
        let (b, _) = ctc_loss(&softmax_rows(&shifted), &y).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let logits = random_states(5, 4, 11) * 2.0;
        for y in [vec![1, 2, 1], vec![0, 0], vec![]] {
            let post = softmax_rows(&logits);
            let (_, d_logits) = ctc_loss(&post, &y).unwrap();
            let theta: Vec<f64> = logits.iter().cloned().collect();
            let numeric = finite_difference_gradient(
                |t| {
                    let l = Array2::from_shape_vec(logits.raw_dim(), t.to_vec()).expect("shape");
                    Ok(ctc_loss(&softmax_rows(&l), &y)?.0)
                },
                &theta,
                1e-5,
            )
            .unwrap();
            for (i, (&n, &a)) in numeric.iter().zip(d_logits.iter()).enumerate() {
                assert!(rel_err(n, a) < 1e-6, "logit {i}: numeric {n} analytic {a}");
            }
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let h = random_states(4, 3, 13);
        let params = CtcParams::init(2, 3, 17).unwrap();
        let y = vec![1, 0];
        let out = ctc_head_loss(&h, &params, &y).unwrap();

        let mut theta = Vec::new();
        params.visit(&mut |_, s| theta.extend_from_slice(s));
        let numeric = finite_difference_gradient(
            |t| {
                let mut p = params.clone();
                let mut off = 0;
                p.visit_mut(&mut |_, s| {
                    s.copy_from_slice(&t[off..off + s.len()]);
                    off += s.len();
                });
                Ok(ctc_head_loss(&h, &p, &y)?.loss)
            },
            &theta,
            1e-5,
        )
        .unwrap();
        let mut analytic = Vec::new();
        out.grads.visit(&mut |_, s| analytic.extend_from_slice(s));
        for (i, (&n, &a)) in numeric.iter().zip(&analytic).enumerate() {
            assert!(rel_err(n, a) < 1e-6, "param {i}: numeric {n} analytic {a}");
        }

        let h_flat: Vec<f64> = h.iter().cloned().collect();
        let numeric_h = finite_difference_gradient(
            |t| {
                let hp = Array2::from_shape_vec(h.raw_dim(), t.to_vec()).expect("shape");
                Ok(ctc_head_loss(&hp, &params, &y)?.loss)
            },
            &h_flat,
            1e-5,
        )
        .unwrap();
        for (i, (&n, &a)) in numeric_h.iter().zip(out.d_h.iter()).enumerate() {
            assert!(rel_err(n, a) < 1e-6, "state {i}: numeric {n} analytic {a}");
        }
    }

    #[test]
    fn best_path_is_collapsed_argmax() {
        let post = softmax_rows(&(random_states(6, 4, 19) * 4.0));
        let mut path = Vec::new();
        for row in post.rows() {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            path.push(best);
        }
        assert_eq!(ctc_best_path_decode(&post), collapse(&path));
    }

    #[test]
    fn best_path_ties_prefer_blank() {
        let post = array![[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]];
        // frame 0 ties blank with label 0, frame 1 ties labels 0 and 1
        assert_eq!(ctc_best_path_decode(&post), vec![0]);
    }

    #[test]
    fn all_blank_argmax_decodes_empty() {
        let post = array![[0.8, 0.1, 0.1], [0.9, 0.05, 0.05]];
        assert_eq!(ctc_best_path_decode(&post), Vec::<usize>::new());
    }

    #[test]
    fn out_of_vocab_target_is_an_error() {
        let post = array![[0.5, 0.5], [0.5, 0.5]];
        match ctc_loss(&post, &[1]) {
            Err(Error::LabelOutOfVocab { id: 1, vocab: 1 }) => {}
            other => panic!("expected out-of-vocab error, got {other:?}"),
        }
    }
}
