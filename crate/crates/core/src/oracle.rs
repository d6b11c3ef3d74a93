//! Exhaustive reference implementations the dynamic programs are tested
//! against, deliberately naive and guarded against combinatorial blowup.
//! They ship in the library so the selfcheck command can audit numerical
//! agreement on any machine.
//!
//! The segmental oracles score segments with the straight-line formula in
//! [`crate::scrf::segment_score`] and enumerate coverings literally; the
//! path oracle multiplies per-frame posteriors over every class path. No
//! recursion or precomputation is shared with the production code paths.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};

use crate::ctc::collapse;
use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;
use crate::scrf::{segment_score, ScrfConfig, ScrfParams, Segment};

/// Exhaustive enumeration is allowed up to this many frames.
pub const MAX_FRAMES: usize = 8;
/// Label inventory bound for the segmental oracles.
pub const MAX_SCRF_LABELS: usize = 4;
/// Label inventory bound for the path oracle.
pub const MAX_CTC_LABELS: usize = 3;

fn scrf_guard(t_len: usize, k: usize) -> Result<()> {
    if t_len == 0 {
        return Err(Error::EmptyUtterance);
    }
    if t_len > MAX_FRAMES || k > MAX_SCRF_LABELS {
        return Err(Error::OracleGuard(format!(
            "{t_len} frames x {k} labels exceeds the {MAX_FRAMES} x {MAX_SCRF_LABELS} exhaustive bound"
        )));
    }
    Ok(())
}

fn ctc_guard(t_len: usize, k: usize) -> Result<()> {
    if t_len == 0 {
        return Err(Error::EmptyUtterance);
    }
    if t_len > MAX_FRAMES || k > MAX_CTC_LABELS {
        return Err(Error::OracleGuard(format!(
            "{t_len} frames x {k} labels exceeds the {MAX_FRAMES} x {MAX_CTC_LABELS} exhaustive bound"
        )));
    }
    Ok(())
}

/// All ways to tile frames `0..t_len` with `j` segments of duration at most
/// `l`, in lexicographic order of the duration sequence. Empty when
/// infeasible.
pub fn enumerate_segmentations(t_len: usize, j: usize, l: usize) -> Vec<Vec<Segment>> {
    fn rec(
        start: usize,
        t_len: usize,
        remaining: usize,
        l: usize,
        cur: &mut Vec<Segment>,
        out: &mut Vec<Vec<Segment>>,
    ) {
        if remaining == 0 {
            if start == t_len {
                out.push(cur.clone());
            }
            return;
        }
        for d in 1..=l {
            if start + d > t_len {
                break;
            }
            cur.push(Segment {
                start,
                end: start + d - 1,
            });
            rec(start + d, t_len, remaining - 1, l, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, t_len, j, l, &mut Vec::with_capacity(j), &mut out);
    out
}

/// Composition count by recurrence: `C(0, 0) = 1`,
/// `C(t, j) = Σ_{d=1..min(l,t)} C(t-d, j-1)`.
pub fn count_segmentations(t_len: usize, j: usize, l: usize) -> u64 {
    let mut c = Array2::<u64>::zeros((j + 1, t_len + 1));
    c[[0, 0]] = 1;
    for jj in 1..=j {
        for t in 1..=t_len {
            let mut total = 0;
            for d in 1..=l.min(t) {
                total += c[[jj - 1, t - d]];
            }
            c[[jj, t]] = total;
        }
    }
    c[[j, t_len]]
}

/// Every label sequence of length `j` over `k` labels, in counting order.
pub fn all_label_sequences(k: usize, j: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..j {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

/// Segment scores computed one by one with the straight-line formula.
fn direct_score_cube(
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<Array3<f64>> {
    let t_len = h.nrows();
    let mut cube = Array3::from_elem((config.num_labels, t_len, t_len), f64::NAN);
    for y in 0..config.num_labels {
        for s in 0..t_len {
            for n in s..t_len.min(s + config.max_seg_len) {
                cube[[y, s, n]] = segment_score(y, s, n, h, params, config)?;
            }
        }
    }
    Ok(cube)
}

fn labeled_cover_score(cube: &Array3<f64>, y: &[usize], segs: &[Segment]) -> f64 {
    y.iter()
        .zip(segs)
        .map(|(&lab, seg)| cube[[lab, seg.start, seg.end]])
        .sum()
}

/// Literal log-sum over coverings. With `y`, sums over segmentations of
/// that sequence; without, over every label sequence of every feasible
/// length as well. `-inf` when nothing covers the frames.
pub fn brute_force_scrf(
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
    y: Option<&[usize]>,
) -> Result<f64> {
    scrf_guard(h.nrows(), config.num_labels)?;
    let t_len = h.nrows();
    let cube = direct_score_cube(h, params, config)?;
    let mut terms = Vec::new();
    match y {
        Some(y) => {
            for &id in y {
                if id >= config.num_labels {
                    return Err(Error::LabelOutOfVocab {
                        id,
                        vocab: config.num_labels,
                    });
                }
            }
            for segs in enumerate_segmentations(t_len, y.len(), config.max_seg_len) {
                terms.push(labeled_cover_score(&cube, y, &segs));
            }
        }
        None => {
            for j in 1..=t_len {
                let segmentations = enumerate_segmentations(t_len, j, config.max_seg_len);
                if segmentations.is_empty() {
                    continue;
                }
                for labels in all_label_sequences(config.num_labels, j) {
                    for segs in &segmentations {
                        terms.push(labeled_cover_score(&cube, &labels, segs));
                    }
                }
            }
        }
    }
    if terms.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    log_sum_exp(&terms)
}

/// Literal argmax over every (labels, segmentation) pair.
pub fn brute_force_scrf_viterbi(
    h: &Array2<f64>,
    params: &ScrfParams,
    config: &ScrfConfig,
) -> Result<(Vec<usize>, Vec<Segment>, f64)> {
    scrf_guard(h.nrows(), config.num_labels)?;
    let t_len = h.nrows();
    let cube = direct_score_cube(h, params, config)?;
    let mut best: Option<(Vec<usize>, Vec<Segment>, f64)> = None;
    for j in 1..=t_len {
        for segs in enumerate_segmentations(t_len, j, config.max_seg_len) {
            for labels in all_label_sequences(config.num_labels, j) {
                let score = labeled_cover_score(&cube, &labels, &segs);
                if best.as_ref().is_none_or(|(_, _, b)| score > *b) {
                    best = Some((labels, segs.clone(), score));
                }
            }
        }
    }
    Ok(best.expect("at least one covering exists for t_len >= 1"))
}

fn for_each_path(classes: usize, t_len: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; t_len];
    loop {
        f(&path);
        let mut i = 0;
        loop {
            if i == t_len {
                return;
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Literal log P(y | X): sum over every class path whose collapse is `y`.
pub fn brute_force_ctc(post: &Array2<f64>, y: &[usize]) -> Result<f64> {
    ctc_guard(post.nrows(), post.ncols() - 1)?;
    let mut terms = Vec::new();
    for_each_path(post.ncols(), post.nrows(), |path| {
        if collapse(path) == y {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &c)| post[[t, c]].ln())
                .sum();
            terms.push(lp);
        }
    });
    if terms.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    log_sum_exp(&terms)
}

/// Every reachable collapsed sequence with its total log probability, in
/// lexicographic order. The probabilities partition the path space.
pub fn ctc_collapse_class_log_probs(post: &Array2<f64>) -> Result<Vec<(Vec<usize>, f64)>> {
    ctc_guard(post.nrows(), post.ncols() - 1)?;
    let mut classes: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for_each_path(post.ncols(), post.nrows(), |path| {
        let lp: f64 = path
            .iter()
            .enumerate()
            .map(|(t, &c)| post[[t, c]].ln())
            .sum();
        classes.entry(collapse(path)).or_default().push(lp);
    });
    classes
        .into_iter()
        .map(|(class, terms)| Ok((class, log_sum_exp(&terms)?)))
        .collect()
}
