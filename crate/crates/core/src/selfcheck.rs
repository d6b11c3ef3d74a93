//! Built-in verification suite: dynamic programs against enumeration
//! oracles, posterior normalization, and finite-difference gradient
//! checks, all on seeded random instances. A corruption hook perturbs one
//! DP output so the negative control can prove the checks have teeth.

use rand::Rng;
use std::str::FromStr;

use crate::ctc::{ctc_log_prob, ctc_min_frames, ctc_posteriors, CtcParams};
use crate::data::{synth_generate, SynthConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::joint::{joint_loss_grads, ModelConfig, ModelParams};
use crate::numerics::{
    finite_difference_gradient, mix_seed, rel_err, seeded_init, seeded_rng, InitScheme,
};
use crate::oracle::{
    all_label_sequences, brute_force_ctc, brute_force_scrf, brute_force_scrf_viterbi,
    ctc_collapse_class_log_probs,
};
use crate::scrf::{
    build_score_table, log_numerator_from_table, log_partition_from_table, reachable,
    scrf_viterbi_decode, Activation, ScrfConfig, ScrfParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScale {
    Small,
    Full,
}

impl FromStr for CheckScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(CheckScale::Small),
            "full" => Ok(CheckScale::Full),
            other => Err(Error::Config(format!(
                "unknown selfcheck scale '{other}' (expected small or full)"
            ))),
        }
    }
}

/// Test hook: adds a tiny offset to one DP's output inside the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    ScrfPartition,
    CtcForward,
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scrf-partition" => Ok(Corruption::ScrfPartition),
            "ctc-forward" => Ok(Corruption::CtcForward),
            other => Err(Error::Config(format!("unknown corruption '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.max_err < self.tolerance
    }
}

pub fn all_pass(results: &[CheckResult]) -> bool {
    results.iter().all(CheckResult::pass)
}

pub fn format_report(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<28} cases {:>4}  max err {:>12.3e}  tol {:>8.0e}  {}\n",
            r.name,
            r.cases,
            r.max_err,
            r.tolerance,
            if r.pass() { "PASS" } else { "FAIL" }
        ));
    }
    out
}

struct Accum {
    max_err: f64,
    cases: usize,
}

impl Accum {
    fn new() -> Self {
        Self {
            max_err: 0.0,
            cases: 0,
        }
    }

    fn push(&mut self, err: f64) {
        // NaN must never slip through a max() as a pass
        if err.is_nan() {
            self.max_err = f64::INFINITY;
        } else if err > self.max_err {
            self.max_err = err;
        }
        self.cases += 1;
    }

    fn result(self, name: &'static str, tolerance: f64) -> CheckResult {
        CheckResult {
            name,
            cases: self.cases,
            max_err: self.max_err,
            tolerance,
        }
    }
}

fn random_reachable_labels(rng: &mut impl Rng, t: usize, k: usize, l: usize) -> Vec<usize> {
    let j_min = t.div_ceil(l);
    let j = rng.random_range(j_min..=t);
    (0..j).map(|_| rng.random_range(0..k)).collect()
}

fn random_alignable_labels(rng: &mut impl Rng, t: usize, k: usize) -> Vec<usize> {
    for _ in 0..100 {
        let j = rng.random_range(0..=t);
        let y: Vec<usize> = (0..j).map(|_| rng.random_range(0..k)).collect();
        if ctc_min_frames(&y) <= t {
            return y;
        }
    }
    Vec::new()
}

fn scrf_checks(instances: usize, corruption: Option<Corruption>) -> Result<[CheckResult; 4]> {
    let hidden = 3;
    let corrupt = if corruption == Some(Corruption::ScrfPartition) {
        1e-6
    } else {
        0.0
    };
    let mut num = Accum::new();
    let mut part = Accum::new();
    let mut norm = Accum::new();
    let mut vit = Accum::new();
    for i in 0..instances {
        let mut rng = seeded_rng(mix_seed(&[1000, i as u64]));
        let t = rng.random_range(1..=6);
        let k = rng.random_range(1..=3);
        let l = rng.random_range(1..=t);
        let config = ScrfConfig {
            num_labels: k,
            embed_dim: 3,
            feature_dim: 4,
            max_seg_len: l,
            activation: Activation::Tanh,
            extra_layers: usize::from(i % 5 == 0),
        };
        let params = ScrfParams::init(&config, hidden, mix_seed(&[1001, i as u64]))?;
        let h = seeded_init(t, hidden, mix_seed(&[1002, i as u64]), InitScheme::UniformScaled);
        let table = build_score_table(&h, &params, &config)?;
        let dp_part = log_partition_from_table(&table) + corrupt;

        let y = random_reachable_labels(&mut rng, t, k, l);
        let dp_num = log_numerator_from_table(&table, &y)?;
        num.push((dp_num - brute_force_scrf(&h, &params, &config, Some(&y))?).abs());
        part.push((dp_part - brute_force_scrf(&h, &params, &config, None)?).abs());

        let mut total = 0.0;
        for j in 1..=t {
            if !reachable(j, t, l) {
                continue;
            }
            for seq in all_label_sequences(k, j) {
                total += (log_numerator_from_table(&table, &seq)? - dp_part).exp();
            }
        }
        norm.push((total - 1.0).abs());

        let (dp_labels, dp_segs, dp_score) = scrf_viterbi_decode(&h, &params, &config)?;
        let (bf_labels, bf_segs, bf_score) = brute_force_scrf_viterbi(&h, &params, &config)?;
        if dp_labels == bf_labels && dp_segs == bf_segs {
            vit.push((dp_score - bf_score).abs());
        } else {
            vit.push(f64::INFINITY);
        }
    }
    Ok([
        num.result("scrf numerator vs oracle", 1e-10),
        part.result("scrf partition vs oracle", 1e-10),
        norm.result("scrf normalization", 1e-8),
        vit.result("scrf viterbi vs oracle", 1e-10),
    ])
}

fn ctc_checks(instances: usize, corruption: Option<Corruption>) -> Result<[CheckResult; 2]> {
    let hidden = 3;
    let corrupt = if corruption == Some(Corruption::CtcForward) {
        1e-6
    } else {
        0.0
    };
    let mut fwd = Accum::new();
    let mut norm = Accum::new();
    for i in 0..instances {
        let mut rng = seeded_rng(mix_seed(&[2000, i as u64]));
        let t = rng.random_range(1..=6);
        let k = rng.random_range(1..=3);
        let params = CtcParams::init(k, hidden, mix_seed(&[2001, i as u64]))?;
        let h = seeded_init(t, hidden, mix_seed(&[2002, i as u64]), InitScheme::UniformScaled);
        let post = ctc_posteriors(&h, &params)?;

        let y = random_alignable_labels(&mut rng, t, k);
        let dp = ctc_log_prob(&post, &y)? + corrupt;
        fwd.push((dp - brute_force_ctc(&post, &y)?).abs());

        let total: f64 = ctc_collapse_class_log_probs(&post)?
            .iter()
            .map(|(_, lp)| lp.exp())
            .sum();
        norm.push((total - 1.0).abs());
    }
    Ok([
        fwd.result("ctc forward vs oracle", 1e-10),
        norm.result("ctc normalization", 1e-8),
    ])
}

fn gradient_check(utts_per_lambda: usize) -> Result<CheckResult> {
    let config = ModelConfig {
        encoder: EncoderConfig {
            input_dim: 4,
            hidden_dim: 3,
            num_layers: 2,
            subsample: vec![2],
            dropout: 0.0,
        },
        scrf: ScrfConfig {
            num_labels: 3,
            embed_dim: 3,
            feature_dim: 4,
            max_seg_len: 4,
            activation: Activation::Tanh,
            extra_layers: 0,
        },
    };
    let data = synth_generate(&SynthConfig {
        num_utterances: utts_per_lambda,
        vocab_size: 3,
        feature_dim: 4,
        labels_per_utt: (2, 3),
        seg_len: (3, 5),
        noise_sigma: 0.2,
        prototype_scale: 1.0,
        seed: 3000,
    })?;
    let mut acc = Accum::new();
    for (i, u) in data.iter().enumerate() {
        let params = ModelParams::init(&config, mix_seed(&[3001, i as u64]))?;
        for lambda in [0.0, 0.5, 1.0] {
            let out = joint_loss_grads(&u.features, &u.labels, &params, &config, lambda, 7)?;
            let numeric = finite_difference_gradient(
                |theta| {
                    let mut p = params.clone();
                    p.load_flat(theta)?;
                    Ok(joint_loss_grads(&u.features, &u.labels, &p, &config, lambda, 7)?.loss)
                },
                &params.to_flat(),
                1e-5,
            )?;
            let analytic = out.grads.to_flat();
            let worst = numeric
                .iter()
                .zip(&analytic)
                .map(|(&n, &a)| rel_err(n, a))
                .fold(0.0, f64::max);
            acc.push(worst);
        }
    }
    Ok(acc.result("joint gradient check", 1e-4))
}

pub fn run_selfcheck(
    scale: CheckScale,
    corruption: Option<Corruption>,
) -> Result<Vec<CheckResult>> {
    let (oracle_instances, grad_utts) = match scale {
        CheckScale::Small => (60, 1),
        CheckScale::Full => (220, 2),
    };
    let mut results = Vec::new();
    results.extend(scrf_checks(oracle_instances, corruption)?);
    results.extend(ctc_checks(oracle_instances, corruption)?);
    results.push(gradient_check(grad_utts)?);
    Ok(results)
}
