//! Edit-distance scoring, corpus phone error rate, and the convergence CSV.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{map_labels, PhoneMapping};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ErrorCounts {
    pub substitutions: u64,
    pub insertions: u64,
    pub deletions: u64,
    pub ref_len: u64,
}

impl ErrorCounts {
    pub fn total(&self) -> u64 {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_len += other.ref_len;
    }

    /// Percentage `(S + I + D) / N`. An empty reference with any errors is
    /// reported as infinite rather than dividing by zero.
    pub fn per(&self) -> f64 {
        if self.ref_len == 0 {
            if self.total() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            100.0 * self.total() as f64 / self.ref_len as f64
        }
    }
}

/// Minimal unit-cost alignment counts. On cost ties a substitution is
/// preferred over an insert-delete pair, then a deletion over an insertion;
/// the total is the Levenshtein optimum either way.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> ErrorCounts {
    let n = reference.len();
    let m = hypothesis.len();
    // cell = (total cost, subs, ins, dels) for ref[..i] vs hyp[..j]
    let mut dp = vec![vec![(0u64, 0u64, 0u64, 0u64); m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate().skip(1) {
        row[0] = (i as u64, 0, 0, i as u64);
    }
    for (j, cell) in dp[0].iter_mut().enumerate().skip(1) {
        *cell = (j as u64, 0, j as u64, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let (dc, ds, di, dd) = dp[i - 1][j - 1];
            let diag = if reference[i - 1] == hypothesis[j - 1] {
                (dc, ds, di, dd)
            } else {
                (dc + 1, ds + 1, di, dd)
            };
            let del = {
                let (c, s, ins, d) = dp[i - 1][j];
                (c + 1, s, ins, d + 1)
            };
            let ins = {
                let (c, s, i2, d) = dp[i][j - 1];
                (c + 1, s, i2 + 1, d)
            };
            let mut best = diag;
            if del.0 < best.0 {
                best = del;
            }
            if ins.0 < best.0 {
                best = ins;
            }
            dp[i][j] = best;
        }
    }
    let (_, substitutions, insertions, deletions) = dp[n][m];
    ErrorCounts {
        substitutions,
        insertions,
        deletions,
        ref_len: n as u64,
    }
}

/// Pools edit counts over matched id pairs, mapping both sides first when a
/// mapping is given. Pooling happens over counts, never over per-utterance
/// rates.
/// Alignment counts per utterance, in reference order. Every reference id
/// must have exactly one hypothesis.
pub fn per_utterance_counts(
    refs: &[(String, Vec<String>)],
    hyps: &[(String, Vec<String>)],
    mapping: Option<&PhoneMapping>,
) -> Result<Vec<(String, ErrorCounts)>> {
    if refs.len() != hyps.len() {
        return Err(Error::IdMismatch(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut by_id: HashMap<&str, &Vec<String>> = HashMap::with_capacity(hyps.len());
    for (id, seq) in hyps {
        if by_id.insert(id, seq).is_some() {
            return Err(Error::IdMismatch(format!("duplicate hypothesis id '{id}'")));
        }
    }
    let mut out = Vec::with_capacity(refs.len());
    for (id, ref_seq) in refs {
        let hyp_seq = by_id
            .remove(id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("no hypothesis for utterance '{id}'")))?;
        let counts = match mapping {
            Some(m) => edit_distance(&map_labels(ref_seq, m)?, &map_labels(hyp_seq, m)?),
            None => edit_distance(ref_seq, hyp_seq),
        };
        out.push((id.clone(), counts));
    }
    Ok(out)
}

pub fn corpus_counts(
    refs: &[(String, Vec<String>)],
    hyps: &[(String, Vec<String>)],
    mapping: Option<&PhoneMapping>,
) -> Result<ErrorCounts> {
    let mut totals = ErrorCounts::default();
    for (_, counts) in per_utterance_counts(refs, hyps, mapping)? {
        totals.add(&counts);
    }
    Ok(totals)
}

/// Corpus phone error rate as a percentage.
pub fn corpus_per(
    refs: &[(String, Vec<String>)],
    hyps: &[(String, Vec<String>)],
    mapping: Option<&PhoneMapping>,
) -> Result<f64> {
    Ok(corpus_counts(refs, hyps, mapping)?.per())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "joint" => Ok(Phase::Joint),
            other => Err(Error::Config(format!("unknown training phase '{other}'"))),
        }
    }
}

/// One training epoch summary, as written to the convergence CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ctc: f64,
    pub loss_scrf: f64,
    pub valid_per: f64,
    pub phase: Phase,
}

pub const CONVERGENCE_HEADER: &str = "epoch,lr,loss_total,loss_ctc,loss_scrf,valid_per,phase";

/// Deterministic CSV text: header plus one row per epoch, floats in
/// shortest round-trip form.
pub fn convergence_csv_string(log: &[EpochRecord]) -> String {
    let mut out = String::from(CONVERGENCE_HEADER);
    out.push('\n');
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.loss_total,
            r.loss_ctc,
            r.loss_scrf,
            r.valid_per,
            r.phase.as_str()
        )
        .expect("string write");
    }
    out
}

pub fn emit_convergence_csv(log: &[EpochRecord], path: &Path) -> Result<()> {
    std::fs::write(path, convergence_csv_string(log))?;
    Ok(())
}

/// Inverse of [`convergence_csv_string`], used when a resumed run extends
/// an existing log.
pub fn parse_convergence_csv(text: &str, path: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CONVERGENCE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("expected header '{CONVERGENCE_HEADER}'"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg,
        };
        if fields.len() != 7 {
            return Err(parse_err(format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| parse_err(format!("'{s}' is not a number")))
        };
        out.push(EpochRecord {
            epoch: fields[0]
                .parse()
                .map_err(|_| parse_err(format!("'{}' is not an epoch index", fields[0])))?,
            lr: num(fields[1])?,
            loss_total: num(fields[2])?,
            loss_ctc: num(fields[3])?,
            loss_scrf: num(fields[4])?,
            valid_per: num(fields[5])?,
            phase: fields[6].parse()?,
        });
    }
    Ok(out)
}
