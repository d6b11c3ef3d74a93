//! Dataset ingestion in plain text formats, label vocabulary, phone-set
//! mapping, and a deterministic synthetic segmental task generator.
//!
//! Formats (all newline-terminated, `\n` endings):
//! - features: per utterance a header `<id> <T> <D>` followed by T lines of
//!   D space-separated decimal reals;
//! - labels: one line per utterance, `<id> <symbol> <symbol> ...`;
//! - vocabulary: one symbol per line, line number is the label id;
//! - mapping: `<source> <target>` per line.
//!
//! Floats are written with the shortest representation that parses back to
//! the identical bit pattern, so write/load round-trips are lossless.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{mix_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T x D` feature frames.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, sym) in symbols.iter().enumerate() {
            if sym.is_empty() || sym.split_whitespace().count() != 1 {
                return Err(Error::Config(format!(
                    "vocabulary symbol {i} is empty or contains whitespace"
                )));
            }
            if index.insert(sym.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary symbol '{sym}'")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let symbols = text.lines().map(str::to_string).collect();
        Self::new(symbols)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for sym in &self.symbols {
            out.push_str(sym);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn to_symbols(&self, labels: &[usize]) -> Vec<String> {
        labels.iter().map(|&id| self.symbols[id].clone()).collect()
    }
}

/// Source-to-target symbol substitution, e.g. collapsing a training phone
/// set into a smaller scoring set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneMapping {
    map: HashMap<String, String>,
}

impl PhoneMapping {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (src, dst) in pairs {
            if map.insert(src.clone(), dst).is_some() {
                return Err(Error::Config(format!("duplicate mapping source '{src}'")));
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(src), Some(dst), None) => pairs.push((src.to_string(), dst.to_string())),
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        msg: "expected '<source> <target>'".into(),
                    })
                }
            }
        }
        Self::new(pairs)
    }

    pub fn map_symbol<'a>(&'a self, symbol: &str) -> Result<&'a str> {
        self.map
            .get(symbol)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownSymbol {
                symbol: symbol.to_string(),
                context: "phone mapping".into(),
            })
    }
}

/// Substitute every symbol through the mapping, then merge adjacent
/// duplicates. The merge runs on the mapped sequence because collapsing a
/// phone set can turn distinct neighbors into spurious repeats, and scoring
/// compares phone sequences, not frame alignments.
pub fn map_labels(seq: &[String], mapping: &PhoneMapping) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(seq.len());
    for sym in seq {
        let mapped = mapping.map_symbol(sym)?;
        if out.last().map(String::as_str) != Some(mapped) {
            out.push(mapped.to_string());
        }
    }
    Ok(out)
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Feature blocks in file order, as `(id, frames)` pairs.
pub fn load_features(path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut out: Vec<(String, Array2<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    while let Some((lineno, line)) = lines.next() {
        let header: Vec<&str> = line.split_whitespace().collect();
        if header.len() != 3 {
            return Err(parse_error(path, lineno + 1, "expected header '<id> <T> <D>'"));
        }
        let id = header[0].to_string();
        let t: usize = header[1]
            .parse()
            .map_err(|_| parse_error(path, lineno + 1, format!("bad frame count '{}'", header[1])))?;
        let d: usize = header[2]
            .parse()
            .map_err(|_| parse_error(path, lineno + 1, format!("bad feature dim '{}'", header[2])))?;
        if t == 0 || d == 0 {
            return Err(parse_error(
                path,
                lineno + 1,
                format!("utterance '{id}' must have at least one frame and one dim"),
            ));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_error(
                path,
                lineno + 1,
                format!("duplicate utterance id '{id}'"),
            ));
        }
        let mut values = Vec::with_capacity(t * d);
        for row in 0..t {
            let (row_no, row_line) = lines.next().ok_or_else(|| {
                parse_error(
                    path,
                    lineno + 1,
                    format!("utterance '{id}' ends after {row} of {t} frames"),
                )
            })?;
            let tokens: Vec<&str> = row_line.split_whitespace().collect();
            if tokens.len() != d {
                return Err(parse_error(
                    path,
                    row_no + 1,
                    format!("expected {d} values, got {}", tokens.len()),
                ));
            }
            for tok in tokens {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_error(path, row_no + 1, format!("bad number '{tok}'")))?;
                values.push(v);
            }
        }
        let frames = Array2::from_shape_vec((t, d), values).expect("shape matches collected data");
        out.push((id, frames));
    }
    Ok(out)
}

/// Label lines as `(id, label ids)` pairs, resolved through the vocabulary.
pub fn load_labels(path: &Path, vocab: &Vocabulary) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for (id, symbols) in load_symbol_sequences(path)? {
        let mut labels = Vec::with_capacity(symbols.len());
        for sym in &symbols {
            labels.push(vocab.id(sym).ok_or_else(|| Error::UnknownSymbol {
                symbol: sym.clone(),
                context: format!("{}: utterance '{id}'", path.display()),
            })?);
        }
        out.push((id, labels));
    }
    Ok(out)
}

/// Label-style lines without vocabulary resolution, for scoring arbitrary
/// symbol sequences.
pub fn load_symbol_sequences(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| parse_error(path, lineno + 1, "expected '<id> <symbol> ...'"))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_error(
                path,
                lineno + 1,
                format!("duplicate utterance id '{id}'"),
            ));
        }
        out.push((id, parts.map(str::to_string).collect()));
    }
    Ok(out)
}

/// Joins features and labels by utterance id, keeping feature-file order.
pub fn load_dataset(
    feature_path: &Path,
    label_path: &Path,
    vocab: &Vocabulary,
) -> Result<Vec<Utterance>> {
    let features = load_features(feature_path)?;
    let labels = load_labels(label_path, vocab)?;
    let mut by_id: HashMap<String, Vec<usize>> = HashMap::with_capacity(labels.len());
    let mut unmatched: Vec<String> = Vec::new();
    for (id, seq) in labels {
        by_id.insert(id, seq);
    }
    let mut out = Vec::with_capacity(features.len());
    let mut dim: Option<usize> = None;
    for (id, frames) in features {
        match dim {
            None => dim = Some(frames.ncols()),
            Some(d0) if d0 != frames.ncols() => {
                return Err(Error::DimensionMismatch(format!(
                    "utterance '{id}' has {} feature dims, the set uses {d0}",
                    frames.ncols()
                )))
            }
            _ => {}
        }
        let seq = by_id.remove(&id).ok_or_else(|| {
            Error::IdMismatch(format!("utterance '{id}' has features but no labels"))
        })?;
        out.push(Utterance {
            id,
            features: frames,
            labels: seq,
        });
    }
    unmatched.extend(by_id.into_keys());
    unmatched.sort();
    if let Some(first) = unmatched.first() {
        return Err(Error::IdMismatch(format!(
            "utterance '{first}' has labels but no features"
        )));
    }
    Ok(out)
}

pub fn write_features(utterances: &[Utterance], path: &Path) -> Result<()> {
    let mut out = String::new();
    for u in utterances {
        writeln!(
            out,
            "{} {} {}",
            u.id,
            u.features.nrows(),
            u.features.ncols()
        )
        .expect("string write");
        for row in u.features.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                write!(out, "{v}").expect("string write");
                first = false;
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_labels(utterances: &[Utterance], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = String::new();
    for u in utterances {
        out.push_str(&u.id);
        for &id in &u.labels {
            out.push(' ');
            out.push_str(vocab.symbol(id));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_dataset(
    utterances: &[Utterance],
    vocab: &Vocabulary,
    feature_path: &Path,
    label_path: &Path,
) -> Result<()> {
    write_features(utterances, feature_path)?;
    write_labels(utterances, vocab, label_path)
}

/// Writes hypothesis lines `<id> <symbol> ...` for decoded output.
pub fn write_symbol_sequences(rows: &[(String, Vec<String>)], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (id, symbols) in rows {
        out.push_str(id);
        for sym in symbols {
            out.push(' ');
            out.push_str(sym);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_utterances: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    /// Inclusive range of labels per utterance.
    pub labels_per_utt: (usize, usize),
    /// Inclusive range of frames per segment.
    pub seg_len: (usize, usize),
    pub noise_sigma: f64,
    pub prototype_scale: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "synthetic vocab size and feature dim must be positive".into(),
            ));
        }
        let (jl, jh) = self.labels_per_utt;
        let (sl, sh) = self.seg_len;
        if jl == 0 || jl > jh || sl == 0 || sl > sh {
            return Err(Error::Config(
                "synthetic ranges must be nonempty with positive lower bounds".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Symbols `s0..s{K-1}` with dense ids.
pub fn synth_vocabulary(vocab_size: usize) -> Vocabulary {
    Vocabulary::new((0..vocab_size).map(|i| format!("s{i}")).collect())
        .expect("generated symbols are unique")
}

/// Fixed per-label emission centers, determined by the seed alone.
pub fn synth_prototypes(config: &SynthConfig) -> Array2<f64> {
    let mut rng = seeded_rng(mix_seed(&[config.seed, 1]));
    Array2::from_shape_fn((config.vocab_size, config.feature_dim), |_| {
        rng.random_range(-1.0..1.0) * config.prototype_scale
    })
}

/// Each utterance is a label sequence with a segment per label; frames are
/// the label's prototype plus Gaussian noise. Adjacent labels are kept
/// distinct (when the vocabulary allows) so segment boundaries stay
/// identifiable. Fully determined by the config.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Utterance>> {
    config.validate()?;
    let protos = synth_prototypes(config);
    let k = config.vocab_size;
    let d = config.feature_dim;
    let mut out = Vec::with_capacity(config.num_utterances);
    for i in 0..config.num_utterances {
        let mut rng = seeded_rng(mix_seed(&[config.seed, 2, i as u64]));
        let j = rng.random_range(config.labels_per_utt.0..=config.labels_per_utt.1);
        let mut labels = Vec::with_capacity(j);
        for _ in 0..j {
            let lab = match labels.last() {
                Some(&prev) if k > 1 => {
                    let r = rng.random_range(0..k - 1);
                    if r >= prev {
                        r + 1
                    } else {
                        r
                    }
                }
                _ => rng.random_range(0..k),
            };
            labels.push(lab);
        }
        let seg_lens: Vec<usize> = (0..j)
            .map(|_| rng.random_range(config.seg_len.0..=config.seg_len.1))
            .collect();
        let t: usize = seg_lens.iter().sum();
        let mut features = Array2::zeros((t, d));
        let mut row = 0;
        for (&lab, &len) in labels.iter().zip(&seg_lens) {
            for _ in 0..len {
                for c in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    features[[row, c]] = protos[[lab, c]] + config.noise_sigma * noise;
                }
                row += 1;
            }
        }
        out.push(Utterance {
            id: format!("u{i:05}"),
            features,
            labels,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn vocab_abc() -> Vocabulary {
        Vocabulary::new(vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Vocabulary::new(vec!["".into()]).is_err());
    }

    #[test]
    fn mapping_substitutes_then_merges() {
        let m = PhoneMapping::new(vec![
            ("a".into(), "a".into()),
            ("b".into(), "a".into()),
            ("c".into(), "c".into()),
        ])
        .unwrap();
        let seq = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(map_labels(&seq(&["a", "b"]), &m).unwrap(), seq(&["a"]));
        assert_eq!(
            map_labels(&seq(&["b", "c", "b"]), &m).unwrap(),
            seq(&["a", "c", "a"])
        );
        assert_eq!(map_labels(&seq(&["a", "c"]), &m).unwrap(), seq(&["a", "c"]));
        match map_labels(&seq(&["x"]), &m) {
            Err(Error::UnknownSymbol { symbol, .. }) => assert_eq!(symbol, "x"),
            other => panic!("expected unknown symbol error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let dir = tempdir().unwrap();
        let vocab = vocab_abc();
        let utts = vec![
            Utterance {
                id: "u1".into(),
                features: Array2::from_shape_vec(
                    (2, 3),
                    vec![0.1, -2.5, 1e-17, f64::MIN_POSITIVE, 3.0, -0.0],
                )
                .unwrap(),
                labels: vec![0, 2],
            },
            Utterance {
                id: "u2".into(),
                features: Array2::from_shape_vec((1, 3), vec![1.0 / 3.0, 2.0 / 7.0, 9.9]).unwrap(),
                labels: vec![1],
            },
        ];
        let fp = dir.path().join("feats.txt");
        let lp = dir.path().join("labels.txt");
        write_dataset(&utts, &vocab, &fp, &lp).unwrap();
        let loaded = load_dataset(&fp, &lp, &vocab).unwrap();
        assert_eq!(loaded, utts);
        // a second write is byte-identical
        let fp2 = dir.path().join("feats2.txt");
        let lp2 = dir.path().join("labels2.txt");
        write_dataset(&loaded, &vocab, &fp2, &lp2).unwrap();
        assert_eq!(
            std::fs::read(&fp).unwrap(),
            std::fs::read(&fp2).unwrap()
        );
        assert_eq!(
            std::fs::read(&lp).unwrap(),
            std::fs::read(&lp2).unwrap()
        );
    }

    #[test]
    fn missing_labels_name_the_utterance() {
        let dir = tempdir().unwrap();
        let vocab = vocab_abc();
        let fp = dir.path().join("feats.txt");
        let lp = dir.path().join("labels.txt");
        std::fs::write(&fp, "u1 1 2\n0.5 0.25\n").unwrap();
        std::fs::write(&lp, "").unwrap();
        match load_dataset(&fp, &lp, &vocab) {
            Err(Error::IdMismatch(msg)) => assert!(msg.contains("u1"), "{msg}"),
            other => panic!("expected id mismatch, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_reports_line_number() {
        let dir = tempdir().unwrap();
        let fp = dir.path().join("feats.txt");
        std::fs::write(&fp, "u1 2 3\n1 2 3\n4 5\n").unwrap();
        match load_features(&fp) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("expected 3 values"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_symbol_reports_context() {
        let dir = tempdir().unwrap();
        let lp = dir.path().join("labels.txt");
        std::fs::write(&lp, "u1 a q\n").unwrap();
        match load_labels(&lp, &vocab_abc()) {
            Err(Error::UnknownSymbol { symbol, context }) => {
                assert_eq!(symbol, "q");
                assert!(context.contains("u1"), "{context}");
            }
            other => panic!("expected unknown symbol, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dims_across_utterances() {
        let dir = tempdir().unwrap();
        let vocab = vocab_abc();
        let fp = dir.path().join("feats.txt");
        let lp = dir.path().join("labels.txt");
        std::fs::write(&fp, "u1 1 2\n1 2\nu2 1 3\n1 2 3\n").unwrap();
        std::fs::write(&lp, "u1 a\nu2 b\n").unwrap();
        assert!(matches!(
            load_dataset(&fp, &lp, &vocab),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn synth_config() -> SynthConfig {
        SynthConfig {
            num_utterances: 6,
            vocab_size: 3,
            feature_dim: 4,
            labels_per_utt: (2, 4),
            seg_len: (2, 5),
            noise_sigma: 0.3,
            prototype_scale: 1.0,
            seed: 99,
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = synth_config();
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig {
            seed: 100,
            ..synth_config()
        };
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn synth_fixed_lengths_multiply_out() {
        let cfg = SynthConfig {
            labels_per_utt: (4, 4),
            seg_len: (3, 3),
            ..synth_config()
        };
        for u in synth_generate(&cfg).unwrap() {
            assert_eq!(u.labels.len(), 4);
            assert_eq!(u.features.nrows(), 12);
        }
    }

    #[test]
    fn noiseless_segments_repeat_the_prototype() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..synth_config()
        };
        let protos = synth_prototypes(&cfg);
        for u in synth_generate(&cfg).unwrap() {
            // frame-wise nearest prototype recovers the label sequence
            let mut decoded = Vec::new();
            for row in u.features.rows() {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for k in 0..cfg.vocab_size {
                    let d: f64 = (0..cfg.feature_dim)
                        .map(|c| (row[c] - protos[[k, c]]).powi(2))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = k;
                    }
                }
                assert_eq!(best_d, 0.0);
                if decoded.last() != Some(&best) {
                    decoded.push(best);
                }
            }
            assert_eq!(decoded, u.labels);
        }
    }

    #[test]
    fn synth_avoids_adjacent_repeats() {
        let cfg = SynthConfig {
            num_utterances: 20,
            ..synth_config()
        };
        for u in synth_generate(&cfg).unwrap() {
            assert!(u.labels.windows(2).all(|w| w[0] != w[1]), "{:?}", u.labels);
        }
    }
}
