//! `seqlab score`: pooled error rate of a hypothesis file against a
//! reference file, with an optional phone mapping applied to both sides.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use seqlab_core::data::{load_symbol_sequences, PhoneMapping};
use seqlab_core::eval::{per_utterance_counts, ErrorCounts};

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Reference label file (`<id> <symbol> ...` per line)
    #[arg(long)]
    pub refs: PathBuf,

    /// Hypothesis file in the same format
    #[arg(long)]
    pub hyps: PathBuf,

    /// Optional `<from> <to>` symbol mapping applied to both sides
    #[arg(long)]
    pub mapping: Option<PathBuf>,
}

pub fn report(rows: &[(String, ErrorCounts)]) -> String {
    let mut out = String::new();
    let mut totals = ErrorCounts::default();
    for (id, c) in rows {
        out.push_str(&format!(
            "{id} S={} I={} D={} ref={}\n",
            c.substitutions, c.insertions, c.deletions, c.ref_len
        ));
        totals.add(c);
    }
    out.push_str(&format!(
        "total S={} I={} D={} ref={}\n",
        totals.substitutions, totals.insertions, totals.deletions, totals.ref_len
    ));
    out.push_str(&format!("PER {:.1}\n", totals.per()));
    out
}

pub fn run(args: &ScoreArgs) -> Result<()> {
    let refs = load_symbol_sequences(&args.refs)?;
    let hyps = load_symbol_sequences(&args.hyps)?;
    let mapping = match &args.mapping {
        Some(path) => Some(PhoneMapping::load(path)?),
        None => None,
    };
    let rows = per_utterance_counts(&refs, &hyps, mapping.as_ref())?;
    print!("{}", report(&rows));
    Ok(())
}
