//! `seqlab selfcheck`: run the built-in verification suite and exit
//! nonzero if any check is out of tolerance.

use anyhow::{bail, Result};
use clap::Args;

use seqlab_core::selfcheck::{all_pass, format_report, run_selfcheck, CheckScale, Corruption};

#[derive(Args, Debug)]
pub struct SelfcheckArgs {
    /// Suite size: "small" finishes in well under a minute, "full" runs
    /// the larger instance counts
    #[arg(long, default_value = "small")]
    pub scale: String,

    /// Perturb one DP inside the suite (negative-control hook)
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

pub fn run(args: &SelfcheckArgs) -> Result<()> {
    let scale: CheckScale = args.scale.parse()?;
    let corruption: Option<Corruption> = match &args.corrupt {
        Some(s) => Some(s.parse()?),
        None => None,
    };
    let results = run_selfcheck(scale, corruption)?;
    print!("{}", format_report(&results));
    if !all_pass(&results) {
        let failed: Vec<&str> = results
            .iter()
            .filter(|r| !r.pass())
            .map(|r| r.name)
            .collect();
        bail!("selfcheck failed: {}", failed.join(", "));
    }
    println!("all checks passed");
    Ok(())
}
