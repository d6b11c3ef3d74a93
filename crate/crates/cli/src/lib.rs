//! Command implementations behind the `seqlab` binary. Each command is a
//! plain function over a clap-derived argument struct, so integration
//! tests drive the exact code path the binary runs.

pub mod decode;
pub mod score;
pub mod selfcheck;
pub mod synth;
pub mod train;
