//! Personalized stock recommendation from portfolio holdings.
//!
//! The crate combines two scoring signals over an `m` users by `n` assets
//! universe:
//!
//! * a mean-variance utility score: the utility each user's portfolio would
//!   reach after buying one extra asset, given per-user risk aversion
//!   inferred from the efficient frontier ([`market`], [`frontier`],
//!   [`scoring`]);
//! * an item-item collaborative filtering score built from co-holdings
//!   ([`cf`]).
//!
//! [`hybrid`] filters candidates by CF score and re-ranks the shortlist by
//! utility. [`pipeline`] wires every stage together over the text file
//! formats in [`io`], and [`synth`] generates seeded markets and user
//! populations with known risk aversion.

pub mod bench;
pub mod cf;
pub mod error;
pub mod frontier;
pub mod hybrid;
pub mod io;
mod linalg;
pub mod market;
pub mod pipeline;
pub mod plot;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
