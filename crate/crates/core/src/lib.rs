//! Locally differentially private collaborative phone blacklisting.
//!
//! Clients privately report the unknown caller IDs they receive through a
//! bucketized succinct-histogram heavy-hitter protocol. The area-code prefix
//! travels in clear and selects a bucket; the 7-digit suffix is encoded with
//! the Reed-Muller code RM(3,5) and reported through a sparse one-coordinate
//! randomizer, once per (round, channel). A separate OLH report of the full
//! number feeds the frequency oracle that filters reconstructed candidates.
//! The server turns daily heavy hitters into a sliding-window blacklist.
//!
//! Module map:
//!
//! * [`codec`]: caller-ID parsing and the RM(3,5) encoder/decoder.
//! * [`randomizer`]: basic, extended and OLH randomizers plus variance formulas.
//! * [`channels`]: pairwise-independent channel assignment.
//! * [`client`]: per-day client protocol.
//! * [`server`]: aggregation, reconstruction, frequency estimation and filtering.
//! * [`bucket_gate`]: exact balls-in-bins fill probabilities and the τ table.
//! * [`blacklist`]: sliding-window blacklist, detection tallies and CBR.
//! * [`transport`]: canonical NDJSON wire format and delivery carriers.
//! * [`simharness`]: datasets, synthetic complaints and experiment orchestration.

pub mod blacklist;
pub mod bucket_gate;
pub mod channels;
pub mod client;
pub mod codec;
pub mod par;
pub mod randomizer;
pub mod seed;
pub mod server;
pub mod simharness;
pub mod transport;

pub use codec::{AreaCode, Codeword, PhoneNumber};
pub use randomizer::RandomizerKind;
pub use server::ProtocolParams;
