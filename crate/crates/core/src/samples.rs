//! Bundled example networks. The same files live under `networks/` in this
//! crate's directory for use with the command-line tool.

use crate::network::ReactionNetwork;

pub const BIRTH_DEATH: &str = include_str!("../networks/birth_death.rn");
pub const KEY_EXAMPLE: &str = include_str!("../networks/key_example.rn");
pub const COUNTEREXAMPLE: &str = include_str!("../networks/counterexample.rn");
pub const OPEN_CXB: &str = include_str!("../networks/open_cxb.rn");
pub const AUTOCATALYTIC: &str = include_str!("../networks/autocatalytic.rn");
pub const TANDEM_QUEUE: &str = include_str!("../networks/tandem_queue.rn");
pub const ENVZ_OMPR: &str = include_str!("../networks/envz_ompr.rn");

/// Every bundled network as `(file stem, text)`.
pub const ALL: [(&str, &str); 7] = [
    ("birth_death", BIRTH_DEATH),
    ("key_example", KEY_EXAMPLE),
    ("counterexample", COUNTEREXAMPLE),
    ("open_cxb", OPEN_CXB),
    ("autocatalytic", AUTOCATALYTIC),
    ("tandem_queue", TANDEM_QUEUE),
    ("envz_ompr", ENVZ_OMPR),
];

/// Parses a bundled network. Panics only if a bundled file is malformed,
/// which the test suite rules out.
pub fn load(text: &str) -> ReactionNetwork {
    ReactionNetwork::parse(text).expect("bundled network parses")
}
