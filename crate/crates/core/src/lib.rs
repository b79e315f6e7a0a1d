//! Repairs cooperative concurrent programs by inferring minimum sets of
//! yield points to place in strong or weak atomic sections.

pub mod bench;
pub mod cfg;
pub mod corpus;
pub mod inference;
pub mod lang;
pub mod mhs;
pub mod par;
pub mod pipeline;
pub mod verifier;
