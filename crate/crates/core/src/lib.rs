//! Patient-trial matching: eligibility criteria and structured patient
//! records are embedded into a shared space, a decomposable-attention model
//! predicts entailment / contradiction / neutral, and explicit quantity
//! reasoning over the criteria text can overrule a neural "entailment".

pub mod aligner;
pub mod datamodel;
pub mod ec_encoder;
pub mod ehr_encoder;
pub mod error;
pub mod matcher;
pub mod model;
pub mod nir;
pub mod numkernel;
pub mod pipeline;
pub mod synthgen;
pub mod text;
pub mod trainer;

pub use error::{EnrollError, Result};
