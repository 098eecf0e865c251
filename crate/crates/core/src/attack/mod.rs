//! The two speaker-identity attacks that read models instead of speech.

pub mod a1;
pub mod a2;
pub mod plda;
