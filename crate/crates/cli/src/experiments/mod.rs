pub mod classify;
pub mod interpolate;
pub mod ldlc;
pub mod matching;
pub mod spectrum;
pub mod walk;
