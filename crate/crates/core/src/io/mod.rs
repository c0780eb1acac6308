//! File formats: raw video container, WAV audio, PNG export, binary bundles.

pub mod bundle;
pub mod png;
pub mod rawvideo;
pub mod wav;
