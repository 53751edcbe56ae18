//! Desk-scale end-to-end speech recognition toolkit.
//!
//! The crate covers the whole path from 16 kHz PCM audio to decoded text:
//!
//! * [`frontend`] — Fbank / spectrogram extraction and data augmentation
//!   (SpecAugment, speed perturbation, additive noise).
//! * [`model`] — a two-stream convolutional extractor per feature kind,
//!   learnable convex fusion of the streams, a 4-layer bidirectional LiGRU
//!   encoder, an attention decoder, and a CTC output head, all built on the
//!   reverse-mode [`graph`] substrate.
//! * [`objectives`] — CTC, attention, and hybrid losses with exact gradients.
//! * [`search`] — one-pass joint CTC/attention beam decoding with optional
//!   character n-gram LM shallow fusion.
//! * [`corpus`] — manifests, character tokenization, synthetic corpus
//!   generation, and CER/WER scoring.
//! * [`verification`] — definition-level oracles (path enumeration,
//!   exhaustive decoding) and finite-difference gradient checks.
//!
//! Everything is f64 and deterministic given a seed; see the `asr` binary for
//! the operator surface.

pub mod audio;
pub mod corpus;
pub mod frontend;
pub mod graph;
mod kernels;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod search;
pub mod tensor;
pub mod verification;
