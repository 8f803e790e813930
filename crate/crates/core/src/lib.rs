//! Residual-codebook excitation for source-filter speech synthesis.
//!
//! Speech is split into a spectral envelope (linear prediction) and a
//! residual. Pitch-synchronous residual frames are collected into a
//! codebook keyed by a compact shape signature (the RN frame: 20 samples,
//! unit energy). At synthesis time the nearest frames are stretched to the
//! target pitch, scaled to the target energy and overlap-added, then passed
//! back through the envelope filter.

pub mod codebook;
pub mod dsp;
pub mod envelope;
pub mod error;
pub mod excitation;
pub mod io;
pub mod kmeans;
pub mod pca;
pub mod pipeline;
pub mod pitch;
pub mod synthetic;

pub use codebook::{
    compress, corpus_digest, extract_frames, full_codebook, rn, rn_distance, Codebook, CodebookEntry, CodebookKind,
    CodebookMeta, ResidualFrame, RnFrame, SourceId, RN_LEN,
};
pub use dsp::{frame_energy, hanning, resample_frame, scale_to_energy, Frame, Waveform};
pub use envelope::{estimate_envelope, inverse_filter, synth_filter, EnvelopeEstimator, EnvelopeTrack, LpcEstimator};
pub use error::{Error, FormatError, Result};
pub use excitation::{
    adapt, build_excitation, noise_fill, overlap_add, select, Event, ExcitationMode, Polarity, SelectionReport,
    TargetTrack,
};
pub use kmeans::{kmeans, KMeans};
pub use pca::{fit_pca, PcaModel};
pub use pipeline::{
    analyze, compare_metrics, copy_synthesis, synthesize, train, Analysis, Config, MetricsReport, SynthesisMode, Trained,
};
pub use pitch::{cog_track, detect_gci, estimate_f0, F0Config, F0Track, GciList};
