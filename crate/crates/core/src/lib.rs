//! Through-wall WiFi CSI activity recognition toolkit.
//!
//! Stages, bottom-up:
//!
//! * [`csi`]: frame types and per-frame amplitude computation;
//! * [`ingest`]: the CSI line protocol, frame sources, loss and RSSI accounting;
//! * [`dsp`]: Hampel filtering, 400×52 spectrogram windows, normalization;
//! * [`linksim`]: link budget and CSI stream simulator calibrated to measured
//!   RSSI anchors;
//! * [`dataset`]: trimming, on-disk datasets, stratified splits, balanced sampling;
//! * [`model`]: a compact CNN with hand-written backpropagation, training and
//!   multi-run evaluation.

pub mod csi;
pub mod dataset;
pub mod dsp;
pub mod ingest;
pub mod linksim;
pub mod model;
