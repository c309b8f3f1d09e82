//! Frozen tuning constants. The round-budget factors are analytical
//! slack over proven linear bounds; the alpha and gamma factors were
//! measured once on this simulator at a fixed calibration size and are
//! not adjusted per run.

/// Round budget for pipelined set broadcast, as a multiple of
/// (item count + diameter).
pub const PIPELINE_ROUND_FACTOR: u64 = 4;

/// Round budget for the distributed self-check, as a multiple of n.
pub const VERIFY_ROUND_FACTOR: u64 = 3;

/// Per-node per-iteration offer-traffic factor for filtered broadcast,
/// in units of ceil(log2 n). Calibrated at n = 64.
pub const OFFER_CONGESTION_ALPHA: f64 = 3.0;

/// Multiplexing stretch factor: scheduled rounds stay within
/// gamma * (dilation + congestion * ceil(log2 n)). Calibrated at n = 32.
pub const SCHEDULE_STRETCH_GAMMA: f64 = 6.0;

/// Default sampling-depth coefficient: phase i relaxes to depth
/// ceil(c * 2^(i+1) * ln n), capped at n.
pub const SAMPLING_DEPTH_C: f64 = 4.0;
