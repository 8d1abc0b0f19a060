//! Named starting configurations.

use crate::analysis::{DetectorParams, KeyRateParams, LinkModel};
use crate::channel::{FiberSpec, DEFAULT_GROUP_INDEX};
use crate::protocol::FlipCorrection;
use crate::sim::{EncodingMode, FlipSettings, SimConfig};
use crate::timing::{GuardBand, TimeBinGrid};

/// Mode overlap that puts the 0 km reference visibility at 0.893.
pub const CALIBRATED_MODE_OVERLAP: f64 = 0.8941986539890849;
/// Drift strength that puts the 50 km reference visibility at 0.878.
pub const CALIBRATED_DRIFT_STD: f64 = 3.8797580735275097;

/// Reference visibility the mode overlap is calibrated to at 0 km.
pub const VISIBILITY_AT_ZERO_KM: f64 = 0.893;
/// Reference visibility the drift is calibrated to at 50 km.
pub const VISIBILITY_AT_50_KM: f64 = 0.878;

pub const PRESET_NAMES: [&str; 2] = ["paper-table4", "ideal"];

/// Patch cord on Bob's side of the asymmetric link, km.
pub const PATCH_CORD_KM: f64 = 0.002;

/// Reference parameter set (31.25 MHz gating, 10% SPADs, beta = 1e-4) on a
/// 50 km + patch-cord link.
pub fn paper_table4() -> SimConfig {
    SimConfig {
        frames: 1_000_000,
        seed: 1,
        workers: 0,
        block_frames: 16_384,
        link: LinkModel {
            mu_per_bin: 0.1,
            alice: FiberSpec::new(50.0, 0.2).expect("valid fiber"),
            bob: FiberSpec::new(PATCH_CORD_KM, 0.2).expect("valid fiber"),
            insertion_loss_db: 0.0,
            group_index: DEFAULT_GROUP_INDEX,
            mode_overlap: CALIBRATED_MODE_OVERLAP,
            drift_std_rad_per_sqrt_s: CALIBRATED_DRIFT_STD,
            detector: DetectorParams {
                eta_det: 0.1,
                p_dark: 1e-5,
                jitter_std_s: 60e-12,
            },
            repetition_rate_hz: 31.25e6,
            mean_photons_out: 40.0,
            beta: 1e-4,
            grid: TimeBinGrid::default(),
            guard: GuardBand::from_ps(300.0).expect("valid guard"),
            key_rate: KeyRateParams::default(),
        },
        disturbances: Vec::new(),
        flip: FlipSettings {
            enabled: true,
            correction: FlipCorrection::default(),
        },
        encoding: EncodingMode::Random,
    }
}

/// Noiseless, drift-free, jitter-free link with perfect mode overlap.
pub fn ideal() -> SimConfig {
    let mut cfg = paper_table4();
    cfg.link.mode_overlap = 1.0;
    cfg.link.drift_std_rad_per_sqrt_s = 0.0;
    cfg.link.detector.p_dark = 0.0;
    cfg.link.detector.jitter_std_s = 0.0;
    cfg.link.beta = 0.0;
    cfg.link.guard = GuardBand::default();
    cfg
}

pub fn by_name(name: &str) -> Option<SimConfig> {
    match name {
        "paper-table4" => Some(paper_table4()),
        "ideal" => Some(ideal()),
        _ => None,
    }
}

/// Jointly calibrates the mode overlap (0 km anchor) and drift strength
/// (50 km anchor) of `base` against the analytic model.
pub fn calibrate(base: &SimConfig) -> Option<(f64, f64)> {
    use crate::analysis::{calibrate_drift_std, calibrate_mode_overlap};
    let mut link = base.link;
    let at = |km: f64, link: &LinkModel| LinkModel {
        alice: FiberSpec::new(km, link.alice.alpha_db_per_km()).expect("valid fiber"),
        ..*link
    };
    // the two anchors barely interact; a few alternations converge
    for _ in 0..6 {
        link.mode_overlap = calibrate_mode_overlap(&at(0.0, &link), VISIBILITY_AT_ZERO_KM)?;
        link.drift_std_rad_per_sqrt_s = calibrate_drift_std(&at(50.0, &link), VISIBILITY_AT_50_KM)?;
    }
    Some((link.mode_overlap, link.drift_std_rad_per_sqrt_s))
}
