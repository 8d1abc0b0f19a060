//! Seeded Monte Carlo driver and the experiment sweeps built on it.
//!
//! Frames are split into fixed-size blocks. Each block draws from its own
//! ChaCha stream keyed by the block index, and the drift path is sampled up
//! front from a separate stream, so results do not depend on the number of
//! worker threads.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{batch_means_se, key_rate, secure_key_rate, LinkModel, RunStats};
use crate::channel::{
    sagnac_residual_phase, Disturbance, DisturbanceSchedule, FiberSpec, PhaseDriftProcess,
};
use crate::protocol::{
    conclusive_outcome, flip_correction, Click, EncodingBits, FlipCorrection, Outcome, Port,
    ReferenceCounts, SiftedRecord, WindowDecision,
};
use crate::timing::{assign_bin, jittered_timestamp, BinAssignment, GuardBand, TimeBin};

/// Number of contiguous frame segments used for batch-means error bars.
pub const ERROR_BAR_SEGMENTS: u64 = 20;

/// Drift-path samples kept in memory; longer runs sample more coarsely.
const MAX_DRIFT_SAMPLES: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EncodingMode {
    /// Fresh random bits for both parties every frame.
    Random,
    /// The same bits every frame, for test patterns.
    Fixed {
        alice: EncodingBits,
        bob: EncodingBits,
    },
}

/// Phase kick applied to frames `start_frame..end_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDisturbance {
    pub start_frame: u64,
    pub end_frame: u64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipSettings {
    pub enabled: bool,
    pub correction: FlipCorrection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub frames: u64,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Frames per RNG block. Part of the result's identity: changing it
    /// changes the random streams.
    pub block_frames: u64,
    pub link: LinkModel,
    pub disturbances: Vec<FrameDisturbance>,
    pub flip: FlipSettings,
    pub encoding: EncodingMode,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errors = self.link.validate();
        if self.frames == 0 {
            errors.push("frames must be at least 1".into());
        }
        if self.block_frames == 0 {
            errors.push("block_frames must be at least 1".into());
        }
        if let Err(e) = self.flip.correction.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = self.schedule() {
            errors.push(e.to_string());
        }
        for d in &self.disturbances {
            if d.end_frame > self.frames {
                errors.push(format!(
                    "disturbance {}..{} extends past the last frame ({})",
                    d.start_frame, d.end_frame, self.frames
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(errors))
        }
    }

    fn schedule(&self) -> Result<DisturbanceSchedule, crate::channel::ChannelError> {
        let period = self.link.grid.frame_period_s();
        DisturbanceSchedule::new(
            self.disturbances
                .iter()
                .map(|d| Disturbance {
                    start_s: d.start_frame as f64 * period,
                    end_s: d.end_frame as f64 * period,
                    phase_rad: d.phase_rad,
                })
                .collect(),
        )
    }

    fn drift_process(&self) -> Result<PhaseDriftProcess, SimError> {
        let invalid = |e: crate::channel::ChannelError| SimError::Invalid(vec![e.to_string()]);
        let schedule = self.schedule().map_err(invalid)?;
        let d = self.link.drift_std_rad_per_sqrt_s;
        let tau = self.link.loop_delay_s();
        if d == 0.0 || tau == 0.0 {
            return Ok(PhaseDriftProcess::quiet(schedule));
        }
        let period = self.link.grid.frame_period_s();
        let lag = (tau / period).ceil() as u64 + 1;
        let span = self.frames + lag;
        let stride = span.div_ceil(MAX_DRIFT_SAMPLES).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        PhaseDriftProcess::sample(
            d,
            period * stride as f64,
            -(lag as f64) * period,
            (span / stride + 2) as usize,
            schedule,
            &mut rng,
        )
        .map_err(invalid)
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: u64,
    pub seed: u64,
    /// Reference-bin visibility over the whole run, before correction.
    pub visibility: Option<f64>,
    pub e_b: Option<f64>,
    pub r_sift: f64,
    pub r: f64,
    pub inconclusive_fraction: f64,
    pub e_b_uncorrected: Option<f64>,
    pub r_uncorrected: f64,
    /// Batch-means standard errors over [`ERROR_BAR_SEGMENTS`] segments.
    pub se_e_b: f64,
    pub se_r: f64,
    pub se_e_b_uncorrected: f64,
    pub se_r_uncorrected: f64,
    pub flipped_windows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Counts with errors after flip correction (when enabled).
    pub stats: RunStats,
    /// Same counts with errors of the raw announcements.
    pub uncorrected: RunStats,
    pub records: Vec<SiftedRecord>,
    pub raw_records: Vec<SiftedRecord>,
    pub reference: Vec<ReferenceCounts>,
    pub windows: Vec<WindowDecision>,
    pub summary: RunSummary,
}

struct BlockResult {
    stats: RunStats,
    records: Vec<SiftedRecord>,
    reference: Vec<ReferenceCounts>,
}

/// Runs the Monte Carlo for `config.frames` frames.
pub fn run(config: &SimConfig) -> Result<RunOutput, SimError> {
    config.validate()?;
    let drift = config.drift_process()?;
    let n_blocks = config.frames.div_ceil(config.block_frames);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .expect("thread pool");
    let blocks: Vec<BlockResult> = pool.install(|| {
        (0..n_blocks)
            .into_par_iter()
            .map(|b| simulate_block(config, &drift, b))
            .collect()
    });

    let mut stats = RunStats::default();
    let mut raw_records = Vec::new();
    let mut reference = Vec::new();
    for block in blocks {
        stats = stats.merge(&block.stats);
        raw_records.extend(block.records);
        reference.extend(block.reference);
    }
    let uncorrected = stats;

    let (records, windows) = if config.flip.enabled {
        let out = flip_correction(&reference, &raw_records, &config.flip.correction)
            .map_err(|e| SimError::Invalid(vec![e.to_string()]))?;
        (out.records, out.windows)
    } else {
        (raw_records.clone(), Vec::new())
    };
    let stats = RunStats {
        errors: records.iter().filter(|r| r.is_error()).count() as u64,
        ..stats
    };

    tracing::debug!(
        frames = config.frames,
        sifted = stats.sifted,
        errors = stats.errors,
        "run finished"
    );
    let mut output = RunOutput {
        stats,
        uncorrected,
        records,
        raw_records,
        reference,
        windows,
        summary: RunSummary::default(),
    };
    output.summary = summarize(config, &output);
    Ok(output)
}

fn summarize(config: &SimConfig, output: &RunOutput) -> RunSummary {
    let (stats, uncorrected) = (&output.stats, &output.uncorrected);
    let params = config.link.key_rate;
    let rate = secure_key_rate(stats, &params);
    let raw_rate = secure_key_rate(uncorrected, &params);
    let (se_e_b, se_r) = segment_errors(config, &output.records);
    let (se_e_b_uncorrected, se_r_uncorrected) = segment_errors(config, &output.raw_records);
    RunSummary {
        frames: stats.frames,
        seed: config.seed,
        visibility: stats.reference_visibility(),
        e_b: stats.qber(),
        r_sift: params.sift_factor * stats.sifted_rate() / 4.0,
        r: rate.map_or(0.0, |k| k.r),
        inconclusive_fraction: stats.inconclusive_fraction(),
        e_b_uncorrected: uncorrected.qber(),
        r_uncorrected: raw_rate.map_or(0.0, |k| k.r),
        se_e_b,
        se_r,
        se_e_b_uncorrected,
        se_r_uncorrected,
        flipped_windows: output.windows.iter().filter(|w| w.flipped).count(),
    }
}

/// Batch-means standard errors of `e_b` and `R` over contiguous segments.
fn segment_errors(config: &SimConfig, records: &[SiftedRecord]) -> (f64, f64) {
    let n = ERROR_BAR_SEGMENTS;
    if config.frames < n {
        return (f64::NAN, f64::NAN);
    }
    let mut sifted = vec![0u64; n as usize];
    let mut errors = vec![0u64; n as usize];
    for r in records {
        let s = (r.frame_index() as u128 * n as u128 / config.frames as u128) as usize;
        sifted[s] += 1;
        errors[s] += u64::from(r.is_error());
    }
    let params = config.link.key_rate;
    let mut e_b = Vec::new();
    let mut rates = Vec::new();
    for s in 0..n {
        let frames = (s + 1) * config.frames / n - s * config.frames / n;
        let (k, e) = (sifted[s as usize], errors[s as usize]);
        let e_seg = if k > 0 { e as f64 / k as f64 } else { 0.0 };
        if k > 0 {
            e_b.push(e_seg);
        }
        let r_sift = params.sift_factor * k as f64 / (4.0 * frames as f64);
        rates.push(key_rate(r_sift, e_seg, params.ep_policy.phase_error(e_seg)));
    }
    (batch_means_se(&e_b), batch_means_se(&rates))
}

fn simulate_block(config: &SimConfig, drift: &PhaseDriftProcess, block: u64) -> BlockResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(block + 1);

    let link = &config.link;
    let ports = link.port_model();
    let grid = &link.grid;
    let guard = link.guard;
    let tau = link.loop_delay_s();
    let width = grid.bin_width_s();
    let jitter = link.detector.jitter_std_s;

    let start = block * config.block_frames;
    let end = (start + config.block_frames).min(config.frames);
    let mut stats = RunStats::default();
    let mut records = Vec::new();
    let mut reference = Vec::new();
    let mut clicks: Vec<Click> = Vec::with_capacity(6);

    for frame in start..end {
        let psi = sagnac_residual_phase(drift, tau, grid.frame_start_s(frame));
        let (alice, bob) = match config.encoding {
            EncodingMode::Random => {
                let bits: u8 = rng.random();
                (
                    EncodingBits::from_u8(bits & 3),
                    EncodingBits::from_u8(bits >> 2),
                )
            }
            EncodingMode::Fixed { alice, bob } => (alice, bob),
        };
        let q = ports.click_probabilities(alice, bob, psi);

        clicks.clear();
        for bin in TimeBin::ALL {
            for port in Port::ALL {
                if rng.random::<f64>() >= q[bin.index()][port.index()] {
                    continue;
                }
                let emitted = grid.bin_start_s(frame, bin) + rng.random::<f64>() * width;
                let t = jittered_timestamp(emitted, jitter, &mut rng);
                if let BinAssignment::Accepted { frame_index, bin } = assign_bin(t, grid, guard) {
                    if frame_index == frame {
                        stats.clicks[bin.index()][port.index()] += 1;
                        clicks.push(Click { bin, port });
                    }
                }
            }
        }

        let count_ref = |port| {
            clicks
                .iter()
                .filter(|c| c.bin == TimeBin::First && c.port == port)
                .count() as u32
        };
        let (c1, d1) = (count_ref(Port::Constructive), count_ref(Port::Destructive));
        if c1 + d1 > 0 {
            reference.push(ReferenceCounts {
                frame_index: frame,
                constructive: c1,
                destructive: d1,
            });
        }

        stats.frames += 1;
        match conclusive_outcome(frame, &clicks) {
            Outcome::Conclusive(ann) => {
                let record = SiftedRecord::new(ann, alice, bob);
                stats.sifted += 1;
                stats.errors += u64::from(record.is_error());
                records.push(record);
            }
            Outcome::Inconclusive => stats.inconclusive += 1,
            Outcome::NoClick => stats.no_click += 1,
        }
    }
    BlockResult {
        stats,
        records,
        reference,
    }
}

/// Seed for point `index` of a sweep, decorrelated from the base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // SplitMix64 finaliser
    let mut z = base ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Guard band per bin edge, ps.
    GuardBand,
    /// Alice's fiber length, km.
    Distance,
    /// Backscattering coefficient.
    Beta,
    /// Phase of the configured disturbances, rad.
    Disturbance,
}

impl SweepVariable {
    pub fn column_name(self) -> &'static str {
        match self {
            SweepVariable::GuardBand => "guard_ps",
            SweepVariable::Distance => "distance_km",
            SweepVariable::Beta => "beta",
            SweepVariable::Disturbance => "disturbance_phase_rad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Frames per point; the base config's frame count when absent.
    pub frames_per_point: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub frames: u64,
    pub result: Result<RunSummary, String>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errors = Vec::new();
        if self.values.is_empty() {
            errors.push("sweep grid is empty".to_string());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            errors.push("sweep values must be finite".to_string());
        }
        if self.frames_per_point == Some(0) {
            errors.push("frames_per_point must be at least 1".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(errors))
        }
    }

    /// Configuration of grid point `index`.
    pub fn point_config(&self, base: &SimConfig, index: usize) -> Result<SimConfig, String> {
        let value = self.values[index];
        let mut cfg = base.clone();
        cfg.seed = derive_seed(base.seed, index as u64);
        if let Some(frames) = self.frames_per_point {
            cfg.frames = frames;
        }
        match self.variable {
            SweepVariable::GuardBand => {
                cfg.link.guard = GuardBand::from_ps(value).map_err(|e| e.to_string())?
            }
            SweepVariable::Distance => {
                cfg.link.alice = FiberSpec::new(value, cfg.link.alice.alpha_db_per_km())
                    .map_err(|e| e.to_string())?;
            }
            SweepVariable::Beta => cfg.link.beta = value,
            SweepVariable::Disturbance => {
                if cfg.disturbances.is_empty() {
                    cfg.disturbances.push(FrameDisturbance {
                        start_frame: cfg.frames * 2 / 5,
                        end_frame: cfg.frames * 3 / 5,
                        phase_rad: value,
                    });
                }
                cfg.disturbances
                    .iter_mut()
                    .for_each(|d| d.phase_rad = value);
            }
        }
        Ok(cfg)
    }
}

/// Runs every grid point with a derived seed. A failing point yields an
/// error row and the sweep carries on.
pub fn sweep(spec: &SweepSpec, base: &SimConfig) -> Result<Vec<SweepRow>, SimError> {
    spec.validate()?;
    Ok((0..spec.values.len())
        .map(|i| {
            let seed = derive_seed(base.seed, i as u64);
            let frames = spec.frames_per_point.unwrap_or(base.frames);
            let result = spec
                .point_config(base, i)
                .and_then(|cfg| run(&cfg).map(|out| out.summary).map_err(|e| e.to_string()));
            if let Err(e) = &result {
                tracing::warn!(value = spec.values[i], error = %e, "sweep point failed");
            }
            SweepRow {
                value: spec.values[i],
                seed,
                frames,
                result,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberTally {
    pub sifted: u64,
    pub errors: u64,
}

impl QberTally {
    pub fn qber(&self) -> Option<f64> {
        (self.sifted > 0).then(|| self.errors as f64 / self.sifted as f64)
    }

    fn of<'a>(records: impl Iterator<Item = &'a SiftedRecord>) -> Self {
        let mut t = QberTally {
            sifted: 0,
            errors: 0,
        };
        for r in records {
            t.sifted += 1;
            t.errors += u64::from(r.is_error());
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceReport {
    pub segment: (u64, u64),
    pub frames: u64,
    pub seed: u64,
    /// Frames outside the segment, no correction.
    pub baseline: QberTally,
    pub segment_uncorrected: QberTally,
    pub segment_corrected: QberTally,
    pub overall_uncorrected: QberTally,
    pub overall_corrected: QberTally,
    /// `(1-f)·e + f·(1-e)` with the measured baseline `e` and segment share `f`.
    pub expected_uncorrected_qber: Option<f64>,
    pub flipped_windows: usize,
}

/// Injects a π phase over `segment` (half-open frame range) and measures
/// QBER with flip correction off and on.
///
/// Both analyses use the same simulated announcements; the correction
/// settings come from `base.flip.correction` regardless of `enabled`.
pub fn disturbance_experiment(
    base: &SimConfig,
    segment: (u64, u64),
) -> Result<DisturbanceReport, SimError> {
    let (start, end) = segment;
    if start >= end || end > base.frames {
        return Err(SimError::Invalid(vec![format!(
            "disturbance segment {start}..{end} must be nonempty and within {} frames",
            base.frames
        )]));
    }
    let mut cfg = base.clone();
    cfg.disturbances = vec![FrameDisturbance {
        start_frame: start,
        end_frame: end,
        phase_rad: PI,
    }];
    cfg.flip.enabled = false;
    let out = run(&cfg)?;
    let corrected = flip_correction(&out.reference, &out.raw_records, &base.flip.correction)
        .map_err(|e| SimError::Invalid(vec![e.to_string()]))?;

    let inside = |r: &&SiftedRecord| (start..end).contains(&r.frame_index());
    let baseline = QberTally::of(out.raw_records.iter().filter(|r| !inside(r)));
    let share = (end - start) as f64 / base.frames as f64;
    Ok(DisturbanceReport {
        segment,
        frames: base.frames,
        seed: base.seed,
        baseline,
        segment_uncorrected: QberTally::of(out.raw_records.iter().filter(inside)),
        segment_corrected: QberTally::of(corrected.records.iter().filter(inside)),
        overall_uncorrected: QberTally::of(out.raw_records.iter()),
        overall_corrected: QberTally::of(corrected.records.iter()),
        expected_uncorrected_qber: baseline
            .qber()
            .map(|e| (1.0 - share) * e + share * (1.0 - e)),
        flipped_windows: corrected.flipped_windows(),
    })
}
