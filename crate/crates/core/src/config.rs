//! TOML configuration documents.
//!
//! Every dimensional key carries its unit in the name (`guard_ps`,
//! `alice_length_km`, ...). A document starts from a preset
//! (`paper-table4` unless named) and overrides individual values. Parsing
//! collects every problem it finds instead of stopping at the first.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::EpPolicy;
use crate::channel::FiberSpec;
use crate::presets;
use crate::protocol::{EncodingBits, FlipThreshold};
use crate::sim::{EncodingMode, FrameDisturbance, SimConfig, SweepSpec, SweepVariable};
use crate::timing::{GuardBand, TimeBinGrid};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_frames: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber: Option<FiberSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backscatter: Option<BackscatterSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_correction: Option<FlipSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_rate: Option<KeyRateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<EncodingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Vec<DisturbanceSection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceSection {
    pub mu_per_bin: Option<f64>,
    pub repetition_rate_hz: Option<f64>,
    pub mean_photons_out: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FiberSection {
    pub alice_length_km: Option<f64>,
    pub bob_length_km: Option<f64>,
    pub alpha_db_per_km: Option<f64>,
    pub group_index: Option<f64>,
    pub insertion_loss_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftSection {
    pub drift_std_rad_per_sqrt_s: Option<f64>,
    pub mode_overlap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorSection {
    pub eta_det: Option<f64>,
    pub p_dark_per_gate: Option<f64>,
    pub jitter_ps: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSection {
    pub frame_period_ns: Option<f64>,
    pub bin_ps: Option<f64>,
    pub guard_ps: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackscatterSection {
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipSection {
    pub enabled: Option<bool>,
    pub window_frames: Option<u64>,
    pub threshold_visibility: Option<f64>,
    pub threshold_raw_count: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyRateSection {
    /// `equal-to-eb`, `scaled` or `fixed`.
    pub ep_policy: Option<String>,
    /// Factor for `scaled`, value for `fixed`.
    pub ep_value: Option<f64>,
    pub sift_factor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodingSection {
    /// `random` or `fixed`.
    pub mode: Option<String>,
    /// Bits of bins 2 and 3 for `fixed` mode.
    pub alice_bits: Option<[u8; 2]>,
    pub bob_bits: Option<[u8; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSection {
    pub start_frame: Option<u64>,
    pub end_frame: Option<u64>,
    pub phase_rad: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    /// `guard_band`, `distance`, `beta` or `disturbance`.
    pub variable: Option<String>,
    pub values: Option<Vec<f64>>,
    pub frames_per_point: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub segment_start_frame: Option<u64>,
    pub segment_end_frame: Option<u64>,
}

/// Every dimensional key and the sections they live in, used to spot keys
/// that were written with the wrong unit.
const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("", &["preset", "frames", "seed", "workers", "block_frames"]),
    (
        "source",
        &["mu_per_bin", "repetition_rate_hz", "mean_photons_out"],
    ),
    (
        "fiber",
        &[
            "alice_length_km",
            "bob_length_km",
            "alpha_db_per_km",
            "group_index",
            "insertion_loss_db",
        ],
    ),
    ("drift", &["drift_std_rad_per_sqrt_s", "mode_overlap"]),
    ("detector", &["eta_det", "p_dark_per_gate", "jitter_ps"]),
    ("timing", &["frame_period_ns", "bin_ps", "guard_ps"]),
    ("backscatter", &["beta"]),
    (
        "flip_correction",
        &[
            "enabled",
            "window_frames",
            "threshold_visibility",
            "threshold_raw_count",
        ],
    ),
    ("key_rate", &["ep_policy", "ep_value", "sift_factor"]),
    ("encoding", &["mode", "alice_bits", "bob_bits"]),
    ("disturbance", &["start_frame", "end_frame", "phase_rad"]),
    ("sweep", &["variable", "values", "frames_per_point"]),
    ("experiment", &["segment_start_frame", "segment_end_frame"]),
];

const UNIT_SUFFIXES: &[&str] = &[
    "rad_per_sqrt_s",
    "db_per_km",
    "ps",
    "ns",
    "us",
    "ms",
    "s",
    "km",
    "m",
    "db",
    "hz",
    "khz",
    "mhz",
    "ghz",
    "rad",
    "deg",
];

fn split_unit(key: &str) -> (&str, Option<&str>) {
    UNIT_SUFFIXES
        .iter()
        .filter_map(|u| {
            key.strip_suffix(u)
                .and_then(|s| s.strip_suffix('_'))
                .map(|stem| (stem, Some(*u)))
        })
        .max_by_key(|(_, u)| u.map_or(0, str::len))
        .unwrap_or((key, None))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigIssue {
    Io(String),
    Parse(String),
    UnknownKey(String),
    UnitMismatch { key: String, expected: String },
    UnknownPreset(String),
    Invalid(String),
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigIssue::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigIssue::Parse(e) => write!(f, "parse error: {e}"),
            ConfigIssue::UnknownKey(k) => write!(f, "unknown key `{k}`"),
            ConfigIssue::UnitMismatch { key, expected } => {
                write!(
                    f,
                    "unit mismatch: `{key}` is not accepted, expected `{expected}`"
                )
            }
            ConfigIssue::UnknownPreset(p) => {
                write!(
                    f,
                    "unknown preset `{p}` (known: {})",
                    presets::PRESET_NAMES.join(", ")
                )
            }
            ConfigIssue::Invalid(e) => write!(f, "{e}"),
        }
    }
}

/// All problems found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn single(issue: ConfigIssue) -> Self {
        Self {
            issues: vec![issue],
        }
    }
}

/// Parses a document, reporting unknown keys and unit mismatches.
pub fn parse_document(text: &str) -> Result<ConfigDocument, ConfigError> {
    let (doc, issues) = parse_lenient(text)?;
    if issues.is_empty() {
        Ok(doc)
    } else {
        Err(ConfigError { issues })
    }
}

/// The document with unknown keys dropped, plus one issue per dropped key.
fn parse_lenient(text: &str) -> Result<(ConfigDocument, Vec<ConfigIssue>), ConfigError> {
    let mut ignored = BTreeSet::new();
    let de = toml::Deserializer::parse(text)
        .map_err(|e| ConfigError::single(ConfigIssue::Parse(e.to_string())))?;
    let doc: ConfigDocument = serde_ignored::deserialize(de, |path| {
        ignored.insert(path.to_string());
    })
    .map_err(|e| ConfigError::single(ConfigIssue::Parse(e.to_string())))?;
    Ok((
        doc,
        ignored.into_iter().map(|p| classify_unknown(&p)).collect(),
    ))
}

fn classify_unknown(path: &str) -> ConfigIssue {
    // serde_ignored paths look like `timing.?.guard_ns`, with `?` for the
    // Option layer and an index inside arrays of tables
    let parts: Vec<&str> = path
        .split('.')
        .filter(|p| *p != "?" && p.parse::<usize>().is_err())
        .collect();
    let path = parts.join(".");
    let path = path.as_str();
    let key = *parts.last().unwrap_or(&path);
    let section = if parts.len() > 1 { parts[0] } else { "" };
    let (stem, unit) = split_unit(key);
    let candidates = KNOWN_KEYS
        .iter()
        .find(|(s, _)| *s == section)
        .map_or(&[][..], |(_, keys)| *keys);
    for known in candidates {
        let (known_stem, known_unit) = split_unit(known);
        if known_stem == stem && known_unit.is_some() && known_unit != unit {
            let expected = if section.is_empty() {
                known.to_string()
            } else {
                format!("{section}.{known}")
            };
            return ConfigIssue::UnitMismatch {
                key: path.to_string(),
                expected,
            };
        }
    }
    ConfigIssue::UnknownKey(path.to_string())
}

/// Reads and resolves a configuration file.
pub fn parse_config(path: &Path) -> Result<ResolvedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::single(ConfigIssue::Io(format!("{}: {e}", path.display()))))?;
    let (doc, mut issues) = parse_lenient(&text)?;
    match resolve(&doc) {
        Ok(resolved) if issues.is_empty() => Ok(resolved),
        Ok(_) => Err(ConfigError { issues }),
        Err(e) => {
            issues.extend(e.issues);
            Err(ConfigError { issues })
        }
    }
}

/// A validated simulation plus the optional sweep and experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub sim: SimConfig,
    pub preset: String,
    pub sweep: Option<SweepSpec>,
    /// Half-open frame range for the disturbance experiment.
    pub segment: Option<(u64, u64)>,
}

impl ResolvedConfig {
    /// Validates after command-line overrides have been applied.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues: Vec<ConfigIssue> = Vec::new();
        if let Err(crate::sim::SimError::Invalid(errs)) = self.sim.validate() {
            issues.extend(errs.into_iter().map(ConfigIssue::Invalid));
        }
        if let Some(Err(crate::sim::SimError::Invalid(errs))) =
            self.sweep.as_ref().map(SweepSpec::validate)
        {
            issues.extend(errs.into_iter().map(ConfigIssue::Invalid));
        }
        if let Some((start, end)) = self.segment {
            if start >= end || end > self.sim.frames {
                issues.push(ConfigIssue::Invalid(format!(
                    "experiment segment {start}..{end} must be nonempty and within {} frames",
                    self.sim.frames
                )));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// The fully populated document describing this configuration.
    pub fn effective_document(&self) -> ConfigDocument {
        effective_document(&self.sim, &self.preset, self.sweep.as_ref(), self.segment)
    }
}

fn bits_from(pair: [u8; 2], name: &str, issues: &mut Vec<ConfigIssue>) -> EncodingBits {
    if pair.iter().any(|&b| b > 1) {
        issues.push(ConfigIssue::Invalid(format!(
            "encoding.{name} entries must be 0 or 1, got {pair:?}"
        )));
    }
    EncodingBits::new(pair[0] == 1, pair[1] == 1)
}

fn bits_to(bits: EncodingBits) -> [u8; 2] {
    [u8::from(bits.bin2), u8::from(bits.bin3)]
}

/// Applies a document on top of its preset and validates the result.
pub fn resolve(doc: &ConfigDocument) -> Result<ResolvedConfig, ConfigError> {
    let preset = doc
        .preset
        .clone()
        .unwrap_or_else(|| "paper-table4".to_string());
    let mut cfg = presets::by_name(&preset)
        .ok_or_else(|| ConfigError::single(ConfigIssue::UnknownPreset(preset.clone())))?;
    let mut issues = Vec::new();
    let mut invalid = |e: String| issues.push(ConfigIssue::Invalid(e));

    if let Some(v) = doc.frames {
        cfg.frames = v;
    }
    if let Some(v) = doc.seed {
        cfg.seed = v;
    }
    if let Some(v) = doc.workers {
        cfg.workers = v;
    }
    if let Some(v) = doc.block_frames {
        cfg.block_frames = v;
    }
    let link = &mut cfg.link;
    if let Some(s) = &doc.source {
        set(&mut link.mu_per_bin, s.mu_per_bin);
        set(&mut link.repetition_rate_hz, s.repetition_rate_hz);
        set(&mut link.mean_photons_out, s.mean_photons_out);
    }
    if let Some(s) = &doc.fiber {
        let alpha = s.alpha_db_per_km.unwrap_or(link.alice.alpha_db_per_km());
        let alice = s.alice_length_km.unwrap_or(link.alice.length_km());
        let bob = s.bob_length_km.unwrap_or(link.bob.length_km());
        match FiberSpec::new(alice, alpha) {
            Ok(f) => link.alice = f,
            Err(e) => invalid(format!("fiber.alice_length_km: {e}")),
        }
        match FiberSpec::new(bob, alpha) {
            Ok(f) => link.bob = f,
            Err(e) => invalid(format!("fiber.bob_length_km: {e}")),
        }
        set(&mut link.group_index, s.group_index);
        set(&mut link.insertion_loss_db, s.insertion_loss_db);
    }
    if let Some(s) = &doc.drift {
        set(
            &mut link.drift_std_rad_per_sqrt_s,
            s.drift_std_rad_per_sqrt_s,
        );
        set(&mut link.mode_overlap, s.mode_overlap);
    }
    if let Some(s) = &doc.detector {
        set(&mut link.detector.eta_det, s.eta_det);
        set(&mut link.detector.p_dark, s.p_dark_per_gate);
        set(
            &mut link.detector.jitter_std_s,
            s.jitter_ps.map(|v| v * 1e-12),
        );
    }
    if let Some(s) = &doc.timing {
        let period = s
            .frame_period_ns
            .map_or(link.grid.frame_period_s(), |v| v * 1e-9);
        let bin = s.bin_ps.map_or(link.grid.bin_width_s(), |v| v * 1e-12);
        match TimeBinGrid::new(period, bin) {
            Ok(g) => link.grid = g,
            Err(e) => invalid(format!("timing: {e}")),
        }
        if let Some(g) = s.guard_ps {
            match GuardBand::from_ps(g) {
                Ok(g) => link.guard = g,
                Err(e) => invalid(format!("timing.guard_ps: {e}")),
            }
        }
    }
    if let Some(s) = &doc.backscatter {
        set(&mut link.beta, s.beta);
    }
    if let Some(s) = &doc.key_rate {
        set(&mut link.key_rate.sift_factor, s.sift_factor);
        let value = s.ep_value;
        match (s.ep_policy.as_deref(), value) {
            (None, None) => {}
            (Some("equal-to-eb"), None) => link.key_rate.ep_policy = EpPolicy::EqualToEb,
            (Some("scaled"), Some(v)) => link.key_rate.ep_policy = EpPolicy::Scaled(v),
            (Some("fixed"), Some(v)) => link.key_rate.ep_policy = EpPolicy::Fixed(v),
            (Some(p @ ("scaled" | "fixed")), None) => invalid(format!(
                "key_rate.ep_policy = \"{p}\" needs key_rate.ep_value"
            )),
            (Some("equal-to-eb") | None, Some(_)) => {
                invalid("key_rate.ep_value only applies to the scaled and fixed policies".into())
            }
            (Some(p), _) => invalid(format!(
                "key_rate.ep_policy `{p}` is not one of equal-to-eb, scaled, fixed"
            )),
        }
    }
    if let Some(s) = &doc.flip_correction {
        set(&mut cfg.flip.enabled, s.enabled);
        set(&mut cfg.flip.correction.window_frames, s.window_frames);
        match (s.threshold_visibility, s.threshold_raw_count) {
            (Some(_), Some(_)) => invalid(
                "flip_correction: set either threshold_visibility or threshold_raw_count, not both"
                    .into(),
            ),
            (Some(v), None) => cfg.flip.correction.threshold = FlipThreshold::Visibility(v),
            (None, Some(n)) => cfg.flip.correction.threshold = FlipThreshold::RawCount(n),
            (None, None) => {}
        }
    }
    if let Some(s) = &doc.encoding {
        let mut local = Vec::new();
        match s.mode.as_deref() {
            None | Some("random") => {
                if s.alice_bits.is_some() || s.bob_bits.is_some() {
                    invalid("encoding bits only apply to mode = \"fixed\"".into());
                }
                cfg.encoding = EncodingMode::Random;
            }
            Some("fixed") => {
                let alice = bits_from(s.alice_bits.unwrap_or([0, 0]), "alice_bits", &mut local);
                let bob = bits_from(s.bob_bits.unwrap_or([0, 0]), "bob_bits", &mut local);
                cfg.encoding = EncodingMode::Fixed { alice, bob };
            }
            Some(m) => invalid(format!("encoding.mode `{m}` is not one of random, fixed")),
        }
        issues.extend(local);
    }
    if let Some(list) = &doc.disturbance {
        cfg.disturbances.clear();
        for (i, d) in list.iter().enumerate() {
            match (d.start_frame, d.end_frame, d.phase_rad) {
                (Some(start_frame), Some(end_frame), Some(phase_rad)) => {
                    cfg.disturbances.push(FrameDisturbance {
                        start_frame,
                        end_frame,
                        phase_rad,
                    })
                }
                _ => issues.push(ConfigIssue::Invalid(format!(
                    "disturbance[{i}] needs start_frame, end_frame and phase_rad"
                ))),
            }
        }
    }

    let sweep = doc.sweep.as_ref().and_then(|s| {
        let variable = match s.variable.as_deref() {
            None => None,
            Some("guard_band") => Some(SweepVariable::GuardBand),
            Some("distance") => Some(SweepVariable::Distance),
            Some("beta") => Some(SweepVariable::Beta),
            Some("disturbance") => Some(SweepVariable::Disturbance),
            Some(v) => {
                issues.push(ConfigIssue::Invalid(format!(
                    "sweep.variable `{v}` is not one of guard_band, distance, beta, disturbance"
                )));
                None
            }
        };
        (variable.is_some() || s.values.is_some() || s.frames_per_point.is_some()).then(|| {
            SweepSpec {
                variable: variable.unwrap_or(SweepVariable::Distance),
                values: s.values.clone().unwrap_or_default(),
                frames_per_point: s.frames_per_point,
            }
        })
    });
    let segment =
        doc.experiment
            .as_ref()
            .and_then(|e| match (e.segment_start_frame, e.segment_end_frame) {
                (Some(a), Some(b)) => Some((a, b)),
                (None, None) => None,
                _ => {
                    issues.push(ConfigIssue::Invalid(
                        "experiment needs both segment_start_frame and segment_end_frame".into(),
                    ));
                    None
                }
            });

    let resolved = ResolvedConfig {
        sim: cfg,
        preset,
        sweep,
        segment,
    };
    if let Err(e) = resolved.validate() {
        issues.extend(e.issues);
    }
    if issues.is_empty() {
        Ok(resolved)
    } else {
        Err(ConfigError { issues })
    }
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

/// Converts seconds to a display unit, preferring a short decimal when it
/// converts back to exactly the same value.
fn to_unit(seconds: f64, per_second: f64) -> f64 {
    let raw = seconds * per_second;
    let short: f64 = format!("{raw:.9}").parse().unwrap_or(raw);
    if short / per_second == seconds {
        short
    } else {
        raw
    }
}

/// Fully populated document equivalent to `sim` (and sweep/segment).
pub fn effective_document(
    sim: &SimConfig,
    preset: &str,
    sweep: Option<&SweepSpec>,
    segment: Option<(u64, u64)>,
) -> ConfigDocument {
    let link = &sim.link;
    let (ep_policy, ep_value) = match link.key_rate.ep_policy {
        EpPolicy::EqualToEb => ("equal-to-eb", None),
        EpPolicy::Scaled(v) => ("scaled", Some(v)),
        EpPolicy::Fixed(v) => ("fixed", Some(v)),
    };
    let (threshold_visibility, threshold_raw_count) = match sim.flip.correction.threshold {
        FlipThreshold::Visibility(v) => (Some(v), None),
        FlipThreshold::RawCount(n) => (None, Some(n)),
    };
    let encoding = match sim.encoding {
        EncodingMode::Random => EncodingSection {
            mode: Some("random".into()),
            alice_bits: None,
            bob_bits: None,
        },
        EncodingMode::Fixed { alice, bob } => EncodingSection {
            mode: Some("fixed".into()),
            alice_bits: Some(bits_to(alice)),
            bob_bits: Some(bits_to(bob)),
        },
    };
    ConfigDocument {
        preset: Some(preset.to_string()),
        frames: Some(sim.frames),
        seed: Some(sim.seed),
        workers: Some(sim.workers),
        block_frames: Some(sim.block_frames),
        source: Some(SourceSection {
            mu_per_bin: Some(link.mu_per_bin),
            repetition_rate_hz: Some(link.repetition_rate_hz),
            mean_photons_out: Some(link.mean_photons_out),
        }),
        fiber: Some(FiberSection {
            alice_length_km: Some(link.alice.length_km()),
            bob_length_km: Some(link.bob.length_km()),
            alpha_db_per_km: Some(link.alice.alpha_db_per_km()),
            group_index: Some(link.group_index),
            insertion_loss_db: Some(link.insertion_loss_db),
        }),
        drift: Some(DriftSection {
            drift_std_rad_per_sqrt_s: Some(link.drift_std_rad_per_sqrt_s),
            mode_overlap: Some(link.mode_overlap),
        }),
        detector: Some(DetectorSection {
            eta_det: Some(link.detector.eta_det),
            p_dark_per_gate: Some(link.detector.p_dark),
            jitter_ps: Some(to_unit(link.detector.jitter_std_s, 1e12)),
        }),
        timing: Some(TimingSection {
            frame_period_ns: Some(to_unit(link.grid.frame_period_s(), 1e9)),
            bin_ps: Some(to_unit(link.grid.bin_width_s(), 1e12)),
            guard_ps: Some(to_unit(link.guard.guard_s(), 1e12)),
        }),
        backscatter: Some(BackscatterSection {
            beta: Some(link.beta),
        }),
        flip_correction: Some(FlipSection {
            enabled: Some(sim.flip.enabled),
            window_frames: Some(sim.flip.correction.window_frames),
            threshold_visibility,
            threshold_raw_count,
        }),
        key_rate: Some(KeyRateSection {
            ep_policy: Some(ep_policy.into()),
            ep_value,
            sift_factor: Some(link.key_rate.sift_factor),
        }),
        encoding: Some(encoding),
        disturbance: (!sim.disturbances.is_empty()).then(|| {
            sim.disturbances
                .iter()
                .map(|d| DisturbanceSection {
                    start_frame: Some(d.start_frame),
                    end_frame: Some(d.end_frame),
                    phase_rad: Some(d.phase_rad),
                })
                .collect()
        }),
        sweep: sweep.map(|s| SweepSection {
            variable: Some(
                match s.variable {
                    SweepVariable::GuardBand => "guard_band",
                    SweepVariable::Distance => "distance",
                    SweepVariable::Beta => "beta",
                    SweepVariable::Disturbance => "disturbance",
                }
                .into(),
            ),
            values: Some(s.values.clone()),
            frames_per_point: s.frames_per_point,
        }),
        experiment: segment.map(|(a, b)| ExperimentSection {
            segment_start_frame: Some(a),
            segment_end_frame: Some(b),
        }),
    }
}

impl ConfigDocument {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config documents serialize")
    }
}
