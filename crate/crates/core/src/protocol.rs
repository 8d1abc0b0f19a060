//! Three-bin phase encoding, public-announcement sifting and the
//! π-misalignment flip correction driven by the reference bin.
//!
//! Each party leaves bin 1 unmodulated and writes one bit into each of bins
//! 2 and 3 as a 0 or π phase. Charlie announces the single bin/port that
//! clicked; a constructive click in bin k says the two bits of bin k agree,
//! a destructive click says they differ.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{CoherentBin, OpticsError};
use crate::timing::TimeBin;

/// Beam-splitter output port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    Constructive,
    Destructive,
}

impl Port {
    pub const ALL: [Port; 2] = [Port::Constructive, Port::Destructive];

    pub fn index(self) -> usize {
        match self {
            Port::Constructive => 0,
            Port::Destructive => 1,
        }
    }

    pub fn inverted(self) -> Port {
        match self {
            Port::Constructive => Port::Destructive,
            Port::Destructive => Port::Constructive,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Port::Constructive => 'C',
            Port::Destructive => 'D',
        }
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// The two key bits a party encodes in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct EncodingBits {
    /// Bit carried by bin 2.
    pub bin2: bool,
    /// Bit carried by bin 3.
    pub bin3: bool,
}

impl EncodingBits {
    pub fn new(bin2: bool, bin3: bool) -> Self {
        Self { bin2, bin3 }
    }

    /// Unpacks the two low bits of `v`: bit 0 → bin 2, bit 1 → bin 3.
    pub fn from_u8(v: u8) -> Self {
        Self::new(v & 1 == 1, v & 2 == 2)
    }

    /// Bit carried by a key bin. Bin 1 carries no key and reads as `false`.
    pub fn bit_for(&self, bin: TimeBin) -> bool {
        match bin {
            TimeBin::First => false,
            TimeBin::Second => self.bin2,
            TimeBin::Third => self.bin3,
        }
    }

    pub fn phases(&self) -> [f64; 3] {
        let phase = |b: bool| if b { PI } else { 0.0 };
        [0.0, phase(self.bin2), phase(self.bin3)]
    }
}

/// One signal pulse: three bins sharing a mean photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeBinFrame {
    bins: [CoherentBin; 3],
    frame_index: u64,
}

impl ThreeBinFrame {
    pub fn from_phases(
        mu_per_bin: f64,
        phases: [f64; 3],
        frame_index: u64,
    ) -> Result<Self, OpticsError> {
        Ok(Self {
            bins: [
                CoherentBin::new(mu_per_bin, phases[0])?,
                CoherentBin::new(mu_per_bin, phases[1])?,
                CoherentBin::new(mu_per_bin, phases[2])?,
            ],
            frame_index,
        })
    }

    pub fn bins(&self) -> &[CoherentBin; 3] {
        &self.bins
    }

    pub fn bin(&self, bin: TimeBin) -> CoherentBin {
        self.bins[bin.index()]
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    /// All bins pick up the same extra phase, e.g. a residual fiber phase.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            bins: self.bins.map(|b| b.shifted(delta)),
            frame_index: self.frame_index,
        }
    }

    pub fn attenuated(&self, transmittance: f64) -> Self {
        Self {
            bins: self.bins.map(|b| b.attenuated(transmittance)),
            frame_index: self.frame_index,
        }
    }
}

/// Phases `(0, bin2·π, bin3·π)`, all bins at `mu_per_bin`.
pub fn encode_frame(
    bits: EncodingBits,
    mu_per_bin: f64,
    frame_index: u64,
) -> Result<ThreeBinFrame, OpticsError> {
    ThreeBinFrame::from_phases(mu_per_bin, bits.phases(), frame_index)
}

/// An accepted detector click after bin assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub bin: TimeBin,
    pub port: Port,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Announcement {
    pub frame_index: u64,
    pub bin: TimeBin,
    pub port: Port,
}

/// Result of sifting one frame's clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Conclusive(Announcement),
    /// More than one click in the key bins.
    Inconclusive,
    /// No click in the key bins (bin-1 clicks may still have occurred).
    NoClick,
}

/// Sifts one frame: exactly one click in bins 2–3 makes it conclusive.
///
/// Bin-1 clicks are monitoring data and neither count nor veto.
pub fn conclusive_outcome(frame_index: u64, clicks: &[Click]) -> Outcome {
    let mut key_clicks = clicks.iter().filter(|c| c.bin.carries_key());
    match (key_clicks.next(), key_clicks.next()) {
        (None, _) => Outcome::NoClick,
        (Some(c), None) => Outcome::Conclusive(Announcement {
            frame_index,
            bin: c.bin,
            port: c.port,
        }),
        (Some(_), Some(_)) => Outcome::Inconclusive,
    }
}

/// What an announcement says about the two parties' bits in that bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Equal,
    XorOne,
}

impl Relation {
    pub fn of(port: Port) -> Relation {
        match port {
            Port::Constructive => Relation::Equal,
            Port::Destructive => Relation::XorOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Alice,
    Bob,
}

/// Key bit a party keeps for a conclusive announcement.
///
/// Alice keeps her bit; Bob inverts his after a destructive announcement so
/// both hold the same bit when nothing went wrong. Only the bit of the
/// announced bin is read.
pub fn derive_key_bit(ann: &Announcement, local_bits: EncodingBits, role: Role) -> bool {
    let bit = local_bits.bit_for(ann.bin);
    match (role, ann.port) {
        (Role::Bob, Port::Destructive) => !bit,
        _ => bit,
    }
}

/// A conclusive frame with both parties' derived key bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedRecord {
    pub announcement: Announcement,
    pub alice_bit: bool,
    pub bob_bit: bool,
    pub relation: Relation,
    /// Set when flip correction inverted the port interpretation.
    pub corrected: bool,
}

impl SiftedRecord {
    pub fn new(ann: Announcement, alice: EncodingBits, bob: EncodingBits) -> Self {
        Self {
            announcement: ann,
            alice_bit: derive_key_bit(&ann, alice, Role::Alice),
            bob_bit: derive_key_bit(&ann, bob, Role::Bob),
            relation: Relation::of(ann.port),
            corrected: false,
        }
    }

    pub fn frame_index(&self) -> u64 {
        self.announcement.frame_index
    }

    pub fn is_error(&self) -> bool {
        self.alice_bit != self.bob_bit
    }

    /// Reinterprets the announced port. Bob's derived bit depends only on the
    /// port through his conditional inversion, so it simply toggles.
    pub fn port_inverted(&self) -> Self {
        let port = self.announcement.port.inverted();
        Self {
            announcement: Announcement {
                port,
                ..self.announcement
            },
            alice_bit: self.alice_bit,
            bob_bit: !self.bob_bit,
            relation: Relation::of(port),
            corrected: !self.corrected,
        }
    }
}

/// Interference contrast of the reference bin, `(C₁ - D₁)/(C₁ + D₁)`.
///
/// `None` when the window holds no reference clicks.
pub fn reference_visibility(c1_constructive: u64, c1_destructive: u64) -> Option<f64> {
    let total = c1_constructive + c1_destructive;
    (total > 0).then(|| (c1_constructive as f64 - c1_destructive as f64) / total as f64)
}

/// Reference-bin clicks observed in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCounts {
    pub frame_index: u64,
    pub constructive: u32,
    pub destructive: u32,
}

/// When a window counts as π-misaligned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum FlipThreshold {
    /// Flip when the reference visibility drops below this value.
    Visibility(f64),
    /// Flip when fewer constructive reference clicks than this arrive.
    RawCount(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipCorrection {
    pub window_frames: u64,
    pub threshold: FlipThreshold,
}

impl Default for FlipCorrection {
    fn default() -> Self {
        Self {
            window_frames: 1000,
            threshold: FlipThreshold::Visibility(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlipCorrectionError {
    #[error("correction window must span at least one frame")]
    EmptyWindow,
    #[error("visibility threshold must lie strictly between -1 and 1, got {0}")]
    ThresholdOutOfRange(f64),
    #[error("input streams must be sorted by frame index")]
    Unsorted,
}

impl FlipCorrection {
    pub fn validate(&self) -> Result<(), FlipCorrectionError> {
        if self.window_frames == 0 {
            return Err(FlipCorrectionError::EmptyWindow);
        }
        if let FlipThreshold::Visibility(t) = self.threshold {
            if !(t > -1.0 && t < 1.0) {
                return Err(FlipCorrectionError::ThresholdOutOfRange(t));
            }
        }
        Ok(())
    }

    fn misaligned(&self, constructive: u64, destructive: u64) -> Option<bool> {
        if constructive + destructive == 0 {
            return None;
        }
        Some(match self.threshold {
            FlipThreshold::Visibility(t) => {
                reference_visibility(constructive, destructive).is_some_and(|v| v < t)
            }
            FlipThreshold::RawCount(min) => constructive < min,
        })
    }
}

/// Per-window decision taken by the flip correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDecision {
    pub window: u64,
    pub constructive: u64,
    pub destructive: u64,
    pub flipped: bool,
    /// No reference data; the previous window's decision was reused.
    pub inherited: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedStream {
    pub records: Vec<SiftedRecord>,
    /// Reference counts with ports swapped in flipped windows.
    pub reference: Vec<ReferenceCounts>,
    pub windows: Vec<WindowDecision>,
}

impl CorrectedStream {
    pub fn flipped_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.flipped).count()
    }

    pub fn inherited_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.inherited).count()
    }
}

/// Inverts the port interpretation of every record in windows whose
/// reference bin indicates a π misalignment.
///
/// Windows are consecutive blocks of `window_frames` frames starting at
/// frame 0, processed in order. A window without reference clicks reuses the
/// previous decision (no flip before the first informative window). The
/// reference counts of a flipped window are swapped along with the records,
/// so a second pass sees an aligned stream.
pub fn flip_correction(
    reference: &[ReferenceCounts],
    records: &[SiftedRecord],
    config: &FlipCorrection,
) -> Result<CorrectedStream, FlipCorrectionError> {
    config.validate()?;
    if !reference.is_sorted_by_key(|r| r.frame_index)
        || !records.is_sorted_by_key(|r| r.frame_index())
    {
        return Err(FlipCorrectionError::Unsorted);
    }
    let w = config.window_frames;
    let last_frame = reference
        .last()
        .map(|r| r.frame_index)
        .into_iter()
        .chain(records.last().map(|r| r.frame_index()))
        .max();
    let Some(last_frame) = last_frame else {
        return Ok(CorrectedStream {
            records: Vec::new(),
            reference: Vec::new(),
            windows: Vec::new(),
        });
    };

    let n_windows = last_frame / w + 1;
    let mut windows = Vec::with_capacity(n_windows as usize);
    let mut ref_iter = reference.iter().peekable();
    let mut previous = false;
    for window in 0..n_windows {
        let end = (window + 1) * w;
        let (mut c, mut d) = (0u64, 0u64);
        while let Some(r) = ref_iter.next_if(|r| r.frame_index < end) {
            c += u64::from(r.constructive);
            d += u64::from(r.destructive);
        }
        let (flipped, inherited) = match config.misaligned(c, d) {
            Some(f) => (f, false),
            None => (previous, true),
        };
        previous = flipped;
        windows.push(WindowDecision {
            window,
            constructive: c,
            destructive: d,
            flipped,
            inherited,
        });
    }

    let flipped = |frame: u64| windows[(frame / w) as usize].flipped;
    let records = records
        .iter()
        .map(|r| {
            if flipped(r.frame_index()) {
                r.port_inverted()
            } else {
                *r
            }
        })
        .collect();
    let reference = reference
        .iter()
        .map(|r| {
            if flipped(r.frame_index) {
                ReferenceCounts {
                    frame_index: r.frame_index,
                    constructive: r.destructive,
                    destructive: r.constructive,
                }
            } else {
                *r
            }
        })
        .collect();
    Ok(CorrectedStream {
        records,
        reference,
        windows,
    })
}

// ---------------------------------------------------------------------------
// Line-delimited record format
// ---------------------------------------------------------------------------

/// Header line of the sifted-record format.
pub const RECORD_HEADER: &str = "frame_index,bin,port,alice_bit,bob_bit,corrected_flag";

#[derive(Debug, Error)]
pub enum RecordFormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Writes records as comma-separated lines under [`RECORD_HEADER`].
///
/// `bin` is 1–3, `port` is `C` or `D`, bits and the flag are `0`/`1`.
pub fn write_records<W: Write>(mut out: W, records: &[SiftedRecord]) -> io::Result<()> {
    writeln!(out, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.announcement.frame_index,
            r.announcement.bin,
            r.announcement.port,
            u8::from(r.alice_bit),
            u8::from(r.bob_bit),
            u8::from(r.corrected)
        )?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<SiftedRecord>, RecordFormatError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != RECORD_HEADER {
                return Err(RecordFormatError::Malformed {
                    line: lineno,
                    reason: format!("expected header `{RECORD_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            line.parse()
                .map_err(|reason| RecordFormatError::Malformed {
                    line: lineno,
                    reason,
                })?,
        );
    }
    Ok(records)
}

impl FromStr for SiftedRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [frame, bin, port, alice, bob, corrected] = fields[..] else {
            return Err(format!("expected 6 fields, found {}", fields.len()));
        };
        let bit = |s: &str, name: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(format!("{name} must be 0 or 1, got `{s}`")),
        };
        let frame_index = frame
            .parse::<u64>()
            .map_err(|e| format!("frame_index: {e}"))?;
        let bin = bin
            .parse::<u8>()
            .ok()
            .and_then(TimeBin::from_number)
            .ok_or_else(|| format!("bin must be 1, 2 or 3, got `{bin}`"))?;
        let port = match port {
            "C" => Port::Constructive,
            "D" => Port::Destructive,
            _ => return Err(format!("port must be C or D, got `{port}`")),
        };
        Ok(SiftedRecord {
            announcement: Announcement {
                frame_index,
                bin,
                port,
            },
            alice_bit: bit(alice, "alice_bit")?,
            bob_bit: bit(bob, "bob_bit")?,
            relation: Relation::of(port),
            corrected: bit(corrected, "corrected_flag")?,
        })
    }
}

/// Brute-force check of the sifting table under ideal optics.
///
/// For all sixteen bit combinations the encoded frames are interfered; every
/// key-bin port that receives light must map to the relation its bits
/// actually satisfy, and the derived key bits must agree. Returns one line per
/// failure; empty means the table holds.
pub fn sifting_table_violations(mu_per_bin: f64) -> Vec<String> {
    let mut failures = Vec::new();
    for combo in 0u8..16 {
        let alice = EncodingBits::from_u8(combo & 3);
        let bob = EncodingBits::from_u8(combo >> 2);
        let fa = encode_frame(alice, mu_per_bin, 0).expect("valid intensity");
        let fb = encode_frame(bob, mu_per_bin, 0).expect("valid intensity");
        let pattern = crate::optics::predict_pattern(&fa, &fb);
        if pattern[0].destructive > 1e-12 * mu_per_bin {
            failures.push(format!(
                "{alice:?}/{bob:?}: reference bin not fully constructive"
            ));
        }
        for bin in [TimeBin::Second, TimeBin::Third] {
            let ports = pattern[bin.index()];
            let lit: Vec<Port> = Port::ALL
                .into_iter()
                .filter(|p| match p {
                    Port::Constructive => ports.constructive > 1e-12 * mu_per_bin,
                    Port::Destructive => ports.destructive > 1e-12 * mu_per_bin,
                })
                .collect();
            if lit.len() != 1 {
                failures.push(format!(
                    "{alice:?}/{bob:?} bin {bin}: {} lit ports",
                    lit.len()
                ));
                continue;
            }
            let ann = Announcement {
                frame_index: 0,
                bin,
                port: lit[0],
            };
            let actual = if alice.bit_for(bin) == bob.bit_for(bin) {
                Relation::Equal
            } else {
                Relation::XorOne
            };
            let record = SiftedRecord::new(ann, alice, bob);
            if record.relation != actual {
                failures.push(format!(
                    "{alice:?}/{bob:?} bin {bin}: announced {:?}, bits {:?}",
                    record.relation, actual
                ));
            }
            if record.is_error() {
                failures.push(format!("{alice:?}/{bob:?} bin {bin}: key bits disagree"));
            }
        }
    }
    failures
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ann(bin: TimeBin, port: Port) -> Announcement {
        Announcement {
            frame_index: 0,
            bin,
            port,
        }
    }

    fn click(bin: TimeBin, port: Port) -> Click {
        Click { bin, port }
    }

    #[test]
    fn encode_examples() {
        let phases = |b2, b3| {
            encode_frame(EncodingBits::new(b2, b3), 0.1, 0)
                .unwrap()
                .bins()
                .map(|b| b.phase())
        };
        assert_eq!(phases(false, false), [0.0, 0.0, 0.0]);
        assert_eq!(phases(true, false), [0.0, PI, 0.0]);
        assert_eq!(phases(false, true), [0.0, 0.0, PI]);
        assert!(encode_frame(EncodingBits::default(), -1.0, 0).is_err());
    }

    #[test]
    fn outcome_examples() {
        use Port::*;
        use TimeBin::*;
        assert_eq!(
            conclusive_outcome(4, &[click(Second, Constructive)]),
            Outcome::Conclusive(Announcement {
                frame_index: 4,
                bin: Second,
                port: Constructive
            })
        );
        assert_eq!(
            conclusive_outcome(4, &[click(First, Constructive), click(Third, Destructive)]),
            Outcome::Conclusive(Announcement {
                frame_index: 4,
                bin: Third,
                port: Destructive
            })
        );
        assert_eq!(
            conclusive_outcome(
                4,
                &[click(Second, Constructive), click(Third, Constructive)]
            ),
            Outcome::Inconclusive
        );
        assert_eq!(
            conclusive_outcome(4, &[click(First, Destructive)]),
            Outcome::NoClick
        );
        assert_eq!(conclusive_outcome(4, &[]), Outcome::NoClick);
    }

    #[test]
    fn key_bit_examples() {
        use Port::*;
        use TimeBin::*;
        let bits = |b2, b3| EncodingBits::new(b2, b3);
        // C2 with a1 = b1 = 1
        assert!(derive_key_bit(
            &ann(Second, Constructive),
            bits(true, false),
            Role::Alice
        ));
        assert!(derive_key_bit(
            &ann(Second, Constructive),
            bits(true, false),
            Role::Bob
        ));
        // D2, a1 = 1, b1 = 0
        assert!(derive_key_bit(
            &ann(Second, Destructive),
            bits(true, false),
            Role::Alice
        ));
        assert!(derive_key_bit(
            &ann(Second, Destructive),
            bits(false, false),
            Role::Bob
        ));
        // D3, a2 = 0, b2 = 1
        assert!(!derive_key_bit(
            &ann(Third, Destructive),
            bits(false, false),
            Role::Alice
        ));
        assert!(!derive_key_bit(
            &ann(Third, Destructive),
            bits(false, true),
            Role::Bob
        ));
    }

    #[test]
    fn sifting_table_holds_for_all_sixteen_combinations() {
        assert!(
            sifting_table_violations(0.1).is_empty(),
            "{:?}",
            sifting_table_violations(0.1)
        );
    }

    #[test]
    fn reference_visibility_examples() {
        assert_eq!(reference_visibility(100, 0), Some(1.0));
        assert_eq!(reference_visibility(0, 100), Some(-1.0));
        assert!((reference_visibility(90, 10).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(reference_visibility(0, 0), None);
    }

    fn record(frame_index: u64, port: Port, bits_equal: bool) -> SiftedRecord {
        let alice = EncodingBits::new(true, false);
        let bob = EncodingBits::new(bits_equal, false);
        SiftedRecord::new(
            Announcement {
                frame_index,
                bin: TimeBin::Second,
                port,
            },
            alice,
            bob,
        )
    }

    fn reference(frame_index: u64, constructive: u32, destructive: u32) -> ReferenceCounts {
        ReferenceCounts {
            frame_index,
            constructive,
            destructive,
        }
    }

    #[test]
    fn aligned_stream_is_untouched() {
        let records = vec![
            record(3, Port::Constructive, true),
            record(1500, Port::Destructive, false),
        ];
        let refs = vec![reference(10, 5, 1), reference(1200, 3, 0)];
        let out = flip_correction(&refs, &records, &FlipCorrection::default()).unwrap();
        assert_eq!(out.records, records);
        assert_eq!(out.flipped_windows(), 0);
    }

    #[test]
    fn destructive_reference_flips_window() {
        // π-misaligned: port reads as destructive while bits are equal
        let records = vec![
            record(3, Port::Destructive, true),
            record(700, Port::Constructive, false),
        ];
        let refs = vec![reference(2, 0, 4), reference(900, 0, 1)];
        let out = flip_correction(&refs, &records, &FlipCorrection::default()).unwrap();
        assert!(records.iter().all(|r| r.is_error()));
        assert!(out.records.iter().all(|r| !r.is_error() && r.corrected));
        assert_eq!(out.records[0].announcement.port, Port::Constructive);
        assert_eq!(out.reference[0], reference(2, 4, 0));
    }

    #[test]
    fn empty_windows_inherit() {
        let records = vec![
            record(100, Port::Destructive, true),
            record(1100, Port::Destructive, true),
        ];
        let refs = vec![reference(50, 0, 2)];
        let out = flip_correction(&refs, &records, &FlipCorrection::default()).unwrap();
        assert!(out.windows[1].inherited && out.windows[1].flipped);
        assert!(out.records.iter().all(|r| r.corrected));
        // nothing to inherit from yet
        let out = flip_correction(&[], &records, &FlipCorrection::default()).unwrap();
        assert!(out.records.iter().all(|r| !r.corrected));
    }

    #[test]
    fn raw_count_mode() {
        let cfg = FlipCorrection {
            window_frames: 10,
            threshold: FlipThreshold::RawCount(3),
        };
        let records = vec![
            record(1, Port::Constructive, true),
            record(11, Port::Constructive, true),
        ];
        let refs = vec![reference(0, 2, 0), reference(12, 5, 0)];
        let out = flip_correction(&refs, &records, &cfg).unwrap();
        assert!(out.records[0].corrected);
        assert!(!out.records[1].corrected);
    }

    #[test]
    fn rejects_bad_configuration() {
        let bad = FlipCorrection {
            window_frames: 0,
            ..Default::default()
        };
        assert_eq!(
            flip_correction(&[], &[], &bad),
            Err(FlipCorrectionError::EmptyWindow)
        );
        let bad = FlipCorrection {
            threshold: FlipThreshold::Visibility(1.0),
            ..Default::default()
        };
        assert!(flip_correction(&[], &[], &bad).is_err());
        let unsorted = vec![
            record(5, Port::Constructive, true),
            record(1, Port::Constructive, true),
        ];
        assert_eq!(
            flip_correction(&[], &unsorted, &FlipCorrection::default()),
            Err(FlipCorrectionError::Unsorted)
        );
    }

    #[test]
    fn record_format_round_trips() {
        let records = vec![
            record(3, Port::Destructive, true).port_inverted(),
            record(70, Port::Destructive, false),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next(), Some(RECORD_HEADER));
        assert_eq!(text.lines().nth(1), Some("3,2,C,1,1,1"));
        assert_eq!(read_records(&buf[..]).unwrap(), records);
        assert!(read_records("nope\n".as_bytes()).is_err());
        let bad = format!("{RECORD_HEADER}\n1,4,C,0,0,0\n");
        assert!(read_records(bad.as_bytes()).is_err());
    }

    fn arb_bits() -> impl Strategy<Value = EncodingBits> {
        (any::<bool>(), any::<bool>()).prop_map(|(a, b)| EncodingBits::new(a, b))
    }

    fn arb_stream() -> impl Strategy<Value = (Vec<ReferenceCounts>, Vec<SiftedRecord>)> {
        let refs =
            prop::collection::btree_map(0u64..20_000, (0u32..4, 0u32..4), 0..60).prop_map(|m| {
                m.into_iter()
                    .map(|(f, (c, d))| reference(f, c, d))
                    .collect::<Vec<_>>()
            });
        let recs = prop::collection::btree_map(
            0u64..20_000,
            (any::<bool>(), any::<bool>(), arb_bits(), arb_bits()),
            0..80,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|(f, (third, destructive, a, b))| {
                    let bin = if third {
                        TimeBin::Third
                    } else {
                        TimeBin::Second
                    };
                    let port = if destructive {
                        Port::Destructive
                    } else {
                        Port::Constructive
                    };
                    SiftedRecord::new(
                        Announcement {
                            frame_index: f,
                            bin,
                            port,
                        },
                        a,
                        b,
                    )
                })
                .collect::<Vec<_>>()
        });
        (refs, recs)
    }

    proptest! {
        #[test]
        fn key_bit_ignores_unannounced_bin(bits in arb_bits(), third in any::<bool>(), destructive in any::<bool>()) {
            let bin = if third { TimeBin::Third } else { TimeBin::Second };
            let port = if destructive { Port::Destructive } else { Port::Constructive };
            let mut other = bits;
            if third { other.bin2 = !other.bin2 } else { other.bin3 = !other.bin3 }
            for role in [Role::Alice, Role::Bob] {
                prop_assert_eq!(derive_key_bit(&ann(bin, port), bits, role), derive_key_bit(&ann(bin, port), other, role));
            }
        }

        /// With threshold 0 and no zero-visibility window, a second pass
        /// changes nothing.
        #[test]
        fn flip_correction_is_idempotent((refs, recs) in arb_stream(), window in 1u64..3000) {
            let cfg = FlipCorrection { window_frames: window, threshold: FlipThreshold::Visibility(0.0) };
            let once = flip_correction(&refs, &recs, &cfg).unwrap();
            prop_assume!(once.windows.iter().all(|w| w.constructive != w.destructive || w.constructive == 0));
            let twice = flip_correction(&once.reference, &once.records, &cfg).unwrap();
            prop_assert_eq!(&twice.records, &once.records);
            prop_assert_eq!(twice.flipped_windows(), 0);
        }
    }
}
