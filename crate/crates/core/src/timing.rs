//! Time-bin grid, detector jitter and guard-band filtering.
//!
//! Each frame starts with a 3-bin optical pulse at offset zero, followed by
//! dark time until the next frame. A click is kept only if its timestamp
//! falls inside a bin's acceptance window `[start + g, end - g]`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("{name} must be finite and positive, got {value:e} s")]
    NonPositive { name: &'static str, value: f64 },
    #[error("three-bin pulse ({pulse_on:e} s) does not fit in the frame period ({period:e} s)")]
    PulseTooLong { pulse_on: f64, period: f64 },
    #[error("guard band must be finite and non-negative, got {0:e} s")]
    NegativeGuard(f64),
    #[error("guard band {guard:e} s leaves no acceptance window in a {bin:e} s bin (need 2g < bin width)")]
    GuardTooWide { guard: f64, bin: f64 },
    #[error("jitter must be finite and non-negative, got {0:e} s")]
    NegativeJitter(f64),
}

/// One of the three time bins of a frame. `First` is the phase reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimeBin {
    First,
    Second,
    Third,
}

impl TimeBin {
    pub const ALL: [TimeBin; 3] = [TimeBin::First, TimeBin::Second, TimeBin::Third];

    /// Zero-based position within the frame.
    pub fn index(self) -> usize {
        match self {
            TimeBin::First => 0,
            TimeBin::Second => 1,
            TimeBin::Third => 2,
        }
    }

    /// One-based label, as announced publicly.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn from_number(number: u8) -> Option<Self> {
        number
            .checked_sub(1)
            .and_then(|i| Self::from_index(i as usize))
    }

    pub fn carries_key(self) -> bool {
        self != TimeBin::First
    }
}

impl fmt::Display for TimeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinGrid {
    frame_period_s: f64,
    bin_width_s: f64,
}

impl TimeBinGrid {
    pub fn new(frame_period_s: f64, bin_width_s: f64) -> Result<Self, TimingError> {
        for (name, value) in [("frame period", frame_period_s), ("bin width", bin_width_s)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(TimingError::NonPositive { name, value });
            }
        }
        if 3.0 * bin_width_s > frame_period_s {
            return Err(TimingError::PulseTooLong {
                pulse_on: 3.0 * bin_width_s,
                period: frame_period_s,
            });
        }
        Ok(Self {
            frame_period_s,
            bin_width_s,
        })
    }

    pub fn frame_period_s(&self) -> f64 {
        self.frame_period_s
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_s
    }

    pub fn pulse_on_s(&self) -> f64 {
        3.0 * self.bin_width_s
    }

    pub fn frame_start_s(&self, frame_index: u64) -> f64 {
        frame_index as f64 * self.frame_period_s
    }

    pub fn bin_start_s(&self, frame_index: u64, bin: TimeBin) -> f64 {
        self.frame_start_s(frame_index) + bin.index() as f64 * self.bin_width_s
    }

    pub fn bin_center_s(&self, frame_index: u64, bin: TimeBin) -> f64 {
        self.bin_start_s(frame_index, bin) + 0.5 * self.bin_width_s
    }

    pub fn check_guard(&self, g: GuardBand) -> Result<(), TimingError> {
        if 2.0 * g.guard_s() >= self.bin_width_s {
            return Err(TimingError::GuardTooWide {
                guard: g.guard_s(),
                bin: self.bin_width_s,
            });
        }
        Ok(())
    }
}

impl Default for TimeBinGrid {
    fn default() -> Self {
        Self {
            frame_period_s: 32e-9,
            bin_width_s: 1e-9,
        }
    }
}

/// Dead zone applied at both edges of every bin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GuardBand {
    guard_s: f64,
}

impl GuardBand {
    pub fn new(guard_s: f64) -> Result<Self, TimingError> {
        if !guard_s.is_finite() || guard_s < 0.0 {
            return Err(TimingError::NegativeGuard(guard_s));
        }
        Ok(Self { guard_s })
    }

    pub fn from_ps(guard_ps: f64) -> Result<Self, TimingError> {
        Self::new(guard_ps * 1e-12)
    }

    pub fn guard_s(&self) -> f64 {
        self.guard_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinAssignment {
    Accepted { frame_index: u64, bin: TimeBin },
    Rejected,
}

/// Labels a timestamp with its frame and bin, or rejects it when it falls in
/// a guard region or outside the optical pulse.
pub fn assign_bin(timestamp_s: f64, grid: &TimeBinGrid, g: GuardBand) -> BinAssignment {
    if !(timestamp_s.is_finite() && timestamp_s >= 0.0) {
        return BinAssignment::Rejected;
    }
    let frame = (timestamp_s / grid.frame_period_s).floor();
    let offset = timestamp_s - frame * grid.frame_period_s;
    let slot = (offset / grid.bin_width_s).floor();
    let Some(bin) = TimeBin::from_index(slot as usize).filter(|_| slot >= 0.0) else {
        return BinAssignment::Rejected;
    };
    let within = offset - slot * grid.bin_width_s;
    if within < g.guard_s || within > grid.bin_width_s - g.guard_s {
        return BinAssignment::Rejected;
    }
    BinAssignment::Accepted {
        frame_index: frame as u64,
        bin,
    }
}

/// Adds Gaussian timing jitter to a true arrival time.
pub fn jittered_timestamp<R: Rng + ?Sized>(
    true_time_s: f64,
    jitter_std_s: f64,
    rng: &mut R,
) -> f64 {
    if jitter_std_s == 0.0 {
        return true_time_s;
    }
    let z: f64 = rng.sample(StandardNormal);
    true_time_s + jitter_std_s * z
}

/// Probability that a click emitted uniformly inside a bin, then jittered,
/// is accepted in the same bin.
pub fn acceptance_fraction(g: GuardBand, grid: &TimeBinGrid, jitter_std_s: f64) -> f64 {
    bin_transfer_probability(0, g, grid, jitter_std_s)
}

/// Probability that a click emitted uniformly inside a bin is accepted in
/// the bin `offset` positions later (negative offsets look backwards).
///
/// This is the convolution of the square emission profile with the jitter
/// kernel, integrated over the target acceptance window. It ignores where
/// the target lies relative to the pulse; callers only ask for offsets that
/// stay inside the three-bin pulse.
pub fn bin_transfer_probability(
    offset: i32,
    g: GuardBand,
    grid: &TimeBinGrid,
    jitter_std_s: f64,
) -> f64 {
    let w = grid.bin_width_s;
    let lo = offset as f64 * w + g.guard_s;
    let hi = (offset + 1) as f64 * w - g.guard_s;
    if hi <= lo {
        return 0.0;
    }
    if jitter_std_s <= 1e-9 * w {
        // plain overlap of [0, w] with [lo, hi]
        return ((hi.min(w) - lo.max(0.0)) / w).max(0.0);
    }
    let s = jitter_std_s;
    // ∫₀ʷ Φ((c - x)/σ) dx = σ [F(c/σ) - F((c - w)/σ)],  F(z) = zΦ(z) + φ(z)
    let integral = |c: f64| s * (normal_cdf_integral(c / s) - normal_cdf_integral((c - w) / s));
    ((integral(hi) - integral(lo)) / w).clamp(0.0, 1.0)
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Antiderivative of the standard normal CDF.
fn normal_cdf_integral(z: f64) -> f64 {
    if z <= 0.0 {
        normal_pdf(z) + z * normal_cdf(z)
    } else {
        // F(z) - F(-z) = z; keeps the tail evaluation on the small side
        z + normal_cdf_integral(-z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PS: f64 = 1e-12;

    fn grid() -> TimeBinGrid {
        TimeBinGrid::default()
    }

    fn accepted(frame_index: u64, bin: TimeBin) -> BinAssignment {
        BinAssignment::Accepted { frame_index, bin }
    }

    #[test]
    fn grid_validation() {
        assert!(TimeBinGrid::new(32e-9, 1e-9).is_ok());
        assert!(TimeBinGrid::new(2e-9, 1e-9).is_err());
        assert!(TimeBinGrid::new(32e-9, 0.0).is_err());
        assert!((grid().pulse_on_s() - 3e-9).abs() < 1e-21);
        assert!(grid()
            .check_guard(GuardBand::from_ps(600.0).unwrap())
            .is_err());
        assert!(grid()
            .check_guard(GuardBand::from_ps(500.0).unwrap())
            .is_err());
        assert!(grid()
            .check_guard(GuardBand::from_ps(499.0).unwrap())
            .is_ok());
        assert!(GuardBand::new(-1.0).is_err());
    }

    #[test]
    fn assign_bin_examples() {
        let g300 = GuardBand::from_ps(300.0).unwrap();
        assert_eq!(
            assign_bin(500.0 * PS, &grid(), g300),
            accepted(0, TimeBin::First)
        );
        assert_eq!(
            assign_bin(150.0 * PS, &grid(), g300),
            BinAssignment::Rejected
        );
        assert_eq!(
            assign_bin(32e-9 + 1500.0 * PS, &grid(), GuardBand::default()),
            accepted(1, TimeBin::Second)
        );
    }

    #[test]
    fn assign_bin_rejects_outside_pulse() {
        let g = GuardBand::default();
        assert_eq!(assign_bin(3.5e-9, &grid(), g), BinAssignment::Rejected);
        assert_eq!(assign_bin(31e-9, &grid(), g), BinAssignment::Rejected);
        assert_eq!(assign_bin(-1e-12, &grid(), g), BinAssignment::Rejected);
        assert_eq!(assign_bin(f64::NAN, &grid(), g), BinAssignment::Rejected);
        assert_eq!(assign_bin(2.5e-9, &grid(), g), accepted(0, TimeBin::Third));
    }

    #[test]
    fn transfer_with_zero_guard() {
        let p = acceptance_fraction(GuardBand::default(), &grid(), 60.0 * PS);
        assert!(p > 0.9 && p < 1.0, "{p}");
    }

    #[test]
    fn zero_jitter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(jittered_timestamp(1.234e-6, 0.0, &mut rng), 1.234e-6);
    }

    #[test]
    fn jitter_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let center = 1e-6;
        let sigma = 100.0 * PS;
        let samples: Vec<f64> = (0..n)
            .map(|_| jittered_timestamp(center, sigma, &mut rng) - center)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt());
        // SE of a Gaussian sample std is σ/√(2(n-1))
        assert!((std - sigma).abs() < 4.0 * sigma / (2.0 * (n - 1) as f64).sqrt());
    }

    #[test]
    fn acceptance_examples() {
        let g0 = GuardBand::default();
        assert_eq!(acceptance_fraction(g0, &grid(), 0.0), 1.0);
        let eps = 10.0 * PS;
        let narrow = acceptance_fraction(GuardBand::new(0.5e-9 - eps).unwrap(), &grid(), 0.0);
        assert!((narrow - 2.0 * eps / 1e-9).abs() < 1e-9);
        let g300 = acceptance_fraction(GuardBand::from_ps(300.0).unwrap(), &grid(), 0.0);
        assert!((g300 - 0.4).abs() < 1e-12);
    }

    /// Independent route: Monte Carlo through `assign_bin`.
    #[test]
    fn transfer_kernel_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GuardBand::from_ps(100.0).unwrap();
        let sigma = 150.0 * PS;
        let n = 400_000;
        let mut landed = [0u32; 3];
        for _ in 0..n {
            // emitted in the middle bin of frame 10
            let t = grid().bin_start_s(10, TimeBin::Second) + rng.random::<f64>() * 1e-9;
            if let BinAssignment::Accepted {
                frame_index: 10,
                bin,
            } = assign_bin(jittered_timestamp(t, sigma, &mut rng), &grid(), g)
            {
                landed[bin.index()] += 1;
            }
        }
        for (offset, count) in [(-1, landed[0]), (0, landed[1]), (1, landed[2])] {
            let p = bin_transfer_probability(offset, g, &grid(), sigma);
            let freq = count as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 4.0 * se + 1e-12,
                "offset {offset}: {freq} vs {p}"
            );
        }
    }

    #[test]
    fn tiny_jitter_matches_zero_jitter_limit() {
        let g = GuardBand::from_ps(200.0).unwrap();
        let sharp = acceptance_fraction(g, &grid(), 0.0);
        let soft = acceptance_fraction(g, &grid(), 1e-15);
        assert!((sharp - soft).abs() < 1e-6);
    }

    /// With g ≥ 3σ, fewer than 0.3% of clicks land in a neighbouring bin.
    #[test]
    fn guard_suppresses_misassignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sigma = 60.0 * PS;
        let g = GuardBand::new(3.0 * sigma).unwrap();
        let n = 400_000;
        let mut wrong = 0u32;
        let mut kept = 0u32;
        for _ in 0..n {
            let t = grid().bin_start_s(7, TimeBin::Second) + rng.random::<f64>() * 1e-9;
            match assign_bin(jittered_timestamp(t, sigma, &mut rng), &grid(), g) {
                BinAssignment::Accepted {
                    bin: TimeBin::Second,
                    ..
                } => kept += 1,
                BinAssignment::Accepted { .. } => wrong += 1,
                BinAssignment::Rejected => {}
            }
        }
        let rate = wrong as f64 / (wrong + kept) as f64;
        assert!(rate < 0.003, "misassignment {rate}");
    }

    proptest! {
        #[test]
        fn bin_centres_map_to_their_bin(frame in 0u64..1_000_000, b in 0usize..3, guard_ps in 0.0..499.0f64) {
            let g = GuardBand::from_ps(guard_ps).unwrap();
            let bin = TimeBin::from_index(b).unwrap();
            prop_assert_eq!(assign_bin(grid().bin_center_s(frame, bin), &grid(), g), accepted(frame, bin));
        }

        #[test]
        fn acceptance_is_monotone(g1 in 0.0..450.0f64, dg in 0.0..49.0f64, s1 in 0.0..300.0f64, ds in 0.0..300.0f64) {
            let lo = GuardBand::from_ps(g1).unwrap();
            let hi = GuardBand::from_ps(g1 + dg).unwrap();
            let sigma = s1 * PS;
            prop_assert!(acceptance_fraction(hi, &grid(), sigma) <= acceptance_fraction(lo, &grid(), sigma) + 1e-12);
            if g1 > 0.0 {
                prop_assert!(acceptance_fraction(lo, &grid(), sigma + ds * PS) <= acceptance_fraction(lo, &grid(), sigma) + 1e-12);
            }
        }
    }
}
