//! Two-pulse interference on a 50:50 beam splitter and threshold-detector
//! click statistics.
//!
//! Weak coherent pulses are described by their mean photon number and
//! optical phase. Interfering two such pulses splits the total intensity
//! between a constructive and a destructive output port according to the
//! cosine of their phase difference.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::ThreeBinFrame;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpticsError {
    #[error("mean photon number must be finite and non-negative, got {0}")]
    InvalidMeanPhotons(f64),
    #[error("phase must be finite, got {0}")]
    InvalidPhase(f64),
    #[error("{name} must be a probability in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("mode overlap must lie in [0, 1], got {0}")]
    InvalidOverlap(f64),
}

/// Maps any finite phase onto the canonical range `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Signed phase difference `a - b` folded into `(-π, π]`.
pub fn wrapped_difference(a: f64, b: f64) -> f64 {
    let d = wrap_phase(a - b);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// One time bin of a weak coherent pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentBin {
    mean_photons: f64,
    phase: f64,
}

impl CoherentBin {
    pub fn new(mean_photons: f64, phase: f64) -> Result<Self, OpticsError> {
        if !mean_photons.is_finite() || mean_photons < 0.0 {
            return Err(OpticsError::InvalidMeanPhotons(mean_photons));
        }
        if !phase.is_finite() {
            return Err(OpticsError::InvalidPhase(phase));
        }
        Ok(Self {
            mean_photons,
            phase: wrap_phase(phase),
        })
    }

    pub fn mean_photons(&self) -> f64 {
        self.mean_photons
    }

    /// Phase in `[0, 2π)`.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Same pulse with an extra phase picked up along the way.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            mean_photons: self.mean_photons,
            phase: wrap_phase(self.phase + delta),
        }
    }

    /// Same pulse after a loss element with the given transmittance.
    pub fn attenuated(&self, transmittance: f64) -> Self {
        Self {
            mean_photons: self.mean_photons * transmittance,
            phase: self.phase,
        }
    }
}

/// Mean photon numbers leaving the two beam-splitter outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortIntensities {
    pub constructive: f64,
    pub destructive: f64,
}

impl PortIntensities {
    pub fn total(&self) -> f64 {
        self.constructive + self.destructive
    }
}

/// Ideal interference of two pulses on a 50:50 beam splitter.
pub fn interfere_at_bs(a: CoherentBin, b: CoherentBin) -> PortIntensities {
    interference(a, b, 1.0)
}

/// Interference with partial spatio-temporal mode overlap.
///
/// `overlap` scales the interference term only, so the port intensities
/// still sum to `μ_A + μ_B`. An overlap of 1 reproduces [`interfere_at_bs`];
/// an overlap of 0 splits both pulses evenly regardless of phase.
pub fn interfere_with_overlap(
    a: CoherentBin,
    b: CoherentBin,
    overlap: f64,
) -> Result<PortIntensities, OpticsError> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(OpticsError::InvalidOverlap(overlap));
    }
    Ok(interference(a, b, overlap))
}

fn interference(a: CoherentBin, b: CoherentBin, overlap: f64) -> PortIntensities {
    let sum = a.mean_photons + b.mean_photons;
    let cross = 2.0 * overlap * (a.mean_photons * b.mean_photons).sqrt();
    let cos = wrapped_difference(a.phase, b.phase).cos();
    // clamp away the -1e-17 that rounding leaves at perfect extinction
    PortIntensities {
        constructive: ((sum + cross * cos) / 2.0).max(0.0),
        destructive: ((sum - cross * cos) / 2.0).max(0.0),
    }
}

/// Click probability of a gated threshold detector.
///
/// Poissonian light of mean `mu_at_detector` is detected with efficiency
/// `eta_det`; dark counts fire independently with probability `p_dark`
/// per gate.
pub fn click_probability(
    mu_at_detector: f64,
    eta_det: f64,
    p_dark: f64,
) -> Result<f64, OpticsError> {
    if !mu_at_detector.is_finite() || mu_at_detector < 0.0 {
        return Err(OpticsError::InvalidMeanPhotons(mu_at_detector));
    }
    check_probability("eta_det", eta_det)?;
    check_probability("p_dark", p_dark)?;
    Ok(click_probability_unchecked(mu_at_detector, eta_det, p_dark))
}

#[inline]
pub(crate) fn click_probability_unchecked(mu: f64, eta_det: f64, p_dark: f64) -> f64 {
    // 1 - (1-p)e^{-x} written with exp_m1 so tiny rates keep full precision
    let no_light = (-eta_det * mu).exp();
    (p_dark * no_light - (-eta_det * mu).exp_m1()).clamp(0.0, 1.0)
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<(), OpticsError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(OpticsError::InvalidProbability { name, value })
    }
}

/// Port intensities for each of the three bins of two interfering frames.
pub fn predict_pattern(frame_a: &ThreeBinFrame, frame_b: &ThreeBinFrame) -> [PortIntensities; 3] {
    let (a, b) = (frame_a.bins(), frame_b.bins());
    [
        interfere_at_bs(a[0], b[0]),
        interfere_at_bs(a[1], b[1]),
        interfere_at_bs(a[2], b[2]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ThreeBinFrame;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn bin(mu: f64, phase: f64) -> CoherentBin {
        CoherentBin::new(mu, phase).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn identical_pulses_exit_constructive_port() {
        let out = interfere_at_bs(bin(0.1, 0.0), bin(0.1, 0.0));
        assert!(close(out.constructive, 0.2));
        assert!(close(out.destructive, 0.0));
    }

    #[test]
    fn pi_shift_exits_destructive_port() {
        let out = interfere_at_bs(bin(0.1, 0.0), bin(0.1, PI));
        assert!(close(out.constructive, 0.0));
        assert!(close(out.destructive, 0.2));
    }

    #[test]
    fn quarter_wave_splits_evenly() {
        let out = interfere_at_bs(bin(0.1, 0.0), bin(0.1, PI / 2.0));
        assert!(close(out.constructive, 0.1));
        assert!(close(out.destructive, 0.1));
    }

    #[test]
    fn rejects_invalid_bins() {
        assert!(CoherentBin::new(-0.1, 0.0).is_err());
        assert!(CoherentBin::new(0.1, f64::NAN).is_err());
        assert!(CoherentBin::new(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn phases_are_stored_canonically() {
        assert!(close(bin(0.1, -PI / 2.0).phase(), 3.0 * PI / 2.0));
        assert!(close(bin(0.1, 5.0 * PI).phase(), PI));
        assert_eq!(wrap_phase(-1e-18), 0.0);
        assert!(close(wrapped_difference(0.1, TAU - 0.1), 0.2));
    }

    #[test]
    fn overlap_of_zero_removes_interference() {
        let out = interfere_with_overlap(bin(0.1, 0.0), bin(0.1, 0.0), 0.0).unwrap();
        assert!(close(out.constructive, out.destructive));
        assert!(interfere_with_overlap(bin(0.1, 0.0), bin(0.1, 0.0), 1.5).is_err());
    }

    #[test]
    fn click_probability_examples() {
        assert_eq!(click_probability(0.0, 0.1, 0.0).unwrap(), 0.0);
        assert!((click_probability(0.0, 0.1, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        // 1 - e^{-0.02}
        let p = click_probability(0.2, 0.1, 0.0).unwrap();
        assert!((p - 0.019_801_326_693_244_7).abs() < 1e-15);
        assert!(click_probability(-0.1, 0.1, 0.0).is_err());
        assert!(click_probability(0.1, 1.1, 0.0).is_err());
        assert!(click_probability(0.1, 0.1, -0.1).is_err());
    }

    /// Independent route: Poisson photon number, Bernoulli(η) per photon,
    /// then an independent dark count.
    #[test]
    fn click_probability_matches_photon_counting_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(mu, eta, dark) in &[(0.2, 0.1, 0.0), (0.5, 0.3, 1e-3), (2.0, 0.1, 0.01)] {
            let poisson = Poisson::new(mu).unwrap();
            let trials = 1_000_000u32;
            let mut clicks = 0u32;
            for _ in 0..trials {
                let n: f64 = poisson.sample(&mut rng);
                let detected = (0..n as u64).any(|_| rng.random::<f64>() < eta);
                if detected || rng.random::<f64>() < dark {
                    clicks += 1;
                }
            }
            let p = click_probability(mu, eta, dark).unwrap();
            let freq = clicks as f64 / trials as f64;
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            assert!(
                (freq - p).abs() < 4.0 * se,
                "mu={mu}: {freq} vs {p} (se {se})"
            );
        }
    }

    #[test]
    fn fig8_patterns() {
        let alice = ThreeBinFrame::from_phases(0.1, [0.0, 0.0, 0.0], 0).unwrap();
        let cases = [
            // Bob π in bin 1 / bin 3 / bin 2
            ([PI, 0.0, 0.0], [false, true, true]),
            ([0.0, 0.0, PI], [true, true, false]),
            ([0.0, PI, 0.0], [true, false, true]),
        ];
        for (bob_phases, constructive) in cases {
            let bob = ThreeBinFrame::from_phases(0.1, bob_phases, 0).unwrap();
            let pattern = predict_pattern(&alice, &bob);
            for (ports, expect_c) in pattern.iter().zip(constructive) {
                let (bright, dark) = if expect_c {
                    (ports.constructive, ports.destructive)
                } else {
                    (ports.destructive, ports.constructive)
                };
                assert!(
                    close(bright, 0.2) && close(dark, 0.0),
                    "{bob_phases:?}: {pattern:?}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn energy_is_conserved(mu_a in 0.0..10.0f64, mu_b in 0.0..10.0f64,
                               pa in -20.0..20.0f64, pb in -20.0..20.0f64,
                               overlap in 0.0..=1.0f64) {
            let out = interfere_with_overlap(bin(mu_a, pa), bin(mu_b, pb), overlap).unwrap();
            let total = mu_a + mu_b;
            prop_assert!((out.total() - total).abs() <= 1e-12 * total.max(1e-300) + 1e-300);
        }

        #[test]
        fn phase_difference_sign_is_irrelevant(mu_a in 0.0..5.0f64, mu_b in 0.0..5.0f64, d in -7.0..7.0f64) {
            let plus = interfere_at_bs(bin(mu_a, d), bin(mu_b, 0.0));
            let minus = interfere_at_bs(bin(mu_a, -d), bin(mu_b, 0.0));
            prop_assert!((plus.constructive - minus.constructive).abs() < 1e-12);
            prop_assert!((plus.destructive - minus.destructive).abs() < 1e-12);
        }

        #[test]
        fn click_probability_is_monotone(mu in 0.0..5.0f64, eta in 0.0..1.0f64, dark in 0.0..1.0f64,
                                         bump in 0.0..1.0f64) {
            let p = click_probability(mu, eta, dark).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(click_probability(mu + bump, eta, dark).unwrap() >= p);
            prop_assert!(click_probability(mu, (eta + bump).min(1.0), dark).unwrap() >= p);
            prop_assert!(click_probability(mu, eta, (dark + bump).min(1.0)).unwrap() >= p);
        }
    }
}
