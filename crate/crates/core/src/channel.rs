//! Fiber loss, Sagnac-residual phase drift and Rayleigh backscattering.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Group index of standard single-mode fiber around 1550 nm.
pub const DEFAULT_GROUP_INDEX: f64 = 1.468;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("fiber length must be finite and non-negative, got {0} km")]
    InvalidLength(f64),
    #[error("attenuation must be finite and non-negative, got {0} dB/km")]
    InvalidAttenuation(f64),
    #[error("drift strength must be finite and non-negative, got {0}")]
    InvalidDriftStd(f64),
    #[error("sample period must be positive, got {0} s")]
    InvalidSamplePeriod(f64),
    #[error("disturbance {index}: start {start} s must precede end {end} s")]
    EmptyDisturbance { index: usize, start: f64, end: f64 },
    #[error("disturbance {index} overlaps or precedes the previous interval")]
    UnorderedDisturbance { index: usize },
    #[error("disturbance {index}: injected phase must be finite")]
    InvalidDisturbancePhase { index: usize },
    #[error("backscatter parameter {name} out of range: {value}")]
    InvalidBackscatter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    length_km: f64,
    alpha_db_per_km: f64,
}

impl FiberSpec {
    pub fn new(length_km: f64, alpha_db_per_km: f64) -> Result<Self, ChannelError> {
        if !length_km.is_finite() || length_km < 0.0 {
            return Err(ChannelError::InvalidLength(length_km));
        }
        if !alpha_db_per_km.is_finite() || alpha_db_per_km < 0.0 {
            return Err(ChannelError::InvalidAttenuation(alpha_db_per_km));
        }
        Ok(Self {
            length_km,
            alpha_db_per_km,
        })
    }

    pub fn length_km(&self) -> f64 {
        self.length_km
    }

    pub fn alpha_db_per_km(&self) -> f64 {
        self.alpha_db_per_km
    }

    pub fn loss_db(&self) -> f64 {
        self.alpha_db_per_km * self.length_km
    }

    /// One-way propagation delay.
    pub fn delay_s(&self, group_index: f64) -> f64 {
        self.length_km * 1e3 * group_index / SPEED_OF_LIGHT
    }

    /// Two spans of the same fiber type laid end to end.
    pub fn concatenated(&self, other: &FiberSpec) -> FiberSpec {
        FiberSpec {
            length_km: self.length_km + other.length_km,
            alpha_db_per_km: if self.length_km + other.length_km > 0.0 {
                self.loss_db_total_with(other) / (self.length_km + other.length_km)
            } else {
                self.alpha_db_per_km
            },
        }
    }

    fn loss_db_total_with(&self, other: &FiberSpec) -> f64 {
        self.loss_db() + other.loss_db()
    }
}

/// Power transmittance `10^(-α·l/10)`.
pub fn transmittance(f: &FiberSpec) -> f64 {
    db_to_transmittance(f.loss_db())
}

pub fn db_to_transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Time for light to go Charlie → Alice → Charlie → Bob → Charlie.
///
/// The two counter-propagating pulses sample the fiber phase this far apart
/// in time, so it sets the bandwidth of the Sagnac self-compensation.
pub fn loop_delay_s(alice: &FiberSpec, bob: &FiberSpec, group_index: f64) -> f64 {
    2.0 * (alice.delay_s(group_index) + bob.delay_s(group_index))
}

/// A deterministic phase kick applied to one arm over `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub start_s: f64,
    pub end_s: f64,
    pub phase_rad: f64,
}

/// Time-ordered, non-overlapping disturbance intervals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSchedule {
    intervals: Vec<Disturbance>,
}

impl DisturbanceSchedule {
    pub fn new(intervals: Vec<Disturbance>) -> Result<Self, ChannelError> {
        for (index, d) in intervals.iter().enumerate() {
            if !(d.start_s.is_finite() && d.end_s.is_finite() && d.start_s < d.end_s) {
                return Err(ChannelError::EmptyDisturbance {
                    index,
                    start: d.start_s,
                    end: d.end_s,
                });
            }
            if !d.phase_rad.is_finite() {
                return Err(ChannelError::InvalidDisturbancePhase { index });
            }
            if index > 0 && d.start_s < intervals[index - 1].end_s {
                return Err(ChannelError::UnorderedDisturbance { index });
            }
        }
        Ok(Self { intervals })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[Disturbance] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Injected phase at time `t`, zero outside every interval.
    pub fn phase_at(&self, t: f64) -> f64 {
        let idx = self.intervals.partition_point(|d| d.end_s <= t);
        match self.intervals.get(idx) {
            Some(d) if d.start_s <= t => d.phase_rad,
            _ => 0.0,
        }
    }
}

/// Streaming Wiener-process phase with strength `std_rad_per_sqrt_s`.
#[derive(Debug, Clone)]
pub struct WienerPhase {
    std_rad_per_sqrt_s: f64,
    current_phase: f64,
}

impl WienerPhase {
    pub fn new(std_rad_per_sqrt_s: f64, initial_phase: f64) -> Self {
        Self {
            std_rad_per_sqrt_s,
            current_phase: initial_phase,
        }
    }

    pub fn current_phase(&self) -> f64 {
        self.current_phase
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        if self.std_rad_per_sqrt_s > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            self.current_phase += self.std_rad_per_sqrt_s * dt.sqrt() * z;
        }
        self.current_phase
    }
}

/// Fiber phase path sampled on a uniform grid plus a disturbance schedule.
///
/// Between grid points the drift is linearly interpolated; outside the
/// sampled range it is held at the nearest endpoint.
#[derive(Debug, Clone)]
pub struct PhaseDriftProcess {
    drift_std_rad_per_sqrt_s: f64,
    sample_period_s: f64,
    origin_s: f64,
    path: Vec<f64>,
    schedule: DisturbanceSchedule,
}

impl PhaseDriftProcess {
    /// Samples `samples` points of the drift path starting at `origin_s`.
    pub fn sample<R: Rng + ?Sized>(
        drift_std_rad_per_sqrt_s: f64,
        sample_period_s: f64,
        origin_s: f64,
        samples: usize,
        schedule: DisturbanceSchedule,
        rng: &mut R,
    ) -> Result<Self, ChannelError> {
        if !drift_std_rad_per_sqrt_s.is_finite() || drift_std_rad_per_sqrt_s < 0.0 {
            return Err(ChannelError::InvalidDriftStd(drift_std_rad_per_sqrt_s));
        }
        if !(sample_period_s.is_finite() && sample_period_s > 0.0) {
            return Err(ChannelError::InvalidSamplePeriod(sample_period_s));
        }
        let mut walker = WienerPhase::new(drift_std_rad_per_sqrt_s, 0.0);
        let mut path = Vec::with_capacity(samples.max(1));
        path.push(0.0);
        for _ in 1..samples.max(1) {
            path.push(walker.advance(sample_period_s, rng));
        }
        Ok(Self {
            drift_std_rad_per_sqrt_s,
            sample_period_s,
            origin_s,
            path,
            schedule,
        })
    }

    /// A process that never drifts.
    pub fn quiet(schedule: DisturbanceSchedule) -> Self {
        Self {
            drift_std_rad_per_sqrt_s: 0.0,
            sample_period_s: 1.0,
            origin_s: 0.0,
            path: vec![0.0],
            schedule,
        }
    }

    pub fn drift_std(&self) -> f64 {
        self.drift_std_rad_per_sqrt_s
    }

    pub fn schedule(&self) -> &DisturbanceSchedule {
        &self.schedule
    }

    /// Last sampled drift value.
    pub fn current_phase(&self) -> f64 {
        *self.path.last().unwrap_or(&0.0)
    }

    pub fn drift_at(&self, t: f64) -> f64 {
        let x = (t - self.origin_s) / self.sample_period_s;
        let last = self.path.len() - 1;
        if x <= 0.0 {
            return self.path[0];
        }
        let i = x.floor() as usize;
        if i >= last {
            return self.path[last];
        }
        let frac = x - i as f64;
        self.path[i] + frac * (self.path[i + 1] - self.path[i])
    }

    pub fn disturbance_at(&self, t: f64) -> f64 {
        self.schedule.phase_at(t)
    }
}

/// Phase difference left over between the two counter-propagating pulses.
///
/// The slow fiber drift enters both pulses `loop_delay_s` apart, so only
/// its change over that interval survives. Scheduled disturbances model
/// fast non-reciprocal kicks on one arm and are not compensated.
pub fn sagnac_residual_phase(p: &PhaseDriftProcess, loop_delay_s: f64, t: f64) -> f64 {
    let drift = if loop_delay_s > 0.0 && p.drift_std_rad_per_sqrt_s > 0.0 {
        p.drift_at(t) - p.drift_at(t - loop_delay_s)
    } else {
        0.0
    };
    drift + p.disturbance_at(t)
}

/// Inputs of the backscattered-light detection model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackscatterParams {
    /// Pulse repetition rate `N`, Hz.
    pub repetition_rate_hz: f64,
    /// Mean photon number `μ̄` of each classical pulse sent to a user.
    pub mean_photons_out: f64,
    /// Backscattering coefficient `β`.
    pub beta: f64,
    /// Detector gate duration `t_ON`, s.
    pub gate_on_s: f64,
    /// Detector efficiency.
    pub eta_det: f64,
}

impl BackscatterParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = [
            ("repetition_rate_hz", self.repetition_rate_hz),
            ("mean_photons_out", self.mean_photons_out),
            ("gate_on_s", self.gate_on_s),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ChannelError::InvalidBackscatter { name, value });
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(ChannelError::InvalidBackscatter {
                name: "beta",
                value: self.beta,
            });
        }
        if !(0.0..=1.0).contains(&self.eta_det) {
            return Err(ChannelError::InvalidBackscatter {
                name: "eta_det",
                value: self.eta_det,
            });
        }
        Ok(())
    }
}

/// Per-gate probability of a detection caused by Rayleigh backscattering
/// of the outbound classical pulses, `2(1-η) N μ̄ β t_ON η_det`.
///
/// The factor two covers the two outbound paths. Values above one mean the
/// linear model has broken down; they are clamped and logged.
pub fn backscatter_click_probability(bp: &BackscatterParams, f: &FiberSpec) -> f64 {
    let eta = transmittance(f);
    let p = 2.0
        * (1.0 - eta)
        * bp.repetition_rate_hz
        * bp.mean_photons_out
        * bp.beta
        * bp.gate_on_s
        * bp.eta_det;
    if p > 1.0 {
        tracing::warn!(
            probability = p,
            "backscatter click probability exceeds 1, clamping"
        );
    }
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn reference_params() -> BackscatterParams {
        BackscatterParams {
            repetition_rate_hz: 31.25e6,
            mean_photons_out: 40.0,
            beta: 1e-4,
            gate_on_s: 3e-9,
            eta_det: 0.1,
        }
    }

    #[test]
    fn transmittance_examples() {
        assert_eq!(transmittance(&FiberSpec::new(0.0, 0.2).unwrap()), 1.0);
        assert!((transmittance(&FiberSpec::new(50.0, 0.2).unwrap()) - 0.1).abs() < 1e-15);
        let t10 = transmittance(&FiberSpec::new(10.0, 0.2).unwrap());
        assert!((t10 - 0.630_957_344_480_193_2).abs() < 1e-15);
    }

    #[test]
    fn fiber_rejects_bad_values() {
        assert!(FiberSpec::new(-1.0, 0.2).is_err());
        assert!(FiberSpec::new(1.0, -0.2).is_err());
        assert!(FiberSpec::new(f64::NAN, 0.2).is_err());
    }

    #[test]
    fn backscatter_examples() {
        let bp = reference_params();
        assert_eq!(
            backscatter_click_probability(&bp, &FiberSpec::new(0.0, 0.2).unwrap()),
            0.0
        );
        let p = backscatter_click_probability(&bp, &FiberSpec::new(50.0, 0.2).unwrap());
        assert!((p - 6.75e-5).abs() <= 1e-12 * 6.75e-5, "{p}");
        let no_beta = BackscatterParams { beta: 0.0, ..bp };
        assert_eq!(
            backscatter_click_probability(&no_beta, &FiberSpec::new(50.0, 0.2).unwrap()),
            0.0
        );
    }

    #[test]
    fn backscatter_is_clamped() {
        let bp = BackscatterParams {
            beta: 10.0,
            ..reference_params()
        };
        assert_eq!(
            backscatter_click_probability(&bp, &FiberSpec::new(50.0, 0.2).unwrap()),
            1.0
        );
    }

    #[test]
    fn backscatter_validation() {
        assert!(reference_params().validate().is_ok());
        assert!(BackscatterParams {
            beta: -1.0,
            ..reference_params()
        }
        .validate()
        .is_err());
        assert!(BackscatterParams {
            gate_on_s: 0.0,
            ..reference_params()
        }
        .validate()
        .is_err());
        assert!(BackscatterParams {
            eta_det: 2.0,
            ..reference_params()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn residual_is_zero_without_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p =
            PhaseDriftProcess::sample(0.0, 1e-6, 0.0, 1000, DisturbanceSchedule::none(), &mut rng)
                .unwrap();
        for t in [1e-5, 3e-4, 9e-4] {
            assert_eq!(sagnac_residual_phase(&p, 2e-4, t), 0.0);
        }
    }

    #[test]
    fn residual_is_zero_for_overlapped_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p =
            PhaseDriftProcess::sample(50.0, 1e-6, 0.0, 1000, DisturbanceSchedule::none(), &mut rng)
                .unwrap();
        assert!(p.drift_at(5e-4) != 0.0);
        assert_eq!(sagnac_residual_phase(&p, 0.0, 5e-4), 0.0);
    }

    #[test]
    fn disturbance_survives_compensation() {
        let schedule = DisturbanceSchedule::new(vec![Disturbance {
            start_s: 1e-3,
            end_s: 2e-3,
            phase_rad: PI,
        }])
        .unwrap();
        let p = PhaseDriftProcess::quiet(schedule);
        // active at t, not at t - delay
        assert_eq!(sagnac_residual_phase(&p, 5e-4, 1.2e-3), PI);
        assert_eq!(sagnac_residual_phase(&p, 5e-4, 0.9e-3), 0.0);
        assert_eq!(sagnac_residual_phase(&p, 5e-4, 2e-3), 0.0);
    }

    #[test]
    fn schedule_validation() {
        let d = |s, e| Disturbance {
            start_s: s,
            end_s: e,
            phase_rad: PI,
        };
        assert!(DisturbanceSchedule::new(vec![d(0.0, 1.0), d(1.0, 2.0)]).is_ok());
        assert!(DisturbanceSchedule::new(vec![d(0.0, 1.0), d(0.5, 2.0)]).is_err());
        assert!(DisturbanceSchedule::new(vec![d(1.0, 1.0)]).is_err());
        assert!(DisturbanceSchedule::new(vec![d(2.0, 3.0), d(0.0, 1.0)]).is_err());
    }

    #[test]
    fn drift_path_replays_bit_for_bit() {
        let sample = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            PhaseDriftProcess::sample(
                10.0,
                32e-9,
                0.0,
                10_000,
                DisturbanceSchedule::none(),
                &mut rng,
            )
            .unwrap()
        };
        let (a, b) = (sample(5), sample(5));
        assert_eq!(a.path, b.path);
        assert_ne!(a.path, sample(6).path);
    }

    /// Wiener property: residuals have zero mean and variance D²·τ.
    #[test]
    fn residual_statistics_follow_wiener_law() {
        let dt = 1e-6;
        let strength = 20.0;
        for lag in [10usize, 40] {
            let delay = lag as f64 * dt;
            // independent paths so samples are i.i.d.
            let n = 20_000;
            let mut rng = ChaCha8Rng::seed_from_u64(lag as u64);
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let p = PhaseDriftProcess::sample(
                    strength,
                    dt,
                    0.0,
                    lag + 1,
                    DisturbanceSchedule::none(),
                    &mut rng,
                )
                .unwrap();
                values.push(sagnac_residual_phase(&p, delay, lag as f64 * dt));
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = strength * strength * delay;
            assert!(
                mean.abs() < 4.0 * (expected / n as f64).sqrt(),
                "mean {mean}"
            );
            // Var of the sample variance of a Gaussian is 2σ⁴/(n-1)
            let se = expected * (2.0 / (n - 1) as f64).sqrt();
            assert!(
                (var - expected).abs() < 4.0 * se,
                "lag {lag}: {var} vs {expected}"
            );
        }
    }

    proptest! {
        #[test]
        fn transmittance_is_multiplicative(l1 in 0.0..200.0f64, l2 in 0.0..200.0f64, alpha in 0.0..1.0f64) {
            let a = FiberSpec::new(l1, alpha).unwrap();
            let b = FiberSpec::new(l2, alpha).unwrap();
            let joined = transmittance(&a.concatenated(&b));
            let product = transmittance(&a) * transmittance(&b);
            prop_assert!((joined - product).abs() <= 1e-12 * product.max(1e-300));
        }

        #[test]
        fn transmittance_decreases_with_length(l in 0.0..200.0f64, dl in 1e-3..50.0f64, alpha in 1e-3..1.0f64) {
            let near = transmittance(&FiberSpec::new(l, alpha).unwrap());
            let far = transmittance(&FiberSpec::new(l + dl, alpha).unwrap());
            prop_assert!(far < near);
        }

        #[test]
        fn backscatter_grows_with_every_factor(l in 0.1..100.0f64, scale in 1.01..3.0f64) {
            let base = reference_params();
            let fiber = FiberSpec::new(l, 0.2).unwrap();
            let p = backscatter_click_probability(&base, &fiber);
            prop_assert!(backscatter_click_probability(&base, &FiberSpec::new(l * scale, 0.2).unwrap()) > p);
            let scaled = [
                BackscatterParams { beta: base.beta * scale, ..base },
                BackscatterParams { mean_photons_out: base.mean_photons_out * scale, ..base },
                BackscatterParams { gate_on_s: base.gate_on_s * scale, ..base },
                BackscatterParams { eta_det: (base.eta_det * scale).min(1.0), ..base },
            ];
            for bp in scaled {
                prop_assert!(backscatter_click_probability(&bp, &fiber) > p);
            }
        }
    }
}
