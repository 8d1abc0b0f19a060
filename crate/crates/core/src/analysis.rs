//! Visibility, QBER and key-rate bookkeeping, plus the closed-form link
//! model shared by the analytic key-rate curve and the Monte Carlo driver.

use serde::{Deserialize, Serialize};

use crate::channel::{self, BackscatterParams, FiberSpec};
use crate::optics::{click_probability_unchecked, interfere_with_overlap, CoherentBin};
use crate::protocol::{EncodingBits, Port};
use crate::timing::{bin_transfer_probability, GuardBand, TimeBin, TimeBinGrid};

/// Interference contrast `(P_c - P_e)/(P_c + P_e)`; `None` without counts.
pub fn visibility(correct_counts: u64, error_counts: u64) -> Option<f64> {
    let total = correct_counts + error_counts;
    (total > 0).then(|| (correct_counts as f64 - error_counts as f64) / total as f64)
}

/// Visibility of the 0-0-π test pattern from the counts in the three bins.
pub fn pattern_visibility(n1: u64, n2: u64, n3: u64) -> Option<f64> {
    let total = n1 + n2 + n3;
    (total > 0).then(|| ((n1 + n2) as f64 - n3 as f64) / total as f64)
}

/// Shannon entropy of a biased coin, in bits. Arguments are clamped to [0, 1].
pub fn binary_entropy(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x == 0.0 || x == 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// How the phase-error rate is bounded from the bit-error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "value", rename_all = "kebab-case")]
pub enum EpPolicy {
    EqualToEb,
    Scaled(f64),
    Fixed(f64),
}

impl EpPolicy {
    /// Phase-error rate for a given bit-error rate, clamped to [0, 0.5].
    pub fn phase_error(&self, e_b: f64) -> f64 {
        let e_p = match *self {
            EpPolicy::EqualToEb => e_b,
            EpPolicy::Scaled(f) => f * e_b,
            EpPolicy::Fixed(v) => v,
        };
        e_p.clamp(0.0, 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateParams {
    pub ep_policy: EpPolicy,
    /// Number of concluding-event classes; `R_sift = sift_factor · r`.
    pub sift_factor: f64,
}

impl Default for KeyRateParams {
    fn default() -> Self {
        Self {
            ep_policy: EpPolicy::EqualToEb,
            sift_factor: 4.0,
        }
    }
}

impl KeyRateParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.sift_factor.is_finite() && self.sift_factor > 0.0) {
            errors.push(format!(
                "sift_factor must be positive, got {}",
                self.sift_factor
            ));
        }
        match self.ep_policy {
            EpPolicy::Scaled(f) if !(f.is_finite() && f >= 0.0) => {
                errors.push(format!("scaled e_p factor must be nonnegative, got {f}"));
            }
            EpPolicy::Fixed(v) if !(0.0..=0.5).contains(&v) => {
                errors.push(format!("fixed e_p must lie in [0, 0.5], got {v}"));
            }
            _ => {}
        }
        errors
    }
}

/// `R = R_sift [1 - h(e_b) - h(e_p)]`, clamped at zero.
pub fn key_rate(r_sift: f64, e_b: f64, e_p: f64) -> f64 {
    (r_sift * (1.0 - binary_entropy(e_b) - binary_entropy(e_p))).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRate {
    pub r_sift: f64,
    pub e_b: f64,
    pub e_p: f64,
    /// Secure bits per pulse.
    pub r: f64,
}

/// Secure key rate of a run; `None` when nothing was sifted.
pub fn secure_key_rate(stats: &RunStats, params: &KeyRateParams) -> Option<KeyRate> {
    if stats.sifted == 0 || stats.frames == 0 {
        return None;
    }
    let r = stats.sifted as f64 / (4.0 * stats.frames as f64);
    Some(rate_from(
        params.sift_factor * r,
        stats.errors as f64 / stats.sifted as f64,
        params,
    ))
}

fn rate_from(r_sift: f64, e_b: f64, params: &KeyRateParams) -> KeyRate {
    let e_p = params.ep_policy.phase_error(e_b);
    KeyRate {
        r_sift,
        e_b,
        e_p,
        r: key_rate(r_sift, e_b, e_p),
    }
}

/// Aggregate counts of a run or part of one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub frames: u64,
    /// Accepted clicks per (bin, port), every frame, before sifting.
    pub clicks: [[u64; 2]; 3],
    /// Conclusive frames, one sifted bit each.
    pub sifted: u64,
    pub errors: u64,
    pub inconclusive: u64,
    pub no_click: u64,
}

impl RunStats {
    /// Associative, commutative combination of two disjoint parts.
    pub fn merge(&self, other: &RunStats) -> RunStats {
        let mut clicks = self.clicks;
        for (row, o) in clicks.iter_mut().zip(other.clicks) {
            row[0] += o[0];
            row[1] += o[1];
        }
        RunStats {
            frames: self.frames + other.frames,
            clicks,
            sifted: self.sifted + other.sifted,
            errors: self.errors + other.errors,
            inconclusive: self.inconclusive + other.inconclusive,
            no_click: self.no_click + other.no_click,
        }
    }

    pub fn count(&self, bin: TimeBin, port: Port) -> u64 {
        self.clicks[bin.index()][port.index()]
    }

    pub fn qber(&self) -> Option<f64> {
        (self.sifted > 0).then(|| self.errors as f64 / self.sifted as f64)
    }

    /// Contrast of the unmodulated reference bin.
    pub fn reference_visibility(&self) -> Option<f64> {
        visibility(
            self.count(TimeBin::First, Port::Constructive),
            self.count(TimeBin::First, Port::Destructive),
        )
    }

    /// Pattern visibility from the constructive-port counts of each bin.
    pub fn pattern_visibility(&self) -> Option<f64> {
        let c = |b| self.count(b, Port::Constructive);
        pattern_visibility(c(TimeBin::First), c(TimeBin::Second), c(TimeBin::Third))
    }

    pub fn sifted_rate(&self) -> f64 {
        ratio(self.sifted, self.frames)
    }

    pub fn inconclusive_fraction(&self) -> f64 {
        ratio(self.inconclusive, self.frames)
    }

    pub fn is_consistent(&self) -> bool {
        self.errors <= self.sifted && self.sifted + self.inconclusive + self.no_click == self.frames
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Standard error of the mean of independent batch estimates.
pub fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Threshold-detector parameters shared by both detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub eta_det: f64,
    /// Dark-count probability per gate, per detector.
    pub p_dark: f64,
    pub jitter_std_s: f64,
}

/// Every physical parameter of the link, as used by both the closed-form
/// model and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Mean photons per bin each party would put on Charlie's beam splitter
    /// over a lossless loop.
    pub mu_per_bin: f64,
    pub alice: FiberSpec,
    pub bob: FiberSpec,
    /// Extra loss of the loop outside the fiber spans.
    pub insertion_loss_db: f64,
    pub group_index: f64,
    /// Fraction of the cross term that survives mode mismatch.
    pub mode_overlap: f64,
    pub drift_std_rad_per_sqrt_s: f64,
    pub detector: DetectorParams,
    pub repetition_rate_hz: f64,
    pub mean_photons_out: f64,
    pub beta: f64,
    pub grid: TimeBinGrid,
    pub guard: GuardBand,
    pub key_rate: KeyRateParams,
}

impl LinkModel {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errors.push(msg);
            }
        };
        check(
            self.mu_per_bin.is_finite() && self.mu_per_bin >= 0.0,
            format!("mu_per_bin must be nonnegative, got {}", self.mu_per_bin),
        );
        check(
            self.insertion_loss_db.is_finite() && self.insertion_loss_db >= 0.0,
            format!(
                "insertion_loss_db must be nonnegative, got {}",
                self.insertion_loss_db
            ),
        );
        check(
            self.group_index.is_finite() && self.group_index >= 1.0,
            format!("group_index must be at least 1, got {}", self.group_index),
        );
        check(
            (0.0..=1.0).contains(&self.mode_overlap),
            format!("mode_overlap must lie in [0, 1], got {}", self.mode_overlap),
        );
        check(
            self.drift_std_rad_per_sqrt_s.is_finite() && self.drift_std_rad_per_sqrt_s >= 0.0,
            format!(
                "drift_std_rad_per_sqrt_s must be nonnegative, got {}",
                self.drift_std_rad_per_sqrt_s
            ),
        );
        check(
            (0.0..=1.0).contains(&self.detector.eta_det),
            format!("eta_det must lie in [0, 1], got {}", self.detector.eta_det),
        );
        check(
            (0.0..=1.0).contains(&self.detector.p_dark),
            format!(
                "p_dark_per_gate must lie in [0, 1], got {}",
                self.detector.p_dark
            ),
        );
        check(
            self.detector.jitter_std_s.is_finite() && self.detector.jitter_std_s >= 0.0,
            format!(
                "jitter must be nonnegative, got {} s",
                self.detector.jitter_std_s
            ),
        );
        // eta_det is reported above; don't repeat it through the backscatter check
        let bp = BackscatterParams {
            eta_det: self.detector.eta_det.clamp(0.0, 1.0),
            ..self.backscatter_params()
        };
        if let Err(e) = bp.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = self.grid.check_guard(self.guard) {
            errors.push(e.to_string());
        }
        errors.extend(self.key_rate.validate());
        errors
    }

    pub fn backscatter_params(&self) -> BackscatterParams {
        BackscatterParams {
            repetition_rate_hz: self.repetition_rate_hz,
            mean_photons_out: self.mean_photons_out,
            beta: self.beta,
            gate_on_s: self.grid.pulse_on_s(),
            eta_det: self.detector.eta_det,
        }
    }

    /// Mean photons per bin from each party arriving at the beam splitter.
    ///
    /// In the loop every pulse crosses both spans, so both parties see the
    /// same total loss.
    pub fn arrival_mu(&self) -> f64 {
        self.mu_per_bin
            * channel::transmittance(&self.alice)
            * channel::transmittance(&self.bob)
            * channel::db_to_transmittance(self.insertion_loss_db)
    }

    pub fn loop_delay_s(&self) -> f64 {
        channel::loop_delay_s(&self.alice, &self.bob, self.group_index)
    }

    /// Per-gate backscatter click probability over both spans.
    pub fn backscatter_per_gate(&self) -> f64 {
        channel::backscatter_click_probability(
            &self.backscatter_params(),
            &self.alice.concatenated(&self.bob),
        )
    }

    /// Noise click probability of one detector in one bin.
    ///
    /// The per-gate backscatter probability covers both detectors and is
    /// split evenly; the per-gate noise is then spread evenly over the three
    /// gated bins.
    pub fn noise_per_bin(&self) -> f64 {
        let gate = 1.0 - (1.0 - self.detector.p_dark) * (1.0 - 0.5 * self.backscatter_per_gate());
        // 1 - (1 - gate)^{1/3}
        -((-gate).ln_1p() / 3.0).exp_m1()
    }

    /// Variance of the residual loop phase from drift alone.
    pub fn residual_phase_variance(&self) -> f64 {
        self.drift_std_rad_per_sqrt_s.powi(2) * self.loop_delay_s()
    }

    /// Per-frame quantities that do not depend on the encoding or phase.
    pub fn port_model(&self) -> PortModel {
        PortModel {
            mu: self.arrival_mu(),
            noise: self.noise_per_bin(),
            eta_det: self.detector.eta_det,
            overlap: self.mode_overlap,
        }
    }

    /// `K[i][j]`: probability that a click emitted in bin `i` is accepted
    /// in the window of bin `j`.
    pub fn transfer_matrix(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                bin_transfer_probability(
                    j as i32 - i as i32,
                    self.guard,
                    &self.grid,
                    self.detector.jitter_std_s,
                )
            })
        })
    }
}

/// Click probabilities at Charlie for a validated [`LinkModel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortModel {
    pub mu: f64,
    pub noise: f64,
    pub eta_det: f64,
    pub overlap: f64,
}

impl PortModel {
    /// Click probability per (bin, port) for one frame. Bob's pulse carries
    /// the residual loop phase `psi` on top of his encoding.
    pub fn click_probabilities(
        &self,
        alice: EncodingBits,
        bob: EncodingBits,
        psi: f64,
    ) -> [[f64; 2]; 3] {
        let (pa, pb) = (alice.phases(), bob.phases());
        std::array::from_fn(|k| {
            let a = CoherentBin::new(self.mu, pa[k]).expect("validated intensity");
            let b = CoherentBin::new(self.mu, pb[k] + psi).expect("validated intensity");
            let ports = interfere_with_overlap(a, b, self.overlap).expect("validated overlap");
            [
                click_probability_unchecked(ports.constructive, self.eta_det, self.noise),
                click_probability_unchecked(ports.destructive, self.eta_det, self.noise),
            ]
        })
    }
}

/// Expected outcome of the closed-form model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPoint {
    /// Reference-bin visibility.
    pub visibility: f64,
    /// Expected accepted clicks per (bin, port) per frame.
    pub clicks_per_frame: [[f64; 2]; 3],
    pub p_conclusive: f64,
    pub p_error: f64,
    pub p_inconclusive: f64,
    pub key_rate: KeyRate,
}

impl AnalyticPoint {
    pub fn e_b(&self) -> f64 {
        self.key_rate.e_b
    }

    pub fn r(&self) -> f64 {
        self.key_rate.r
    }
}

/// Points of the trapezoid rule over the residual-phase distribution.
const PHASE_NODES: usize = 241;
const PHASE_SPAN_SIGMAS: f64 = 10.0;

/// Exact expectation of the frame statistics under the link model.
///
/// Averages over the sixteen encodings and a Gaussian residual phase of
/// variance `D²τ`. For each of the six (bin, port) click candidates it uses
/// the jitter/guard transfer kernel, so cross-bin misassignment and the
/// multi-click veto are both accounted for. Scheduled disturbances are not
/// part of the model.
pub fn analytic_skr(model: &LinkModel) -> AnalyticPoint {
    let sigma = model.residual_phase_variance().sqrt();
    let kernel = model.transfer_matrix();
    let (nodes, weights) = phase_quadrature(sigma);
    let ports = model.port_model();

    let mut acc = Expectation::default();
    for (&psi, &w) in nodes.iter().zip(&weights) {
        for combo in 0u8..16 {
            let alice = EncodingBits::from_u8(combo & 3);
            let bob = EncodingBits::from_u8(combo >> 2);
            let q = ports.click_probabilities(alice, bob, psi);
            acc.add_frame(&q, &kernel, alice, bob, w / 16.0);
        }
    }

    let p_conclusive = acc.conclusive;
    let e_b = if p_conclusive > 0.0 {
        acc.error / p_conclusive
    } else {
        0.0
    };
    let params = model.key_rate;
    let r_sift = params.sift_factor * p_conclusive / 4.0;
    AnalyticPoint {
        visibility: visibility_f(acc.clicks[0][0], acc.clicks[0][1]),
        clicks_per_frame: acc.clicks,
        p_conclusive,
        p_error: acc.error,
        p_inconclusive: 1.0 - p_conclusive - acc.no_click,
        key_rate: rate_from(r_sift, e_b, &params),
    }
}

fn visibility_f(c: f64, d: f64) -> f64 {
    if c + d > 0.0 {
        (c - d) / (c + d)
    } else {
        0.0
    }
}

fn phase_quadrature(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    if sigma == 0.0 {
        return (vec![0.0], vec![1.0]);
    }
    let h = 2.0 * PHASE_SPAN_SIGMAS / (PHASE_NODES - 1) as f64;
    let nodes: Vec<f64> = (0..PHASE_NODES)
        .map(|i| -PHASE_SPAN_SIGMAS + i as f64 * h)
        .collect();
    let mut weights: Vec<f64> = nodes.iter().map(|z| (-0.5 * z * z).exp()).collect();
    weights[0] *= 0.5;
    weights[PHASE_NODES - 1] *= 0.5;
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes.into_iter().map(|z| z * sigma).collect(), weights)
}

#[derive(Default)]
struct Expectation {
    clicks: [[f64; 2]; 3],
    conclusive: f64,
    error: f64,
    no_click: f64,
}

impl Expectation {
    #[allow(clippy::needless_range_loop)] // index form mirrors the matrix algebra
    fn add_frame(
        &mut self,
        q: &[[f64; 2]; 3],
        k: &[[f64; 3]; 3],
        alice: EncodingBits,
        bob: EncodingBits,
        weight: f64,
    ) {
        // probability that each candidate lands in a key-bin window
        let mut lambda = [[0.0; 2]; 3];
        let mut p_none = 1.0;
        for i in 0..3 {
            for p in 0..2 {
                lambda[i][p] = q[i][p] * (k[i][1] + k[i][2]);
                p_none *= 1.0 - lambda[i][p];
            }
        }
        for i in 0..3 {
            for p in 0..2 {
                for j in 0..3 {
                    self.clicks[j][p] += weight * q[i][p] * k[i][j];
                }
            }
        }
        self.no_click += weight * p_none;
        for j in 1..3 {
            let bin = TimeBin::from_index(j).expect("key bin");
            let bits_equal = alice.bit_for(bin) == bob.bit_for(bin);
            for p in 0..2 {
                let mut prob = 0.0;
                for i in 0..3 {
                    let others = if lambda[i][p] < 1.0 {
                        p_none / (1.0 - lambda[i][p])
                    } else {
                        others_without(&lambda, i, p)
                    };
                    prob += q[i][p] * k[i][j] * others;
                }
                self.conclusive += weight * prob;
                let announced_equal = p == Port::Constructive.index();
                if announced_equal != bits_equal {
                    self.error += weight * prob;
                }
            }
        }
    }
}

fn others_without(lambda: &[[f64; 2]; 3], skip_i: usize, skip_p: usize) -> f64 {
    let mut prod = 1.0;
    for (i, row) in lambda.iter().enumerate() {
        for (p, l) in row.iter().enumerate() {
            if (i, p) != (skip_i, skip_p) {
                prod *= 1.0 - l;
            }
        }
    }
    prod
}

/// Finds the root of a monotone function on `[lo, hi]` by bisection.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo.signum() == fhi.signum() {
        return None;
    }
    let rising = fhi > flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Mode overlap giving the requested reference visibility for `model`.
pub fn calibrate_mode_overlap(model: &LinkModel, target_visibility: f64) -> Option<f64> {
    bisect(0.0, 1.0, |gamma| {
        analytic_skr(&LinkModel {
            mode_overlap: gamma,
            ..*model
        })
        .visibility
            - target_visibility
    })
}

/// Drift strength giving the requested reference visibility for `model`.
pub fn calibrate_drift_std(model: &LinkModel, target_visibility: f64) -> Option<f64> {
    let tau = model.loop_delay_s();
    if tau <= 0.0 {
        return None;
    }
    // residual phase variance from zero to 20 rad²
    let hi = (20.0 / tau).sqrt();
    bisect(0.0, hi, |d| {
        analytic_skr(&LinkModel {
            drift_std_rad_per_sqrt_s: d,
            ..*model
        })
        .visibility
            - target_visibility
    })
}
