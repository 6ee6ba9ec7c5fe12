//! Physical system model: devices, channel gains, and the closed-form
//! energy, rate and latency expressions of one training round.
//!
//! All quantities are SI and linear-scale. Decibel settings are converted
//! once with [`db_to_linear`] / [`dbm_per_hz_to_watts`] when a configuration
//! is built.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{stream, StreamDomain};
use crate::scalar::Scalar;

/// Converts a power ratio in dB to linear scale.
pub fn db_to_linear<T: Scalar>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

/// Converts a noise density in dBm/Hz to W/Hz.
pub fn dbm_per_hz_to_watts<T: Scalar>(dbm: T) -> T {
    db_to_linear(dbm) * T::lit(1e-3)
}

/// Static parameters of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile<T> {
    pub id: usize,
    /// Number of local training samples.
    pub data_size: usize,
    /// CPU cycles needed to process one sample once.
    pub cycles_per_sample: T,
    /// Maximum CPU frequency, Hz.
    pub f_max: T,
    /// Maximum transmit power, W.
    pub p_max: T,
    /// Energy budget over the whole training horizon, J.
    pub energy_budget: T,
    /// Distance to the server, m.
    pub distance: T,
    /// Effective switched capacitance, J·s²/cycle³.
    pub kappa: T,
}

impl<T: Scalar> DeviceProfile<T> {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cycles_per_sample", self.cycles_per_sample),
            ("f_max", self.f_max),
            ("p_max", self.p_max),
            ("energy_budget", self.energy_budget),
            ("distance", self.distance),
            ("kappa", self.kappa),
        ];
        if self.data_size == 0 {
            return Err(Error::Config(format!("device {}: data_size must be positive", self.id)));
        }
        for (name, v) in fields {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "device {}: {name} must be finite and positive, got {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn data(&self) -> T {
        T::from_count(self.data_size)
    }
}

/// Checks that ids are unique and every profile is valid.
pub fn validate_profiles<T: Scalar>(profiles: &[DeviceProfile<T>]) -> Result<()> {
    let mut ids: Vec<usize> = profiles.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("device ids must be unique".into()));
    }
    profiles.iter().try_for_each(DeviceProfile::validate)
}

/// Network-wide constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig<T> {
    /// Total uplink bandwidth, Hz.
    pub bandwidth: T,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: T,
    /// Per-round deadline, s.
    pub t_max: T,
    /// Local iterations per round.
    pub local_iters: usize,
    /// Uplink payload (shared parameters), bits.
    pub model_bits: T,
    /// Training horizon in rounds.
    pub rounds: usize,
    /// Path-loss constant at the reference distance (linear).
    pub path_loss_const: T,
    pub path_loss_exp: T,
    /// Reference distance, m.
    pub ref_distance: T,
}

impl<T: Scalar> Default for SystemConfig<T> {
    /// 10 MHz, −174 dBm/Hz, 2 s deadline, τ = 5, −30 dB at 1 m with exponent 2,
    /// payload of the 784-512-256 extractor at 16 bits per parameter.
    fn default() -> Self {
        Self {
            bandwidth: T::lit(10e6),
            noise_psd: dbm_per_hz_to_watts(T::lit(-174.0)),
            t_max: T::lit(2.0),
            local_iters: 5,
            model_bits: T::lit(533_504.0 * 16.0),
            rounds: 40,
            path_loss_const: db_to_linear(T::lit(-30.0)),
            path_loss_exp: T::lit(2.0),
            ref_distance: T::one(),
        }
    }
}

impl<T: Scalar> SystemConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth", self.bandwidth),
            ("noise_psd", self.noise_psd),
            ("t_max", self.t_max),
            ("model_bits", self.model_bits),
            ("path_loss_const", self.path_loss_const),
            ("ref_distance", self.ref_distance),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("system.{name} must be finite and positive, got {v}")));
            }
        }
        if self.local_iters == 0 {
            return Err(Error::Config("system.local_iters must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("system.rounds must be at least 1".into()));
        }
        if !(self.path_loss_exp >= T::zero()) {
            return Err(Error::Config("system.path_loss_exp must be non-negative".into()));
        }
        Ok(())
    }

    pub fn tau(&self) -> T {
        T::from_count(self.local_iters)
    }
}

/// Channel power gains of every device for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<T> {
    pub round: usize,
    /// Indexed like the profile slice it was drawn for.
    pub gains: Vec<T>,
}

impl<T: Scalar> ChannelRealization<T> {
    /// Draws one gain per device from that device's own `(seed, id, round)`
    /// stream.
    pub fn sample(profiles: &[DeviceProfile<T>], cfg: &SystemConfig<T>, seed: u64, round: usize) -> Self {
        let gains = profiles
            .iter()
            .map(|p| {
                let mut rng = stream(seed, StreamDomain::Channel, p.id as u64, round as u64);
                sample_channel(p, cfg, &mut rng)
            })
            .collect();
        Self { round, gains }
    }
}

/// Large-scale gain times a given small-scale fading power.
pub fn channel_gain<T: Scalar>(profile: &DeviceProfile<T>, cfg: &SystemConfig<T>, fading: T) -> T {
    cfg.path_loss_const * fading * (cfg.ref_distance / profile.distance).powf(cfg.path_loss_exp)
}

/// Rayleigh block fading: unit-mean exponential power on top of path loss.
pub fn sample_channel<T: Scalar, R: Rng + ?Sized>(profile: &DeviceProfile<T>, cfg: &SystemConfig<T>, rng: &mut R) -> T {
    let mut fading: f64 = Exp1.sample(rng);
    // Exp1 can return exactly zero with vanishing probability; gains must stay positive.
    if fading <= 0.0 {
        fading = f64::MIN_POSITIVE;
    }
    channel_gain(profile, cfg, T::lit(fading))
}

/// Cycles needed for one round of local training.
#[inline]
pub fn round_cycles<T: Scalar>(profile: &DeviceProfile<T>, tau: usize) -> T {
    T::from_count(tau) * profile.data() * profile.cycles_per_sample
}

/// Computation energy when the τ local iterations take exactly `t_comp` seconds.
pub fn local_energy<T: Scalar>(profile: &DeviceProfile<T>, tau: usize, t_comp: T) -> Result<T> {
    if !(t_comp > T::zero()) {
        return Err(domain(format!("computation time must be positive, got {t_comp}")));
    }
    let cycles = round_cycles(profile, tau);
    Ok(profile.kappa * cycles * cycles * cycles / (t_comp * t_comp))
}

/// `dE^L/dT^L`, always negative.
pub fn local_energy_slope<T: Scalar>(profile: &DeviceProfile<T>, tau: usize, t_comp: T) -> T {
    let cycles = round_cycles(profile, tau);
    -T::lit(2.0) * profile.kappa * cycles * cycles * cycles / (t_comp * t_comp * t_comp)
}

/// Shortest computation time allowed by the CPU frequency cap.
pub fn min_comp_time<T: Scalar>(profile: &DeviceProfile<T>, tau: usize) -> T {
    round_cycles(profile, tau) / profile.f_max
}

fn check_fraction<T: Scalar>(theta: T) -> Result<()> {
    if theta > T::zero() && theta <= T::one() {
        Ok(())
    } else {
        Err(domain(format!("bandwidth fraction must lie in (0, 1], got {theta}")))
    }
}

/// Shannon rate in bit/s on a `theta` share of the band.
pub fn uplink_rate<T: Scalar>(theta: T, power: T, gain: T, cfg: &SystemConfig<T>) -> Result<T> {
    check_fraction(theta)?;
    if !(power >= T::zero()) {
        return Err(domain(format!("transmit power must be non-negative, got {power}")));
    }
    let band = theta * cfg.bandwidth;
    let snr = power * gain / (band * cfg.noise_psd);
    Ok(band * snr.ln_1p() / T::LN_2())
}

/// Rate at full transmit power.
pub fn max_rate<T: Scalar>(theta: T, gain: T, profile: &DeviceProfile<T>, cfg: &SystemConfig<T>) -> Result<T> {
    uplink_rate(theta, profile.p_max, gain, cfg)
}

/// Shortest upload time at full power.
pub fn min_comm_time<T: Scalar>(theta: T, gain: T, profile: &DeviceProfile<T>, cfg: &SystemConfig<T>) -> Result<T> {
    Ok(cfg.model_bits / max_rate(theta, gain, profile, cfg)?)
}

/// Transmit power and energy when the payload is sent in exactly `t_comm`
/// seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UplinkCost<T> {
    pub power: T,
    pub energy: T,
}

/// Spectral efficiency `Q/(θBT^U)` required to finish the upload on time.
#[inline]
pub fn required_efficiency<T: Scalar>(theta: T, t_comm: T, cfg: &SystemConfig<T>) -> T {
    cfg.model_bits / (theta * cfg.bandwidth * t_comm)
}

/// Upload energy at the rate that exactly meets `t_comm`. Overflowing
/// exponents yield infinite power and energy.
pub fn uplink_energy<T: Scalar>(theta: T, t_comm: T, gain: T, cfg: &SystemConfig<T>) -> Result<UplinkCost<T>> {
    check_fraction(theta)?;
    if !(t_comm > T::zero()) {
        return Err(domain(format!("communication time must be positive, got {t_comm}")));
    }
    let bits_per_hz = required_efficiency(theta, t_comm, cfg);
    let power = theta * cfg.bandwidth * cfg.noise_psd / gain * (bits_per_hz * T::LN_2()).exp_m1();
    Ok(UplinkCost { power, energy: power * t_comm })
}

/// `dE^U/dT^U`, always non-positive.
pub fn uplink_energy_slope<T: Scalar>(theta: T, t_comm: T, gain: T, cfg: &SystemConfig<T>) -> T {
    let x = required_efficiency(theta, t_comm, cfg) * T::LN_2();
    let scale = theta * cfg.bandwidth * cfg.noise_psd / gain;
    // d/ds [s (e^{b/s} - 1)] = e^{b/s} - 1 - (b/s) e^{b/s}
    scale * (x.exp_m1() - x * x.exp())
}

/// `d²E^U/d(T^U)²`, always positive.
pub fn uplink_energy_curvature<T: Scalar>(theta: T, t_comm: T, gain: T, cfg: &SystemConfig<T>) -> T {
    let x = required_efficiency(theta, t_comm, cfg) * T::LN_2();
    theta * cfg.bandwidth * cfg.noise_psd / gain * x * x * x.exp() / t_comm
}

/// `d²E^L/dT²`.
pub fn local_energy_curvature<T: Scalar>(profile: &DeviceProfile<T>, tau: usize, t_comp: T) -> T {
    T::lit(-3.0) * local_energy_slope(profile, tau, t_comp) / t_comp
}
