use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sysmodel::{
    local_energy, local_energy_curvature, local_energy_slope, min_comm_time, min_comp_time, required_efficiency,
    uplink_energy, uplink_energy_curvature, uplink_energy_slope, DeviceProfile, SystemConfig,
};

use super::SolverOptions;

/// Energy of one device when it computes for `t_comp` and uploads for the
/// rest of the round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySplit<T> {
    pub t_comm: T,
    pub power: T,
    pub comp: T,
    pub comm: T,
}

impl<T: Scalar> EnergySplit<T> {
    pub fn total(&self) -> T {
        self.comp + self.comm
    }
}

/// Evaluates both energy terms; exponents above `max_exponent` are reported
/// as an infeasible device.
pub fn round_energy<T: Scalar>(
    profile: &DeviceProfile<T>,
    theta: T,
    t_comp: T,
    gain: T,
    cfg: &SystemConfig<T>,
    opts: &SolverOptions<T>,
) -> Result<EnergySplit<T>> {
    let t_comm = cfg.t_max - t_comp;
    if !(t_comm > T::zero()) {
        return Err(Error::InfeasibleDevice { id: profile.id });
    }
    if required_efficiency(theta, t_comm, cfg) * T::LN_2() > opts.max_exponent {
        return Err(Error::InfeasibleDevice { id: profile.id });
    }
    let comp = local_energy(profile, cfg.local_iters, t_comp)?;
    let up = uplink_energy(theta, t_comm, gain, cfg)?;
    Ok(EnergySplit { t_comm, power: up.power, comp, comm: up.energy })
}

/// `(dE^L/dT^L, dE^U/dT^U)` at a computation time; equal at an interior
/// optimum.
pub fn power_balance<T: Scalar>(profile: &DeviceProfile<T>, theta: T, t_comp: T, gain: T, cfg: &SystemConfig<T>) -> (T, T) {
    (
        local_energy_slope(profile, cfg.local_iters, t_comp),
        uplink_energy_slope(theta, cfg.t_max - t_comp, gain, cfg),
    )
}

/// Computation time minimising `E^L(T) + E^U(T_max - T)` over
/// `[τDC/f_max, T_max - Q/r_max(θ)]`.
///
/// The objective is convex, so its derivative is driven to zero by Newton
/// steps kept inside a shrinking sign bracket, and the result is clamped to
/// the window.
pub fn optimal_comp_time<T: Scalar>(
    profile: &DeviceProfile<T>,
    theta: T,
    gain: T,
    cfg: &SystemConfig<T>,
    opts: &SolverOptions<T>,
) -> Result<T> {
    let lo = min_comp_time(profile, cfg.local_iters);
    let hi = cfg.t_max - min_comm_time(theta, gain, profile, cfg)?;
    if !(hi >= lo) {
        // a window that is empty only through rounding collapses to its lower end
        if hi.is_finite() && lo - hi <= T::lit(64.0) * T::epsilon() * cfg.t_max {
            return Ok(lo);
        }
        return Err(Error::InfeasibleDevice { id: profile.id });
    }
    let tau = cfg.local_iters;
    let slope = |t: T| {
        let (dl, du) = power_balance(profile, theta, t, gain, cfg);
        dl - du
    };
    let balance = |t: T| power_balance(profile, theta, t, gain, cfg);
    let curvature = |t: T| {
        local_energy_curvature(profile, tau, t) + uplink_energy_curvature(theta, cfg.t_max - t, gain, cfg)
    };
    if hi == lo || slope(lo) >= T::zero() {
        return Ok(lo);
    }
    if slope(hi) <= T::zero() {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo, hi);
    let mut t = a + (b - a) / T::lit(2.0);
    let resolution = T::lit(4.0) * T::epsilon() * cfg.t_max;
    for _ in 0..opts.time_iters {
        let (dl, du) = balance(t);
        let g = dl - du;
        // the two slopes agree to rounding: no finer stationary point exists
        if g.abs() <= T::lit(16.0) * T::epsilon() * dl.abs().max(du.abs()) {
            return Ok(t);
        }
        if g < T::zero() {
            a = t;
        } else {
            b = t;
        }
        if b - a <= resolution {
            break;
        }
        let newton = t - g / curvature(t);
        let next = if newton > a && newton < b && newton.is_finite() { newton } else { a + (b - a) / T::lit(2.0) };
        if (next - t).abs() <= resolution {
            return Ok(next);
        }
        t = next;
    }
    Ok(t.max(a).min(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::channel_gain;

    fn device(data: usize, distance: f64) -> DeviceProfile<f64> {
        DeviceProfile {
            id: 0,
            data_size: data,
            cycles_per_sample: 2e5,
            f_max: 1e9,
            p_max: 1.0,
            energy_budget: 1.0,
            distance,
            kappa: 5e-27,
        }
    }

    fn cfg() -> SystemConfig<f64> {
        SystemConfig { model_bits: 2e6, ..SystemConfig::default() }
    }

    fn total(p: &DeviceProfile<f64>, theta: f64, t: f64, h: f64, c: &SystemConfig<f64>) -> f64 {
        round_energy(p, theta, t, h, c, &SolverOptions::default()).unwrap().total()
    }

    #[test]
    fn interior_solution_balances_power() {
        let c = cfg();
        let p = device(500, 150.0);
        let h = channel_gain(&p, &c, 1.0);
        let t = optimal_comp_time(&p, 0.2, h, &c, &SolverOptions::default()).unwrap();
        let lo = min_comp_time(&p, 5);
        let hi = c.t_max - min_comm_time(0.2, h, &p, &c).unwrap();
        assert!(t > lo && t < hi, "{lo} < {t} < {hi}");
        let (dl, du) = power_balance(&p, 0.2, t, h, &c);
        assert!((dl - du).abs() <= 1e-6 * dl.abs().max(du.abs()), "{dl} vs {du}");
    }

    #[test]
    fn clamps_to_frequency_limit() {
        // slow CPU and a distant device: transmitting is dear and computing
        // cheap, so the optimum sits on the frequency limit
        let c = SystemConfig { model_bits: 9e6, ..cfg() };
        let p = DeviceProfile { f_max: 1e8, ..device(50, 30_000.0) };
        let h = channel_gain(&p, &c, 1.0);
        let t = optimal_comp_time(&p, 0.2, h, &c, &SolverOptions::default()).unwrap();
        let lo = min_comp_time(&p, 5);
        let (dl, du) = power_balance(&p, 0.2, lo, h, &c);
        assert!(dl - du >= 0.0, "stationary point should lie below the window");
        assert_eq!(t, lo);
    }

    #[test]
    fn collapsed_window_returns_its_point() {
        let c = cfg();
        let p = device(400, 120.0);
        let h = channel_gain(&p, &c, 1.0);
        let lo = min_comp_time(&p, 5);
        // choose θ so that T_max - Q/r_max(θ) == lo
        let theta = super::super::min_bandwidth(&p, h, c.t_max - lo, &c).unwrap();
        let t = optimal_comp_time(&p, theta, h, &c, &SolverOptions::default()).unwrap();
        assert!((t - lo).abs() <= 1e-9 * lo);
    }

    #[test]
    fn empty_window_is_infeasible() {
        let c = cfg();
        let p = DeviceProfile { f_max: 1e6, ..device(400, 120.0) };
        let h = channel_gain(&p, &c, 1.0);
        assert_eq!(optimal_comp_time(&p, 0.5, h, &c, &SolverOptions::default()), Err(Error::InfeasibleDevice { id: 0 }));
    }

    #[test]
    fn matches_grid_minimisation() {
        let c = cfg();
        for (data, dist, theta) in [(300, 80.0, 0.1), (550, 220.0, 0.4), (150, 40.0, 0.03), (420, 180.0, 1.0)] {
            let p = device(data, dist);
            let h = channel_gain(&p, &c, 0.7);
            let t = optimal_comp_time(&p, theta, h, &c, &SolverOptions::default()).unwrap();
            let lo = min_comp_time(&p, 5);
            let hi = c.t_max - min_comm_time(theta, h, &p, &c).unwrap();
            let step = 1e-4;
            let n = ((hi - lo) / step).floor() as usize;
            let (best_t, _) = (0..=n)
                .map(|i| lo + i as f64 * step)
                .chain(std::iter::once(hi))
                .map(|t| (t, total(&p, theta, t, h, &c)))
                .fold((lo, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            assert!((t - best_t).abs() <= step, "solver {t}, grid {best_t}");
            assert!(total(&p, theta, t, h, &c) <= total(&p, theta, best_t, h, &c) * (1.0 + 1e-12));
        }
    }
}
