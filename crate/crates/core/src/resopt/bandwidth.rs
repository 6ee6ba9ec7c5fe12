use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sysmodel::{max_rate, uplink_energy, DeviceProfile, SystemConfig};

use super::lambert::lambert_w0;
use super::{AllocationInput, SolverOptions};

/// Bandwidth split of one scheduled set.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSolution<T> {
    /// Shares in the order of `scheduled`.
    pub theta: Vec<T>,
    /// Smallest share that still meets the deadline at full power.
    pub min_theta: Vec<T>,
    /// Devices held at `min_theta` (zero queue, or lower bound active).
    pub pinned: Vec<bool>,
    /// Multiplier of the sum constraint, when the closed form was used.
    pub lambda: Option<T>,
}

/// Smallest `θ` whose full-power rate uploads the payload within `t_comm`.
///
/// The rate is concave and increasing in `θ`; Newton steps inside a sign
/// bracket converge from below, and the result is nudged up until it is
/// feasible.
pub fn min_bandwidth<T: Scalar>(profile: &DeviceProfile<T>, gain: T, t_comm: T, cfg: &SystemConfig<T>) -> Result<T> {
    if !(t_comm > T::zero()) {
        return Err(Error::InfeasibleDevice { id: profile.id });
    }
    let need = cfg.model_bits / t_comm;
    if max_rate(T::one(), gain, profile, cfg)? < need {
        return Err(Error::InfeasibleDevice { id: profile.id });
    }
    let snr_band = profile.p_max * gain / cfg.noise_psd;
    let rate_slope = |theta: T| {
        let z = snr_band / (theta * cfg.bandwidth);
        cfg.bandwidth / T::LN_2() * (z.ln_1p() - z / (T::one() + z))
    };
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut theta = T::one();
    for _ in 0..200 {
        let g = max_rate(theta, gain, profile, cfg)? - need;
        if g >= T::zero() {
            hi = theta;
        } else {
            lo = theta;
        }
        if hi - lo <= T::lit(2.0) * T::epsilon() * hi {
            break;
        }
        let newton = theta - g / rate_slope(theta);
        let next = if newton > lo && newton < hi { newton } else { lo + (hi - lo) / T::lit(2.0) };
        if (next - theta).abs() <= T::lit(2.0) * T::epsilon() * theta {
            theta = next;
            break;
        }
        theta = next;
    }
    let mut theta = theta.max(lo).min(hi);
    for _ in 0..64 {
        if theta >= hi || max_rate(theta, gain, profile, cfg)? >= need {
            break;
        }
        theta = (theta * (T::one() + T::lit(2.0) * T::epsilon())).min(hi);
    }
    Ok(if max_rate(theta, gain, profile, cfg)? >= need { theta } else { hi })
}

/// `q·E^U`: one device's term of the bandwidth objective.
pub fn weighted_upload_energy<T: Scalar>(theta: T, queue: T, gain: T, t_comm: T, cfg: &SystemConfig<T>) -> Result<T> {
    Ok(queue * uplink_energy(theta, t_comm, gain, cfg)?.energy)
}

/// Stationary share of one device for multiplier `lambda`, where
/// `a = Q ln2 / (B T^U)` and `c = q N₀ B T^U / h`.
pub fn theta_of_lambda<T: Scalar>(lambda: T, a: T, c: T) -> Result<T> {
    let x = (lambda / c - T::one()) / T::E();
    Ok(a / (lambert_w0(x)? + T::one()))
}

/// Multiplier at which a device's stationary share equals `theta`.
fn lambda_at<T: Scalar>(theta: T, a: T, c: T) -> T {
    let u = a / theta;
    c * ((u - T::one()) * u.exp() + T::one())
}

#[derive(Debug, Clone, Copy)]
struct Term<T> {
    a: T,
    c: T,
}

/// Share and its derivative in the multiplier.
fn share_and_slope<T: Scalar>(lambda: T, t: &Term<T>) -> Result<(T, T)> {
    let x = (lambda / t.c - T::one()) / T::E();
    let w = lambert_w0(x)?;
    let wp1 = w + T::one();
    // dW/dx = e^{-W}/(1+W)
    let slope = -t.a * (-w).exp() / (t.c * T::E() * wp1 * wp1 * wp1);
    Ok((t.a / wp1, slope))
}

fn solve_multiplier<T: Scalar>(terms: &[Term<T>], budget: T, opts: &SolverOptions<T>) -> Result<(T, Vec<T>)> {
    let n = T::from_count(terms.len());
    let shares = |lambda: T| -> Result<Vec<T>> { terms.iter().map(|t| theta_of_lambda(lambda, t.a, t.c)).collect() };
    let total = |lambda: T| -> Result<(T, T)> {
        terms.iter().try_fold((T::zero(), T::zero()), |(s, d), t| {
            let (th, sl) = share_and_slope(lambda, t)?;
            Ok((s + th, d + sl))
        })
    };

    // every share is at most the budget at the solution, and the largest is
    // at least budget/n
    let mut lo = terms.iter().map(|t| lambda_at(budget, t.a, t.c)).fold(T::zero(), T::max);
    let mut hi = terms.iter().map(|t| lambda_at(budget / n, t.a, t.c)).fold(T::zero(), T::max);
    if !hi.is_finite() {
        hi = lo.max(T::min_positive_value()) * T::lit(2.0);
        while total(hi)?.0 > budget {
            hi = hi * T::lit(2.0);
            if !hi.is_finite() {
                return Err(Error::NumericalFailure("multiplier upper bound overflowed".into()));
            }
        }
    }
    if !(lo > T::zero()) {
        lo = T::zero();
    }

    let bisect = |lo: T, hi: T| if lo > T::zero() && hi / lo > T::lit(2.0) { (lo * hi).sqrt() } else { lo + (hi - lo) / T::lit(2.0) };
    let mut lambda = bisect(lo, hi);
    for _ in 0..opts.lambda_iters {
        let (s, ds) = total(lambda)?;
        if (s - budget).abs() <= opts.sum_tol {
            return Ok((lambda, shares(lambda)?));
        }
        if s > budget {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let newton = lambda - (s - budget) / ds;
        let next = if newton > lo && newton < hi && newton.is_finite() { newton } else { bisect(lo, hi) };
        if next <= lo || next >= hi {
            break;
        }
        lambda = next;
    }
    let mut best = None;
    for lambda in [lo, hi] {
        if lambda > T::zero() {
            let s = total(lambda)?.0;
            let err = (s - budget).abs();
            if err <= opts.sum_tol && best.map_or(true, |(_, e)| err < e) {
                best = Some((lambda, err));
            }
        }
    }
    match best {
        Some((lambda, _)) => Ok((lambda, shares(lambda)?)),
        None => Err(Error::NumericalFailure(format!(
            "no multiplier in [{lo:e}, {hi:e}] makes the shares sum to {budget}"
        ))),
    }
}

/// KKT bandwidth split for fixed computation times (`t_comp` aligned with
/// `input.scheduled`).
///
/// Zero-queue devices get exactly their minimum share. The remaining band
/// is split by the Lambert-W closed form; devices whose closed-form share
/// falls below their minimum are pinned there and the rest re-solved. With
/// no positive-queue device at all, the leftover band is spread evenly.
pub fn bandwidth_allocation<T: Scalar>(
    input: &AllocationInput<'_, T>,
    t_comp: &[T],
    opts: &SolverOptions<T>,
) -> Result<BandwidthSolution<T>> {
    let n = input.scheduled.len();
    if t_comp.len() != n {
        return Err(Error::DegenerateInput(format!("{} computation times for {n} devices", t_comp.len())));
    }
    let cfg = input.cfg;
    let mut min_theta = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(n);
    for (&id, &tl) in input.scheduled.iter().zip(t_comp) {
        let window = cfg.t_max - tl;
        let profile = input.profile(id);
        let gain = input.gain(id);
        min_theta.push(min_bandwidth(profile, gain, window, cfg)?);
        terms.push(Term {
            a: cfg.model_bits * T::LN_2() / (cfg.bandwidth * window),
            c: input.queues[id] * cfg.noise_psd * cfg.bandwidth * window / gain,
        });
    }
    let demand: T = min_theta.iter().copied().sum();
    if demand > T::one() + opts.sum_tol {
        return Err(Error::InfeasibleSet(format!("minimum shares sum to {demand}")));
    }

    let mut pinned: Vec<bool> = input.scheduled.iter().map(|&id| input.queues[id] == T::zero()).collect();
    let mut theta = min_theta.clone();
    let mut lambda = None;
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        if free.is_empty() {
            break;
        }
        let budget = T::one() - (0..n).filter(|&i| pinned[i]).map(|i| min_theta[i]).sum::<T>();
        let shares = if free.len() == 1 {
            lambda = None;
            vec![budget]
        } else {
            let sub: Vec<Term<T>> = free.iter().map(|&i| terms[i]).collect();
            let (l, s) = solve_multiplier(&sub, budget, opts)?;
            lambda = Some(l);
            s
        };
        let mut violated = false;
        for (&i, &s) in free.iter().zip(&shares) {
            if s < min_theta[i] {
                pinned[i] = true;
                violated = true;
            } else {
                theta[i] = s;
            }
        }
        if !violated {
            break;
        }
        for &i in &free {
            if pinned[i] {
                theta[i] = min_theta[i];
            }
        }
    }

    let all_zero_queue = input.scheduled.iter().all(|&id| input.queues[id] == T::zero());
    if all_zero_queue && n > 0 {
        let shift = (T::one() - demand) / T::from_count(n);
        if shift > T::zero() {
            theta.iter_mut().for_each(|t| *t = (*t + shift).min(T::one()));
        }
    }
    Ok(BandwidthSolution { theta, min_theta, pinned, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{channel_gain, ChannelRealization};

    fn profiles(distances: &[f64]) -> Vec<DeviceProfile<f64>> {
        distances
            .iter()
            .enumerate()
            .map(|(id, &distance)| DeviceProfile {
                id,
                data_size: 400,
                cycles_per_sample: 2e5,
                f_max: 1e9,
                p_max: 1.0,
                energy_budget: 1.0,
                distance,
                kappa: 5e-27,
            })
            .collect()
    }

    fn cfg() -> SystemConfig<f64> {
        SystemConfig { model_bits: 2e6, ..SystemConfig::default() }
    }

    #[test]
    fn lambda_round_trip() {
        let (a, c) = (0.8f64, 3e-4f64);
        for theta in [0.05, 0.2, 0.7, 1.0] {
            let l = lambda_at(theta, a, c);
            assert!((theta_of_lambda(l, a, c).unwrap() - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn min_bandwidth_meets_deadline_exactly() {
        let c = cfg();
        let p = &profiles(&[150.0])[0];
        let h = channel_gain(p, &c, 1.0);
        let th = min_bandwidth(p, h, 0.4, &c).unwrap();
        let rate = max_rate(th, h, p, &c).unwrap();
        assert!(rate * 0.4 >= c.model_bits);
        assert!((rate * 0.4 / c.model_bits - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_devices_split_evenly() {
        let c = cfg();
        let ps = profiles(&[100.0, 100.0]);
        let gains = ChannelRealization { round: 0, gains: ps.iter().map(|p| channel_gain(p, &c, 1.0)).collect() };
        let queues = [0.5, 0.5];
        let input = AllocationInput { scheduled: &[0, 1], queues: &queues, gains: &gains, profiles: &ps, cfg: &c, v: 1.0 };
        let sol = bandwidth_allocation(&input, &[0.5, 0.5], &SolverOptions::default()).unwrap();
        assert!((sol.theta[0] - 0.5).abs() < 1e-9 && (sol.theta[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn single_device_takes_whole_band() {
        let c = cfg();
        let ps = profiles(&[100.0]);
        let gains = ChannelRealization { round: 0, gains: vec![channel_gain(&ps[0], &c, 1.0)] };
        for q in [0.0, 2.0] {
            let queues = [q];
            let input = AllocationInput { scheduled: &[0], queues: &queues, gains: &gains, profiles: &ps, cfg: &c, v: 1.0 };
            let sol = bandwidth_allocation(&input, &[0.5], &SolverOptions::default()).unwrap();
            assert!((sol.theta[0] - 1.0).abs() < 1e-12, "q = {q}: {:?}", sol.theta);
        }
    }

    #[test]
    fn zero_queue_devices_receive_their_minimum() {
        let c = cfg();
        let ps = profiles(&[100.0, 200.0, 150.0]);
        let gains = ChannelRealization { round: 0, gains: ps.iter().map(|p| channel_gain(p, &c, 1.0)).collect() };
        let queues = [0.0, 1.0, 2.0];
        let input = AllocationInput { scheduled: &[0, 1, 2], queues: &queues, gains: &gains, profiles: &ps, cfg: &c, v: 1.0 };
        let sol = bandwidth_allocation(&input, &[0.5, 0.5, 0.5], &SolverOptions::default()).unwrap();
        assert_eq!(sol.theta[0], sol.min_theta[0]);
        assert!((sol.theta.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn oversubscribed_set_is_rejected() {
        let c = SystemConfig { model_bits: 9e6, ..cfg() };
        let ps = profiles(&[240.0; 12]);
        let gains = ChannelRealization { round: 0, gains: ps.iter().map(|p| channel_gain(p, &c, 0.5)).collect() };
        let queues = [1.0; 12];
        let ids: Vec<usize> = (0..12).collect();
        let input = AllocationInput { scheduled: &ids, queues: &queues, gains: &gains, profiles: &ps, cfg: &c, v: 1.0 };
        let r = bandwidth_allocation(&input, &[1.6; 12], &SolverOptions::default());
        assert!(matches!(r, Err(Error::InfeasibleSet(_))), "{r:?}");
    }
}
