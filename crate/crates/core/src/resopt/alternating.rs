use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sysmodel::{min_comm_time, min_comp_time};

use super::bandwidth::bandwidth_allocation;
use super::time::{optimal_comp_time, round_energy};
use super::{Allocation, AllocationInput, DeviceAllocation, SolverOptions};

/// Joint bandwidth and computation-time allocation for a fixed set.
///
/// Starts from the fastest computation times, then alternates the KKT
/// bandwidth split and the per-device time split until the weighted energy
/// `Σ q_k E_k` decreases by no more than `opts.outer_tol`.
pub fn alternating_allocate<T: Scalar>(input: &AllocationInput<'_, T>, opts: &SolverOptions<T>) -> Result<Allocation<T>> {
    input.validate()?;
    let cfg = input.cfg;
    let n = input.scheduled.len();
    if n == 0 {
        return Ok(Allocation::empty());
    }

    let mut t_comp: Vec<T> = Vec::with_capacity(n);
    for &id in input.scheduled {
        let p = input.profile(id);
        let lo = min_comp_time(p, cfg.local_iters);
        if lo + min_comm_time(T::one(), input.gain(id), p, cfg)? > cfg.t_max {
            return Err(Error::InfeasibleDevice { id });
        }
        t_comp.push(lo);
    }

    let positive = input.scheduled.iter().filter(|&&id| input.queues[id] > T::zero()).count();
    let sweep = |t_comp: &[T]| -> Result<(Vec<T>, Vec<T>, T)> {
        let theta = bandwidth_allocation(input, t_comp, opts)?.theta;
        let next = input
            .scheduled
            .iter()
            .zip(&theta)
            .map(|(&id, &th)| optimal_comp_time(input.profile(id), th, input.gain(id), cfg, opts))
            .collect::<Result<Vec<T>>>()?;
        let value = weighted_energy(input, &theta, &next, opts)?;
        Ok((theta, next, value))
    };

    let mut history = Vec::new();
    let mut previous = T::infinity();
    let mut theta;
    let mut trail: Vec<Vec<T>> = vec![t_comp.clone()];
    loop {
        if history.len() >= opts.outer_iters {
            return Err(Error::ConvergenceFailure { iterations: opts.outer_iters });
        }
        let (th, next, mut current) = sweep(&t_comp)?;
        theta = th;
        t_comp = next;
        trail.push(t_comp.clone());
        // the sweeps contract linearly; an Aitken jump is kept only if it
        // lands lower than the plain sweep
        if trail.len() == 3 {
            if let Some(jump) = aitken(&trail) {
                if let Ok((th, next, value)) = sweep(&jump) {
                    if value < current {
                        theta = th;
                        t_comp = next;
                        current = value;
                    }
                }
            }
            trail = vec![t_comp.clone()];
        }
        history.push(current);
        // with at most one positive-queue device the bandwidth split cannot
        // move after the first pass
        if positive <= 1 || previous - current <= opts.outer_tol {
            break;
        }
        previous = current;
    }

    let mut devices = Vec::with_capacity(n);
    let mut weighted = T::zero();
    let mut data = T::zero();
    for ((&id, &th), &tl) in input.scheduled.iter().zip(&theta).zip(&t_comp) {
        let p = input.profile(id);
        let e = round_energy(p, th, tl, input.gain(id), cfg, opts)?;
        weighted = weighted + input.queues[id] * e.total();
        data = data + p.data();
        devices.push(DeviceAllocation {
            id,
            theta: th,
            t_comp: tl,
            t_comm: e.t_comm,
            power: e.power,
            comp_energy: e.comp,
            comm_energy: e.comm,
            energy: e.total(),
        });
    }
    Ok(Allocation { devices, weighted_energy: weighted, objective: weighted - input.v * data, history })
}

fn weighted_energy<T: Scalar>(input: &AllocationInput<'_, T>, theta: &[T], t_comp: &[T], opts: &SolverOptions<T>) -> Result<T> {
    let mut acc = T::zero();
    for ((&id, &th), &tl) in input.scheduled.iter().zip(theta).zip(t_comp) {
        let q = input.queues[id];
        if q > T::zero() {
            acc = acc + q * round_energy(input.profile(id), th, tl, input.gain(id), input.cfg, opts)?.total();
        }
    }
    Ok(acc)
}

/// Extrapolates three successive iterates along the last step, assuming a
/// single dominant contraction rate `r`: `x₂ + r/(1-r)·(x₂ - x₁)`. `None`
/// unless `0 < r < 1`.
fn aitken<T: Scalar>(trail: &[Vec<T>]) -> Option<Vec<T>> {
    let (x0, x1, x2) = (&trail[0], &trail[1], &trail[2]);
    let d1: Vec<T> = x1.iter().zip(x0).map(|(&b, &a)| b - a).collect();
    let d2: Vec<T> = x2.iter().zip(x1).map(|(&c, &b)| c - b).collect();
    let dot = |u: &[T], v: &[T]| u.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
    let norm = dot(&d1, &d1);
    if !(norm > T::zero()) {
        return None;
    }
    let r = dot(&d2, &d1) / norm;
    if !(r > T::zero() && r < T::one()) {
        return None;
    }
    let gain = r / (T::one() - r);
    Some(x2.iter().zip(&d2).map(|(&x, &d)| x + gain * d).collect())
}
