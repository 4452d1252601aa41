//! Computation and upload energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-client energy split for one round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub f: f64,
    pub e_cmp: f64,
    pub p_com: f64,
    pub e_com: f64,
    pub e_total: f64,
}

/// CPU frequency needed to finish `l` passes over `d_m` samples by `t_f`.
pub fn cpu_frequency(a_m: f64, d_m: f64, l: u32, t_f: f64) -> f64 {
    a_m * d_m * l as f64 / t_f
}

/// `zeta (a D)^3 l^3 / t_f^2`.
pub fn comp_energy(zeta: f64, a_m: f64, d_m: f64, l: u32, t_f: f64) -> f64 {
    let w = a_m * d_m * l as f64;
    zeta * w * w * w / (t_f * t_f)
}

/// `(2^{s/B} - 1) B`, the bandwidth-dependent part of transmit power.
///
/// Evaluated through `expm1` so that wide channels keep full precision.
pub fn chi(s_rate: f64, b: f64) -> f64 {
    b * (s_rate / b * std::f64::consts::LN_2).exp_m1()
}

/// Transmit power needed to sustain `s_rate` over bandwidth `b`.
pub fn comm_power(s_rate: f64, b: f64, h: f64, b_min: f64) -> Result<f64> {
    if b < b_min {
        return Err(Error::BandwidthFloor { b, b_min });
    }
    Ok(chi(s_rate, b) / h)
}

/// Energy to upload `model_bits` at `s_rate`.
pub fn comm_energy(s_rate: f64, b: f64, h: f64, model_bits: f64, b_min: f64) -> Result<f64> {
    Ok(comm_power(s_rate, b, h, b_min)? * model_bits / s_rate)
}

pub fn total_energy(e_cmp: f64, e_com: f64) -> f64 {
    e_cmp + e_com
}

/// Every term for one selected client.
#[allow(clippy::too_many_arguments)]
pub fn breakdown(
    zeta: f64,
    a_m: f64,
    d_m: f64,
    l: u32,
    t_f: f64,
    s_rate: f64,
    b: f64,
    h: f64,
    model_bits: f64,
    b_min: f64,
) -> Result<EnergyBreakdown> {
    let e_cmp = comp_energy(zeta, a_m, d_m, l, t_f);
    let p_com = comm_power(s_rate, b, h, b_min)?;
    let e_com = p_com * model_bits / s_rate;
    Ok(EnergyBreakdown {
        f: cpu_frequency(a_m, d_m, l, t_f),
        e_cmp,
        p_com,
        e_com,
        e_total: total_energy(e_cmp, e_com),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn frequency() {
        assert_eq!(cpu_frequency(2e6, 1000.0, 0, 60.0), 0.0);
        assert_relative_eq!(cpu_frequency(2e6, 1000.0, 1, 60.0), 3.3333e7, max_relative = 1e-4);
        assert_relative_eq!(cpu_frequency(2e6, 1000.0, 2, 60.0), 2.0 * cpu_frequency(2e6, 1000.0, 1, 60.0));
    }

    #[test]
    fn computation() {
        assert_eq!(comp_energy(1e-28, 2e6, 1000.0, 0, 60.0), 0.0);
        let e1 = comp_energy(1e-28, 2e6, 1000.0, 1, 60.0);
        assert_relative_eq!(e1, 8e27 * 1e-28 / 3600.0, max_relative = 1e-12);
        assert_relative_eq!(e1, 2.2222e-4, max_relative = 1e-4);
        assert_relative_eq!(comp_energy(1e-28, 2e6, 1000.0, 2, 60.0), 8.0 * e1, max_relative = 1e-12);
    }

    #[test]
    fn power() {
        assert_relative_eq!(comm_power(2e6, 2e6, 1e6, 1e3).unwrap(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(comm_power(2e6, 1e6, 1e6, 1e3).unwrap(), 3.0, max_relative = 1e-12);
        assert!(matches!(comm_power(2e6, 10.0, 1e6, 1e3), Err(Error::BandwidthFloor { .. })));
        let mut last = f64::INFINITY;
        for k in 1..200 {
            let p = comm_power(2e6, 1e4 * k as f64, 1e6, 1e3).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn transmission() {
        assert_relative_eq!(comm_energy(2e6, 1e6, 1e6, 8e6, 1e3).unwrap(), 12.0, max_relative = 1e-12);
        assert_eq!(comm_energy(2e6, 1e6, 1e6, 0.0, 1e3).unwrap(), 0.0);
        let full = comm_energy(2e6, 1e6, 1e6, 8e6, 1e3).unwrap();
        assert_relative_eq!(comm_energy(2e6, 1e6, 5e5, 8e6, 1e3).unwrap(), 2.0 * full, max_relative = 1e-12);
    }

    #[test]
    fn totals() {
        assert_eq!(total_energy(0.0, 0.0), 0.0);
        let e = total_energy(comp_energy(1e-28, 2e6, 1000.0, 1, 60.0), 12.0);
        assert_relative_eq!(e, 12.000222, max_relative = 1e-6);
        assert_eq!(total_energy(1.5, 2.5), total_energy(2.5, 1.5));
        let b = breakdown(1e-28, 2e6, 1000.0, 1, 60.0, 2e6, 1e6, 1e6, 8e6, 1e3).unwrap();
        assert_relative_eq!(b.e_total, b.e_cmp + b.e_com);
    }
}
