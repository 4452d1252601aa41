//! Category ledger, discrepancy tracking and data-quality scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ClientProfile, Hyperparameters};

/// Cumulative trained sample-iterations per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLedger {
    pub g: Vec<u64>,
    pub g_dom: u64,
    /// Discrepancy `g_dom - g_z` per category.
    pub o: Vec<u64>,
    pub round: u64,
}

impl CategoryLedger {
    pub fn new(z: usize) -> Self {
        Self::from_counts(vec![0; z], 0)
    }

    pub fn from_counts(g: Vec<u64>, round: u64) -> Self {
        let g_dom = g.iter().copied().max().unwrap_or(0);
        let o = g.iter().map(|&x| g_dom - x).collect();
        Self { g, g_dom, o, round }
    }

    pub fn o_max(&self) -> u64 {
        self.o.iter().copied().max().unwrap_or(0)
    }

    /// Category with the largest discrepancy, lowest index on ties.
    pub fn scarcest(&self) -> usize {
        let o_max = self.o_max();
        self.o.iter().position(|&x| x == o_max).unwrap_or(0)
    }
}

/// Per-round shape parameters of the unit-quality curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdqParams {
    pub iota_t: f64,
    pub iota_z: Vec<f64>,
    pub theta_t: f64,
    pub o_max: f64,
    pub d_avg: f64,
}

/// Add `q_m l_m d_{z,m}` for every client and recompute discrepancies.
pub fn update_ledger(ledger: &CategoryLedger, selection: &[(bool, u32)], profiles: &[ClientProfile]) -> Result<CategoryLedger> {
    if selection.len() != profiles.len() {
        return Err(Error::Dimension(format!(
            "{} selections for {} profiles",
            selection.len(),
            profiles.len()
        )));
    }
    let mut g = ledger.g.clone();
    for (&(q, l), p) in selection.iter().zip(profiles) {
        if p.dist.len() != g.len() {
            return Err(Error::Dimension(format!("client {} has {} categories, ledger has {}", p.id, p.dist.len(), g.len())));
        }
        if q {
            for (gz, &d) in g.iter_mut().zip(&p.dist) {
                *gz += l as u64 * d as u64;
            }
        }
    }
    Ok(CategoryLedger::from_counts(g, ledger.round + 1))
}

/// `log_vartheta(vartheta + o_max / (N d_avg))`.
pub fn compute_theta(o_max: f64, n: usize, d_avg: f64, vartheta: f64) -> Result<f64> {
    if !(d_avg > 0.0) {
        return Err(Error::Degenerate(format!("average category size is {d_avg}")));
    }
    Ok((vartheta + o_max / (n as f64 * d_avg)).ln() / vartheta.ln())
}

/// Gain compensation `exp(1 - (d / iota)^theta)`.
pub fn compute_nu(d: f64, iota_z: f64, theta: f64) -> f64 {
    (1.0 - (d / iota_z).powf(theta)).exp()
}

/// Unit data quality of `d` samples against reference `iota_z`. May be negative
/// far outside the preference band; see [`clamp_udq`].
pub fn compute_udq(d: f64, iota_z: f64, theta: f64, u_c: f64, alpha_udq: f64) -> f64 {
    let x = (compute_nu(d, iota_z, theta) * d - iota_z) / iota_z;
    alpha_udq * (1.0 - (1.0 - u_c) * x * x)
}

/// Negative unit quality is floored at zero; the flag reports whether it was.
pub fn clamp_udq(u: f64) -> (f64, bool) {
    if u < 0.0 {
        (0.0, true)
    } else {
        (u, false)
    }
}

/// Diversity gain `mu sin(pi z_m / 2Z)`.
pub fn compute_category_gain(z_m: usize, z: usize, mu: f64) -> f64 {
    mu * (std::f64::consts::PI * z_m as f64 / (2.0 * z as f64)).sin()
}

/// Average nonzero category size over all declared distributions.
pub fn average_category_size<'a>(dists: impl IntoIterator<Item = &'a [u32]>) -> f64 {
    let (mut total, mut count) = (0u64, 0u64);
    for d in dists {
        total += d.iter().map(|&x| x as u64).sum::<u64>();
        count += d.iter().filter(|&&x| x > 0).count() as u64;
    }
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

/// Integer reference size that maximizes mean unit quality over the declared
/// sizes of `scarcest` category. Ties go to the smaller value; if no client
/// declares that category, `fallback` is returned.
pub fn calibrate_iota(
    declared: &[&[u32]],
    scarcest: usize,
    d_max: u32,
    theta: f64,
    alpha_udq: f64,
    iota_min: u32,
    fallback: f64,
) -> f64 {
    let mut sizes: Vec<u32> = declared.iter().filter_map(|d| d.get(scarcest).copied()).filter(|&x| x > 0).collect();
    if sizes.is_empty() {
        return fallback;
    }
    sizes.sort_unstable();
    let mut hist: Vec<(f64, f64)> = Vec::new();
    for s in sizes {
        match hist.last_mut() {
            Some((v, c)) if *v == s as f64 => *c += 1.0,
            _ => hist.push((s as f64, 1.0)),
        }
    }
    let total: f64 = hist.iter().map(|h| h.1).sum();
    // The diversity gain only rescales the curve, so the argmax is taken at zero gain.
    let expect = |iota: f64| hist.iter().map(|&(d, c)| c * compute_udq(d, iota, theta, 0.0, alpha_udq)).sum::<f64>() / total;
    let hi = d_max.max(iota_min);
    let mut best = (iota_min, expect(iota_min as f64));
    for iota in iota_min + 1..=hi {
        let e = expect(iota as f64);
        if e > best.1 + 1e-12 * best.1.abs().max(1.0) {
            best = (iota, e);
        }
    }
    best.0 as f64
}

/// `max(round(iota_t o_z / o_max), iota_min)`; with no discrepancy at all the
/// ratio is taken as one.
pub fn compute_iota_z(iota_t: f64, o_z_prev: f64, o_max_prev: f64, iota_min: u32) -> f64 {
    if o_max_prev <= 0.0 {
        return iota_t.max(iota_min as f64);
    }
    (iota_t * o_z_prev / o_max_prev).round().max(iota_min as f64)
}

/// Calibrate every curve parameter for the coming round from the ledger left
/// by the previous one.
pub fn udq_params(ledger: &CategoryLedger, declared: &[&[u32]], hyper: &Hyperparameters) -> Result<UdqParams> {
    let d_avg = average_category_size(declared.iter().copied());
    if !(d_avg > 0.0) {
        return Err(Error::Degenerate("no client declares any data".into()));
    }
    let o_max = ledger.o_max() as f64;
    if o_max == 0.0 {
        return Ok(UdqParams { iota_t: d_avg, iota_z: vec![d_avg; ledger.g.len()], theta_t: 1.0, o_max, d_avg });
    }
    let theta_t = compute_theta(o_max, hyper.n, d_avg, hyper.vartheta)?;
    let d_max = declared.iter().flat_map(|d| d.iter().copied()).max().unwrap_or(0);
    let iota_t = calibrate_iota(declared, ledger.scarcest(), d_max, theta_t, hyper.alpha_udq, hyper.iota_min, d_avg);
    let iota_z = ledger.o.iter().map(|&o| compute_iota_z(iota_t, o as f64, o_max, hyper.iota_min)).collect();
    Ok(UdqParams { iota_t, iota_z, theta_t, o_max, d_avg })
}

/// Quality per local iteration and the number of clamped categories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityEval {
    pub per_iteration: f64,
    pub clamped: u32,
}

/// `sigma lambda sum_z u_{z,m} d_{z,m}` over the categories the client holds.
pub fn quality_per_iteration(dist: &[u32], params: &UdqParams, sigma: f64, lambda: f64, alpha_udq: f64, mu: f64) -> QualityEval {
    let z_m = dist.iter().filter(|&&d| d > 0).count();
    let u_c = compute_category_gain(z_m, dist.len(), mu);
    let mut sum = 0.0;
    let mut clamped = 0;
    for (&d, &iota) in dist.iter().zip(&params.iota_z) {
        if d == 0 {
            continue;
        }
        let (u, c) = clamp_udq(compute_udq(d as f64, iota, params.theta_t, u_c, alpha_udq));
        clamped += c as u32;
        sum += u * d as f64;
    }
    QualityEval { per_iteration: sigma * lambda * sum, clamped }
}

/// Data quality `c_m` delivered by `l` local iterations.
pub fn compute_data_quality(profile: &ClientProfile, params: &UdqParams, l: u32, sigma: f64, beta: f64, alpha_udq: f64, mu: f64) -> f64 {
    let lambda = beta.powi(profile.v_m as i32);
    l as f64 * quality_per_iteration(&profile.dist, params, sigma, lambda, alpha_udq, mu).per_iteration
}

/// Smallest and largest integer size whose unit quality is at least
/// `epsilon * alpha_udq`.
pub fn preference_range(iota_z: f64, theta: f64, u_c: f64, alpha_udq: f64, epsilon: f64) -> Result<(u32, u32)> {
    let threshold = epsilon * alpha_udq;
    let scan_max = 10 * iota_z.ceil() as u32 + 10;
    let mut low = None;
    let mut high = None;
    for d in 0..=scan_max {
        if compute_udq(d as f64, iota_z, theta, u_c, alpha_udq) >= threshold {
            low.get_or_insert(d);
            high = Some(d);
        }
    }
    match (low, high) {
        (Some(l), Some(h)) => Ok((l, h)),
        _ => Err(Error::Degenerate(format!("empty preference range at iota {iota_z}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(iota: Vec<f64>, theta: f64) -> UdqParams {
        UdqParams { iota_t: iota[0], iota_z: iota, theta_t: theta, o_max: 0.0, d_avg: 1.0 }
    }

    #[test]
    fn ledger_updates() {
        let l0 = CategoryLedger::new(2);
        let p = vec![ClientProfile::new(0, vec![5, 0], 2e6)];
        assert_eq!(update_ledger(&l0, &[(false, 3)], &p).unwrap().g, vec![0, 0]);
        let l1 = update_ledger(&l0, &[(true, 1)], &p).unwrap();
        assert_eq!((l1.g.clone(), l1.o.clone()), (vec![5, 0], vec![0, 5]));
        let two = vec![ClientProfile::new(0, vec![1, 2], 2e6), ClientProfile::new(1, vec![4, 0], 2e6)];
        let l2 = update_ledger(&l0, &[(true, 2), (true, 3)], &two).unwrap();
        assert_eq!(l2.g, vec![14, 4]);
        assert!(update_ledger(&l0, &[(true, 1)], &two).is_err());
    }

    #[test]
    fn theta_values() {
        assert_relative_eq!(compute_theta(0.0, 10, 200.0, 10.0).unwrap(), 1.0);
        assert_relative_eq!(compute_theta(1000.0, 10, 200.0, 10.0).unwrap(), 1.0212, max_relative = 1e-4);
        assert!(compute_theta(1.0, 10, 0.0, 10.0).is_err());
        let mut last = 0.0;
        for k in 0..6 {
            let o = if k == 0 { 0.0 } else { 10f64.powi(k + 1) };
            let t = compute_theta(o, 10, 200.0, 10.0).unwrap();
            assert!(t > last);
            last = t;
        }
    }

    #[test]
    fn nu_values() {
        assert_eq!(compute_nu(200.0, 200.0, 1.7), 1.0);
        assert_relative_eq!(compute_nu(300.0, 200.0, 1.0212), 0.5987, max_relative = 1e-3);
        assert_relative_eq!(compute_nu(400.0, 200.0, 1.0), (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn udq_values() {
        assert_eq!(compute_udq(150.0, 150.0, 1.3, 0.1, 2.0), 2.0);
        assert_relative_eq!(compute_udq(0.0, 150.0, 1.3, 0.1, 2.0), 0.2, max_relative = 1e-14);
        let theta = compute_theta(1000.0, 10, 200.0, 10.0).unwrap();
        for k in 0..=10 {
            let u_c = 0.01 * k as f64;
            let u = compute_udq(300.0, 200.0, theta, u_c, 1.0);
            assert!((0.97..=1.0).contains(&u), "u_c={u_c} u={u}");
            let u100 = compute_udq(300.0, 100.0, theta, u_c, 1.0);
            assert!((u100 - 0.65).abs() <= 0.04, "u_c={u_c} u={u100}");
        }
    }

    #[test]
    fn clamp_counts_negatives() {
        assert_eq!(clamp_udq(-0.5), (0.0, true));
        assert_eq!(clamp_udq(0.5), (0.5, false));
        let u = compute_udq(360.0, 100.0, 6.0, 0.0, 1.0);
        assert!(u.is_finite());
    }

    #[test]
    fn category_gain() {
        assert_relative_eq!(compute_category_gain(10, 10, 0.2), 0.2);
        assert_eq!(compute_category_gain(0, 10, 0.2), 0.0);
        assert_relative_eq!(compute_category_gain(5, 10, 0.2), 0.2 * std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-14);
        assert_relative_eq!(compute_category_gain(5, 10, 0.2), 0.1414, max_relative = 1e-3);
    }

    #[test]
    fn iota_z_rules() {
        assert_eq!(compute_iota_z(200.0, 1000.0, 1000.0, 1), 200.0);
        assert_eq!(compute_iota_z(200.0, 500.0, 1000.0, 1), 100.0);
        assert_eq!(compute_iota_z(200.0, 0.0, 1000.0, 1), 1.0);
        assert_eq!(compute_iota_z(150.0, 0.0, 0.0, 1), 150.0);
    }

    #[test]
    fn calibration_point_mass_and_ties() {
        let d = [vec![0u32, 120], vec![5, 120]];
        let views: Vec<&[u32]> = d.iter().map(|v| v.as_slice()).collect();
        assert_eq!(calibrate_iota(&views, 1, 300, 1.0, 2.0, 1, 50.0), 120.0);
        assert_eq!(calibrate_iota(&views, 0, 300, 1.0, 2.0, 1, 50.0), 5.0);
        let none = [vec![3u32, 0]];
        let views: Vec<&[u32]> = none.iter().map(|v| v.as_slice()).collect();
        assert_eq!(calibrate_iota(&views, 1, 300, 1.0, 2.0, 1, 50.0), 50.0);
    }

    #[test]
    fn bootstrap_params() {
        let d = [vec![10u32, 30], vec![20, 0]];
        let views: Vec<&[u32]> = d.iter().map(|v| v.as_slice()).collect();
        let p = udq_params(&CategoryLedger::new(2), &views, &Hyperparameters::default()).unwrap();
        assert_eq!(p.theta_t, 1.0);
        assert_eq!(p.iota_z, vec![20.0, 20.0]);
    }

    #[test]
    fn data_quality_examples() {
        let p = params(vec![40.0], 1.0);
        let c = ClientProfile::new(0, vec![40], 2e6);
        assert_eq!(compute_data_quality(&c, &p, 0, 1.0, 0.95, 2.0, 0.2), 0.0);
        assert_relative_eq!(compute_data_quality(&c, &p, 1, 1.0, 0.95, 2.0, 0.2), 80.0, max_relative = 1e-14);

        let p2 = params(vec![30.0, 80.0], 1.05);
        let mut c2 = ClientProfile::new(1, vec![25, 100], 2e6);
        c2.v_m = 3;
        let u_c = 0.2 * (std::f64::consts::PI * 2.0 / 4.0).sin();
        let hand = |d: f64, iota: f64| {
            let nu = (1.0 - (d / iota).powf(1.05)).exp();
            let x = (nu * d - iota) / iota;
            2.0 * (1.0 - (1.0 - u_c) * x * x)
        };
        let expect = 0.95f64.powi(3) * 2.0 * (hand(25.0, 30.0) * 25.0 + hand(100.0, 80.0) * 100.0);
        assert_relative_eq!(compute_data_quality(&c2, &p2, 2, 1.0, 0.95, 2.0, 0.2), expect, max_relative = 1e-12);
    }

    #[test]
    fn preference_range_contains_iota() {
        for iota in [1.0, 7.0, 100.0, 333.0] {
            let (lo, hi) = preference_range(iota, 1.0212, 0.0, 1.0, 0.99).unwrap();
            assert!(lo as f64 <= iota && iota <= hi as f64);
        }
    }

    #[test]
    fn preference_range_scan_oracle() {
        let (lo, hi) = preference_range(100.0, 1.0212, 0.0, 1.0, 0.99).unwrap();
        let ok: Vec<u32> = (0..2000).filter(|&d| compute_udq(d as f64, 100.0, 1.0212, 0.0, 1.0) >= 0.99).collect();
        assert_eq!((lo, hi), (ok[0], *ok.last().unwrap()));
        assert!(lo < 100 && hi > 100);
    }
}
