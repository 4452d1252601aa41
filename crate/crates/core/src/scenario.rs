//! Configuration, client populations and channel draws.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::substream;

/// Cycles needed to process one sample.
pub const DEFAULT_CYCLES_PER_SAMPLE: f64 = 2e6;
/// Channel coefficients are drawn uniformly from this range.
pub const CHANNEL_RANGE: (f64, f64) = (1e6, 1e7);
/// Smallest category size a uniform-category client can hold.
pub const CASE2_MIN_SIZE: u32 = 10;

/// Mechanism and physical constants for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub alpha_udq: f64,
    pub mu: f64,
    pub vartheta: f64,
    pub beta: f64,
    pub sigma: f64,
    pub r0: f64,
    pub epsilon_pref: f64,
    pub iota_min: u32,
    pub n: usize,
    pub m: usize,
    pub z: usize,
    pub l_max: u32,
    pub t_f: f64,
    pub s_rate: f64,
    pub model_bits: f64,
    pub zeta: f64,
    pub b_max: f64,
    pub b_min: f64,
    /// Per-round energy cap in joules; `None` leaves it out of the program.
    pub e_budget: Option<f64>,
    pub eta: f64,
    /// Pay `r0` per local iteration instead of per round.
    pub reward_per_iteration: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha_udq: 2.0,
            mu: 0.2,
            vartheta: 10.0,
            beta: 0.95,
            sigma: 1.0,
            r0: 200.0,
            epsilon_pref: 0.99,
            iota_min: 1,
            n: 10,
            m: 100,
            z: 10,
            l_max: 5,
            t_f: 60.0,
            s_rate: 2e6,
            model_bits: 8e6,
            zeta: 1e-28,
            b_max: 1e7,
            b_min: 1e3,
            e_budget: None,
            eta: 0.05,
            reward_per_iteration: true,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_udq", self.alpha_udq),
            ("sigma", self.sigma),
            ("t_f", self.t_f),
            ("s_rate", self.s_rate),
            ("model_bits", self.model_bits),
            ("zeta", self.zeta),
            ("b_max", self.b_max),
            ("b_min", self.b_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(param(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(param("beta", "must lie in (0, 1)"));
        }
        if !(self.epsilon_pref > 0.0 && self.epsilon_pref < 1.0) {
            return Err(param("epsilon_pref", "must lie in (0, 1)"));
        }
        if !(self.mu >= 0.0 && self.mu < 1.0) {
            return Err(param("mu", "must lie in [0, 1)"));
        }
        if !(self.vartheta > 1.0) {
            return Err(param("vartheta", "must exceed 1"));
        }
        if self.r0 < 0.0 || !self.r0.is_finite() {
            return Err(param("r0", "must be non-negative"));
        }
        if self.iota_min < 1 {
            return Err(param("iota_min", "must be at least 1"));
        }
        if self.n == 0 || self.n > self.m {
            return Err(param("n", format!("need 1 <= n <= m, got n={} m={}", self.n, self.m)));
        }
        if self.z < 2 {
            return Err(param("z", "need at least two categories"));
        }
        if self.l_max < 1 {
            return Err(param("l_max", "must be at least 1"));
        }
        if self.n as f64 * self.b_min > self.b_max {
            return Err(param("b_min", "n * b_min exceeds b_max"));
        }
        if let Some(e) = self.e_budget {
            if !(e > 0.0) {
                return Err(param("e_budget", "must be positive when set"));
            }
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(param("eta", "must be non-negative"));
        }
        Ok(())
    }
}

/// One mobile client's private data and hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    /// Samples held per category.
    pub dist: Vec<u32>,
    /// CPU cycles per sample.
    pub a_m: f64,
    /// Rounds this client has been selected so far.
    pub v_m: u32,
}

impl ClientProfile {
    pub fn new(id: usize, dist: Vec<u32>, a_m: f64) -> Self {
        Self { id, dist, a_m, v_m: 0 }
    }

    /// Total local dataset size.
    pub fn total(&self) -> u64 {
        self.dist.iter().map(|&d| d as u64).sum()
    }

    /// Number of categories the client holds at least one sample of.
    pub fn categories(&self) -> usize {
        self.dist.iter().filter(|&&d| d > 0).count()
    }

    /// `zeta (a D)^3 / t_f^2`: joules per cubed local iteration.
    pub fn comp_energy_coeff(&self, zeta: f64, t_f: f64) -> f64 {
        crate::energy::comp_energy(zeta, self.a_m, self.total() as f64, 1, t_f)
    }
}

/// What a client reports to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub declared_comp_energy_coeff: f64,
    pub declared_h: f64,
    pub declared_dist: Vec<u32>,
}

impl Bid {
    pub fn truthful(profile: &ClientProfile, h: f64, hyper: &Hyperparameters) -> Self {
        Self {
            declared_comp_energy_coeff: profile.comp_energy_coeff(hyper.zeta, hyper.t_f),
            declared_h: h,
            declared_dist: profile.dist.clone(),
        }
    }
}

/// Normalized channel coefficients for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub h: Vec<f64>,
}

/// Round `x` to integers that sum to `total`, giving leftovers to the largest
/// fractional parts (lowest index first on ties).
pub fn largest_remainder(shares: &[f64], total: u32) -> Vec<u32> {
    let sum: f64 = shares.iter().sum();
    if shares.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0) {
        let mut out = vec![0; shares.len()];
        out[0] = total;
        return out;
    }
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut out: Vec<u32> = exact.iter().map(|e| e.floor() as u32).collect();
    let assigned: u32 = out.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Dirichlet-partitioned clients: each gets `pool_per_client` samples split by
/// proportions drawn from `Dirichlet(dirichlet_alpha * 1_Z)`.
pub fn gen_case1(
    m: usize,
    z: usize,
    pool_per_client: u32,
    dirichlet_alpha: f64,
    a_m: f64,
    seed: u64,
) -> Result<Vec<ClientProfile>> {
    if m < 1 {
        return Err(param("m", "need at least one client"));
    }
    if z < 2 {
        return Err(param("z", "need at least two categories"));
    }
    if !(dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite()) {
        return Err(param("dirichlet_alpha", format!("must be positive, got {dirichlet_alpha}")));
    }
    let gamma = Gamma::new(dirichlet_alpha, 1.0).map_err(|e| param("dirichlet_alpha", e.to_string()))?;
    Ok((0..m)
        .map(|id| {
            let mut rng = substream(seed, 0, "case1", id as u64);
            let shares: Vec<f64> = (0..z).map(|_| gamma.sample(&mut rng)).collect();
            ClientProfile::new(id, largest_remainder(&shares, pool_per_client), a_m)
        })
        .collect())
}

/// Uniform-category clients: `z_m ~ U{1..z_hi}` distinct categories, each of
/// size `U{10..d_hi}`.
pub fn gen_case2(m: usize, z: usize, z_hi: usize, d_hi: u32, a_m: f64, seed: u64) -> Result<Vec<ClientProfile>> {
    if m < 1 {
        return Err(param("m", "need at least one client"));
    }
    if z_hi < 1 || z_hi > z {
        return Err(param("z_hi", format!("need 1 <= z_hi <= {z}, got {z_hi}")));
    }
    if d_hi < CASE2_MIN_SIZE {
        return Err(param("d_hi", format!("must be at least {CASE2_MIN_SIZE}")));
    }
    let sizes = Uniform::new_inclusive(CASE2_MIN_SIZE, d_hi).expect("checked range");
    Ok((0..m)
        .map(|id| {
            let mut rng = substream(seed, 0, "case2", id as u64);
            let zm = rng.random_range(1..=z_hi);
            let chosen = rand::seq::index::sample(&mut rng, z, zm);
            let mut dist = vec![0u32; z];
            let mut cats: Vec<usize> = chosen.into_iter().collect();
            cats.sort_unstable();
            for c in cats {
                dist[c] = sizes.sample(&mut rng);
            }
            ClientProfile::new(id, dist, a_m)
        })
        .collect())
}

/// Channel coefficients for every client in `round`.
pub fn sample_channels(m: usize, round: u64, seed: u64) -> ChannelState {
    let mut rng = substream(seed, round, "channel", 0);
    let dist = Uniform::new_inclusive(CHANNEL_RANGE.0, CHANNEL_RANGE.1).expect("static range");
    ChannelState { h: (0..m).map(|_| dist.sample(&mut rng)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparameters::default().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_beta_and_n() {
        let mut h = Hyperparameters { beta: 1.0, ..Default::default() };
        assert!(h.validate().is_err());
        h.beta = 0.9;
        h.n = 200;
        assert!(h.validate().is_err());
    }

    #[test]
    fn largest_remainder_keeps_total() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 7), vec![7, 0]);
        assert_eq!(largest_remainder(&[0.2, 0.8], 100), vec![20, 80]);
    }

    #[test]
    fn case1_is_deterministic_and_exact() {
        let a = gen_case1(20, 10, 500, 0.3, 2e6, 9).unwrap();
        let b = gen_case1(20, 10, 500, 0.3, 2e6, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.total() == 500));
    }

    #[test]
    fn case1_concentration_limit() {
        let cs = gen_case1(50, 2, 100, 1e6, 2e6, 1).unwrap();
        for c in cs {
            assert!((c.dist[0] as i64 - 50).abs() <= 1, "{:?}", c.dist);
        }
    }

    #[test]
    fn case1_rejects_bad_alpha() {
        assert!(gen_case1(3, 4, 10, 0.0, 2e6, 1).is_err());
        assert!(gen_case1(3, 4, 10, -1.0, 2e6, 1).is_err());
    }

    #[test]
    fn case2_degenerate_ranges() {
        let one = gen_case2(40, 10, 1, 200, 2e6, 3).unwrap();
        assert!(one.iter().all(|c| c.categories() == 1));
        let flat = gen_case2(40, 10, 5, 10, 2e6, 3).unwrap();
        assert!(flat.iter().flat_map(|c| c.dist.iter()).all(|&d| d == 0 || d == 10));
        assert!(gen_case2(4, 10, 11, 100, 2e6, 1).is_err());
    }

    #[test]
    fn case2_envelope() {
        let cs = gen_case2(500, 10, 9, 200, 2e6, 5).unwrap();
        for c in &cs {
            let d = c.total();
            assert!((10..=1800).contains(&d));
            assert!(d <= 2000);
            assert!(c.dist.iter().all(|&x| x == 0 || x >= CASE2_MIN_SIZE));
        }
    }

    #[test]
    fn channels_in_range_and_keyed() {
        let c = sample_channels(200, 4, 11);
        assert!(c.h.iter().all(|&h| (1e6..=1e7).contains(&h)));
        let _other = sample_channels(200, 5, 11);
        assert_eq!(c, sample_channels(200, 4, 11));
    }

    #[test]
    fn channel_mean() {
        let c = sample_channels(100_000, 0, 2);
        let mean = c.h.iter().sum::<f64>() / c.h.len() as f64;
        assert!((mean - 5.5e6).abs() / 5.5e6 < 0.01, "{mean}");
    }
}
