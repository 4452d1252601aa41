//! Round loop, surrogate learner, baselines and metrics.
//!
//! The learner is multinomial softmax regression on Gaussian blobs, one blob
//! per category. It is cheap and convex, yet a skewed training mix still
//! visibly hurts it, which is all the selection experiments need.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::{mc_utility, preset_reward, settle, PaymentRule, Solver, TrueValues};
use crate::error::{param, Error, Result};
use crate::quality::{quality_per_iteration, udq_params, update_ledger, CategoryLedger};
use crate::rng::substream;
use crate::scenario::{gen_case1, gen_case2, sample_channels, Bid, ClientProfile, Hyperparameters, DEFAULT_CYCLES_PER_SAMPLE};
use crate::swm::{build_problem, solve_swm, SwmSolution};

// ---------------------------------------------------------------------------
// Surrogate task

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub f: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.f..(i + 1) * self.f]
    }

    fn push(&mut self, row: &[f64], y: usize) {
        self.x.extend_from_slice(row);
        self.y.push(y);
    }
}

/// Category-conditional Gaussian blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub means: Vec<Vec<f64>>,
    pub spread: f64,
    pub test: Dataset,
    seed: u64,
}

impl SynthTask {
    pub fn z(&self) -> usize {
        self.means.len()
    }

    pub fn f(&self) -> usize {
        self.test.f
    }

    /// `count` samples of category `z`, stream keyed by `(key, z)`.
    pub fn draw(&self, z: usize, count: u32, key: u64) -> Dataset {
        let mut rng = substream(self.seed, key, "samples", z as u64);
        let mut out = Dataset { f: self.f(), ..Dataset::default() };
        let mut row = vec![0.0; self.f()];
        for _ in 0..count {
            for (r, &m) in row.iter_mut().zip(&self.means[z]) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *r = m + self.spread * e;
            }
            out.push(&row, z);
        }
        out
    }

    /// Local dataset of one client.
    pub fn client_data(&self, profile: &ClientProfile) -> Dataset {
        let mut out = Dataset { f: self.f(), ..Dataset::default() };
        for (z, &d) in profile.dist.iter().enumerate() {
            let part = self.draw(z, d, 1 + profile.id as u64);
            out.x.extend(part.x);
            out.y.extend(part.y);
        }
        out
    }
}

/// Blob means on the unit sphere scaled by `separation`, with a balanced test set.
pub fn synth_task(z: usize, f: usize, test_per_cat: u32, separation: f64, spread: f64, seed: u64) -> Result<SynthTask> {
    if z < 2 {
        return Err(param("z", "need at least two categories"));
    }
    if f < 2 {
        return Err(param("features", "need at least two features"));
    }
    let mut rng = substream(seed, 0, "task", 0);
    let means = (0..z)
        .map(|_| {
            let v: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| separation * x / norm).collect()
        })
        .collect();
    let mut task = SynthTask { means, spread, test: Dataset { f, ..Dataset::default() }, seed };
    let mut test = Dataset { f, ..Dataset::default() };
    for c in 0..z {
        let part = task.draw(c, test_per_cat, 0);
        test.x.extend(part.x);
        test.y.extend(part.y);
    }
    task.test = test;
    Ok(task)
}

// ---------------------------------------------------------------------------
// Learner

/// Global model: weights `z x f` row-major plus a bias per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
    pub z: usize,
    pub f: usize,
    pub round: u64,
}

impl LearnerState {
    pub fn zeros(z: usize, f: usize) -> Self {
        Self { w: vec![0.0; z * f], bias: vec![0.0; z], z, f, round: 0 }
    }

    fn probs(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.w[k * self.f..(k + 1) * self.f];
            *o = self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        let mx = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for o in out.iter_mut() {
            *o = (*o - mx).exp();
            s += *o;
        }
        for o in out.iter_mut() {
            *o /= s;
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut p = vec![0.0; self.z];
        self.probs(x, &mut p);
        p.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b }).0
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len()).filter(|&i| self.predict(data.row(i)) == data.y[i]).count();
        hits as f64 / data.len() as f64
    }

    /// Mean cross-entropy over `idx`.
    pub fn loss(&self, data: &Dataset, idx: &[usize]) -> f64 {
        let mut p = vec![0.0; self.z];
        idx.iter()
            .map(|&i| {
                self.probs(data.row(i), &mut p);
                -p[data.y[i]].max(1e-300).ln()
            })
            .sum::<f64>()
            / idx.len().max(1) as f64
    }

    /// Gradient of [`LearnerState::loss`] with respect to `(w, bias)`.
    pub fn gradient(&self, data: &Dataset, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; self.z];
        let mut p = vec![0.0; self.z];
        let scale = 1.0 / idx.len().max(1) as f64;
        for &i in idx {
            let x = data.row(i);
            self.probs(x, &mut p);
            p[data.y[i]] -= 1.0;
            for k in 0..self.z {
                let r = p[k] * scale;
                gb[k] += r;
                for (g, &xv) in gw[k * self.f..(k + 1) * self.f].iter_mut().zip(x) {
                    *g += r * xv;
                }
            }
        }
        (gw, gb)
    }
}

/// `l` shuffled passes of mini-batch SGD; the input model is left untouched.
pub fn local_train(model: &LearnerState, data: &Dataset, l: u32, eta: f64, batch: usize, rng: &mut impl Rng) -> LearnerState {
    let mut m = model.clone();
    if l == 0 || eta == 0.0 || data.is_empty() {
        return m;
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for _ in 0..l {
        idx.shuffle(rng);
        for chunk in idx.chunks(batch.max(1)) {
            let (gw, gb) = m.gradient(data, chunk);
            for (w, g) in m.w.iter_mut().zip(&gw) {
                *w -= eta * g;
            }
            for (b, g) in m.bias.iter_mut().zip(&gb) {
                *b -= eta * g;
            }
        }
    }
    m
}

/// Weighted average with weights `q l D`. Returns `None` when no weight is positive.
pub fn aggregate(locals: &[(LearnerState, bool, u32, u64)]) -> Option<LearnerState> {
    let tau: Vec<f64> = locals.iter().map(|(_, q, l, d)| if *q { *l as f64 * *d as f64 } else { 0.0 }).collect();
    let total: f64 = tau.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let first = &locals[0].0;
    let mut out = LearnerState { w: vec![0.0; first.w.len()], bias: vec![0.0; first.z], ..first.clone() };
    for ((m, ..), &t) in locals.iter().zip(&tau) {
        if t == 0.0 {
            continue;
        }
        let a = t / total;
        for (o, v) in out.w.iter_mut().zip(&m.w) {
            *o += a * v;
        }
        for (o, v) in out.bias.iter_mut().zip(&m.bias) {
            *o += a * v;
        }
    }
    Some(out)
}

// ---------------------------------------------------------------------------
// Metrics

/// Discrepancy ratio per category and its mean.
///
/// The default divides each discrepancy by the dominant volume, so a balanced
/// ledger scores zero. `literal` uses `g_z / o_z` instead, which is infinite
/// wherever a category is dominant.
pub fn metric_dcd_ratio(ledger: &CategoryLedger, literal: bool) -> (Vec<f64>, f64) {
    let a: Vec<f64> = if literal {
        ledger.g.iter().zip(&ledger.o).map(|(&g, &o)| g as f64 / o as f64).collect()
    } else if ledger.g_dom == 0 {
        vec![0.0; ledger.g.len()]
    } else {
        ledger.o.iter().map(|&o| o as f64 / ledger.g_dom as f64).collect()
    };
    let mean = a.iter().sum::<f64>() / a.len().max(1) as f64;
    (a, mean)
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    Lcsfla,
    LcsflaBias,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Lcsfla => "lcsfla",
            Strategy::LcsflaBias => "lcsfla-bias",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Strategy::Random),
            "lcsfla" => Some(Strategy::Lcsfla),
            "lcsfla-bias" => Some(Strategy::LcsflaBias),
            _ => None,
        }
    }
}

/// How client data is partitioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Generator {
    Case1 { pool_per_client: u32, dirichlet_alpha: f64 },
    Case2 { z_hi: usize, d_hi: u32 },
}

/// Everything a simulated run needs besides its seed and strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub hyper: Hyperparameters,
    pub generator: Generator,
    pub rounds: u64,
    pub features: usize,
    pub separation: f64,
    pub spread: f64,
    pub test_per_cat: u32,
    pub batch: usize,
    /// Iterations each client of the random baseline runs.
    pub l_default: u32,
    /// Starting volume of the first category; later categories ramp down to zero.
    pub init_imbalance: f64,
    /// Chance that a winner walks away after paying its deposit.
    pub opt_out_prob: f64,
    pub literal_dcd: bool,
    pub cycles_per_sample: f64,
    /// Skip training; only selection, ledger and welfare are simulated.
    pub skip_training: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::default(),
            generator: Generator::Case2 { z_hi: 3, d_hi: 200 },
            rounds: 50,
            features: 16,
            separation: 3.5,
            spread: 1.0,
            test_per_cat: 200,
            batch: 32,
            l_default: 1,
            init_imbalance: 0.0,
            opt_out_prob: 0.0,
            literal_dcd: false,
            cycles_per_sample: DEFAULT_CYCLES_PER_SAMPLE,
            skip_training: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.rounds < 1 {
            return Err(param("rounds", "need at least one round"));
        }
        if !(0.0..=1.0).contains(&self.opt_out_prob) {
            return Err(param("opt_out_prob", "must lie in [0, 1]"));
        }
        if self.init_imbalance < 0.0 {
            return Err(param("init_imbalance", "must be non-negative"));
        }
        if self.l_default > self.hyper.l_max {
            return Err(param("l_default", "exceeds l_max"));
        }
        if self.batch == 0 {
            return Err(param("batch", "must be positive"));
        }
        Ok(())
    }

    pub fn population(&self, seed: u64) -> Result<Vec<ClientProfile>> {
        let h = &self.hyper;
        match self.generator {
            Generator::Case1 { pool_per_client, dirichlet_alpha } => gen_case1(h.m, h.z, pool_per_client, dirichlet_alpha, self.cycles_per_sample, seed),
            Generator::Case2 { z_hi, d_hi } => gen_case2(h.m, h.z, z_hi, d_hi, self.cycles_per_sample, seed),
        }
    }

    pub fn initial_ledger(&self) -> CategoryLedger {
        let z = self.hyper.z;
        let g = (0..z).map(|k| (self.init_imbalance * (z - 1 - k) as f64 / (z - 1) as f64).round() as u64).collect();
        CategoryLedger::from_counts(g, 0)
    }
}

/// Observations from one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub strategy: Strategy,
    pub accuracy: f64,
    pub a_z: Vec<f64>,
    pub a: f64,
    pub welfare: f64,
    pub energy_round: f64,
    pub energy_cum: f64,
    pub selected: Vec<usize>,
    pub iterations: Vec<u32>,
    pub opted_out: Vec<usize>,
    pub deposits: Vec<f64>,
    pub utilities: Vec<f64>,
    pub server_utility: f64,
    pub solve_count: usize,
    pub clamped_udq: u32,
    pub g: Vec<u64>,
    pub o: Vec<u64>,
    pub iota_t: f64,
    pub theta_t: f64,
    /// Aggregation had no positive weight; the model was kept.
    pub stalled: bool,
}

/// Mutable state carried between rounds.
#[derive(Debug, Clone)]
pub struct SimState {
    pub model: LearnerState,
    pub ledger: CategoryLedger,
    pub profiles: Vec<ClientProfile>,
    /// Distribution each client registered on first contact.
    pub registered: Vec<Option<Vec<u32>>>,
    pub energy_cum: f64,
    pub round: u64,
}

/// A prepared run: task, client data and initial state.
pub struct Simulation {
    pub cfg: SimConfig,
    pub seed: u64,
    pub strategy: Strategy,
    pub task: Option<SynthTask>,
    pub data: Vec<Dataset>,
    pub state: SimState,
}

impl Simulation {
    pub fn new(cfg: SimConfig, strategy: Strategy, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let profiles = cfg.population(seed)?;
        let (task, data) = if cfg.skip_training {
            (None, Vec::new())
        } else {
            let task = synth_task(cfg.hyper.z, cfg.features, cfg.test_per_cat, cfg.separation, cfg.spread, seed)?;
            let data = profiles.par_iter().map(|p| task.client_data(p)).collect();
            (Some(task), data)
        };
        let state = SimState {
            model: LearnerState::zeros(cfg.hyper.z, cfg.features),
            ledger: cfg.initial_ledger(),
            registered: vec![None; profiles.len()],
            profiles,
            energy_cum: 0.0,
            round: 0,
        };
        Ok(Self { cfg, seed, strategy, task, data, state })
    }

    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        (0..self.cfg.rounds).map(|_| self.step()).collect()
    }

    /// Advance one round.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let t = self.state.round + 1;
        let r = self.round_inner(t);
        r.map_err(|e| match e {
            Error::Infeasible(s) => Error::Infeasible(format!("round {t}: {s}")),
            Error::Degenerate(s) => Error::Degenerate(format!("round {t}: {s}")),
            other => other,
        })
    }

    fn round_inner(&mut self, t: u64) -> Result<RoundMetrics> {
        let cfg = &self.cfg;
        let hy = &cfg.hyper;
        let m = self.state.profiles.len();

        let channels = sample_channels(m, t, self.seed);

        for (reg, p) in self.state.registered.iter_mut().zip(&self.state.profiles) {
            reg.get_or_insert_with(|| p.dist.clone());
        }
        let bids: Vec<Option<Bid>> = self
            .state
            .profiles
            .iter()
            .zip(&channels.h)
            .zip(&self.state.registered)
            .map(|((p, &h), reg)| {
                let mut b = Bid::truthful(p, h, hy);
                b.declared_dist = reg.clone().unwrap_or_else(|| p.dist.clone());
                Some(b)
            })
            .collect();

        let declared: Vec<&[u32]> = bids.iter().map(|b| b.as_ref().map_or(&[][..], |b| b.declared_dist.as_slice())).collect();
        let params = udq_params(&self.state.ledger, &declared, hy)?;

        let standard = build_problem(&self.state.profiles, &bids, &params, hy, false)?;
        let truth = TrueValues { c_check: standard.c_check.clone(), e1: standard.e1.clone(), e2: standard.e2.clone() };
        let clamped: u32 = self
            .state
            .profiles
            .iter()
            .map(|p| quality_per_iteration(&p.dist, &params, hy.sigma, 1.0, hy.alpha_udq, hy.mu).clamped)
            .sum();

        let (solution, deposits) = match self.strategy {
            Strategy::Random => (self.random_selection(t)?, None),
            Strategy::Lcsfla => {
                let sol = solve_swm(&standard)?;
                (sol, Some(standard.clone()))
            }
            Strategy::LcsflaBias => {
                let biased = build_problem(&self.state.profiles, &bids, &params, hy, true)?;
                let sol = solve_swm(&biased)?;
                (sol, Some(biased))
            }
        };

        let (rewards, kappa, solve_count) = match &deposits {
            Some(problem) => {
                let own = TrueValues { c_check: problem.c_check.clone(), e1: problem.e1.clone(), e2: problem.e2.clone() };
                let out = settle(problem, solution.clone(), &own, hy, Solver::BranchAndBound, PaymentRule::Vcg)?;
                (out.reward, out.deposit, out.solve_count)
            }
            None => {
                let r = (0..m).map(|i| preset_reward(solution.q[i], solution.l[i], hy.r0, hy.reward_per_iteration)).collect();
                (r, vec![0.0; m], 0)
            }
        };

        let mut opted_out = Vec::new();
        if cfg.opt_out_prob > 0.0 {
            let mut rng = substream(self.seed, t, "opt-out", 0);
            for i in solution.selected() {
                if rng.random::<f64>() < cfg.opt_out_prob {
                    opted_out.push(i);
                }
            }
        }
        let trains: Vec<bool> = (0..m).map(|i| solution.q[i] && solution.l[i] > 0 && !opted_out.contains(&i)).collect();

        if let Some(_task) = &self.task {
            let model = &self.state.model;
            let data = &self.data;
            let winners: Vec<usize> = (0..m).filter(|&i| trains[i]).collect();
            let locals: Vec<(LearnerState, bool, u32, u64)> = winners
                .par_iter()
                .map(|&i| {
                    let mut rng = substream(self.seed, t, "sgd", i as u64);
                    let lm = local_train(model, &data[i], solution.l[i], hy.eta, cfg.batch, &mut rng);
                    (lm, true, solution.l[i], data[i].len() as u64)
                })
                .collect();
            match aggregate(&locals) {
                Some(next) => self.state.model = LearnerState { round: t, ..next },
                None => self.state.model.round = t,
            }
        }
        let stalled = !trains.iter().any(|&x| x);

        let trained: Vec<(bool, u32)> = (0..m).map(|i| (trains[i], solution.l[i])).collect();
        self.state.ledger = update_ledger(&self.state.ledger, &trained, &self.state.profiles)?;
        for i in solution.selected() {
            self.state.profiles[i].v_m += 1;
        }

        // Everything below is accounted with true data and the standard discount.
        let (quality, energy) = truth.realize(&solution, hy.s_rate);
        let mut utilities = vec![0.0; m];
        let mut energy_round = 0.0;
        let mut welfare = 0.0;
        let mut server = 0.0;
        for i in 0..m {
            if !solution.q[i] {
                continue;
            }
            if opted_out.contains(&i) {
                utilities[i] = -kappa[i];
                server += kappa[i];
                continue;
            }
            utilities[i] = mc_utility(true, rewards[i], energy[i], kappa[i]);
            energy_round += energy[i];
            welfare += quality[i] - energy[i];
            server += quality[i] - rewards[i] + kappa[i];
        }
        self.state.energy_cum += energy_round;
        self.state.round = t;

        let (a_z, a) = metric_dcd_ratio(&self.state.ledger, cfg.literal_dcd);
        let accuracy = self.task.as_ref().map_or(f64::NAN, |task| self.state.model.accuracy(&task.test));
        Ok(RoundMetrics {
            round: t,
            strategy: self.strategy,
            accuracy,
            a_z,
            a,
            welfare,
            energy_round,
            energy_cum: self.state.energy_cum,
            selected: solution.selected().collect(),
            iterations: solution.selected().map(|i| solution.l[i]).collect(),
            opted_out,
            deposits: solution.selected().map(|i| kappa[i]).collect(),
            utilities: solution.selected().map(|i| utilities[i]).collect(),
            server_utility: server,
            solve_count,
            clamped_udq: clamped,
            g: self.state.ledger.g.clone(),
            o: self.state.ledger.o.clone(),
            iota_t: params.iota_t,
            theta_t: params.theta_t,
            stalled,
        })
    }

    fn random_selection(&self, t: u64) -> Result<SwmSolution> {
        let hy = &self.cfg.hyper;
        let m = self.state.profiles.len();
        let chosen = strategy_random(m, hy.n, &mut substream(self.seed, t, "random", 0));
        let mut q = vec![false; m];
        let mut l = vec![0; m];
        let mut b = vec![0.0; m];
        for &i in &chosen {
            q[i] = true;
            l[i] = self.cfg.l_default;
            b[i] = hy.b_max / hy.n as f64;
        }
        Ok(SwmSolution {
            q,
            l,
            b,
            welfare: f64::NAN,
            relaxation_bound: f64::NAN,
            gap: f64::NAN,
            nodes: 0,
            status: crate::swm::SolveStatus::Optimal,
        })
    }
}

/// Uniform `n`-subset of `0..m`, sorted.
pub fn strategy_random(m: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut v: Vec<usize> = rand::seq::index::sample(rng, m, n).into_iter().collect();
    v.sort_unstable();
    v
}

/// First round whose accuracy reaches `target`, and the energy spent by then.
pub fn time_to_accuracy(metrics: &[RoundMetrics], target: f64) -> (Option<u64>, f64) {
    match metrics.iter().find(|m| m.accuracy >= target) {
        Some(m) => (Some(m.round), m.energy_cum),
        None => (None, metrics.last().map_or(0.0, |m| m.energy_cum)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Dataset {
        Dataset { x: vec![0.5, -1.0, 1.5, 0.2, -0.3, 0.8], y: vec![0, 2, 1], f: 2 }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = tiny();
        let mut s = LearnerState::zeros(3, 2);
        s.w = vec![0.1, -0.2, 0.3, 0.05, -0.4, 0.25];
        s.bias = vec![0.05, -0.1, 0.2];
        let idx = [0, 1, 2];
        let (gw, gb) = s.gradient(&data, &idx);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..s.w.len() {
            let (mut a, mut b) = (s.clone(), s.clone());
            a.w[k] += h;
            b.w[k] -= h;
            let fd = (a.loss(&data, &idx) - b.loss(&data, &idx)) / (2.0 * h);
            worst = worst.max((fd - gw[k]).abs() / fd.abs().max(gw[k].abs()).max(1e-12));
        }
        for k in 0..3 {
            let (mut a, mut b) = (s.clone(), s.clone());
            a.bias[k] += h;
            b.bias[k] -= h;
            let fd = (a.loss(&data, &idx) - b.loss(&data, &idx)) / (2.0 * h);
            worst = worst.max((fd - gb[k]).abs() / fd.abs().max(gb[k].abs()).max(1e-12));
        }
        assert!(worst <= 1e-5, "{worst}");
    }

    #[test]
    fn no_op_training() {
        let data = tiny();
        let s = LearnerState::zeros(3, 2);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(local_train(&s, &data, 0, 0.1, 2, &mut r), s);
        assert_eq!(local_train(&s, &data, 3, 0.0, 2, &mut r), s);
        assert_ne!(local_train(&s, &data, 1, 0.1, 2, &mut r), s);
    }

    #[test]
    fn aggregation_rules() {
        let mut a = LearnerState::zeros(2, 2);
        a.w = vec![1.0, 2.0, 3.0, 4.0];
        let mut b = LearnerState::zeros(2, 2);
        b.w = vec![3.0, 2.0, 1.0, 0.0];
        assert_eq!(aggregate(&[(a.clone(), true, 1, 10)]).unwrap(), a);
        assert_eq!(aggregate(&[(a.clone(), true, 1, 10), (a.clone(), true, 2, 7)]).unwrap().w, a.w);
        let avg = aggregate(&[(a.clone(), true, 1, 100), (b.clone(), true, 2, 50)]).unwrap();
        assert_eq!(avg.w, vec![2.0, 2.0, 2.0, 2.0]);
        assert!(aggregate(&[(a, false, 1, 10), (b, true, 0, 10)]).is_none());
    }

    #[test]
    fn dcd_ratio_examples() {
        let l = CategoryLedger::from_counts(vec![10, 4, 6], 1);
        let (a_z, a) = metric_dcd_ratio(&l, false);
        assert_eq!(a_z, vec![0.0, 0.6, 0.4]);
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
        let balanced = CategoryLedger::from_counts(vec![5, 5], 1);
        assert_eq!(metric_dcd_ratio(&balanced, false).1, 0.0);
        let (lit, mean) = metric_dcd_ratio(&l, true);
        assert!(lit[0].is_infinite() && !mean.is_finite());
    }

    #[test]
    fn random_strategy() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(strategy_random(5, 5, &mut r), vec![0, 1, 2, 3, 4]);
        let a = strategy_random(50, 7, &mut ChaCha8Rng::seed_from_u64(9));
        let b = strategy_random(50, 7, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn separable_limit() {
        let task = synth_task(4, 3, 50, 3.0, 1e-9, 2).unwrap();
        let mut s = LearnerState::zeros(4, 3);
        for (k, m) in task.means.iter().enumerate() {
            let n2 = m.iter().map(|x| x * x).sum::<f64>();
            s.w[k * 3..(k + 1) * 3].copy_from_slice(m);
            s.bias[k] = -0.5 * n2;
        }
        assert_eq!(s.accuracy(&task.test), 1.0);
        assert_eq!(task, synth_task(4, 3, 50, 3.0, 1e-9, 2).unwrap());
    }

    #[test]
    fn initial_ledger_ramp() {
        let cfg = SimConfig { init_imbalance: 900.0, hyper: Hyperparameters { z: 4, ..Default::default() }, ..Default::default() };
        assert_eq!(cfg.initial_ledger().g, vec![900, 600, 300, 0]);
    }
}
