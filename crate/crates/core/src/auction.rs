//! Rewards, deposits, utilities and incentive audits.
//!
//! Each winner pays a deposit equal to the welfare the others lose because it
//! takes part, net of its own reward. Its utility is therefore its marginal
//! contribution to welfare and does not depend on the reward level.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{quality_per_iteration, CategoryLedger, UdqParams, udq_params};
use crate::rng::substream;
use crate::scenario::{gen_case2, sample_channels, Bid, ClientProfile, Hyperparameters};
use crate::swm::{build_problem, oracle_swm, solve_swm, upload_cost, SwmProblem, SwmSolution};

/// Which exact solver settles the auction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    BranchAndBound,
    Oracle,
}

impl Solver {
    pub fn solve(self, p: &SwmProblem) -> Result<SwmSolution> {
        match self {
            Solver::BranchAndBound => solve_swm(p),
            Solver::Oracle => oracle_swm(p),
        }
    }
}

/// How winners are paid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaymentRule {
    /// Preset reward minus the externality deposit.
    Vcg,
    /// Reimburse the declared energy plus the preset reward, no deposit.
    /// Not truthful; used to check that the audit can see a violation.
    PayAsBid,
}

/// Per-client data the mechanism never sees directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueValues {
    /// Quality per local iteration the server actually receives.
    pub c_check: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

impl TrueValues {
    /// Realized quality and energy of every client under `sol`.
    pub fn realize(&self, sol: &SwmSolution, s_rate: f64) -> (Vec<f64>, Vec<f64>) {
        let m = sol.q.len();
        let mut c = vec![0.0; m];
        let mut e = vec![0.0; m];
        for i in sol.selected() {
            let l = sol.l[i] as f64;
            c[i] = self.c_check[i] * l;
            e[i] = self.e1[i] * l * l * l + upload_cost(self.e2[i], s_rate, sol.b[i], l);
        }
        (c, e)
    }
}

/// Settlement of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub solution: SwmSolution,
    pub reward: Vec<f64>,
    pub deposit: Vec<f64>,
    pub utility: Vec<f64>,
    /// Realized quality per client.
    pub quality: Vec<f64>,
    /// True energy per client.
    pub energy: Vec<f64>,
    pub server_utility: f64,
    pub welfare: f64,
    /// Welfare of the best selection without each winner.
    pub hat_welfare: Vec<f64>,
    pub solve_count: usize,
    /// Some re-solve without a winner had fewer than `n` clients left.
    pub hat_infeasible: bool,
}

/// `q r0`, or `q l r0` when paying per iteration.
pub fn preset_reward(q: bool, l: u32, r0: f64, per_iteration: bool) -> f64 {
    match (q, per_iteration) {
        (false, _) => 0.0,
        (true, true) => l as f64 * r0,
        (true, false) => r0,
    }
}

pub fn mc_utility(q: bool, r: f64, e_true: f64, kappa: f64) -> f64 {
    if q {
        r - e_true - kappa
    } else {
        -kappa
    }
}

pub fn cs_utility(q: &[bool], c: &[f64], r: &[f64], kappa: &[f64]) -> f64 {
    (0..q.len()).map(|m| if q[m] { c[m] - r[m] } else { 0.0 } + kappa[m]).sum()
}

pub fn social_welfare(q: &[bool], c: &[f64], e: &[f64]) -> f64 {
    (0..q.len()).filter(|&m| q[m]).map(|m| c[m] - e[m]).sum()
}

/// Deposits and their re-solves.
#[derive(Debug, Clone, PartialEq)]
pub struct Deposits {
    pub kappa: Vec<f64>,
    pub hat_welfare: Vec<f64>,
    pub solves: usize,
    pub hat_infeasible: bool,
}

/// Deposit of every winner from a re-solve without it. `own_quality` is the
/// quality each winner actually delivers under `full`.
pub fn compute_deposits(full: &SwmSolution, problem: &SwmProblem, rewards: &[f64], own_quality: &[f64], solver: Solver) -> Result<Deposits> {
    let m = problem.len();
    let winners: Vec<usize> = full.selected().collect();
    let declared: Vec<f64> = (0..m)
        .map(|i| {
            if !full.q[i] {
                return 0.0;
            }
            let l = full.l[i] as f64;
            let e = problem.e1[i] * l * l * l + upload_cost(problem.e2[i], problem.s_rate, full.b[i], l);
            problem.c_check[i] * l - e
        })
        .collect();
    let total: f64 = declared.iter().sum();
    let hats: Vec<Result<Option<f64>>> = winners
        .par_iter()
        .map(|&w| {
            let sub = problem.without(w);
            let left = sub.eligible.iter().filter(|&&e| e).count();
            if left < sub.n {
                return Ok(None);
            }
            solver.solve(&sub).map(|s| Some(s.welfare))
        })
        .collect();
    let mut kappa = vec![0.0; m];
    let mut hat_welfare = vec![0.0; m];
    let mut hat_infeasible = false;
    for (&w, hat) in winners.iter().zip(hats) {
        let hat = match hat? {
            Some(v) => v,
            None => {
                hat_infeasible = true;
                0.0
            }
        };
        hat_welfare[w] = hat;
        kappa[w] = hat - (total - declared[w]) - (own_quality[w] - rewards[w]);
    }
    Ok(Deposits { kappa, hat_welfare, solves: winners.len(), hat_infeasible })
}

/// Solve, pay and settle one round.
pub fn run_auction(problem: &SwmProblem, truth: &TrueValues, hyper: &Hyperparameters, solver: Solver, rule: PaymentRule) -> Result<AuctionOutcome> {
    let solution = solver.solve(problem)?;
    settle(problem, solution, truth, hyper, solver, rule)
}

/// Settle a round whose selection is already known.
pub fn settle(problem: &SwmProblem, solution: SwmSolution, truth: &TrueValues, hyper: &Hyperparameters, solver: Solver, rule: PaymentRule) -> Result<AuctionOutcome> {
    let m = problem.len();
    if truth.c_check.len() != m || truth.e1.len() != m || truth.e2.len() != m {
        return Err(Error::Dimension("true values differ in length from the problem".into()));
    }
    let (quality, energy) = truth.realize(&solution, problem.s_rate);
    let mut reward: Vec<f64> = (0..m).map(|i| preset_reward(solution.q[i], solution.l[i], hyper.r0, hyper.reward_per_iteration)).collect();
    let (deposit, hat_welfare, solves, hat_infeasible) = match rule {
        PaymentRule::Vcg => {
            let d = compute_deposits(&solution, problem, &reward, &quality, solver)?;
            (d.kappa, d.hat_welfare, d.solves, d.hat_infeasible)
        }
        PaymentRule::PayAsBid => {
            for i in solution.selected() {
                let l = solution.l[i] as f64;
                reward[i] += problem.e1[i] * l * l * l + upload_cost(problem.e2[i], problem.s_rate, solution.b[i], l);
            }
            (vec![0.0; m], vec![0.0; m], 0, false)
        }
    };
    let utility: Vec<f64> = (0..m).map(|i| mc_utility(solution.q[i], reward[i], energy[i], deposit[i])).collect();
    let server_utility = cs_utility(&solution.q, &quality, &reward, &deposit);
    let welfare = social_welfare(&solution.q, &quality, &energy);
    Ok(AuctionOutcome {
        solution,
        reward,
        deposit,
        utility,
        quality,
        energy,
        server_utility,
        welfare,
        hat_welfare,
        solve_count: 1 + solves,
        hat_infeasible,
    })
}

// ---------------------------------------------------------------------------
// Audits

/// A bid perturbation applied to a single client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Misreport {
    CompEnergy(f64),
    Channel(f64),
    Distribution(f64),
}

impl Misreport {
    /// Every perturbation the audit tries.
    pub fn all() -> Vec<Misreport> {
        let mut v = Vec::new();
        for f in [0.25, 0.5, 2.0, 4.0] {
            v.push(Misreport::CompEnergy(f));
        }
        for f in [0.25, 0.5, 2.0, 4.0] {
            v.push(Misreport::Channel(f));
        }
        for f in [0.5, 2.0] {
            v.push(Misreport::Distribution(f));
        }
        v
    }

    pub fn apply(&self, bid: &Bid) -> Bid {
        let mut b = bid.clone();
        match *self {
            Misreport::CompEnergy(f) => b.declared_comp_energy_coeff *= f,
            Misreport::Channel(f) => b.declared_h *= f,
            Misreport::Distribution(f) => {
                b.declared_dist = b.declared_dist.iter().map(|&d| (d as f64 * f).round() as u32).collect();
            }
        }
        b
    }

    pub fn label(&self) -> String {
        match self {
            Misreport::CompEnergy(f) => format!("comp_energy_x{f}"),
            Misreport::Channel(f) => format!("channel_x{f}"),
            Misreport::Distribution(f) => format!("distribution_x{f}"),
        }
    }
}

/// One self-contained single-round market.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditScenario {
    pub seed: u64,
    pub profiles: Vec<ClientProfile>,
    pub h: Vec<f64>,
    pub ledger: CategoryLedger,
    pub hyper: Hyperparameters,
}

impl AuditScenario {
    /// A random small market. Sizes stay within the oracle's reach.
    pub fn generate(seed: u64, max_m: usize, max_n: usize, l_max: u32) -> Result<Self> {
        let mut r = substream(seed, 0, "audit", 0);
        let m = r.random_range(1..=max_m.max(1));
        let n = r.random_range(1..=max_n.max(1).min(m));
        let z = r.random_range(2..=6);
        let z_hi = r.random_range(1..=z);
        let d_hi = r.random_range(10..=400);
        let mut profiles = gen_case2(m, z, z_hi, d_hi, 2e6, seed)?;
        for p in profiles.iter_mut() {
            p.v_m = r.random_range(0..6);
        }
        let h = sample_channels(m, 0, seed).h;
        let g: Vec<u64> = (0..z).map(|_| r.random_range(0..2000)).collect();
        let hyper = Hyperparameters {
            n,
            m,
            z,
            l_max,
            // Spread quality and computation cost over several decades so
            // that energy actually shapes the allocation in some markets.
            sigma: 10f64.powf(r.random_range(-3.0..0.0)),
            zeta: 1e-28 * 10f64.powf(r.random_range(0.0..3.0)),
            ..Hyperparameters::default()
        };
        Ok(Self { seed, profiles, h, ledger: CategoryLedger::from_counts(g, 1), hyper })
    }

    pub fn truthful_bids(&self) -> Vec<Bid> {
        self.profiles.iter().zip(&self.h).map(|(p, &h)| Bid::truthful(p, h, &self.hyper)).collect()
    }

    pub fn params(&self, bids: &[Bid]) -> Result<UdqParams> {
        let views: Vec<&[u32]> = bids.iter().map(|b| b.declared_dist.as_slice()).collect();
        udq_params(&self.ledger, &views, &self.hyper)
    }

    pub fn truth(&self, params: &UdqParams) -> TrueValues {
        let hy = &self.hyper;
        TrueValues {
            c_check: self
                .profiles
                .iter()
                .map(|p| quality_per_iteration(&p.dist, params, hy.sigma, hy.beta.powi(p.v_m as i32), hy.alpha_udq, hy.mu).per_iteration)
                .collect(),
            e1: self.profiles.iter().map(|p| p.comp_energy_coeff(hy.zeta, hy.t_f)).collect(),
            e2: self.h.iter().map(|&h| hy.model_bits / (h * hy.s_rate)).collect(),
        }
    }

    /// Settle the market with the given bids; calibration comes from `params`.
    pub fn settle(&self, bids: &[Bid], params: &UdqParams, solver: Solver, rule: PaymentRule) -> Result<AuctionOutcome> {
        let wrapped: Vec<Option<Bid>> = bids.iter().cloned().map(Some).collect();
        let problem = build_problem(&self.profiles, &wrapped, params, &self.hyper, false)?;
        run_auction(&problem, &self.truth(params), &self.hyper, solver, rule)
    }
}

/// Audit settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub scenarios: usize,
    pub first_seed: u64,
    pub max_m: usize,
    pub max_n: usize,
    pub l_max: u32,
    pub strategies: Vec<Misreport>,
    pub rule: PaymentRule,
    /// Recompute the shared quality calibration from the misreported bids too.
    pub recalibrate: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            scenarios: 200,
            first_seed: 0,
            max_m: 6,
            max_n: 3,
            l_max: 3,
            strategies: Misreport::all(),
            rule: PaymentRule::Vcg,
            recalibrate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub seed: u64,
    pub client: usize,
    pub strategy: Option<String>,
    pub amount: f64,
}

/// Summary of an audit sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub scenarios: usize,
    pub clients: usize,
    pub misreports: usize,
    pub min_ir_margin: f64,
    pub ir_violations: usize,
    pub max_ic_gain: f64,
    pub ic_violations: usize,
    pub worst_ir: Option<Violation>,
    pub worst_ic: Option<Violation>,
    pub max_budget_residual: f64,
    pub solve_count_mismatches: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.ir_violations == 0 && self.ic_violations == 0 && self.solve_count_mismatches == 0
    }
}

pub const AUDIT_TOL: f64 = 1e-9;

struct ScenarioResult {
    clients: usize,
    misreports: usize,
    ir: (f64, Option<Violation>),
    ic: (f64, Option<Violation>),
    ir_violations: usize,
    ic_violations: usize,
    budget: f64,
    count_bad: bool,
}

fn audit_one(seed: u64, cfg: &AuditConfig, ic: bool) -> Result<ScenarioResult> {
    let sc = AuditScenario::generate(seed, cfg.max_m, cfg.max_n, cfg.l_max)?;
    let bids = sc.truthful_bids();
    let params = sc.params(&bids)?;
    let base = sc.settle(&bids, &params, Solver::Oracle, cfg.rule)?;
    let m = sc.profiles.len();
    let mut out = ScenarioResult {
        clients: m,
        misreports: 0,
        ir: (f64::INFINITY, None),
        ic: (f64::NEG_INFINITY, None),
        ir_violations: 0,
        ic_violations: 0,
        budget: (base.server_utility + base.utility.iter().sum::<f64>() - base.welfare).abs(),
        count_bad: cfg.rule == PaymentRule::Vcg && base.solve_count != 1 + base.solution.selected().count(),
    };
    for (i, &u) in base.utility.iter().enumerate() {
        if u < out.ir.0 {
            out.ir = (u, Some(Violation { seed, client: i, strategy: None, amount: u }));
        }
        if u < -AUDIT_TOL {
            out.ir_violations += 1;
        }
    }
    if !ic {
        return Ok(out);
    }
    for client in 0..m {
        for s in &cfg.strategies {
            let mut lied = bids.clone();
            lied[client] = s.apply(&bids[client]);
            let p = if cfg.recalibrate { sc.params(&lied)? } else { params.clone() };
            let outcome = sc.settle(&lied, &p, Solver::Oracle, cfg.rule)?;
            // Accounting uses what the client really delivers and spends.
            let truth = sc.truth(&p);
            let sol = &outcome.solution;
            let (_, e) = truth.realize(sol, sc.hyper.s_rate);
            let u = mc_utility(sol.q[client], outcome.reward[client], e[client], outcome.deposit[client]);
            let gain = u - base.utility[client];
            out.misreports += 1;
            if gain > out.ic.0 {
                out.ic = (gain, Some(Violation { seed, client, strategy: Some(s.label()), amount: gain }));
            }
            if gain > AUDIT_TOL {
                out.ic_violations += 1;
            }
        }
    }
    Ok(out)
}

fn merge(results: Vec<ScenarioResult>, scenarios: usize) -> AuditReport {
    let mut r = AuditReport {
        scenarios,
        clients: 0,
        misreports: 0,
        min_ir_margin: f64::INFINITY,
        ir_violations: 0,
        max_ic_gain: f64::NEG_INFINITY,
        ic_violations: 0,
        worst_ir: None,
        worst_ic: None,
        max_budget_residual: 0.0,
        solve_count_mismatches: 0,
    };
    for x in results {
        r.clients += x.clients;
        r.misreports += x.misreports;
        r.ir_violations += x.ir_violations;
        r.ic_violations += x.ic_violations;
        r.max_budget_residual = r.max_budget_residual.max(x.budget);
        r.solve_count_mismatches += x.count_bad as usize;
        if x.ir.0 < r.min_ir_margin {
            r.min_ir_margin = x.ir.0;
            r.worst_ir = x.ir.1;
        }
        if x.ic.0 > r.max_ic_gain {
            r.max_ic_gain = x.ic.0;
            r.worst_ic = x.ic.1;
        }
    }
    r
}

/// Truthful utilities over a seeded batch must be non-negative.
pub fn audit_ir(cfg: &AuditConfig) -> Result<AuditReport> {
    let seeds: Vec<u64> = (0..cfg.scenarios as u64).map(|k| cfg.first_seed + k).collect();
    let results = seeds.par_iter().map(|&s| audit_one(s, cfg, false)).collect::<Result<Vec<_>>>()?;
    Ok(merge(results, cfg.scenarios))
}

/// No single-client misreport may raise that client's utility.
pub fn audit_ic(cfg: &AuditConfig) -> Result<AuditReport> {
    let seeds: Vec<u64> = (0..cfg.scenarios as u64).map(|k| cfg.first_seed + k).collect();
    let results = seeds.par_iter().map(|&s| audit_one(s, cfg, true)).collect::<Result<Vec<_>>>()?;
    Ok(merge(results, cfg.scenarios))
}
