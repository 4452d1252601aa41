//! Per-round welfare maximization over selection, iterations and bandwidth.
//!
//! The program is
//!
//! ```text
//! max  sum_m q_m (c_m l_m - e1_m l_m^3 - e2_m chi(B_m))
//! s.t. sum_m q_m = N,  sum_m q_m B_m <= B_max,  B_min <= B_m,
//!      q_m in {0, 1},  l_m in {0..l_max}
//! ```
//!
//! with `chi(B) = (2^{s/B} - 1) B`. Branch and bound runs over `q` and `l`.
//! Each node is bounded by the Lagrangian dual of its convex relaxation, where
//! the products `q l`, `q B` and `q chi` are taken in perspective form. Any
//! dual point is a valid bound, so pruning never depends on how tightly the
//! dual search converges; only the amount of branching does.

use serde::{Deserialize, Serialize};

use crate::energy::chi;
use crate::error::{Error, Result};
use crate::quality::{quality_per_iteration, UdqParams};
use crate::scenario::{Bid, ClientProfile, Hyperparameters};

const INT_TOL: f64 = 1e-9;
const NODE_LIMIT: usize = 200_000;

/// One round's instance, built from declared bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwmProblem {
    /// Quality per local iteration.
    pub c_check: Vec<f64>,
    /// Joules per cubed local iteration.
    pub e1: Vec<f64>,
    /// Joules per unit of `chi`.
    pub e2: Vec<f64>,
    /// Clients that submitted a bid.
    pub eligible: Vec<bool>,
    pub n: usize,
    pub l_max: u32,
    pub b_max: f64,
    pub b_min: f64,
    pub s_rate: f64,
    pub e_budget: Option<f64>,
    /// Upper end of `chi` over the bandwidth box; infinite when it overflows.
    pub chi_max: f64,
}

impl SwmProblem {
    /// A problem from raw coefficients, every client eligible.
    #[allow(clippy::too_many_arguments)]
    pub fn new(c_check: Vec<f64>, e1: Vec<f64>, e2: Vec<f64>, n: usize, l_max: u32, b_max: f64, b_min: f64, s_rate: f64) -> Self {
        let m = c_check.len();
        Self {
            c_check,
            e1,
            e2,
            eligible: vec![true; m],
            n,
            l_max,
            b_max,
            b_min,
            s_rate,
            e_budget: None,
            chi_max: chi_upper(s_rate, b_min, b_max),
        }
    }

    pub fn len(&self) -> usize {
        self.c_check.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_check.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self.e1.len() != m || self.e2.len() != m || self.eligible.len() != m {
            return Err(Error::Dimension("coefficient vectors differ in length".into()));
        }
        for (name, v) in [("c_check", &self.c_check), ("e1", &self.e1), ("e2", &self.e2)] {
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Parameter { name, reason: "entries must be finite and non-negative".into() });
            }
        }
        if !(self.b_min > 0.0 && self.b_max > 0.0 && self.s_rate > 0.0) {
            return Err(Error::Parameter { name: "bandwidth", reason: "b_min, b_max and s_rate must be positive".into() });
        }
        if self.n == 0 {
            return Err(Error::Infeasible("n must be at least 1".into()));
        }
        let eligible = self.eligible.iter().filter(|&&e| e).count();
        if self.n > eligible {
            return Err(Error::Infeasible(format!("n={} exceeds the {eligible} eligible clients", self.n)));
        }
        if self.n as f64 * self.b_min > self.b_max {
            return Err(Error::Infeasible(format!("{} clients need {} Hz but only {} Hz exist", self.n, self.n as f64 * self.b_min, self.b_max)));
        }
        Ok(())
    }

    /// Objective of an integral point.
    pub fn objective(&self, q: &[bool], l: &[u32], b: &[f64]) -> f64 {
        (0..self.len())
            .filter(|&m| q[m])
            .map(|m| {
                let lf = l[m] as f64;
                self.c_check[m] * lf - self.e1[m] * lf * lf * lf - upload_cost(self.e2[m], self.s_rate, b[m], lf)
            })
            .sum()
    }

    /// The same instance with client `m` barred from selection.
    pub fn without(&self, m: usize) -> Self {
        let mut p = self.clone();
        p.eligible[m] = false;
        p
    }
}

/// `e2 chi(B)` for a client that trained, zero otherwise: without a local
/// update there is nothing to upload.
pub fn upload_cost(e2: f64, s_rate: f64, b: f64, l: f64) -> f64 {
    if e2 > 0.0 && l > 0.0 {
        e2 * chi(s_rate, b)
    } else {
        0.0
    }
}

/// `(2^{s/B_min} - 1) B_max`.
pub fn chi_upper(s_rate: f64, b_min: f64, b_max: f64) -> f64 {
    (s_rate / b_min * std::f64::consts::LN_2).exp_m1() * b_max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// The node budget ran out; `gap` bounds the distance to the optimum.
    NodeLimit,
}

/// Integral selection with its welfare and certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwmSolution {
    pub q: Vec<bool>,
    pub l: Vec<u32>,
    /// Hz; zero for clients not selected.
    pub b: Vec<f64>,
    pub welfare: f64,
    /// Root relaxation value.
    pub relaxation_bound: f64,
    /// Certified distance to the optimum.
    pub gap: f64,
    pub nodes: usize,
    pub status: SolveStatus,
}

impl SwmSolution {
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.q.iter().enumerate().filter(|(_, &q)| q).map(|(m, _)| m)
    }
}

/// Coefficients from declared bids. `bias` drops the participation discount.
pub fn build_problem(
    profiles: &[ClientProfile],
    bids: &[Option<Bid>],
    params: &UdqParams,
    hyper: &Hyperparameters,
    bias: bool,
) -> Result<SwmProblem> {
    if profiles.len() != bids.len() {
        return Err(Error::Dimension(format!("{} bids for {} clients", bids.len(), profiles.len())));
    }
    let m = profiles.len();
    let mut c = vec![0.0; m];
    let mut e1 = vec![0.0; m];
    let mut e2 = vec![0.0; m];
    let mut eligible = vec![false; m];
    for (i, (p, bid)) in profiles.iter().zip(bids).enumerate() {
        let Some(bid) = bid else { continue };
        let lambda = if bias { 1.0 } else { hyper.beta.powi(p.v_m as i32) };
        c[i] = quality_per_iteration(&bid.declared_dist, params, hyper.sigma, lambda, hyper.alpha_udq, hyper.mu).per_iteration;
        e1[i] = bid.declared_comp_energy_coeff;
        e2[i] = hyper.model_bits / (bid.declared_h * hyper.s_rate);
        eligible[i] = true;
    }
    Ok(SwmProblem {
        c_check: c,
        e1,
        e2,
        eligible,
        n: hyper.n,
        l_max: hyper.l_max,
        b_max: hyper.b_max,
        b_min: hyper.b_min,
        s_rate: hyper.s_rate,
        e_budget: hyper.e_budget,
        chi_max: chi_upper(hyper.s_rate, hyper.b_min, hyper.b_max),
    })
}

// ---------------------------------------------------------------------------
// One-dimensional pieces

/// `1 - e^y (1 - y)`, increasing on `y > 0`; equals `-chi'(B)` at `y = s ln2 / B`.
fn slope(y: f64) -> f64 {
    y * y.exp() - y.exp_m1()
}

/// Bandwidth minimizing `w chi(b) + lambda b` on `[b_min, b_max]`.
fn best_bandwidth(w: f64, lambda: f64, s_rate: f64, b_min: f64, b_max: f64) -> f64 {
    if w <= 0.0 {
        return b_min;
    }
    let t = lambda / w;
    let k = s_rate * std::f64::consts::LN_2;
    let (mut lo, mut hi) = (k / b_max, k / b_min);
    if t <= slope(lo) {
        return b_max;
    }
    if t >= slope(hi) {
        return b_min;
    }
    let mut y = (2.0 * t).sqrt().clamp(lo, hi);
    for _ in 0..200 {
        let f = slope(y) - t;
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let d = y * y.exp();
        let mut next = y - f / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-15 * y || hi - lo <= 1e-15 * hi {
            y = next;
            break;
        }
        y = next;
    }
    (k / y).clamp(b_min, b_max)
}

/// `max c l - w l^3` over real `l` in `[lo, hi]`.
fn best_iterations(c: f64, w: f64, lo: f64, hi: f64) -> f64 {
    let l = if w > 0.0 {
        (c / (3.0 * w)).sqrt()
    } else if c > 0.0 {
        hi
    } else {
        lo
    };
    l.clamp(lo, hi)
}

/// Minimum-cost split of `b_max` among clients with transmission weights `e2`.
///
/// Every client gets at least `b_min`. Clients with `e2 = 0` are indifferent
/// and receive the floor. When all are indifferent the band is split evenly.
pub fn allocate_bandwidth(e2: &[f64], b_max: f64, b_min: f64, s_rate: f64) -> Result<Vec<f64>> {
    let k = e2.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k as f64 * b_min > b_max {
        return Err(Error::Infeasible(format!("{k} clients need {} Hz, only {b_max} Hz exist", k as f64 * b_min)));
    }
    let positive: Vec<usize> = (0..k).filter(|&i| e2[i] > 0.0).collect();
    if positive.is_empty() {
        return Ok(vec![b_max / k as f64; k]);
    }
    let mut out = vec![b_min; k];
    let budget = b_max - (k - positive.len()) as f64 * b_min;
    let usage = |lambda: f64| -> f64 { positive.iter().map(|&i| best_bandwidth(e2[i], lambda, s_rate, b_min, b_max)).sum() };
    if usage(0.0) <= budget {
        for &i in &positive {
            out[i] = best_bandwidth(e2[i], 0.0, s_rate, b_min, b_max);
        }
        return Ok(out);
    }
    let mut hi = positive.iter().map(|&i| e2[i]).fold(0.0, f64::max) * slope(s_rate * std::f64::consts::LN_2 * positive.len() as f64 / budget);
    let mut guard = 0;
    while usage(hi) > budget && guard < 2000 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = 0.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-13 * hi {
            break;
        }
        if usage(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for &i in &positive {
        out[i] = best_bandwidth(e2[i], hi, s_rate, b_min, b_max);
    }
    // Hand the last sliver of slack to the clients off their bounds.
    let slack = budget - positive.iter().map(|&i| out[i]).sum::<f64>();
    let free: Vec<usize> = positive.iter().copied().filter(|&i| out[i] > b_min && out[i] < b_max).collect();
    let free_total: f64 = free.iter().map(|&i| out[i]).sum();
    if slack > 0.0 && free_total > 0.0 {
        for &i in &free {
            out[i] = (out[i] + slack * out[i] / free_total).min(b_max);
        }
    }
    Ok(out)
}

/// Marginal transmission cost `-e2 chi'(B)` of one client.
pub fn marginal_cost(e2: f64, b: f64, s_rate: f64) -> f64 {
    e2 * slope(s_rate * std::f64::consts::LN_2 / b)
}

// ---------------------------------------------------------------------------
// Relaxation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    Free,
    One,
    Zero,
}

#[derive(Debug, Clone)]
struct Node {
    q: Vec<Fix>,
    l_lo: Vec<u32>,
    l_hi: Vec<u32>,
    parent_bound: f64,
}

/// A fractional optimum of the relaxed program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedPoint {
    pub q: Vec<f64>,
    pub l: Vec<f64>,
    pub b: Vec<f64>,
    pub chi: Vec<f64>,
    /// `q l`.
    pub phi: Vec<f64>,
    /// `q B`.
    pub varsigma: Vec<f64>,
    /// `q chi`.
    pub gamma: Vec<f64>,
    /// Objective at the primal point.
    pub objective: f64,
    /// Dual value; an upper bound on every integral solution.
    pub bound: f64,
    /// Multiplier of the bandwidth budget.
    pub lambda: f64,
    /// Multiplier of the energy cap.
    pub mu: f64,
}

impl RelaxedPoint {
    /// Duality gap relative to the objective scale.
    pub fn residual(&self) -> f64 {
        (self.bound - self.objective).abs() / self.objective.abs().max(1.0)
    }
}

struct Eval {
    bound: f64,
    chosen: Vec<usize>,
    l: Vec<f64>,
    b: Vec<f64>,
    usage: f64,
}

struct Relaxer<'a> {
    p: &'a SwmProblem,
    node: &'a Node,
    ones: Vec<usize>,
    free: Vec<usize>,
    k: usize,
}

impl<'a> Relaxer<'a> {
    fn new(p: &'a SwmProblem, node: &'a Node) -> Option<Self> {
        let ones: Vec<usize> = (0..p.len()).filter(|&m| node.q[m] == Fix::One).collect();
        let free: Vec<usize> = (0..p.len()).filter(|&m| node.q[m] == Fix::Free).collect();
        if ones.len() > p.n || ones.len() + free.len() < p.n {
            return None;
        }
        if p.n as f64 * p.b_min > p.b_max {
            return None;
        }
        let k = p.n - ones.len();
        Some(Self { p, node, ones, free, k })
    }

    fn eval(&self, lambda: f64, mu: f64) -> Eval {
        let p = self.p;
        let m = p.len();
        let mut l = vec![0.0; m];
        let mut b = vec![0.0; m];
        let mut score = vec![f64::NEG_INFINITY; m];
        for &i in self.ones.iter().chain(&self.free) {
            let (lo, hi) = (self.node.l_lo[i], self.node.l_hi[i]);
            // A client that skips training only holds the floor bandwidth.
            let idle = (lo == 0).then(|| -lambda * p.b_min);
            let active = (hi >= 1).then(|| {
                let w1 = (1.0 + mu) * p.e1[i];
                let w2 = (1.0 + mu) * p.e2[i];
                let li = best_iterations(p.c_check[i], w1, lo.max(1) as f64, hi as f64);
                let bi = best_bandwidth(w2, lambda, p.s_rate, p.b_min, p.b_max);
                let gain = p.c_check[i] * li - w1 * li.powi(3);
                (gain - upload_cost(w2, p.s_rate, bi, li) - lambda * bi, li, bi)
            });
            let chosen = match (active, idle) {
                (Some(a), Some(si)) if a.0 <= si => (si, 0.0, p.b_min),
                (Some(a), _) => a,
                (None, si) => (si.unwrap_or(f64::NEG_INFINITY), 0.0, p.b_min),
            };
            (score[i], l[i], b[i]) = chosen;
        }
        let mut free = self.free.clone();
        free.sort_by(|&a, &c| score[c].total_cmp(&score[a]).then(a.cmp(&c)));
        free.truncate(self.k);
        let mut chosen = self.ones.clone();
        chosen.extend(free);
        chosen.sort_unstable();
        let total: f64 = chosen.iter().map(|&i| score[i]).sum();
        let usage: f64 = chosen.iter().map(|&i| b[i]).sum();
        let base = lambda * p.b_max + mu * p.e_budget.unwrap_or(0.0);
        // Rounding allowance keeps the dual value an upper bound in floating point.
        let magnitude = base + chosen.iter().map(|&i| score[i].abs() + 2.0 * lambda * b[i] + p.c_check[i] * l[i]).sum::<f64>();
        let bound = base + total + 8.0 * (m + 2) as f64 * f64::EPSILON * magnitude;
        Eval { bound, chosen, l, b, usage }
    }

    fn energy(&self, e: &Eval) -> f64 {
        e.chosen
            .iter()
            .map(|&i| self.p.e1[i] * e.l[i].powi(3) + upload_cost(self.p.e2[i], self.p.s_rate, e.b[i], e.l[i]))
            .sum()
    }

    /// Minimize the dual over the bandwidth multiplier at fixed `mu`.
    fn over_lambda(&self, mu: f64) -> (Eval, Eval, f64) {
        let p = self.p;
        let at0 = self.eval(0.0, mu);
        if at0.usage <= p.b_max {
            let e = self.eval(0.0, mu);
            return (at0, e, 0.0);
        }
        let scale = p.e2.iter().fold(0.0, |a: f64, &x| a.max(x)).max(1e-300);
        let mut hi = (1.0 + mu) * scale * slope(p.s_rate * std::f64::consts::LN_2 * p.n as f64 / p.b_max);
        let mut guard = 0;
        let mut e_hi = self.eval(hi, mu);
        while e_hi.usage > p.b_max && guard < 2000 {
            hi *= 2.0;
            e_hi = self.eval(hi, mu);
            guard += 1;
        }
        let mut lo = 0.0;
        let mut e_lo = at0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-13 * hi {
                break;
            }
            let e = self.eval(mid, mu);
            if e.usage > p.b_max {
                lo = mid;
                e_lo = e;
            } else {
                hi = mid;
                e_hi = e;
            }
        }
        (e_lo, e_hi, hi)
    }

    fn solve(&self) -> RelaxedPoint {
        let p = self.p;
        let (e_lo, e_hi, lambda, mu) = match p.e_budget {
            None => {
                let (a, b, l) = self.over_lambda(0.0);
                (a, b, l, 0.0)
            }
            Some(cap) => {
                let (a, b, l) = self.over_lambda(0.0);
                if self.energy(&b) <= cap {
                    (a, b, l, 0.0)
                } else {
                    let mut hi = 1.0;
                    let mut res = self.over_lambda(hi);
                    let mut guard = 0;
                    while self.energy(&res.1) > cap && guard < 200 {
                        hi *= 4.0;
                        res = self.over_lambda(hi);
                        guard += 1;
                    }
                    let mut lo = 0.0;
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if hi - lo <= 1e-9 * hi {
                            break;
                        }
                        let r = self.over_lambda(mid);
                        if self.energy(&r.1) > cap {
                            lo = mid;
                        } else {
                            hi = mid;
                            res = r;
                        }
                    }
                    (res.0, res.1, res.2, hi)
                }
            }
        };
        self.recover(&e_lo, &e_hi, lambda, mu)
    }

    fn recover(&self, e_lo: &Eval, e_hi: &Eval, lambda: f64, mu: f64) -> RelaxedPoint {
        let p = self.p;
        let m = p.len();
        let b = e_hi.b.clone();
        let l = e_hi.l.clone();
        let use_of = |set: &[usize]| set.iter().map(|&i| b[i]).sum::<f64>();
        let mut q = vec![0.0; m];
        if e_lo.chosen == e_hi.chosen {
            for &i in &e_hi.chosen {
                q[i] = 1.0;
            }
        } else {
            let (u_lo, u_hi) = (use_of(&e_lo.chosen), use_of(&e_hi.chosen));
            let theta = if u_lo > u_hi { ((p.b_max - u_hi) / (u_lo - u_hi)).clamp(0.0, 1.0) } else { 1.0 };
            for &i in &e_lo.chosen {
                q[i] += theta;
            }
            for &i in &e_hi.chosen {
                q[i] += 1.0 - theta;
            }
        }
        let chi_v: Vec<f64> = (0..m).map(|i| if l[i] > 0.0 { chi(p.s_rate, b[i]) } else { 0.0 }).collect();
        let objective = (0..m)
            .filter(|&i| q[i] > 0.0)
            .map(|i| q[i] * (p.c_check[i] * l[i] - p.e1[i] * l[i].powi(3) - upload_cost(p.e2[i], p.s_rate, b[i], l[i])))
            .sum();
        RelaxedPoint {
            phi: (0..m).map(|i| q[i] * l[i]).collect(),
            varsigma: (0..m).map(|i| q[i] * b[i]).collect(),
            gamma: (0..m).map(|i| q[i] * chi_v[i]).collect(),
            q,
            l,
            b,
            chi: chi_v,
            objective,
            bound: e_lo.bound.min(e_hi.bound),
            lambda,
            mu,
        }
    }
}

fn root(p: &SwmProblem) -> Node {
    Node {
        q: p.eligible.iter().map(|&e| if e { Fix::Free } else { Fix::Zero }).collect(),
        l_lo: vec![0; p.len()],
        l_hi: vec![p.l_max; p.len()],
        parent_bound: f64::INFINITY,
    }
}

/// Solve the continuous relaxation at the root.
pub fn solve_relaxation(problem: &SwmProblem) -> Result<RelaxedPoint> {
    problem.validate()?;
    let node = root(problem);
    let r = Relaxer::new(problem, &node).ok_or_else(|| Error::Infeasible("no selection of size n exists".into()))?;
    Ok(r.solve())
}

// ---------------------------------------------------------------------------
// Branch and bound

fn frac(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Welfare, selection, iterations and bandwidth of the best point so far.
type Incumbent = (f64, Vec<bool>, Vec<u32>, Vec<f64>);

/// Exact welfare of an integral selection, or `None` if it breaks the energy cap.
fn evaluate_leaf(p: &SwmProblem, q: &[bool], l: &[u32]) -> Option<(f64, Vec<f64>)> {
    let active: Vec<bool> = (0..p.len()).map(|i| q[i] && l[i] > 0).collect();
    let b = selection_bandwidth(p, q, &active)?;
    evaluate_with_bandwidth(p, q, l, b)
}

/// Bandwidth for the winners `q`; those not in `active` do not transmit.
fn selection_bandwidth(p: &SwmProblem, q: &[bool], active: &[bool]) -> Option<Vec<f64>> {
    let sel: Vec<usize> = (0..p.len()).filter(|&i| q[i]).collect();
    let e2: Vec<f64> = sel.iter().map(|&i| if active[i] { p.e2[i] } else { 0.0 }).collect();
    let alloc = allocate_bandwidth(&e2, p.b_max, p.b_min, p.s_rate).ok()?;
    let mut b = vec![0.0; p.len()];
    for (k, &i) in sel.iter().enumerate() {
        b[i] = alloc[k];
    }
    Some(b)
}

fn evaluate_with_bandwidth(p: &SwmProblem, q: &[bool], l: &[u32], b: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let sel: Vec<usize> = (0..p.len()).filter(|&i| q[i]).collect();
    if let Some(cap) = p.e_budget {
        let energy: f64 = sel
            .iter()
            .map(|&i| p.e1[i] * (l[i] as f64).powi(3) + upload_cost(p.e2[i], p.s_rate, b[i], l[i] as f64))
            .sum();
        if energy > cap {
            return None;
        }
    }
    Some((p.objective(q, l, &b), b))
}

/// Exact integer optimum by branch and bound.
pub fn solve_swm(problem: &SwmProblem) -> Result<SwmSolution> {
    problem.validate()?;
    let p = problem;
    let m = p.len();
    let mut stack = vec![root(p)];
    let mut best: Option<Incumbent> = None;
    let mut root_bound = f64::NAN;
    let mut nodes = 0usize;
    let mut open_bound = f64::NEG_INFINITY;
    let prune_tol = |inc: f64| 1e-9f64.max(1e-12 * inc.abs());

    while let Some(node) = stack.pop() {
        if nodes >= NODE_LIMIT {
            open_bound = open_bound.max(node.parent_bound);
            for n in &stack {
                open_bound = open_bound.max(n.parent_bound);
            }
            break;
        }
        nodes += 1;
        let Some(relaxer) = Relaxer::new(p, &node) else { continue };
        let rp = relaxer.solve();
        if nodes == 1 {
            root_bound = rp.bound;
        }
        let bound = rp.bound.min(node.parent_bound);
        if let Some((inc, ..)) = &best {
            if bound <= inc + prune_tol(*inc) {
                continue;
            }
        }

        let branch_q = (0..m)
            .filter(|&i| node.q[i] == Fix::Free && frac(rp.q[i]) > INT_TOL)
            .min_by(|&a, &c| (rp.q[a] - 0.5).abs().total_cmp(&(rp.q[c] - 0.5).abs()).then(a.cmp(&c)));
        if let Some(i) = branch_q {
            let prefer_one = rp.q[i] >= 0.5;
            let mut one = node.clone();
            one.q[i] = Fix::One;
            one.parent_bound = bound;
            let mut zero = node.clone();
            zero.q[i] = Fix::Zero;
            zero.parent_bound = bound;
            if prefer_one {
                stack.push(zero);
                stack.push(one);
            } else {
                stack.push(one);
                stack.push(zero);
            }
            continue;
        }

        let q_int: Vec<bool> = rp.q.iter().map(|&x| x > 0.5).collect();
        let branch_l = (0..m).find(|&i| q_int[i] && frac(rp.l[i]) > INT_TOL);
        if let Some(i) = branch_l {
            let f = rp.l[i].floor() as u32;
            let mut down = node.clone();
            down.l_hi[i] = f;
            down.parent_bound = bound;
            let mut up = node.clone();
            up.l_lo[i] = f + 1;
            up.parent_bound = bound;
            if rp.l[i] - (f as f64) < 0.5 {
                stack.push(up);
                stack.push(down);
            } else {
                stack.push(down);
                stack.push(up);
            }
            continue;
        }

        let l_int: Vec<u32> = (0..m).map(|i| if q_int[i] { rp.l[i].round() as u32 } else { 0 }).collect();
        let leaf = evaluate_leaf(p, &q_int, &l_int);
        let mut closed = false;
        if let Some((value, b)) = leaf {
            let better = best.as_ref().is_none_or(|(inc, ..)| value > *inc);
            if better {
                best = Some((value, q_int.clone(), l_int.clone(), b));
            }
            closed = bound - value <= 1e-7 * value.abs().max(1.0);
        }
        if !closed {
            // The relaxation could not certify this node; split it further.
            if let Some(i) = (0..m).find(|&i| node.q[i] == Fix::Free) {
                let mut one = node.clone();
                one.q[i] = Fix::One;
                one.parent_bound = bound;
                let mut zero = node.clone();
                zero.q[i] = Fix::Zero;
                zero.parent_bound = bound;
                stack.push(zero);
                stack.push(one);
            } else if let Some(i) = (0..m).find(|&i| node.q[i] == Fix::One && node.l_lo[i] < node.l_hi[i]) {
                let mid = l_int[i].clamp(node.l_lo[i], node.l_hi[i] - 1);
                let mut down = node.clone();
                down.l_hi[i] = mid;
                down.parent_bound = bound;
                let mut up = node.clone();
                up.l_lo[i] = mid + 1;
                up.parent_bound = bound;
                stack.push(up);
                stack.push(down);
            }
        }
    }

    let (welfare, q, l, b) = best.ok_or_else(|| Error::Infeasible("no feasible selection".into()))?;
    let (status, gap) = if open_bound > f64::NEG_INFINITY {
        (SolveStatus::NodeLimit, (open_bound - welfare).max(0.0))
    } else {
        (SolveStatus::Optimal, 0.0)
    };
    Ok(SwmSolution { q, l, b, welfare, relaxation_bound: root_bound, gap, nodes, status })
}

// ---------------------------------------------------------------------------
// Oracle

/// Exhaustive search over every selection and iteration vector.
pub fn oracle_swm(problem: &SwmProblem) -> Result<SwmSolution> {
    problem.validate()?;
    let p = problem;
    let m = p.len();
    if m > 8 || p.l_max > 4 {
        return Err(Error::OracleSize(format!("m={m}, l_max={} exceeds m<=8, l_max<=4", p.l_max)));
    }
    let pool: Vec<usize> = (0..m).filter(|&i| p.eligible[i]).collect();
    let n = p.n;
    let mut best: Option<Incumbent> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let sel: Vec<usize> = idx.iter().map(|&k| pool[k]).collect();
        let mut q = vec![false; m];
        for &i in &sel {
            q[i] = true;
        }
        // The split depends only on which winners transmit, not on how much they train.
        let mut cache: std::collections::HashMap<Vec<bool>, Option<Vec<f64>>> = std::collections::HashMap::new();
        let mut ls = vec![0u32; n];
        loop {
            let mut l = vec![0u32; m];
            for (k, &i) in sel.iter().enumerate() {
                l[i] = ls[k];
            }
            let active: Vec<bool> = (0..m).map(|i| q[i] && l[i] > 0).collect();
            let alloc = cache.entry(active.clone()).or_insert_with(|| selection_bandwidth(p, &q, &active)).clone();
            if let Some((value, b)) = alloc.and_then(|b| evaluate_with_bandwidth(p, &q, &l, b)) {
                if best.as_ref().is_none_or(|(inc, ..)| value > *inc) {
                    best = Some((value, q.clone(), l, b));
                }
            }
            let mut k = n;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                if ls[k] < p.l_max {
                    ls[k] += 1;
                    for x in ls.iter_mut().skip(k + 1) {
                        *x = 0;
                    }
                    break;
                }
                if k == 0 {
                    k = usize::MAX;
                    break;
                }
            }
            if k == usize::MAX {
                break;
            }
        }
        // Next combination in lexicographic order.
        let mut k = n;
        let mut advanced = false;
        while k > 0 {
            k -= 1;
            if idx[k] < pool.len() - n + k {
                idx[k] += 1;
                for j in k + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    let (welfare, q, l, b) = best.ok_or_else(|| Error::Infeasible("no feasible selection".into()))?;
    Ok(SwmSolution { q, l, b, welfare, relaxation_bound: welfare, gap: 0.0, nodes: 0, status: SolveStatus::Optimal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn problem(c: &[f64], e1: &[f64], e2: &[f64], n: usize, l_max: u32) -> SwmProblem {
        SwmProblem::new(c.to_vec(), e1.to_vec(), e2.to_vec(), n, l_max, 1e7, 1e3, 2e6)
    }

    #[test]
    fn best_bandwidth_is_stationary() {
        let (s, bmin, bmax) = (2e6, 1e3, 1e7);
        for &(w, lam) in &[(4e-6, 1e-5), (4e-7, 3e-6), (1e-6, 1e-9)] {
            let b = best_bandwidth(w, lam, s, bmin, bmax);
            if b > bmin && b < bmax {
                assert_relative_eq!(marginal_cost(w, b, s), lam, max_relative = 1e-9);
            }
        }
        assert_eq!(best_bandwidth(4e-6, 0.0, s, bmin, bmax), bmax);
        assert_eq!(best_bandwidth(0.0, 0.0, s, bmin, bmax), bmin);
    }

    #[test]
    fn bandwidth_single_and_symmetric() {
        assert_eq!(allocate_bandwidth(&[4e-6], 1e7, 1e3, 2e6).unwrap(), vec![1e7]);
        let b = allocate_bandwidth(&[4e-6; 4], 1e7, 1e3, 2e6).unwrap();
        for x in &b {
            assert_relative_eq!(*x, 2.5e6, max_relative = 1e-12);
        }
        assert!(allocate_bandwidth(&[1.0; 5], 4e3, 1e3, 2e6).is_err());
        assert_eq!(allocate_bandwidth(&[0.0, 0.0], 1e7, 1e3, 2e6).unwrap(), vec![5e6, 5e6]);
    }

    #[test]
    fn bandwidth_kkt_residual() {
        let e2 = [8e-6, 8e-7, 2e-6];
        let b = allocate_bandwidth(&e2, 1e7, 1e3, 2e6).unwrap();
        let total: f64 = b.iter().sum();
        assert!((total - 1e7).abs() / 1e7 <= 1e-9);
        let mc: Vec<f64> = e2.iter().zip(&b).map(|(&w, &x)| marginal_cost(w, x, 2e6)).collect();
        for x in &mc {
            assert!((x - mc[0]).abs() / mc[0] <= 1e-9, "{mc:?}");
        }
    }

    #[test]
    fn single_client_matches_enumeration() {
        let p = problem(&[50.0], &[0.8], &[4e-6], 1, 5);
        let s = solve_swm(&p).unwrap();
        let comm = 4e-6 * chi(2e6, 1e7);
        let best = (0..=5u32)
            .map(|l| 50.0 * l as f64 - 0.8 * (l as f64).powi(3) - comm)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(s.welfare, best, max_relative = 1e-12);
        assert_eq!(s.l[0], 5);
    }

    #[test]
    fn identical_clients_pick_lower_index() {
        let p = problem(&[10.0, 10.0], &[0.1, 0.1], &[4e-6, 4e-6], 1, 3);
        let s = solve_swm(&p).unwrap();
        assert_eq!(s.q, vec![true, false]);
        let o = oracle_swm(&p).unwrap();
        assert_eq!(o.q, vec![true, false]);
    }

    #[test]
    fn relaxation_bounds_oracle() {
        let p = problem(&[30.0, 12.0, 25.0], &[2.0, 0.5, 30.0], &[4e-6, 1e-6, 6e-6], 1, 1);
        let r = solve_relaxation(&p).unwrap();
        let o = oracle_swm(&p).unwrap();
        assert!(r.bound >= o.welfare - 1e-9);
        assert!(r.residual() <= 1e-6);
    }

    #[test]
    fn relaxation_exact_when_everyone_selected() {
        let mut p = problem(&[30.0, 12.0], &[2.0, 0.5], &[4e-6, 1e-6], 2, 2);
        p.l_max = 2;
        let r = solve_relaxation(&p).unwrap();
        let o = oracle_swm(&p).unwrap();
        assert!(r.q.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(r.bound >= o.welfare - 1e-9);
    }

    #[test]
    fn zero_quality_means_no_training() {
        let p = problem(&[0.0; 4], &[1e-4; 4], &[4e-6, 1e-6, 2e-6, 8e-6], 2, 4);
        let r = solve_relaxation(&p).unwrap();
        assert!(r.l.iter().all(|&l| l == 0.0));
        assert!(r.phi.iter().all(|&x| x == 0.0));
        assert!(r.gamma.iter().all(|&x| x == 0.0));
        assert_eq!(r.bound, 0.0);
        let s = solve_swm(&p).unwrap();
        let o = oracle_swm(&p).unwrap();
        assert!(s.l.iter().all(|&l| l == 0));
        assert_relative_eq!(s.welfare, o.welfare, max_relative = 1e-12);
        assert!(r.bound >= o.welfare - 1e-9);

        let free = problem(&[0.0; 3], &[1e-4; 3], &[0.0; 3], 2, 4);
        let r = solve_relaxation(&free).unwrap();
        assert_eq!(r.bound, 0.0);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn infeasible_is_reported() {
        let p = problem(&[1.0], &[1.0], &[1.0], 2, 3);
        assert!(matches!(solve_swm(&p), Err(Error::Infeasible(_))));
        let mut q = problem(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 2, 3);
        q.b_max = 1.5e3;
        assert!(matches!(solve_swm(&q), Err(Error::Infeasible(_))));
    }

    #[test]
    fn oracle_refuses_large() {
        let p = problem(&[1.0; 9], &[1.0; 9], &[1.0; 9], 2, 3);
        assert!(matches!(oracle_swm(&p), Err(Error::OracleSize(_))));
    }

    #[test]
    fn chi_upper_overflows_at_defaults() {
        assert!(chi_upper(2e6, 1e3, 1e7).is_infinite());
        assert!(chi_upper(2e6, 1e6, 1e7).is_finite());
    }
}
