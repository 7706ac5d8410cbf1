//! Independent correctness oracles and convergence studies.
//!
//! The solver is cross-checked three ways: exhaustive recursion on tiny
//! instances (no memoization, no layer arrays — structurally independent of
//! the backward sweep), Monte Carlo rollout of the solved policy on the same
//! chain (the dynamic-programming value is the chain's own expectation), and
//! local-consistency audits of the assembled rows. Convergence sweeps in the
//! grid spacing and the domain bound realize the limit statements numerically.

use std::cell::Cell;
use std::time::Instant;

use rayon::prelude::*;

use crate::dynamics::{CostSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::func::InjectionCostFn;
use crate::lattice::{
    assemble_transitions, build_lattice, lin_split, product_split, TransitionModel,
};
use crate::rng::stream_rng;
use crate::solver::{backward_solve, query_value, running_rate_discrete, Policy, PolicyAction};
use rand::Rng;

/// Node budget for the exhaustive recursion.
pub const BRUTE_FORCE_NODE_CAP: u64 = 10_000_000;

/// Maps an initial intensity λ₀ to the excitation vector via
/// ς₀ = (λ₀ − λ∞(0)) / d componentwise (single-component kernels only).
/// Values outside the configured excitation bounds are rejected.
pub fn sigma_from_lambda0(model: &ModelSpec, lambda0: f64) -> Result<Vec<f64>> {
    let hawkes = &model.hawkes;
    if hawkes.dimension() != 1 {
        return Err(Error::config(
            "probes",
            "λ₀ probes require a single-component kernel; give ς₀ explicitly otherwise",
        ));
    }
    let d = hawkes.components[0].d;
    if d == 0.0 {
        return Err(Error::config("probes", "λ₀ probe undefined for d = 0"));
    }
    let sigma0 = (lambda0 - hawkes.baseline.eval(0.0)) / d;
    if sigma0 < model.sigma_lo[0] - 1e-12 || sigma0 > model.sigma_hi[0] + 1e-12 {
        return Err(Error::config(
            "probes",
            format!(
                "λ₀ = {lambda0} maps to ς₀ = {sigma0} outside the grid [{}, {}]",
                model.sigma_lo[0], model.sigma_hi[0]
            ),
        ));
    }
    Ok(vec![sigma0.clamp(model.sigma_lo[0], model.sigma_hi[0])])
}

/// Exact optimal value at every layer-0 state by exhaustive recursion over
/// all actions and transition outcomes, using the same rows as the solver
/// but none of its machinery. Intentionally unmemoized; the size caps keep
/// the tree under the node budget.
pub fn brute_force_value(tm: &TransitionModel, cost: &CostSpec) -> Result<Vec<f64>> {
    let lat = &tm.lattice;
    if lat.nx() > 7 || lat.n_sigma() > 4 || lat.n_layers > 4 || tm.n_bg() > 2 {
        return Err(Error::invariant(format!(
            "brute force limited to ≤ 7 x-points, ≤ 4 ς-points, ≤ 4 layers, ≤ 2 controls \
             (got {} × {} × {} × {})",
            lat.nx(),
            lat.n_sigma(),
            lat.n_layers,
            tm.n_bg()
        )));
    }
    let nx = lat.nx();
    let dt = lat.dt;
    let disc = (-cost.discount * dt).exp();
    let stop_disc = if cost.stop_discount_step { disc } else { 1.0 };
    let nodes = Cell::new(0u64);

    struct Ctx<'a> {
        tm: &'a TransitionModel,
        cost: &'a CostSpec,
        nx: usize,
        disc: f64,
        stop_disc: f64,
        nodes: &'a Cell<u64>,
    }

    fn value(ctx: &Ctx, layer: usize, x_idx: usize, sigma_idx: usize) -> Result<f64> {
        ctx.nodes.set(ctx.nodes.get() + 1);
        if ctx.nodes.get() > BRUTE_FORCE_NODE_CAP {
            return Err(Error::invariant("brute force node budget exceeded"));
        }
        let lat = &ctx.tm.lattice;
        let x = lat.x(x_idx);
        if layer == lat.n_layers {
            return Ok(ctx.cost.terminal.eval(x));
        }
        let t = lat.time(layer);
        let mut best = ctx.stop_disc * ctx.cost.stop.eval(x);
        let n_g = ctx.tm.n_g();
        for b_idx in 0..ctx.tm.n_b() {
            for g_idx in 0..n_g {
                let row = ctx.tm.diffuse_row(x_idx, sigma_idx, b_idx, g_idx, t);
                let mut expect = 0.0;
                for (state, p) in row {
                    if p == 0.0 {
                        continue;
                    }
                    let (sj, xj) = ((state as usize) / ctx.nx, (state as usize) % ctx.nx);
                    expect += p * value(ctx, layer + 1, xj, sj)?;
                }
                let b = ctx.tm.model.controls_b[b_idx];
                let g = ctx.tm.model.controls_g[g_idx];
                let rate = running_rate_discrete(ctx.tm, ctx.cost, t, x, sigma_idx, b, g);
                best = best.max(-rate * lat.dt + ctx.disc * expect);
            }
        }
        if ctx.cost.injection.enabled() && x_idx + 1 < ctx.nx {
            let phi = ctx.cost.injection.eval(t);
            best = best.max(value(ctx, layer, x_idx + 1, sigma_idx)? - phi * lat.h);
        }
        Ok(best)
    }

    let ctx = Ctx {
        tm,
        cost,
        nx,
        disc,
        stop_disc,
        nodes: &nodes,
    };
    let mut out = vec![0.0; lat.n_states()];
    for sigma_idx in 0..lat.n_sigma() {
        for x_idx in 0..nx {
            out[sigma_idx * nx + x_idx] = value(&ctx, 0, x_idx, sigma_idx)?;
        }
    }
    Ok(out)
}

/// Summary statistics of a policy rollout on the discrete chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Average of τ ∧ T.
    pub mean_stop_time: f64,
    /// Fraction of paths that were never stopped before the horizon.
    pub maturity_fraction: f64,
}

/// Simulates the discrete chain under the solved policy. The payoff
/// bookkeeping mirrors the dynamic program exactly (per-step discount
/// factors, zero-duration injections, one-step-discounted stop payoff), so
/// the sample mean is an unbiased estimate of V₀ʰ at the start state.
///
/// Off-grid starts are randomized over the splitting weights of (x₀, ς₀),
/// which matches multilinear interpolation of the value table in expectation.
pub fn rollout_policy(
    tm: &TransitionModel,
    cost: &CostSpec,
    policy: &Policy,
    x0: f64,
    sigma0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<RolloutStats> {
    let lat = &tm.lattice;
    if policy.lattice_hash != lat.hash() {
        return Err(Error::invariant(
            "rollout: policy was solved on a different lattice",
        ));
    }
    let nx = lat.nx();
    let x_points = lat.x_points();
    let (x_split, _) = lin_split(x0.clamp(x_points[0], x_points[nx - 1]), &x_points)?;
    let grids: Vec<Vec<f64>> = lat.sigma_grids.iter().map(|g| g.points()).collect();
    let grid_refs: Vec<&[f64]> = grids.iter().map(|g| g.as_slice()).collect();
    let clamped: Vec<f64> = sigma0
        .iter()
        .zip(&lat.sigma_grids)
        .map(|(&s, g)| s.clamp(g.lo, g.hi))
        .collect();
    let (sigma_corners, _) = product_split(&clamped, &grid_refs)?;
    let sigma_split: Vec<(usize, f64)> = sigma_corners
        .iter()
        .map(|(multi, w)| (lat.sigma_flat_index(multi), *w))
        .collect();

    let dt = lat.dt;
    let disc = (-cost.discount * dt).exp();
    let stop_disc = if cost.stop_discount_step { disc } else { 1.0 };
    let n_layers = lat.n_layers;

    let sample_from = |entries: &[(usize, f64)], u: f64| -> usize {
        let mut acc = 0.0;
        for &(idx, w) in entries {
            acc += w;
            if u < acc {
                return idx;
            }
        }
        entries[entries.len() - 1].0
    };

    let results: Vec<(f64, f64, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64 + 1);
            let mut x_idx = sample_from(&x_split, rng.gen());
            let mut sigma_idx = sample_from(&sigma_split, rng.gen());
            let mut factor = 1.0;
            let mut payoff = 0.0;
            let mut layer = 0usize;
            let (tau, matured) = loop {
                if layer == n_layers {
                    payoff += factor * cost.terminal.eval(lat.x(x_idx));
                    break (lat.horizon, true);
                }
                let t = lat.time(layer);
                match policy.action(layer, x_idx, sigma_idx) {
                    PolicyAction::Stop => {
                        payoff += factor * stop_disc * cost.stop.eval(lat.x(x_idx));
                        break (t, false);
                    }
                    PolicyAction::Inject => {
                        payoff -= factor * cost.injection.eval(t) * lat.h;
                        debug_assert!(x_idx + 1 < nx, "inject chosen at the cap");
                        x_idx += 1;
                        // Zero physical time: stay in the same layer.
                    }
                    PolicyAction::Diffuse(bg) => {
                        let (b_idx, g_idx) =
                            ((bg as usize) / tm.n_g(), (bg as usize) % tm.n_g());
                        let b = tm.model.controls_b[b_idx];
                        let g = tm.model.controls_g[g_idx];
                        let rate =
                            running_rate_discrete(tm, cost, t, lat.x(x_idx), sigma_idx, b, g);
                        payoff -= factor * rate * dt;
                        let (nx_idx, ns_idx, _) =
                            tm.sample_diffuse(x_idx, sigma_idx, b_idx, g_idx, t, &mut rng);
                        x_idx = nx_idx;
                        sigma_idx = ns_idx;
                        factor *= disc;
                        layer += 1;
                    }
                }
            };
            (payoff, tau, matured)
        })
        .collect();

    let n = results.len() as f64;
    let mean = results.iter().map(|r| r.0).sum::<f64>() / n;
    let var = results.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(RolloutStats {
        mean,
        std_error: (var / n).sqrt(),
        n_paths,
        mean_stop_time: results.iter().map(|r| r.1).sum::<f64>() / n,
        maturity_fraction: results.iter().filter(|r| r.2).count() as f64 / n,
    })
}

/// Local-consistency audit of the pure-diffusion sub-rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// max over interior states of |E[ΔX] − μ(x)Δt| (algebraically ~0).
    pub max_mean_error: f64,
    /// max over interior states of |Var[ΔX] − σ²(x, b)Δt|.
    pub max_var_error: f64,
    /// The guaranteed bound h·max|μ|·Δt + (max|μ|·Δt)².
    pub var_error_bound: f64,
}

pub fn local_consistency_audit(tm: &TransitionModel) -> ConsistencyReport {
    let lat = &tm.lattice;
    let model = &tm.model;
    let h = lat.h;
    let dt = lat.dt;
    let mut max_mean: f64 = 0.0;
    let mut max_var: f64 = 0.0;
    let mut max_mu: f64 = 0.0;
    for x_idx in 1..lat.nx() - 1 {
        let x = lat.x(x_idx);
        let mu = model.drift.eval(x);
        max_mu = max_mu.max(mu.abs());
        for (b_idx, &b) in model.controls_b.iter().enumerate() {
            let triple = tm.diffusion_triple(b_idx, x_idx);
            let p_down = triple[0].1;
            let p_up = triple[2].1;
            let mean = h * (p_up - p_down);
            let var = h * h * (p_up + p_down) - mean * mean;
            let sig2 = model.vol.eval(x, b).powi(2);
            max_mean = max_mean.max((mean - mu * dt).abs());
            max_var = max_var.max((var - sig2 * dt).abs());
        }
    }
    ConsistencyReport {
        max_mean_error: max_mean,
        max_var_error: max_var,
        var_error_bound: h * max_mu * dt + (max_mu * dt).powi(2),
    }
}

/// One convergence sweep: parameter axis, per-probe values, successive
/// absolute differences (computed from the stored values) and wall-clock per
/// cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: String,
    pub parameters: Vec<f64>,
    /// (x₀, λ₀) probe points.
    pub probes: Vec<(f64, f64)>,
    /// values[k][p] = V₀ estimate at parameters[k], probe p.
    pub values: Vec<Vec<f64>>,
    /// diffs[k][p] = |values[k+1][p] − values[k][p]|.
    pub diffs: Vec<Vec<f64>>,
    pub wall_clock_secs: Vec<f64>,
}

impl SweepReport {
    fn finish(mut self) -> Self {
        self.diffs = self
            .values
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs()).collect())
            .collect();
        self
    }

    /// True when every probe's successive differences are nonincreasing.
    pub fn diffs_nonincreasing(&self) -> bool {
        for p in 0..self.probes.len() {
            for w in 0..self.diffs.len().saturating_sub(1) {
                if self.diffs[w + 1][p] > self.diffs[w][p] {
                    return false;
                }
            }
        }
        true
    }
}

/// Solves at each h in `h_list` (descending) and records V₀ at the probes.
pub fn h_sweep(
    model: &ModelSpec,
    cost: &CostSpec,
    h_list: &[f64],
    m: usize,
    upsilon: usize,
    probes: &[(f64, f64)],
) -> Result<SweepReport> {
    let mut report = SweepReport {
        axis: "h".to_string(),
        parameters: h_list.to_vec(),
        probes: probes.to_vec(),
        values: Vec::new(),
        diffs: Vec::new(),
        wall_clock_secs: Vec::new(),
    };
    for &h in h_list {
        let start = Instant::now();
        let lattice = build_lattice(model, h, m, upsilon)?;
        let tm = assemble_transitions(model, &lattice)?;
        let (table, _) = backward_solve(&tm, cost)?;
        let mut row = Vec::with_capacity(probes.len());
        for &(x0, lambda0) in probes {
            let sigma0 = sigma_from_lambda0(model, lambda0)?;
            row.push(query_value(&table, &lattice, 0.0, x0, &sigma0)?);
        }
        report.values.push(row);
        report.wall_clock_secs.push(start.elapsed().as_secs_f64());
    }
    Ok(report.finish())
}

/// Solves with the domain bound L growing through `l_list` (ascending):
/// the lower x-bound moves to −L and the excitation caps to L, while a
/// structural upper cap on x (as in the application) stays put.
pub fn l_sweep(
    model: &ModelSpec,
    cost: &CostSpec,
    h: f64,
    m: usize,
    upsilon: usize,
    l_list: &[f64],
    probes: &[(f64, f64)],
) -> Result<SweepReport> {
    let mut report = SweepReport {
        axis: "L".to_string(),
        parameters: l_list.to_vec(),
        probes: probes.to_vec(),
        values: Vec::new(),
        diffs: Vec::new(),
        wall_clock_secs: Vec::new(),
    };
    for &l in l_list {
        let start = Instant::now();
        let mut scaled = model.clone();
        scaled.x_lo = -l;
        for hi in &mut scaled.sigma_hi {
            *hi = l;
        }
        let lattice = build_lattice(&scaled, h, m, upsilon)?;
        let tm = assemble_transitions(&scaled, &lattice)?;
        let (table, _) = backward_solve(&tm, cost)?;
        let mut row = Vec::with_capacity(probes.len());
        for &(x0, lambda0) in probes {
            let sigma0 = sigma_from_lambda0(&scaled, lambda0)?;
            row.push(query_value(&table, &lattice, 0.0, x0, &sigma0)?);
        }
        report.values.push(row);
        report.wall_clock_secs.push(start.elapsed().as_secs_f64());
    }
    Ok(report.finish())
}

/// One cell of the stopping study.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingStudyRow {
    /// None encodes the no-injection variant (φ = ∞).
    pub phi: Option<f64>,
    pub lambda0: f64,
    pub mean_stop_time: f64,
    pub maturity_fraction: f64,
    pub mean_payoff: f64,
}

/// Solves one policy per injection-cost variant and rolls it out from every
/// λ₀ with common random numbers across cells.
pub fn stopping_study(
    model: &ModelSpec,
    cost_base: &CostSpec,
    h: f64,
    m: usize,
    upsilon: usize,
    x0: f64,
    phi_variants: &[Option<f64>],
    lambda0_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<StoppingStudyRow>> {
    let lattice = build_lattice(model, h, m, upsilon)?;
    let tm = assemble_transitions(model, &lattice)?;
    let mut rows = Vec::new();
    for &phi in phi_variants {
        let cost = CostSpec {
            injection: match phi {
                Some(value) => InjectionCostFn::Constant { value },
                None => InjectionCostFn::Disabled,
            },
            ..cost_base.clone()
        };
        let (_, policy) = backward_solve(&tm, &cost)?;
        for &lambda0 in lambda0_grid {
            let sigma0 = sigma_from_lambda0(model, lambda0)?;
            let stats = rollout_policy(&tm, &cost, &policy, x0, &sigma0, n_paths, seed)?;
            rows.push(StoppingStudyRow {
                phi,
                lambda0,
                mean_stop_time: stats.mean_stop_time,
                maturity_fraction: stats.maturity_fraction,
                mean_payoff: stats.mean,
            });
        }
    }
    Ok(rows)
}

/// Randomized tiny instance for the oracle-equivalence suite.
pub fn random_tiny_instance(seed: u64) -> (ModelSpec, CostSpec) {
    use crate::func::*;
    use crate::hawkes::{HawkesComponent, HawkesSpec, MarkMeasure, DEFAULT_MAX_EVENTS};
    let mut rng = stream_rng(seed, 7777);
    let h = 0.5;
    let nx_choices = [3usize, 5, 7];
    let nx = nx_choices[(rng.gen::<f64>() * 3.0) as usize % 3];
    let x_hi = h * ((nx - 1) / 2) as f64;
    let x_lo = x_hi - h * (nx - 1) as f64;

    let two_controls = rng.gen::<f64>() < 0.5;
    let sig_base = 0.4 + 0.6 * rng.gen::<f64>();
    let mu_a = rng.gen::<f64>() * 2.0 - 1.0;
    let mu_b = rng.gen::<f64>() * 1.0 - 0.5;
    let d = rng.gen::<f64>() * 0.8;
    let q = 0.5 + rng.gen::<f64>() * 1.5;
    let lam_inf = 0.2 + rng.gen::<f64>() * 0.6;
    let rho = rng.gen::<f64>() * 0.8;
    let chi = [-2.0 * h, -h, 0.0, h][(rng.gen::<f64>() * 4.0) as usize % 4];
    let sigma_hi = 1.0 + rng.gen::<f64>();

    let two = two_controls as usize + 1;
    let inject_enabled = rng.gen::<f64>() >= 0.3;

    // Pick the horizon so the lattice lands on 1..4 layers of the effective
    // step (the raw h²/Q* step possibly shrunk by the λΔt ≤ 0.1 cap), then
    // shrink the layer count until the unmemoized enumeration tree fits the
    // node budget: per-node branching is ~12 successors per control pair,
    // amplified by injection chains of length up to nx.
    let max_abs_mu = mu_a.abs() + mu_b.abs() * x_lo.abs().max(x_hi.abs());
    let q_star = sig_base * sig_base + h * max_abs_mu;
    let lambda_max = lam_inf + d * sigma_hi;
    let dt_eff = (h * h / q_star).min(0.1 / lambda_max);
    let mut n_layers = 1 + (rng.gen::<f64>() * 4.0) as usize % 4;
    let width = (two * 12) as f64 * if inject_enabled { nx as f64 } else { 1.0 };
    while n_layers > 1 && width.powi(n_layers as i32) > 2e6 {
        n_layers -= 1;
    }
    let horizon = n_layers as f64 * dt_eff * 0.999;

    let model = ModelSpec {
        drift: DriftFn::Affine {
            intercept: mu_a,
            slope: mu_b,
        },
        vol: if two_controls {
            VolFn::ControlScaled { value: sig_base }
        } else {
            VolFn::Constant { value: sig_base }
        },
        jump: if rng.gen::<f64>() < 0.5 {
            JumpFn::Constant { value: chi }
        } else {
            JumpFn::MarkScaled { coef: chi }
        },
        controls_b: if two_controls { vec![0.8, 1.0] } else { vec![1.0] },
        controls_g: vec![0.0],
        hawkes: HawkesSpec {
            baseline: BaselineFn::Constant { value: lam_inf },
            components: vec![HawkesComponent { d, q }],
            mark_impact: MarkImpactFn::Constant { value: rho },
            mark_measure: MarkMeasure::Finite {
                atoms: vec![(1.0, 0.6), (2.0, 0.4)],
            },
            horizon,
            allow_critical: true,
            stability_exponent: 1.0,
            max_events: DEFAULT_MAX_EVENTS,
        },
        x_lo,
        x_hi,
        sigma_lo: vec![0.0],
        sigma_hi: vec![sigma_hi],
    };

    let cost = CostSpec {
        stop: StopPayoffFn::Put {
            strike: x_lo + (x_hi - x_lo) * rng.gen::<f64>(),
        },
        terminal: TerminalPayoffFn::Affine {
            intercept: rng.gen::<f64>(),
            slope: 0.5 + rng.gen::<f64>(),
        },
        injection: if inject_enabled {
            InjectionCostFn::Constant {
                value: 0.05 + rng.gen::<f64>(),
            }
        } else {
            InjectionCostFn::Disabled
        },
        jump_cost: if rng.gen::<f64>() < 0.5 {
            JumpCostFn::Zero
        } else {
            JumpCostFn::Constant {
                value: rng.gen::<f64>() * 0.5,
            }
        },
        running_cost: if rng.gen::<f64>() < 0.5 {
            RunningCostFn::Zero
        } else {
            RunningCostFn::ControlQuadratic {
                coef: rng.gen::<f64>() * 0.2,
            }
        },
        discount: if rng.gen::<f64>() < 0.5 { 0.0 } else { 0.1 },
        stop_discount_step: true,
    };
    (model, cost)
}

/// Runs the solver-vs-enumeration equivalence on one seeded tiny instance.
/// Returns the max absolute discrepancy across layer-0 states.
pub fn oracle_equivalence_once(seed: u64) -> Result<f64> {
    let (model, cost) = random_tiny_instance(seed);
    let mut rng = stream_rng(seed, 778);
    let m = 2 + (rng.gen::<f64>() * 3.0) as usize % 3;
    let lattice = build_lattice(&model, 0.5, m, 2)?;
    let tm = assemble_transitions(&model, &lattice)?;
    let (table, _) = backward_solve(&tm, &cost)?;
    let brute = brute_force_value(&tm, &cost)?;
    let max_err = table
        .initial_layer()
        .iter()
        .zip(&brute)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(max_err)
}

/// One named check of the aggregated invariant suite.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// The cross-module invariant suite behind the `check` command: splitting
/// exactness, row stochasticity, local consistency, oracle equivalence on
/// tiny instances, Hawkes moment sanity, and solver dominance properties.
pub fn check_suite(
    model: &ModelSpec,
    cost: &CostSpec,
    h: f64,
    m: usize,
    upsilon: usize,
    seed: u64,
) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        results.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    // Splitting exactness.
    {
        let mut rng = stream_rng(seed, 1);
        let grid_a: Vec<f64> = (0..17).map(|i| i as f64 / 16.0).collect();
        let grid_b: Vec<f64> = (0..9).map(|i| -0.5 + i as f64 * 0.4375).collect();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let ta = rng.gen::<f64>();
            let tb = -0.5 + 3.5 * rng.gen::<f64>();
            match product_split(&[ta, tb], &[&grid_a, &grid_b]) {
                Ok((corners, _)) => {
                    let mut ea = 0.0;
                    let mut eb = 0.0;
                    for (idx, w) in &corners {
                        ea += w * grid_a[idx[0]];
                        eb += w * grid_b[idx[1]];
                    }
                    worst = worst.max((ea - ta).abs()).max((eb - tb).abs());
                }
                Err(_) => worst = f64::INFINITY,
            }
        }
        push(
            "splitting-exactness",
            worst <= 1e-12,
            format!("max expectation error {worst:.3e} (tol 1e-12)"),
        );
    }

    // Transition stochasticity and local consistency on the configured grid.
    match build_lattice(model, h, m, upsilon).and_then(|lat| assemble_transitions(model, &lat)) {
        Ok(tm) => {
            let (rows, max_err, min_p) = tm.audit_rows(0.0);
            push(
                "row-stochasticity",
                max_err <= 1e-12 && min_p >= 0.0,
                format!("{rows} rows, max |Σp − 1| = {max_err:.3e}, min p = {min_p:.3e}"),
            );
            let rep = local_consistency_audit(&tm);
            push(
                "local-consistency",
                rep.max_mean_error <= 1e-12 && rep.max_var_error <= rep.var_error_bound + 1e-15,
                format!(
                    "mean err {:.3e} (tol 1e-12), var err {:.3e} (bound {:.3e})",
                    rep.max_mean_error, rep.max_var_error, rep.var_error_bound
                ),
            );

            // Solver dominance invariants on the configured problem.
            match backward_solve(&tm, cost) {
                Ok((table, _)) => {
                    let lat = &tm.lattice;
                    let disc = (-cost.discount * lat.dt).exp();
                    let stop_disc = if cost.stop_discount_step { disc } else { 1.0 };
                    let mut stop_ok = true;
                    let mut grad_ok = true;
                    for i in 0..lat.n_layers {
                        let phi = cost.injection.eval(lat.time(i));
                        for sigma_idx in 0..lat.n_sigma() {
                            for x_idx in 0..lat.nx() {
                                let v = table.value(i, x_idx, sigma_idx);
                                if v < stop_disc * cost.stop.eval(lat.x(x_idx)) - 1e-10 {
                                    stop_ok = false;
                                }
                                if cost.injection.enabled() && x_idx + 1 < lat.nx() {
                                    let gap = table.value(i, x_idx + 1, sigma_idx) - v;
                                    if gap > phi * lat.h + 1e-10 {
                                        grad_ok = false;
                                    }
                                }
                            }
                        }
                    }
                    push(
                        "stopping-dominance",
                        stop_ok,
                        "V ≥ discounted stop payoff at every state".to_string(),
                    );
                    push(
                        "gradient-constraint",
                        grad_ok,
                        "V(x+h) − V(x) ≤ φ(t)h at every interior state".to_string(),
                    );
                }
                Err(e) => push("solver", false, e.to_string()),
            }
        }
        Err(e) => push("lattice-assembly", false, e.to_string()),
    }

    // Oracle equivalence on a handful of tiny instances.
    {
        let mut worst: f64 = 0.0;
        let mut failed = None;
        for s in 0..8u64 {
            match oracle_equivalence_once(seed.wrapping_add(s)) {
                Ok(err) => worst = worst.max(err),
                Err(e) => failed = Some(e.to_string()),
            }
        }
        push(
            "oracle-equivalence",
            failed.is_none() && worst <= 1e-10,
            failed.unwrap_or(format!("max |DPP − enumeration| = {worst:.3e} (tol 1e-10)")),
        );
    }

    // Hawkes moment sanity: compensator centering and the mean-intensity ODE.
    {
        let spec = &model.hawkes;
        let n_paths = 2_000u64;
        let sigma0 = vec![0.0; spec.dimension()];
        let mut resid_sum = 0.0;
        let mut resid_sq = 0.0;
        let mut lam_sum = 0.0;
        let mut lam_sq = 0.0;
        let mut sim_err = None;
        for s in 0..n_paths {
            match crate::hawkes::simulate_hawkes(spec, &sigma0, seed.wrapping_add(s)) {
                Ok((log, end)) => {
                    let resid = log.len() as f64
                        - crate::hawkes::integrated_intensity(spec, &sigma0, &log);
                    resid_sum += resid;
                    resid_sq += resid * resid;
                    let lam = crate::hawkes::intensity_at(spec, &end);
                    lam_sum += lam;
                    lam_sq += lam * lam;
                }
                Err(e) => sim_err = Some(e.to_string()),
            }
        }
        if let Some(e) = sim_err {
            push("hawkes-moments", false, e);
        } else {
            let n = n_paths as f64;
            let resid_mean = resid_sum / n;
            let resid_se = ((resid_sq / n - resid_mean * resid_mean) / n).sqrt();
            let lam_mean = lam_sum / n;
            let lam_se = ((lam_sq / n - lam_mean * lam_mean) / n).sqrt();
            let oracle = crate::hawkes::mean_intensity_ode(spec, &sigma0, spec.horizon);
            let comp_ok = resid_mean.abs() <= 3.0 * resid_se + 1e-9;
            let mean_ok = (lam_mean - oracle).abs() <= 3.0 * lam_se + 1e-9;
            push(
                "hawkes-moments",
                comp_ok && mean_ok,
                format!(
                    "compensator residual {resid_mean:.4} (se {resid_se:.4}); \
                     E[λ_T] {lam_mean:.4} vs ODE {oracle:.4} (se {lam_se:.4})"
                ),
            );
        }
    }

    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::{
        BaselineFn, DriftFn, InjectionCostFn, JumpCostFn, JumpFn, MarkImpactFn, RunningCostFn,
        StopPayoffFn, TerminalPayoffFn, VolFn,
    };
    use crate::hawkes::{HawkesComponent, HawkesSpec, MarkMeasure, DEFAULT_MAX_EVENTS};
    use approx::assert_relative_eq;

    fn app_model() -> ModelSpec {
        ModelSpec {
            drift: DriftFn::Affine {
                intercept: 0.5,
                slope: -1.0,
            },
            vol: VolFn::Constant { value: 0.1 },
            jump: JumpFn::Constant { value: -1.0 },
            controls_b: vec![1.0],
            controls_g: vec![0.0],
            hawkes: HawkesSpec {
                baseline: BaselineFn::Constant { value: 1.0 },
                components: vec![HawkesComponent { d: 1.0, q: 1.0 }],
                mark_impact: MarkImpactFn::Constant { value: 1.0 },
                mark_measure: MarkMeasure::dirac(1.0),
                horizon: 1.0,
                allow_critical: true,
                stability_exponent: 1.0,
                max_events: DEFAULT_MAX_EVENTS,
            },
            x_lo: -1.0,
            x_hi: 1.0,
            sigma_lo: vec![-0.5],
            sigma_hi: vec![3.0],
        }
    }

    fn app_cost(phi: Option<f64>) -> CostSpec {
        CostSpec {
            stop: StopPayoffFn::Put { strike: 0.5 },
            terminal: TerminalPayoffFn::PowerCeiling { eta: 0.1 },
            injection: match phi {
                Some(value) => InjectionCostFn::Constant { value },
                None => InjectionCostFn::Disabled,
            },
            jump_cost: JumpCostFn::Zero,
            running_cost: RunningCostFn::Zero,
            discount: 0.0,
            stop_discount_step: true,
        }
    }

    #[test]
    fn lambda0_mapping() {
        let model = app_model();
        assert_eq!(sigma_from_lambda0(&model, 1.0).unwrap(), vec![0.0]);
        assert_eq!(sigma_from_lambda0(&model, 0.5).unwrap(), vec![-0.5]);
        assert_eq!(sigma_from_lambda0(&model, 4.0).unwrap(), vec![3.0]);
        // Outside the grid range.
        assert!(sigma_from_lambda0(&model, 0.2).is_err());
        assert!(sigma_from_lambda0(&model, 5.0).is_err());
    }

    #[test]
    fn brute_force_terminal_only() {
        // F far below continuation and no jumps: brute force must equal the
        // solver on a deterministic-in-distribution toy.
        let (mut model, mut cost) = random_tiny_instance(0);
        model.vol = VolFn::Constant { value: 0.5 };
        model.controls_b = vec![1.0];
        model.hawkes.components = vec![HawkesComponent { d: 0.0, q: 1.0 }];
        model.hawkes.baseline = BaselineFn::Constant { value: 0.0 };
        cost.stop = StopPayoffFn::Constant { value: -100.0 };
        cost.injection = InjectionCostFn::Disabled;
        cost.running_cost = RunningCostFn::Zero;
        cost.jump_cost = JumpCostFn::Zero;
        cost.discount = 0.0;
        let lattice = build_lattice(&model, 0.5, 2, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let brute = brute_force_value(&tm, &cost).unwrap();
        let (table, _) = backward_solve(&tm, &cost).unwrap();
        for (a, b) in brute.iter().zip(table.initial_layer()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let model = app_model();
        let lattice = build_lattice(&model, 0.05, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        assert!(brute_force_value(&tm, &app_cost(None)).is_err());
    }

    #[test]
    fn oracle_equivalence_fifty_instances() {
        let mut worst: f64 = 0.0;
        for seed in 0..50 {
            let err = oracle_equivalence_once(seed).unwrap();
            worst = worst.max(err);
        }
        assert!(worst <= 1e-10, "max |DPP − enumeration| = {worst:.3e}");
    }

    #[test]
    fn rollout_degenerate_stop_policy() {
        // A policy that stops immediately returns F(x₀) with zero s.e.
        let model = app_model();
        let lattice = build_lattice(&model, 0.25, 4, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let cost = app_cost(None);
        let n_states = lattice.n_states();
        let policy = Policy {
            nx: lattice.nx(),
            n_sigma: lattice.n_sigma(),
            actions: vec![vec![PolicyAction::Stop; n_states]; lattice.n_layers],
            lattice_hash: lattice.hash(),
        };
        let stats = rollout_policy(&tm, &cost, &policy, 0.0, &[0.0], 500, 11).unwrap();
        assert_relative_eq!(stats.mean, 0.5, epsilon = 1e-12);
        assert_eq!(stats.std_error, 0.0);
        assert_eq!(stats.maturity_fraction, 0.0);
        assert_eq!(stats.mean_stop_time, 0.0);
    }

    #[test]
    fn rollout_matches_forward_propagation() {
        // Never-stop, never-inject policy on a jump-free model: the rollout
        // mean must agree with E[G(X_T)] computed by pushing the initial
        // distribution through the transition matrix.
        let mut model = app_model();
        model.hawkes.components = vec![HawkesComponent { d: 0.0, q: 1.0 }];
        model.hawkes.baseline = BaselineFn::Constant { value: 0.0 };
        model.sigma_lo = vec![0.0];
        model.sigma_hi = vec![1.0];
        let lattice = build_lattice(&model, 0.1, 2, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let cost = app_cost(None);
        let policy = Policy {
            nx: lattice.nx(),
            n_sigma: lattice.n_sigma(),
            actions: vec![vec![PolicyAction::Diffuse(0); lattice.n_states()]; lattice.n_layers],
            lattice_hash: lattice.hash(),
        };

        // Forward probability propagation of the x-marginal (ς inert here).
        let nx = lattice.nx();
        let x0_idx = lattice.x_points().iter().position(|&x| x == 0.0).unwrap();
        let mut dist = vec![0.0; nx];
        dist[x0_idx] = 1.0;
        for _ in 0..lattice.n_layers {
            let mut next = vec![0.0; nx];
            for x_idx in 0..nx {
                if dist[x_idx] == 0.0 {
                    continue;
                }
                for &(xs, p) in tm.diffusion_triple(0, x_idx) {
                    next[xs as usize] += dist[x_idx] * p;
                }
            }
            dist = next;
        }
        let expected: f64 = dist
            .iter()
            .enumerate()
            .map(|(i, p)| p * cost.terminal.eval(lattice.x(i)))
            .sum();

        let stats = rollout_policy(&tm, &cost, &policy, 0.0, &[0.0], 20_000, 5).unwrap();
        assert!(
            (stats.mean - expected).abs() <= 3.0 * stats.std_error,
            "rollout {} vs push-forward {expected} (se {})",
            stats.mean,
            stats.std_error
        );
        assert_eq!(stats.maturity_fraction, 1.0);
    }

    #[test]
    fn rollout_is_seed_reproducible() {
        let model = app_model();
        let lattice = build_lattice(&model, 0.1, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let cost = app_cost(Some(0.01));
        let (_, policy) = backward_solve(&tm, &cost).unwrap();
        let a = rollout_policy(&tm, &cost, &policy, 0.0, &[0.0], 2_000, 42).unwrap();
        let b = rollout_policy(&tm, &cost, &policy, 0.0, &[0.0], 2_000, 42).unwrap();
        assert_eq!(a, b);
        let c = rollout_policy(&tm, &cost, &policy, 0.0, &[0.0], 2_000, 43).unwrap();
        assert_ne!(a.mean.to_bits(), c.mean.to_bits());
    }

    #[test]
    fn rollout_mean_matches_dpp_value() {
        let model = app_model();
        let lattice = build_lattice(&model, 0.05, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let cost = app_cost(Some(0.01));
        let (table, policy) = backward_solve(&tm, &cost).unwrap();
        let v0 = query_value(&table, &lattice, 0.0, 0.0, &[0.0]).unwrap();
        let stats = rollout_policy(&tm, &cost, &policy, 0.0, &[0.0], 10_000, 9).unwrap();
        let tol = (3.0 * stats.std_error).max(0.05 * v0.abs());
        assert!(
            (stats.mean - v0).abs() <= tol,
            "rollout {} vs V₀ {} (tol {tol})",
            stats.mean,
            v0
        );
    }

    #[test]
    fn consistency_audit_within_bound() {
        let model = app_model();
        let lattice = build_lattice(&model, 0.05, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let rep = local_consistency_audit(&tm);
        assert!(rep.max_mean_error <= 1e-12, "mean error {}", rep.max_mean_error);
        assert!(
            rep.max_var_error <= rep.var_error_bound + 1e-15,
            "var error {} > bound {}",
            rep.max_var_error,
            rep.var_error_bound
        );
    }

    #[test]
    fn degenerate_volatility_variance_error_is_exact() {
        // σ ≡ 0 with a positive drift floor: p_down = 0 and the variance
        // error equals h·μ·Δt − (μΔt)² exactly for a constant drift.
        let mut model = app_model();
        model.drift = DriftFn::Constant { value: 0.4 };
        model.vol = VolFn::Constant { value: 0.0 };
        model.hawkes.components = vec![HawkesComponent { d: 0.0, q: 1.0 }];
        model.hawkes.baseline = BaselineFn::Constant { value: 0.0 };
        model.sigma_lo = vec![0.0];
        model.sigma_hi = vec![1.0];
        let lattice = build_lattice(&model, 0.1, 2, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let rep = local_consistency_audit(&tm);
        let mu_dt = 0.4 * lattice.dt;
        let exact = lattice.h * mu_dt - mu_dt * mu_dt;
        assert_relative_eq!(rep.max_var_error, exact, epsilon = 1e-15);
        assert!(rep.max_mean_error <= 1e-15);
    }

    #[test]
    fn h_sweep_identical_for_h_independent_problem() {
        // Constant model with a volatility floor: the value is h-independent
        // (stopping immediately at the constant payoff dominates).
        let mut model = app_model();
        model.drift = DriftFn::Constant { value: 0.0 };
        model.vol = VolFn::Constant { value: 0.05 };
        model.jump = JumpFn::Constant { value: 0.0 };
        let mut cost = app_cost(None);
        cost.stop = StopPayoffFn::Constant { value: 2.0 };
        cost.terminal = TerminalPayoffFn::Constant { value: 1.0 };
        let report = h_sweep(&model, &cost, &[0.2, 0.1, 0.05], 5, 1, &[(0.0, 1.0)]).unwrap();
        for row in &report.values {
            assert_relative_eq!(row[0], 2.0, epsilon = 1e-12);
        }
        for d in &report.diffs {
            assert!(d[0].abs() <= 1e-12);
        }
        assert!(report.diffs_nonincreasing());
    }

    #[test]
    fn injection_extends_viability_without_jumps() {
        // No jumps at all (d = 0, zero baseline), x₀ in the at-risk band:
        // with the same seeds, cheap injections keep strictly more paths
        // alive to maturity than no injections.
        let mut model = app_model();
        model.hawkes.components = vec![HawkesComponent { d: 0.0, q: 1.0 }];
        model.hawkes.baseline = BaselineFn::Constant { value: 0.0 };
        model.sigma_lo = vec![0.0];
        model.sigma_hi = vec![1.0];
        let lattice = build_lattice(&model, 0.02, 2, 1).unwrap();
        let tm = assemble_transitions(&model, &lattice).unwrap();
        let x0 = -0.5;
        let seed = 77;
        let cost_off = app_cost(None);
        let (_, pol_off) = backward_solve(&tm, &cost_off).unwrap();
        let off = rollout_policy(&tm, &cost_off, &pol_off, x0, &[0.0], 4_000, seed).unwrap();
        let cost_cheap = app_cost(Some(0.01));
        let (_, pol_cheap) = backward_solve(&tm, &cost_cheap).unwrap();
        let cheap =
            rollout_policy(&tm, &cost_cheap, &pol_cheap, x0, &[0.0], 4_000, seed).unwrap();
        assert!(
            cheap.maturity_fraction > off.maturity_fraction,
            "maturity with injections {} vs without {}",
            cheap.maturity_fraction,
            off.maturity_fraction
        );
        assert!(cheap.mean > off.mean);
    }

    #[test]
    fn l_sweep_stabilizes_at_interior_probes() {
        let model = app_model();
        let cost = app_cost(Some(0.01));
        // Identical bounds give identical values.
        let same = l_sweep(&model, &cost, 0.1, 8, 1, &[2.0, 2.0], &[(0.0, 1.0)]).unwrap();
        assert!(same.diffs[0][0] <= 1e-12);
        // Growing bounds: the value settles (diff bookkeeping and shrinkage).
        let report = l_sweep(&model, &cost, 0.1, 8, 1, &[1.0, 2.0, 3.0], &[(0.0, 1.0)]).unwrap();
        assert_eq!(report.diffs.len(), 2);
        assert!(report.diffs[1][0] <= report.diffs[0][0]);
    }

    #[test]
    fn sweep_bookkeeping_single_halving() {
        let model = app_model();
        let cost = app_cost(Some(0.01));
        let report = h_sweep(&model, &cost, &[0.2, 0.1], 8, 1, &[(0.0, 1.0)]).unwrap();
        assert_eq!(report.values.len(), 2);
        assert_eq!(report.diffs.len(), 1);
        assert!(report.diffs[0][0].is_finite());
        assert_eq!(report.wall_clock_secs.len(), 2);
        // Identical configs reproduce identical sweep values.
        let again = h_sweep(&model, &cost, &[0.2, 0.1], 8, 1, &[(0.0, 1.0)]).unwrap();
        assert_eq!(report.values, again.values);
    }

    #[test]
    fn check_suite_passes_on_app_preset() {
        let model = app_model();
        let cost = app_cost(Some(3.0));
        let results = check_suite(&model, &cost, 0.1, 8, 1, 1234);
        for r in &results {
            assert!(r.passed, "check `{}` failed: {}", r.name, r.detail);
        }
    }
}
