//! Constrained controlled jump-diffusion simulation.
//!
//! The state follows an Euler scheme for drift and diffusion, exact
//! exponential decay for the excitation vector, thinned Hawkes jumps, and
//! singular-control injections, with every step post-processed by the
//! two-sided Skorokhod map on [x_lo, x_hi] and an upper clamp (with ledger)
//! on each excitation component. Within a step the order is: decay ς, diffuse
//! X, apply the step's jump events (exact event times from thinning), apply
//! injections, reflect.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{
    DriftFn, InjectionCostFn, JumpCostFn, JumpFn, RunningCostFn, StopPayoffFn, TerminalPayoffFn,
    VolFn,
};
use crate::hawkes::{thin_next_event, HawkesSpec, IntensityState};
use crate::rng::{standard_normal, stream_rng};

/// Dynamics of the controlled state: coefficients, finite control sets, the
/// driving Hawkes process, and the bounded domain the process is reflected
/// into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub drift: DriftFn,
    pub vol: VolFn,
    pub jump: JumpFn,
    /// Finite control set B for the volatility control β.
    pub controls_b: Vec<f64>,
    /// Finite control set Γ for the jump control γ.
    pub controls_g: Vec<f64>,
    pub hawkes: HawkesSpec,
    /// X is reflected into [x_lo, x_hi].
    pub x_lo: f64,
    pub x_hi: f64,
    /// Per-component excitation bounds; the upper end is enforced by a
    /// costless clamp with its own ledger.
    pub sigma_lo: Vec<f64>,
    pub sigma_hi: Vec<f64>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.controls_b.is_empty() {
            return Err(Error::config("model.controls_b", "must be nonempty"));
        }
        if self.controls_g.is_empty() {
            return Err(Error::config("model.controls_g", "must be nonempty"));
        }
        if !(self.x_lo < self.x_hi) {
            return Err(Error::config(
                "model",
                format!("domain requires x_lo < x_hi (got [{}, {}])", self.x_lo, self.x_hi),
            ));
        }
        let n = self.hawkes.dimension();
        if self.sigma_lo.len() != n || self.sigma_hi.len() != n {
            return Err(Error::config(
                "model.sigma bounds",
                format!("expected {n} components to match the Hawkes kernel"),
            ));
        }
        for j in 0..n {
            if !(self.sigma_lo[j] < self.sigma_hi[j]) {
                return Err(Error::config(
                    format!("model.sigma bounds[{j}]"),
                    "requires sigma_lo < sigma_hi",
                ));
            }
        }
        self.hawkes.validate()
    }

    /// Sampled Lipschitz / growth spot-check of μ, σ, χ against `bound`.
    /// Returns human-readable warnings (a config concern, not an error).
    pub fn lipschitz_warnings(&self, bound: f64) -> Vec<String> {
        let mut warnings = Vec::new();
        let n = 64;
        let (zlo, zhi) = self.hawkes.mark_measure.support();
        let z_mid = 0.5 * (zlo + zhi);
        let xs: Vec<f64> = (0..=n)
            .map(|i| self.x_lo + (self.x_hi - self.x_lo) * i as f64 / n as f64)
            .collect();
        let mut max_slope: f64 = 0.0;
        let mut max_growth: f64 = 0.0;
        for w in xs.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let dx = x1 - x0;
            let dmu = (self.drift.eval(x1) - self.drift.eval(x0)).abs() / dx;
            max_slope = max_slope.max(dmu);
            for &b in &self.controls_b {
                let ds = (self.vol.eval(x1, b) - self.vol.eval(x0, b)).abs() / dx;
                max_slope = max_slope.max(ds);
            }
            for &g in &self.controls_g {
                let dch = (self.jump.eval(x1, z_mid, g) - self.jump.eval(x0, z_mid, g)).abs() / dx;
                max_slope = max_slope.max(dch);
            }
        }
        for &x in &xs {
            let growth = self.drift.eval(x).abs()
                + self
                    .controls_b
                    .iter()
                    .map(|&b| self.vol.eval(x, b).abs())
                    .fold(0.0, f64::max);
            max_growth = max_growth.max(growth / (1.0 + x.abs()));
        }
        if max_slope > bound {
            warnings.push(format!(
                "sampled Lipschitz constant {max_slope:.4} exceeds configured bound {bound}"
            ));
        }
        if max_growth > bound {
            warnings.push(format!(
                "sampled linear-growth constant {max_growth:.4} exceeds configured bound {bound}"
            ));
        }
        warnings
    }
}

/// Payoffs, costs and discounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Early-stop payoff F.
    pub stop: StopPayoffFn,
    /// Terminal payoff G.
    pub terminal: TerminalPayoffFn,
    /// Injection cost rate φ.
    pub injection: InjectionCostFn,
    /// Per-event cost κ.
    #[serde(default = "default_jump_cost")]
    pub jump_cost: JumpCostFn,
    /// Running control cost K.
    #[serde(default = "default_running_cost")]
    pub running_cost: RunningCostFn,
    /// Discount rate r ≥ 0.
    #[serde(default)]
    pub discount: f64,
    /// Discount the stopping payoff by one step inside the recursion
    /// (the dynamic-programming form); switchable for sensitivity studies.
    #[serde(default = "default_true")]
    pub stop_discount_step: bool,
}

fn default_true() -> bool {
    true
}

fn default_jump_cost() -> JumpCostFn {
    JumpCostFn::Zero
}

fn default_running_cost() -> RunningCostFn {
    RunningCostFn::Zero
}

impl CostSpec {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.discount < 0.0 {
            return Err(Error::config("cost.discount", "must be nonnegative"));
        }
        match &self.injection {
            InjectionCostFn::Disabled => {}
            other => {
                for i in 0..=16 {
                    let t = horizon * i as f64 / 16.0;
                    if other.eval(t) < 0.0 {
                        return Err(Error::config(
                            "cost.injection",
                            format!("φ({t}) < 0; injection cost must be nonnegative"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Combined running rate 𝒦(t, x, ς, m, b, g)
    /// = λ(t, ς) ∫ κ(t, x, z) m(dz) − K(t, x, b, g), with the mark integral
    /// supplied by the caller (exact measure or its lattice discretization).
    pub fn running_rate(
        &self,
        hawkes: &HawkesSpec,
        t: f64,
        x: f64,
        sigma: &[f64],
        b: f64,
        g: f64,
        kappa_integral: f64,
    ) -> f64 {
        let lambda = hawkes.intensity(t, sigma).max(0.0);
        lambda * kappa_integral - self.running_cost.eval(t, x, b, g)
    }

    /// ∫ κ(t, x, z) m(dz) under the exact mark measure.
    pub fn kappa_integral_exact(&self, hawkes: &HawkesSpec, t: f64, x: f64) -> f64 {
        match &self.jump_cost {
            JumpCostFn::Zero => 0.0,
            _ => hawkes.mark_measure.integrate(|z| self.jump_cost.eval(t, x, z)),
        }
    }
}

/// Result of the discrete two-sided Skorokhod map.
#[derive(Debug, Clone, PartialEq)]
pub struct SkorokhodResult {
    /// Constrained positions after each increment.
    pub path: Vec<f64>,
    /// Cumulative lower-boundary pushing after each increment.
    pub r_plus: Vec<f64>,
    /// Cumulative upper-boundary pushing after each increment.
    pub r_minus: Vec<f64>,
}

/// Sequential two-sided Skorokhod recursion on [lo, hi]: each raw increment
/// is applied and the overshoot beyond a boundary is booked in the matching
/// ledger. For piecewise-constant inputs this is the unique pair of
/// complementary, nondecreasing pushing processes.
pub fn skorokhod_reflect(
    increments: &[f64],
    start: f64,
    lo: f64,
    hi: f64,
) -> Result<SkorokhodResult> {
    if !(lo < hi) {
        return Err(Error::invariant(format!("skorokhod: requires lo < hi, got [{lo}, {hi}]")));
    }
    if start < lo || start > hi {
        return Err(Error::invariant(format!(
            "skorokhod: start {start} outside [{lo}, {hi}]"
        )));
    }
    let mut x = start;
    let mut rp = 0.0;
    let mut rm = 0.0;
    let mut path = Vec::with_capacity(increments.len());
    let mut r_plus = Vec::with_capacity(increments.len());
    let mut r_minus = Vec::with_capacity(increments.len());
    for &inc in increments {
        let proposed = x + inc;
        if proposed < lo {
            rp += lo - proposed;
            x = lo;
        } else if proposed > hi {
            rm += proposed - hi;
            x = hi;
        } else {
            x = proposed;
        }
        path.push(x);
        r_plus.push(rp);
        r_minus.push(rm);
    }
    Ok(SkorokhodResult {
        path,
        r_plus,
        r_minus,
    })
}

/// Deterministic rules steering a simulated path.
pub trait ControlRule {
    /// Indices into (controls_b, controls_g) for the step starting at t.
    fn controls(&self, t: f64, x: f64, sigma: &[f64]) -> (usize, usize);
    /// Injection amount dξ ≥ 0 applied during [t0, t1).
    fn injection_in(&self, t0: f64, t1: f64, x: f64, sigma: &[f64]) -> f64;
    /// Whether to stop at grid time t (before the step is taken).
    fn should_stop(&self, t: f64, x: f64, sigma: &[f64]) -> bool;
}

/// Fixed controls, optional scheduled injections, optional deterministic
/// stopping time.
#[derive(Debug, Clone, Default)]
pub struct ScheduledPlan {
    pub b_index: usize,
    pub g_index: usize,
    /// (time, amount) pairs; each is applied in the step containing its time.
    pub injections: Vec<(f64, f64)>,
    pub stop_time: Option<f64>,
}

impl ControlRule for ScheduledPlan {
    fn controls(&self, _t: f64, _x: f64, _sigma: &[f64]) -> (usize, usize) {
        (self.b_index, self.g_index)
    }

    fn injection_in(&self, t0: f64, t1: f64, _x: f64, _sigma: &[f64]) -> f64 {
        self.injections
            .iter()
            .filter(|(t, _)| *t >= t0 && *t < t1)
            .map(|(_, a)| a)
            .sum()
    }

    fn should_stop(&self, t: f64, _x: f64, _sigma: &[f64]) -> bool {
        self.stop_time.map_or(false, |s| t >= s)
    }
}

/// One Hawkes jump on a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
    /// Increment χ(x, z, g) applied to X (before reflection).
    pub dx: f64,
}

/// A simulated constrained trajectory with full ledgers.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub dt: f64,
    /// Grid times 0 = t_0 < … < t_K (K = steps actually run).
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// Excitation vector at each grid time.
    pub sigma: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    /// Cumulative injections ξ at each grid time.
    pub xi: Vec<f64>,
    /// Cumulative boundary ledgers at each grid time.
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
    /// Cumulative per-component excitation clamp ledger.
    pub r_sigma: Vec<Vec<f64>>,
    /// Raw drift+diffusion increment of each executed step.
    pub raw_diffusion: Vec<f64>,
    /// Control indices used on each executed step.
    pub controls: Vec<(usize, usize)>,
    pub jumps: Vec<JumpEvent>,
    /// Some((step index, time)) when stopped before the horizon.
    pub stop: Option<(usize, f64)>,
    pub seed: u64,
}

impl PathRecord {
    pub fn terminal_x(&self) -> f64 {
        *self.x.last().unwrap()
    }

    /// CSV header matching [`PathRecord::csv_rows`].
    pub fn csv_header(dim: usize) -> String {
        let mut out = String::from("path,t,x,lambda");
        for j in 1..=dim {
            out.push_str(&format!(",sigma_{j}"));
        }
        out.push_str(",dxi,dRplus,dRminus,jump_mark\n");
        out
    }

    /// Long-format CSV rows: t, X, lambda, sigma_1..n, dxi, dRplus, dRminus,
    /// jump_mark (mark of a jump inside the preceding step, empty otherwise).
    pub fn csv_rows(&self, path_id: usize) -> String {
        let n = self.sigma.first().map_or(0, |s| s.len());
        let mut out = String::new();
        for k in 0..self.times.len() {
            let dxi = if k == 0 { 0.0 } else { self.xi[k] - self.xi[k - 1] };
            let drp = if k == 0 { 0.0 } else { self.r_plus[k] - self.r_plus[k - 1] };
            let drm = if k == 0 { 0.0 } else { self.r_minus[k] - self.r_minus[k - 1] };
            let mark = if k == 0 {
                String::new()
            } else {
                let (t0, t1) = (self.times[k - 1], self.times[k]);
                self.jumps
                    .iter()
                    .find(|j| j.time > t0 && j.time <= t1)
                    .map(|j| format!("{}", j.mark))
                    .unwrap_or_default()
            };
            out.push_str(&format!(
                "{path_id},{},{},{}",
                self.times[k], self.x[k], self.lambda[k]
            ));
            for j in 0..n {
                out.push_str(&format!(",{}", self.sigma[k][j]));
            }
            out.push_str(&format!(",{dxi},{drp},{drm},{mark}\n"));
        }
        out
    }
}

fn ensure_finite(value: f64, what: &str, t: f64, x: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(format!(
            "{what} evaluated to {value} at t = {t:.6}, x = {x:.6}"
        )))
    }
}

/// Simulates the constrained controlled dynamics from (x0, sigma0) with step
/// `dt` under `plan`. Deterministic given the seed.
pub fn simulate_controlled(
    model: &ModelSpec,
    plan: &dyn ControlRule,
    x0: f64,
    sigma0: &[f64],
    dt: f64,
    seed: u64,
) -> Result<PathRecord> {
    if dt <= 0.0 {
        return Err(Error::invariant(format!("simulate: dt must be positive, got {dt}")));
    }
    if x0 < model.x_lo || x0 > model.x_hi {
        return Err(Error::invariant(format!(
            "simulate: x0 = {x0} outside [{}, {}]",
            model.x_lo, model.x_hi
        )));
    }
    let hawkes = &model.hawkes;
    let horizon = hawkes.horizon;
    let n_steps = (horizon / dt).round() as usize;
    if n_steps == 0 || ((n_steps as f64) * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::invariant(format!(
            "simulate: dt = {dt} does not divide the horizon {horizon}"
        )));
    }
    let dim = hawkes.dimension();
    let baseline_sup = hawkes.baseline.sup(horizon);
    let mut rng = stream_rng(seed, 0);

    let mut x = x0;
    let mut state = IntensityState::new(0.0, sigma0.to_vec());
    let mut xi = 0.0;
    let mut rp = 0.0;
    let mut rm = 0.0;
    let mut rs = vec![0.0; dim];

    let mut rec = PathRecord {
        dt,
        times: vec![0.0],
        x: vec![x],
        sigma: vec![state.sigma.clone()],
        lambda: vec![hawkes.intensity(0.0, &state.sigma)],
        xi: vec![0.0],
        r_plus: vec![0.0],
        r_minus: vec![0.0],
        r_sigma: vec![rs.clone()],
        raw_diffusion: Vec::new(),
        controls: Vec::new(),
        jumps: Vec::new(),
        stop: None,
        seed,
    };

    for k in 0..n_steps {
        let t0 = horizon * k as f64 / n_steps as f64;
        let t1 = horizon * (k + 1) as f64 / n_steps as f64;
        if plan.should_stop(t0, x, &state.sigma) {
            rec.stop = Some((k, t0));
            break;
        }
        let (bi, gi) = plan.controls(t0, x, &state.sigma);
        let b = model.controls_b[bi];
        let g = model.controls_g[gi];

        let mu = ensure_finite(model.drift.eval(x), "drift", t0, x)?;
        let sig = ensure_finite(model.vol.eval(x, b), "volatility", t0, x)?;
        let noise = standard_normal(&mut rng);
        let diff_inc = mu * dt + sig * dt.sqrt() * noise;

        // Jump events inside (t0, t1], with exact times; ς impacts are
        // applied by the thinning routine itself.
        let x_at_step_start = x;
        let mut increments = vec![diff_inc];
        while let Some((te, z)) =
            thin_next_event(hawkes, &mut state, t1, baseline_sup, &mut rng)?
        {
            let dx = ensure_finite(
                model.jump.eval(x_at_step_start, z, g),
                "jump map",
                te,
                x_at_step_start,
            )?;
            rec.jumps.push(JumpEvent { time: te, mark: z, dx });
            increments.push(dx);
            if rec.jumps.len() > hawkes.max_events {
                return Err(Error::numeric(format!(
                    "path exceeded {} jump events at t = {te:.6}",
                    hawkes.max_events
                )));
            }
        }

        let inj = plan.injection_in(t0, t1, x, &state.sigma).max(0.0);
        if inj > 0.0 {
            increments.push(inj);
            xi += inj;
        }

        let reflected = skorokhod_reflect(&increments, x, model.x_lo, model.x_hi)?;
        x = *reflected.path.last().unwrap();
        rp += reflected.r_plus.last().unwrap();
        rm += reflected.r_minus.last().unwrap();

        // Costless upper clamp on each excitation component.
        for j in 0..dim {
            if state.sigma[j] > model.sigma_hi[j] {
                rs[j] += state.sigma[j] - model.sigma_hi[j];
                state.sigma[j] = model.sigma_hi[j];
            }
        }

        rec.raw_diffusion.push(diff_inc);
        rec.controls.push((bi, gi));
        rec.times.push(t1);
        rec.x.push(x);
        rec.sigma.push(state.sigma.clone());
        rec.lambda.push(hawkes.intensity(t1, &state.sigma));
        rec.xi.push(xi);
        rec.r_plus.push(rp);
        rec.r_minus.push(rm);
        rec.r_sigma.push(rs.clone());
    }
    if rec.stop.is_none() && plan.should_stop(horizon, x, &state.sigma) {
        // Stop rule firing exactly at the horizon is a terminal decision.
        rec.stop = Some((n_steps, horizon));
    }
    Ok(rec)
}

/// Discounted pathwise payoff
/// e^{−rτ} F(X_τ) when stopped early, else e^{−rT} G(X_T), minus the
/// injection and running costs as left-point Riemann–Stieltjes sums on the
/// path grid.
pub fn evaluate_payoff(path: &PathRecord, model: &ModelSpec, cost: &CostSpec) -> f64 {
    let r = cost.discount;
    let disc = |t: f64| (-r * t).exp();
    let hawkes = &model.hawkes;

    let executed = path.raw_diffusion.len();
    let mut total = match path.stop {
        Some((_, tau)) => disc(tau) * cost.stop.eval(path.x[executed]),
        None => disc(*path.times.last().unwrap()) * cost.terminal.eval(path.terminal_x()),
    };

    for k in 0..executed {
        let t = path.times[k];
        let (bi, gi) = path.controls[k];
        let b = model.controls_b[bi];
        let g = model.controls_g[gi];
        let kappa_int = cost.kappa_integral_exact(hawkes, t, path.x[k]);
        let rate = cost.running_rate(hawkes, t, path.x[k], &path.sigma[k], b, g, kappa_int);
        total -= disc(t) * rate * path.dt;
        let dxi = path.xi[k + 1] - path.xi[k];
        if dxi > 0.0 {
            total -= disc(t) * cost.injection.eval(t) * dxi;
        }
    }
    total
}
