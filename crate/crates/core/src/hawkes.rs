//! Marked Hawkes process with a sum-of-exponentials kernel.
//!
//! The intensity is
//! ```text
//! λ_t = λ∞(t) + Σ_j d_j ς_t^(j),    dς^(j) = −q_j ς^(j) dt + ρ(z) dN
//! ```
//! so the pair (λ, ς) is Markov: between events every component decays
//! exactly multiplicatively, and each event (time, mark z) adds ρ(z) to every
//! component. Simulation uses Ogata-style thinning with the piecewise bound
//! λ̄ = sup λ∞ + Σ_j (d_j ς^(j))⁺, which dominates the intensity until the
//! next event because positive excitation only decays and negative excitation
//! only relaxes toward zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{BaselineFn, MarkImpactFn};
use crate::rng::stream_rng;

pub const DEFAULT_MAX_EVENTS: usize = 1_000_000;

/// One exponential kernel component d · e^(−q t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesComponent {
    /// Kernel weight d.
    pub d: f64,
    /// Decay rate q > 0.
    pub q: f64,
}

/// Mark distribution m(dz) on a compact support with m({0}) = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarkMeasure {
    /// Finite support: list of (z, weight).
    Finite { atoms: Vec<(f64, f64)> },
    /// Uniform density on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    /// Piecewise-constant density: `edges` has len = bins + 1, `masses` the
    /// probability of each bin.
    StepDensity { edges: Vec<f64>, masses: Vec<f64> },
}

impl MarkMeasure {
    pub fn dirac(z: f64) -> Self {
        MarkMeasure::Finite {
            atoms: vec![(z, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        const TOL: f64 = 1e-12;
        match self {
            MarkMeasure::Finite { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::config("mark_measure.atoms", "must be nonempty"));
                }
                let mut total = 0.0;
                for &(z, w) in atoms {
                    if w < 0.0 {
                        return Err(Error::config(
                            "mark_measure.atoms",
                            format!("negative weight {w} at z={z}"),
                        ));
                    }
                    if z == 0.0 && w > 0.0 {
                        return Err(Error::config(
                            "mark_measure.atoms",
                            "mass at z = 0 is not allowed",
                        ));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > TOL {
                    return Err(Error::config(
                        "mark_measure.atoms",
                        format!("weights sum to {total}, expected 1"),
                    ));
                }
            }
            MarkMeasure::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::config("mark_measure", "requires hi > lo"));
                }
            }
            MarkMeasure::StepDensity { edges, masses } => {
                if edges.len() != masses.len() + 1 || masses.is_empty() {
                    return Err(Error::config(
                        "mark_measure",
                        "edges must have masses.len() + 1 entries",
                    ));
                }
                if edges.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config("mark_measure.edges", "must be increasing"));
                }
                if masses.iter().any(|&m| m < 0.0) {
                    return Err(Error::config("mark_measure.masses", "must be nonnegative"));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > TOL {
                    return Err(Error::config(
                        "mark_measure.masses",
                        format!("masses sum to {total}, expected 1"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Support bounds (min, max).
    pub fn support(&self) -> (f64, f64) {
        match self {
            MarkMeasure::Finite { atoms } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &(z, w) in atoms {
                    if w > 0.0 {
                        lo = lo.min(z);
                        hi = hi.max(z);
                    }
                }
                (lo, hi)
            }
            MarkMeasure::Uniform { lo, hi } => (*lo, *hi),
            MarkMeasure::StepDensity { edges, .. } => (edges[0], edges[edges.len() - 1]),
        }
    }

    /// CDF m((−∞, z]).
    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            MarkMeasure::Finite { atoms } => {
                atoms.iter().filter(|(zi, _)| *zi <= z).map(|(_, w)| w).sum()
            }
            MarkMeasure::Uniform { lo, hi } => ((z - lo) / (hi - lo)).clamp(0.0, 1.0),
            MarkMeasure::StepDensity { edges, masses } => {
                let mut acc = 0.0;
                for (i, &m) in masses.iter().enumerate() {
                    let (a, b) = (edges[i], edges[i + 1]);
                    if z >= b {
                        acc += m;
                    } else if z > a {
                        acc += m * (z - a) / (b - a);
                        break;
                    } else {
                        break;
                    }
                }
                acc.min(1.0)
            }
        }
    }

    /// Generalized inverse CDF: smallest z with cdf(z) >= p.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            MarkMeasure::Finite { atoms } => {
                let mut sorted: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| a.1 > 0.0).collect();
                sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut acc = 0.0;
                for (z, w) in &sorted {
                    acc += w;
                    if acc >= p - 1e-15 {
                        return *z;
                    }
                }
                sorted[sorted.len() - 1].0
            }
            MarkMeasure::Uniform { lo, hi } => lo + p * (hi - lo),
            MarkMeasure::StepDensity { edges, masses } => {
                let mut acc = 0.0;
                for (i, &m) in masses.iter().enumerate() {
                    if acc + m >= p - 1e-15 {
                        let frac = if m > 0.0 { (p - acc) / m } else { 0.0 };
                        return edges[i] + frac.clamp(0.0, 1.0) * (edges[i + 1] - edges[i]);
                    }
                    acc += m;
                }
                edges[edges.len() - 1]
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.quantile(u)
    }

    /// ∫ f(ρ(z)) m(dz) for f(y) = y (mean impact ρ̄).
    pub fn mean_impact(&self, rho: &MarkImpactFn) -> f64 {
        self.integrate(|z| rho.eval(z))
    }

    /// ∫ |ρ(z)|^p m(dz) (the ρ* moment of the stability condition).
    pub fn impact_moment(&self, rho: &MarkImpactFn, p: f64) -> f64 {
        self.integrate(|z| rho.eval(z).abs().powf(p))
    }

    /// ∫ z m(dz).
    pub fn mean(&self) -> f64 {
        self.integrate(|z| z)
    }

    /// Numerically exact for `Finite`; 64-point midpoint rule per bin for the
    /// continuous kinds, which is plenty for the smooth integrands used here.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            MarkMeasure::Finite { atoms } => atoms.iter().map(|&(z, w)| w * f(z)).sum(),
            MarkMeasure::Uniform { lo, hi } => {
                let n = 256;
                let dz = (hi - lo) / n as f64;
                (0..n).map(|i| f(lo + (i as f64 + 0.5) * dz) * dz).sum::<f64>() / (hi - lo)
            }
            MarkMeasure::StepDensity { edges, masses } => {
                let mut acc = 0.0;
                for (i, &m) in masses.iter().enumerate() {
                    let (a, b) = (edges[i], edges[i + 1]);
                    let n = 64;
                    let dz = (b - a) / n as f64;
                    let avg: f64 =
                        (0..n).map(|k| f(a + (k as f64 + 0.5) * dz)).sum::<f64>() / n as f64;
                    acc += m * avg;
                }
                acc
            }
        }
    }
}

/// Hawkes regime reported by the stability check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityRegime {
    Subcritical,
    Critical,
    Supercritical,
}

/// Full specification of the marked Hawkes process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesSpec {
    pub baseline: BaselineFn,
    pub components: Vec<HawkesComponent>,
    pub mark_impact: MarkImpactFn,
    pub mark_measure: MarkMeasure,
    /// Horizon T.
    pub horizon: f64,
    /// Accept critical / supercritical configurations (finite-horizon runs
    /// are still well-defined).
    #[serde(default)]
    pub allow_critical: bool,
    /// Moment exponent used in the ρ* stability integral.
    #[serde(default = "default_stability_exponent")]
    pub stability_exponent: f64,
    /// Explosion guard for simulation.
    #[serde(default = "default_max_events")]
    pub max_events: usize,
}

fn default_stability_exponent() -> f64 {
    1.0
}

fn default_max_events() -> usize {
    DEFAULT_MAX_EVENTS
}

impl HawkesSpec {
    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    /// ρ* · Σ_j d_j / q_j, the branching norm of the stability condition.
    pub fn branching_norm(&self) -> f64 {
        let rho_star = self
            .mark_measure
            .impact_moment(&self.mark_impact, self.stability_exponent);
        rho_star
            * self
                .components
                .iter()
                .map(|c| c.d / c.q)
                .sum::<f64>()
    }

    pub fn stability_regime(&self) -> StabilityRegime {
        let norm = self.branching_norm();
        if (norm - 1.0).abs() <= 1e-9 {
            StabilityRegime::Critical
        } else if norm < 1.0 {
            StabilityRegime::Subcritical
        } else {
            StabilityRegime::Supercritical
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon <= 0.0 {
            return Err(Error::config("hawkes.horizon", "must be positive"));
        }
        if self.components.is_empty() {
            return Err(Error::config("hawkes.components", "must be nonempty"));
        }
        for (j, c) in self.components.iter().enumerate() {
            if c.q <= 0.0 {
                return Err(Error::config(
                    format!("hawkes.components[{j}].q"),
                    "decay rate must be positive",
                ));
            }
            if !c.d.is_finite() || !c.q.is_finite() {
                return Err(Error::config(
                    format!("hawkes.components[{j}]"),
                    "non-finite parameter",
                ));
            }
        }
        let sup = self.baseline.sup(self.horizon);
        if !sup.is_finite() {
            return Err(Error::config("hawkes.baseline", "must be bounded"));
        }
        if self.baseline.eval(0.0) < 0.0 || sup < 0.0 {
            return Err(Error::config("hawkes.baseline", "must be nonnegative"));
        }
        self.mark_measure.validate()?;
        if self.stability_regime() != StabilityRegime::Subcritical && !self.allow_critical {
            return Err(Error::config(
                "hawkes",
                format!(
                    "branching norm {} is not subcritical; set allow_critical = true to proceed",
                    self.branching_norm()
                ),
            ));
        }
        Ok(())
    }

    /// λ(t, ς) = λ∞(t) + Σ_j d_j ς^(j).
    pub fn intensity(&self, t: f64, sigma: &[f64]) -> f64 {
        debug_assert_eq!(sigma.len(), self.components.len());
        self.baseline.eval(t)
            + self
                .components
                .iter()
                .zip(sigma)
                .map(|(c, s)| c.d * s)
                .sum::<f64>()
    }

    /// Exact multiplicative decay of the excitation vector over `dt >= 0`.
    pub fn decay(&self, state: &IntensityState, dt: f64) -> Result<IntensityState> {
        if dt < 0.0 {
            return Err(Error::invariant(format!("decay_step: negative duration {dt}")));
        }
        let sigma = state
            .sigma
            .iter()
            .zip(&self.components)
            .map(|(s, c)| s * (-c.q * dt).exp())
            .collect();
        Ok(IntensityState {
            t: state.t + dt,
            sigma,
        })
    }
}

/// Excitation state at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityState {
    pub t: f64,
    pub sigma: Vec<f64>,
}

impl IntensityState {
    pub fn new(t: f64, sigma: Vec<f64>) -> Self {
        IntensityState { t, sigma }
    }

    pub fn zero(t: f64, dim: usize) -> Self {
        IntensityState {
            t,
            sigma: vec![0.0; dim],
        }
    }
}

/// Marked event log with strictly increasing times in (0, T].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<(f64, f64)>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,mark\n");
        for (t, z) in &self.events {
            out.push_str(&format!("{t},{z}\n"));
        }
        out
    }
}

/// Current intensity of `state` under `spec`.
pub fn intensity_at(spec: &HawkesSpec, state: &IntensityState) -> f64 {
    spec.intensity(state.t, &state.sigma)
}

/// Exact thinning simulation of the marked Hawkes process on [0, T].
///
/// Deterministic given (spec, sigma0, seed). Returns the event log and the
/// excitation state decayed to the horizon.
pub fn simulate_hawkes(
    spec: &HawkesSpec,
    sigma0: &[f64],
    seed: u64,
) -> Result<(EventLog, IntensityState)> {
    let mut rng = stream_rng(seed, 0);
    simulate_hawkes_with(spec, sigma0, &mut rng)
}

/// Thinning loop with a caller-provided generator (used by multi-path
/// drivers that manage their own streams).
pub fn simulate_hawkes_with<R: Rng>(
    spec: &HawkesSpec,
    sigma0: &[f64],
    rng: &mut R,
) -> Result<(EventLog, IntensityState)> {
    let horizon = spec.horizon;
    let baseline_sup = spec.baseline.sup(horizon);
    let mut state = IntensityState::new(0.0, sigma0.to_vec());
    let mut log = EventLog::default();

    while let Some(event) = thin_next_event(spec, &mut state, horizon, baseline_sup, rng)? {
        log.events.push(event);
        if log.events.len() > spec.max_events {
            return Err(Error::numeric(format!(
                "hawkes simulation exceeded {} events by t = {:.6}; \
                 likely explosive configuration",
                spec.max_events, state.t
            )));
        }
    }
    Ok((log, state))
}

/// Advances `state` to the next accepted event in (state.t, t_end], applying
/// the mark impact, or to `t_end` when no further event occurs. `baseline_sup`
/// must dominate λ∞ on [state.t, t_end]; it is combined with the positive part
/// of the current excitation to form the thinning bound, which is valid until
/// the next event because excitation components move monotonically toward
/// zero in between.
pub fn thin_next_event<R: Rng>(
    spec: &HawkesSpec,
    state: &mut IntensityState,
    t_end: f64,
    baseline_sup: f64,
    rng: &mut R,
) -> Result<Option<(f64, f64)>> {
    loop {
        let bound = baseline_sup
            + spec
                .components
                .iter()
                .zip(&state.sigma)
                .map(|(c, s)| (c.d * s).max(0.0))
                .sum::<f64>();
        if bound <= 0.0 {
            *state = spec.decay(state, t_end - state.t)?;
            return Ok(None);
        }
        let wait = crate::rng::exponential(rng, bound);
        if state.t + wait > t_end {
            *state = spec.decay(state, t_end - state.t)?;
            return Ok(None);
        }
        *state = spec.decay(state, wait)?;
        let lambda = intensity_at(spec, state).max(0.0);
        let u: f64 = rng.gen();
        if u * bound <= lambda {
            let z = spec.mark_measure.sample(rng);
            let impact = spec.mark_impact.eval(z);
            for s in &mut state.sigma {
                *s += impact;
            }
            return Ok(Some((state.t, z)));
        }
    }
}

/// E[λ_t] by RK4 integration of the mean system
/// dE[ς^(j)]/dt = −q_j E[ς^(j)] + ρ̄ E[λ_t], E[λ_t] = λ∞(t) + Σ d_j E[ς^(j)].
///
/// Fixed step ≤ 1e−4 · T; the oracle error budget is far below the
/// statistical tolerances it is compared against.
pub fn mean_intensity_ode(spec: &HawkesSpec, sigma0: &[f64], t: f64) -> f64 {
    *mean_intensity_path(spec, sigma0, &[t]).last().unwrap()
}

/// E[λ] at each requested time (ascending), sharing one integration pass.
pub fn mean_intensity_path(spec: &HawkesSpec, sigma0: &[f64], times: &[f64]) -> Vec<f64> {
    let rho_bar = spec.mark_measure.mean_impact(&spec.mark_impact);
    let n = spec.dimension();
    let lambda_of = |t: f64, s: &[f64]| -> f64 { spec.intensity(t, s) };
    let deriv = |t: f64, s: &[f64], out: &mut [f64]| {
        let lam = lambda_of(t, s);
        for j in 0..n {
            out[j] = -spec.components[j].q * s[j] + rho_bar * lam;
        }
    };

    let t_max = times.iter().cloned().fold(0.0_f64, f64::max);
    let step = (spec.horizon * 1e-4).min(if t_max > 0.0 { t_max } else { spec.horizon });
    let mut s = sigma0.to_vec();
    let mut t = 0.0;
    let mut results = Vec::with_capacity(times.len());
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    let mut targets = times.to_vec();
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &target in &targets {
        while t < target - 1e-15 {
            let dt = step.min(target - t);
            deriv(t, &s, &mut k1);
            for j in 0..n {
                tmp[j] = s[j] + 0.5 * dt * k1[j];
            }
            deriv(t + 0.5 * dt, &tmp, &mut k2);
            for j in 0..n {
                tmp[j] = s[j] + 0.5 * dt * k2[j];
            }
            deriv(t + 0.5 * dt, &tmp, &mut k3);
            for j in 0..n {
                tmp[j] = s[j] + dt * k3[j];
            }
            deriv(t + dt, &tmp, &mut k4);
            for j in 0..n {
                s[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            t += dt;
        }
        results.push(lambda_of(target, &s));
    }
    // Restore the caller's ordering.
    let mut out = vec![0.0; times.len()];
    let mut used = vec![false; targets.len()];
    for (i, &ti) in times.iter().enumerate() {
        let pos = targets
            .iter()
            .enumerate()
            .position(|(k, &tt)| tt == ti && !used[k])
            .unwrap();
        used[pos] = true;
        out[i] = results[pos];
    }
    out
}

/// Exact λ at time t reconstructed from an event log:
/// λ_t = λ∞(t) + Σ_j d_j [ς₀^(j) e^(−q_j t) + Σ_{s ≤ t} ρ(z_s) e^(−q_j (t−s))].
pub fn intensity_from_log(spec: &HawkesSpec, sigma0: &[f64], log: &EventLog, t: f64) -> f64 {
    let mut lambda = spec.baseline.eval(t);
    for (j, c) in spec.components.iter().enumerate() {
        let mut s = sigma0[j] * (-c.q * t).exp();
        for &(te, z) in &log.events {
            if te > t {
                break;
            }
            s += spec.mark_impact.eval(z) * (-c.q * (t - te)).exp();
        }
        lambda += c.d * s;
    }
    lambda
}

/// Exact ∫₀ᵀ λ_s ds along a simulated path: closed-form inter-event decay
/// integrals plus the exact baseline integral.
pub fn integrated_intensity(spec: &HawkesSpec, sigma0: &[f64], log: &EventLog) -> f64 {
    let horizon = spec.horizon;
    let mut total = spec.baseline.integral(0.0, horizon);
    let mut sigma = sigma0.to_vec();
    let mut t = 0.0;
    let add_segment = |sigma: &[f64], from: f64, to: f64| -> f64 {
        let dt = to - from;
        spec.components
            .iter()
            .zip(sigma)
            .map(|(c, s)| c.d * s * (1.0 - (-c.q * dt).exp()) / c.q)
            .sum::<f64>()
    };
    for &(te, z) in &log.events {
        total += add_segment(&sigma, t, te);
        let dt = te - t;
        for (s, c) in sigma.iter_mut().zip(&spec.components) {
            *s *= (-c.q * dt).exp();
        }
        let impact = spec.mark_impact.eval(z);
        for s in &mut sigma {
            *s += impact;
        }
        t = te;
    }
    total += add_segment(&sigma, t, horizon);
    total
}
