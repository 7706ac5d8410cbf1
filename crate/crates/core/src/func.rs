//! Parametric coefficient and cost functions.
//!
//! Model coefficients are closed under a small family of named forms so that
//! configurations stay serializable and runs stay hashable. Each form is a
//! plain enum evaluated by `match`; anything fancier belongs in a preset.

use serde::{Deserialize, Serialize};

/// Drift coefficient x ↦ μ(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftFn {
    Constant { value: f64 },
    /// intercept + slope · x (mean-reverting for slope < 0).
    Affine { intercept: f64, slope: f64 },
}

impl DriftFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            DriftFn::Constant { value } => *value,
            DriftFn::Affine { intercept, slope } => intercept + slope * x,
        }
    }
}

/// Volatility coefficient (x, b) ↦ σ(x, b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VolFn {
    Constant { value: f64 },
    /// value · b, the control scaling the noise.
    ControlScaled { value: f64 },
}

impl VolFn {
    pub fn eval(&self, _x: f64, b: f64) -> f64 {
        match self {
            VolFn::Constant { value } => *value,
            VolFn::ControlScaled { value } => value * b,
        }
    }
}

/// Jump map (x, z, g) ↦ χ(x, z, g) applied to the state at each event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JumpFn {
    Constant { value: f64 },
    /// coef · z.
    MarkScaled { coef: f64 },
    /// coef · z · g.
    ControlMarkScaled { coef: f64 },
}

impl JumpFn {
    pub fn eval(&self, _x: f64, z: f64, g: f64) -> f64 {
        match self {
            JumpFn::Constant { value } => *value,
            JumpFn::MarkScaled { coef } => coef * z,
            JumpFn::ControlMarkScaled { coef } => coef * z * g,
        }
    }
}

/// Mark impact z ↦ ρ(z) added to every intensity component at an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarkImpactFn {
    Constant { value: f64 },
    Identity,
    /// coef · z^exponent.
    Power { coef: f64, exponent: f64 },
}

impl MarkImpactFn {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            MarkImpactFn::Constant { value } => *value,
            MarkImpactFn::Identity => z,
            MarkImpactFn::Power { coef, exponent } => coef * z.powf(*exponent),
        }
    }
}

/// Deterministic baseline intensity t ↦ λ∞(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineFn {
    Constant { value: f64 },
    /// Piecewise-linear table of (t, value) knots; clamped outside the knots.
    Table { points: Vec<(f64, f64)> },
}

impl BaselineFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            BaselineFn::Constant { value } => *value,
            BaselineFn::Table { points } => {
                if points.is_empty() {
                    return 0.0;
                }
                if t <= points[0].0 {
                    return points[0].1;
                }
                for w in points.windows(2) {
                    let (t0, v0) = w[0];
                    let (t1, v1) = w[1];
                    if t <= t1 {
                        if t1 == t0 {
                            return v1;
                        }
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }

    /// Supremum of λ∞ over [0, horizon] (finite Λ∞ bound).
    pub fn sup(&self, horizon: f64) -> f64 {
        match self {
            BaselineFn::Constant { value } => *value,
            BaselineFn::Table { points } => {
                let mut best = self.eval(0.0).max(self.eval(horizon));
                for &(t, _) in points {
                    if t >= 0.0 && t <= horizon {
                        best = best.max(self.eval(t));
                    }
                }
                best
            }
        }
    }

    /// Exact integral of the piecewise-linear baseline over [a, b] ⊆ [0, T].
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            BaselineFn::Constant { value } => value * (b - a),
            BaselineFn::Table { .. } => {
                // Trapezoid on the knot refinement is exact for a
                // piecewise-linear function.
                let mut knots: Vec<f64> = vec![a, b];
                if let BaselineFn::Table { points } = self {
                    for &(t, _) in points {
                        if t > a && t < b {
                            knots.push(t);
                        }
                    }
                }
                knots.sort_by(|p, q| p.partial_cmp(q).unwrap());
                let mut total = 0.0;
                for w in knots.windows(2) {
                    total += 0.5 * (self.eval(w[0]) + self.eval(w[1])) * (w[1] - w[0]);
                }
                total
            }
        }
    }
}

/// Early-stop payoff x ↦ F(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StopPayoffFn {
    Zero,
    Constant { value: f64 },
    /// American-put style (strike − x)⁺.
    Put { strike: f64 },
    Affine { intercept: f64, slope: f64 },
}

impl StopPayoffFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            StopPayoffFn::Zero => 0.0,
            StopPayoffFn::Constant { value } => *value,
            StopPayoffFn::Put { strike } => (strike - x).max(0.0),
            StopPayoffFn::Affine { intercept, slope } => intercept + slope * x,
        }
    }
}

/// Terminal payoff x ↦ G(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalPayoffFn {
    Zero,
    Constant { value: f64 },
    /// (x⁺)^(1−eta) / eta — concave with ceiling 1/eta when x is capped at 1.
    PowerCeiling { eta: f64 },
    Affine { intercept: f64, slope: f64 },
}

impl TerminalPayoffFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TerminalPayoffFn::Zero => 0.0,
            TerminalPayoffFn::Constant { value } => *value,
            TerminalPayoffFn::PowerCeiling { eta } => x.max(0.0).powf(1.0 - eta) / eta,
            TerminalPayoffFn::Affine { intercept, slope } => intercept + slope * x,
        }
    }
}

/// Injection cost rate t ↦ φ(t); `Disabled` removes the inject action
/// entirely (the φ = ∞ case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InjectionCostFn {
    Disabled,
    Constant { value: f64 },
    Table { points: Vec<(f64, f64)> },
}

impl InjectionCostFn {
    pub fn enabled(&self) -> bool {
        !matches!(self, InjectionCostFn::Disabled)
    }

    /// φ(t); meaningless (returns +inf) when disabled.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            InjectionCostFn::Disabled => f64::INFINITY,
            InjectionCostFn::Constant { value } => *value,
            InjectionCostFn::Table { points } => BaselineFn::Table {
                points: points.clone(),
            }
            .eval(t),
        }
    }
}

/// Per-event cost (t, x, z) ↦ κ(t, x, z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JumpCostFn {
    Zero,
    Constant { value: f64 },
    MarkScaled { coef: f64 },
}

impl JumpCostFn {
    pub fn eval(&self, _t: f64, _x: f64, z: f64) -> f64 {
        match self {
            JumpCostFn::Zero => 0.0,
            JumpCostFn::Constant { value } => *value,
            JumpCostFn::MarkScaled { coef } => coef * z,
        }
    }
}

/// Running control cost (t, x, b, g) ↦ K(t, x, b, g).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunningCostFn {
    Zero,
    Constant { value: f64 },
    /// coef · (b² + g²).
    ControlQuadratic { coef: f64 },
}

impl RunningCostFn {
    pub fn eval(&self, _t: f64, _x: f64, b: f64, g: f64) -> f64 {
        match self {
            RunningCostFn::Zero => 0.0,
            RunningCostFn::Constant { value } => *value,
            RunningCostFn::ControlQuadratic { coef } => coef * (b * b + g * g),
        }
    }
}
