//! Backward dynamic program over the assembled transition model.
//!
//! Layer recursion (i = N−1 … 0):
//!
//! 1. continuation C_i(x, ς) = max over finite (b, g) of
//!    −𝒦(t_i, x, ς, b, g)Δt + e^(−rΔt) Σ p · V_{i+1}(successor),
//! 2. stopping branch e^(−rΔt) F(x) joins the max,
//! 3. the zero-duration injection branch V_i(x) ≥ V_i(x+h) − φ(t_i)h is
//!    resolved by one descending-x sweep per ς-slice (injection moves +h, so
//!    upper values are final when needed).
//!
//! Ties resolve with priority stop, then diffuse, then inject, making
//! policies reproducible.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dynamics::CostSpec;
use crate::error::{Error, Result};
use crate::lattice::{lin_split, product_split, LatticeSpec, TransitionModel};

/// Action recorded in the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyAction {
    Stop,
    /// Diffuse with the flat control index b·|Γ| + g.
    Diffuse(u16),
    Inject,
}

impl PolicyAction {
    pub fn encode(self) -> u16 {
        match self {
            PolicyAction::Stop => 0,
            PolicyAction::Inject => 1,
            PolicyAction::Diffuse(bg) => 2 + bg,
        }
    }

    pub fn decode(code: u16) -> Self {
        match code {
            0 => PolicyAction::Stop,
            1 => PolicyAction::Inject,
            c => PolicyAction::Diffuse(c - 2),
        }
    }

    pub fn label(self) -> String {
        match self {
            PolicyAction::Stop => "stop".to_string(),
            PolicyAction::Inject => "inject".to_string(),
            PolicyAction::Diffuse(bg) => format!("diffuse({bg})"),
        }
    }
}

/// Time-indexed value surface over (x, ς); layer N is the terminal layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub nx: usize,
    pub n_sigma: usize,
    pub n_layers: usize,
    /// layers[i][ς·nx + x], i = 0..=n_layers.
    pub layers: Vec<Vec<f64>>,
    pub lattice_hash: String,
}

impl ValueTable {
    pub fn value(&self, layer: usize, x_idx: usize, sigma_idx: usize) -> f64 {
        self.layers[layer][sigma_idx * self.nx + x_idx]
    }

    pub fn initial_layer(&self) -> &[f64] {
        &self.layers[0]
    }
}

/// Argmax action per layer and state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub nx: usize,
    pub n_sigma: usize,
    /// actions[i][ς·nx + x], i = 0..n_layers−1.
    pub actions: Vec<Vec<PolicyAction>>,
    pub lattice_hash: String,
}

impl Policy {
    pub fn action(&self, layer: usize, x_idx: usize, sigma_idx: usize) -> PolicyAction {
        self.actions[layer][sigma_idx * self.nx + x_idx]
    }
}

/// Terminal layer V_N(x, ς) = G(x) (t_N = horizon, so no extra discount).
pub fn terminal_layer(tm: &TransitionModel, cost: &CostSpec) -> Vec<f64> {
    let lat = &tm.lattice;
    let nx = lat.nx();
    let mut layer = vec![0.0; lat.n_states()];
    for x_idx in 0..nx {
        let g = cost.terminal.eval(lat.x(x_idx));
        for sigma_idx in 0..lat.n_sigma() {
            layer[sigma_idx * nx + x_idx] = g;
        }
    }
    layer
}

/// Discrete running rate 𝒦 at a lattice state using the Voronoi mark sites.
pub fn running_rate_discrete(
    tm: &TransitionModel,
    cost: &CostSpec,
    t: f64,
    x: f64,
    sigma_idx: usize,
    b: f64,
    g: f64,
) -> f64 {
    let lat = &tm.lattice;
    let kappa_int: f64 = lat
        .mark_sites
        .iter()
        .zip(&lat.mark_weights)
        .map(|(&z, &q)| q * cost.jump_cost.eval(t, x, z))
        .sum();
    tm.intensity(t, sigma_idx) * kappa_int - cost.running_cost.eval(t, x, b, g)
}

/// Best continuation value and control pair at one state, reading the next
/// layer through the cached transition pieces.
pub fn continuation_value(
    tm: &TransitionModel,
    cost: &CostSpec,
    layer: usize,
    x_idx: usize,
    sigma_idx: usize,
    v_next: &[f64],
) -> (f64, u16) {
    let lat = &tm.lattice;
    let nx = lat.nx();
    let t = lat.time(layer);
    let dt = lat.dt;
    let disc = (-cost.discount * dt).exp();
    let x = lat.x(x_idx);
    let p1 = tm.jump_probability(t, sigma_idx);
    let p0 = 1.0 - p1;

    let mut best = f64::NEG_INFINITY;
    let mut best_bg = 0u16;
    let n_g = tm.n_g();
    for b_idx in 0..tm.n_b() {
        let triple = tm.diffusion_triple(b_idx, x_idx);
        let mut diff_leg = 0.0;
        for &(xs, pd) in triple {
            if pd == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for &(sj, w) in tm.decay_split_of(sigma_idx) {
                acc += w * v_next[sj as usize * nx + xs as usize];
            }
            diff_leg += pd * acc;
        }
        for g_idx in 0..n_g {
            let mut jump_leg = 0.0;
            if p1 > 0.0 {
                for (site, &q) in lat.mark_weights.iter().enumerate() {
                    let xs = tm.jump_successor(g_idx, x_idx, site) as usize;
                    let mut acc = 0.0;
                    for &(sj, w) in tm.jump_split_of(sigma_idx, site) {
                        acc += w * v_next[sj as usize * nx + xs];
                    }
                    jump_leg += q * acc;
                }
            }
            let b = tm.model.controls_b[b_idx];
            let g = tm.model.controls_g[g_idx];
            let rate = running_rate_discrete(tm, cost, t, x, sigma_idx, b, g);
            let value = -rate * dt + disc * (p0 * diff_leg + p1 * jump_leg);
            if value > best {
                best = value;
                best_bg = (b_idx * n_g + g_idx) as u16;
            }
        }
    }
    (best, best_bg)
}

/// Full backward solve. Stores every layer (the gradient-constraint and
/// fixed-point checks need them) plus the per-layer argmax policy.
pub fn backward_solve(tm: &TransitionModel, cost: &CostSpec) -> Result<(ValueTable, Policy)> {
    let lat = &tm.lattice;
    let nx = lat.nx();
    let n_sigma = lat.n_sigma();
    let n_layers = lat.n_layers;
    let dt = lat.dt;
    let disc = (-cost.discount * dt).exp();
    let stop_disc = if cost.stop_discount_step { disc } else { 1.0 };
    let hash = lat.hash();

    let stop_values: Vec<f64> = (0..nx)
        .map(|i| stop_disc * cost.stop.eval(lat.x(i)))
        .collect();

    let mut layers = vec![Vec::new(); n_layers + 1];
    let mut actions = vec![Vec::new(); n_layers];
    layers[n_layers] = terminal_layer(tm, cost);

    for i in (0..n_layers).rev() {
        let v_next = &layers[i + 1];
        let t = lat.time(i);
        let phi = if cost.injection.enabled() {
            Some(cost.injection.eval(t))
        } else {
            None
        };
        let mut layer = vec![0.0; nx * n_sigma];
        let mut acts = vec![PolicyAction::Stop; nx * n_sigma];
        layer
            .par_chunks_mut(nx)
            .zip(acts.par_chunks_mut(nx))
            .enumerate()
            .for_each(|(sigma_idx, (vals, act))| {
                for x_idx in 0..nx {
                    let (cont, bg) = continuation_value(tm, cost, i, x_idx, sigma_idx, v_next);
                    let stop = stop_values[x_idx];
                    if stop >= cont {
                        vals[x_idx] = stop;
                        act[x_idx] = PolicyAction::Stop;
                    } else {
                        vals[x_idx] = cont;
                        act[x_idx] = PolicyAction::Diffuse(bg);
                    }
                }
                // Zero-duration injection branch: descending-x sweep; the
                // value at x + h is final once we reach x.
                if let Some(phi) = phi {
                    for x_idx in (0..nx - 1).rev() {
                        let inject = vals[x_idx + 1] - phi * lat.h;
                        if inject > vals[x_idx] {
                            vals[x_idx] = inject;
                            act[x_idx] = PolicyAction::Inject;
                        }
                    }
                }
            });
        if let Some(bad) = layer.iter().position(|v| !v.is_finite()) {
            let (sigma_idx, x_idx) = (bad / nx, bad % nx);
            return Err(Error::numeric(format!(
                "non-finite value at layer {i}, x = {}, ς index {sigma_idx}",
                lat.x(x_idx)
            )));
        }
        layers[i] = layer;
        actions[i] = acts;
    }

    Ok((
        ValueTable {
            nx,
            n_sigma,
            n_layers,
            layers,
            lattice_hash: hash.clone(),
        },
        Policy {
            nx,
            n_sigma,
            actions,
            lattice_hash: hash,
        },
    ))
}

/// Multilinear interpolation of the value surface in (x, ς) on the nearest
/// time layer at or before t.
pub fn query_value(
    table: &ValueTable,
    lattice: &LatticeSpec,
    t: f64,
    x: f64,
    sigma: &[f64],
) -> Result<f64> {
    if t < -1e-12 || t > lattice.horizon * (1.0 + 1e-12) {
        return Err(Error::invariant(format!(
            "query time {t} outside [0, {}]",
            lattice.horizon
        )));
    }
    let x_points = lattice.x_points();
    if x < x_points[0] - 1e-12 || x > x_points[x_points.len() - 1] + 1e-12 {
        return Err(Error::invariant(format!("query x = {x} outside the domain")));
    }
    if sigma.len() != lattice.dim() {
        return Err(Error::invariant("query ς dimension mismatch"));
    }
    for (j, (&s, grid)) in sigma.iter().zip(&lattice.sigma_grids).enumerate() {
        if s < grid.lo - 1e-12 || s > grid.hi + 1e-12 {
            return Err(Error::invariant(format!(
                "query ς[{j}] = {s} outside [{}, {}]",
                grid.lo, grid.hi
            )));
        }
    }
    let layer = ((t / lattice.dt) + 1e-9).floor().min(table.n_layers as f64) as usize;
    let x_clamped = x.clamp(x_points[0], x_points[x_points.len() - 1]);
    let (x_split, _) = lin_split(x_clamped, &x_points)?;
    let grids: Vec<Vec<f64>> = lattice.sigma_grids.iter().map(|g| g.points()).collect();
    let grid_refs: Vec<&[f64]> = grids.iter().map(|g| g.as_slice()).collect();
    let clamped: Vec<f64> = sigma
        .iter()
        .zip(&lattice.sigma_grids)
        .map(|(&s, g)| s.clamp(g.lo, g.hi))
        .collect();
    let (corners, _) = product_split(&clamped, &grid_refs)?;
    let mut value = 0.0;
    for (multi, w_s) in &corners {
        let sigma_idx = lattice.sigma_flat_index(multi);
        for &(xi, w_x) in &x_split {
            value += w_s * w_x * table.value(layer, xi, sigma_idx);
        }
    }
    Ok(value)
}

/// CSV export of one time slice: x, sigma_1..n, value, action.
pub fn value_slice_csv(
    table: &ValueTable,
    policy: &Policy,
    lattice: &LatticeSpec,
    layer: usize,
) -> String {
    let n = lattice.dim();
    let mut out = String::from("x");
    for j in 1..=n {
        out.push_str(&format!(",sigma_{j}"));
    }
    out.push_str(",value,action\n");
    for sigma_idx in 0..lattice.n_sigma() {
        let sig = lattice.sigma_vector(sigma_idx);
        for x_idx in 0..lattice.nx() {
            out.push_str(&format!("{}", lattice.x(x_idx)));
            for s in &sig {
                out.push_str(&format!(",{s}"));
            }
            let action = if layer < policy.actions.len() {
                policy.action(layer, x_idx, sigma_idx).label()
            } else {
                "terminal".to_string()
            };
            out.push_str(&format!(
                ",{},{}\n",
                table.value(layer, x_idx, sigma_idx),
                action
            ));
        }
    }
    out
}

const SOLUTION_MAGIC: &[u8; 4] = b"HXSL";
const SOLUTION_VERSION: u32 = 1;

/// Binary serialization of (ValueTable, Policy), keyed by the lattice hash
/// and protected by a SHA-256 checksum.
pub fn solution_to_bytes(table: &ValueTable, policy: &Policy) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SOLUTION_MAGIC);
    buf.extend_from_slice(&SOLUTION_VERSION.to_le_bytes());
    let hash_bytes = table.lattice_hash.as_bytes();
    buf.extend_from_slice(&(hash_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(hash_bytes);
    buf.extend_from_slice(&(table.nx as u64).to_le_bytes());
    buf.extend_from_slice(&(table.n_sigma as u64).to_le_bytes());
    buf.extend_from_slice(&(table.n_layers as u64).to_le_bytes());
    for layer in &table.layers {
        for v in layer {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for layer in &policy.actions {
        for a in layer {
            buf.extend_from_slice(&a.encode().to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn solution_from_bytes(bytes: &[u8]) -> Result<(ValueTable, Policy)> {
    fn fail(msg: &str) -> Error {
        Error::invariant(format!("solution file: {msg}"))
    }
    if bytes.len() < 32 + 20 {
        return Err(fail("truncated"));
    }
    let (payload, checksum) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(payload);
    if digest.as_slice() != checksum {
        return Err(fail("checksum mismatch"));
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > payload.len() {
            return Err(fail("truncated"));
        }
        let s = &payload[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != SOLUTION_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != SOLUTION_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let hash_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let lattice_hash = String::from_utf8(take(&mut pos, hash_len)?.to_vec())
        .map_err(|_| fail("bad hash encoding"))?;
    let nx = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let n_sigma = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let n_layers = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let n_states = nx * n_sigma;
    let mut layers = Vec::with_capacity(n_layers + 1);
    for _ in 0..=n_layers {
        let mut layer = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            layer.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        layers.push(layer);
    }
    let mut actions = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut layer = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let code = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
            layer.push(PolicyAction::decode(code));
        }
        actions.push(layer);
    }
    Ok((
        ValueTable {
            nx,
            n_sigma,
            n_layers,
            layers,
            lattice_hash: lattice_hash.clone(),
        },
        Policy {
            nx,
            n_sigma,
            actions,
            lattice_hash,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CostSpec, ModelSpec};
    use crate::func::{
        BaselineFn, DriftFn, InjectionCostFn, JumpCostFn, JumpFn, MarkImpactFn, RunningCostFn,
        StopPayoffFn, TerminalPayoffFn, VolFn,
    };
    use crate::hawkes::{HawkesComponent, HawkesSpec, MarkMeasure, DEFAULT_MAX_EVENTS};
    use crate::lattice::{assemble_transitions, build_lattice};
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
    fn terminal_layer_values() {
        let model = app_model();
        let lat = build_lattice(&model, 0.05, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let cost = app_cost(Some(3.0));
        let layer = terminal_layer(&tm, &cost);
        let nx = lat.nx();
        // Ceiling point.
        assert_relative_eq!(layer[nx - 1], 10.0, epsilon = 1e-12);
        // Interior: G(0.5) = 0.5^0.9 / 0.1 ≈ 5.359.
        let x_idx = lat.x_points().iter().position(|&x| x == 0.5).unwrap();
        assert_relative_eq!(layer[x_idx], 0.5_f64.powf(0.9) / 0.1, epsilon = 1e-12);
        assert!((layer[x_idx] - 5.359).abs() < 1e-3);
        // Zero payoff.
        let zero_cost = CostSpec {
            terminal: TerminalPayoffFn::Zero,
            ..app_cost(None)
        };
        assert!(terminal_layer(&tm, &zero_cost).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn continuation_constant_propagation() {
        let model = app_model();
        let lat = build_lattice(&model, 0.1, 5, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let cost = app_cost(None);
        let v_next = vec![3.25; lat.n_states()];
        for x_idx in 0..lat.nx() {
            for sigma_idx in [0, lat.n_sigma() / 2, lat.n_sigma() - 1] {
                let (c, _) = continuation_value(&tm, &cost, 0, x_idx, sigma_idx, &v_next);
                assert_relative_eq!(c, 3.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn continuation_two_state_dot_product() {
        // Engineered two-point chain whose upward probability is 3/4:
        // σ² = hμ makes p_up = 0.75, with the fold keeping the rest at x_lo.
        let model = ModelSpec {
            drift: DriftFn::Constant { value: 1.0 },
            vol: VolFn::Constant { value: 1.0 },
            jump: JumpFn::Constant { value: 0.0 },
            controls_b: vec![1.0],
            controls_g: vec![0.0],
            hawkes: HawkesSpec {
                baseline: BaselineFn::Constant { value: 0.0 },
                components: vec![HawkesComponent { d: 0.0, q: 1.0 }],
                mark_impact: MarkImpactFn::Constant { value: 0.0 },
                mark_measure: MarkMeasure::dirac(1.0),
                horizon: 0.5,
                allow_critical: true,
                stability_exponent: 1.0,
                max_events: DEFAULT_MAX_EVENTS,
            },
            x_lo: 0.0,
            x_hi: 1.0,
            sigma_lo: vec![0.0],
            sigma_hi: vec![1.0],
        };
        let lat = build_lattice(&model, 1.0, 2, 1).unwrap();
        assert_eq!(lat.nx(), 2);
        assert_eq!(lat.n_layers, 1);
        let tm = assemble_transitions(&model, &lat).unwrap();
        let cost = app_cost(None);
        let mut v_next = vec![0.0; lat.n_states()];
        for sigma_idx in 0..lat.n_sigma() {
            v_next[sigma_idx * 2 + 1] = 1.0;
        }
        let (c, _) = continuation_value(&tm, &cost, 0, 0, 0, &v_next);
        assert_relative_eq!(c, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn prohibitive_injection_cost_never_injects() {
        let model = app_model();
        let lat = build_lattice(&model, 0.1, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let (v_huge, pol_huge) = backward_solve(&tm, &app_cost(Some(1e9))).unwrap();
        let (v_off, _) = backward_solve(&tm, &app_cost(None)).unwrap();
        for (a, b) in v_huge.layers[0].iter().zip(&v_off.layers[0]) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        for layer in &pol_huge.actions {
            assert!(layer.iter().all(|&a| a != PolicyAction::Inject));
        }
    }

    #[test]
    fn stopping_dominance_and_value_bounds() {
        let model = app_model();
        let lat = build_lattice(&model, 0.05, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let cost = app_cost(Some(3.0));
        let (table, _) = backward_solve(&tm, &cost).unwrap();
        let stop_f: Vec<f64> = (0..lat.nx()).map(|i| cost.stop.eval(lat.x(i))).collect();
        for i in 0..lat.n_layers {
            for sigma_idx in 0..lat.n_sigma() {
                for x_idx in 0..lat.nx() {
                    let v = table.value(i, x_idx, sigma_idx);
                    // r = 0 so the one-step stop discount is inert.
                    assert!(v >= stop_f[x_idx] - 1e-12);
                    assert!(v >= -1e-12 && v <= 10.0 + 1e-9, "value {v} out of [0, 10]");
                }
            }
        }
    }

    #[test]
    fn gradient_constraint_holds_everywhere() {
        let model = app_model();
        let lat = build_lattice(&model, 0.1, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let cost = app_cost(Some(3.0));
        let (table, _) = backward_solve(&tm, &cost).unwrap();
        for i in 0..lat.n_layers {
            let phi = cost.injection.eval(lat.time(i));
            for sigma_idx in 0..lat.n_sigma() {
                for x_idx in 0..lat.nx() - 1 {
                    let gap =
                        table.value(i, x_idx + 1, sigma_idx) - table.value(i, x_idx, sigma_idx);
                    assert!(
                        gap <= phi * lat.h + 1e-10,
                        "layer {i}, x {}: gap {gap} > φh {}",
                        lat.x(x_idx),
                        phi * lat.h
                    );
                }
            }
        }
    }

    #[test]
    fn recomputing_a_layer_is_bit_identical() {
        let model = app_model();
        let lat = build_lattice(&model, 0.1, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let cost = app_cost(Some(0.5));
        let (table, _) = backward_solve(&tm, &cost).unwrap();
        let (table2, _) = backward_solve(&tm, &cost).unwrap();
        for (a, b) in table.layers.iter().zip(&table2.layers) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn monotone_in_x_and_sigma_for_app_preset() {
        let model = app_model();
        let lat = build_lattice(&model, 0.05, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let (table, _) = backward_solve(&tm, &app_cost(Some(0.01))).unwrap();
        // Nondecreasing in x along every ς-slice of the initial layer.
        for sigma_idx in 0..lat.n_sigma() {
            for x_idx in 0..lat.nx() - 1 {
                assert!(
                    table.value(0, x_idx + 1, sigma_idx)
                        >= table.value(0, x_idx, sigma_idx) - 1e-10
                );
            }
        }
        // Nonincreasing in ς (jumps only damage X).
        for x_idx in 0..lat.nx() {
            for sigma_idx in 0..lat.n_sigma() - 1 {
                assert!(
                    table.value(0, x_idx, sigma_idx + 1)
                        <= table.value(0, x_idx, sigma_idx) + 1e-10
                );
            }
        }
    }

    #[test]
    fn query_value_interpolation() {
        let model = app_model();
        let lat = build_lattice(&model, 0.1, 8, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let (table, _) = backward_solve(&tm, &app_cost(Some(3.0))).unwrap();

        // Grid node is exact.
        let x_idx = 10;
        let sigma_idx = 3;
        let exact = table.value(0, x_idx, sigma_idx);
        let got = query_value(&table, &lat, 0.0, lat.x(x_idx), &lat.sigma_vector(sigma_idx))
            .unwrap();
        assert_eq!(got.to_bits(), exact.to_bits());

        // Midpoint in x is the average of neighbors.
        let mid = 0.5 * (lat.x(x_idx) + lat.x(x_idx + 1));
        let got = query_value(&table, &lat, 0.0, mid, &lat.sigma_vector(sigma_idx)).unwrap();
        let avg = 0.5 * (exact + table.value(0, x_idx + 1, sigma_idx));
        assert_relative_eq!(got, avg, epsilon = 1e-12);

        // Off-grid points bounded by surrounding node values.
        let mut rng = crate::rng::stream_rng(3, 9);
        use rand::Rng;
        for _ in 0..100 {
            let x = -1.0 + 2.0 * rng.gen::<f64>();
            let s = -0.5 + 3.5 * rng.gen::<f64>();
            let v = query_value(&table, &lat, 0.0, x, &[s]).unwrap();
            let xs = lat.x_points();
            let xi = xs.iter().rposition(|&p| p <= x).unwrap().min(lat.nx() - 2);
            let sg = lat.sigma_grids[0].points();
            let si = sg.iter().rposition(|&p| p <= s).unwrap().min(sg.len() - 2);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for dx in 0..2 {
                for ds in 0..2 {
                    let val = table.value(0, xi + dx, si + ds);
                    lo = lo.min(val);
                    hi = hi.max(val);
                }
            }
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        // Domain violations are rejected.
        assert!(query_value(&table, &lat, 0.0, 1.5, &[0.0]).is_err());
        assert!(query_value(&table, &lat, 2.0, 0.0, &[0.0]).is_err());
        assert!(query_value(&table, &lat, 0.0, 0.0, &[9.0]).is_err());
    }

    #[test]
    fn solution_roundtrip_and_checksum() {
        let model = app_model();
        let lat = build_lattice(&model, 0.25, 4, 1).unwrap();
        let tm = assemble_transitions(&model, &lat).unwrap();
        let (table, policy) = backward_solve(&tm, &app_cost(Some(1.0))).unwrap();
        let bytes = solution_to_bytes(&table, &policy);
        let (t2, p2) = solution_from_bytes(&bytes).unwrap();
        assert_eq!(table, t2);
        assert_eq!(policy, p2);

        let mut corrupted = bytes.clone();
        let mid = corrupted.len() / 2;
        corrupted[mid] ^= 0xFF;
        assert!(solution_from_bytes(&corrupted).is_err());
    }
}
