//! Discrete state space and one-step transition model.
//!
//! The chain lives on the grid {kh} ∩ [x_lo, x_hi] × S, where S is the
//! product of per-component excitation grids. One diffuse step combines
//!
//! - a trinomial diffusion move with probabilities
//!   p± = (σ²/2 + h μ±)/Q, p0 = 1 − p₊ − p₋, Q = h²/Δt,
//! - a no-jump branch of weight p0n = 1 − p1n that projects the exactly
//!   decayed excitation vector back onto S by expectation-preserving
//!   two-point product splitting,
//! - a jump branch of weight p1n = e^(−λΔt) λΔt that moves X by the
//!   cell-quantized jump map at one of the Voronoi mark representatives and
//!   projects ς + ρ(z) onto S.
//!
//! Inject and reflect actions are deterministic point masses. The time step
//! is uniform over states (Δt = h²/Q* shrunk to divide the horizon), which
//! keeps the backward recursion aligned in time; the per-state slack shows up
//! as extra self-transition mass.

use sha2::{Digest, Sha256};

use crate::dynamics::ModelSpec;
use crate::error::{Error, Result};
use crate::hawkes::MarkMeasure;

/// Uniform grid for one excitation component.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGrid {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
}

impl SigmaGrid {
    pub fn point(&self, i: usize) -> f64 {
        debug_assert!(i < self.m);
        self.lo + (self.hi - self.lo) * i as f64 / (self.m - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.point(i)).collect()
    }
}

/// The discrete state space plus everything derived from it that the
/// transition model and solver share.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub h: f64,
    /// x = k·h for k in k_lo..=k_hi.
    pub k_lo: i64,
    pub k_hi: i64,
    pub sigma_grids: Vec<SigmaGrid>,
    pub mark_sites: Vec<f64>,
    pub mark_weights: Vec<f64>,
    /// Uniform interpolation interval; n_layers · dt = horizon.
    pub dt: f64,
    pub n_layers: usize,
    pub horizon: f64,
    /// max over grid states of D(x) + h|μ(x)| (the raw normalizer).
    pub q_star: f64,
    /// h²/Δt ≥ q_star, the normalizer actually dividing the probabilities.
    pub q_norm: f64,
}

impl LatticeSpec {
    pub fn nx(&self) -> usize {
        (self.k_hi - self.k_lo + 1) as usize
    }

    pub fn x(&self, i: usize) -> f64 {
        (self.k_lo + i as i64) as f64 * self.h
    }

    pub fn x_points(&self) -> Vec<f64> {
        (0..self.nx()).map(|i| self.x(i)).collect()
    }

    pub fn n_sigma(&self) -> usize {
        self.sigma_grids.iter().map(|g| g.m).product()
    }

    pub fn n_states(&self) -> usize {
        self.nx() * self.n_sigma()
    }

    pub fn dim(&self) -> usize {
        self.sigma_grids.len()
    }

    /// Decodes a flat ς-index into per-component indices.
    pub fn sigma_multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        self.sigma_grids
            .iter()
            .map(|g| {
                let i = rest % g.m;
                rest /= g.m;
                i
            })
            .collect()
    }

    pub fn sigma_flat_index(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        let mut stride = 1;
        for (g, &i) in self.sigma_grids.iter().zip(multi) {
            flat += i * stride;
            stride *= g.m;
        }
        flat
    }

    pub fn sigma_vector(&self, flat: usize) -> Vec<f64> {
        self.sigma_multi_index(flat)
            .iter()
            .zip(&self.sigma_grids)
            .map(|(&i, g)| g.point(i))
            .collect()
    }

    /// Time of layer i (t_N = horizon exactly).
    pub fn time(&self, layer: usize) -> f64 {
        self.horizon * layer as f64 / self.n_layers as f64
    }

    /// Content hash keying solver artifacts to the lattice they were built on.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut desc = format!(
            "h={:?};k_lo={};k_hi={};dt={:?};n={};T={:?};qn={:?}",
            self.h, self.k_lo, self.k_hi, self.dt, self.n_layers, self.horizon, self.q_norm
        );
        for g in &self.sigma_grids {
            desc.push_str(&format!(";s[{:?},{:?},{}]", g.lo, g.hi, g.m));
        }
        for (z, w) in self.mark_sites.iter().zip(&self.mark_weights) {
            desc.push_str(&format!(";z{:?}w{:?}", z, w));
        }
        hasher.update(desc.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn grid_index(value: f64, h: f64, what: &str) -> Result<i64> {
    let k = (value / h).round();
    if (k * h - value).abs() > 1e-9 * value.abs().max(1.0) {
        return Err(Error::config(
            "lattice.h",
            format!("h = {h} does not divide {what} = {value}"),
        ));
    }
    Ok(k as i64)
}

/// Uniform time step Δt = h²/Q* with Q* = max over grid x (and controls) of
/// D(x) + h|μ(x)|, then shrunk so that (a) an integer number of layers covers
/// the horizon exactly and (b) λ_max Δt ≤ 0.1.
pub fn time_step(model: &ModelSpec, h: f64, sigma_grids: &[SigmaGrid]) -> Result<(f64, usize, f64, f64)> {
    let k_lo = grid_index(model.x_lo, h, "x_lo")?;
    let k_hi = grid_index(model.x_hi, h, "x_hi")?;
    let mut q_star: f64 = 0.0;
    for k in k_lo..=k_hi {
        let x = k as f64 * h;
        let d: f64 = model
            .controls_b
            .iter()
            .map(|&b| model.vol.eval(x, b).powi(2))
            .fold(0.0, f64::max);
        q_star = q_star.max(d + h * model.drift.eval(x).abs());
    }
    if q_star <= 0.0 {
        return Err(Error::config(
            "model",
            "degenerate dynamics (σ ≡ 0 and μ ≡ 0 on the grid); set a floor volatility",
        ));
    }
    let horizon = model.hawkes.horizon;
    let mut dt = h * h / q_star;

    let baseline_sup = model.hawkes.baseline.sup(horizon);
    let lambda_max = (baseline_sup
        + model
            .hawkes
            .components
            .iter()
            .zip(sigma_grids)
            .map(|(c, g)| (c.d * g.lo).max(c.d * g.hi))
            .sum::<f64>())
    .max(0.0);
    if lambda_max * dt > 0.1 {
        dt = 0.1 / lambda_max;
    }
    let n_layers = (horizon / dt - 1e-12).ceil().max(1.0) as usize;
    let dt = horizon / n_layers as f64;
    let q_norm = h * h / dt;
    Ok((dt, n_layers, q_star, q_norm))
}

/// Trinomial diffusion probabilities at an interior grid point:
/// (p_up, p_stay, p_down) with normalizer `q_norm`.
pub fn diffusion_probs(model: &ModelSpec, x: f64, b: f64, h: f64, q_norm: f64) -> (f64, f64, f64) {
    let mu = model.drift.eval(x);
    let sig2 = model.vol.eval(x, b).powi(2);
    let p_up = (0.5 * sig2 + h * mu.max(0.0)) / q_norm;
    let p_down = (0.5 * sig2 + h * (-mu).max(0.0)) / q_norm;
    (p_up, 1.0 - p_up - p_down, p_down)
}

/// Two-point linear splitting of `target` onto a sorted grid. Returns at most
/// two (index, weight) pairs whose expectation equals the target exactly for
/// interior targets; out-of-range targets clamp to the end point with weight
/// one (flagged in the second return).
pub fn lin_split(target: f64, grid: &[f64]) -> Result<(Vec<(usize, f64)>, bool)> {
    if grid.is_empty() {
        return Err(Error::invariant("lin_split: empty grid"));
    }
    let last = grid.len() - 1;
    if target <= grid[0] {
        return Ok((vec![(0, 1.0)], target < grid[0]));
    }
    if target >= grid[last] {
        return Ok((vec![(last, 1.0)], target > grid[last]));
    }
    // grid[0] < target < grid[last]; find the bracketing cell.
    let j = match grid.binary_search_by(|s| s.partial_cmp(&target).unwrap()) {
        Ok(exact) => return Ok((vec![(exact, 1.0)], false)),
        Err(insert) => insert - 1,
    };
    let (s0, s1) = (grid[j], grid[j + 1]);
    let w_hi = (target - s0) / (s1 - s0);
    Ok((vec![(j, 1.0 - w_hi), (j + 1, w_hi)], false))
}

/// Product splitting of an n-dimensional target over per-component grids:
/// weights are products of the one-dimensional weights, so the componentwise
/// expectation is preserved exactly. Returns the ≤ 2ⁿ corners and whether any
/// component clamped.
pub fn product_split(targets: &[f64], grids: &[&[f64]]) -> Result<(Vec<(Vec<usize>, f64)>, bool)> {
    assert_eq!(targets.len(), grids.len());
    let mut corners: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    let mut clamped = false;
    for (t, g) in targets.iter().zip(grids) {
        let (split, c) = lin_split(*t, g)?;
        clamped |= c;
        let mut next = Vec::with_capacity(corners.len() * split.len());
        for (idx, w) in &corners {
            for (j, wj) in &split {
                let mut id = idx.clone();
                id.push(*j);
                next.push((id, w * wj));
            }
        }
        corners = next;
    }
    Ok((corners, clamped))
}

/// Voronoi discretization of the mark measure: sites at the quantile
/// midpoints (υ − ½)/Υ, cells bounded by consecutive site midpoints, weights
/// equal to the measure of each cell. Duplicate sites collapse.
pub fn voronoi_weights(measure: &MarkMeasure, upsilon: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if upsilon == 0 {
        return Err(Error::config("lattice.upsilon", "must be at least 1"));
    }
    measure.validate()?;
    let mut sites: Vec<f64> = (1..=upsilon)
        .map(|u| measure.quantile((u as f64 - 0.5) / upsilon as f64))
        .collect();
    sites.dedup();
    if sites.len() == 1 {
        return Ok((sites, vec![1.0]));
    }
    let mut weights = Vec::with_capacity(sites.len());
    let mut prev_cdf = 0.0;
    for i in 0..sites.len() {
        let upper_cdf = if i + 1 < sites.len() {
            measure.cdf(0.5 * (sites[i] + sites[i + 1]))
        } else {
            1.0
        };
        weights.push(upper_cdf - prev_cdf);
        prev_cdf = upper_cdf;
    }
    // Drop empty cells (possible for atomic measures with clustered sites).
    let kept: Vec<(f64, f64)> = sites
        .into_iter()
        .zip(weights)
        .filter(|(_, w)| *w > 0.0)
        .collect();
    if kept.is_empty() {
        return Err(Error::invariant("voronoi_weights produced no cells"));
    }
    Ok((
        kept.iter().map(|p| p.0).collect(),
        kept.iter().map(|p| p.1).collect(),
    ))
}

/// Builds grids, mark discretization and the time step.
pub fn build_lattice(model: &ModelSpec, h: f64, m: usize, upsilon: usize) -> Result<LatticeSpec> {
    if h <= 0.0 {
        return Err(Error::config("lattice.h", "must be positive"));
    }
    if m < 2 {
        return Err(Error::config("lattice.m", "needs at least 2 points"));
    }
    model.validate()?;
    let k_lo = grid_index(model.x_lo, h, "x_lo")?;
    let k_hi = grid_index(model.x_hi, h, "x_hi")?;
    if k_hi - k_lo < 1 {
        return Err(Error::config("lattice", "x-grid has fewer than 2 points"));
    }
    let sigma_grids: Vec<SigmaGrid> = model
        .sigma_lo
        .iter()
        .zip(&model.sigma_hi)
        .map(|(&lo, &hi)| SigmaGrid { lo, hi, m })
        .collect();
    let (mark_sites, mark_weights) = voronoi_weights(&model.hawkes.mark_measure, upsilon)?;
    let (dt, n_layers, q_star, q_norm) = time_step(model, h, &sigma_grids)?;
    Ok(LatticeSpec {
        h,
        k_lo,
        k_hi,
        sigma_grids,
        mark_sites,
        mark_weights,
        dt,
        n_layers,
        horizon: model.hawkes.horizon,
        q_star,
        q_norm,
    })
}

/// Fully assembled transition structure. Rows are generated from cached
/// separable pieces; `diffuse_row` materializes the sparse distribution of a
/// (state, control) pair at a given layer time.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub lattice: LatticeSpec,
    pub model: ModelSpec,
    /// [(b_idx · nx + x_idx)] → three (x-successor, probability) legs
    /// (down, stay, up), boundary legs folded onto the boundary point.
    diff: Vec<[(u32, f64); 3]>,
    /// Per flat ς-index: split of the decayed vector.
    decay_split: Vec<Vec<(u32, f64)>>,
    /// Per flat ς-index × mark site: split of ς + ρ(z_υ).
    jump_split: Vec<Vec<(u32, f64)>>,
    /// Σ_j d_j ς_j per flat ς-index.
    sum_d_sigma: Vec<f64>,
    /// x-successor of the jump branch per (g_idx, x_idx, site).
    jump_succ: Vec<u32>,
    /// Number of split targets that clamped at a ς-grid boundary
    /// (diagnostic: these are the implicit excitation reflections).
    pub clamp_count: u64,
}

impl TransitionModel {
    pub fn nx(&self) -> usize {
        self.lattice.nx()
    }

    pub fn n_b(&self) -> usize {
        self.model.controls_b.len()
    }

    pub fn n_g(&self) -> usize {
        self.model.controls_g.len()
    }

    pub fn n_bg(&self) -> usize {
        self.n_b() * self.n_g()
    }

    /// Flat state index.
    pub fn state(&self, x_idx: usize, sigma_idx: usize) -> u32 {
        (sigma_idx * self.nx() + x_idx) as u32
    }

    pub fn diffusion_triple(&self, b_idx: usize, x_idx: usize) -> &[(u32, f64); 3] {
        &self.diff[b_idx * self.nx() + x_idx]
    }

    pub fn decay_split_of(&self, sigma_idx: usize) -> &[(u32, f64)] {
        &self.decay_split[sigma_idx]
    }

    pub fn jump_split_of(&self, sigma_idx: usize, site: usize) -> &[(u32, f64)] {
        &self.jump_split[sigma_idx * self.lattice.mark_sites.len() + site]
    }

    pub fn jump_successor(&self, g_idx: usize, x_idx: usize, site: usize) -> u32 {
        let ups = self.lattice.mark_sites.len();
        self.jump_succ[(g_idx * self.nx() + x_idx) * ups + site]
    }

    pub fn sum_d_sigma(&self, sigma_idx: usize) -> f64 {
        self.sum_d_sigma[sigma_idx]
    }

    /// λ at layer time t in state ς (clamped at zero).
    pub fn intensity(&self, t: f64, sigma_idx: usize) -> f64 {
        (self.model.hawkes.baseline.eval(t) + self.sum_d_sigma[sigma_idx]).max(0.0)
    }

    /// One-jump probability p1n = e^(−λΔt) λΔt.
    pub fn jump_probability(&self, t: f64, sigma_idx: usize) -> f64 {
        let lam_dt = self.intensity(t, sigma_idx) * self.lattice.dt;
        (-lam_dt).exp() * lam_dt
    }

    /// Materialized sparse row of the diffuse action for (x, ς) under
    /// controls (b, g) at layer time t. Entries may repeat a successor;
    /// consumers sum.
    pub fn diffuse_row(
        &self,
        x_idx: usize,
        sigma_idx: usize,
        b_idx: usize,
        g_idx: usize,
        t: f64,
    ) -> Vec<(u32, f64)> {
        let nx = self.nx() as u32;
        let p1 = self.jump_probability(t, sigma_idx);
        let p0 = 1.0 - p1;
        let mut row = Vec::with_capacity(8 + 2 * self.lattice.mark_sites.len());
        for &(xs, pd) in self.diffusion_triple(b_idx, x_idx) {
            if pd == 0.0 {
                continue;
            }
            for &(sj, w) in self.decay_split_of(sigma_idx) {
                row.push((sj * nx + xs, p0 * pd * w));
            }
        }
        if p1 > 0.0 {
            for (site, &q) in self.lattice.mark_weights.iter().enumerate() {
                let xs = self.jump_successor(g_idx, x_idx, site);
                for &(sj, w) in self.jump_split_of(sigma_idx, site) {
                    row.push((sj * nx + xs, p1 * q * w));
                }
            }
        }
        row
    }

    /// Deterministic inject transition x → x + h (inadmissible at the top).
    pub fn inject_row(&self, x_idx: usize, sigma_idx: usize) -> Option<(u32, f64)> {
        if x_idx + 1 >= self.nx() {
            None
        } else {
            Some((self.state(x_idx + 1, sigma_idx), 1.0))
        }
    }

    /// Deterministic boundary reflections: from the top point one step down,
    /// from the bottom point one step up.
    pub fn reflect_row(&self, x_idx: usize, sigma_idx: usize) -> Option<(u32, f64)> {
        if x_idx == 0 {
            Some((self.state(1, sigma_idx), 1.0))
        } else if x_idx + 1 == self.nx() {
            Some((self.state(self.nx() - 2, sigma_idx), 1.0))
        } else {
            None
        }
    }

    /// Samples one diffuse transition from (x, ς) under (b, g) at layer time
    /// t, consuming uniforms in a fixed order (branch; site or leg; corner).
    /// The third return is the mark-site index when the jump branch fired.
    pub fn sample_diffuse<R: rand::Rng>(
        &self,
        x_idx: usize,
        sigma_idx: usize,
        b_idx: usize,
        g_idx: usize,
        t: f64,
        rng: &mut R,
    ) -> (usize, usize, Option<usize>) {
        let p1 = self.jump_probability(t, sigma_idx);
        let u: f64 = rng.gen();
        let mut jumped_site = None;
        let (next_x, corners) = if u < p1 {
            let us: f64 = rng.gen();
            let mut site = self.lattice.mark_weights.len() - 1;
            let mut acc = 0.0;
            for (i, &q) in self.lattice.mark_weights.iter().enumerate() {
                acc += q;
                if us < acc {
                    site = i;
                    break;
                }
            }
            jumped_site = Some(site);
            (
                self.jump_successor(g_idx, x_idx, site) as usize,
                self.jump_split_of(sigma_idx, site),
            )
        } else {
            let ux: f64 = rng.gen();
            let triple = self.diffusion_triple(b_idx, x_idx);
            let total: f64 = triple.iter().map(|e| e.1).sum();
            let mut next_x = triple[2].0;
            let mut acc = 0.0;
            for &(xi, pd) in triple {
                acc += pd / total;
                if ux < acc {
                    next_x = xi;
                    break;
                }
            }
            (next_x as usize, self.decay_split_of(sigma_idx))
        };
        let uc: f64 = rng.gen();
        let mut next_sigma = corners[corners.len() - 1].0;
        let mut acc = 0.0;
        for &(sj, w) in corners {
            acc += w;
            if uc < acc {
                next_sigma = sj;
                break;
            }
        }
        (next_x, next_sigma as usize, jumped_site)
    }

    /// Checks Σp = 1 ± tol and p ≥ 0 on every row of every action at layer
    /// time t. Returns (rows checked, max |Σ − 1|, min probability).
    pub fn audit_rows(&self, t: f64) -> (usize, f64, f64) {
        let mut rows = 0;
        let mut max_err: f64 = 0.0;
        let mut min_p = f64::INFINITY;
        for sigma_idx in 0..self.lattice.n_sigma() {
            for x_idx in 0..self.nx() {
                for b_idx in 0..self.n_b() {
                    for g_idx in 0..self.n_g() {
                        let row = self.diffuse_row(x_idx, sigma_idx, b_idx, g_idx, t);
                        let sum: f64 = row.iter().map(|e| e.1).sum();
                        max_err = max_err.max((sum - 1.0).abs());
                        for e in &row {
                            min_p = min_p.min(e.1);
                        }
                        rows += 1;
                    }
                }
                if let Some((_, p)) = self.inject_row(x_idx, sigma_idx) {
                    max_err = max_err.max((p - 1.0).abs());
                    min_p = min_p.min(p);
                    rows += 1;
                }
                if let Some((_, p)) = self.reflect_row(x_idx, sigma_idx) {
                    max_err = max_err.max((p - 1.0).abs());
                    min_p = min_p.min(p);
                    rows += 1;
                }
            }
        }
        (rows, max_err, min_p)
    }
}

const TRANSITIONS_MAGIC: &[u8; 4] = b"HXTM";
const TRANSITIONS_VERSION: u32 = 1;

/// Materialized sparse transition rows as stored on disk (CSR over
/// control-pair-major state blocks, diffuse action only; inject and reflect
/// rows are deterministic point masses and are not materialized).
#[derive(Debug, Clone, PartialEq)]
pub struct RawTransitions {
    pub lattice_hash: String,
    /// Layer time the rows were materialized at (rows depend on time only
    /// through a non-constant baseline intensity).
    pub at_time: f64,
    pub n_states: usize,
    pub n_bg: usize,
    pub row_offsets: Vec<u64>,
    pub successors: Vec<u32>,
    pub probabilities: Vec<f64>,
}

/// Serializes every diffuse row at layer time `at_time` with a version
/// header and a trailing SHA-256 checksum.
pub fn transitions_to_bytes(tm: &TransitionModel, at_time: f64) -> Vec<u8> {
    let lat = &tm.lattice;
    let n_states = lat.n_states();
    let n_bg = tm.n_bg();
    let nx = lat.nx();
    let n_g = tm.n_g();

    let mut offsets: Vec<u64> = Vec::with_capacity(n_bg * n_states + 1);
    let mut successors: Vec<u32> = Vec::new();
    let mut probabilities: Vec<f64> = Vec::new();
    offsets.push(0);
    for bg in 0..n_bg {
        let (b_idx, g_idx) = (bg / n_g, bg % n_g);
        for sigma_idx in 0..lat.n_sigma() {
            for x_idx in 0..nx {
                let mut row = tm.diffuse_row(x_idx, sigma_idx, b_idx, g_idx, at_time);
                row.sort_by_key(|e| e.0);
                // Merge duplicate successors for a canonical representation.
                let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
                for (s, p) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == s => last.1 += p,
                        _ => merged.push((s, p)),
                    }
                }
                for (s, p) in merged {
                    successors.push(s);
                    probabilities.push(p);
                }
                offsets.push(successors.len() as u64);
            }
        }
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(TRANSITIONS_MAGIC);
    buf.extend_from_slice(&TRANSITIONS_VERSION.to_le_bytes());
    let hash = lat.hash();
    buf.extend_from_slice(&(hash.len() as u32).to_le_bytes());
    buf.extend_from_slice(hash.as_bytes());
    buf.extend_from_slice(&at_time.to_le_bytes());
    buf.extend_from_slice(&(n_states as u64).to_le_bytes());
    buf.extend_from_slice(&(n_bg as u64).to_le_bytes());
    buf.extend_from_slice(&(successors.len() as u64).to_le_bytes());
    for o in &offsets {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    for s in &successors {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for p in &probabilities {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

/// Parses and checksum-verifies a serialized transition file.
pub fn transitions_from_bytes(bytes: &[u8]) -> Result<RawTransitions> {
    fn fail(msg: &str) -> Error {
        Error::invariant(format!("transitions file: {msg}"))
    }
    if bytes.len() < 32 + 24 {
        return Err(fail("truncated"));
    }
    let (payload, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(payload).as_slice() != checksum {
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
    if take(&mut pos, 4)? != TRANSITIONS_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != TRANSITIONS_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let hash_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let lattice_hash = String::from_utf8(take(&mut pos, hash_len)?.to_vec())
        .map_err(|_| fail("bad hash encoding"))?;
    let at_time = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let n_states = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let n_bg = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let nnz = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let n_rows = n_bg * n_states;
    let mut row_offsets = Vec::with_capacity(n_rows + 1);
    for _ in 0..=n_rows {
        row_offsets.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    let mut successors = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        successors.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
    }
    let mut probabilities = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        probabilities.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    Ok(RawTransitions {
        lattice_hash,
        at_time,
        n_states,
        n_bg,
        row_offsets,
        successors,
        probabilities,
    })
}

/// Expectation-preserving one-step reference update for the excitation mean:
/// E[ς'_j] = ς_j e^(−q_j Δt) + ρ̄ λ Δt (1 − e^(−q_j Δt))/(q_j Δt).
pub fn expected_sigma_update(model: &ModelSpec, sigma: &[f64], lambda: f64, dt: f64) -> Vec<f64> {
    let rho_bar = model
        .hawkes
        .mark_measure
        .mean_impact(&model.hawkes.mark_impact);
    model
        .hawkes
        .components
        .iter()
        .zip(sigma)
        .map(|(c, s)| {
            let e = (-c.q * dt).exp();
            s * e + rho_bar * lambda * dt * (1.0 - e) / (c.q * dt)
        })
        .collect()
}

/// Assembles the cached transition structure for (model, lattice).
pub fn assemble_transitions(model: &ModelSpec, lattice: &LatticeSpec) -> Result<TransitionModel> {
    let nx = lattice.nx();
    let n_sigma = lattice.n_sigma();
    let n_b = model.controls_b.len();
    let n_g = model.controls_g.len();
    let ups = lattice.mark_sites.len();
    let dim = lattice.dim();
    let width = model.x_hi - model.x_lo;

    // Diffusion legs, boundary mass folded onto the boundary point.
    let mut diff = Vec::with_capacity(n_b * nx);
    for b_idx in 0..n_b {
        let b = model.controls_b[b_idx];
        for x_idx in 0..nx {
            let x = lattice.x(x_idx);
            let (p_up, p_stay, p_down) = diffusion_probs(model, x, b, lattice.h, lattice.q_norm);
            if p_up < -1e-15 || p_down < -1e-15 || p_stay < -1e-15 {
                return Err(Error::invariant(format!(
                    "negative diffusion probability at x = {x}, b = {b}"
                )));
            }
            let down = if x_idx == 0 { 0 } else { x_idx - 1 } as u32;
            let up = if x_idx + 1 == nx { x_idx } else { x_idx + 1 } as u32;
            diff.push([
                (down, p_down.max(0.0)),
                (x_idx as u32, p_stay.max(0.0)),
                (up, p_up.max(0.0)),
            ]);
        }
    }

    // ς-splits. Decay targets use the exact multiplicative decay; jump
    // targets add ρ(z_υ) to the undecayed vector. Targets outside the grid
    // clamp to the boundary point (the costless excitation reflection).
    let grids: Vec<Vec<f64>> = lattice.sigma_grids.iter().map(|g| g.points()).collect();
    let grid_refs: Vec<&[f64]> = grids.iter().map(|g| g.as_slice()).collect();
    let decay_factors: Vec<f64> = model
        .hawkes
        .components
        .iter()
        .map(|c| (-c.q * lattice.dt).exp())
        .collect();
    let rho_at_site: Vec<f64> = lattice
        .mark_sites
        .iter()
        .map(|&z| model.hawkes.mark_impact.eval(z))
        .collect();

    let mut decay_split = Vec::with_capacity(n_sigma);
    let mut jump_split = Vec::with_capacity(n_sigma * ups);
    let mut sum_d_sigma = Vec::with_capacity(n_sigma);
    let mut clamp_count = 0u64;
    let flat_of = |corners: Vec<(Vec<usize>, f64)>| -> Vec<(u32, f64)> {
        corners
            .into_iter()
            .map(|(multi, w)| (lattice.sigma_flat_index(&multi) as u32, w))
            .collect()
    };
    for sigma_idx in 0..n_sigma {
        let sigma = lattice.sigma_vector(sigma_idx);
        sum_d_sigma.push(
            model
                .hawkes
                .components
                .iter()
                .zip(&sigma)
                .map(|(c, s)| c.d * s)
                .sum(),
        );
        let decayed: Vec<f64> = sigma
            .iter()
            .zip(&decay_factors)
            .map(|(s, e)| s * e)
            .collect();
        let (corners, clamped) = product_split(&decayed, &grid_refs)?;
        if clamped {
            clamp_count += 1;
        }
        decay_split.push(flat_of(corners));
        for site in 0..ups {
            let shifted: Vec<f64> = sigma.iter().map(|s| s + rho_at_site[site]).collect();
            let (corners, clamped) = product_split(&shifted, &grid_refs)?;
            if clamped {
                clamp_count += 1;
            }
            jump_split.push(flat_of(corners));
        }
    }
    debug_assert_eq!(dim, lattice.dim());

    // Jump-branch x-successors through the half-open cells around the grid
    // points; the jump map is clipped to a bounded approximation and jumps
    // landing outside the domain map to the boundary point.
    let mut jump_succ = Vec::with_capacity(n_g * nx * ups);
    for g_idx in 0..n_g {
        let g = model.controls_g[g_idx];
        for x_idx in 0..nx {
            let x = lattice.x(x_idx);
            for site in 0..ups {
                let z = lattice.mark_sites[site];
                let raw = model.jump.eval(x, z, g);
                if !raw.is_finite() {
                    return Err(Error::numeric(format!(
                        "jump map not finite at x = {x}, z = {z}, g = {g}"
                    )));
                }
                let chi_h = raw.clamp(-2.0 * width, 2.0 * width);
                let offset = (chi_h / lattice.h + 0.5).floor() as i64;
                let succ = (x_idx as i64 + offset).clamp(0, nx as i64 - 1) as u32;
                jump_succ.push(succ);
            }
        }
    }

    let tm = TransitionModel {
        lattice: lattice.clone(),
        model: model.clone(),
        diff,
        decay_split,
        jump_split,
        sum_d_sigma,
        jump_succ,
        clamp_count,
    };

    // Fail fast if any assembled row is broken.
    let (_, max_err, min_p) = tm.audit_rows(0.0);
    if max_err > 1e-12 || min_p < 0.0 {
        return Err(Error::invariant(format!(
            "assembled transition rows violate stochasticity: max |Σp − 1| = {max_err:.3e}, \
             min p = {min_p:.3e}"
        )));
    }
    Ok(tm)
}
