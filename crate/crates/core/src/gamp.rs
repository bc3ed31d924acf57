//! Real-valued GAMP with a MAP denoiser for an interval-truncated
//! Bernoulli-Gaussian prior.
//!
//! The prior on each coordinate is a spike at zero with mass `1 − λ + α`
//! plus `λ·N(x | θ, σx)` restricted to `(0, 1)`, where `α` is the Gaussian
//! mass that falls outside the interval.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve_real, CMat, RMat, C64};

/// Prior and noise parameters. `α` is always derived from `(λ, θ, σx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorParams {
    lambda: f64,
    theta: f64,
    sigma_x: f64,
    sigma_w: f64,
    alpha: f64,
    renormalized: bool,
}

impl PriorParams {
    pub fn new(lambda: f64, theta: f64, sigma_x: f64, sigma_w: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Parameter(format!("λ = {lambda} outside (0, 1)")));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Parameter(format!("θ = {theta} outside [0, 1]")));
        }
        if !(sigma_x > 0.0 && sigma_x.is_finite()) {
            return Err(Error::Parameter(format!("prior variance {sigma_x} must be positive")));
        }
        if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
            return Err(Error::Parameter(format!("noise variance {sigma_w} must be ≥ 0")));
        }
        Ok(PriorParams {
            lambda,
            theta,
            sigma_x,
            sigma_w,
            alpha: truncated_mass(lambda, theta, sigma_x),
            renormalized: false,
        })
    }

    /// Defaults for unknown scenes: `λ` from the scene sparsity when known
    /// (else 0.05), `θ = 0.5`, `σx = 0.1`.
    pub fn with_defaults(sparsity: Option<f64>, sigma_w: f64) -> Result<Self> {
        PriorParams::new(sparsity.unwrap_or(0.05), 0.5, 0.1, sigma_w)
    }

    /// Same prior with another noise variance.
    pub fn with_noise(mut self, sigma_w: f64) -> Self {
        self.sigma_w = sigma_w.max(0.0);
        self
    }

    /// Switches the Gaussian branch to a properly normalised truncated
    /// density (mass `λ` on `(0, 1)`, spike mass `1 − λ`).
    pub fn renormalized(mut self, on: bool) -> Self {
        self.renormalized = on;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_renormalized(&self) -> bool {
        self.renormalized
    }

    /// Log-weight of the spike at zero.
    fn log_spike(&self) -> f64 {
        if self.renormalized {
            (1.0 - self.lambda).ln()
        } else {
            (1.0 - self.lambda + self.alpha).ln()
        }
    }

    /// Log of the Gaussian-branch density at `x ∈ (0, 1)`.
    fn log_slab(&self, x: f64) -> f64 {
        let d = x - self.theta;
        let mut lp = self.lambda.ln()
            - 0.5 * (2.0 * std::f64::consts::PI * self.sigma_x).ln()
            - d * d / (2.0 * self.sigma_x);
        if self.renormalized {
            let inside = 1.0 - self.alpha / self.lambda;
            lp -= inside.max(f64::MIN_POSITIVE).ln();
        }
        lp
    }

    /// Log prior at `x`, treating `x = 0` as the spike. Outside `[0, 1]` the
    /// prior is zero.
    pub fn log_prior(&self, x: f64) -> f64 {
        if x == 0.0 {
            self.log_spike()
        } else if x > 0.0 && x <= 1.0 {
            self.log_slab(x)
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// `λ` times the mass of `N(θ, σx)` outside `(0, 1)`.
pub fn truncated_mass(lambda: f64, theta: f64, sigma_x: f64) -> f64 {
    let n = Normal::new(theta, sigma_x.sqrt()).expect("positive variance");
    lambda * (n.cdf(0.0) + n.sf(1.0))
}

/// MAP objective of the input denoiser, `log p(x) − (v̂ − x)²/(2σv)`.
pub fn f_in(x: f64, v_hat: f64, sigma_v: f64, q: &PriorParams) -> f64 {
    q.log_prior(x) - (v_hat - x).powi(2) / (2.0 * sigma_v)
}

/// MAP input denoiser. Returns `(x̂, ∂x̂/∂v̂)`.
///
/// The maximiser is either the spike (`x = 0`) or the clipped stationary
/// point of the Gaussian branch; a tie goes to the spike.
pub fn g_in(v_hat: f64, sigma_v: f64, q: &PriorParams) -> Result<(f64, f64)> {
    if !(sigma_v > 0.0) {
        return Err(Error::Parameter(format!("σv = {sigma_v} must be positive")));
    }
    let sx = q.sigma_x;
    let stationary = (sx * v_hat + sigma_v * q.theta) / (sx + sigma_v);
    let clipped = stationary.clamp(0.0, 1.0);
    if clipped <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let spike = f_in(0.0, v_hat, sigma_v, q);
    let slab = f_in(clipped, v_hat, sigma_v, q);
    if slab > spike {
        let deriv = if stationary < 1.0 { sx / (sx + sigma_v) } else { 0.0 };
        Ok((clipped, deriv))
    } else {
        Ok((0.0, 0.0))
    }
}

/// Output function for the AWGN channel. Returns `(ŝ, g′_out)`.
pub fn g_out(y: f64, p_hat: f64, sigma_z: f64, sigma_w: f64) -> Result<(f64, f64)> {
    let d = sigma_w + sigma_z;
    if !(d > 0.0) {
        return Err(Error::Parameter(format!("σw + σz = {d} must be positive")));
    }
    Ok(((y - p_hat) / d, -1.0 / d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GampConfig {
    /// Stop once `Σ (y − ẑ)² ≤ tolerance`.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Weight on the freshly computed `ŝ` and `x̂` (1 disables damping).
    pub damping: f64,
    /// Stop when no coordinate of `x̂` moves by more than this.
    pub stagnation: f64,
    /// Lower bound for every variance.
    pub variance_floor: f64,
    /// Divergence: residual above `factor ×` the initial residual ...
    pub divergence_factor: f64,
    /// ... for this many consecutive iterations.
    pub divergence_patience: usize,
    /// After stopping, refit the coordinates the denoiser kept nonzero by
    /// box-constrained least squares, kept only if it lowers the residual
    /// and the support does not exceed the measurement count.
    pub refine_support: bool,
    /// With `refine_support` and `σw > 0`, replace the refit by a
    /// single-replacement ascent of the log posterior, kept only if it beats
    /// the GAMP iterate.
    pub polish: bool,
    /// Roll back any step whose residual exceeds `rollback_ratio ×` the best
    /// accepted residual and halve the damping weight; grow it back by 10%
    /// per accepted step up to `damping`. At `min_damping` every step is
    /// accepted.
    pub adaptive_damping: bool,
    pub rollback_ratio: f64,
    /// Smallest damping weight the adaptive rule may reach.
    pub min_damping: f64,
    /// Use `max(σw, min(residual, r₀·0.8^t) / m)` as the output-channel
    /// noise variance (`r₀` the initial residual, `t` the iteration), so
    /// early iterations are not driven by a noise level far below the
    /// current misfit.
    pub residual_noise: bool,
}

impl Default for GampConfig {
    fn default() -> Self {
        GampConfig {
            tolerance: 1e-10,
            max_iter: 200,
            damping: 0.7,
            stagnation: 1e-9,
            variance_floor: 1e-12,
            divergence_factor: 10.0,
            divergence_patience: 5,
            refine_support: true,
            polish: true,
            adaptive_damping: true,
            rollback_ratio: 1.5,
            min_damping: 0.01,
            residual_noise: true,
        }
    }
}

impl GampConfig {
    /// Undamped and without support refinement, as printed.
    pub fn undamped() -> Self {
        GampConfig {
            damping: 1.0,
            refine_support: false,
            polish: false,
            adaptive_damping: false,
            residual_noise: false,
            ..GampConfig::default()
        }
    }
}

/// Iterates of the solver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GampState {
    pub x: Vec<f64>,
    pub var_x: Vec<f64>,
    pub s: Vec<f64>,
    pub var_s: Vec<f64>,
    pub p: Vec<f64>,
    pub var_z: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub var_v: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Residual,
    Stagnation,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct GampOutput {
    pub state: GampState,
    pub stop: StopReason,
    /// `Σ (y − Φx̂)²` at the returned `x̂`.
    pub residual: f64,
}

impl GampOutput {
    pub fn x(&self) -> &[f64] {
        &self.state.x
    }

    pub fn var_x(&self) -> &[f64] {
        &self.state.var_x
    }
}

/// Runs GAMP from the prior-mean start `x̂ = λθ`, `σx` = prior variance.
pub fn gamp_solve(phi: &RMat, y: &[f64], q: &PriorParams, cfg: &GampConfig) -> Result<GampOutput> {
    gamp_solve_from(phi, y, q, cfg, None)
}

/// As [`gamp_solve`], optionally warm-started from `init` (clamped to `[0, 1]`).
pub fn gamp_solve_from(
    phi: &RMat,
    y: &[f64],
    q: &PriorParams,
    cfg: &GampConfig,
    init: Option<&[f64]>,
) -> Result<GampOutput> {
    let (m, n) = phi.shape();
    if m == 0 || n == 0 {
        return Err(Error::Dimension("empty measurement matrix".into()));
    }
    if y.len() != m {
        return Err(Error::Dimension(format!("{} measurements for {m} rows", y.len())));
    }
    if !(0.0 < cfg.damping && cfg.damping <= 1.0) {
        return Err(Error::Parameter(format!("damping {} outside (0, 1]", cfg.damping)));
    }
    let floor = cfg.variance_floor.max(f64::MIN_POSITIVE);
    let phi_sq = RMat::from_fn(m, n, |i, j| phi[(i, j)] * phi[(i, j)]);

    let x0 = match init {
        Some(v) if v.len() == n => v.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
        Some(v) => {
            return Err(Error::Dimension(format!("warm start of length {} for {n} unknowns", v.len())))
        }
        None => vec![q.lambda * q.theta; n],
    };
    let mut st = GampState {
        x: x0,
        var_x: vec![q.sigma_x; n],
        s: vec![0.0; m],
        var_s: vec![0.0; m],
        p: vec![0.0; m],
        var_z: vec![0.0; m],
        z: vec![0.0; m],
        v: vec![0.0; n],
        var_v: vec![0.0; n],
        iteration: 0,
    };
    let mut beta = cfg.damping;
    let mut last_good: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut best = f64::INFINITY;
    let mut best_seen = (f64::INFINITY, Vec::new(), Vec::new());
    let mut restored = false;
    let mut initial = None;
    let mut above = 0usize;
    let mut col_acc = vec![0.0; n];
    let mut col_acc_sq = vec![0.0; n];
    let mut active = vec![false; n];

    loop {
        // Output side: σz, p̂, ẑ.
        mat_vec(&phi_sq, &st.var_x, &mut st.var_z);
        mat_vec(phi, &st.x, &mut st.z);
        for i in 0..m {
            st.var_z[i] = st.var_z[i].max(floor);
            st.p[i] = st.z[i] - st.var_z[i] * st.s[i];
        }
        let residual: f64 = y.iter().zip(&st.z).map(|(a, b)| (a - b) * (a - b)).sum();
        if !residual.is_finite() {
            return Err(diverged(st, residual, initial.unwrap_or(f64::NAN)));
        }
        if cfg.adaptive_damping {
            match &last_good {
                Some((x, vx, s))
                    if residual > cfg.rollback_ratio * best && beta > cfg.min_damping && st.iteration < cfg.max_iter =>
                {
                    st.x.clone_from(x);
                    st.var_x.clone_from(vx);
                    st.s.clone_from(s);
                    beta = (beta * 0.5).max(cfg.min_damping);
                    st.iteration += 1;
                    restored = true;
                    continue;
                }
                _ => {
                    if last_good.is_some() && !restored {
                        beta = (beta * 1.1).min(cfg.damping);
                    }
                    restored = false;
                    best = best.min(residual);
                    last_good = Some((st.x.clone(), st.var_x.clone(), st.s.clone()));
                }
            }
        }
        if residual < best_seen.0 {
            best_seen = (residual, st.x.clone(), active.clone());
        }
        let init_res = *initial.get_or_insert(residual);
        if residual <= cfg.tolerance {
            return Ok(finish(phi, y, q, cfg, st, &active, StopReason::Residual, residual));
        }
        if residual > cfg.divergence_factor * init_res {
            above += 1;
            if above >= cfg.divergence_patience {
                return Err(diverged(st, residual, init_res));
            }
        } else {
            above = 0;
        }
        if st.iteration >= cfg.max_iter {
            let residual = keep_best(&mut st, &mut active, best_seen, residual);
            return Ok(finish(phi, y, q, cfg, st, &active, StopReason::MaxIter, residual));
        }

        // ŝ, σs.
        let sigma_w = if cfg.residual_noise {
            let schedule = init_res / m as f64 * NOISE_DECAY.powi(st.iteration as i32);
            q.sigma_w.max((residual / m as f64).min(schedule))
        } else {
            q.sigma_w
        };
        for i in 0..m {
            let (s, ds) = g_out(y[i], st.p[i], st.var_z[i], sigma_w)?;
            st.s[i] = beta * s + (1.0 - beta) * st.s[i];
            st.var_s[i] = (-ds).max(floor);
        }

        // Input side: σv, v̂.
        mat_t_vec(&phi_sq, &st.var_s, &mut col_acc_sq);
        mat_t_vec(phi, &st.s, &mut col_acc);
        for j in 0..n {
            st.var_v[j] = (1.0 / col_acc_sq[j].max(f64::MIN_POSITIVE)).max(floor);
            st.v[j] = st.x[j] + st.var_v[j] * col_acc[j];
        }

        // x̂, σx.
        let mut moved = 0.0f64;
        for j in 0..n {
            let (x, dx) = g_in(st.v[j], st.var_v[j], q)?;
            active[j] = x > 0.0;
            let next = beta * x + (1.0 - beta) * st.x[j];
            moved = moved.max((next - st.x[j]).abs());
            st.x[j] = next;
            st.var_x[j] = (st.var_v[j] * dx).max(floor);
        }
        st.iteration += 1;

        if moved <= cfg.stagnation {
            mat_vec(phi, &st.x, &mut st.z);
            let residual = sq_residual(y, &st.z);
            let residual = keep_best(&mut st, &mut active, best_seen, residual);
            return Ok(finish(phi, y, q, cfg, st, &active, StopReason::Stagnation, residual));
        }
    }
}

const NOISE_DECAY: f64 = 0.8;

/// Swaps in the lowest-residual iterate seen when it beats the last one.
fn keep_best(st: &mut GampState, active: &mut Vec<bool>, best: (f64, Vec<f64>, Vec<bool>), residual: f64) -> f64 {
    if best.0 < residual {
        st.x = best.1;
        *active = best.2;
        best.0
    } else {
        residual
    }
}

fn sq_residual(y: &[f64], z: &[f64]) -> f64 {
    y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn finish(
    phi: &RMat,
    y: &[f64],
    q: &PriorParams,
    cfg: &GampConfig,
    mut st: GampState,
    active: &[bool],
    stop: StopReason,
    mut residual: f64,
) -> GampOutput {
    if st.iteration > 0 {
        // Damping leaves residue on coordinates the denoiser already zeroed.
        let mut cleared = false;
        for (x, &a) in st.x.iter_mut().zip(active) {
            if !a && *x != 0.0 {
                *x = 0.0;
                cleared = true;
            }
        }
        if cleared {
            mat_vec(phi, &st.x, &mut st.z);
            residual = sq_residual(y, &st.z);
        }
    }
    let support: Vec<usize> = (0..active.len()).filter(|&j| active[j]).collect();
    if !cfg.refine_support || st.iteration == 0 || support.is_empty() {
        return GampOutput { state: st, stop, residual };
    }
    let mut fit = SupportFit::new(phi, y, &support);
    let all: Vec<usize> = (0..support.len()).collect();
    let x = if cfg.polish && q.sigma_w > 0.0 && support.len() <= POLISH_MAX_SUPPORT {
        let before = fit.log_posterior_of(q, &st.x, residual);
        let (idx, vals) = fit.polish(phi, y, q, all);
        let after = fit.log_posterior(q, &idx, &vals);
        if after < before {
            return GampOutput { state: st, stop, residual };
        }
        fit.scatter(&idx, &vals, active.len())
    } else {
        if support.len() > phi.rows() {
            return GampOutput { state: st, stop, residual };
        }
        let Some(vals) = fit.solve(&all, None) else {
            return GampOutput { state: st, stop, residual };
        };
        if fit.residual(&all, &vals) > residual {
            return GampOutput { state: st, stop, residual };
        }
        fit.scatter(&all, &vals, active.len())
    };
    mat_vec(phi, &x, &mut st.z);
    st.x = x;
    let residual = sq_residual(y, &st.z);
    GampOutput { state: st, stop, residual }
}

/// Largest denoiser support handed to the posterior polish.
const POLISH_MAX_SUPPORT: usize = 64;
/// Add and drop candidates tried per polish round.
const POLISH_CANDIDATES: usize = 8;

/// Normal equations of a growing set of columns, for repeated
/// box-constrained refits on subsets of it.
struct SupportFit {
    /// Global column index of each local column.
    cols: Vec<usize>,
    data: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
    corr: Vec<f64>,
    energy: f64,
}

impl SupportFit {
    fn new(phi: &RMat, y: &[f64], support: &[usize]) -> Self {
        let mut fit = SupportFit {
            cols: Vec::new(),
            data: Vec::new(),
            gram: Vec::new(),
            corr: Vec::new(),
            energy: y.iter().map(|v| v * v).sum(),
        };
        for &j in support {
            fit.add_column(phi, y, j);
        }
        fit
    }

    /// Local index of global column `j`, adding it if new.
    fn add_column(&mut self, phi: &RMat, y: &[f64], j: usize) -> usize {
        if let Some(i) = self.cols.iter().position(|&c| c == j) {
            return i;
        }
        let col: Vec<f64> = (0..phi.rows()).map(|r| phi[(r, j)]).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let cross: Vec<f64> = self.data.iter().map(|d| dot(d, &col)).collect();
        for (row, &c) in self.gram.iter_mut().zip(&cross) {
            row.push(c);
        }
        let mut own = cross;
        own.push(dot(&col, &col));
        self.gram.push(own);
        self.corr.push(dot(&col, y));
        self.data.push(col);
        self.cols.push(j);
        self.cols.len() - 1
    }

    fn scatter(&self, idx: &[usize], vals: &[f64], n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (&i, &v) in idx.iter().zip(vals) {
            x[self.cols[i]] = v;
        }
        x
    }

    /// `‖y − Φx‖²` for `x` given on the local subset `idx`.
    fn residual(&self, idx: &[usize], vals: &[f64]) -> f64 {
        let mut r = self.energy;
        for (a, (&i, &va)) in idx.iter().zip(vals).enumerate() {
            r -= 2.0 * va * self.corr[i];
            for (&k, &vb) in idx.iter().zip(vals).skip(a) {
                let w = if k == i { 1.0 } else { 2.0 };
                r += w * va * vb * self.gram[i][k];
            }
        }
        r.max(0.0)
    }

    /// Box-constrained fit on the local subset `idx`: least squares, or with
    /// `prior` the maximiser of the Gaussian-branch log posterior. Values
    /// that leave `[0, 1]` are pinned to the violated bound one at a time and
    /// the rest refitted.
    fn solve(&self, idx: &[usize], prior: Option<&PriorParams>) -> Option<Vec<f64>> {
        let (data_w, pull, center) = match prior {
            Some(q) => (1.0 / q.sigma_w, 1.0 / q.sigma_x, q.theta),
            None => (1.0, 0.0, 0.0),
        };
        let mut pinned: Vec<Option<f64>> = vec![None; idx.len()];
        loop {
            let free: Vec<usize> = (0..idx.len()).filter(|&i| pinned[i].is_none()).collect();
            let k = free.len();
            let mut sol = Vec::new();
            if k > 0 {
                let mut sub = vec![0.0; k * k];
                let mut rhs = vec![0.0; k];
                for (a, &fa) in free.iter().enumerate() {
                    let ia = idx[fa];
                    rhs[a] = data_w * self.corr[ia] + pull * center;
                    for (i, p) in pinned.iter().enumerate() {
                        if let Some(v) = *p {
                            rhs[a] -= data_w * self.gram[ia][idx[i]] * v;
                        }
                    }
                    for (b, &fb) in free.iter().enumerate() {
                        sub[a * k + b] = data_w * self.gram[ia][idx[fb]];
                    }
                    sub[a * k + a] += pull;
                }
                let trace: f64 = (0..k).map(|a| sub[a * k + a]).sum();
                let ridge = 1e-12 * trace / k as f64;
                for a in 0..k {
                    sub[a * k + a] += ridge;
                }
                sol = cholesky_solve_real(&sub, &rhs, k)?;
            }
            // Most violating coordinate, if any.
            let worst = free
                .iter()
                .zip(&sol)
                .map(|(&i, &v)| (i, v, (-v).max(v - 1.0)))
                .filter(|t| t.2 > 0.0)
                .max_by(|a, b| a.2.total_cmp(&b.2));
            match worst {
                Some((i, v, _)) => pinned[i] = Some(if v < 0.0 { 0.0 } else { 1.0 }),
                None => {
                    let mut out: Vec<f64> = pinned.iter().map(|p| p.unwrap_or(0.0)).collect();
                    for (&i, &v) in free.iter().zip(&sol) {
                        out[i] = v;
                    }
                    return Some(out);
                }
            }
        }
    }

    /// Log posterior up to a constant: prior gain of each nonzero value over
    /// the spike, minus the misfit at noise variance `σw`.
    fn log_posterior(&self, q: &PriorParams, idx: &[usize], vals: &[f64]) -> f64 {
        let spike = q.log_prior(0.0);
        let prior: f64 = idx.iter().zip(vals).map(|(_, &v)| q.log_prior(v) - spike).sum();
        prior - self.residual(idx, vals) / (2.0 * q.sigma_w)
    }

    fn log_posterior_of(&self, q: &PriorParams, x: &[f64], residual: f64) -> f64 {
        let spike = q.log_prior(0.0);
        let prior: f64 = x.iter().map(|&v| q.log_prior(v.clamp(0.0, 1.0)) - spike).sum();
        prior - residual / (2.0 * q.sigma_w)
    }

    /// Single-replacement ascent of the log posterior: each round refits the
    /// support with one coordinate dropped or added and keeps the best move
    /// while it improves. Drop candidates are the smallest values; add
    /// candidates the columns most correlated with the current residual.
    fn polish(&mut self, phi: &RMat, y: &[f64], q: &PriorParams, mut idx: Vec<usize>) -> (Vec<usize>, Vec<f64>) {
        let (m, n) = phi.shape();
        let col_energy: Vec<f64> = (0..n).map(|j| (0..m).map(|r| phi[(r, j)] * phi[(r, j)]).sum()).collect();
        let Some(mut vals) = self.solve(&idx, Some(q)) else {
            return (Vec::new(), Vec::new());
        };
        // Values pinned at zero belong to the spike.
        let strip = |idx: Vec<usize>, vals: Vec<f64>| -> (Vec<usize>, Vec<f64>) {
            idx.into_iter().zip(vals).filter(|&(_, v)| v > 0.0).unzip()
        };
        (idx, vals) = strip(idx, vals);
        let mut current = self.log_posterior(q, &idx, &vals);
        let mut resid = vec![0.0; m];
        let mut corr = vec![0.0; n];
        for _ in 0..4 * POLISH_MAX_SUPPORT {
            let x = self.scatter(&idx, &vals, n);
            mat_vec(phi, &x, &mut resid);
            for (r, &yi) in resid.iter_mut().zip(y) {
                *r = yi - *r;
            }
            mat_t_vec(phi, &resid, &mut corr);

            let mut order: Vec<usize> = (0..idx.len()).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            let mut moves: Vec<Vec<usize>> = order
                .into_iter()
                .take(POLISH_CANDIDATES)
                .map(|d| idx.iter().enumerate().filter(|&(i, _)| i != d).map(|(_, &j)| j).collect())
                .collect();
            // Misfit explained by a nonnegative step on column j alone.
            let mut adds: Vec<(usize, f64)> = (0..n)
                .filter(|&j| x[j] == 0.0 && col_energy[j] > 0.0 && corr[j] > 0.0)
                .map(|j| (j, corr[j] * corr[j] / col_energy[j]))
                .collect();
            adds.sort_by(|a, b| b.1.total_cmp(&a.1));
            for &(j, _) in adds.iter().take(POLISH_CANDIDATES) {
                if idx.len() >= POLISH_MAX_SUPPORT {
                    break;
                }
                let local = self.add_column(phi, y, j);
                let mut grown = idx.clone();
                grown.push(local);
                moves.push(grown);
            }

            let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
            for cand in moves {
                let Some(v) = self.solve(&cand, Some(q)) else { continue };
                let score = self.log_posterior(q, &cand, &v);
                if score > current && best.as_ref().map_or(true, |b| score > b.0) {
                    best = Some((score, cand, v));
                }
            }
            match best {
                Some((score, cand, v)) => {
                    current = score;
                    (idx, vals) = strip(cand, v);
                }
                None => break,
            }
        }
        (idx, vals)
    }
}

/// Least squares on the columns in `support` with every value kept in
/// `[0, 1]`. Coordinates that leave the box are pinned to the violated bound
/// one at a time and the rest refitted.
pub fn refine_on_support(phi: &RMat, y: &[f64], support: &[usize]) -> Option<Vec<f64>> {
    let all: Vec<usize> = (0..support.len()).collect();
    SupportFit::new(phi, y, support).solve(&all, None)
}

fn diverged(state: GampState, residual: f64, initial: f64) -> Error {
    Error::Diverged {
        iteration: state.iteration,
        residual,
        initial,
        state: Box::new(state),
    }
}

fn mat_vec(a: &RMat, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.row(i).iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

fn mat_t_vec(a: &RMat, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(a.row(i)) {
            *o += p * xi;
        }
    }
}

/// Real lifting of a complex system with a real unknown:
/// `Φ = [Re Ã; Im Ã]`, `y = [Re h̃; Im h̃]`.
pub fn lift_complex(a: &CMat, h: &[C64]) -> Result<(RMat, Vec<f64>)> {
    let (m, n) = a.shape();
    if h.len() != m {
        return Err(Error::Dimension(format!("{} values for {m} rows", h.len())));
    }
    let phi = RMat::from_fn(2 * m, n, |i, j| {
        if i < m {
            a[(i, j)].re
        } else {
            a[(i - m, j)].im
        }
    });
    let y = h.iter().map(|v| v.re).chain(h.iter().map(|v| v.im)).collect();
    Ok((phi, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prior() -> PriorParams {
        PriorParams::new(0.2, 0.5, 0.1, 0.0).unwrap()
    }

    #[test]
    fn alpha_limits_match_numerical_integration() {
        // Simpson's rule for the Gaussian mass on (0, 1).
        fn inside(theta: f64, var: f64) -> f64 {
            let n = 20_000;
            let h = 1.0 / n as f64;
            let pdf = |x: f64| (-(x - theta).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            let mut s = pdf(0.0) + pdf(1.0);
            for i in 1..n {
                s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        }
        for &(lambda, theta, var) in &[(0.3, 0.5, 0.01), (0.1, 0.2, 0.1), (0.5, 0.9, 0.5), (0.05, 0.5, 2.0)] {
            let q = PriorParams::new(lambda, theta, var, 0.0).unwrap();
            let expected = lambda * (1.0 - inside(theta, var));
            assert!((q.alpha() - expected).abs() < 1e-6, "{lambda} {theta} {var}");
            assert!(1.0 - lambda + q.alpha() > 0.0 && 1.0 - lambda + q.alpha() <= 1.0);
        }
        let tight = PriorParams::new(0.3, 0.5, 1e-4, 0.0).unwrap();
        assert!(tight.alpha() < 1e-12);
    }

    #[test]
    fn g_in_gaussian_limit() {
        // λ → 1, θ = v̂ : the slab maximiser is v̂ itself.
        let q = PriorParams::new(1.0 - 1e-9, 0.4, 0.1, 0.0).unwrap();
        let (x, d) = g_in(0.4, 0.05, &q).unwrap();
        assert!((x - 0.4).abs() < 1e-12);
        assert!((d - 0.1 / 0.15).abs() < 1e-12);
    }

    #[test]
    fn g_in_far_negative_is_zero() {
        let (x, d) = g_in(-5.0, 0.01, &prior()).unwrap();
        assert_eq!((x, d), (0.0, 0.0));
        assert!(g_in(0.3, 0.0, &prior()).is_err());
    }

    #[test]
    fn g_in_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let v = rng.random_range(-3.0..4.0);
            let sv = 10f64.powf(rng.random_range(-6.0..1.0));
            let (x, d) = g_in(v, sv, &prior()).unwrap();
            assert!((0.0..=1.0).contains(&x));
            assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn g_out_examples() {
        assert_eq!(g_out(1.0, 1.0, 0.5, 0.5).unwrap().0, 0.0);
        let (s, d) = g_out(3.0, 1.0, 3.0, 1.0).unwrap();
        assert_eq!((s, d), (0.5, -0.25));
        assert!(g_out(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn identity_sensing_recovers_feasible_vector() {
        let n = 8;
        let phi = RMat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let x = [0.0, 0.7, 0.0, 0.0, 0.35, 0.0, 0.0, 0.9];
        let out = gamp_solve(&phi, &x, &prior(), &GampConfig::default()).unwrap();
        for (a, b) in out.x().iter().zip(&x) {
            assert!((a - b).abs() < 1e-6, "{:?}", out.x());
        }
    }

    #[test]
    fn hand_stepped_first_iteration() {
        let phi = RMat::from_vec(2, 2, vec![1.0, 0.5, -0.25, 2.0]).unwrap();
        let y = [0.6, 1.4];
        let q = PriorParams::new(0.5, 0.5, 0.2, 0.01).unwrap();
        let cfg = GampConfig { max_iter: 1, tolerance: 0.0, ..GampConfig::undamped() };
        let out = gamp_solve(&phi, &y, &q, &cfg).unwrap();

        // Straight-line evaluation of one pass with ŝ(−1) = 0.
        let x0 = 0.25;
        let vx0 = 0.2;
        let vz = [(1.0 + 0.25) * vx0, (0.0625 + 4.0) * vx0];
        let z = [1.5 * x0, 1.75 * x0];
        let p = z;
        let s = [(y[0] - p[0]) / (0.01 + vz[0]), (y[1] - p[1]) / (0.01 + vz[1])];
        let vs = [1.0 / (0.01 + vz[0]), 1.0 / (0.01 + vz[1])];
        let vv = [1.0 / (vs[0] + 0.0625 * vs[1]), 1.0 / (0.25 * vs[0] + 4.0 * vs[1])];
        let v = [x0 + vv[0] * (s[0] - 0.25 * s[1]), x0 + vv[1] * (0.5 * s[0] + 2.0 * s[1])];
        for j in 0..2 {
            assert!((out.state.var_v[j] - vv[j]).abs() < 1e-12);
            assert!((out.state.v[j] - v[j]).abs() < 1e-12);
            let (xe, de) = g_in(v[j], vv[j], &q).unwrap();
            assert!((out.state.x[j] - xe).abs() < 1e-12);
            assert!((out.state.var_x[j] - (vv[j] * de).max(1e-12)).abs() < 1e-12);
        }
        assert_eq!(out.state.iteration, 1);
        assert_eq!(out.stop, StopReason::MaxIter);
    }

    #[test]
    fn noiseless_square_system_matches_least_squares_on_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 8;
        let phi = RMat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + 0.3 * (rng.random::<f64>() - 0.5));
        let mut x = vec![0.0; n];
        x[2] = 0.8;
        x[5] = 0.3;
        let mut y = vec![0.0; n];
        mat_vec(&phi, &x, &mut y);
        let q = PriorParams::new(0.25, 0.5, 0.1, 0.0).unwrap();
        let out = gamp_solve(&phi, &y, &q, &GampConfig::default()).unwrap();
        let ls = refine_on_support(&phi, &y, &[2, 5]).unwrap();
        let err: f64 = out.x().iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-3 * (0.8f64.hypot(0.3)), "{:?}", out.x());
        assert!((out.x()[2] - ls[0]).abs() < 1e-3 && (out.x()[5] - ls[1]).abs() < 1e-3);
    }

    #[test]
    fn polish_moves_to_the_posterior_support() {
        let phi = RMat::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = [0.5, 0.0, 0.001, 0.0];
        let q = PriorParams::new(0.2, 0.5, 0.1, 1e-6).unwrap();
        // Start on the wrong coordinate: one add then one drop.
        let mut fit = SupportFit::new(&phi, &y, &[2]);
        let (idx, vals) = fit.polish(&phi, &y, &q, vec![0]);
        let support: Vec<usize> = idx.iter().map(|&i| fit.cols[i]).collect();
        assert_eq!(support, vec![0]);
        let want = (0.5 / 1e-6 + 0.5 / 0.1) / (1.0 / 1e-6 + 1.0 / 0.1);
        assert!((vals[0] - want).abs() < 1e-12);
    }

    #[test]
    fn lift_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = CMat::from_fn(5, 4, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let x: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let h = a.mul_real(&x).unwrap();
        let (phi, y) = lift_complex(&a, &h).unwrap();
        assert_eq!(phi.rows(), 10);
        for i in 0..10 {
            let lhs: f64 = phi.row(i).iter().zip(&x).map(|(p, q)| p * q).sum();
            assert!((lhs - y[i]).abs() < 1e-12);
        }
        let real = CMat::from_fn(2, 2, |i, j| C64::new((i + j) as f64, 0.0));
        let (phi, _) = lift_complex(&real, &[C64::new(0.0, 0.0); 2]).unwrap();
        assert!(phi.row(2).iter().chain(phi.row(3)).all(|&v| v == 0.0));
        assert!(lift_complex(&real, &[]).is_err());
    }
}
