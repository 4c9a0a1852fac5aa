//! Iterative eigensolver and real-time propagator for the sparse engine.
//!
//! * [`ground_states`]: sequentially deflated Lanczos with full
//!   reorthogonalization. Degenerate levels are discovered one copy at a time
//!   by restricting each search to the orthogonal complement of everything
//!   already found, and are reported as *clusters* (gap below `10·tol·‖H‖`)
//!   with an orthonormal span — no arbitrary tie-breaking.
//! * [`evolve`]: adaptive Krylov (Lanczos) approximation of
//!   `exp(−iH dt)ψ`, with a per-step error estimate, automatic substepping
//!   when the Krylov cap is hit, and norm-drift logging.
//! * [`Schedule`]/[`run_schedule`]: piecewise time-dependent evolution —
//!   sudden segments rebuild the Hamiltonian once, ramp segments rebuild it
//!   every micro-step from linearly interpolated couplings (midpoint rule).
//!
//! Units: ħ = 1, time in inverse energy.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hamiltonians::{MicroCouplings, TargetCouplings};
use crate::operators::{SparseOperator, C_ZERO};

/// Normalized complex state vector tagged with its basis fingerprint.
#[derive(Clone, Debug)]
pub struct State {
    amplitudes: Vec<Complex64>,
    basis_fp: u64,
}

impl State {
    pub fn new(amplitudes: Vec<Complex64>, basis_fp: u64) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::invalid("state on an empty basis"));
        }
        Ok(State {
            amplitudes,
            basis_fp,
        })
    }

    /// Unit vector on one basis configuration.
    pub fn basis_state(dim: usize, index: usize, basis_fp: u64) -> Result<Self> {
        if index >= dim {
            return Err(Error::invalid(format!(
                "basis index {index} outside dimension {dim}"
            )));
        }
        let mut amplitudes = vec![C_ZERO; dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(State {
            amplitudes,
            basis_fp,
        })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn basis_fingerprint(&self) -> u64 {
        self.basis_fp
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::invalid("cannot normalize the zero vector"));
        }
        for a in &mut self.amplitudes {
            *a /= n;
        }
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &State) -> Result<Complex64> {
        if self.basis_fp != other.basis_fp || self.dim() != other.dim() {
            return Err(Error::invalid("inner product across different bases"));
        }
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    /// `⟨self|op|self⟩` (real part only meaningful for Hermitian `op`).
    pub fn expectation(&self, op: &SparseOperator) -> Result<Complex64> {
        if op.domain_fingerprint() != self.basis_fp || op.ncols() != self.dim() {
            return Err(Error::invalid("operator and state on different bases"));
        }
        let hv = op.matvec(&self.amplitudes);
        Ok(inner(&self.amplitudes, &hv))
    }

    /// Embeds a state on a sub-basis back into the full basis: `keep[i]` is
    /// the full-basis index of sub-basis configuration `i`.
    pub fn embed(&self, full_dim: usize, keep: &[usize], full_fp: u64) -> Result<State> {
        if keep.len() != self.dim() {
            return Err(Error::invalid("embedding map length mismatch"));
        }
        let mut amplitudes = vec![C_ZERO; full_dim];
        for (i, &target) in keep.iter().enumerate() {
            if target >= full_dim {
                return Err(Error::invalid("embedding index out of range"));
            }
            amplitudes[target] = self.amplitudes[i];
        }
        Ok(State {
            amplitudes,
            basis_fp: full_fp,
        })
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.conj() * y)
        .fold(C_ZERO, |acc, v| acc + v)
}

fn axpy(y: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn nrm2(v: &[Complex64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Symmetric tridiagonal eigensolver (implicit QL with shifts)
// ---------------------------------------------------------------------------

fn pythag(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Eigendecomposition of the symmetric tridiagonal matrix with diagonal `d`
/// and subdiagonal `e` (`e[i]` couples rows `i` and `i+1`). On return `d`
/// holds ascending eigenvalues; when `want_z`, the returned vector is the
/// row-major matrix `z` with `z[i·n + j]` = component `i` of eigenvector `j`.
pub(crate) fn tridiag_eig(
    d: &mut [f64],
    e_in: &[f64],
    want_z: bool,
) -> Result<Option<Vec<f64>>> {
    let n = d.len();
    assert!(e_in.len() + 1 == n || (n == 0 && e_in.is_empty()));
    if n == 0 {
        return Ok(if want_z { Some(Vec::new()) } else { None });
    }
    let mut z = if want_z {
        let mut z = vec![0.0; n * n];
        for i in 0..n {
            z[i * n + i] = 1.0;
        }
        Some(z)
    } else {
        None
    };
    // Working copy of the subdiagonal with a trailing zero.
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(e_in);

    for l in 0..n {
        let mut iter = 0;
        loop {
            // Find a negligible subdiagonal element.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m] == 0.0 {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            if iter == 50 {
                return Err(Error::SolverNonConvergence {
                    context: "tridiagonal QL iteration".into(),
                    best_residual: e[l].abs(),
                    tolerance: f64::EPSILON * (d[l].abs() + d[l + 1].abs()),
                });
            }
            iter += 1;
            // Wilkinson shift.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = pythag(g, 1.0);
            let sign_r = if g >= 0.0 { r } else { -r };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = pythag(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_mut() {
                    for k in 0..n {
                        f = z[k * n + i + 1];
                        z[k * n + i + 1] = s * z[k * n + i] + c * f;
                        z[k * n + i] = c * z[k * n + i] - s * f;
                    }
                }
            }
            if r == 0.0 && m > l + 1 {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    // Ascending order (selection sort, swapping eigenvector columns along).
    for i in 0..n {
        let mut k = i;
        for j in i + 1..n {
            if d[j] < d[k] {
                k = j;
            }
        }
        if k != i {
            d.swap(i, k);
            if let Some(z) = z.as_mut() {
                for row in 0..n {
                    z.swap(row * n + i, row * n + k);
                }
            }
        }
    }
    Ok(z)
}

// ---------------------------------------------------------------------------
// Lanczos ground states with deflation and cluster reporting
// ---------------------------------------------------------------------------

/// One (near-)degenerate group of eigenpairs.
#[derive(Clone, Debug)]
pub struct EigenCluster {
    /// Individual eigenvalues, ascending.
    pub energies: Vec<f64>,
    /// Orthonormal states spanning the cluster, matching `energies` order.
    pub states: Vec<State>,
    /// Exact residuals `‖Hψ − Eψ‖` per member.
    pub residuals: Vec<f64>,
}

impl EigenCluster {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Mean cluster energy.
    pub fn energy(&self) -> f64 {
        self.energies.iter().sum::<f64>() / self.energies.len() as f64
    }
}

/// Result of a low-spectrum computation.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    /// Clusters ascending in energy; concatenated members count `k`.
    pub clusters: Vec<EigenCluster>,
    /// Matrix norm estimate used for residual/cluster scaling.
    pub norm_scale: f64,
    /// Total matrix–vector products spent.
    pub matvecs: usize,
}

impl SpectrumReport {
    /// All eigenvalues ascending, cluster structure flattened.
    pub fn energies(&self) -> Vec<f64> {
        self.clusters
            .iter()
            .flat_map(|c| c.energies.iter().copied())
            .collect()
    }

    /// All states in the same order as [`SpectrumReport::energies`].
    pub fn states(&self) -> Vec<&State> {
        self.clusters.iter().flat_map(|c| c.states.iter()).collect()
    }

    pub fn ground_energy(&self) -> f64 {
        self.clusters[0].energies[0]
    }
}

/// Gap threshold multiplier for grouping eigenvalues into clusters.
pub const CLUSTER_GAP_FACTOR: f64 = 10.0;

struct LanczosScratch {
    matvecs: usize,
}

/// Applies `H` and projects out the deflated directions.
fn apply_deflated(
    h: &SparseOperator,
    v: &[Complex64],
    deflate: &[Vec<Complex64>],
    scratch: &mut LanczosScratch,
) -> Vec<Complex64> {
    let mut w = h.matvec(v);
    scratch.matvecs += 1;
    for f in deflate {
        let overlap = inner(f, &w);
        axpy(&mut w, -overlap, f);
    }
    w
}

/// Twice-repeated classical Gram–Schmidt of `w` against `basis` (and the
/// deflated directions), returning the remaining norm.
fn full_reorthogonalize(
    w: &mut [Complex64],
    basis: &[Vec<Complex64>],
    deflate: &[Vec<Complex64>],
) -> f64 {
    for _ in 0..2 {
        for v in basis.iter().chain(deflate.iter()) {
            let overlap = inner(v, w);
            axpy(w, -overlap, v);
        }
    }
    nrm2(w)
}

/// Lowest `k` eigenpairs of a Hermitian sparse operator.
///
/// Residual contract: every returned state satisfies
/// `‖Hψ − Eψ‖ ≤ tol·max(‖H‖∞, 1)`; eigenvalues closer than
/// `10·tol·max(‖H‖∞, 1)` are grouped into one [`EigenCluster`].
pub fn ground_states(h: &SparseOperator, k: usize, tol: f64) -> Result<SpectrumReport> {
    if !h.hermitian() {
        return Err(Error::invalid(
            "eigensolver requires a Hermitian operator (flag unset)",
        ));
    }
    let dim = h.nrows();
    if k == 0 || k > dim {
        return Err(Error::invalid(format!(
            "requested {k} states on a dimension-{dim} basis"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let scale = h.inf_norm().max(1.0);
    let resid_cap = tol * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d2c_5680_0f61_1e55);
    let mut scratch = LanczosScratch { matvecs: 0 };
    let mut found: Vec<Vec<Complex64>> = Vec::with_capacity(k);
    let mut energies: Vec<f64> = Vec::with_capacity(k);
    let mut residuals: Vec<f64> = Vec::with_capacity(k);

    while found.len() < k {
        let remaining_dim = dim - found.len();
        let m_cap = remaining_dim.min(250);
        // Random start in the orthogonal complement of what was found.
        let mut start: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let mut best_residual = f64::INFINITY;
        let mut accepted = false;
        'restarts: for _restart in 0..80 {
            let start_norm = full_reorthogonalize(&mut start, &[], &found);
            if start_norm < 1e-12 {
                // Degenerate random direction; draw again.
                start = (0..dim)
                    .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                    .collect();
                continue;
            }
            for a in &mut start {
                *a /= start_norm;
            }
            let mut basis: Vec<Vec<Complex64>> = vec![start.clone()];
            let mut alpha: Vec<f64> = Vec::new();
            let mut beta: Vec<f64> = Vec::new();
            let exhausted = loop {
                let j = basis.len() - 1;
                let vj = basis[j].clone();
                let mut w = apply_deflated(h, &vj, &found, &mut scratch);
                let a_j = inner(&vj, &w).re;
                alpha.push(a_j);
                axpy(&mut w, Complex64::new(-a_j, 0.0), &vj);
                if j > 0 {
                    let b = beta[j - 1];
                    let prev = basis[j - 1].clone();
                    axpy(&mut w, Complex64::new(-b, 0.0), &prev);
                }
                let b_j = full_reorthogonalize(&mut w, &basis, &found);
                let m = alpha.len();
                let invariant = b_j <= 1e-13 * scale;
                if invariant || m == m_cap {
                    break invariant;
                }
                beta.push(b_j);
                for a in &mut w {
                    *a /= b_j;
                }
                basis.push(w);
            };
            let m = alpha.len();
            let mut d = alpha.clone();
            let e: Vec<f64> = beta[..m - 1].to_vec();
            let z = tridiag_eig(&mut d, &e, true)?.expect("eigenvectors requested");
            // Ritz vector for the lowest eigenvalue.
            let mut x = vec![C_ZERO; dim];
            for (i, v) in basis.iter().enumerate() {
                axpy(&mut x, Complex64::new(z[i * m], 0.0), v);
            }
            let xn = nrm2(&x);
            for a in &mut x {
                *a /= xn;
            }
            let hx = apply_deflated(h, &x, &found, &mut scratch);
            let theta = inner(&x, &hx).re;
            let mut r = hx;
            axpy(&mut r, Complex64::new(-theta, 0.0), &x);
            let resid = nrm2(&r);
            best_residual = best_residual.min(resid);
            if resid <= resid_cap || (exhausted && resid <= 1e3 * f64::EPSILON * scale) {
                found.push(x);
                energies.push(theta);
                residuals.push(resid);
                accepted = true;
                break 'restarts;
            }
            start = x;
        }
        if !accepted {
            return Err(Error::SolverNonConvergence {
                context: format!(
                    "Lanczos eigenpair {} of {k} (dimension {dim})",
                    found.len() + 1
                ),
                best_residual,
                tolerance: resid_cap,
            });
        }
    }

    // Sort ascending (sequential deflation already ascends; ties can swap).
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    let fp = h.domain_fingerprint();
    let mut clusters: Vec<EigenCluster> = Vec::new();
    let gap_cap = CLUSTER_GAP_FACTOR * tol * scale;
    for &idx in &order {
        let e = energies[idx];
        let state = State::new(found[idx].clone(), fp)?;
        let push_new = match clusters.last() {
            Some(c) => e - *c.energies.last().unwrap() >= gap_cap,
            None => true,
        };
        if push_new {
            clusters.push(EigenCluster {
                energies: vec![e],
                states: vec![state],
                residuals: vec![residuals[idx]],
            });
        } else {
            let c = clusters.last_mut().unwrap();
            c.energies.push(e);
            c.states.push(state);
            c.residuals.push(residuals[idx]);
        }
    }
    Ok(SpectrumReport {
        clusters,
        norm_scale: scale,
        matvecs: scratch.matvecs,
    })
}

// ---------------------------------------------------------------------------
// Krylov propagation
// ---------------------------------------------------------------------------

/// Options of the Krylov propagator.
#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    /// Per-step error budget for the Krylov truncation.
    pub step_tol: f64,
    /// Maximum Krylov dimension before substepping.
    pub max_krylov: usize,
    /// Maximum dyadic substep depth before giving up.
    pub max_substep_depth: u32,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            step_tol: 1e-12,
            max_krylov: 60,
            max_substep_depth: 16,
        }
    }
}

/// Evolution bookkeeping returned alongside the hook-driven recording.
#[derive(Clone, Debug)]
pub struct EvolutionLog {
    pub final_state: State,
    /// Largest `|‖ψ‖ − 1|` observed after any step, before renormalization.
    pub max_norm_drift: f64,
    pub matvecs: usize,
}

/// One Krylov approximation of `exp(−iH dt)ψ`; fails when the estimate
/// cannot reach `tol` within `max_m` Krylov vectors.
fn krylov_apply(
    h: &SparseOperator,
    psi: &[Complex64],
    dt: f64,
    tol: f64,
    max_m: usize,
    matvecs: &mut usize,
) -> Result<Vec<Complex64>> {
    let dim = psi.len();
    let max_m = max_m.min(dim);
    let mut basis: Vec<Vec<Complex64>> = vec![psi.to_vec()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut happy = false;
    let scale = h.inf_norm().max(1.0);
    while alpha.len() < max_m {
        let j = basis.len() - 1;
        let vj = basis[j].clone();
        let mut w = h.matvec(&vj);
        *matvecs += 1;
        let a_j = inner(&vj, &w).re;
        alpha.push(a_j);
        axpy(&mut w, Complex64::new(-a_j, 0.0), &vj);
        if j > 0 {
            let b = beta[j - 1];
            let prev = basis[j - 1].clone();
            axpy(&mut w, Complex64::new(-b, 0.0), &prev);
        }
        let b_j = full_reorthogonalize(&mut w, &basis, &[]);
        if b_j <= 1e-14 * scale {
            happy = true;
            break;
        }
        let m = alpha.len();
        if m >= 2 || max_m == 1 {
            // Error estimate: coupling out of the subspace times the weight
            // of the last Krylov coordinate in the propagated vector.
            let y = tridiag_propagate(&alpha, &beta, dt);
            let est = b_j * y[m - 1].norm() * dt.abs().max(1.0);
            if est <= tol {
                return Ok(assemble(&basis, &y));
            }
        }
        if m == max_m {
            break;
        }
        beta.push(b_j);
        for a in &mut w {
            *a /= b_j;
        }
        basis.push(w);
    }
    let y = tridiag_propagate(&alpha, &beta, dt);
    if happy || alpha.len() == dim {
        // Invariant subspace: the result is exact (up to rounding).
        return Ok(assemble(&basis, &y));
    }
    Err(Error::SolverNonConvergence {
        context: format!("Krylov propagation step (dt = {dt})"),
        best_residual: beta.last().copied().unwrap_or(0.0) * y.last().map(|c| c.norm()).unwrap_or(0.0),
        tolerance: tol,
    })
}

/// `exp(−i T dt) e₁` for the tridiagonal `T = (alpha, beta)`.
fn tridiag_propagate(alpha: &[f64], beta: &[f64], dt: f64) -> Vec<Complex64> {
    let m = alpha.len();
    let mut d = alpha.to_vec();
    let e: Vec<f64> = beta[..m.saturating_sub(1)].to_vec();
    let z = tridiag_eig(&mut d, &e, true)
        .expect("tridiagonal eigensolve of a Krylov matrix")
        .expect("eigenvectors requested");
    // y_i = Σ_k z[i,k] · exp(−i λ_k dt) · z[0,k]
    (0..m)
        .map(|i| {
            let mut acc = C_ZERO;
            for k in 0..m {
                let phase = Complex64::from_polar(1.0, -d[k] * dt);
                acc += Complex64::new(z[i * m + k] * z[k], 0.0) * phase;
            }
            acc
        })
        .collect()
}

fn assemble(basis: &[Vec<Complex64>], y: &[Complex64]) -> Vec<Complex64> {
    let dim = basis[0].len();
    let mut out = vec![C_ZERO; dim];
    for (v, c) in basis.iter().zip(y) {
        axpy(&mut out, *c, v);
    }
    out
}

/// Default step so that `dt · (spectral-radius bound) ≤ 0.5`.
pub fn default_dt(h: &SparseOperator) -> f64 {
    let bound = h.inf_norm();
    if bound == 0.0 {
        0.5
    } else {
        0.5 / bound
    }
}

fn step_adaptive(
    h: &SparseOperator,
    psi: &[Complex64],
    dt: f64,
    opts: &EvolveOptions,
    depth: u32,
    matvecs: &mut usize,
) -> Result<Vec<Complex64>> {
    match krylov_apply(h, psi, dt, opts.step_tol / f64::from(1 << depth.min(30)), opts.max_krylov, matvecs) {
        Ok(v) => Ok(v),
        Err(Error::SolverNonConvergence { .. }) if depth < opts.max_substep_depth => {
            let half = step_adaptive(h, psi, dt / 2.0, opts, depth + 1, matvecs)?;
            step_adaptive(h, &half, dt / 2.0, opts, depth + 1, matvecs)
        }
        Err(e) => Err(e),
    }
}

/// Unitary evolution `ψ(t+dt) = exp(−iH dt)ψ(t)` for `n_steps` steps.
///
/// The observer hook is invoked with `(t, ψ)` at `t = 0` and after every
/// step; propagation renormalizes after each step and logs the worst drift.
pub fn evolve(
    h: &SparseOperator,
    psi0: &State,
    dt: f64,
    n_steps: usize,
    opts: &EvolveOptions,
    mut hook: impl FnMut(f64, &State) -> Result<()>,
) -> Result<EvolutionLog> {
    if !h.hermitian() {
        return Err(Error::invalid("propagation requires a Hermitian operator"));
    }
    if h.domain_fingerprint() != psi0.basis_fingerprint() || h.ncols() != psi0.dim() {
        return Err(Error::invalid("operator and state on different bases"));
    }
    let mut psi = psi0.clone();
    let mut max_drift = 0.0f64;
    let mut matvecs = 0usize;
    hook(0.0, &psi)?;
    for step in 0..n_steps {
        let next = step_adaptive(h, psi.amplitudes(), dt, opts, 0, &mut matvecs)?;
        let drift = (nrm2(&next) - 1.0).abs();
        max_drift = max_drift.max(drift);
        psi = State::new(next, psi.basis_fingerprint())?;
        psi.normalize()?;
        hook(dt * (step as f64 + 1.0), &psi)?;
    }
    Ok(EvolutionLog {
        final_state: psi,
        max_norm_drift: max_drift,
        matvecs,
    })
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// A coupling point a schedule can hold or ramp through: either target-theory
/// knobs or microscopic (atomic) knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CouplingPoint {
    Target(TargetCouplings),
    Micro { micro: MicroCouplings, n0l: u32 },
}

impl CouplingPoint {
    /// Linear interpolation at fraction `s ∈ [0, 1]`; both endpoints must be
    /// the same kind of knob. Target points interpolate the Hamiltonian
    /// knobs `(g2, inv_g2, R)` directly; microscopic points interpolate
    /// `(λ, ε, ε′, μ, μ′)`, with any derived quantities recomputed downstream.
    pub fn interpolate(a: &CouplingPoint, b: &CouplingPoint, s: f64) -> Result<CouplingPoint> {
        let lerp = |x: f64, y: f64| x + (y - x) * s;
        match (a, b) {
            (CouplingPoint::Target(ca), CouplingPoint::Target(cb)) => {
                Ok(CouplingPoint::Target(TargetCouplings {
                    g2: lerp(ca.g2, cb.g2),
                    inv_g2: lerp(ca.inv_g2, cb.inv_g2),
                    r: lerp(ca.r, cb.r),
                }))
            }
            (
                CouplingPoint::Micro { micro: ma, n0l: na },
                CouplingPoint::Micro { micro: mb, n0l: nb },
            ) => {
                if na != nb {
                    return Err(Error::invalid("cannot ramp between atom numbers"));
                }
                Ok(CouplingPoint::Micro {
                    micro: MicroCouplings {
                        lambda: lerp(ma.lambda, mb.lambda),
                        eps: lerp(ma.eps, mb.eps),
                        eps_p: lerp(ma.eps_p, mb.eps_p),
                        mu: lerp(ma.mu, mb.mu),
                        mu_p: lerp(ma.mu_p, mb.mu_p),
                    },
                    n0l: *na,
                })
            }
            _ => Err(Error::invalid(
                "a ramp segment needs both endpoints in the same coupling parameterization",
            )),
        }
    }
}

/// Interpolation mode of one schedule segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RampMode {
    /// Sudden: the left endpoint's couplings hold for the whole segment.
    Hold,
    /// Linear ramp between the endpoints, Hamiltonian rebuilt each step.
    Linear,
}

/// Piecewise coupling schedule: breakpoints at strictly increasing times
/// starting at 0, one mode per segment.
#[derive(Clone, Debug)]
pub struct Schedule {
    breakpoints: Vec<(f64, CouplingPoint)>,
    modes: Vec<RampMode>,
}

impl Schedule {
    pub fn new(breakpoints: Vec<(f64, CouplingPoint)>, modes: Vec<RampMode>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::invalid("schedule needs at least one breakpoint"));
        }
        if breakpoints[0].0 != 0.0 {
            return Err(Error::invalid("schedule must start at t = 0"));
        }
        for pair in breakpoints.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::invalid("breakpoint times must strictly increase"));
            }
        }
        if modes.len() + 1 != breakpoints.len() {
            return Err(Error::invalid(format!(
                "{} segments need {} modes, got {}",
                breakpoints.len() - 1,
                breakpoints.len() - 1,
                modes.len()
            )));
        }
        for (i, mode) in modes.iter().enumerate() {
            if *mode == RampMode::Linear {
                // Validate endpoint compatibility eagerly.
                CouplingPoint::interpolate(&breakpoints[i].1, &breakpoints[i + 1].1, 0.5)?;
            }
        }
        Ok(Schedule { breakpoints, modes })
    }

    /// Sudden switch at t = 0 held for `duration`.
    pub fn quench(initial: CouplingPoint, after: CouplingPoint, duration: f64) -> Result<Self> {
        let _ = initial;
        Schedule::new(vec![(0.0, after), (duration, after)], vec![RampMode::Hold])
    }

    pub fn total_time(&self) -> f64 {
        self.breakpoints.last().unwrap().0
    }

    pub fn breakpoints(&self) -> &[(f64, CouplingPoint)] {
        &self.breakpoints
    }

    pub fn modes(&self) -> &[RampMode] {
        &self.modes
    }

    /// Couplings in force at time `t` (Hold: left endpoint; Linear:
    /// interpolated).
    pub fn couplings_at(&self, t: f64) -> Result<CouplingPoint> {
        let t = t.clamp(0.0, self.total_time());
        for (i, mode) in self.modes.iter().enumerate() {
            let (t0, ref c0) = self.breakpoints[i];
            let (t1, ref c1) = self.breakpoints[i + 1];
            if t <= t1 {
                return match mode {
                    RampMode::Hold => Ok(*c0),
                    RampMode::Linear => CouplingPoint::interpolate(c0, c1, (t - t0) / (t1 - t0)),
                };
            }
        }
        Ok(self.breakpoints.last().unwrap().1)
    }
}

/// Runs a schedule on a fixed basis. `build` assembles the Hamiltonian for a
/// coupling point; every built operator must live on the initial state's
/// basis (asserted via fingerprints — the dynamics cannot change sector).
/// Ramp segments rebuild the Hamiltonian each micro-step at the segment
/// midpoint couplings (midpoint exponential rule); sudden segments build
/// once per segment.
pub fn run_schedule(
    schedule: &Schedule,
    mut build: impl FnMut(&CouplingPoint) -> Result<SparseOperator>,
    psi0: &State,
    dt: f64,
    opts: &EvolveOptions,
    mut hook: impl FnMut(f64, &State) -> Result<()>,
) -> Result<EvolutionLog> {
    if !(dt > 0.0) {
        return Err(Error::invalid("schedule step must be positive"));
    }
    let mut psi = psi0.clone();
    let mut max_drift = 0.0f64;
    let mut matvecs = 0usize;
    hook(0.0, &psi)?;
    let check = |h: &SparseOperator, psi: &State| -> Result<()> {
        if h.domain_fingerprint() != psi.basis_fingerprint() || h.ncols() != psi.dim() {
            return Err(Error::Operator(
                "schedule built a Hamiltonian on a different basis than the state; \
                 the sector basis must stay fixed for the whole schedule"
                    .into(),
            ));
        }
        if !h.hermitian() {
            return Err(Error::invalid("schedule Hamiltonian must be Hermitian"));
        }
        Ok(())
    };
    for (i, mode) in schedule.modes.iter().enumerate() {
        let (t0, c0) = schedule.breakpoints[i];
        let (t1, c1) = schedule.breakpoints[i + 1];
        let span = t1 - t0;
        let n_steps = (span / dt).ceil().max(1.0) as usize;
        let h_step = span / n_steps as f64;
        match mode {
            RampMode::Hold => {
                let h = build(&c0)?;
                check(&h, &psi)?;
                for s in 0..n_steps {
                    let next = step_adaptive(&h, psi.amplitudes(), h_step, opts, 0, &mut matvecs)?;
                    max_drift = max_drift.max((nrm2(&next) - 1.0).abs());
                    psi = State::new(next, psi.basis_fingerprint())?;
                    psi.normalize()?;
                    hook(t0 + h_step * (s as f64 + 1.0), &psi)?;
                }
            }
            RampMode::Linear => {
                for s in 0..n_steps {
                    let mid = (s as f64 + 0.5) / n_steps as f64;
                    let c = CouplingPoint::interpolate(&c0, &c1, mid)?;
                    let h = build(&c)?;
                    check(&h, &psi)?;
                    let next = step_adaptive(&h, psi.amplitudes(), h_step, opts, 0, &mut matvecs)?;
                    max_drift = max_drift.max((nrm2(&next) - 1.0).abs());
                    psi = State::new(next, psi.basis_fingerprint())?;
                    psi.normalize()?;
                    hook(t0 + h_step * (s as f64 + 1.0), &psi)?;
                }
            }
        }
    }
    Ok(EvolutionLog {
        final_state: psi,
        max_norm_drift: max_drift,
        matvecs,
    })
}
