//! Sparse operators over enumerated bases, and the operator builders for the
//! gauge theory and its atomic realization.
//!
//! All operators are compressed-sparse-row complex matrices tagged with the
//! fingerprints of their domain and codomain bases so that mismatched algebra
//! is caught at run time instead of producing silent nonsense.
//!
//! Conventions (the ladder tables used everywhere):
//!
//! * link field: `E|m⟩ = m|m⟩`, `U†|m⟩ = |m+1⟩`, `U|m⟩ = |m−1⟩`;
//! * matter charge: `Q|Q⟩ = Q|Q⟩`, `φ†|Q⟩ = |Q+1⟩`, `φ|Q⟩ = |Q−1⟩`;
//! * the atomic (non-unitary) variants carry square-root occupancy dressings:
//!   `𝒰†|m⟩ = √(1 − 4m(m+1)/(N0l(N0l+2))) |m+1⟩`,
//!   `Φ†|Q⟩ = √((N0v+Q+1)/N0v) |Q+1⟩`, `Φ|Q⟩ = √((N0v+Q)/N0v) |Q−1⟩`;
//! * the directed hopping composite `φ†_tail U†_link φ_head` raises the charge
//!   at the link's tail, lowers it at the head, and raises the link field —
//!   the unique joint sign choice that leaves every Gauss generator untouched.
//!
//! Ladder operators on a truncated space annihilate at the truncation edge;
//! true unitarity is recovered only in the infinite-truncation limit.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{FockBasis, FockSite, GaugeBasis, GaugeScope};
use crate::lattice::{Lattice, LinkId, VertexId};

/// Complex zero shorthand.
pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Complex one shorthand.
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Compressed-sparse-row complex matrix tied to basis fingerprints.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
    hermitian: bool,
    /// Fingerprint of the column (input) basis.
    domain_fp: u64,
    /// Fingerprint of the row (output) basis.
    codomain_fp: u64,
}

impl SparseOperator {
    /// Assembles from triplets: stable-sorts by (row, col), sums duplicates,
    /// and drops exact zeros. When `hermitian` is requested the matrix is
    /// verified elementwise (`‖A − A†‖∞ = 0`, no tolerance) and construction
    /// fails otherwise.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        domain_fp: u64,
        codomain_fp: u64,
        mut triplets: Vec<(u32, u32, Complex64)>,
        hermitian: bool,
    ) -> Result<Self> {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if r as usize >= nrows || c as usize >= ncols {
                return Err(Error::Operator(format!(
                    "triplet ({r},{c}) outside {nrows}×{ncols}"
                )));
            }
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                indptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        // Prune entries that summed to exact zero.
        let mut kept_cols = Vec::with_capacity(cols.len());
        let mut kept_vals = Vec::with_capacity(vals.len());
        let mut kept_per_row = vec![0usize; nrows];
        let mut row = 0usize;
        let mut count_in_row = 0usize;
        for i in 0..cols.len() {
            while count_in_row == indptr[row + 1] {
                row += 1;
                count_in_row = 0;
            }
            count_in_row += 1;
            if vals[i] != C_ZERO {
                kept_cols.push(cols[i]);
                kept_vals.push(vals[i]);
                kept_per_row[row] += 1;
            }
        }
        let mut final_indptr = vec![0usize; nrows + 1];
        for r in 0..nrows {
            final_indptr[r + 1] = final_indptr[r] + kept_per_row[r];
        }
        let op = SparseOperator {
            nrows,
            ncols,
            indptr: final_indptr,
            cols: kept_cols,
            vals: kept_vals,
            hermitian,
            domain_fp,
            codomain_fp,
        };
        if hermitian {
            if nrows != ncols || domain_fp != codomain_fp {
                return Err(Error::Operator(
                    "hermitian flag on a non-square or basis-mismatched matrix".into(),
                ));
            }
            if !op.is_hermitian_exact() {
                return Err(Error::Operator(
                    "hermitian flag set but ‖A − A†‖∞ ≠ 0".into(),
                ));
            }
        }
        Ok(op)
    }

    /// Identity on a basis.
    pub fn identity(dim: usize, fp: u64) -> Self {
        SparseOperator {
            nrows: dim,
            ncols: dim,
            indptr: (0..=dim).collect(),
            cols: (0..dim as u32).collect(),
            vals: vec![C_ONE; dim],
            hermitian: true,
            domain_fp: fp,
            codomain_fp: fp,
        }
    }

    /// All-zero operator.
    pub fn zeros(nrows: usize, ncols: usize, domain_fp: u64, codomain_fp: u64) -> Self {
        SparseOperator {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            hermitian: nrows == ncols && domain_fp == codomain_fp,
            domain_fp,
            codomain_fp,
        }
    }

    /// Diagonal operator from real entries.
    pub fn diagonal(entries: &[f64], fp: u64) -> Self {
        let dim = entries.len();
        let mut cols = Vec::with_capacity(dim);
        let mut vals = Vec::with_capacity(dim);
        let mut indptr = vec![0usize; dim + 1];
        for (i, &e) in entries.iter().enumerate() {
            if e != 0.0 {
                cols.push(i as u32);
                vals.push(Complex64::new(e, 0.0));
            }
            indptr[i + 1] = cols.len();
        }
        SparseOperator {
            nrows: dim,
            ncols: dim,
            indptr,
            cols,
            vals,
            hermitian: true,
            domain_fp: fp,
            codomain_fp: fp,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn domain_fingerprint(&self) -> u64 {
        self.domain_fp
    }

    pub fn codomain_fingerprint(&self) -> u64 {
        self.codomain_fp
    }

    /// Nonzeros of one row as parallel slices (columns, values).
    pub fn row(&self, r: usize) -> (&[u32], &[Complex64]) {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// All nonzeros as (row, col, value) triplets in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                out.push((r, *c as usize, *v));
            }
        }
        out
    }

    /// Elementwise test that the matrix equals its conjugate transpose, with
    /// no tolerance.
    pub fn is_hermitian_exact(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let c = *c as usize;
                let (tcols, tvals) = self.row(c);
                match tcols.binary_search(&(r as u32)) {
                    Ok(pos) => {
                        if tvals[pos] != v.conj() {
                            return false;
                        }
                    }
                    Err(_) => return false,
                }
            }
        }
        true
    }

    /// Conjugate transpose (exact: values are conjugated bitwise).
    pub fn dagger(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((*c, r as u32, v.conj()));
            }
        }
        SparseOperator::from_triplets(
            self.ncols,
            self.nrows,
            self.codomain_fp,
            self.domain_fp,
            triplets,
            false,
        )
        .expect("transposing a valid matrix cannot fail")
    }

    /// `self + self†`, Hermitian by construction (exactly: the (r,c) and
    /// (c,r) entries are computed from the same two addends).
    pub fn plus_dagger(&self) -> Result<Self> {
        if self.nrows != self.ncols || self.domain_fp != self.codomain_fp {
            return Err(Error::Operator(
                "plus_dagger needs a square matrix on one basis".into(),
            ));
        }
        let mut triplets = Vec::with_capacity(2 * self.nnz());
        for (r, c, v) in self.triplets() {
            triplets.push((r as u32, c as u32, v));
            triplets.push((c as u32, r as u32, v.conj()));
        }
        SparseOperator::from_triplets(
            self.nrows,
            self.ncols,
            self.domain_fp,
            self.codomain_fp,
            triplets,
            true,
        )
    }

    /// Linear combination `Σ coeffs_i · ops_i` over a shared basis pair.
    pub fn linear_combination(terms: &[(Complex64, &SparseOperator)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Operator("empty linear combination".into()))?
            .1;
        let mut triplets = Vec::new();
        let mut hermitian = true;
        for (coeff, op) in terms {
            if op.nrows != first.nrows
                || op.ncols != first.ncols
                || op.domain_fp != first.domain_fp
                || op.codomain_fp != first.codomain_fp
            {
                return Err(Error::Operator(
                    "linear combination across mismatched bases".into(),
                ));
            }
            hermitian &= op.hermitian && coeff.im == 0.0;
            for (r, c, v) in op.triplets() {
                triplets.push((r as u32, c as u32, coeff * v));
            }
        }
        // Summation of scaled Hermitian parts with real coefficients stays
        // Hermitian exactly (same addends mirror-imaged), but verify anyway —
        // from_triplets re-checks when the flag is requested.
        SparseOperator::from_triplets(
            first.nrows,
            first.ncols,
            first.domain_fp,
            first.codomain_fp,
            triplets,
            hermitian,
        )
    }

    /// Scales all entries.
    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= factor;
        }
        out.hermitian = self.hermitian && factor.im == 0.0;
        out
    }

    /// Matrix–vector product, row-parallel (deterministic: each row reduces
    /// sequentially in column order).
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![C_ZERO; self.nrows];
        // Parallel over whole rows keeps the result independent of the
        // thread count.
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let lo = self.indptr[r];
            let hi = self.indptr[r + 1];
            let mut acc = C_ZERO;
            for i in lo..hi {
                acc += self.vals[i] * x[self.cols[i] as usize];
            }
            *out = acc;
        });
        y
    }

    /// Sparse × sparse product (used for small verification matrices, not in
    /// hot paths).
    pub fn matmul(&self, other: &SparseOperator) -> Result<SparseOperator> {
        if self.ncols != other.nrows || self.domain_fp != other.codomain_fp {
            return Err(Error::Operator("matmul dimension/basis mismatch".into()));
        }
        let mut triplets = Vec::new();
        let mut acc: HashMap<u32, Complex64> = HashMap::new();
        for r in 0..self.nrows {
            acc.clear();
            let (cols, vals) = self.row(r);
            for (k, v) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(*k as usize);
                for (c, ov) in ocols.iter().zip(ovals) {
                    *acc.entry(*c).or_insert(C_ZERO) += v * ov;
                }
            }
            let mut row_entries: Vec<(u32, Complex64)> =
                acc.iter().map(|(&c, &v)| (c, v)).collect();
            row_entries.sort_by_key(|&(c, _)| c);
            for (c, v) in row_entries {
                if v != C_ZERO {
                    triplets.push((r as u32, c, v));
                }
            }
        }
        SparseOperator::from_triplets(
            self.nrows,
            other.ncols,
            other.domain_fp,
            self.codomain_fp,
            triplets,
            false,
        )
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Operator ∞-norm: maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.nrows)
            .map(|r| {
                let (_, vals) = self.row(r);
                vals.iter().map(|v| v.norm()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖self − other‖` in the max-entry norm (exact sparse difference).
    pub fn max_abs_diff(&self, other: &SparseOperator) -> Result<f64> {
        let diff = SparseOperator::linear_combination(&[
            (C_ONE, self),
            (Complex64::new(-1.0, 0.0), other),
        ])?;
        Ok(diff.max_abs())
    }

    /// Principal submatrix on a subset of basis indices (given in increasing
    /// order). Entries coupling kept and dropped indices are discarded, so
    /// this is the compression `P A P†` onto the subspace; `sub_fp` labels
    /// the restricted basis.
    pub fn restrict(&self, keep: &[usize], sub_fp: u64) -> Result<SparseOperator> {
        if self.nrows != self.ncols || self.domain_fp != self.codomain_fp {
            return Err(Error::Operator("restrict needs a square matrix".into()));
        }
        let mut position = vec![u32::MAX; self.ncols];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.ncols {
                return Err(Error::Operator(format!("restrict index {old} out of range")));
            }
            if position[old] != u32::MAX {
                return Err(Error::Operator(format!("restrict index {old} repeated")));
            }
            position[old] = new as u32;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            let (cols, vals) = self.row(old_r);
            for (c, v) in cols.iter().zip(vals) {
                let new_c = position[*c as usize];
                if new_c != u32::MAX {
                    triplets.push((new_r as u32, new_c, *v));
                }
            }
        }
        SparseOperator::from_triplets(keep.len(), keep.len(), sub_fp, sub_fp, triplets, self.hermitian)
    }

    /// Exact commutation test against a diagonal integer observable: requires
    /// every stored entry to connect configurations with equal diagnostic
    /// values at every probe. Returns `true` when `[A, diag]` is exactly zero
    /// for each of the supplied diagonals.
    pub fn commutes_with_int_diagonals(&self, diagonals: &[Vec<i32>]) -> bool {
        for diag in diagonals {
            assert_eq!(diag.len(), self.nrows);
            for r in 0..self.nrows {
                let (cols, _) = self.row(r);
                for c in cols {
                    if diag[r] != diag[*c as usize] {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Variant switch for link/matter ladder operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorVariant {
    /// Unit ladder amplitudes, annihilating at the truncation edge.
    Ideal,
    /// Square-root-dressed non-unitary amplitudes of the atomic realization.
    Atomic,
}

/// Amplitude of the link raise `m → m+1` for a basis truncation.
pub(crate) fn link_raise_amp(
    variant: OperatorVariant,
    m: i32,
    emax: i32,
    n0l: Option<u32>,
) -> Result<f64> {
    if m >= emax {
        return Ok(0.0);
    }
    match variant {
        OperatorVariant::Ideal => Ok(1.0),
        OperatorVariant::Atomic => {
            let n = f64::from(n0l.ok_or_else(|| {
                Error::Operator("atomic variant needs the link atom number".into())
            })?);
            Ok((1.0 - 4.0 * (m as f64) * (m as f64 + 1.0) / (n * (n + 2.0))).sqrt())
        }
    }
}

/// Amplitude of the matter raise `Q → Q+1`.
fn matter_raise_amp(variant: OperatorVariant, q: i32, qmax: i32, n0v: Option<u32>) -> Result<f64> {
    if q >= qmax {
        return Ok(0.0);
    }
    match variant {
        OperatorVariant::Ideal => Ok(1.0),
        OperatorVariant::Atomic => {
            let n = f64::from(n0v.ok_or_else(|| {
                Error::Operator("atomic variant needs the vertex atom number".into())
            })?);
            Ok(((n + q as f64 + 1.0) / n).sqrt())
        }
    }
}

/// Amplitude of the matter lower `Q → Q−1`.
fn matter_lower_amp(variant: OperatorVariant, q: i32, qmax: i32, n0v: Option<u32>) -> Result<f64> {
    if q <= -qmax {
        return Ok(0.0);
    }
    match variant {
        OperatorVariant::Ideal => Ok(1.0),
        OperatorVariant::Atomic => {
            let n = f64::from(n0v.ok_or_else(|| {
                Error::Operator("atomic variant needs the vertex atom number".into())
            })?);
            Ok(((n + q as f64) / n).sqrt())
        }
    }
}

fn atomic_numbers(basis: &GaugeBasis) -> (Option<u32>, Option<u32>) {
    match basis.truncation().atomic {
        Some(a) => (Some(a.n0l), Some(a.n0v)),
        None => (None, None),
    }
}

/// Diagonal link-field operator `E_l`.
pub fn electric_field(basis: &GaugeBasis, link: LinkId) -> Result<SparseOperator> {
    if link >= basis.lattice().link_count() {
        return Err(Error::invalid(format!("unknown link {link}")));
    }
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| f64::from(basis.link_value(basis.config(i), link)))
        .collect();
    Ok(SparseOperator::diagonal(&entries, basis.fingerprint()))
}

/// Diagonal charge operator `Q_n`.
pub fn charge_op(basis: &GaugeBasis, vertex: VertexId) -> Result<SparseOperator> {
    if vertex >= basis.lattice().vertex_count() {
        return Err(Error::invalid(format!("unknown vertex {vertex}")));
    }
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| f64::from(basis.charge_value(basis.config(i), vertex)))
        .collect();
    Ok(SparseOperator::diagonal(&entries, basis.fingerprint()))
}

/// Diagonal `Σ_l E_l²`.
pub fn electric_energy(basis: &GaugeBasis) -> SparseOperator {
    let nl = basis.lattice().link_count();
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| {
            let c = basis.config(i);
            (0..nl)
                .map(|l| {
                    let m = f64::from(basis.link_value(c, l));
                    m * m
                })
                .sum()
        })
        .collect();
    SparseOperator::diagonal(&entries, basis.fingerprint())
}

/// Diagonal `Σ_n Q_n²`.
pub fn charge_energy(basis: &GaugeBasis) -> SparseOperator {
    let nv = basis.lattice().vertex_count();
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| {
            let c = basis.config(i);
            (0..nv)
                .map(|v| {
                    let q = f64::from(basis.charge_value(c, v));
                    q * q
                })
                .sum()
        })
        .collect();
    SparseOperator::diagonal(&entries, basis.fingerprint())
}

/// Single-link raising operator `U†` (or `𝒰†`). Changes Gauss eigenvalues, so
/// standalone use is restricted to full (unconstrained) bases; composites on
/// sector bases are built by the dedicated functions below.
pub fn link_raise(
    basis: &GaugeBasis,
    link: LinkId,
    variant: OperatorVariant,
) -> Result<SparseOperator> {
    if basis.scope() == GaugeScope::Sector {
        return Err(Error::Operator(
            "standalone link ladder on a sector basis would leave the sector; \
             build it on a full basis or use a gauge-invariant composite"
                .into(),
        ));
    }
    if link >= basis.lattice().link_count() {
        return Err(Error::invalid(format!("unknown link {link}")));
    }
    let (n0l, _) = atomic_numbers(basis);
    let emax = basis.truncation().emax;
    let mut triplets = Vec::new();
    let mut scratch: Vec<i8> = Vec::new();
    for i in 0..basis.dim() {
        let c = basis.config(i);
        let m = i32::from(basis.link_value(c, link));
        let amp = link_raise_amp(variant, m, emax, n0l)?;
        if amp == 0.0 {
            continue;
        }
        scratch.clear();
        scratch.extend_from_slice(c);
        scratch[link] += 1;
        if let Some(j) = basis.index_of(&scratch) {
            triplets.push((j as u32, i as u32, Complex64::new(amp, 0.0)));
        }
    }
    SparseOperator::from_triplets(
        basis.dim(),
        basis.dim(),
        basis.fingerprint(),
        basis.fingerprint(),
        triplets,
        false,
    )
}

/// Lowering operator `U` (or `𝒰`), the conjugate of [`link_raise`].
pub fn link_lower(
    basis: &GaugeBasis,
    link: LinkId,
    variant: OperatorVariant,
) -> Result<SparseOperator> {
    Ok(link_raise(basis, link, variant)?.dagger())
}

/// Gauss generator `G_n = Σ_k(E_{n,k} − E_{n−k̂,k}) − Q_n` as a diagonal
/// operator. On a sector basis this is exactly `q_n · 1`.
pub fn gauge_generator(basis: &GaugeBasis, vertex: VertexId) -> Result<SparseOperator> {
    if vertex >= basis.lattice().vertex_count() {
        return Err(Error::invalid(format!("unknown vertex {vertex}")));
    }
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| f64::from(basis.generator_value(basis.config(i), vertex)))
        .collect();
    Ok(SparseOperator::diagonal(&entries, basis.fingerprint()))
}

/// Integer generator diagnostics for exact commutation checks: one vector of
/// generator eigenvalues per vertex.
pub fn generator_diagnostics(basis: &GaugeBasis) -> Vec<Vec<i32>> {
    let nv = basis.lattice().vertex_count();
    (0..nv)
        .map(|v| {
            (0..basis.dim())
                .map(|i| basis.generator_value(basis.config(i), v))
                .collect()
        })
        .collect()
}

/// Plaquette operator: the directed product
/// `U_bottom · U_right · U†_top · U†_left` (lowering along the traversal
/// direction on the first two links, raising on the reversed two). Maps any
/// Gauss sector to itself.
pub fn plaquette_op(
    basis: &GaugeBasis,
    plaquette: usize,
    variant: OperatorVariant,
) -> Result<SparseOperator> {
    let lat = basis.lattice();
    if plaquette >= lat.plaquette_count() {
        return Err(Error::invalid(format!("unknown plaquette {plaquette}")));
    }
    let [bottom, right, top, left] = lat.plaquettes()[plaquette].links;
    let (n0l, _) = atomic_numbers(basis);
    let emax = basis.truncation().emax;
    let mut triplets = Vec::new();
    let mut scratch: Vec<i8> = Vec::new();
    'outer: for i in 0..basis.dim() {
        let c = basis.config(i);
        scratch.clear();
        scratch.extend_from_slice(c);
        let mut amp = 1.0f64;
        // (link, raise?) in application order; amplitudes referenced to the
        // state the factor acts on.
        for (l, raise) in [(left, true), (top, true), (right, false), (bottom, false)] {
            let m = i32::from(scratch[l]);
            let factor = if raise {
                link_raise_amp(variant, m, emax, n0l)?
            } else {
                // U|m⟩ = |m−1⟩ with the conjugate amplitude ⟨m−1|U|m⟩ =
                // ⟨m|U†|m−1⟩.
                link_raise_amp(variant, m - 1, emax, n0l)?
            };
            if factor == 0.0 || (raise && m >= emax) || (!raise && m <= -emax) {
                continue 'outer;
            }
            amp *= factor;
            scratch[l] += if raise { 1 } else { -1 };
        }
        if let Some(j) = basis.index_of(&scratch) {
            triplets.push((j as u32, i as u32, Complex64::new(amp, 0.0)));
        }
    }
    SparseOperator::from_triplets(
        basis.dim(),
        basis.dim(),
        basis.fingerprint(),
        basis.fingerprint(),
        triplets,
        false,
    )
}

/// Directed gauge-invariant hopping `φ†_tail U†_link φ_head`: raises the
/// charge at the tail, lowers it at the head, raises the link field.
/// Hermitian only after adding the conjugate ([`SparseOperator::plus_dagger`]).
pub fn matter_hopping(
    basis: &GaugeBasis,
    link: LinkId,
    variant: OperatorVariant,
) -> Result<SparseOperator> {
    let lat = basis.lattice();
    if link >= lat.link_count() {
        return Err(Error::invalid(format!("unknown link {link}")));
    }
    if basis.truncation().qmax == 0 {
        return Err(Error::Operator(
            "matter hopping needs a charge-bearing basis (qmax ≥ 1)".into(),
        ));
    }
    let (n0l, n0v) = atomic_numbers(basis);
    let emax = basis.truncation().emax;
    let qmax = basis.truncation().qmax;
    let (tail, head) = {
        let l = lat.link(link);
        (l.tail, l.head)
    };
    let nl = lat.link_count();
    let mut triplets = Vec::new();
    let mut scratch: Vec<i8> = Vec::new();
    for i in 0..basis.dim() {
        let c = basis.config(i);
        let m = i32::from(basis.link_value(c, link));
        let q_tail = i32::from(basis.charge_value(c, tail));
        let q_head = i32::from(basis.charge_value(c, head));
        let amp = matter_raise_amp(variant, q_tail, qmax, n0v)?
            * link_raise_amp(variant, m, emax, n0l)?
            * matter_lower_amp(variant, q_head, qmax, n0v)?;
        if amp == 0.0 {
            continue;
        }
        scratch.clear();
        scratch.extend_from_slice(c);
        scratch[link] += 1;
        scratch[nl + tail] += 1;
        scratch[nl + head] -= 1;
        if let Some(j) = basis.index_of(&scratch) {
            triplets.push((j as u32, i as u32, Complex64::new(amp, 0.0)));
        }
    }
    SparseOperator::from_triplets(
        basis.dim(),
        basis.dim(),
        basis.fingerprint(),
        basis.fingerprint(),
        triplets,
        false,
    )
}

// ---------------------------------------------------------------------------
// Fock-basis operators (atomic model)
// ---------------------------------------------------------------------------

/// Standard bosonic creation operator (√(n+1) amplitudes) at one species/site
/// of a Fock basis. Targets outside the basis (occupancy caps, conservation
/// filters) are annihilated.
pub fn boson_raise(basis: &FockBasis, site: FockSite) -> Result<SparseOperator> {
    let spec = basis.spec();
    let lat = basis.lattice();
    // Validate the address and find the flat offset and cap.
    let (offset, cap) = match site {
        FockSite::LinkA(l) => {
            if l >= lat.link_count() {
                return Err(Error::invalid(format!("unknown link {l}")));
            }
            (l, spec.n0l)
        }
        FockSite::Matter(v) => {
            let matter = spec
                .matter
                .ok_or_else(|| Error::Operator("matter species absent".into()))?;
            if v >= lat.vertex_count() {
                return Err(Error::invalid(format!("unknown vertex {v}")));
            }
            (lat.link_count() + v, matter.n0v + matter.qmax)
        }
        FockSite::Aux(v) => {
            let aux = spec
                .aux
                .ok_or_else(|| Error::Operator("auxiliary species absent".into()))?;
            if v >= lat.vertex_count() {
                return Err(Error::invalid(format!("unknown vertex {v}")));
            }
            let base = lat.link_count()
                + if spec.matter.is_some() {
                    lat.vertex_count()
                } else {
                    0
                };
            (base + v, aux.cap)
        }
    };
    let mut triplets = Vec::new();
    let mut scratch: Vec<u8> = Vec::new();
    for i in 0..basis.dim() {
        let c = basis.config(i);
        let n = u32::from(c[offset]);
        if n >= cap {
            continue;
        }
        scratch.clear();
        scratch.extend_from_slice(c);
        scratch[offset] += 1;
        if let Some(j) = basis.index_of(&scratch) {
            triplets.push((j as u32, i as u32, Complex64::new(((n + 1) as f64).sqrt(), 0.0)));
        }
    }
    SparseOperator::from_triplets(
        basis.dim(),
        basis.dim(),
        basis.fingerprint(),
        basis.fingerprint(),
        triplets,
        false,
    )
}

/// Annihilation operator, conjugate of [`boson_raise`].
pub fn boson_lower(basis: &FockBasis, site: FockSite) -> Result<SparseOperator> {
    Ok(boson_raise(basis, site)?.dagger())
}

/// Diagonal `Σ_l E_l²` in occupancy language (`E = n_a − N0l/2`).
pub fn electric_energy_fock(basis: &FockBasis) -> SparseOperator {
    let nl = basis.lattice().link_count();
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| {
            let c = basis.config(i);
            (0..nl)
                .map(|l| {
                    let m = basis.link_field(c, l) as f64;
                    m * m
                })
                .sum()
        })
        .collect();
    SparseOperator::diagonal(&entries, basis.fingerprint())
}

/// Diagonal `Σ_v Q_v²` in occupancy language (`Q = n_η − N0v`).
pub fn charge_energy_fock(basis: &FockBasis) -> SparseOperator {
    let nv = basis.lattice().vertex_count();
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| {
            let c = basis.config(i);
            (0..nv)
                .map(|v| {
                    let q = basis.charge(c, v) as f64;
                    q * q
                })
                .sum()
        })
        .collect();
    SparseOperator::diagonal(&entries, basis.fingerprint())
}

/// Diagonal hard-core penalty `Σ_v n_χ(n_χ − 1)` (unit coupling).
pub fn penalty_diag(basis: &FockBasis) -> SparseOperator {
    let nv = basis.lattice().vertex_count();
    let entries: Vec<f64> = (0..basis.dim())
        .map(|i| {
            let c = basis.config(i);
            (0..nv)
                .map(|v| {
                    let n = basis.aux_occupancy(c, v) as f64;
                    n * (n - 1.0)
                })
                .sum()
        })
        .collect();
    SparseOperator::diagonal(&entries, basis.fingerprint())
}

/// Directed auxiliary-assisted gauge hop on one link:
/// `χ†_tail 𝒰†_link χ_head`, where the auxiliary shifts act with unit
/// amplitude (hard-core ladder convention, not √n) and the link factor is the
/// dressed `𝒰†` (`m → m+1`, i.e. `a†b` normalized by `√(N0l(N0l+2))/2`).
pub fn aux_gauge_hop(basis: &FockBasis, link: LinkId) -> Result<SparseOperator> {
    let spec = basis.spec();
    let lat = basis.lattice();
    let aux = spec
        .aux
        .ok_or_else(|| Error::Operator("auxiliary species absent".into()))?;
    if link >= lat.link_count() {
        return Err(Error::invalid(format!("unknown link {link}")));
    }
    let (tail, head) = {
        let l = lat.link(link);
        (l.tail, l.head)
    };
    let n = f64::from(spec.n0l);
    let emax = (spec.n0l / 2) as i32;
    let mut triplets = Vec::new();
    let mut scratch: Vec<u8> = Vec::new();
    let aux_base = lat.link_count()
        + if spec.matter.is_some() {
            lat.vertex_count()
        } else {
            0
        };
    for i in 0..basis.dim() {
        let c = basis.config(i);
        let n_tail = u32::from(c[aux_base + tail]);
        let n_head = u32::from(c[aux_base + head]);
        let m = basis.link_field(c, link);
        if n_tail >= aux.cap || n_head == 0 || m >= emax {
            continue;
        }
        let amp = (1.0 - 4.0 * (m as f64) * (m as f64 + 1.0) / (n * (n + 2.0))).sqrt();
        if amp == 0.0 {
            continue;
        }
        scratch.clear();
        scratch.extend_from_slice(c);
        scratch[link] += 1; // a†b : n_a + 1
        scratch[aux_base + tail] += 1;
        scratch[aux_base + head] -= 1;
        if let Some(j) = basis.index_of(&scratch) {
            triplets.push((j as u32, i as u32, Complex64::new(amp, 0.0)));
        }
    }
    SparseOperator::from_triplets(
        basis.dim(),
        basis.dim(),
        basis.fingerprint(),
        basis.fingerprint(),
        triplets,
        false,
    )
}

/// Directed matter hop `Φ†_tail 𝒰†_link Φ_head` on the Fock basis, all three
/// factors square-root dressed.
pub fn matter_gauge_hop(basis: &FockBasis, link: LinkId) -> Result<SparseOperator> {
    let spec = basis.spec();
    let lat = basis.lattice();
    let matter = spec
        .matter
        .ok_or_else(|| Error::Operator("matter species absent".into()))?;
    if link >= lat.link_count() {
        return Err(Error::invalid(format!("unknown link {link}")));
    }
    let (tail, head) = {
        let l = lat.link(link);
        (l.tail, l.head)
    };
    let n = f64::from(spec.n0l);
    let n0v = f64::from(matter.n0v);
    let emax = (spec.n0l / 2) as i32;
    let cap_eta = matter.n0v + matter.qmax;
    let nl = lat.link_count();
    let mut triplets = Vec::new();
    let mut scratch: Vec<u8> = Vec::new();
    for i in 0..basis.dim() {
        let c = basis.config(i);
        let m = basis.link_field(c, link);
        let eta_tail = u32::from(c[nl + tail]);
        let eta_head = u32::from(c[nl + head]);
        if m >= emax || eta_tail >= cap_eta || eta_head == 0 {
            continue;
        }
        // Φ† at the tail: √((n_η+1)/N0v); Φ at the head: √(n_η/N0v).
        let amp = (((eta_tail + 1) as f64) / n0v).sqrt()
            * (1.0 - 4.0 * (m as f64) * (m as f64 + 1.0) / (n * (n + 2.0))).sqrt()
            * ((eta_head as f64) / n0v).sqrt();
        scratch.clear();
        scratch.extend_from_slice(c);
        scratch[link] += 1;
        scratch[nl + tail] += 1;
        scratch[nl + head] -= 1;
        if let Some(j) = basis.index_of(&scratch) {
            triplets.push((j as u32, i as u32, Complex64::new(amp, 0.0)));
        }
    }
    SparseOperator::from_triplets(
        basis.dim(),
        basis.dim(),
        basis.fingerprint(),
        basis.fingerprint(),
        triplets,
        false,
    )
}

/// Extended Gauss generator on the Fock basis: divergence of the link field
/// minus dynamical charge minus auxiliary charge `(n_χ − 1)`. The auxiliary
/// term is the minimal extension under which the auxiliary-assisted hop is
/// gauge invariant (the auxiliary bosons hop *against* the raised link field).
pub fn gauge_generator_fock(basis: &FockBasis, vertex: VertexId) -> Result<SparseOperator> {
    let entries = generator_diagnostics_fock(basis);
    if vertex >= basis.lattice().vertex_count() {
        return Err(Error::invalid(format!("unknown vertex {vertex}")));
    }
    let col: Vec<f64> = entries[vertex].iter().map(|&x| f64::from(x)).collect();
    Ok(SparseOperator::diagonal(&col, basis.fingerprint()))
}

/// Integer extended-generator eigenvalues per vertex (for exact checks).
pub fn generator_diagnostics_fock(basis: &FockBasis) -> Vec<Vec<i32>> {
    let lat = basis.lattice();
    let nv = lat.vertex_count();
    let has_aux = basis.spec().aux.is_some();
    (0..nv)
        .map(|v| {
            let inc = lat.incident_links(v).expect("vertex in range").to_vec();
            (0..basis.dim())
                .map(|i| {
                    let c = basis.config(i);
                    let mut g = 0i32;
                    for &(l, sign) in &inc {
                        g += i32::from(sign) * basis.link_field(c, l);
                    }
                    g -= basis.charge(c, v);
                    if has_aux {
                        g -= basis.aux_occupancy(c, v) as i32 - 1;
                    }
                    g
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Symbolic collision-term bookkeeping (species relabeling, hyperfine filter)
// ---------------------------------------------------------------------------

/// One product of four single-particle factors on a link, written left to
/// right; `true` marks a creation operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionTerm {
    pub link: LinkId,
    pub factors: Vec<(char, bool)>,
}

/// A symbolic list of collision terms (used for the species-relabeling
/// bookkeeping, not for matrix assembly).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionTermList {
    pub terms: Vec<CollisionTerm>,
}

/// Sublattice relabeling: swaps the two link species `a ↔ b` on links of odd
/// parity (parity of the link's tail vertex), leaving even links untouched.
/// After this relabeling every species-changing term takes the same uniform
/// form on all links. Applying it twice is the identity.
pub fn canonical_transform(lattice: &Lattice, list: &CollisionTermList) -> CollisionTermList {
    let terms = list
        .terms
        .iter()
        .map(|t| {
            let parity = lattice.parity(lattice.link(t.link).tail);
            if parity == 0 {
                t.clone()
            } else {
                CollisionTerm {
                    link: t.link,
                    factors: t
                        .factors
                        .iter()
                        .map(|&(s, dag)| {
                            let swapped = match s {
                                'a' => 'b',
                                'b' => 'a',
                                other => other,
                            };
                            (swapped, dag)
                        })
                        .collect(),
                }
            }
        })
        .collect();
    CollisionTermList { terms }
}

/// Hyperfine bookkeeping filter: a collision term is allowed iff the total
/// magnetic quantum number of the created particles equals that of the
/// annihilated ones.
pub fn hyperfine_allowed(term: &CollisionTerm, mf: &HashMap<char, i32>) -> Result<bool> {
    let mut created = 0i32;
    let mut annihilated = 0i32;
    for &(species, dag) in &term.factors {
        let value = *mf
            .get(&species)
            .ok_or_else(|| Error::invalid(format!("species '{species}' has no m_F assigned")))?;
        if dag {
            created += value;
        } else {
            annihilated += value;
        }
    }
    Ok(created == annihilated)
}
