//! Brute-force reference implementations used to cross-check the production
//! solvers in tests.
//!
//! Everything here trades speed for obviousness: dense linear algebra where
//! the main crate is sparse and iterative, plain filtering where the main
//! crate prunes, and closed-form matrices where the main crate runs operator
//! algebra. The whole crate is single-threaded, happily O(dim³), and must
//! never be linked into non-test code.
//!
//! The routes are deliberately disjoint from the implementations they check:
//!
//! * [`dense_eig`] / [`dense_exp_apply`] go through `nalgebra`'s dense
//!   self-adjoint eigendecomposition instead of Lanczos / Krylov iteration;
//! * [`exhaustive_sector`] filters the entire truncated product space with a
//!   divergence recomputed from the raw link list, instead of the pruned
//!   depth-first enumeration with its cached incidence table;
//! * [`two_site_effective`] is a short hand-derived closed form, not the
//!   projector/resolvent panel algebra.

use std::sync::Arc;

use lgt_core::error::{Error, Result};
use lgt_core::hilbert::{StaticCharges, TruncationSpec};
use lgt_core::lattice::Lattice;
use lgt_core::operators::SparseOperator;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Hard cap on dense matrix dimension. Beyond this, O(dim³) stops being
/// "slow but fine" and becomes a mistake in the calling test.
pub const DENSE_DIM_CAP: usize = 4096;

/// Materializes a sparse operator as a dense `nalgebra` matrix.
pub fn dense_matrix(op: &SparseOperator) -> Result<DMatrix<Complex64>> {
    let extent = op.nrows().max(op.ncols());
    if extent > DENSE_DIM_CAP {
        return Err(Error::ResourceGuard {
            estimate: extent as u128,
            cap: DENSE_DIM_CAP as u128,
            context: "dense reference matrix".into(),
        });
    }
    let mut m = DMatrix::zeros(op.nrows(), op.ncols());
    for r in 0..op.nrows() {
        let (cols, vals) = op.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            m[(r, c as usize)] = v;
        }
    }
    Ok(m)
}

/// Full spectrum of a Hermitian operator, ascending.
pub fn dense_eig(op: &SparseOperator) -> Result<Vec<f64>> {
    Ok(dense_eig_pairs(op)?.0)
}

/// Full eigendecomposition of a Hermitian operator: eigenvalues ascending,
/// plus the unitary whose columns are the matching eigenvectors.
pub fn dense_eig_pairs(op: &SparseOperator) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    if op.nrows() != op.ncols() {
        return Err(Error::Operator(
            "dense eigendecomposition needs a square operator".into(),
        ));
    }
    if !op.hermitian() {
        return Err(Error::Operator(
            "dense eigendecomposition needs a Hermitian operator".into(),
        ));
    }
    let dim = op.nrows();
    let se = dense_matrix(op)?.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[i]
            .partial_cmp(&se.eigenvalues[j])
            .expect("self-adjoint eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(dim, dim);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &se.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Applies `exp(−i t H)` to a state by full diagonalization:
/// `ψ(t) = V · e^{−i λ t} · V† ψ`.
pub fn dense_exp_apply(op: &SparseOperator, t: f64, psi: &[Complex64]) -> Result<Vec<Complex64>> {
    if psi.len() != op.ncols() {
        return Err(Error::Operator(format!(
            "state length {} does not match operator dimension {}",
            psi.len(),
            op.ncols()
        )));
    }
    let (values, vectors) = dense_eig_pairs(op)?;
    let mut coeffs = vectors.adjoint() * DVector::from_column_slice(psi);
    for (k, c) in coeffs.iter_mut().enumerate() {
        *c *= Complex64::from_polar(1.0, -values[k] * t);
    }
    let out = vectors * coeffs;
    Ok(out.iter().copied().collect())
}

/// Enumerates a Gauss-law sector by filtering the entire truncated product
/// space, one configuration at a time.
///
/// A configuration is `L` link values followed by `V` vertex charges, exactly
/// the layout the constrained enumeration uses; the divergence test is redone
/// here from the raw link list (`+m` at the tail, `−m` at the head). Returns
/// the kept configurations; the contract with the pruned enumeration is
/// equality *as a set*.
pub fn exhaustive_sector(
    lattice: &Arc<Lattice>,
    trunc: &TruncationSpec,
    charges: &StaticCharges,
    cap: u128,
) -> Result<Vec<Vec<i8>>> {
    if charges.values().len() != lattice.vertex_count() {
        return Err(Error::invalid("static charge list does not match lattice"));
    }
    let nl = lattice.link_count();
    let nv = lattice.vertex_count();
    let link_span = (2 * i64::from(trunc.emax) + 1) as u128;
    let charge_span = (2 * i64::from(trunc.qmax) + 1) as u128;
    let mut total: u128 = 1;
    for _ in 0..nl {
        total = total.saturating_mul(link_span);
    }
    for _ in 0..nv {
        total = total.saturating_mul(charge_span);
    }
    if total > cap {
        return Err(Error::ResourceGuard {
            estimate: total,
            cap,
            context: "exhaustive sector filter".into(),
        });
    }

    let emax = trunc.emax as i8;
    let qmax = trunc.qmax as i8;
    let lows: Vec<i8> = (0..nl)
        .map(|_| -emax)
        .chain((0..nv).map(|_| -qmax))
        .collect();
    let highs: Vec<i8> = (0..nl)
        .map(|_| emax)
        .chain((0..nv).map(|_| qmax))
        .collect();

    let mut digits = lows.clone();
    let mut kept = Vec::new();
    let mut div = vec![0i32; nv];
    'odometer: loop {
        div.iter_mut().for_each(|d| *d = 0);
        for (l, link) in lattice.links().iter().enumerate() {
            let m = i32::from(digits[l]);
            div[link.tail] += m;
            div[link.head] -= m;
        }
        let satisfied =
            (0..nv).all(|v| div[v] == i32::from(digits[nl + v]) + charges.at(v));
        if satisfied {
            kept.push(digits.clone());
        }
        // Advance with the last digit fastest, so the walk (and hence the
        // kept list) is lexicographic ascending.
        for i in (0..digits.len()).rev() {
            if digits[i] < highs[i] {
                digits[i] += 1;
                for j in i + 1..digits.len() {
                    digits[j] = lows[j];
                }
                continue 'odometer;
            }
        }
        break;
    }
    Ok(kept)
}

/// Closed-form effective Hamiltonian of the smallest penalized system: two
/// vertices joined by one link, auxiliary total fixed at two, no matter,
/// soft couplings all zero. Cumulative through `order` (1 ≤ order ≤ 4).
///
/// Basis: the `n0l + 1` field values `m = −n0l/2 … n0l/2` of the single link,
/// ascending, with the auxiliary pair in its spread-out ground arrangement.
/// Every order through 4 is diagonal here, because the only virtual
/// excursions are hop-and-return chains on one link, so the matrix comes
/// from per-`m` scalars (`D = n0l(n0l + 2)`):
///
/// * orders 1 and 3 vanish — there is no soft term for the odd brackets to
///   sandwich;
/// * order 2: `−(ε²/λ)(1 − 4m²/D)`, the two second-order excursions weighted
///   by the squared hopping amplitudes `1 − 4m(m±1)/D`;
/// * order 4: `+(ε⁴/λ³)(1/2 − 4m²/D + 8m⁴/D²)`. The hop-four-times chain
///   dies (its middle resolvent would need an excited-to-excited move that
///   the single link cannot make), leaving only the anticommutator of the
///   two diagonal second-order panels, `(2 − 8m²/D)²/8` in units of ε⁴/λ³.
pub fn two_site_effective(
    lambda: f64,
    eps: f64,
    n0l: u32,
    order: usize,
) -> Result<DMatrix<f64>> {
    if !(1..=4).contains(&order) {
        return Err(Error::invalid(format!(
            "expansion order must lie in 1..=4, got {order}"
        )));
    }
    if n0l == 0 || n0l % 2 != 0 {
        return Err(Error::invalid(format!(
            "link atom number must be positive and even, got {n0l}"
        )));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!(
            "the penalty strength must be positive and finite, got {lambda}"
        )));
    }
    if !eps.is_finite() {
        return Err(Error::invalid("the bridge coupling must be finite"));
    }
    let emax = (n0l / 2) as i32;
    let d = f64::from(n0l * (n0l + 2));
    let diag: Vec<f64> = (-emax..=emax)
        .map(|m| {
            let m2 = f64::from(m * m);
            let mut val = 0.0;
            if order >= 2 {
                val -= eps * eps / lambda * (1.0 - 4.0 * m2 / d);
            }
            if order >= 4 {
                let quartic = eps.powi(4) / lambda.powi(3);
                val += quartic * (0.5 - 4.0 * m2 / d + 8.0 * m2 * m2 / (d * d));
            }
            val
        })
        .collect();
    Ok(DMatrix::from_diagonal(&DVector::from_vec(diag)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lgt_core::lattice::Boundary;

    const FP: u64 = 0xFEED; // placeholder fingerprint for hand-built operators

    fn flip() -> SparseOperator {
        let one = Complex64::new(1.0, 0.0);
        SparseOperator::from_triplets(2, 2, FP, FP, vec![(0, 1, one), (1, 0, one)], true)
            .expect("2×2 flip")
    }

    #[test]
    fn dense_matrix_respects_cap() {
        let big = SparseOperator::identity(DENSE_DIM_CAP + 1, FP);
        assert!(matches!(
            dense_matrix(&big),
            Err(Error::ResourceGuard { .. })
        ));
        let ok = SparseOperator::identity(3, FP);
        let m = dense_matrix(&ok).expect("dense identity");
        assert_eq!(m[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(m[(0, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn dense_eig_on_a_known_matrix() {
        let vals = dense_eig(&flip()).expect("eig");
        assert!((vals[0] + 1.0).abs() < 1e-14);
        assert!((vals[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dense_exp_rotates_a_two_level_system() {
        // H = σx: exp(−iHt)|0⟩ = cos t |0⟩ − i sin t |1⟩.
        let t = 0.7;
        let psi0 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let psi = dense_exp_apply(&flip(), t, &psi0).expect("propagate");
        assert!((psi[0] - Complex64::new(t.cos(), 0.0)).norm() < 1e-13);
        assert!((psi[1] - Complex64::new(0.0, -t.sin())).norm() < 1e-13);
    }

    #[test]
    fn dense_eig_rejects_unverified_input() {
        let one = Complex64::new(1.0, 0.0);
        let shift =
            SparseOperator::from_triplets(2, 2, FP, FP, vec![(0, 1, one)], false).expect("shift");
        assert!(matches!(dense_eig(&shift), Err(Error::Operator(_))));
    }

    #[test]
    fn exhaustive_filter_finds_the_winding_triplet() {
        let lat = Arc::new(Lattice::build(2, 2, Boundary::Open).expect("plaquette"));
        let trunc = TruncationSpec::target(1, 0).expect("trunc");
        let charges = StaticCharges::zero(&lat);
        let kept = exhaustive_sector(&lat, &trunc, &charges, 10_000_000).expect("filter");
        assert_eq!(kept.len(), 3);
        // Lexicographic: the negative loop, the vacuum, the positive loop.
        assert_eq!(kept[1], vec![0, 0, 0, 0, 0, 0, 0, 0]);
        for config in &kept {
            assert!(config[4..].iter().all(|&q| q == 0));
        }
    }

    #[test]
    fn exhaustive_filter_guards_on_product_size() {
        let lat = Arc::new(Lattice::build(4, 4, Boundary::Open).expect("lattice"));
        let trunc = TruncationSpec::target(3, 2).expect("trunc");
        let charges = StaticCharges::zero(&lat);
        assert!(matches!(
            exhaustive_sector(&lat, &trunc, &charges, 10_000_000),
            Err(Error::ResourceGuard { .. })
        ));
    }

    #[test]
    fn two_site_closed_form_low_order() {
        // n0l = 2: the second-order block is (ε²/2λ)·diag(1,0,1) − (ε²/λ)·1.
        let (lambda, eps) = (1.3, 0.07);
        let m = two_site_effective(lambda, eps, 2, 2).expect("order 2");
        let unit = eps * eps / lambda;
        assert!((m[(0, 0)] + 0.5 * unit).abs() < 1e-15);
        assert!((m[(1, 1)] + unit).abs() < 1e-15);
        assert!((m[(2, 2)] + 0.5 * unit).abs() < 1e-15);
        assert_eq!(m[(0, 1)], 0.0);
        // Order 3 adds nothing here.
        let m3 = two_site_effective(lambda, eps, 2, 3).expect("order 3");
        assert_eq!(m, m3);
    }

    #[test]
    fn two_site_closed_form_fourth_order() {
        let (lambda, eps) = (1.0f64, 0.5f64);
        let quartic = eps.powi(4) / lambda.powi(3);
        let m2 = two_site_effective(lambda, eps, 2, 4).expect("n0l 2");
        // m = ±1 picks up u/8, m = 0 picks up u/2 beyond the quadratic part.
        let base = two_site_effective(lambda, eps, 2, 2).expect("base");
        assert!((m2[(0, 0)] - base[(0, 0)] - quartic / 8.0).abs() < 1e-15);
        assert!((m2[(1, 1)] - base[(1, 1)] - quartic / 2.0).abs() < 1e-15);
        let m4 = two_site_effective(lambda, eps, 4, 4).expect("n0l 4");
        let base4 = two_site_effective(lambda, eps, 4, 2).expect("base 4");
        // D = 24: corrections 1/18, 25/72, 1/2, 25/72, 1/18 across m = −2…2.
        for (i, want) in [1.0 / 18.0, 25.0 / 72.0, 0.5, 25.0 / 72.0, 1.0 / 18.0]
            .into_iter()
            .enumerate()
        {
            assert!((m4[(i, i)] - base4[(i, i)] - quartic * want).abs() < 1e-14);
        }
    }

    #[test]
    fn two_site_closed_form_rejects_bad_input() {
        assert!(two_site_effective(1.0, 0.1, 2, 0).is_err());
        assert!(two_site_effective(1.0, 0.1, 2, 5).is_err());
        assert!(two_site_effective(1.0, 0.1, 3, 2).is_err());
        assert!(two_site_effective(0.0, 0.1, 2, 2).is_err());
        assert!(two_site_effective(-1.0, 0.1, 2, 2).is_err());
    }
}
