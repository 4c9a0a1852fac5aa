//! Acceptance gate: ten end-to-end criteria covering exact gauge invariance,
//! known analytic limits, the perturbative coupling dictionary, real-time
//! string breaking, oracle equivalence, and bit-level reproducibility.
//!
//! Each criterion is one test that prints a single `[PASS]` line on success;
//! an assertion failure in criterion `NN` is its `[FAIL]`. Tolerances live in
//! [`tol`] with the reasoning attached.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use lgt_core::effective::{
    analytic_effective, analytic_total, compare_expansions, dressing_deviation,
    effective_expansion, spectrum_validate, PenaltyBlock,
};
use lgt_core::hamiltonians::{
    build_gauge_matter, build_penalty, build_primitive, build_pure_gauge, charge_zero_indices,
    derive_couplings, invert_couplings, MicroCouplings, TargetCouplings,
};
use lgt_core::hilbert::{
    enumerate_fock, enumerate_sector, AtomicNumbers, FockAux, FockBasis, FockMatter, FockSpec,
    GaugeBasis, StaticCharges, TruncationSpec, DEFAULT_ENUM_CAP,
};
use lgt_core::lattice::{Boundary, Lattice, VertexId};
use lgt_core::observables::gauss_residual;
use lgt_core::operators::{OperatorVariant, SparseOperator};
use lgt_core::solvers::{default_dt, evolve, ground_states, EvolveOptions, State};
use lgt_core::Error;
use lgt_oracles::{dense_eig, dense_exp_apply, exhaustive_sector};
use num_complex::Complex64;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Acceptance tolerances. Exact-zero assertions compare against literal 0.0:
/// the quantities are sums of products in which every factor difference is an
/// integer-valued f64, so any symmetry violation shows up as a whole unit,
/// never as rounding.
mod tol {
    /// Probability-weighted Gauss residual during dynamics. Propagation is
    /// sector-structured, so this guards against basis/operator mix-ups
    /// rather than floating-point drift.
    pub const DYNAMIC_RESIDUAL: f64 = 1e-8;
    /// Strong-coupling string energies are eigenvalues of diagonal-dominant
    /// matrices solved far below this.
    pub const STRONG_COUPLING: f64 = 1e-10;
    /// Order-2 electric renormalization, relative.
    pub const ORDER2_REL: f64 = 1e-10;
    /// Numeric-vs-catalog order-2 block agreement (absolute, traceless);
    /// both sides are assembled from the same exact rationals times ε²/λ.
    pub const ORDER2_MACHINE: f64 = 1e-13;
    /// Order-4 plaquette coefficient, relative.
    pub const ORDER4_REL: f64 = 1e-8;
    /// Allowed unexplained remainder of the order-4 fit on the
    /// divergence-free sector.
    pub const ORDER4_RESIDUAL: f64 = 0.05;
    /// Minimum fitted decay exponent of the effective-spectrum error in
    /// ε/λ (theory: 4; margin for the ε⁶ bend at the largest ε).
    pub const SCALING_EXPONENT: f64 = 3.5;
    /// Fitted dressing-deviation exponent must sit within this window of −2.
    pub const DRESSING_WINDOW: f64 = 0.15;
    /// Coupling-dictionary round trip, relative.
    pub const ROUND_TRIP: f64 = 1e-12;
    /// Reference point g(λ=1, ε=0.1, N0l=2).
    pub const G_REFERENCE: f64 = 2.1382;
    pub const G_REFERENCE_TOL: f64 = 1e-3;
    /// Probabilities may exceed 1 by at most this after renormalized steps.
    pub const PROB_OVERSHOOT: f64 = 1e-10;
    /// Energy conservation across a quench.
    pub const QUENCH_ENERGY_DRIFT: f64 = 1e-9;
    /// Charge-pair signal that counts as string breaking having started.
    pub const PAIR_SIGNAL: f64 = 1e-6;
    /// Lanczos vs dense eigenvalues.
    pub const EIG_AGREEMENT: f64 = 1e-9;
    /// Krylov vs dense propagation, worst amplitude component.
    pub const EXP_AGREEMENT: f64 = 1e-8;
}

fn pass(n: u32, what: &str) {
    println!("[PASS] acceptance {n:02} — {what}");
}

fn lat(lx: usize, ly: usize, boundary: Boundary) -> Arc<Lattice> {
    Arc::new(Lattice::build(lx, ly, boundary).expect("lattice geometry"))
}

fn gauge_basis(
    lattice: &Arc<Lattice>,
    spec: &TruncationSpec,
    pairs: &[(VertexId, i32)],
) -> GaugeBasis {
    let charges = if pairs.is_empty() {
        StaticCharges::zero(lattice)
    } else {
        StaticCharges::from_pairs(lattice, pairs).expect("charges")
    };
    enumerate_sector(lattice, spec, &charges, DEFAULT_ENUM_CAP).expect("sector")
}

/// ‖[H, diag(g)]‖∞ computed row-wise: `max_r Σ_c |H_rc| · |g_c − g_r|`.
/// Exactly zero iff `H` never connects states with different `g`.
fn commutator_inf_norm(h: &SparseOperator, g: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..h.nrows() {
        let (cols, vals) = h.row(r);
        let mut acc = 0.0f64;
        for (c, v) in cols.iter().zip(vals) {
            acc += v.norm() * (g[*c as usize] - g[r]).abs();
        }
        worst = worst.max(acc);
    }
    worst
}

/// Gauss generator eigenvalues on a constrained sector basis (all zero by
/// construction — asserting the commutator still certifies the enumeration).
fn sector_generator(basis: &GaugeBasis, v: VertexId) -> Vec<f64> {
    (0..basis.dim())
        .map(|i| f64::from(basis.gauss_residual_int(basis.config(i), v)))
        .collect()
}

/// The generator family the microscopic Hamiltonian conserves exactly:
/// `div(m) − Q − (n_aux − 1)` per vertex (the auxiliary-assisted hop moves a
/// boson against the flux it raises, so the combination is invariant).
fn fock_generator(basis: &FockBasis, v: VertexId) -> Vec<f64> {
    let lattice = basis.lattice();
    let has_aux = basis.spec().aux.is_some();
    (0..basis.dim())
        .map(|i| {
            let c = basis.config(i);
            let mut div = 0i32;
            for (l, link) in lattice.links().iter().enumerate() {
                let m = basis.link_field(c, l);
                if link.tail == v {
                    div += m;
                }
                if link.head == v {
                    div -= m;
                }
            }
            let aux = if has_aux {
                basis.aux_occupancy(c, v) as i32 - 1
            } else {
                0
            };
            f64::from(div - basis.charge(c, v) - aux)
        })
        .collect()
}

/// Minimal deterministic generator for oracle-comparison inputs; physics
/// results never depend on it.
struct Lcg(u64);

impl Lcg {
    fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0
    }

    /// Uniform in [0, 1).
    fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn symmetric(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }
}

fn random_hermitian(dim: usize, fill: f64, seed: u64, fp: u64) -> SparseOperator {
    let mut rng = Lcg(seed);
    let mut triplets = Vec::new();
    for r in 0..dim {
        triplets.push((r as u32, r as u32, Complex64::new(rng.symmetric(), 0.0)));
        for c in (r + 1)..dim {
            if rng.uniform() < fill {
                let z = Complex64::new(0.6 * rng.symmetric(), 0.6 * rng.symmetric());
                triplets.push((r as u32, c as u32, z));
                triplets.push((c as u32, r as u32, z.conj()));
            }
        }
    }
    SparseOperator::from_triplets(dim, dim, fp, fp, triplets, true).expect("hermitian operator")
}

fn random_state(dim: usize, seed: u64, fp: u64) -> State {
    let mut rng = Lcg(seed);
    let amps: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.symmetric(), rng.symmetric()))
        .collect();
    let mut psi = State::new(amps, fp).expect("state");
    psi.normalize().expect("normalizable");
    psi
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

// -- binary helpers ---------------------------------------------------------

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).expect("config")).expect("write");
    path
}

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lgt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).expect("read csv");
    let mut lines = text.split("\r\n").filter(|l| !l.is_empty());
    let header: Vec<String> = lines
        .next()
        .expect("header")
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().expect("numeric")).collect())
        .collect();
    (header, rows)
}

fn sha256_file(path: &Path) -> String {
    let mut h = Sha256::new();
    h.update(std::fs::read(path).expect("read"));
    format!("{:x}", h.finalize())
}

// ---------------------------------------------------------------------------
// 01 — exact gauge invariance for every Hamiltonian family, plus dynamics
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_gauge_invariance_suite() {
    let t0 = Instant::now();

    // Constrained-sector Hamiltonians (full gauge+matter and pure-gauge) on
    // every lattice family up to 3×2, ideal and atomic variants.
    struct SectorCase {
        lx: usize,
        ly: usize,
        boundary: Boundary,
        emax: i32,
        qmax: i32,
        pairs: Vec<(VertexId, i32)>,
        r: f64,
    }
    let sector_cases = vec![
        SectorCase { lx: 2, ly: 1, boundary: Boundary::Open, emax: 2, qmax: 1, pairs: vec![(0, 1), (1, -1)], r: 0.9 },
        SectorCase { lx: 3, ly: 1, boundary: Boundary::Open, emax: 1, qmax: 1, pairs: vec![(0, 1), (2, -1)], r: 0.8 },
        SectorCase { lx: 2, ly: 2, boundary: Boundary::Open, emax: 1, qmax: 1, pairs: vec![], r: 0.7 },
        SectorCase { lx: 3, ly: 2, boundary: Boundary::Open, emax: 1, qmax: 0, pairs: vec![], r: 0.0 },
        SectorCase { lx: 2, ly: 2, boundary: Boundary::Periodic, emax: 1, qmax: 0, pairs: vec![], r: 0.0 },
    ];
    for case in &sector_cases {
        let lattice = lat(case.lx, case.ly, case.boundary);
        let spec = TruncationSpec::target(case.emax, case.qmax).expect("spec");
        let basis = gauge_basis(&lattice, &spec, &case.pairs);
        assert!(basis.dim() > 0, "sector case must be populated");
        let full = build_gauge_matter(
            &basis,
            &TargetCouplings { g2: 1.3, inv_g2: 0.7, r: case.r },
            OperatorVariant::Ideal,
        )
        .expect("full Hamiltonian");
        let pure = build_pure_gauge(
            &basis,
            &TargetCouplings { g2: 1.3, inv_g2: 0.7, r: 0.0 },
            OperatorVariant::Ideal,
        )
        .expect("pure-gauge Hamiltonian");
        for v in 0..lattice.vertex_count() {
            let g = sector_generator(&basis, v);
            assert_eq!(commutator_inf_norm(&full, &g), 0.0, "full H, vertex {v}");
            assert_eq!(commutator_inf_norm(&pure, &g), 0.0, "pure H, vertex {v}");
        }
    }
    // The finite-atom variant on a charged chain.
    {
        let lattice = lat(2, 1, Boundary::Open);
        let spec = TruncationSpec::atomic(
            AtomicNumbers { n0l: 2, n0v: 1, aux_cap: 2 },
            1,
        )
        .expect("atomic spec");
        let basis = gauge_basis(&lattice, &spec, &[(0, 1), (1, -1)]);
        let h = build_gauge_matter(
            &basis,
            &TargetCouplings { g2: 1.1, inv_g2: 0.0, r: 0.6 },
            OperatorVariant::Atomic,
        )
        .expect("atomic-variant Hamiltonian");
        for v in 0..2 {
            assert_eq!(commutator_inf_norm(&h, &sector_generator(&basis, v)), 0.0);
        }
    }

    // Microscopic (primitive + penalty) Hamiltonians on occupancy bases, up
    // to the 3×2 gauge-only system; matter joins on 2×2.
    struct FockCase {
        lx: usize,
        ly: usize,
        matter: Option<FockMatter>,
        eps_p: f64,
    }
    let fock_cases = vec![
        FockCase { lx: 2, ly: 1, matter: None, eps_p: 0.0 },
        FockCase { lx: 2, ly: 2, matter: None, eps_p: 0.0 },
        FockCase { lx: 3, ly: 2, matter: None, eps_p: 0.0 },
        FockCase {
            lx: 2,
            ly: 2,
            matter: Some(FockMatter { n0v: 1, qmax: 1, total: None }),
            eps_p: -0.05,
        },
    ];
    for case in &fock_cases {
        let lattice = lat(case.lx, case.ly, Boundary::Open);
        let nv = lattice.vertex_count() as u32;
        let spec = FockSpec {
            n0l: 2,
            matter: case.matter,
            aux: Some(FockAux { cap: 2, total: Some(nv) }),
        };
        let basis = enumerate_fock(&lattice, &spec, DEFAULT_ENUM_CAP).expect("fock basis");
        let micro = MicroCouplings {
            lambda: 1.0,
            eps: 0.1,
            eps_p: case.eps_p,
            mu: 0.02,
            mu_p: if case.matter.is_some() { 0.01 } else { 0.0 },
        };
        let h = build_primitive(&basis, micro).expect("parts").total().expect("total");
        let pen = build_penalty(&basis, 1.0).expect("penalty");
        for v in 0..lattice.vertex_count() {
            let g = fock_generator(&basis, v);
            assert_eq!(
                commutator_inf_norm(&h, &g),
                0.0,
                "primitive H on {}×{}, vertex {v}",
                case.lx,
                case.ly
            );
            assert_eq!(commutator_inf_norm(&pen, &g), 0.0, "penalty, vertex {v}");
        }
    }
    // The matter-bearing 3×2 request exceeds the enumeration budget and must
    // be refused, not attempted.
    {
        let lattice = lat(3, 2, Boundary::Open);
        let spec = FockSpec {
            n0l: 2,
            matter: Some(FockMatter { n0v: 1, qmax: 1, total: None }),
            aux: Some(FockAux { cap: 2, total: Some(6) }),
        };
        match enumerate_fock(&lattice, &spec, DEFAULT_ENUM_CAP) {
            Err(Error::ResourceGuard { .. }) => {}
            other => panic!("expected a resource refusal, got {other:?}"),
        }
    }

    // Dynamics over t ∈ [0, 10]: the residual never grows past threshold.
    {
        let lattice = lat(3, 1, Boundary::Open);
        let spec = TruncationSpec::target(1, 1).expect("spec");
        let basis = gauge_basis(&lattice, &spec, &[(0, 1), (2, -1)]);
        let h = build_gauge_matter(
            &basis,
            &TargetCouplings { g2: 1.0, inv_g2: 0.0, r: 0.8 },
            OperatorVariant::Ideal,
        )
        .expect("H");
        let mut psi = State::new(
            vec![Complex64::new(1.0, 0.0); basis.dim()],
            basis.fingerprint(),
        )
        .expect("state");
        psi.normalize().expect("normalizable");
        let dt = default_dt(&h);
        let steps = (10.0 / dt).ceil() as usize;
        evolve(&h, &psi, dt, steps, &EvolveOptions::default(), |t, s| {
            let res = gauss_residual(s, &basis)?;
            assert!(res <= tol::DYNAMIC_RESIDUAL, "t = {t}: residual {res}");
            Ok(())
        })
        .expect("evolution");
    }
    {
        let lattice = lat(2, 1, Boundary::Open);
        let spec = FockSpec {
            n0l: 2,
            matter: None,
            aux: Some(FockAux { cap: 2, total: Some(2) }),
        };
        let basis = enumerate_fock(&lattice, &spec, DEFAULT_ENUM_CAP).expect("fock basis");
        let h = build_primitive(&basis, MicroCouplings::gauge_only(1.0, 0.3))
            .expect("parts")
            .total()
            .expect("total");
        let generators: Vec<Vec<f64>> = (0..2).map(|v| fock_generator(&basis, v)).collect();
        let start = (0..basis.dim())
            .find(|&i| generators.iter().all(|g| g[i] == 0.0))
            .expect("a generator-neutral configuration exists");
        let psi = State::basis_state(basis.dim(), start, basis.fingerprint()).expect("state");
        let dt = default_dt(&h);
        let steps = (10.0 / dt).ceil() as usize;
        evolve(&h, &psi, dt, steps, &EvolveOptions::default(), |t, s| {
            let res: f64 = s
                .amplitudes()
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let worst = generators.iter().map(|g| g[i].abs()).fold(0.0, f64::max);
                    a.norm_sqr() * worst
                })
                .sum();
            assert!(res <= tol::DYNAMIC_RESIDUAL, "t = {t}: residual {res}");
            Ok(())
        })
        .expect("evolution");
    }

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gauge suite took {elapsed:.1} s, budget 60 s");
    pass(1, &format!("exact [H, G] = 0 for all four Hamiltonian families, residual ≤ 1e-8 over t ∈ [0, 10] ({elapsed:.1} s)"));
}

// ---------------------------------------------------------------------------
// 02 — strong-coupling string energies and path degeneracy
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_strong_coupling_limits() {
    let g2 = 2.0;
    // Chains: a separated pair costs (g²/2)·distance exactly.
    for (length, distance) in [(2usize, 1usize), (3, 2), (4, 3)] {
        let lattice = lat(length, 1, Boundary::Open);
        let spec = TruncationSpec::target(2, 0).expect("spec");
        let basis = gauge_basis(&lattice, &spec, &[(0, 1), (length - 1, -1)]);
        let h = build_pure_gauge(
            &basis,
            &TargetCouplings { g2, inv_g2: 0.0, r: 0.0 },
            OperatorVariant::Ideal,
        )
        .expect("H");
        let e0 = ground_states(&h, 1, 1e-12).expect("solve").ground_energy();
        let expected = 0.5 * g2 * distance as f64;
        assert!(
            (e0 - expected).abs() <= tol::STRONG_COUPLING,
            "distance {distance}: E0 = {e0}, expected {expected}"
        );
    }

    // Opposite corners of a single plaquette: two shortest strings, exact
    // double degeneracy at E = g², and the solver must report the cluster
    // the way the dense oracle sees it.
    let lattice = lat(2, 2, Boundary::Open);
    let spec = TruncationSpec::target(1, 0).expect("spec");
    let basis = gauge_basis(&lattice, &spec, &[(0, 1), (3, -1)]);
    let h = build_pure_gauge(
        &basis,
        &TargetCouplings { g2, inv_g2: 0.0, r: 0.0 },
        OperatorVariant::Ideal,
    )
    .expect("H");
    let k = 3.min(basis.dim());
    let report = ground_states(&h, k, 1e-12).expect("solve");
    assert_eq!(
        report.clusters[0].len(),
        2,
        "corner pair must be exactly doubly degenerate, clusters: {:?}",
        report.energies()
    );
    for e in &report.clusters[0].energies {
        assert!((e - g2).abs() <= tol::STRONG_COUPLING, "E = {e}, expected {g2}");
    }
    let dense = dense_eig(&h).expect("dense oracle");
    for (i, e) in report.energies().iter().enumerate() {
        assert!(
            (e - dense[i]).abs() <= tol::EIG_AGREEMENT,
            "level {i}: lanczos {e} vs dense {}",
            dense[i]
        );
    }
    if dense.len() > 2 {
        assert!(dense[2] - dense[1] > 0.5 * g2, "cluster must be isolated");
    }
    pass(2, "strong-coupling string energies (g²/2)·L and the two-path corner degeneracy");
}

// ---------------------------------------------------------------------------
// 03 — order-2 electric renormalization
// ---------------------------------------------------------------------------

#[test]
fn acceptance_03_order2_renormalization() {
    let (lambda, eps) = (1.0f64, 0.05f64);
    for n0l in [2u32, 4] {
        let lattice = lat(2, 1, Boundary::Open);
        let spec = FockSpec {
            n0l,
            matter: None,
            aux: Some(FockAux { cap: 2, total: Some(2) }),
        };
        let basis = enumerate_fock(&lattice, &spec, DEFAULT_ENUM_CAP).expect("basis");
        let micro = MicroCouplings::gauge_only(lambda, eps);
        let parts = build_primitive(&basis, micro).expect("parts");
        let orders = effective_expansion(&basis, &parts, 2).expect("expansion");
        let catalog = analytic_effective(&basis, &orders.block, &micro, 2).expect("catalog");
        let cmp = compare_expansions(&basis, &orders, &catalog).expect("comparison");
        let o2 = cmp
            .orders
            .iter()
            .find(|o| o.order == 2)
            .expect("order-2 comparison");

        let d = f64::from(n0l) * f64::from(n0l + 2);
        let expected = 4.0 * eps * eps / (lambda * d);
        let fitted = o2
            .fit
            .coefficient("electric-quadratic")
            .expect("electric coefficient");
        assert!(
            (fitted - expected).abs() <= tol::ORDER2_REL * expected,
            "N0l = {n0l}: fitted {fitted}, expected {expected}"
        );
        assert!(
            o2.traceless_diff <= tol::ORDER2_MACHINE,
            "N0l = {n0l}: numeric vs catalog differ by {}",
            o2.traceless_diff
        );
    }
    pass(3, "order-2 E² renormalization 4ε²/(λN0l(N0l+2)) at N0l ∈ {2, 4}, numeric ≡ catalog");
}

// ---------------------------------------------------------------------------
// 04 — order-4 plaquette coefficient
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_order4_plaquette() {
    let t0 = Instant::now();
    let (lambda, eps) = (1.0f64, 0.05f64); // λ/ε = 20
    let lattice = lat(2, 2, Boundary::Open);
    // Order-4 excursions can stack three auxiliary bosons on a corner, so
    // the occupancy cap must be 3 here.
    let spec = FockSpec {
        n0l: 2,
        matter: None,
        aux: Some(FockAux { cap: 3, total: Some(4) }),
    };
    let basis = enumerate_fock(&lattice, &spec, DEFAULT_ENUM_CAP).expect("basis");
    let micro = MicroCouplings::gauge_only(lambda, eps);
    let parts = build_primitive(&basis, micro).expect("parts");
    let orders = effective_expansion(&basis, &parts, 4).expect("expansion");
    let catalog = analytic_effective(&basis, &orders.block, &micro, 4).expect("catalog");
    let cmp = compare_expansions(&basis, &orders, &catalog).expect("comparison");
    let o4 = cmp
        .orders
        .iter()
        .find(|o| o.order == 4)
        .expect("order-4 comparison");

    let unit = eps.powi(4) / lambda.powi(3);
    let expected = -2.5 * unit;
    let fitted = o4.fit.coefficient("plaquette").expect("plaquette coefficient");
    assert!(
        (fitted - expected).abs() <= tol::ORDER4_REL * expected.abs(),
        "fitted {fitted}, expected {expected}"
    );
    let physical = o4
        .physical
        .as_ref()
        .expect("divergence-free sector fit present");
    assert!(
        physical.residual_ratio <= tol::ORDER4_RESIDUAL,
        "physical-sector residual {}",
        physical.residual_ratio
    );
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "order-4 run took {elapsed:.1} s, budget 600 s");
    pass(4, &format!("order-4 plaquette coefficient −(5/2)ε⁴/λ³, physical residual ≤ 5% ({elapsed:.1} s)"));
}

// ---------------------------------------------------------------------------
// 05 — effective-spectrum error scaling in ε/λ
// ---------------------------------------------------------------------------

#[test]
fn acceptance_05_spectrum_error_scaling() {
    let t0 = Instant::now();
    let lattice = lat(2, 1, Boundary::Open);
    let spec = FockSpec {
        n0l: 2,
        matter: None,
        aux: Some(FockAux { cap: 2, total: Some(2) }),
    };
    let basis = enumerate_fock(&lattice, &spec, DEFAULT_ENUM_CAP).expect("basis");
    let block = PenaltyBlock::new(&basis).expect("block");

    let ratios = [0.05f64, 0.1, 0.2];
    let mut errors = Vec::new();
    for &s in &ratios {
        let micro = MicroCouplings::gauge_only(1.0, s);
        let h = build_primitive(&basis, micro).expect("parts").total().expect("total");
        let terms = analytic_effective(&basis, &block, &micro, 2).expect("catalog");
        let eff = analytic_total(&terms, 2, block.len()).expect("effective block");
        let alpha = derive_couplings(&micro, 2).expect("dictionary").alpha;
        // Compare the lowest three levels through the α-rescaled route.
        let cmpr = spectrum_validate(&h, &eff.scaled(alpha), Some(alpha), 2, 1e-11)
            .expect("spectrum comparison");
        errors.push(cmpr.max_gap_error);
    }
    let slope = log_log_slope(&ratios, &errors);
    assert!(
        slope >= tol::SCALING_EXPONENT,
        "error exponent {slope:.2} below {}; errors {errors:?}",
        tol::SCALING_EXPONENT
    );
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "scaling sweep took {elapsed:.1} s, budget 300 s");
    pass(5, &format!("effective-spectrum gap error scales with exponent {slope:.2} ≥ 3.5"));
}

// ---------------------------------------------------------------------------
// 06 — dressing deviation decays as N0l⁻²
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_dressing_decay() {
    let fillings = [2u32, 4, 8, 16, 32];
    let devs: Vec<f64> = fillings
        .iter()
        .map(|&n| dressing_deviation(n).expect("deviation"))
        .collect();
    for pair in devs.windows(2) {
        assert!(pair[1] < pair[0], "deviation must decrease with filling");
    }
    let xs: Vec<f64> = fillings.iter().map(|&n| f64::from(n)).collect();
    let slope = log_log_slope(&xs, &devs);
    assert!(
        (slope + 2.0).abs() <= tol::DRESSING_WINDOW,
        "decay exponent {slope:.3} outside −2 ± {}",
        tol::DRESSING_WINDOW
    );
    pass(6, &format!("dressing deviation decays with exponent {:.2} ≈ 2", -slope));
}

// ---------------------------------------------------------------------------
// 07 — coupling dictionary round trip and reference point
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_coupling_round_trip() {
    let mut rng = Lcg(0x5eed_cafe);
    for trial in 0..100 {
        let lambda = 0.5 + 3.5 * rng.uniform();
        let s = 0.02 + 0.28 * rng.uniform();
        let eps = lambda * s;
        let eps_p = -eps * 0.6 * rng.uniform();
        let n0l = [2u32, 4, 6, 8][(rng.next_u64() % 4) as usize];
        let micro = MicroCouplings {
            lambda,
            eps,
            eps_p,
            mu: 0.0,
            mu_p: 0.0,
        };
        let fwd = derive_couplings(&micro, n0l).expect("forward dictionary");
        let back = invert_couplings(fwd.g, fwd.r, n0l).expect("inverse dictionary");
        assert!(
            (back.eps_over_lambda - s).abs() <= tol::ROUND_TRIP * s,
            "trial {trial}: ε/λ {s} came back as {}",
            back.eps_over_lambda
        );
        let ratio = eps_p / eps;
        assert!(
            (back.eps_p_over_eps - ratio).abs() <= tol::ROUND_TRIP * ratio.abs().max(1.0),
            "trial {trial}: ε′/ε {ratio} came back as {}",
            back.eps_p_over_eps
        );
    }
    let reference = derive_couplings(&MicroCouplings::gauge_only(1.0, 0.1), 2)
        .expect("reference point")
        .g;
    assert!(
        (reference - tol::G_REFERENCE).abs() <= tol::G_REFERENCE_TOL,
        "g(λ=1, ε=0.1, N0l=2) = {reference}"
    );
    pass(7, &format!("dictionary round trip ≤ 1e-12 on 100 draws; g reference {reference:.4}"));
}

// ---------------------------------------------------------------------------
// 08 — string breaking through the command-line pipeline
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_string_breaking_quench() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("out");
    let config = write_config(
        dir.path(),
        "quench.json",
        &json!({
            "mode": "quench",
            "geometry": { "lx": 3, "ly": 1 },
            "truncation": { "emax": 1, "qmax": 1 },
            "charges": [ { "vertex": 0, "charge": 1 }, { "vertex": 2, "charge": -1 } ],
            "schedule": {
                "initial": { "kind": "target", "g2": 1.0, "r": 0.0 },
                "final":   { "kind": "target", "g2": 1.0, "r": 0.8 },
                "duration": 5.0
            },
            "output_dir": out_dir.display().to_string()
        }),
    );
    let out = run_binary(&["run", config.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");

    let (header, rows) = read_csv(&out_dir.join("series.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).expect("column");
    let (e, g, s, p) = (
        col("energy"),
        col("gauss_residual"),
        col("string_prob"),
        col("charge_pair_prob"),
    );
    assert!(!rows.is_empty());
    let e0 = rows[0][e];
    assert!((rows[0][s] - 1.0).abs() <= 1e-12, "the string starts intact");
    assert!(rows[0][p].abs() <= 1e-12, "no pairs before the quench");
    let mut signal = false;
    for row in &rows {
        assert!((row[e] - e0).abs() <= tol::QUENCH_ENERGY_DRIFT, "energy drifted: {} → {}", e0, row[e]);
        assert!(row[g] <= tol::DYNAMIC_RESIDUAL, "gauss residual {}", row[g]);
        for prob in [row[s], row[p]] {
            assert!(
                (-tol::PROB_OVERSHOOT..=1.0 + tol::PROB_OVERSHOOT).contains(&prob),
                "probability {prob} out of range"
            );
        }
        signal |= row[p] > tol::PAIR_SIGNAL;
    }
    assert!(signal, "charge-pair probability never exceeded {}", tol::PAIR_SIGNAL);
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "quench run took {elapsed:.1} s, budget 60 s");
    pass(8, &format!("string breaking: pair signal > 1e-6, probabilities bounded, ⟨H⟩ constant to 1e-9 ({elapsed:.1} s)"));
}

// ---------------------------------------------------------------------------
// 09 — oracle equivalence: enumeration, eigenvalues, propagation
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_oracle_equivalence() {
    let t0 = Instant::now();

    // Constrained enumeration against the exhaustive product-space filter.
    struct EnumCase {
        lx: usize,
        ly: usize,
        boundary: Boundary,
        emax: i32,
        qmax: i32,
        pairs: Vec<(VertexId, i32)>,
    }
    let cases = vec![
        EnumCase { lx: 3, ly: 1, boundary: Boundary::Open, emax: 1, qmax: 1, pairs: vec![(0, 1), (2, -1)] },
        EnumCase { lx: 2, ly: 2, boundary: Boundary::Open, emax: 2, qmax: 1, pairs: vec![] },
        EnumCase { lx: 2, ly: 2, boundary: Boundary::Periodic, emax: 1, qmax: 1, pairs: vec![(0, 1), (3, -1)] },
    ];
    for case in &cases {
        let lattice = lat(case.lx, case.ly, case.boundary);
        let spec = TruncationSpec::target(case.emax, case.qmax).expect("spec");
        let charges = if case.pairs.is_empty() {
            StaticCharges::zero(&lattice)
        } else {
            StaticCharges::from_pairs(&lattice, &case.pairs).expect("charges")
        };
        let fast = enumerate_sector(&lattice, &spec, &charges, DEFAULT_ENUM_CAP).expect("sector");
        let slow = exhaustive_sector(&lattice, &spec, &charges, DEFAULT_ENUM_CAP).expect("filter");
        let fast_set: BTreeSet<Vec<i8>> =
            (0..fast.dim()).map(|i| fast.config(i).to_vec()).collect();
        let slow_set: BTreeSet<Vec<i8>> = slow.into_iter().collect();
        assert_eq!(fast_set.len(), fast.dim(), "enumeration must be duplicate-free");
        assert_eq!(fast_set, slow_set, "{}×{} sector mismatch", case.lx, case.ly);
    }

    // Lanczos vs dense diagonalization: a physical sector and a large random
    // operator near the dense-oracle comfort zone.
    {
        let lattice = lat(3, 2, Boundary::Open);
        let spec = TruncationSpec::target(1, 1).expect("spec");
        let basis = gauge_basis(&lattice, &spec, &[]);
        assert!(basis.dim() <= 2000);
        let h = build_gauge_matter(
            &basis,
            &TargetCouplings { g2: 1.0, inv_g2: 0.8, r: 0.9 },
            OperatorVariant::Ideal,
        )
        .expect("H");
        let report = ground_states(&h, 4, 1e-11).expect("solve");
        let dense = dense_eig(&h).expect("dense");
        for (i, e) in report.energies().iter().enumerate() {
            assert!(
                (e - dense[i]).abs() <= tol::EIG_AGREEMENT,
                "physical level {i}: {e} vs {}",
                dense[i]
            );
        }
    }
    {
        let dim = 700;
        let h = random_hermitian(dim, 0.008, 0x00c0_ffee, 0xd15e);
        let report = ground_states(&h, 6, 1e-11).expect("solve");
        let dense = dense_eig(&h).expect("dense");
        for (i, e) in report.energies().iter().enumerate() {
            assert!(
                (e - dense[i]).abs() <= tol::EIG_AGREEMENT,
                "random level {i}: {e} vs {}",
                dense[i]
            );
        }
    }

    // Krylov propagation vs the dense exponential.
    {
        let dim = 480;
        let fp = 0xe4_a0;
        let h = random_hermitian(dim, 0.01, 0xdead_10cc, fp);
        let psi = random_state(dim, 0x0b57_ac13, fp);
        let (dt, steps) = (0.04, 40);
        let log = evolve(&h, &psi, dt, steps, &EvolveOptions::default(), |_, _| Ok(()))
            .expect("evolution");
        let reference = dense_exp_apply(&h, dt * steps as f64, psi.amplitudes()).expect("dense");
        let worst = log
            .final_state
            .amplitudes()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(worst <= tol::EXP_AGREEMENT, "worst amplitude deviation {worst}");
    }

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "oracle suite took {elapsed:.1} s, budget 600 s");
    pass(9, &format!("enumeration, eigenvalue, and propagation oracles agree ({elapsed:.1} s)"));
}

// ---------------------------------------------------------------------------
// 10 — bit-identical artifacts for identical config + seed
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_bit_identical_reruns() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config_body = |out: &Path| {
        json!({
            "mode": "quench",
            "geometry": { "lx": 3, "ly": 1 },
            "truncation": { "emax": 1, "qmax": 1 },
            "charges": [ { "vertex": 0, "charge": 1 }, { "vertex": 2, "charge": -1 } ],
            "schedule": {
                "initial": { "kind": "target", "g2": 1.0, "r": 0.0 },
                "final":   { "kind": "target", "g2": 1.0, "r": 0.6 },
                "duration": 2.0
            },
            "seed": 42,
            "output_dir": out.display().to_string()
        })
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg_a = write_config(dir.path(), "a.json", &config_body(&out_a));
    let cfg_b = write_config(dir.path(), "b.json", &config_body(&out_b));
    assert!(run_binary(&["run", cfg_a.to_str().unwrap()]).status.success());
    assert!(run_binary(&["run", cfg_b.to_str().unwrap()]).status.success());
    let (ha, hb) = (
        sha256_file(&out_a.join("series.csv")),
        sha256_file(&out_b.join("series.csv")),
    );
    assert_eq!(ha, hb, "series.csv differs between identical runs");
    pass(10, &format!("identical config + seed reproduce series.csv bit for bit ({})", &ha[..12]));
}

// Keep the zero-charge restriction honest: it exists so that R = 0 ground
// states describe frozen matter, and it must agree with the pure-gauge
// problem on the chargeless basis.
#[test]
fn zero_charge_restriction_matches_chargeless_basis() {
    let lattice = lat(3, 1, Boundary::Open);
    let charged = gauge_basis(
        &lattice,
        &TruncationSpec::target(1, 1).expect("spec"),
        &[(0, 1), (2, -1)],
    );
    let h = build_gauge_matter(
        &charged,
        &TargetCouplings { g2: 1.4, inv_g2: 0.0, r: 0.0 },
        OperatorVariant::Ideal,
    )
    .expect("H");
    let keep = charge_zero_indices(&charged);
    let sub = h.restrict(&keep, 0x51).expect("restriction");
    let bare = gauge_basis(
        &lattice,
        &TruncationSpec::target(1, 0).expect("spec"),
        &[(0, 1), (2, -1)],
    );
    assert_eq!(keep.len(), bare.dim());
    let h_bare = build_pure_gauge(
        &bare,
        &TargetCouplings { g2: 1.4, inv_g2: 0.0, r: 0.0 },
        OperatorVariant::Ideal,
    )
    .expect("H bare");
    let e_sub = ground_states(&sub, 1, 1e-12).expect("solve").ground_energy();
    let e_bare = ground_states(&h_bare, 1, 1e-12).expect("solve").ground_energy();
    assert!((e_sub - e_bare).abs() <= 1e-12);
}
