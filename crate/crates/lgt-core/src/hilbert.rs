//! Truncated local state spaces and global basis enumeration.
//!
//! Two basis families are built here:
//!
//! * [`GaugeBasis`] — configurations of integer link fields `m` and vertex
//!   charges `Q` for the target gauge theory, either the full truncated
//!   product space or the subspace satisfying the divergence constraint
//!   `Σ_k (m_{n,k} − m_{n−k̂,k}) − Q_n = q_n` at every vertex for a given
//!   static-charge assignment `q`.
//! * [`FockBasis`] — occupancy configurations of the atomic model: two
//!   species per link with fixed total `n_a + n_b = N0l`, an optional
//!   dynamical species per vertex, and an optional hard-core-penalized
//!   auxiliary species per vertex with an optional conserved total.
//!
//! Both enumerate in a deterministic lexicographic order over the canonical
//! site order and carry a hash index for O(1) configuration lookup.
//! Enumeration is protected by a resource guard: a cheap product bound on the
//! dimension is compared against a cap before any work happens.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LinkId, VertexId};

/// Default cap for the resource guard (product-space configurations).
pub const DEFAULT_ENUM_CAP: u128 = 10_000_000;

/// FNV-1a over a byte stream; used for cheap stable basis fingerprints.
pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bosonic atom numbers of the atomic realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicNumbers {
    /// Total bosons per link (`n_a + n_b`); must be even so the field values
    /// `m = (n_a − n_b)/2` are integers. The link truncation is `Emax = N0l/2`.
    pub n0l: u32,
    /// Dynamical bosons per vertex at charge zero; `Q = n_η − N0v` is bounded
    /// below by `−N0v` automatically.
    pub n0v: u32,
    /// Hard occupancy cap per vertex for the auxiliary species.
    pub aux_cap: u32,
}

/// Truncation of the target-theory state space.
///
/// In atomic mode the link truncation is slaved to the atom number:
/// `emax = n0l / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationSpec {
    /// Link field range `m ∈ [−emax, +emax]`.
    pub emax: i32,
    /// Vertex charge range `Q ∈ [−qmax, +qmax]` (symmetric by convention for
    /// the ideal theory; the atomic model's asymmetric lower bound `−N0v`
    /// lives in [`FockSpec`]).
    pub qmax: i32,
    /// Present when the basis mirrors an atomic realization.
    pub atomic: Option<AtomicNumbers>,
}

impl TruncationSpec {
    pub fn target(emax: i32, qmax: i32) -> Result<Self> {
        if emax < 0 || qmax < 0 {
            return Err(Error::invalid(format!(
                "truncation bounds must be non-negative, got emax={emax}, qmax={qmax}"
            )));
        }
        Ok(TruncationSpec {
            emax,
            qmax,
            atomic: None,
        })
    }

    pub fn atomic(numbers: AtomicNumbers, qmax: i32) -> Result<Self> {
        if numbers.n0l == 0 || numbers.n0l % 2 != 0 {
            return Err(Error::invalid(format!(
                "link atom number must be positive and even, got {}",
                numbers.n0l
            )));
        }
        if qmax < 0 {
            return Err(Error::invalid("qmax must be non-negative"));
        }
        Ok(TruncationSpec {
            emax: (numbers.n0l / 2) as i32,
            qmax,
            atomic: Some(numbers),
        })
    }
}

/// Static background charges `q_n`, one per vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticCharges {
    q: Vec<i32>,
}

/// Largest background charge magnitude accepted without an explicit override.
pub const STATIC_CHARGE_BOUND: i32 = 4;

impl StaticCharges {
    pub fn zero(lattice: &Lattice) -> Self {
        StaticCharges {
            q: vec![0; lattice.vertex_count()],
        }
    }

    /// Builds from explicit (vertex, charge) pairs; unlisted vertices carry 0.
    pub fn from_pairs(lattice: &Lattice, pairs: &[(VertexId, i32)]) -> Result<Self> {
        let mut q = vec![0; lattice.vertex_count()];
        for &(v, charge) in pairs {
            if v >= lattice.vertex_count() {
                return Err(Error::invalid(format!("unknown vertex {v}")));
            }
            if charge.abs() > STATIC_CHARGE_BOUND {
                return Err(Error::invalid(format!(
                    "static charge {charge} at vertex {v} exceeds bound {STATIC_CHARGE_BOUND}"
                )));
            }
            q[v] = charge;
        }
        Ok(StaticCharges { q })
    }

    pub fn values(&self) -> &[i32] {
        &self.q
    }

    pub fn at(&self, v: VertexId) -> i32 {
        self.q[v]
    }

    pub fn total(&self) -> i32 {
        self.q.iter().sum()
    }

    pub fn conjugate(&self) -> Self {
        StaticCharges {
            q: self.q.iter().map(|&x| -x).collect(),
        }
    }
}

/// Whether a [`GaugeBasis`] is Gauss-law filtered or the raw product space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaugeScope {
    /// Only configurations with `div − Q = q` everywhere.
    Sector,
    /// Every `(m, Q)` combination within truncation.
    Full,
}

/// Enumerated basis of the target gauge theory.
///
/// Configuration layout: `L` link values `m` followed by `V` vertex charges
/// `Q`, stored as `i8`. The order is lexicographic in that flattened vector
/// (values ascending), which the enumeration produces directly.
#[derive(Clone, Debug)]
pub struct GaugeBasis {
    lattice: Arc<Lattice>,
    trunc: TruncationSpec,
    charges: StaticCharges,
    scope: GaugeScope,
    configs: Vec<Box<[i8]>>,
    index: HashMap<Box<[i8]>, u32>,
    fingerprint: u64,
}

impl GaugeBasis {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn lattice_arc(&self) -> Arc<Lattice> {
        Arc::clone(&self.lattice)
    }

    pub fn truncation(&self) -> &TruncationSpec {
        &self.trunc
    }

    pub fn charges(&self) -> &StaticCharges {
        &self.charges
    }

    pub fn scope(&self) -> GaugeScope {
        self.scope
    }

    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    pub fn config(&self, i: usize) -> &[i8] {
        &self.configs[i]
    }

    pub fn index_of(&self, config: &[i8]) -> Option<usize> {
        self.index.get(config).map(|&i| i as usize)
    }

    pub fn link_value(&self, config: &[i8], l: LinkId) -> i8 {
        config[l]
    }

    pub fn charge_value(&self, config: &[i8], v: VertexId) -> i8 {
        config[self.lattice.link_count() + v]
    }

    /// Integer Gauss residual `div − Q − q` at a vertex of one configuration.
    pub fn gauss_residual_int(&self, config: &[i8], v: VertexId) -> i32 {
        let mut div = 0i32;
        for &(l, sign) in self.lattice.incident_links(v).expect("vertex in range") {
            div += i32::from(sign) * i32::from(config[l]);
        }
        div - i32::from(self.charge_value(config, v)) - self.charges.at(v)
    }

    /// Generator eigenvalue `div − Q` at a vertex (static charge not removed).
    pub fn generator_value(&self, config: &[i8], v: VertexId) -> i32 {
        self.gauss_residual_int(config, v) + self.charges.at(v)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// One configuration per line, `m` values then `|` then `Q` values.
    /// Debugging aid, not a stability-guaranteed format.
    pub fn export_text(&self) -> String {
        let nl = self.lattice.link_count();
        let mut out = String::new();
        for c in &self.configs {
            let (m, q) = c.split_at(nl);
            let ms: Vec<String> = m.iter().map(|x| x.to_string()).collect();
            let qs: Vec<String> = q.iter().map(|x| x.to_string()).collect();
            out.push_str(&ms.join(" "));
            out.push_str(" | ");
            out.push_str(&qs.join(" "));
            out.push('\n');
        }
        out
    }

    fn finish(
        lattice: Arc<Lattice>,
        trunc: TruncationSpec,
        charges: StaticCharges,
        scope: GaugeScope,
        configs: Vec<Box<[i8]>>,
    ) -> Self {
        let mut index = HashMap::with_capacity(configs.len());
        for (i, c) in configs.iter().enumerate() {
            let prev = index.insert(c.clone(), i as u32);
            debug_assert!(prev.is_none(), "duplicate configuration in basis");
        }
        let fingerprint = fnv1a(
            [
                b'G',
                scope as u8,
                trunc.emax as u8,
                trunc.qmax as u8,
                lattice.lx() as u8,
                lattice.ly() as u8,
            ]
            .into_iter()
            .chain(charges.q.iter().map(|&x| x as u8))
            .chain(configs.iter().flat_map(|c| c.iter().map(|&x| x as u8))),
        );
        GaugeBasis {
            lattice,
            trunc,
            charges,
            scope,
            configs,
            index,
            fingerprint,
        }
    }
}

/// Cheap upper bound for the sector enumeration work: link assignments only
/// (charges are determined by the constraint).
fn sector_bound(lattice: &Lattice, trunc: &TruncationSpec) -> u128 {
    let per_link = 2 * trunc.emax as u128 + 1;
    let mut bound: u128 = 1;
    for _ in 0..lattice.link_count() {
        bound = bound.saturating_mul(per_link);
    }
    bound
}

fn full_bound(lattice: &Lattice, trunc: &TruncationSpec) -> u128 {
    let per_vertex = 2 * trunc.qmax as u128 + 1;
    let mut bound = sector_bound(lattice, trunc);
    for _ in 0..lattice.vertex_count() {
        bound = bound.saturating_mul(per_vertex);
    }
    bound
}

/// Necessary feasibility check for a charge sector: summing the constraint
/// over all vertices telescopes the divergence away, leaving
/// `Σ q_n = −Σ Q_n`, which is unattainable when `|Σ q_n| > V·qmax`.
///
/// Returns `(true, "")` when no obstruction is found; enumeration remains the
/// definitive test.
pub fn sector_feasible(
    lattice: &Lattice,
    trunc: &TruncationSpec,
    charges: &StaticCharges,
) -> (bool, String) {
    let total = charges.total();
    let capacity = lattice.vertex_count() as i64 * i64::from(trunc.qmax);
    if i64::from(total).abs() > capacity {
        return (
            false,
            format!(
                "global charge: |Σq| = {} exceeds total charge capacity {}",
                total.abs(),
                capacity
            ),
        );
    }
    (true, String::new())
}

/// Enumerates the Gauss-law sector for the given static charges.
///
/// Depth-first over link values in canonical order; whenever the last link
/// touching a vertex is assigned, the vertex charge is forced to
/// `Q = div − q` and pruned against `|Q| ≤ qmax`. The result is complete,
/// duplicate-free, and lexicographically ordered.
pub fn enumerate_sector(
    lattice: &Arc<Lattice>,
    trunc: &TruncationSpec,
    charges: &StaticCharges,
    cap: u128,
) -> Result<GaugeBasis> {
    if charges.values().len() != lattice.vertex_count() {
        return Err(Error::invalid("static charge list does not match lattice"));
    }
    let bound = sector_bound(lattice, trunc);
    if bound > cap {
        return Err(Error::ResourceGuard {
            estimate: bound,
            cap,
            context: "gauge sector enumeration".into(),
        });
    }

    let nl = lattice.link_count();
    let nv = lattice.vertex_count();
    // Vertex v is decided once all links with id < depth include its incident
    // set; completion depth = 1 + max incident link id (0 when isolated).
    let mut completion: Vec<Vec<VertexId>> = vec![Vec::new(); nl + 1];
    for v in 0..nv {
        let inc = lattice.incident_links(v)?;
        let depth = inc.iter().map(|&(l, _)| l + 1).max().unwrap_or(0);
        completion[depth].push(v);
    }

    let mut configs: Vec<Box<[i8]>> = Vec::new();
    let mut m = vec![0i8; nl];
    let mut q = vec![0i8; nv];

    // Isolated vertices (depth 0) are forced immediately.
    for &v in &completion[0] {
        let val = -charges.at(v);
        if val.abs() > trunc.qmax {
            // Sector empty: a legal outcome.
            return Ok(GaugeBasis::finish(
                Arc::clone(lattice),
                *trunc,
                charges.clone(),
                GaugeScope::Sector,
                configs,
            ));
        }
    }

    fn descend(
        lattice: &Lattice,
        trunc: &TruncationSpec,
        charges: &StaticCharges,
        completion: &[Vec<VertexId>],
        depth: usize,
        m: &mut [i8],
        q: &mut [i8],
        configs: &mut Vec<Box<[i8]>>,
    ) {
        if depth == m.len() {
            let mut config = Vec::with_capacity(m.len() + q.len());
            config.extend_from_slice(m);
            config.extend_from_slice(q);
            configs.push(config.into_boxed_slice());
            return;
        }
        for val in -trunc.emax..=trunc.emax {
            m[depth] = val as i8;
            let mut ok = true;
            for &v in &completion[depth + 1] {
                let mut div = 0i32;
                for &(l, sign) in lattice.incident_links(v).expect("in range") {
                    div += i32::from(sign) * i32::from(m[l]);
                }
                let charge = div - charges.at(v);
                if charge.abs() > trunc.qmax {
                    ok = false;
                    break;
                }
                q[v] = charge as i8;
            }
            if ok {
                descend(lattice, trunc, charges, completion, depth + 1, m, q, configs);
            }
        }
        m[depth] = 0;
    }

    // Fill isolated-vertex charges once (their values never change).
    for &v in &completion[0] {
        q[v] = (-charges.at(v)) as i8;
    }
    descend(
        lattice,
        trunc,
        charges,
        &completion,
        0,
        &mut m,
        &mut q,
        &mut configs,
    );

    let basis = GaugeBasis::finish(
        Arc::clone(lattice),
        *trunc,
        charges.clone(),
        GaugeScope::Sector,
        configs,
    );
    debug_assert!(
        (0..basis.dim()).all(|i| {
            (0..nv).all(|v| basis.gauss_residual_int(basis.config(i), v) == 0)
        }),
        "sector basis must satisfy the constraint exactly"
    );
    Ok(basis)
}

/// Enumerates the full truncated product space (links × charges), used for
/// generator and commutator tests at tiny sizes. The `charges` argument only
/// labels the intended sector for residual reporting; no filtering happens.
pub fn enumerate_full(
    lattice: &Arc<Lattice>,
    trunc: &TruncationSpec,
    charges: &StaticCharges,
    cap: u128,
) -> Result<GaugeBasis> {
    let bound = full_bound(lattice, trunc);
    if bound > cap {
        return Err(Error::ResourceGuard {
            estimate: bound,
            cap,
            context: "full gauge basis enumeration".into(),
        });
    }
    let nl = lattice.link_count();
    let nv = lattice.vertex_count();
    let mut configs = Vec::with_capacity(bound as usize);
    let mut values = vec![0i8; nl + nv];
    fn descend(
        pos: usize,
        nl: usize,
        trunc: &TruncationSpec,
        values: &mut [i8],
        configs: &mut Vec<Box<[i8]>>,
    ) {
        if pos == values.len() {
            configs.push(values.to_vec().into_boxed_slice());
            return;
        }
        let bound = if pos < nl { trunc.emax } else { trunc.qmax };
        for val in -bound..=bound {
            values[pos] = val as i8;
            descend(pos + 1, nl, trunc, values, configs);
        }
        values[pos] = 0;
    }
    descend(0, nl, trunc, &mut values, &mut configs);
    Ok(GaugeBasis::finish(
        Arc::clone(lattice),
        *trunc,
        charges.clone(),
        GaugeScope::Full,
        configs,
    ))
}

// ---------------------------------------------------------------------------
// Atomic Fock bases
// ---------------------------------------------------------------------------

/// Dynamical-matter block of a [`FockSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockMatter {
    /// Reference filling; `Q = n_η − n0v`.
    pub n0v: u32,
    /// Upper charge truncation: `n_η ≤ n0v + qmax` (the lower bound `n_η ≥ 0`
    /// is the physical `Q ≥ −n0v`).
    pub qmax: u32,
    /// Optional conserved total `Σ n_η` to restrict to one hopping block.
    pub total: Option<u32>,
}

/// Auxiliary-species block of a [`FockSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockAux {
    /// Hard per-vertex occupancy cap.
    pub cap: u32,
    /// Optional conserved total; the penalized-dynamics sector fixes this to
    /// the vertex count.
    pub total: Option<u32>,
}

/// Shape of an atomic Fock basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpec {
    /// Per-link total `n_a + n_b` (even, positive).
    pub n0l: u32,
    /// `None` freezes the matter species out of the basis entirely.
    pub matter: Option<FockMatter>,
    /// `None` drops the auxiliary species.
    pub aux: Option<FockAux>,
}

/// Species/site address inside a Fock configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FockSite {
    /// `a`-species occupancy of a link (`b` is the complement to `n0l`).
    LinkA(LinkId),
    Matter(VertexId),
    Aux(VertexId),
}

/// Enumerated occupancy basis of the atomic model.
///
/// Configuration layout (all `u8`): `L` link values `n_a`, then `V` matter
/// occupancies `n_η` when matter is present, then `V` auxiliary occupancies
/// when the auxiliary species is present. Lexicographic order, ascending.
#[derive(Clone, Debug)]
pub struct FockBasis {
    lattice: Arc<Lattice>,
    spec: FockSpec,
    configs: Vec<Box<[u8]>>,
    index: HashMap<Box<[u8]>, u32>,
    fingerprint: u64,
}

impl FockBasis {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn lattice_arc(&self) -> Arc<Lattice> {
        Arc::clone(&self.lattice)
    }

    pub fn spec(&self) -> &FockSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    pub fn config(&self, i: usize) -> &[u8] {
        &self.configs[i]
    }

    pub fn index_of(&self, config: &[u8]) -> Option<usize> {
        self.index.get(config).map(|&i| i as usize)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn matter_offset(&self) -> usize {
        self.lattice.link_count()
    }

    fn aux_offset(&self) -> usize {
        self.lattice.link_count()
            + if self.spec.matter.is_some() {
                self.lattice.vertex_count()
            } else {
                0
            }
    }

    /// Occupancy at a species/site address.
    pub fn occupancy(&self, config: &[u8], site: FockSite) -> u32 {
        match site {
            FockSite::LinkA(l) => u32::from(config[l]),
            FockSite::Matter(v) => {
                assert!(self.spec.matter.is_some(), "matter species absent");
                u32::from(config[self.matter_offset() + v])
            }
            FockSite::Aux(v) => {
                assert!(self.spec.aux.is_some(), "auxiliary species absent");
                u32::from(config[self.aux_offset() + v])
            }
        }
    }

    /// `b`-species occupancy of a link (complement of `n_a`).
    pub fn occupancy_b(&self, config: &[u8], l: LinkId) -> u32 {
        self.spec.n0l - u32::from(config[l])
    }

    /// Field value `m = n_a − n0l/2` of a link.
    pub fn link_field(&self, config: &[u8], l: LinkId) -> i32 {
        i32::from(config[l]) - (self.spec.n0l / 2) as i32
    }

    /// Charge value `Q = n_η − n0v` of a vertex (0 when matter is frozen).
    pub fn charge(&self, config: &[u8], v: VertexId) -> i32 {
        match self.spec.matter {
            Some(matter) => {
                i32::from(config[self.matter_offset() + v]) - matter.n0v as i32
            }
            None => 0,
        }
    }

    /// Auxiliary occupancy of a vertex (0 when the species is absent).
    pub fn aux_occupancy(&self, config: &[u8], v: VertexId) -> u32 {
        match self.spec.aux {
            Some(_) => u32::from(config[self.aux_offset() + v]),
            None => 0,
        }
    }

    /// Maps one Fock configuration to target-theory field values
    /// `(m per link, Q per vertex)`.
    pub fn gauge_values(&self, config: &[u8]) -> (Vec<i32>, Vec<i32>) {
        let m = (0..self.lattice.link_count())
            .map(|l| self.link_field(config, l))
            .collect();
        let q = (0..self.lattice.vertex_count())
            .map(|v| self.charge(config, v))
            .collect();
        (m, q)
    }

    /// Inverse of [`FockBasis::gauge_values`] on its image, with the
    /// auxiliary occupancies supplied explicitly (gauge data does not fix
    /// them). Returns the basis index, or `None` if the configuration is not
    /// in this basis.
    pub fn index_from_gauge(&self, m: &[i32], q: &[i32], aux: &[u32]) -> Option<usize> {
        let nl = self.lattice.link_count();
        let nv = self.lattice.vertex_count();
        if m.len() != nl || q.len() != nv {
            return None;
        }
        let mut config = Vec::with_capacity(nl + 2 * nv);
        let half = (self.spec.n0l / 2) as i32;
        for &mv in m {
            let na = mv + half;
            if na < 0 || na > self.spec.n0l as i32 {
                return None;
            }
            config.push(na as u8);
        }
        if let Some(matter) = self.spec.matter {
            for &qv in q {
                let ne = qv + matter.n0v as i32;
                if ne < 0 || ne > (matter.n0v + matter.qmax) as i32 {
                    return None;
                }
                config.push(ne as u8);
            }
        } else if q.iter().any(|&qv| qv != 0) {
            return None;
        }
        if self.spec.aux.is_some() {
            if aux.len() != nv {
                return None;
            }
            for &av in aux {
                config.push(av as u8);
            }
        }
        self.index_of(&config)
    }

    /// One configuration per line: `n_a | n_η | n_χ` blocks. Debugging aid.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for c in &self.configs {
            let (links, rest) = c.split_at(self.matter_offset());
            let fmt = |xs: &[u8]| {
                xs.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            out.push_str(&fmt(links));
            if self.spec.matter.is_some() {
                let nv = self.lattice.vertex_count();
                out.push_str(" | ");
                out.push_str(&fmt(&rest[..nv]));
                if self.spec.aux.is_some() {
                    out.push_str(" | ");
                    out.push_str(&fmt(&rest[nv..]));
                }
            } else if self.spec.aux.is_some() {
                out.push_str(" | ");
                out.push_str(&fmt(rest));
            }
            out.push('\n');
        }
        out
    }
}

/// All occupancy vectors of `n` sites with per-site cap and optional total,
/// in lexicographic order.
fn occupancy_block(n: usize, cap: u32, total: Option<u32>) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut current = vec![0u8; n];
    fn descend(
        pos: usize,
        cap: u32,
        total: Option<u32>,
        used: u32,
        current: &mut Vec<u8>,
        out: &mut Vec<Vec<u8>>,
    ) {
        if pos == current.len() {
            if total.map_or(true, |t| used == t) {
                out.push(current.clone());
            }
            return;
        }
        let remaining_sites = (current.len() - pos - 1) as u32;
        for v in 0..=cap {
            if let Some(t) = total {
                if used + v > t || used + v + remaining_sites * cap < t {
                    continue;
                }
            }
            current[pos] = v as u8;
            descend(pos + 1, cap, total, used + v, current, out);
        }
        current[pos] = 0;
    }
    descend(0, cap, total, 0, &mut current, &mut out);
    out
}

/// Enumerates an atomic Fock basis for the given spec.
pub fn enumerate_fock(lattice: &Arc<Lattice>, spec: &FockSpec, cap: u128) -> Result<FockBasis> {
    if spec.n0l == 0 || spec.n0l % 2 != 0 {
        return Err(Error::invalid(format!(
            "link atom number must be positive and even, got {}",
            spec.n0l
        )));
    }
    if let Some(aux) = spec.aux {
        if let Some(total) = aux.total {
            if u128::from(total) > u128::from(aux.cap) * lattice.vertex_count() as u128 {
                return Err(Error::InfeasibleSector(format!(
                    "auxiliary total {total} cannot fit under cap {} on {} vertices",
                    aux.cap,
                    lattice.vertex_count()
                )));
            }
        }
    }

    let nl = lattice.link_count();
    let nv = lattice.vertex_count();

    // Pre-enumerate the small per-species blocks so the guard can use the
    // true block sizes rather than loose products.
    let matter_block = spec.matter.map(|m| {
        occupancy_block(nv, m.n0v + m.qmax, m.total)
    });
    let aux_block = spec.aux.map(|a| occupancy_block(nv, a.cap, a.total));

    let mut bound: u128 = 1;
    for _ in 0..nl {
        bound = bound.saturating_mul(u128::from(spec.n0l) + 1);
    }
    if let Some(b) = &matter_block {
        bound = bound.saturating_mul(b.len() as u128);
    }
    if let Some(b) = &aux_block {
        bound = bound.saturating_mul(b.len() as u128);
    }
    if bound > cap {
        return Err(Error::ResourceGuard {
            estimate: bound,
            cap,
            context: "Fock basis enumeration".into(),
        });
    }

    let mut configs: Vec<Box<[u8]>> = Vec::with_capacity(bound as usize);
    let mut link_vals = vec![0u8; nl];
    let matter_block = matter_block.unwrap_or_else(|| vec![Vec::new()]);
    let aux_block = aux_block.unwrap_or_else(|| vec![Vec::new()]);

    fn links_descend(
        pos: usize,
        n0l: u32,
        link_vals: &mut Vec<u8>,
        matter_block: &[Vec<u8>],
        aux_block: &[Vec<u8>],
        configs: &mut Vec<Box<[u8]>>,
    ) {
        if pos == link_vals.len() {
            for mb in matter_block {
                for ab in aux_block {
                    let mut c =
                        Vec::with_capacity(link_vals.len() + mb.len() + ab.len());
                    c.extend_from_slice(link_vals);
                    c.extend_from_slice(mb);
                    c.extend_from_slice(ab);
                    configs.push(c.into_boxed_slice());
                }
            }
            return;
        }
        for v in 0..=n0l {
            link_vals[pos] = v as u8;
            links_descend(pos + 1, n0l, link_vals, matter_block, aux_block, configs);
        }
        link_vals[pos] = 0;
    }
    links_descend(
        0,
        spec.n0l,
        &mut link_vals,
        &matter_block,
        &aux_block,
        &mut configs,
    );

    let mut index = HashMap::with_capacity(configs.len());
    for (i, c) in configs.iter().enumerate() {
        index.insert(c.clone(), i as u32);
    }
    let fingerprint = fnv1a(
        [
            b'F',
            spec.n0l as u8,
            spec.matter.map_or(255, |m| m.n0v as u8),
            spec.matter.map_or(255, |m| m.qmax as u8),
            spec.aux.map_or(255, |a| a.cap as u8),
            lattice.lx() as u8,
            lattice.ly() as u8,
        ]
        .into_iter()
        .chain(configs.iter().flat_map(|c| c.iter().copied())),
    );
    Ok(FockBasis {
        lattice: Arc::clone(lattice),
        spec: *spec,
        configs,
        index,
        fingerprint,
    })
}
