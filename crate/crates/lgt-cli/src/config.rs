//! Run-configuration model: JSON schema, aggregated validation, defaults.
//!
//! Validation never stops at the first problem. The whole document is walked
//! and every unknown key, missing field, type clash, and out-of-range value
//! lands in one error list, so a config with three typos needs one edit
//! round, not three.

use std::fmt::Display;
use std::path::Path;

use lgt_core::hilbert::STATIC_CHARGE_BOUND;
use serde::Serialize;
use serde_json::{Map, Value};

/// What a run computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Sector dimension, feasibility, and sample configurations.
    SectorInfo,
    /// Lowest eigenpairs plus ground-state observable maps.
    Ground,
    /// Sudden coupling switch followed by real-time evolution.
    Quench,
    /// Linear coupling ramp followed by the same measurement set.
    Adiabatic,
    /// Perturbative expansion versus the analytic term catalog, plus a
    /// spectrum cross-check of the penalized ladder model.
    EffectiveValidate,
    /// Table of the leading corrections dropped by the target description.
    CorrectionBudget,
}

impl Mode {
    const NAMES: [(&'static str, Mode); 6] = [
        ("sector_info", Mode::SectorInfo),
        ("ground", Mode::Ground),
        ("quench", Mode::Quench),
        ("adiabatic", Mode::Adiabatic),
        ("effective_validate", Mode::EffectiveValidate),
        ("correction_budget", Mode::CorrectionBudget),
    ];

    pub fn as_str(self) -> &'static str {
        Mode::NAMES
            .iter()
            .find(|(_, m)| *m == self)
            .map(|(name, _)| *name)
            .expect("every mode is named")
    }

    fn parse(text: &str) -> Option<Mode> {
        Mode::NAMES
            .iter()
            .find(|(name, _)| *name == text)
            .map(|(_, m)| *m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Open,
    Periodic,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeometryConfig {
    pub lx: usize,
    pub ly: usize,
    pub boundary: BoundaryKind,
}

/// Atomic realization numbers; presence switches the basis to atomic mode
/// (the link truncation becomes `n0l/2`).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AtomicConfig {
    pub n0l: u32,
    pub n0v: u32,
    pub aux_cap: u32,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TruncationConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emax: Option<i32>,
    pub qmax: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atomic: Option<AtomicConfig>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChargeConfig {
    pub vertex: usize,
    pub charge: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Unit ladder amplitudes, hard truncation.
    Ideal,
    /// Bosonic amplitudes of the finite-atom-number realization.
    Atomic,
}

/// One coupling point, in either parameterization.
#[derive(Clone, Copy, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingConfig {
    /// Target-theory knobs; the Hamiltonian lives on a Gauss-law sector.
    Target {
        g2: f64,
        inv_g2: f64,
        r: f64,
        variant: VariantKind,
    },
    /// Microscopic atomic couplings; the Hamiltonian lives on a Fock basis.
    Micro {
        lambda: f64,
        eps: f64,
        eps_p: f64,
        mu: f64,
        mu_p: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScheduleConfig {
    pub initial: CouplingConfig,
    #[serde(rename = "final")]
    pub final_: CouplingConfig,
    pub duration: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolverConfig {
    /// Eigensolver residual tolerance.
    pub tolerance: f64,
    /// Propagator per-step tolerance.
    pub step_tolerance: f64,
    /// Eigenpairs requested in ground mode.
    pub levels: usize,
    /// Time step; omitted means one half of the inverse Hamiltonian norm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Basis-enumeration refusal threshold.
    pub enum_cap: u64,
    /// Highest expansion order in effective-validate mode.
    pub max_order: usize,
    /// Ground-referenced gaps compared in effective-validate mode.
    pub gaps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            step_tolerance: 1e-12,
            levels: 1,
            dt: None,
            enum_cap: 10_000_000,
            max_order: 4,
            gaps: 2,
        }
    }
}

/// Fully validated and normalized run description. Serializing this yields
/// the canonical form embedded in manifests: every default filled in, every
/// override already applied.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub geometry: GeometryConfig,
    pub truncation: TruncationConfig,
    pub charges: Vec<ChargeConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub couplings: Option<CouplingConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    pub solver: SolverConfig,
    pub output_dir: String,
    pub seed: u64,
}

pub const DEFAULT_OUTPUT_DIR: &str = "lgt-out";

// ---------------------------------------------------------------------------
// Validation walk
// ---------------------------------------------------------------------------

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Error accumulator; every helper that returns `None` has already recorded
/// why.
#[derive(Default)]
struct Collector {
    errors: Vec<String>,
}

impl Collector {
    fn err(&mut self, path: &str, msg: impl Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn object<'a>(
        &mut self,
        path: &str,
        v: &'a Value,
        allowed: &[&str],
    ) -> Option<&'a Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.err(path, format!("expected an object, found {}", kind_of(v)));
            return None;
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(
                    path,
                    format!("unknown key {key:?} (allowed: {})", allowed.join(", ")),
                );
            }
        }
        Some(map)
    }

    fn finite(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(path, format!("expected a finite number, found {}", kind_of(v)));
                None
            }
        }
    }

    fn unsigned(&mut self, path: &str, v: &Value) -> Option<u64> {
        match v.as_u64() {
            Some(x) => Some(x),
            None => {
                self.err(
                    path,
                    format!("expected a non-negative integer, found {}", kind_of(v)),
                );
                None
            }
        }
    }

    fn integer(&mut self, path: &str, v: &Value) -> Option<i64> {
        match v.as_i64() {
            Some(x) => Some(x),
            None => {
                self.err(path, format!("expected an integer, found {}", kind_of(v)));
                None
            }
        }
    }

    fn text<'a>(&mut self, path: &str, v: &'a Value) -> Option<&'a str> {
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.err(path, format!("expected a string, found {}", kind_of(v)));
                None
            }
        }
    }

    fn missing(&mut self, path: &str, key: &str) {
        self.err(path, format!("missing required key {key:?}"));
    }
}

fn parse_geometry(c: &mut Collector, v: &Value) -> Option<GeometryConfig> {
    let map = c.object("geometry", v, &["lx", "ly", "boundary"])?;
    let lx = match map.get("lx") {
        Some(v) => c.unsigned("geometry.lx", v),
        None => {
            c.missing("geometry", "lx");
            None
        }
    };
    let ly = match map.get("ly") {
        Some(v) => c.unsigned("geometry.ly", v),
        None => {
            c.missing("geometry", "ly");
            None
        }
    };
    let boundary = match map.get("boundary") {
        Some(v) => c.text("geometry.boundary", v).and_then(|s| match s {
            "open" => Some(BoundaryKind::Open),
            "periodic" => Some(BoundaryKind::Periodic),
            other => {
                c.err(
                    "geometry.boundary",
                    format!("expected \"open\" or \"periodic\", found {other:?}"),
                );
                None
            }
        }),
        None => Some(BoundaryKind::Open),
    };
    let (lx, ly, boundary) = (lx?, ly?, boundary?);
    if lx == 0 || ly == 0 {
        c.err("geometry", format!("extents must be positive, got {lx}×{ly}"));
        return None;
    }
    Some(GeometryConfig {
        lx: lx as usize,
        ly: ly as usize,
        boundary,
    })
}

fn parse_atomic(c: &mut Collector, v: &Value) -> Option<AtomicConfig> {
    let map = c.object("truncation.atomic", v, &["n0l", "n0v", "aux_cap"])?;
    let n0l = match map.get("n0l") {
        Some(v) => c.unsigned("truncation.atomic.n0l", v),
        None => {
            c.missing("truncation.atomic", "n0l");
            None
        }
    };
    let n0v = match map.get("n0v") {
        Some(v) => c.unsigned("truncation.atomic.n0v", v),
        None => Some(0),
    };
    let aux_cap = match map.get("aux_cap") {
        Some(v) => c.unsigned("truncation.atomic.aux_cap", v),
        None => Some(2),
    };
    let (n0l, n0v, aux_cap) = (n0l?, n0v?, aux_cap?);
    if n0l == 0 || n0l % 2 != 0 {
        c.err(
            "truncation.atomic.n0l",
            format!("link atom number must be positive and even, got {n0l}"),
        );
        return None;
    }
    Some(AtomicConfig {
        n0l: n0l as u32,
        n0v: n0v as u32,
        aux_cap: aux_cap as u32,
    })
}

fn parse_truncation(c: &mut Collector, v: &Value) -> Option<TruncationConfig> {
    let map = c.object("truncation", v, &["emax", "qmax", "atomic"])?;
    let emax = match map.get("emax") {
        Some(v) => match c.integer("truncation.emax", v) {
            Some(e) if e >= 0 => Some(Some(e as i32)),
            Some(e) => {
                c.err("truncation.emax", format!("must be non-negative, got {e}"));
                None
            }
            None => None,
        },
        None => Some(None),
    };
    let qmax = match map.get("qmax") {
        Some(v) => match c.integer("truncation.qmax", v) {
            Some(q) if q >= 0 => Some(q as i32),
            Some(q) => {
                c.err("truncation.qmax", format!("must be non-negative, got {q}"));
                None
            }
            None => None,
        },
        None => {
            c.missing("truncation", "qmax");
            None
        }
    };
    let atomic = match map.get("atomic") {
        Some(v) => parse_atomic(c, v).map(Some),
        None => Some(None),
    };
    let (emax, qmax, atomic) = (emax?, qmax?, atomic?);
    match (emax, &atomic) {
        (None, None) => {
            c.err(
                "truncation",
                "needs either \"emax\" (target truncation) or \"atomic\" (realization numbers)",
            );
            None
        }
        (Some(_), Some(_)) => {
            c.err(
                "truncation",
                "\"emax\" conflicts with \"atomic\" (the atomic link truncation is n0l/2)",
            );
            None
        }
        _ => Some(TruncationConfig { emax, qmax, atomic }),
    }
}

fn parse_charges(c: &mut Collector, v: &Value, geometry: Option<&GeometryConfig>) -> Option<Vec<ChargeConfig>> {
    let Some(entries) = v.as_array() else {
        c.err("charges", format!("expected an array, found {}", kind_of(v)));
        return None;
    };
    let mut out = Vec::new();
    let mut ok = true;
    for (i, entry) in entries.iter().enumerate() {
        let path = format!("charges[{i}]");
        let Some(map) = c.object(&path, entry, &["vertex", "charge"]) else {
            ok = false;
            continue;
        };
        let vertex = match map.get("vertex") {
            Some(v) => c.unsigned(&format!("{path}.vertex"), v),
            None => {
                c.missing(&path, "vertex");
                None
            }
        };
        let charge = match map.get("charge") {
            Some(v) => c.integer(&format!("{path}.charge"), v),
            None => {
                c.missing(&path, "charge");
                None
            }
        };
        let (Some(vertex), Some(charge)) = (vertex, charge) else {
            ok = false;
            continue;
        };
        if let Some(geo) = geometry {
            if vertex as usize >= geo.lx * geo.ly {
                c.err(
                    &format!("{path}.vertex"),
                    format!("vertex {vertex} outside the {}×{} lattice", geo.lx, geo.ly),
                );
                ok = false;
            }
        }
        if charge.unsigned_abs() > STATIC_CHARGE_BOUND as u64 {
            c.err(
                &format!("{path}.charge"),
                format!("|charge| exceeds the bound {STATIC_CHARGE_BOUND}"),
            );
            ok = false;
        }
        out.push(ChargeConfig {
            vertex: vertex as usize,
            charge: charge as i32,
        });
    }
    ok.then_some(out)
}

fn parse_coupling(c: &mut Collector, path: &str, v: &Value) -> Option<CouplingConfig> {
    let map = c.object(
        path,
        v,
        &[
            "kind", "g2", "inv_g2", "r", "variant", "lambda", "eps", "eps_p", "mu", "mu_p",
        ],
    )?;
    let kind = match map.get("kind") {
        Some(v) => c.text(&format!("{path}.kind"), v)?,
        None => {
            c.missing(path, "kind");
            return None;
        }
    };
    match kind {
        "target" => {
            for stray in ["lambda", "eps", "eps_p", "mu", "mu_p"] {
                if map.contains_key(stray) {
                    c.err(path, format!("{stray:?} does not belong to a target point"));
                }
            }
            let g2 = match map.get("g2") {
                Some(v) => c.finite(&format!("{path}.g2"), v),
                None => {
                    c.missing(path, "g2");
                    None
                }
            };
            let inv_g2 = match map.get("inv_g2") {
                Some(v) => c.finite(&format!("{path}.inv_g2"), v),
                None => Some(0.0),
            };
            let r = match map.get("r") {
                Some(v) => c.finite(&format!("{path}.r"), v),
                None => Some(0.0),
            };
            let variant = match map.get("variant") {
                Some(v) => c.text(&format!("{path}.variant"), v).and_then(|s| match s {
                    "ideal" => Some(VariantKind::Ideal),
                    "atomic" => Some(VariantKind::Atomic),
                    other => {
                        c.err(
                            &format!("{path}.variant"),
                            format!("expected \"ideal\" or \"atomic\", found {other:?}"),
                        );
                        None
                    }
                }),
                None => Some(VariantKind::Ideal),
            };
            let (g2, inv_g2, r, variant) = (g2?, inv_g2?, r?, variant?);
            for (label, value) in [("g2", g2), ("inv_g2", inv_g2), ("r", r)] {
                if value < 0.0 {
                    c.err(&format!("{path}.{label}"), format!("must be non-negative, got {value}"));
                    return None;
                }
            }
            Some(CouplingConfig::Target {
                g2,
                inv_g2,
                r,
                variant,
            })
        }
        "micro" => {
            for stray in ["g2", "inv_g2", "r", "variant"] {
                if map.contains_key(stray) {
                    c.err(path, format!("{stray:?} does not belong to a micro point"));
                }
            }
            let lambda = match map.get("lambda") {
                Some(v) => c.finite(&format!("{path}.lambda"), v),
                None => {
                    c.missing(path, "lambda");
                    None
                }
            };
            let eps = match map.get("eps") {
                Some(v) => c.finite(&format!("{path}.eps"), v),
                None => {
                    c.missing(path, "eps");
                    None
                }
            };
            let eps_p = match map.get("eps_p") {
                Some(v) => c.finite(&format!("{path}.eps_p"), v),
                None => Some(0.0),
            };
            let mu = match map.get("mu") {
                Some(v) => c.finite(&format!("{path}.mu"), v),
                None => Some(0.0),
            };
            let mu_p = match map.get("mu_p") {
                Some(v) => c.finite(&format!("{path}.mu_p"), v),
                None => Some(0.0),
            };
            let (lambda, eps, eps_p, mu, mu_p) = (lambda?, eps?, eps_p?, mu?, mu_p?);
            if lambda <= 0.0 {
                c.err(
                    &format!("{path}.lambda"),
                    format!("the penalty strength must be positive, got {lambda}"),
                );
                return None;
            }
            Some(CouplingConfig::Micro {
                lambda,
                eps,
                eps_p,
                mu,
                mu_p,
            })
        }
        other => {
            c.err(
                &format!("{path}.kind"),
                format!("expected \"target\" or \"micro\", found {other:?}"),
            );
            None
        }
    }
}

fn parse_schedule(c: &mut Collector, v: &Value) -> Option<ScheduleConfig> {
    let map = c.object("schedule", v, &["initial", "final", "duration"])?;
    let initial = match map.get("initial") {
        Some(v) => parse_coupling(c, "schedule.initial", v),
        None => {
            c.missing("schedule", "initial");
            None
        }
    };
    let final_ = match map.get("final") {
        Some(v) => parse_coupling(c, "schedule.final", v),
        None => {
            c.missing("schedule", "final");
            None
        }
    };
    let duration = match map.get("duration") {
        Some(v) => c.finite("schedule.duration", v),
        None => {
            c.missing("schedule", "duration");
            None
        }
    };
    let (initial, final_, duration) = (initial?, final_?, duration?);
    if duration <= 0.0 {
        c.err("schedule.duration", format!("must be positive, got {duration}"));
        return None;
    }
    for (label, point) in [("initial", &initial), ("final", &final_)] {
        if matches!(point, CouplingConfig::Micro { .. }) {
            c.err(
                &format!("schedule.{label}"),
                "dynamics run in the target parameterization; use kind \"target\"",
            );
            return None;
        }
    }
    if let (
        CouplingConfig::Target { variant: va, .. },
        CouplingConfig::Target { variant: vb, .. },
    ) = (&initial, &final_)
    {
        if va != vb {
            c.err(
                "schedule",
                "both endpoints must use the same operator variant",
            );
            return None;
        }
    }
    Some(ScheduleConfig {
        initial,
        final_,
        duration,
    })
}

fn parse_solver(c: &mut Collector, v: &Value) -> Option<SolverConfig> {
    let map = c.object(
        "solver",
        v,
        &[
            "tolerance",
            "step_tolerance",
            "levels",
            "dt",
            "enum_cap",
            "max_order",
            "gaps",
        ],
    )?;
    let defaults = SolverConfig::default();
    let mut out = defaults;
    let mut ok = true;

    if let Some(v) = map.get("tolerance") {
        match c.finite("solver.tolerance", v) {
            Some(x) if x > 0.0 => out.tolerance = x,
            Some(x) => {
                c.err("solver.tolerance", format!("must be positive, got {x}"));
                ok = false;
            }
            None => ok = false,
        }
    }
    if let Some(v) = map.get("step_tolerance") {
        match c.finite("solver.step_tolerance", v) {
            Some(x) if x > 0.0 => out.step_tolerance = x,
            Some(x) => {
                c.err("solver.step_tolerance", format!("must be positive, got {x}"));
                ok = false;
            }
            None => ok = false,
        }
    }
    if let Some(v) = map.get("levels") {
        match c.unsigned("solver.levels", v) {
            Some(x) if x >= 1 => out.levels = x as usize,
            Some(x) => {
                c.err("solver.levels", format!("must be at least 1, got {x}"));
                ok = false;
            }
            None => ok = false,
        }
    }
    if let Some(v) = map.get("dt") {
        match c.finite("solver.dt", v) {
            Some(x) if x > 0.0 => out.dt = Some(x),
            Some(x) => {
                c.err("solver.dt", format!("must be positive, got {x}"));
                ok = false;
            }
            None => ok = false,
        }
    }
    if let Some(v) = map.get("enum_cap") {
        match c.unsigned("solver.enum_cap", v) {
            Some(x) if x >= 1 => out.enum_cap = x,
            Some(x) => {
                c.err("solver.enum_cap", format!("must be at least 1, got {x}"));
                ok = false;
            }
            None => ok = false,
        }
    }
    if let Some(v) = map.get("max_order") {
        match c.unsigned("solver.max_order", v) {
            Some(x) if (1..=4).contains(&x) => out.max_order = x as usize,
            Some(x) => {
                c.err("solver.max_order", format!("must lie in 1..=4, got {x}"));
                ok = false;
            }
            None => ok = false,
        }
    }
    if let Some(v) = map.get("gaps") {
        match c.unsigned("solver.gaps", v) {
            Some(x) if x >= 1 => out.gaps = x as usize,
            Some(x) => {
                c.err("solver.gaps", format!("must be at least 1, got {x}"));
                ok = false;
            }
            None => ok = false,
        }
    }
    ok.then_some(out)
}

/// Mode/block compatibility: which top-level blocks each mode consumes.
fn check_mode_rules(c: &mut Collector, cfg: &RunConfig) {
    let mode = cfg.mode;
    let needs_couplings = matches!(
        mode,
        Mode::Ground | Mode::EffectiveValidate | Mode::CorrectionBudget
    );
    let needs_schedule = matches!(mode, Mode::Quench | Mode::Adiabatic);

    if needs_couplings && cfg.couplings.is_none() {
        c.err("couplings", format!("mode {:?} needs a coupling point", mode.as_str()));
    }
    if !needs_couplings && cfg.couplings.is_some() {
        c.err(
            "couplings",
            format!("not used in mode {:?}; remove the block", mode.as_str()),
        );
    }
    if needs_schedule && cfg.schedule.is_none() {
        c.err("schedule", format!("mode {:?} needs a schedule", mode.as_str()));
    }
    if !needs_schedule && cfg.schedule.is_some() {
        c.err(
            "schedule",
            format!("not used in mode {:?}; remove the block", mode.as_str()),
        );
    }
    if matches!(mode, Mode::EffectiveValidate | Mode::CorrectionBudget) {
        if cfg.truncation.atomic.is_none() {
            c.err(
                "truncation",
                format!("mode {:?} needs the atomic realization numbers", mode.as_str()),
            );
        }
        if !cfg.charges.is_empty() {
            c.err(
                "charges",
                format!("not used in mode {:?}; remove the entries", mode.as_str()),
            );
        }
    }
    if mode == Mode::EffectiveValidate {
        if let Some(CouplingConfig::Target { .. }) = cfg.couplings {
            c.err(
                "couplings",
                "effective validation needs the microscopic parameterization (kind \"micro\")",
            );
        }
    }
    if let Some(CouplingConfig::Micro { .. }) = cfg.couplings {
        if cfg.truncation.atomic.is_none() {
            c.err(
                "truncation",
                "micro couplings need the atomic realization numbers",
            );
        }
    }
    if let Some(CouplingConfig::Target {
        variant: VariantKind::Atomic,
        ..
    }) = cfg.couplings
    {
        if cfg.truncation.atomic.is_none() {
            c.err(
                "couplings.variant",
                "the atomic operator variant needs the atomic realization numbers",
            );
        }
    }
    if let Some(schedule) = &cfg.schedule {
        for (label, point) in [("initial", &schedule.initial), ("final", &schedule.final_)] {
            if let CouplingConfig::Target {
                variant: VariantKind::Atomic,
                ..
            } = point
            {
                if cfg.truncation.atomic.is_none() {
                    c.err(
                        &format!("schedule.{label}.variant"),
                        "the atomic operator variant needs the atomic realization numbers",
                    );
                }
            }
        }
    }
}

/// Validates a parsed JSON document and fills every default.
pub fn validate_value(root: &Value) -> Result<RunConfig, Vec<String>> {
    let mut c = Collector::default();
    let Some(map) = c.object(
        "config",
        root,
        &[
            "mode",
            "geometry",
            "truncation",
            "charges",
            "couplings",
            "schedule",
            "solver",
            "output_dir",
            "seed",
        ],
    ) else {
        return Err(c.errors);
    };

    let mode = match map.get("mode") {
        Some(v) => c.text("mode", v).and_then(|s| {
            Mode::parse(s).or_else(|| {
                let names: Vec<&str> = Mode::NAMES.iter().map(|(n, _)| *n).collect();
                c.err(
                    "mode",
                    format!("unknown mode {s:?} (expected one of: {})", names.join(", ")),
                );
                None
            })
        }),
        None => {
            c.missing("config", "mode");
            None
        }
    };
    let geometry = match map.get("geometry") {
        Some(v) => parse_geometry(&mut c, v),
        None => {
            c.missing("config", "geometry");
            None
        }
    };
    let truncation = match map.get("truncation") {
        Some(v) => parse_truncation(&mut c, v),
        None => {
            c.missing("config", "truncation");
            None
        }
    };
    let charges = match map.get("charges") {
        Some(v) => parse_charges(&mut c, v, geometry.as_ref()),
        None => Some(Vec::new()),
    };
    let couplings = match map.get("couplings") {
        Some(v) => parse_coupling(&mut c, "couplings", v).map(Some),
        None => Some(None),
    };
    let schedule = match map.get("schedule") {
        Some(v) => parse_schedule(&mut c, v).map(Some),
        None => Some(None),
    };
    let solver = match map.get("solver") {
        Some(v) => parse_solver(&mut c, v),
        None => Some(SolverConfig::default()),
    };
    let output_dir = match map.get("output_dir") {
        Some(v) => c.text("output_dir", v).and_then(|s| {
            if s.is_empty() {
                c.err("output_dir", "must not be empty");
                None
            } else {
                Some(s.to_string())
            }
        }),
        None => Some(DEFAULT_OUTPUT_DIR.to_string()),
    };
    let seed = match map.get("seed") {
        Some(v) => c.unsigned("seed", v),
        None => Some(0),
    };

    let (Some(mode), Some(geometry), Some(truncation), Some(charges), Some(couplings), Some(schedule), Some(solver), Some(output_dir), Some(seed)) =
        (mode, geometry, truncation, charges, couplings, schedule, solver, output_dir, seed)
    else {
        debug_assert!(!c.errors.is_empty(), "a missing part must leave an error");
        return Err(c.errors);
    };

    let cfg = RunConfig {
        mode,
        geometry,
        truncation,
        charges,
        couplings,
        schedule,
        solver,
        output_dir,
        seed,
    };
    check_mode_rules(&mut c, &cfg);
    if c.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(c.errors)
    }
}

/// Reads, parses, and validates a config file.
pub fn load(path: &Path) -> Result<RunConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| vec![format!("{}: not valid JSON: {e}", path.display())])?;
    validate_value(&value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal_ground() -> Value {
        json!({
            "mode": "ground",
            "geometry": { "lx": 2, "ly": 2 },
            "truncation": { "emax": 1, "qmax": 0 },
            "couplings": { "kind": "target", "g2": 1.0, "inv_g2": 2.0 }
        })
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = validate_value(&minimal_ground()).expect("valid");
        assert_eq!(cfg.mode, Mode::Ground);
        assert!(matches!(cfg.geometry.boundary, BoundaryKind::Open));
        assert_eq!(cfg.solver.tolerance, 1e-10);
        assert_eq!(cfg.solver.levels, 1);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.output_dir, DEFAULT_OUTPUT_DIR);
        match cfg.couplings {
            Some(CouplingConfig::Target { r, variant, .. }) => {
                assert_eq!(r, 0.0);
                assert_eq!(variant, VariantKind::Ideal);
            }
            other => panic!("unexpected couplings {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let mut v = minimal_ground();
        v["geometrie"] = json!({});
        v["geometry"]["depth"] = json!(3);
        v["solver"] = json!({ "tolerence": 1e-8 });
        let errors = validate_value(&v).expect_err("invalid");
        assert!(errors.iter().any(|e| e.contains("geometrie")));
        assert!(errors.iter().any(|e| e.contains("depth")));
        assert!(errors.iter().any(|e| e.contains("tolerence")));
    }

    #[test]
    fn errors_are_aggregated_not_first_only() {
        let v = json!({
            "mode": "nonsense",
            "truncation": { "emax": -1, "qmax": 0 },
            "charges": [ { "vertex": 0, "charge": 99 } ],
            "seed": -4
        });
        let errors = validate_value(&v).expect_err("invalid");
        // Missing geometry, bad mode, bad emax, bad charge, bad seed at least.
        assert!(errors.len() >= 5, "expected many errors, got {errors:?}");
        assert!(errors.iter().any(|e| e.contains("geometry")));
        assert!(errors.iter().any(|e| e.contains("mode")));
        assert!(errors.iter().any(|e| e.contains("emax")));
        assert!(errors.iter().any(|e| e.contains("charge")));
        assert!(errors.iter().any(|e| e.contains("seed")));
    }

    #[test]
    fn mode_block_rules_are_enforced() {
        // Quench without a schedule, with a stray coupling block.
        let v = json!({
            "mode": "quench",
            "geometry": { "lx": 3, "ly": 1 },
            "truncation": { "emax": 1, "qmax": 1 },
            "couplings": { "kind": "target", "g2": 1.0 }
        });
        let errors = validate_value(&v).expect_err("invalid");
        assert!(errors.iter().any(|e| e.contains("needs a schedule")));
        assert!(errors.iter().any(|e| e.contains("not used in mode")));
    }

    #[test]
    fn micro_couplings_need_atomic_numbers() {
        let v = json!({
            "mode": "ground",
            "geometry": { "lx": 2, "ly": 1 },
            "truncation": { "emax": 1, "qmax": 0 },
            "couplings": { "kind": "micro", "lambda": 1.0, "eps": 0.1 }
        });
        let errors = validate_value(&v).expect_err("invalid");
        assert!(errors.iter().any(|e| e.contains("atomic realization numbers")));
    }

    #[test]
    fn schedules_reject_micro_endpoints() {
        let v = json!({
            "mode": "quench",
            "geometry": { "lx": 3, "ly": 1 },
            "truncation": { "emax": 1, "qmax": 1 },
            "schedule": {
                "initial": { "kind": "micro", "lambda": 1.0, "eps": 0.1 },
                "final": { "kind": "target", "g2": 1.0 },
                "duration": 2.0
            }
        });
        let errors = validate_value(&v).expect_err("invalid");
        assert!(errors.iter().any(|e| e.contains("target parameterization")));
    }

    #[test]
    fn truncation_needs_exactly_one_of_emax_and_atomic() {
        let mut v = minimal_ground();
        v["truncation"] = json!({ "qmax": 0 });
        let errors = validate_value(&v).expect_err("invalid");
        assert!(errors.iter().any(|e| e.contains("either \"emax\"")));

        v["truncation"] = json!({ "emax": 1, "qmax": 0, "atomic": { "n0l": 2 } });
        let errors = validate_value(&v).expect_err("invalid");
        assert!(errors.iter().any(|e| e.contains("conflicts")));
    }

    #[test]
    fn normalized_config_round_trips_through_json() {
        let cfg = validate_value(&minimal_ground()).expect("valid");
        let echoed = serde_json::to_value(&cfg).expect("serialize");
        let again = validate_value(&echoed).expect("normalized form is itself valid");
        assert_eq!(
            serde_json::to_string(&again).expect("second"),
            serde_json::to_string(&cfg).expect("first"),
        );
    }
}
