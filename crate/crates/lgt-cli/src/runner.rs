//! Mode execution: materialize the configured system, run the computation,
//! and write the artifact set plus a manifest describing it.
//!
//! Artifacts are produced fully in memory first and only touch the
//! filesystem after the output-directory collision check, so a refused run
//! leaves nothing behind. Every CSV is RFC-4180 (CRLF line ends, UTF-8, `.`
//! decimal separator); every JSON report carries a schema tag.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use lgt_core::effective::{
    analytic_effective, compare_expansions, correction_budget, effective_expansion,
    spectrum_validate, DictionaryFit,
};
use lgt_core::hamiltonians::{
    assembly_warnings, build_gauge_matter, build_primitive, charge_zero_indices, derive_couplings,
    regime_classify, MicroCouplings, TargetCouplings,
};
use lgt_core::hilbert::{
    enumerate_fock, enumerate_sector, sector_feasible, AtomicNumbers, FockAux, FockMatter,
    FockSpec, GaugeBasis, StaticCharges, TruncationSpec,
};
use lgt_core::lattice::{Boundary, Direction, Lattice, LinkId, VertexId};
use lgt_core::observables::{
    charge_map, charge_pair_prob, electric_field_map, flux_profile, gauss_residual,
    plaquette_expectation, sample_indices, string_intact_prob, SiteDistributionMap, TimeSeries,
};
use lgt_core::operators::OperatorVariant;
use lgt_core::solvers::{
    default_dt, ground_states, run_schedule, CouplingPoint, EvolveOptions, RampMode, Schedule,
    State,
};
use lgt_core::Error;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{self, AtomicConfig, BoundaryKind, CouplingConfig, Mode, RunConfig, VariantKind};
use crate::CliError;

pub const REPORT_SCHEMA: &str = "lgt-report/1";
pub const MANIFEST_SCHEMA: &str = "lgt-manifest/1";
/// Most sample configurations listed by sector-info reports.
const SECTOR_SAMPLES: usize = 5;

/// Command-line-level knobs applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_override: Option<String>,
    pub seed_override: Option<u64>,
    /// Resolved worker-thread count (recorded in the manifest).
    pub threads: usize,
    pub dry_run: bool,
}

/// What `run` did, for the binary to narrate.
pub struct RunOutcome {
    pub lines: Vec<String>,
    /// Path of the written manifest; `None` for a dry run.
    pub manifest: Option<PathBuf>,
}

/// One output file, staged in memory until the collision check passes.
struct Artifact {
    name: &'static str,
    bytes: Vec<u8>,
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Loads and validates a config, returning the normalized form plus a
/// validation report (derived couplings echoed, regime warnings). Builds the
/// lattice and charge assignment to catch domain-level mistakes, but
/// enumerates nothing.
pub fn validate(config_path: &Path) -> Result<Value, CliError> {
    let cfg = config::load(config_path).map_err(CliError::Config)?;
    let m = materialize(&cfg)?;
    let mut warnings: Vec<String> = Vec::new();
    let derived = derived_couplings_json(&cfg, &mut warnings)?;
    let (feasible, reason) = sector_feasible(&m.lattice, &m.spec, &m.charges);
    if !feasible {
        warnings.push(format!("requested sector is infeasible: {reason}"));
    }
    Ok(json!({
        "schema": REPORT_SCHEMA,
        "kind": "validate",
        "normalized": serde_json::to_value(&cfg).map_err(|e| CliError::Io(e.to_string()))?,
        "derived_couplings": derived,
        "warnings": warnings,
    }))
}

/// Executes a run end to end. A dry run stops after validation and size
/// estimation and writes nothing.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let t_total = Instant::now();
    let mut cfg = config::load(config_path).map_err(CliError::Config)?;
    if let Some(out) = &opts.out_override {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    let ms_validate = ms_since(t_total);

    if opts.dry_run {
        return Ok(RunOutcome {
            lines: dry_run_lines(&cfg)?,
            manifest: None,
        });
    }

    let t_exec = Instant::now();
    let (artifacts, mut lines) = execute(&cfg)?;
    let ms_execute = ms_since(t_exec);

    let t_write = Instant::now();
    let out_dir = prepare_output_dir(&cfg.output_dir)?;
    for a in &artifacts {
        std::fs::write(out_dir.join(a.name), &a.bytes)?;
        lines.push(format!("wrote {} ({} bytes)", out_dir.join(a.name).display(), a.bytes.len()));
    }
    let manifest = manifest_json(
        &cfg,
        opts.threads,
        &artifacts,
        ms_validate,
        ms_execute,
        ms_since(t_write),
        ms_since(t_total),
    )?;
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, json_bytes(&manifest))?;
    lines.push(format!("manifest {}", manifest_path.display()));
    Ok(RunOutcome {
        lines,
        manifest: Some(manifest_path),
    })
}

// ---------------------------------------------------------------------------
// Materialization
// ---------------------------------------------------------------------------

struct Materialized {
    lattice: Arc<Lattice>,
    spec: TruncationSpec,
    charges: StaticCharges,
}

fn materialize(cfg: &RunConfig) -> Result<Materialized, CliError> {
    let boundary = match cfg.geometry.boundary {
        BoundaryKind::Open => Boundary::Open,
        BoundaryKind::Periodic => Boundary::Periodic,
    };
    let lattice = Arc::new(Lattice::build(cfg.geometry.lx, cfg.geometry.ly, boundary)?);
    let spec = match &cfg.truncation.atomic {
        Some(a) => TruncationSpec::atomic(
            AtomicNumbers {
                n0l: a.n0l,
                n0v: a.n0v,
                aux_cap: a.aux_cap,
            },
            cfg.truncation.qmax,
        )?,
        None => TruncationSpec::target(
            cfg.truncation.emax.expect("validation keeps emax for non-atomic runs"),
            cfg.truncation.qmax,
        )?,
    };
    let charges = if cfg.charges.is_empty() {
        StaticCharges::zero(&lattice)
    } else {
        let pairs: Vec<(VertexId, i32)> =
            cfg.charges.iter().map(|c| (c.vertex, c.charge)).collect();
        StaticCharges::from_pairs(&lattice, &pairs)?
    };
    Ok(Materialized {
        lattice,
        spec,
        charges,
    })
}

fn sector_basis(cfg: &RunConfig, m: &Materialized) -> Result<GaugeBasis, CliError> {
    let basis = enumerate_sector(
        &m.lattice,
        &m.spec,
        &m.charges,
        u128::from(cfg.solver.enum_cap),
    )?;
    if basis.dim() == 0 {
        let (_, reason) = sector_feasible(&m.lattice, &m.spec, &m.charges);
        let detail = if reason.is_empty() {
            "no configuration satisfies the local constraints at this truncation".to_string()
        } else {
            reason
        };
        return Err(CliError::Domain(Error::InfeasibleSector(detail)));
    }
    Ok(basis)
}

fn target_point(c: &CouplingConfig) -> (TargetCouplings, OperatorVariant) {
    match c {
        CouplingConfig::Target {
            g2,
            inv_g2,
            r,
            variant,
        } => (
            TargetCouplings {
                g2: *g2,
                inv_g2: *inv_g2,
                r: *r,
            },
            match variant {
                VariantKind::Ideal => OperatorVariant::Ideal,
                VariantKind::Atomic => OperatorVariant::Atomic,
            },
        ),
        CouplingConfig::Micro { .. } => unreachable!("validation rejects micro points here"),
    }
}

fn micro_point(c: &CouplingConfig) -> MicroCouplings {
    match c {
        CouplingConfig::Micro {
            lambda,
            eps,
            eps_p,
            mu,
            mu_p,
        } => MicroCouplings {
            lambda: *lambda,
            eps: *eps,
            eps_p: *eps_p,
            mu: *mu,
            mu_p: *mu_p,
        },
        CouplingConfig::Target { .. } => unreachable!("validation rejects target points here"),
    }
}

/// Unconstrained atom-occupancy basis for the microscopic modes. The
/// auxiliary species conserves one boson per vertex in total; matter sites
/// join only when both a baseline filling and a charge window are present.
fn fock_spec(atomic: &AtomicConfig, qmax: i32, vertex_count: usize) -> FockSpec {
    FockSpec {
        n0l: atomic.n0l,
        matter: (qmax > 0 && atomic.n0v > 0).then_some(FockMatter {
            n0v: atomic.n0v,
            qmax: qmax as u32,
            total: None,
        }),
        aux: (atomic.aux_cap > 0).then_some(FockAux {
            cap: atomic.aux_cap,
            total: Some(vertex_count as u32),
        }),
    }
}

// ---------------------------------------------------------------------------
// Mode dispatch
// ---------------------------------------------------------------------------

fn execute(cfg: &RunConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    match cfg.mode {
        Mode::SectorInfo => run_sector_info(cfg),
        Mode::Ground => run_ground(cfg),
        Mode::Quench => run_dynamics(cfg, RampMode::Hold),
        Mode::Adiabatic => run_dynamics(cfg, RampMode::Linear),
        Mode::EffectiveValidate => run_effective_validate(cfg),
        Mode::CorrectionBudget => run_correction_budget(cfg),
    }
}

// ---------------------------------------------------------------------------
// sector_info
// ---------------------------------------------------------------------------

fn run_sector_info(cfg: &RunConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let m = materialize(cfg)?;
    let (feasible_by_count, reason) = sector_feasible(&m.lattice, &m.spec, &m.charges);

    let mut report = Map::new();
    report.insert("schema".into(), json!(REPORT_SCHEMA));
    report.insert("kind".into(), json!("sector_info"));
    report.insert("lattice".into(), lattice_json(&m.lattice));

    let (dimension, feasible, why, samples, warnings) = if feasible_by_count {
        let basis = enumerate_sector(
            &m.lattice,
            &m.spec,
            &m.charges,
            u128::from(cfg.solver.enum_cap),
        )?;
        let dim = basis.dim();
        let why = if dim == 0 {
            "no configuration satisfies the local constraints at this truncation".to_string()
        } else {
            String::new()
        };
        (
            dim,
            dim > 0,
            why,
            sample_configs(&basis),
            assembly_warnings(&basis),
        )
    } else {
        (0, false, reason, Vec::new(), Vec::new())
    };

    report.insert("dimension".into(), json!(dimension));
    report.insert("feasible".into(), json!(feasible));
    if !why.is_empty() {
        report.insert("infeasible_reason".into(), json!(why));
    }
    report.insert("samples".into(), Value::Array(samples));
    report.insert("warnings".into(), json!(warnings));

    let lines = vec![format!(
        "sector dimension {dimension} ({})",
        if feasible { "feasible" } else { "infeasible" }
    )];
    Ok((
        vec![Artifact {
            name: "report.json",
            bytes: json_bytes(&Value::Object(report)),
        }],
        lines,
    ))
}

/// Up to [`SECTOR_SAMPLES`] evenly spaced basis configurations, for eyeballing
/// what the sector contains; deterministic by construction.
fn sample_configs(basis: &GaugeBasis) -> Vec<Value> {
    let dim = basis.dim();
    if dim == 0 {
        return Vec::new();
    }
    let n = SECTOR_SAMPLES.min(dim);
    let mut picked = BTreeSet::new();
    for k in 0..n {
        let idx = if n == 1 { 0 } else { k * (dim - 1) / (n - 1) };
        picked.insert(idx);
    }
    let lattice = basis.lattice();
    picked
        .into_iter()
        .map(|i| {
            let config = basis.config(i);
            let links: Vec<i8> = (0..lattice.link_count())
                .map(|l| basis.link_value(config, l))
                .collect();
            let charges: Vec<i8> = (0..lattice.vertex_count())
                .map(|v| basis.charge_value(config, v))
                .collect();
            json!({ "index": i, "links": links, "charges": charges })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// ground
// ---------------------------------------------------------------------------

fn run_ground(cfg: &RunConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let couplings = cfg.couplings.as_ref().expect("validation requires couplings");
    match couplings {
        CouplingConfig::Target { .. } => run_ground_target(cfg),
        CouplingConfig::Micro { .. } => run_ground_micro(cfg),
    }
}

fn run_ground_target(cfg: &RunConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let m = materialize(cfg)?;
    let basis = sector_basis(cfg, &m)?;
    let (tc, variant) = target_point(cfg.couplings.as_ref().expect("validated"));
    let h = build_gauge_matter(&basis, &tc, variant)?;

    // With R = 0 nothing couples different charge configurations and the
    // charge penalty is absent from the matrix, so an unrestricted solve
    // would happily fill the lattice with spurious free charges. Freeze the
    // matter by solving inside the zero-charge block.
    let freeze = tc.r == 0.0 && cfg.truncation.qmax > 0;
    let (spectrum, ground) = if freeze {
        let keep = charge_zero_indices(&basis);
        if keep.is_empty() {
            return Err(CliError::Domain(Error::InfeasibleSector(
                "the zero-dynamical-charge block is empty at this truncation".into(),
            )));
        }
        let sub_fp = basis.fingerprint() ^ 0xb10c;
        let sub = h.restrict(&keep, sub_fp)?;
        let k = cfg.solver.levels.min(keep.len());
        let report = ground_states(&sub, k, cfg.solver.tolerance)?;
        let ground = report.states()[0].embed(basis.dim(), &keep, basis.fingerprint())?;
        (report, ground)
    } else {
        let k = cfg.solver.levels.min(basis.dim());
        let report = ground_states(&h, k, cfg.solver.tolerance)?;
        let ground = report.states()[0].clone();
        (report, ground)
    };

    let mut report = Map::new();
    report.insert("schema".into(), json!(REPORT_SCHEMA));
    report.insert("kind".into(), json!("ground"));
    report.insert("lattice".into(), lattice_json(&m.lattice));
    report.insert("dimension".into(), json!(basis.dim()));
    report.insert("restricted_to_zero_charge".into(), json!(freeze));
    report.insert("energies".into(), json!(spectrum.energies()));
    report.insert("ground_energy".into(), json!(spectrum.ground_energy()));
    report.insert("matvecs".into(), json!(spectrum.matvecs));
    report.insert(
        "observables".into(),
        ground_observables(cfg, &m, &basis, &ground, variant)?,
    );
    report.insert("warnings".into(), json!(assembly_warnings(&basis)));

    let lines = vec![format!(
        "ground energy {} on a {}-dimensional sector",
        spectrum.ground_energy(),
        basis.dim()
    )];
    Ok((
        vec![
            Artifact {
                name: "spectrum.csv",
                bytes: spectrum_csv(&spectrum),
            },
            Artifact {
                name: "report.json",
                bytes: json_bytes(&Value::Object(report)),
            },
        ],
        lines,
    ))
}

fn run_ground_micro(cfg: &RunConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let m = materialize(cfg)?;
    let atomic = cfg.truncation.atomic.as_ref().expect("validated");
    let micro = micro_point(cfg.couplings.as_ref().expect("validated"));
    let spec = fock_spec(atomic, cfg.truncation.qmax, m.lattice.vertex_count());
    let basis = enumerate_fock(&m.lattice, &spec, u128::from(cfg.solver.enum_cap))?;
    if basis.dim() == 0 {
        return Err(CliError::Domain(Error::InfeasibleSector(
            "the atom-occupancy basis is empty at these filling numbers".into(),
        )));
    }
    let h = build_primitive(&basis, micro)?.total()?;
    let k = cfg.solver.levels.min(basis.dim());
    let spectrum = ground_states(&h, k, cfg.solver.tolerance)?;

    let mut warnings = Vec::new();
    let derived = derived_couplings_json(cfg, &mut warnings)?;

    let mut report = Map::new();
    report.insert("schema".into(), json!(REPORT_SCHEMA));
    report.insert("kind".into(), json!("ground"));
    report.insert("lattice".into(), lattice_json(&m.lattice));
    report.insert("dimension".into(), json!(basis.dim()));
    report.insert("energies".into(), json!(spectrum.energies()));
    report.insert("ground_energy".into(), json!(spectrum.ground_energy()));
    report.insert("matvecs".into(), json!(spectrum.matvecs));
    report.insert("derived_couplings".into(), derived);
    report.insert("warnings".into(), json!(warnings));

    let lines = vec![format!(
        "ground energy {} on a {}-dimensional occupancy basis",
        spectrum.ground_energy(),
        basis.dim()
    )];
    Ok((
        vec![
            Artifact {
                name: "spectrum.csv",
                bytes: spectrum_csv(&spectrum),
            },
            Artifact {
                name: "report.json",
                bytes: json_bytes(&Value::Object(report)),
            },
        ],
        lines,
    ))
}

fn ground_observables(
    cfg: &RunConfig,
    m: &Materialized,
    basis: &GaugeBasis,
    state: &State,
    variant: OperatorVariant,
) -> Result<Value, CliError> {
    let mut obs = Map::new();
    obs.insert("electric_field".into(), site_map_json(&electric_field_map(state, basis)?));
    obs.insert("charge".into(), site_map_json(&charge_map(state, basis)?));
    obs.insert("gauss_residual".into(), json!(gauss_residual(state, basis)?));
    if m.lattice.plaquette_count() > 0 {
        obs.insert(
            "plaquette".into(),
            json!(plaquette_expectation(state, basis, variant)?),
        );
    }
    if let Some(probe) = StringProbe::detect(cfg, &m.lattice) {
        obs.insert("flux_path_links".into(), json!(probe.path));
        obs.insert(
            "flux_profile".into(),
            json!(flux_profile(state, basis, &probe.path)?),
        );
        if probe.oriented {
            obs.insert(
                "string_prob".into(),
                json!(string_intact_prob(state, basis, &probe.path)?),
            );
        }
        if cfg.truncation.qmax > 0 {
            obs.insert(
                "charge_pair_prob".into(),
                json!(charge_pair_prob(state, basis, probe.from, probe.to)?),
            );
        }
    }
    obs.insert(
        "sampled_indices".into(),
        json!(sample_indices(state, SECTOR_SAMPLES, cfg.seed)),
    );
    Ok(Value::Object(obs))
}

// ---------------------------------------------------------------------------
// quench / adiabatic
// ---------------------------------------------------------------------------

/// A straight line of links between two oppositely charged static vertices;
/// the natural probe set for string observables.
struct StringProbe {
    /// Vertex holding the positive charge.
    from: VertexId,
    /// Vertex holding the negative charge.
    to: VertexId,
    path: Vec<LinkId>,
    /// True when every path link points from `from` towards `to`, so an
    /// intact string means `m = +1` on each link and the intact-string
    /// probability is meaningful as-is.
    oriented: bool,
}

impl StringProbe {
    fn detect(cfg: &RunConfig, lattice: &Lattice) -> Option<StringProbe> {
        if cfg.charges.len() != 2 {
            return None;
        }
        let (a, b) = (&cfg.charges[0], &cfg.charges[1]);
        if a.charge == 0 || b.charge != -a.charge {
            return None;
        }
        let (from, to) = if a.charge > 0 {
            (a.vertex, b.vertex)
        } else {
            (b.vertex, a.vertex)
        };
        let (x0, y0) = lattice.coords(from);
        let (x1, y1) = lattice.coords(to);
        if x0 != x1 && y0 != y1 {
            return None;
        }
        // Walk in the +x/+y direction from the lower coordinate; links are
        // oriented the same way, so the walk is "oriented" exactly when it
        // starts at the positive charge.
        let (dir, lo, hi, fixed_is_y) = if y0 == y1 {
            (Direction::X, x0.min(x1), x0.max(x1), true)
        } else {
            (Direction::Y, y0.min(y1), y0.max(y1), false)
        };
        let mut path = Vec::new();
        for c in lo..hi {
            let v = if fixed_is_y {
                lattice.vertex_id(c, y0).ok()?
            } else {
                lattice.vertex_id(x0, c).ok()?
            };
            path.push(lattice.link_from(v, dir)?);
        }
        if path.is_empty() {
            return None;
        }
        let oriented = if fixed_is_y { x0 <= x1 } else { y0 <= y1 };
        Some(StringProbe {
            from,
            to,
            path,
            oriented,
        })
    }
}

fn run_dynamics(cfg: &RunConfig, ramp: RampMode) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let m = materialize(cfg)?;
    let basis = sector_basis(cfg, &m)?;
    let sched = cfg.schedule.as_ref().expect("validation requires a schedule");
    let (tc_init, variant) = target_point(&sched.initial);
    let (tc_final, _) = target_point(&sched.final_);

    // Initial state: ground state at the initial couplings, restricted to
    // the zero-charge block when R = 0 leaves the matter decoupled.
    let h_init = build_gauge_matter(&basis, &tc_init, variant)?;
    let psi0 = if tc_init.r == 0.0 && cfg.truncation.qmax > 0 {
        let keep = charge_zero_indices(&basis);
        if keep.is_empty() {
            return Err(CliError::Domain(Error::InfeasibleSector(
                "the zero-dynamical-charge block is empty at this truncation".into(),
            )));
        }
        let sub = h_init.restrict(&keep, basis.fingerprint() ^ 0xb10c)?;
        let report = ground_states(&sub, 1, cfg.solver.tolerance)?;
        report.states()[0].embed(basis.dim(), &keep, basis.fingerprint())?
    } else {
        ground_states(&h_init, 1, cfg.solver.tolerance)?.states()[0].clone()
    };

    let schedule = match ramp {
        RampMode::Hold => Schedule::quench(
            CouplingPoint::Target(tc_init),
            CouplingPoint::Target(tc_final),
            sched.duration,
        )?,
        RampMode::Linear => Schedule::new(
            vec![
                (0.0, CouplingPoint::Target(tc_init)),
                (sched.duration, CouplingPoint::Target(tc_final)),
            ],
            vec![RampMode::Linear],
        )?,
    };

    let h_final = build_gauge_matter(&basis, &tc_final, variant)?;
    let dt = cfg.solver.dt.unwrap_or_else(|| default_dt(&h_final));
    let opts = EvolveOptions {
        step_tol: cfg.solver.step_tolerance,
        ..EvolveOptions::default()
    };

    let probe = StringProbe::detect(cfg, &m.lattice);
    let mut names: Vec<&str> = vec!["energy", "gauss_residual"];
    let track_string = probe.as_ref().is_some_and(|p| p.oriented);
    let track_pair = probe.is_some() && cfg.truncation.qmax > 0;
    if track_string {
        names.push("string_prob");
    }
    if track_pair {
        names.push("charge_pair_prob");
    }
    let mut series = TimeSeries::new(&names).map_err(CliError::Domain)?;
    series.metadata.insert("schema".into(), "lgt-series/1".into());
    series.metadata.insert("mode".into(), cfg.mode.as_str().into());
    series.metadata.insert("dt".into(), format!("{dt}"));
    series
        .metadata
        .insert("duration".into(), format!("{}", sched.duration));

    let kind = cfg.mode.as_str();
    let mut row = Vec::with_capacity(names.len());
    let log = {
        let series = &mut series;
        let schedule_ref = &schedule;
        run_schedule(
            &schedule,
            |cp| match cp {
                CouplingPoint::Target(tc) => build_gauge_matter(&basis, tc, variant),
                CouplingPoint::Micro { .. } => Err(Error::invalid(
                    "dynamics schedules carry target couplings only",
                )),
            },
            &psi0,
            dt,
            &opts,
            |t, psi| {
                row.clear();
                let energy = if ramp == RampMode::Hold {
                    psi.expectation(&h_final)?.re
                } else {
                    let cp = schedule_ref.couplings_at(t)?;
                    let CouplingPoint::Target(tc) = cp else {
                        return Err(Error::invalid("schedule produced a non-target point"));
                    };
                    let h_t = build_gauge_matter(&basis, &tc, variant)?;
                    psi.expectation(&h_t)?.re
                };
                row.push(energy);
                row.push(gauss_residual(psi, &basis)?);
                if track_string {
                    let p = probe.as_ref().expect("track_string implies probe");
                    row.push(string_intact_prob(psi, &basis, &p.path)?);
                }
                if track_pair {
                    let p = probe.as_ref().expect("track_pair implies probe");
                    row.push(charge_pair_prob(psi, &basis, p.from, p.to)?);
                }
                series.push(t, &row)
            },
        )?
    };

    let final_state = &log.final_state;
    let mut report = Map::new();
    report.insert("schema".into(), json!(REPORT_SCHEMA));
    report.insert("kind".into(), json!(kind));
    report.insert("lattice".into(), lattice_json(&m.lattice));
    report.insert("dimension".into(), json!(basis.dim()));
    report.insert("dt".into(), json!(dt));
    report.insert("duration".into(), json!(sched.duration));
    report.insert("steps".into(), json!(series.len().saturating_sub(1)));
    report.insert("max_norm_drift".into(), json!(log.max_norm_drift));
    report.insert("matvecs".into(), json!(log.matvecs));
    report.insert(
        "final".into(),
        dynamics_final_json(cfg, &m, &basis, final_state, variant, probe.as_ref(), &series)?,
    );
    report.insert("warnings".into(), json!(assembly_warnings(&basis)));

    let lines = vec![format!(
        "{kind} over t ∈ [0, {}] in {} steps on a {}-dimensional sector",
        sched.duration,
        series.len().saturating_sub(1),
        basis.dim()
    )];
    Ok((
        vec![
            Artifact {
                name: "series.csv",
                bytes: crlf(&series.to_csv()),
            },
            Artifact {
                name: "series.json",
                bytes: {
                    let mut s = series.to_json().map_err(CliError::Domain)?;
                    s.push('\n');
                    s.into_bytes()
                },
            },
            Artifact {
                name: "report.json",
                bytes: json_bytes(&Value::Object(report)),
            },
        ],
        lines,
    ))
}

fn dynamics_final_json(
    cfg: &RunConfig,
    m: &Materialized,
    basis: &GaugeBasis,
    state: &State,
    variant: OperatorVariant,
    probe: Option<&StringProbe>,
    series: &TimeSeries,
) -> Result<Value, CliError> {
    let mut out = Map::new();
    out.insert("electric_field".into(), site_map_json(&electric_field_map(state, basis)?));
    out.insert("charge".into(), site_map_json(&charge_map(state, basis)?));
    out.insert("gauss_residual".into(), json!(gauss_residual(state, basis)?));
    if m.lattice.plaquette_count() > 0 {
        out.insert(
            "plaquette".into(),
            json!(plaquette_expectation(state, basis, variant)?),
        );
    }
    if let Some(p) = probe {
        out.insert("flux_path_links".into(), json!(p.path));
        out.insert("flux_profile".into(), json!(flux_profile(state, basis, &p.path)?));
    }
    for name in series.channel_names() {
        if let Some(values) = series.channel(name) {
            if let Some(last) = values.last() {
                out.insert(format!("last_{name}"), json!(last));
            }
        }
    }
    out.insert(
        "sampled_indices".into(),
        json!(sample_indices(state, SECTOR_SAMPLES, cfg.seed)),
    );
    Ok(Value::Object(out))
}

// ---------------------------------------------------------------------------
// effective_validate
// ---------------------------------------------------------------------------

fn run_effective_validate(cfg: &RunConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let m = materialize(cfg)?;
    let atomic = cfg.truncation.atomic.as_ref().expect("validated");
    let micro = micro_point(cfg.couplings.as_ref().expect("validated"));
    let spec = fock_spec(atomic, cfg.truncation.qmax, m.lattice.vertex_count());
    let basis = enumerate_fock(&m.lattice, &spec, u128::from(cfg.solver.enum_cap))?;
    if basis.dim() == 0 {
        return Err(CliError::Domain(Error::InfeasibleSector(
            "the atom-occupancy basis is empty at these filling numbers".into(),
        )));
    }

    let parts = build_primitive(&basis, micro)?;
    let orders = effective_expansion(&basis, &parts, cfg.solver.max_order)?;
    let catalog = analytic_effective(&basis, &orders.block, &micro, cfg.solver.max_order)?;
    let comparison = compare_expansions(&basis, &orders, &catalog)?;

    let h = parts.total()?;
    let spectra = spectrum_validate(
        &h,
        &orders.total(),
        None,
        cfg.solver.gaps,
        cfg.solver.tolerance,
    )?;

    let mut warnings = orders.warnings.clone();
    let derived = derived_couplings_json(cfg, &mut warnings)?;

    let mut order_rows = Vec::new();
    let mut csv = String::from(
        "order,frobenius_diff,max_abs_diff,traceless_diff,identity_offset,\
         reference_norm,printed_ratio,fitted_ratio,physical_fitted_ratio\r\n",
    );
    for oc in &comparison.orders {
        let physical_ratio = oc
            .physical
            .as_ref()
            .map(|f| f.residual_ratio)
            .unwrap_or(f64::NAN);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\r\n",
            oc.order,
            oc.frobenius_diff,
            oc.max_abs_diff,
            oc.traceless_diff,
            oc.identity_offset,
            oc.reference_norm,
            oc.printed_ratio,
            oc.fitted_ratio,
            physical_ratio,
        ));
        let mut row = Map::new();
        row.insert("order".into(), json!(oc.order));
        row.insert("frobenius_diff".into(), json!(oc.frobenius_diff));
        row.insert("max_abs_diff".into(), json!(oc.max_abs_diff));
        row.insert("traceless_diff".into(), json!(oc.traceless_diff));
        row.insert("identity_offset".into(), json!(oc.identity_offset));
        row.insert("reference_norm".into(), json!(oc.reference_norm));
        row.insert("printed_ratio".into(), json!(oc.printed_ratio));
        row.insert("fitted_ratio".into(), json!(oc.fitted_ratio));
        row.insert("fit".into(), fit_json(&oc.fit));
        row.insert(
            "physical_fit".into(),
            oc.physical.as_ref().map(fit_json).unwrap_or(Value::Null),
        );
        order_rows.push(Value::Object(row));
    }

    let catalog_rows: Vec<Value> = catalog
        .iter()
        .map(|t| json!({ "label": t.label, "order": t.order, "coefficient": t.coefficient }))
        .collect();

    let mut report = Map::new();
    report.insert("schema".into(), json!(REPORT_SCHEMA));
    report.insert("kind".into(), json!("effective_validate"));
    report.insert("lattice".into(), lattice_json(&m.lattice));
    report.insert("basis_dimension".into(), json!(basis.dim()));
    report.insert("block_dimension".into(), json!(orders.block.len()));
    report.insert("physical_sector_dimension".into(), json!(comparison.sector_dim));
    report.insert("max_order".into(), json!(cfg.solver.max_order));
    report.insert("gap_ratio".into(), json!(orders.gap_ratio));
    report.insert("orders".into(), Value::Array(order_rows));
    report.insert("catalog".into(), Value::Array(catalog_rows));
    report.insert(
        "spectrum".into(),
        json!({
            "primitive_energies": spectra.primitive_energies,
            "effective_energies": spectra.effective_energies,
            "gap_errors": spectra.gap_errors,
            "max_gap_error": spectra.max_gap_error,
            "matvecs": spectra.matvecs,
        }),
    );
    report.insert("derived_couplings".into(), derived);
    report.insert("warnings".into(), json!(warnings));

    let worst = comparison
        .orders
        .iter()
        .map(|o| o.fitted_ratio)
        .fold(0.0f64, f64::max);
    let lines = vec![format!(
        "checked orders 1..={} on a {}-state block: worst fitted ratio {worst:.3e}, \
         worst gap error {:.3e}",
        cfg.solver.max_order,
        orders.block.len(),
        spectra.max_gap_error
    )];
    Ok((
        vec![
            Artifact {
                name: "orders.csv",
                bytes: csv.into_bytes(),
            },
            Artifact {
                name: "report.json",
                bytes: json_bytes(&Value::Object(report)),
            },
        ],
        lines,
    ))
}

fn fit_json(fit: &DictionaryFit) -> Value {
    json!({
        "coefficients": fit.coefficients,
        "aliased": fit.aliased,
        "residual": fit.residual,
        "residual_ratio": fit.residual_ratio,
    })
}

// ---------------------------------------------------------------------------
// correction_budget
// ---------------------------------------------------------------------------

fn run_correction_budget(cfg: &RunConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let m = materialize(cfg)?;
    let _ = &m; // geometry is validated but the budget itself is local
    let atomic = cfg.truncation.atomic.as_ref().expect("validated");
    let (g, r) = match cfg.couplings.as_ref().expect("validated") {
        CouplingConfig::Target { g2, r, .. } => (g2.sqrt(), *r),
        c @ CouplingConfig::Micro { .. } => {
            let derived = derive_couplings(&micro_point(c), atomic.n0l)?;
            (derived.g, derived.r)
        }
    };
    let budget = correction_budget(g, r, atomic.n0l)?;

    let mut csv = String::from("label,relative_weight\r\n");
    for row in &budget.rows {
        csv.push_str(&format!("{},{}\r\n", row.label, row.relative_weight));
    }

    let rows: Vec<Value> = budget
        .rows
        .iter()
        .map(|r| json!({ "label": r.label, "relative_weight": r.relative_weight }))
        .collect();
    let mut report = Map::new();
    report.insert("schema".into(), json!(REPORT_SCHEMA));
    report.insert("kind".into(), json!("correction_budget"));
    report.insert("g".into(), json!(g));
    report.insert("r".into(), json!(r));
    report.insert("n0l".into(), json!(atomic.n0l));
    report.insert("eps_over_lambda".into(), json!(budget.eps_over_lambda));
    report.insert("eps_p_over_eps".into(), json!(budget.eps_p_over_eps));
    report.insert("rows".into(), Value::Array(rows));
    report.insert("warnings".into(), json!(budget.warnings));

    let worst = budget
        .rows
        .iter()
        .map(|r| r.relative_weight)
        .fold(0.0f64, f64::max);
    let lines = vec![format!(
        "budgeted {} correction families at g = {g:.6}; largest relative weight {worst:.3e}",
        budget.rows.len()
    )];
    Ok((
        vec![
            Artifact {
                name: "budget.csv",
                bytes: csv.into_bytes(),
            },
            Artifact {
                name: "report.json",
                bytes: json_bytes(&Value::Object(report)),
            },
        ],
        lines,
    ))
}

// ---------------------------------------------------------------------------
// Dry run
// ---------------------------------------------------------------------------

fn dry_run_lines(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let m = materialize(cfg)?;
    let mut lines = Vec::new();
    lines.push(format!("mode {}", cfg.mode.as_str()));
    lines.push(format!(
        "lattice {}×{} ({:?}): {} vertices, {} links, {} plaquettes",
        m.lattice.lx(),
        m.lattice.ly(),
        m.lattice.boundary(),
        m.lattice.vertex_count(),
        m.lattice.link_count(),
        m.lattice.plaquette_count()
    ));
    let (feasible, reason) = sector_feasible(&m.lattice, &m.spec, &m.charges);
    let bound = product_space_bound(&m.lattice, &m.spec);
    lines.push(format!(
        "product-space bound {bound} against enumeration cap {}{}",
        cfg.solver.enum_cap,
        if bound > u128::from(cfg.solver.enum_cap) {
            " — enumeration would be refused"
        } else {
            ""
        }
    ));
    if feasible {
        lines.push("charge counting: feasible".into());
    } else {
        lines.push(format!("charge counting: infeasible ({reason})"));
    }
    lines.push("dry run: nothing written".into());
    Ok(lines)
}

/// Loose upper bound on the unconstrained link ⊗ charge product space; the
/// constrained enumeration only ever visits a subset.
fn product_space_bound(lattice: &Lattice, spec: &TruncationSpec) -> u128 {
    let per_link = 2 * spec.emax.unsigned_abs() as u128 + 1;
    let per_vertex = 2 * spec.qmax.unsigned_abs() as u128 + 1;
    let mut bound: u128 = 1;
    for _ in 0..lattice.link_count() {
        bound = bound.saturating_mul(per_link);
    }
    for _ in 0..lattice.vertex_count() {
        bound = bound.saturating_mul(per_vertex);
    }
    bound
}

// ---------------------------------------------------------------------------
// Shared JSON / CSV / hashing helpers
// ---------------------------------------------------------------------------

fn lattice_json(lattice: &Lattice) -> Value {
    json!({
        "lx": lattice.lx(),
        "ly": lattice.ly(),
        "boundary": match lattice.boundary() {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        },
        "vertices": lattice.vertex_count(),
        "links": lattice.link_count(),
        "plaquettes": lattice.plaquette_count(),
    })
}

fn site_map_json(map: &SiteDistributionMap) -> Value {
    let distribution: Vec<Value> = map
        .distribution
        .iter()
        .map(|d| {
            Value::Object(
                d.iter()
                    .map(|(value, prob)| (value.to_string(), json!(prob)))
                    .collect(),
            )
        })
        .collect();
    json!({ "expectation": map.expectation, "distribution": distribution })
}

/// Derived-coupling echo for microscopic runs: the dictionary output plus a
/// regime classification, or `null` where the dictionary does not apply.
fn derived_couplings_json(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Value, CliError> {
    let Some(c @ CouplingConfig::Micro { .. }) = &cfg.couplings else {
        return Ok(Value::Null);
    };
    let micro = micro_point(c);
    let Some(atomic) = &cfg.truncation.atomic else {
        return Ok(Value::Null);
    };
    if !(micro.eps > 0.0) || micro.mu != 0.0 {
        warnings.push(
            "no derived couplings: the dictionary needs ε > 0 and μ = 0".into(),
        );
        return Ok(Value::Null);
    }
    let derived = derive_couplings(&micro, atomic.n0l)?;
    let regime = regime_classify(micro.lambda, micro.eps, atomic.n0l)?;
    if !regime.perturbation_valid {
        warnings.push(format!(
            "perturbative expansion unreliable: (λ/ε)² margin {:.3} below 1",
            regime.margin_expansion
        ));
    }
    Ok(json!({
        "g": derived.g,
        "alpha": derived.alpha,
        "r": derived.r,
        "regime": regime,
    }))
}

fn spectrum_csv(report: &lgt_core::solvers::SpectrumReport) -> Vec<u8> {
    let mut csv = String::from("level,energy,cluster,residual\r\n");
    let mut level = 0usize;
    for (ci, cluster) in report.clusters.iter().enumerate() {
        for (e, res) in cluster.energies.iter().zip(&cluster.residuals) {
            csv.push_str(&format!("{level},{e},{ci},{res}\r\n"));
            level += 1;
        }
    }
    csv.into_bytes()
}

/// Pretty JSON with a trailing newline; keys are sorted by the underlying
/// map, so the bytes are a pure function of the value.
fn json_bytes(value: &Value) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    text.into_bytes()
}

/// LF → CRLF, for CSV produced by the measurement layer.
fn crlf(text: &str) -> Vec<u8> {
    text.replace('\n', "\r\n").into_bytes()
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn ms_since(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e3 * 1e3).round() / 1e3
}

fn prepare_output_dir(dir: &str) -> Result<PathBuf, CliError> {
    let out = PathBuf::from(dir);
    if out.exists() {
        if !out.is_dir() {
            return Err(CliError::OutputCollision(format!(
                "output path {} exists and is not a directory",
                out.display()
            )));
        }
        let occupied = std::fs::read_dir(&out)?.next().is_some();
        if occupied {
            return Err(CliError::OutputCollision(format!(
                "output directory {} is not empty; refusing to mix runs — pick a fresh directory",
                out.display()
            )));
        }
    } else {
        std::fs::create_dir_all(&out)?;
    }
    Ok(out)
}

fn manifest_json(
    cfg: &RunConfig,
    threads: usize,
    artifacts: &[Artifact],
    ms_validate: f64,
    ms_execute: f64,
    ms_write: f64,
    ms_total: f64,
) -> Result<Value, CliError> {
    let config_value = serde_json::to_value(cfg).map_err(|e| CliError::Io(e.to_string()))?;
    let compact = serde_json::to_string(&config_value).map_err(|e| CliError::Io(e.to_string()))?;
    let listed: Vec<Value> = artifacts
        .iter()
        .map(|a| {
            json!({
                "name": a.name,
                "sha256": sha256_hex(&a.bytes),
                "bytes": a.bytes.len(),
            })
        })
        .collect();
    Ok(json!({
        "schema": MANIFEST_SCHEMA,
        "mode": cfg.mode.as_str(),
        "config": config_value,
        "config_sha256": sha256_hex(compact.as_bytes()),
        "seed": cfg.seed,
        "threads": threads,
        "versions": {
            "lgt-core": lgt_core::VERSION,
            "lgt-cli": env!("CARGO_PKG_VERSION"),
        },
        "timings_ms": {
            "validate": ms_validate,
            "execute": ms_execute,
            "write": ms_write,
            "total": ms_total,
        },
        "artifacts": listed,
    }))
}
