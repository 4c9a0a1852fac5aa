//! Measurement layer: field/charge maps, string diagnostics, plaquette
//! expectation, Gauss-law residuals, configuration sampling, and a
//! deterministic time-series container with stable CSV/JSON output.
//!
//! All diagonal observables are evaluated directly on the configuration
//! labels (no operator assembly), so probabilities are exact sums of
//! `|ψ_i|²` and distributions add up to one at machine precision.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::GaugeBasis;
use crate::lattice::{LinkId, VertexId};
use crate::operators::{plaquette_op, OperatorVariant};
use crate::solvers::State;

fn check_state(state: &State, basis: &GaugeBasis) -> Result<()> {
    if state.basis_fingerprint() != basis.fingerprint() || state.dim() != basis.dim() {
        return Err(Error::invalid(
            "state does not live on the given sector basis",
        ));
    }
    Ok(())
}

/// Validates mixture weights: non-negative, summing to one within 1e−9.
fn check_weights(ensemble: &[(f64, &State)], basis: &GaugeBasis) -> Result<()> {
    if ensemble.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    let mut total = 0.0;
    for (w, state) in ensemble {
        if !(*w >= 0.0) {
            return Err(Error::invalid("mixture weights must be non-negative"));
        }
        total += w;
        check_state(state, basis)?;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "mixture weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Per-site expectation values plus full value distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteDistributionMap {
    /// `⟨value⟩` per site (links or vertices, depending on the producer).
    pub expectation: Vec<f64>,
    /// Probability of each integer value per site; each map sums to one.
    pub distribution: Vec<BTreeMap<i32, f64>>,
}

/// Electric field per link: expectation and label distribution of `E`.
pub fn electric_field_map(state: &State, basis: &GaugeBasis) -> Result<SiteDistributionMap> {
    electric_field_map_mixture(&[(1.0, state)], basis)
}

/// Mixture variant of [`electric_field_map`]; distributions combine linearly
/// with the mixture weights.
pub fn electric_field_map_mixture(
    ensemble: &[(f64, &State)],
    basis: &GaugeBasis,
) -> Result<SiteDistributionMap> {
    check_weights(ensemble, basis)?;
    let n = basis.lattice().link_count();
    Ok(site_map(ensemble, n, |config, l| {
        i32::from(basis.link_value(config, l))
    }, basis))
}

/// Dynamical charge per vertex: expectation and distribution of `Q`.
pub fn charge_map(state: &State, basis: &GaugeBasis) -> Result<SiteDistributionMap> {
    charge_map_mixture(&[(1.0, state)], basis)
}

pub fn charge_map_mixture(
    ensemble: &[(f64, &State)],
    basis: &GaugeBasis,
) -> Result<SiteDistributionMap> {
    check_weights(ensemble, basis)?;
    let n = basis.lattice().vertex_count();
    Ok(site_map(ensemble, n, |config, v| {
        i32::from(basis.charge_value(config, v))
    }, basis))
}

fn site_map<F>(
    ensemble: &[(f64, &State)],
    n_sites: usize,
    value: F,
    basis: &GaugeBasis,
) -> SiteDistributionMap
where
    F: Fn(&[i8], usize) -> i32,
{
    let mut expectation = vec![0.0; n_sites];
    let mut distribution: Vec<BTreeMap<i32, f64>> = vec![BTreeMap::new(); n_sites];
    for (w, state) in ensemble {
        for (i, amp) in state.amplitudes().iter().enumerate() {
            let p = w * amp.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let config = basis.config(i);
            for site in 0..n_sites {
                let v = value(config, site);
                expectation[site] += p * f64::from(v);
                *distribution[site].entry(v).or_insert(0.0) += p;
            }
        }
    }
    SiteDistributionMap {
        expectation,
        distribution,
    }
}

/// Worst-vertex Gauss-law violation `max_n ‖G_n ψ‖` (the generator is
/// diagonal on the configuration basis, so this is exact).
pub fn gauss_residual(state: &State, basis: &GaugeBasis) -> Result<f64> {
    check_state(state, basis)?;
    let nv = basis.lattice().vertex_count();
    let mut worst = 0.0f64;
    for v in 0..nv {
        let mut acc = 0.0;
        for (i, amp) in state.amplitudes().iter().enumerate() {
            let r = basis.gauss_residual_int(basis.config(i), v);
            if r != 0 {
                acc += amp.norm_sqr() * f64::from(r * r);
            }
        }
        worst = worst.max(acc.sqrt());
    }
    Ok(worst)
}

/// Probability that every listed link carries field value `+1` (a flux
/// string laid along the links' own orientation).
pub fn string_intact_prob(state: &State, basis: &GaugeBasis, path: &[LinkId]) -> Result<f64> {
    check_state(state, basis)?;
    if path.is_empty() {
        return Err(Error::invalid("empty string path"));
    }
    for &l in path {
        if l >= basis.lattice().link_count() {
            return Err(Error::invalid(format!("unknown link {l} in string path")));
        }
    }
    let mut p = 0.0;
    for (i, amp) in state.amplitudes().iter().enumerate() {
        let config = basis.config(i);
        if path.iter().all(|&l| basis.link_value(config, l) == 1) {
            p += amp.norm_sqr();
        }
    }
    Ok(p)
}

/// Probability that both vertices hold a non-zero dynamical charge (a
/// particle–antiparticle pair after string breaking).
pub fn charge_pair_prob(
    state: &State,
    basis: &GaugeBasis,
    a: VertexId,
    b: VertexId,
) -> Result<f64> {
    check_state(state, basis)?;
    let nv = basis.lattice().vertex_count();
    if a >= nv || b >= nv {
        return Err(Error::invalid("pair vertex outside the lattice"));
    }
    if a == b {
        return Err(Error::invalid("pair vertices must differ"));
    }
    let mut p = 0.0;
    for (i, amp) in state.amplitudes().iter().enumerate() {
        let config = basis.config(i);
        if basis.charge_value(config, a) != 0 && basis.charge_value(config, b) != 0 {
            p += amp.norm_sqr();
        }
    }
    Ok(p)
}

/// Electric-field expectation along an ordered list of links.
pub fn flux_profile(state: &State, basis: &GaugeBasis, path: &[LinkId]) -> Result<Vec<f64>> {
    check_state(state, basis)?;
    let mut profile = vec![0.0; path.len()];
    for &l in path {
        if l >= basis.lattice().link_count() {
            return Err(Error::invalid(format!("unknown link {l} in flux path")));
        }
    }
    for (i, amp) in state.amplitudes().iter().enumerate() {
        let p = amp.norm_sqr();
        if p == 0.0 {
            continue;
        }
        let config = basis.config(i);
        for (slot, &l) in path.iter().enumerate() {
            profile[slot] += p * f64::from(basis.link_value(config, l));
        }
    }
    Ok(profile)
}

/// Lattice-averaged `⟨P + P†⟩/2` (equivalently `Re⟨P⟩` averaged over
/// plaquettes); lies in `[−1, 1]`.
pub fn plaquette_expectation(
    state: &State,
    basis: &GaugeBasis,
    variant: OperatorVariant,
) -> Result<f64> {
    check_state(state, basis)?;
    let np = basis.lattice().plaquette_count();
    if np == 0 {
        return Err(Error::invalid(
            "plaquette expectation needs a lattice with plaquettes",
        ));
    }
    let mut acc = 0.0;
    for p in 0..np {
        let op = plaquette_op(basis, p, variant)?;
        acc += state.expectation(&op)?.re;
    }
    Ok(acc / np as f64)
}

/// Draws `n` basis-configuration indices from `|ψ|²` with a seeded generator
/// (identical seed ⇒ identical draw sequence).
pub fn sample_indices(state: &State, n: usize, seed: u64) -> Vec<usize> {
    let weights: Vec<f64> = state.amplitudes().iter().map(|a| a.norm_sqr()).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            cumulative.partition_point(|&c| c < u).min(weights.len() - 1)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Time series
// ---------------------------------------------------------------------------

/// A shared, strictly increasing time grid with named scalar channels and
/// free-form metadata. Serialization is byte-stable: identical content
/// produces identical CSV and JSON.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    names: Vec<String>,
    channels: Vec<Vec<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeries {
    pub fn new(channel_names: &[&str]) -> Result<Self> {
        if channel_names.is_empty() {
            return Err(Error::invalid("a time series needs at least one channel"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in channel_names {
            if name.is_empty() || name.contains(',') || name.contains('\n') {
                return Err(Error::invalid(format!("invalid channel name {name:?}")));
            }
            if !seen.insert(*name) {
                return Err(Error::invalid(format!("duplicate channel name {name:?}")));
            }
        }
        Ok(TimeSeries {
            times: Vec::new(),
            names: channel_names.iter().map(|s| s.to_string()).collect(),
            channels: vec![Vec::new(); channel_names.len()],
            metadata: BTreeMap::new(),
        })
    }

    /// Appends one sample row; `values` must match the channel count and `t`
    /// must exceed the last grid point.
    pub fn push(&mut self, t: f64, values: &[f64]) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::invalid(format!(
                "expected {} channel values, got {}",
                self.names.len(),
                values.len()
            )));
        }
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::invalid(format!(
                    "time grid must strictly increase ({t} after {last})"
                )));
            }
        }
        if !t.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample in time series"));
        }
        self.times.push(t);
        for (channel, &v) in self.channels.iter_mut().zip(values) {
            channel.push(v);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.names.iter().map(|s| s.as_str()).collect()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.channels[i].as_slice())
    }

    /// CSV with a `t` column followed by the channels in declared order.
    /// Floats use the shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for row in 0..self.times.len() {
            out.push_str(&format!("{}", self.times[row]));
            for channel in &self.channels {
                out.push_str(&format!(",{}", channel[row]));
            }
            out.push('\n');
        }
        out
    }

    /// Compact JSON with sorted metadata; byte-stable for fixed content.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            times: &'a [f64],
            channels: Vec<ChannelExport<'a>>,
            metadata: &'a BTreeMap<String, String>,
        }
        #[derive(Serialize)]
        struct ChannelExport<'a> {
            name: &'a str,
            values: &'a [f64],
        }
        let export = Export {
            times: &self.times,
            channels: self
                .names
                .iter()
                .zip(&self.channels)
                .map(|(name, values)| ChannelExport {
                    name,
                    values,
                })
                .collect(),
            metadata: &self.metadata,
        };
        serde_json::to_string(&export)
            .map_err(|e| Error::invalid(format!("time-series serialization failed: {e}")))
    }
}
