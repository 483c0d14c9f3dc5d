//! Joint samples of the uncertain wind and demand vector.

pub mod dist;
pub mod halton;
mod io;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BusId, Network};

pub use halton::{halton, halton_from};
pub use io::{load_scenarios, read_scenarios, save_scenarios, write_scenarios};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid beta shape parameters a = {a}, b = {b}")]
    Shape { a: f64, b: f64 },
    #[error("sample count must be at least 1")]
    Count,
    #[error("halton dimension {dimension} outside supported range 1..={max}")]
    Dimension { dimension: usize, max: usize },
    #[error("beta inverse CDF did not converge (a = {a}, b = {b}, p = {p})")]
    InverseCdf { a: f64, b: f64, p: f64 },
    #[error("malformed scenario header: {0}")]
    Header(String),
    #[error("row {row}: expected {expected} cells, found {found}")]
    RowArity { row: usize, expected: usize, found: usize },
    #[error("row {row}, column `{column}`: cannot parse `{cell}` as a number")]
    NonNumeric { row: usize, column: String, cell: String },
    #[error("row {row}: sample index {found}, expected {expected}")]
    SampleIndex { row: usize, expected: usize, found: String },
    #[error("scenario columns do not match the network: {0}")]
    SchemaMismatch(String),
    #[error("sample {sample}: {column} = {value} outside support [{lo}, {hi}]")]
    OutOfSupport { sample: usize, column: String, value: f64, lo: f64, hi: f64 },
    #[error("scenario file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    MonteCarlo,
    QuasiMonteCarlo,
}

/// Where a scenario set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleSource {
    /// Pseudo-random draws; scenario `n` uses stream `n` of the seeded generator.
    MonteCarlo { seed: u64 },
    /// Halton points `skip + 1 ..= skip + count` mapped through inverse CDFs.
    QuasiMonteCarlo { skip: u64 },
    /// Read from a file without provenance information.
    External,
}

impl SampleSource {
    /// Whether two sample sets of the given sizes can share a sample.
    pub fn overlaps(&self, count: usize, other: &SampleSource, other_count: usize) -> bool {
        match (self, other) {
            (SampleSource::MonteCarlo { seed: a }, SampleSource::MonteCarlo { seed: b }) => a == b,
            (SampleSource::QuasiMonteCarlo { skip: a }, SampleSource::QuasiMonteCarlo { skip: b }) => {
                // Halton index ranges (a, a + count] and (b, b + other_count]
                a.saturating_add(count as u64) > *b && b.saturating_add(other_count as u64) > *a
            }
            _ => false,
        }
    }
}

/// Source and size of a scenario set, as recorded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: SampleSource,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub sample_index: usize,
    pub wind: BTreeMap<BusId, f64>,
    pub load: BTreeMap<BusId, f64>,
}

impl Scenario {
    /// The forecast scenario: wind at forecasts, loads at their means.
    pub fn forecast(net: &Network) -> Scenario {
        Scenario {
            sample_index: 0,
            wind: net.wind_farms.iter().map(|w| (w.bus, w.forecast)).collect(),
            load: net.loads.iter().map(|l| (l.bus, l.mean)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
    pub source: SampleSource,
}

impl ScenarioSet {
    pub fn count(&self) -> usize {
        self.scenarios.len()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { source: self.source, count: self.count() }
    }

    pub fn single(s: Scenario) -> ScenarioSet {
        ScenarioSet { scenarios: vec![Scenario { sample_index: 0, ..s }], source: SampleSource::External }
    }

    /// Wind and load bus columns, ascending (taken from the first scenario).
    pub fn columns(&self) -> (Vec<BusId>, Vec<BusId>) {
        match self.scenarios.first() {
            Some(s) => (s.wind.keys().copied().collect(), s.load.keys().copied().collect()),
            None => (Vec::new(), Vec::new()),
        }
    }

    /// Checks that columns match the network's wind/load buses and that every
    /// value lies in its declared support.
    pub fn check_schema(&self, net: &Network) -> Result<(), ScenarioError> {
        let (wind, load) = (net.wind_buses(), net.load_buses());
        let mut problems = Vec::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            if s.sample_index != i {
                return Err(ScenarioError::SampleIndex { row: i + 1, expected: i, found: s.sample_index.to_string() });
            }
            let (w, l): (Vec<BusId>, Vec<BusId>) = (s.wind.keys().copied().collect(), s.load.keys().copied().collect());
            if w != wind || l != load {
                for b in wind.iter().filter(|b| !w.contains(b)) {
                    problems.push(format!("missing column wind_bus_{b}"));
                }
                for b in load.iter().filter(|b| !l.contains(b)) {
                    problems.push(format!("missing column load_bus_{b}"));
                }
                for b in w.iter().filter(|b| !wind.contains(b)) {
                    problems.push(format!("unexpected column wind_bus_{b}"));
                }
                for b in l.iter().filter(|b| !load.contains(b)) {
                    problems.push(format!("unexpected column load_bus_{b}"));
                }
                return Err(ScenarioError::SchemaMismatch(problems.join(", ")));
            }
        }
        for s in &self.scenarios {
            for w in &net.wind_farms {
                let v = s.wind[&w.bus];
                let sup = w.distribution.support;
                if !sup.contains(v) {
                    return Err(ScenarioError::OutOfSupport {
                        sample: s.sample_index,
                        column: format!("wind_bus_{}", w.bus),
                        value: v,
                        lo: sup.lo,
                        hi: sup.hi,
                    });
                }
            }
            for l in &net.loads {
                let v = s.load[&l.bus];
                let sup = l.distribution.support;
                if !sup.contains(v) {
                    return Err(ScenarioError::OutOfSupport {
                        sample: s.sample_index,
                        column: format!("load_bus_{}", l.bus),
                        value: v,
                        lo: sup.lo,
                        hi: sup.hi,
                    });
                }
            }
        }
        Ok(())
    }
}

/// `count` i.i.d. Beta(a, b) draws from a single seeded stream.
pub fn sample_beta(a: f64, b: f64, count: usize, seed: u64) -> Result<Vec<f64>, ScenarioError> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(ScenarioError::Shape { a, b });
    }
    if count == 0 {
        return Err(ScenarioError::Count);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| dist::beta_draw(a, b, &mut rng)).collect()
}

/// Generates `count` joint scenarios for the network's wind farms and loads.
///
/// Monte Carlo draws scenario `n` from stream `n` of a ChaCha generator seeded
/// with `seed`, so the output does not depend on the worker count. For the
/// quasi-Monte Carlo source, `seed` is the number of leading Halton points to
/// skip; components are ordered wind buses then load buses, ascending.
pub fn generate_scenarios(net: &Network, count: usize, seed: u64, kind: SourceKind) -> Result<ScenarioSet, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::Count);
    }
    let wind: Vec<_> = net.wind_buses().into_iter().map(|b| (b, net.wind_farm(b).unwrap().distribution.clone())).collect();
    let load: Vec<_> = net.load_buses().into_iter().map(|b| (b, net.load(b).unwrap().distribution.clone())).collect();
    let dim = wind.len() + load.len();

    let scenarios: Result<Vec<Scenario>, ScenarioError> = match kind {
        SourceKind::MonteCarlo => (0..count)
            .into_par_iter()
            .map(|n| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(n as u64);
                let mut s = Scenario { sample_index: n, wind: BTreeMap::new(), load: BTreeMap::new() };
                for (bus, d) in &wind {
                    s.wind.insert(*bus, d.sample(&mut rng)?);
                }
                for (bus, d) in &load {
                    s.load.insert(*bus, d.sample(&mut rng)?);
                }
                Ok(s)
            })
            .collect(),
        SourceKind::QuasiMonteCarlo => {
            if dim > halton::MAX_DIMENSION {
                return Err(ScenarioError::Dimension { dimension: dim, max: halton::MAX_DIMENSION });
            }
            (0..count)
                .into_par_iter()
                .map(|n| {
                    let u = halton::halton_point(seed + n as u64 + 1, dim.max(1));
                    let mut s = Scenario { sample_index: n, wind: BTreeMap::new(), load: BTreeMap::new() };
                    for (k, (bus, d)) in wind.iter().enumerate() {
                        s.wind.insert(*bus, d.quantile(u[k])?);
                    }
                    for (k, (bus, d)) in load.iter().enumerate() {
                        s.load.insert(*bus, d.quantile(u[wind.len() + k])?);
                    }
                    Ok(s)
                })
                .collect()
        }
    };
    let source = match kind {
        SourceKind::MonteCarlo => SampleSource::MonteCarlo { seed },
        SourceKind::QuasiMonteCarlo => SampleSource::QuasiMonteCarlo { skip: seed },
    };
    Ok(ScenarioSet { scenarios: scenarios?, source })
}
