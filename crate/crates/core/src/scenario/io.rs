//! Scenario CSV format: `sample,wind_bus_<id>...,load_bus_<id>...`, ids
//! ascending, values in MW at shortest round-trip precision, LF line endings.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{SampleSource, Scenario, ScenarioError, ScenarioSet};
use crate::model::{BusId, Network};

pub fn write_scenarios<W: Write>(set: &ScenarioSet, mut out: W) -> Result<(), ScenarioError> {
    let (wind, load) = set.columns();
    let mut header = String::from("sample");
    for b in &wind {
        header.push_str(&format!(",wind_bus_{b}"));
    }
    for b in &load {
        header.push_str(&format!(",load_bus_{b}"));
    }
    header.push('\n');
    let mut buf = header;
    for s in &set.scenarios {
        buf.push_str(&s.sample_index.to_string());
        for b in &wind {
            buf.push(',');
            buf.push_str(&s.wind[b].to_string());
        }
        for b in &load {
            buf.push(',');
            buf.push_str(&s.load[b].to_string());
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn save_scenarios(set: &ScenarioSet, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_scenarios(set, &mut w)?;
    w.flush()?;
    Ok(())
}

enum Column {
    Wind(BusId),
    Load(BusId),
}

fn parse_header(fields: &csv::StringRecord) -> Result<Vec<Column>, ScenarioError> {
    let mut it = fields.iter();
    if it.next() != Some("sample") {
        return Err(ScenarioError::Header("first column must be `sample`".into()));
    }
    let mut cols = Vec::new();
    let (mut last_wind, mut last_load, mut seen_load) = (None, None, false);
    for name in it {
        let parse_id =
            |rest: &str| rest.parse::<u32>().map(BusId).map_err(|_| ScenarioError::Header(format!("bad bus id in column `{name}`")));
        if let Some(rest) = name.strip_prefix("wind_bus_") {
            let id = parse_id(rest)?;
            if seen_load || last_wind.is_some_and(|l| l >= id) {
                return Err(ScenarioError::Header(format!("column `{name}` out of order")));
            }
            last_wind = Some(id);
            cols.push(Column::Wind(id));
        } else if let Some(rest) = name.strip_prefix("load_bus_") {
            let id = parse_id(rest)?;
            if last_load.is_some_and(|l| l >= id) {
                return Err(ScenarioError::Header(format!("column `{name}` out of order")));
            }
            seen_load = true;
            last_load = Some(id);
            cols.push(Column::Load(id));
        } else {
            return Err(ScenarioError::Header(format!("unrecognized column `{name}`")));
        }
    }
    Ok(cols)
}

/// Reads a scenario CSV without checking it against a network.
pub fn read_scenarios<R: Read>(input: R) -> Result<ScenarioSet, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let cols = parse_header(&header)?;
    let mut scenarios = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(ScenarioError::RowArity { row, expected: header.len(), found: rec.len() });
        }
        let idx = &rec[0];
        if idx.parse::<usize>().ok() != Some(i) {
            return Err(ScenarioError::SampleIndex { row, expected: i, found: idx.to_string() });
        }
        let mut s = Scenario { sample_index: i, wind: BTreeMap::new(), load: BTreeMap::new() };
        for (k, col) in cols.iter().enumerate() {
            let cell = &rec[k + 1];
            let v: f64 =
                cell.parse().map_err(|_| ScenarioError::NonNumeric { row, column: header[k + 1].to_string(), cell: cell.to_string() })?;
            if !v.is_finite() {
                return Err(ScenarioError::NonNumeric { row, column: header[k + 1].to_string(), cell: cell.to_string() });
            }
            match col {
                Column::Wind(b) => s.wind.insert(*b, v),
                Column::Load(b) => s.load.insert(*b, v),
            };
        }
        scenarios.push(s);
    }
    Ok(ScenarioSet { scenarios, source: SampleSource::External })
}

/// Reads a scenario CSV and checks its columns against `net`.
pub fn load_scenarios(path: impl AsRef<Path>, net: &Network) -> Result<ScenarioSet, ScenarioError> {
    let file = std::fs::File::open(path)?;
    let set = read_scenarios(std::io::BufReader::new(file))?;
    if set.count() == 0 {
        return Err(ScenarioError::Count);
    }
    set.check_schema(net)?;
    Ok(set)
}
