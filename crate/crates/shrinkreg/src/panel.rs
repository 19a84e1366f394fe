//! Grouped measurement panels: one outcome and a block of repeated
//! measurements per unit, with optional cluster labels and controls.
//!
//! Panels are immutable after construction, so they can be shared freely
//! across worker threads.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Errors raised while building or loading a panel.
#[derive(Debug, Error)]
pub enum PanelError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("empty file: {path}")]
    EmptyFile { path: String },
    #[error("bad header in {path}: {detail}")]
    BadHeader { path: String, detail: String },
    #[error("non-numeric cell in {path}, row {row}, column {column}: {value:?}")]
    NonNumeric {
        path: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate unit_id in outcomes file: {id:?}")]
    DuplicateUnit { id: String },
    #[error("unit without measurements: {id:?}")]
    UnitWithoutMeasurements { id: String },
    #[error("unit with measurements but no outcome: {id:?}")]
    UnitWithoutOutcome { id: String },
    #[error("panel requires at least 2 units, got {n}")]
    TooFewUnits { n: usize },
    #[error("unit {id:?} has no measurements")]
    EmptyMeasurements { id: String },
    #[error("non-finite value for unit {id:?}")]
    NonFinite { id: String },
    #[error("unit {id:?} has {got} controls, expected {expected}")]
    ControlCountMismatch {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("unit {id:?} is missing a cluster label present on other units")]
    InconsistentCluster { id: String },
}

/// One cross-sectional unit: repeated measurements, an outcome, and
/// optional cluster label / control values.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: String,
    /// Measurements in stored order. Order matters: split-half
    /// constructions downstream are positional.
    pub measurements: Vec<f64>,
    pub outcome: f64,
    pub cluster: Option<String>,
    pub controls: Vec<f64>,
}

impl Unit {
    pub fn j(&self) -> usize {
        self.measurements.len()
    }

    pub fn mean(&self) -> f64 {
        self.measurements.iter().sum::<f64>() / self.j() as f64
    }
}

/// An immutable, validated collection of units.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    units: Vec<Unit>,
}

impl PanelData {
    /// Validates and wraps a list of units. Requires n >= 2, unique ids,
    /// nonempty finite measurements, finite outcomes, a consistent number
    /// of controls, and cluster labels on either all units or none.
    pub fn new(units: Vec<Unit>) -> Result<Self, PanelError> {
        if units.len() < 2 {
            return Err(PanelError::TooFewUnits { n: units.len() });
        }
        let mut seen: HashMap<&str, ()> = HashMap::with_capacity(units.len());
        let expected_controls = units[0].controls.len();
        let has_cluster = units[0].cluster.is_some();
        for u in &units {
            if seen.insert(u.id.as_str(), ()).is_some() {
                return Err(PanelError::DuplicateUnit { id: u.id.clone() });
            }
            if u.measurements.is_empty() {
                return Err(PanelError::EmptyMeasurements { id: u.id.clone() });
            }
            let finite = u.measurements.iter().all(|x| x.is_finite())
                && u.outcome.is_finite()
                && u.controls.iter().all(|c| c.is_finite());
            if !finite {
                return Err(PanelError::NonFinite { id: u.id.clone() });
            }
            if u.controls.len() != expected_controls {
                return Err(PanelError::ControlCountMismatch {
                    id: u.id.clone(),
                    got: u.controls.len(),
                    expected: expected_controls,
                });
            }
            if u.cluster.is_some() != has_cluster {
                return Err(PanelError::InconsistentCluster { id: u.id.clone() });
            }
        }
        Ok(PanelData { units })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn n_controls(&self) -> usize {
        self.units[0].controls.len()
    }

    pub fn has_clusters(&self) -> bool {
        self.units[0].cluster.is_some()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.outcome).collect()
    }

    /// Cluster labels in unit order; `None` when the panel carries none.
    pub fn clusters(&self) -> Option<Vec<&str>> {
        if !self.has_clusters() {
            return None;
        }
        Some(
            self.units
                .iter()
                .map(|u| u.cluster.as_deref().unwrap_or_default())
                .collect(),
        )
    }

    /// Control rows in unit order (empty inner vectors when no controls).
    pub fn control_rows(&self) -> Vec<Vec<f64>> {
        self.units.iter().map(|u| u.controls.clone()).collect()
    }
}

/// Per-unit arithmetic means of the measurements, in unit order.
pub fn unit_means(p: &PanelData) -> Vec<f64> {
    p.units().iter().map(Unit::mean).collect()
}

/// Unweighted mean of the unit means. This is the shrinkage target used
/// throughout; the observation-weighted grand average is deliberately not
/// exposed.
pub fn grand_mean(p: &PanelData) -> f64 {
    let means = unit_means(p);
    means.iter().sum::<f64>() / means.len() as f64
}

fn parse_cell(raw: &str, path: &str, row: usize, column: &str) -> Result<f64, PanelError> {
    let trimmed = raw.trim();
    trimmed
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| PanelError::NonNumeric {
            path: path.to_string(),
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, PanelError> {
    let file = std::fs::File::open(path).map_err(|source| PanelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

/// Layout of the outcomes file header: `unit_id,y[,cluster][,c1,c2,...]`.
struct OutcomeHeader {
    has_cluster: bool,
    n_controls: usize,
}

fn parse_outcome_header(
    headers: &csv::StringRecord,
    path: &str,
) -> Result<OutcomeHeader, PanelError> {
    let cols: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    let bad = |detail: String| PanelError::BadHeader {
        path: path.to_string(),
        detail,
    };
    if cols.len() < 2 || cols[0] != "unit_id" || cols[1] != "y" {
        return Err(bad(format!(
            "expected `unit_id,y[,cluster][,c1,c2,...]`, got {:?}",
            cols
        )));
    }
    let mut idx = 2;
    let has_cluster = cols.get(2).map(String::as_str) == Some("cluster");
    if has_cluster {
        idx = 3;
    }
    let mut n_controls = 0;
    while idx < cols.len() {
        let expected = format!("c{}", n_controls + 1);
        if cols[idx] != expected {
            return Err(bad(format!(
                "control columns must be contiguous and named c1,c2,...; found {:?} where {:?} was expected",
                cols[idx], expected
            )));
        }
        n_controls += 1;
        idx += 1;
    }
    Ok(OutcomeHeader {
        has_cluster,
        n_controls,
    })
}

/// Loads a panel from the measurements/outcomes CSV pair.
///
/// Measurements file: header `unit_id,x`, one row per measurement, rows for
/// a unit kept in file order. Outcomes file: header
/// `unit_id,y[,cluster][,c1,c2,...]`, exactly one row per unit. Units are
/// ordered by first appearance in the outcomes file.
pub fn load_panel(measurements_path: &Path, outcomes_path: &Path) -> Result<PanelData, PanelError> {
    let m_path = measurements_path.display().to_string();
    let mut m_reader = open_reader(measurements_path)?;
    {
        let headers = m_reader.headers().map_err(|source| PanelError::Csv {
            path: m_path.clone(),
            source,
        })?;
        let cols: Vec<&str> = headers.iter().map(str::trim).collect();
        if cols != ["unit_id", "x"] {
            return Err(PanelError::BadHeader {
                path: m_path,
                detail: format!("expected `unit_id,x`, got {:?}", cols),
            });
        }
    }

    let mut measurements: HashMap<String, Vec<f64>> = HashMap::new();
    let mut m_rows = 0usize;
    for (row_idx, record) in m_reader.records().enumerate() {
        let record = record.map_err(|source| PanelError::Csv {
            path: m_path.clone(),
            source,
        })?;
        let row = row_idx + 2; // 1-based, counting the header line
        let id = record.get(0).unwrap_or("").trim().to_string();
        let x = parse_cell(record.get(1).unwrap_or(""), &m_path, row, "x")?;
        measurements.entry(id).or_default().push(x);
        m_rows += 1;
    }
    if m_rows == 0 {
        return Err(PanelError::EmptyFile { path: m_path });
    }

    let o_path = outcomes_path.display().to_string();
    let mut o_reader = open_reader(outcomes_path)?;
    let header = {
        let headers = o_reader.headers().map_err(|source| PanelError::Csv {
            path: o_path.clone(),
            source,
        })?;
        parse_outcome_header(headers, &o_path)?
    };

    let mut units = Vec::new();
    for (row_idx, record) in o_reader.records().enumerate() {
        let record = record.map_err(|source| PanelError::Csv {
            path: o_path.clone(),
            source,
        })?;
        let row = row_idx + 2;
        let id = record.get(0).unwrap_or("").trim().to_string();
        if units.iter().any(|u: &Unit| u.id == id) {
            return Err(PanelError::DuplicateUnit { id });
        }
        let y = parse_cell(record.get(1).unwrap_or(""), &o_path, row, "y")?;
        let mut field = 2;
        let cluster = if header.has_cluster {
            let c = record.get(field).unwrap_or("").trim().to_string();
            field += 1;
            Some(c)
        } else {
            None
        };
        let mut controls = Vec::with_capacity(header.n_controls);
        for k in 0..header.n_controls {
            let col = format!("c{}", k + 1);
            controls.push(parse_cell(
                record.get(field).unwrap_or(""),
                &o_path,
                row,
                &col,
            )?);
            field += 1;
        }
        let xs = measurements
            .remove(&id)
            .ok_or_else(|| PanelError::UnitWithoutMeasurements { id: id.clone() })?;
        units.push(Unit {
            id,
            measurements: xs,
            outcome: y,
            cluster,
            controls,
        });
    }
    if units.is_empty() {
        return Err(PanelError::EmptyFile { path: o_path });
    }
    if let Some(id) = measurements.into_keys().min() {
        return Err(PanelError::UnitWithoutOutcome { id });
    }
    PanelData::new(units)
}

/// Writes the panel back out as the same CSV pair `load_panel` reads.
/// Floats are written in shortest round-trip form, so a save/load cycle
/// reproduces the panel exactly.
pub fn save_panel(
    p: &PanelData,
    measurements_path: &Path,
    outcomes_path: &Path,
) -> Result<(), PanelError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source: std::io::Error| PanelError::Io {
            path: path.clone(),
            source,
        }
    };

    let mut m_out = String::from("unit_id,x\n");
    for u in p.units() {
        for x in &u.measurements {
            let _ = writeln!(m_out, "{},{}", u.id, x);
        }
    }
    std::fs::write(measurements_path, m_out).map_err(io_err(measurements_path))?;

    let mut o_out = String::from("unit_id,y");
    if p.has_clusters() {
        o_out.push_str(",cluster");
    }
    for k in 0..p.n_controls() {
        let _ = write!(o_out, ",c{}", k + 1);
    }
    o_out.push('\n');
    for u in p.units() {
        let _ = write!(o_out, "{},{}", u.id, u.outcome);
        if let Some(c) = &u.cluster {
            let _ = write!(o_out, ",{}", c);
        }
        for c in &u.controls {
            let _ = write!(o_out, ",{}", c);
        }
        o_out.push('\n');
    }
    std::fs::write(outcomes_path, o_out).map_err(io_err(outcomes_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn unit(id: &str, xs: &[f64], y: f64) -> Unit {
        Unit {
            id: id.to_string(),
            measurements: xs.to_vec(),
            outcome: y,
            cluster: None,
            controls: Vec::new(),
        }
    }

    fn two_unit_panel() -> PanelData {
        PanelData::new(vec![
            unit("a", &[0.0, 2.0], 1.0),
            unit("b", &[2.0, 4.0], 2.0),
        ])
        .unwrap()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn unit_means_hand_values() {
        let p = two_unit_panel();
        assert_eq!(unit_means(&p), vec![1.0, 3.0]);
        let sym = PanelData::new(vec![
            unit("a", &[1.0, 2.0, 3.0], 0.0),
            unit("b", &[5.0; 4], 0.0),
        ])
        .unwrap();
        assert_eq!(unit_means(&sym), vec![2.0, 5.0]);
    }

    #[test]
    fn grand_mean_matches_mean_of_unit_means() {
        let p = two_unit_panel();
        assert_eq!(grand_mean(&p), 2.0);
        let q = PanelData::new(vec![
            unit("a", &[1.0], 0.0),
            unit("b", &[2.0], 0.0),
            unit("c", &[6.0], 0.0),
        ])
        .unwrap();
        assert_eq!(grand_mean(&q), 3.0);
        let constant = PanelData::new(vec![
            unit("a", &[2.0], 0.0),
            unit("b", &[2.0], 0.0),
            unit("c", &[2.0], 0.0),
        ])
        .unwrap();
        assert_eq!(grand_mean(&constant), 2.0);
    }

    #[test]
    fn rejects_single_unit() {
        let err = PanelData::new(vec![unit("u1", &[1.0, 2.0, 3.0], 5.0)]).unwrap_err();
        assert!(matches!(err, PanelError::TooFewUnits { n: 1 }));
    }

    #[test]
    fn rejects_non_finite() {
        let err = PanelData::new(vec![
            unit("a", &[1.0, f64::NAN], 0.0),
            unit("b", &[1.0], 0.0),
        ])
        .unwrap_err();
        assert!(matches!(err, PanelError::NonFinite { .. }));
    }

    #[test]
    fn load_panel_basic() {
        let m = write_temp("unit_id,x\na,0\na,2\nb,2\nb,4\n");
        let o = write_temp("unit_id,y\na,1\nb,2\n");
        let p = load_panel(m.path(), o.path()).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.units()[0].j(), 2);
        assert_eq!(p.units()[1].j(), 2);
        assert_eq!(unit_means(&p), vec![1.0, 3.0]);
        assert_eq!(p.outcomes(), vec![1.0, 2.0]);
    }

    #[test]
    fn load_panel_orders_by_outcomes_file() {
        let m = write_temp("unit_id,x\nb,2\nb,4\na,0\na,2\n");
        let o = write_temp("unit_id,y\na,1\nb,2\n");
        let p = load_panel(m.path(), o.path()).unwrap();
        assert_eq!(p.units()[0].id, "a");
        assert_eq!(p.units()[1].id, "b");
    }

    #[test]
    fn load_panel_outcome_without_measurements() {
        let m = write_temp("unit_id,x\na,0\na,2\nb,1\n");
        let o = write_temp("unit_id,y\na,1\nb,2\nc,3\n");
        let err = load_panel(m.path(), o.path()).unwrap_err();
        assert!(matches!(err, PanelError::UnitWithoutMeasurements { id } if id == "c"));
    }

    #[test]
    fn load_panel_measurements_without_outcome() {
        let m = write_temp("unit_id,x\na,0\nb,1\nc,7\n");
        let o = write_temp("unit_id,y\na,1\nb,2\n");
        let err = load_panel(m.path(), o.path()).unwrap_err();
        assert!(matches!(err, PanelError::UnitWithoutOutcome { id } if id == "c"));
    }

    #[test]
    fn load_panel_duplicate_outcome_row() {
        let m = write_temp("unit_id,x\na,0\nb,1\n");
        let o = write_temp("unit_id,y\na,1\na,2\nb,3\n");
        let err = load_panel(m.path(), o.path()).unwrap_err();
        assert!(matches!(err, PanelError::DuplicateUnit { id } if id == "a"));
    }

    #[test]
    fn load_panel_non_numeric_cell() {
        let m = write_temp("unit_id,x\na,0\nb,oops\n");
        let o = write_temp("unit_id,y\na,1\nb,2\n");
        let err = load_panel(m.path(), o.path()).unwrap_err();
        assert!(matches!(err, PanelError::NonNumeric { row: 3, .. }));
    }

    #[test]
    fn load_panel_empty_files() {
        let m = write_temp("unit_id,x\n");
        let o = write_temp("unit_id,y\na,1\n");
        assert!(matches!(
            load_panel(m.path(), o.path()).unwrap_err(),
            PanelError::EmptyFile { .. }
        ));
        let m2 = write_temp("unit_id,x\na,0\nb,1\n");
        let o2 = write_temp("unit_id,y\n");
        assert!(matches!(
            load_panel(m2.path(), o2.path()).unwrap_err(),
            PanelError::EmptyFile { .. }
        ));
    }

    #[test]
    fn load_panel_with_cluster_and_controls() {
        let m = write_temp("unit_id,x\na,0\na,2\nb,2\nb,4\n");
        let o = write_temp("unit_id,y,cluster,c1,c2\na,1,v1,0.5,3\nb,2,v2,0.25,4\n");
        let p = load_panel(m.path(), o.path()).unwrap();
        assert!(p.has_clusters());
        assert_eq!(p.n_controls(), 2);
        assert_eq!(p.units()[0].controls, vec![0.5, 3.0]);
        assert_eq!(p.clusters().unwrap(), vec!["v1", "v2"]);
    }

    #[test]
    fn load_panel_rejects_bad_control_header() {
        let m = write_temp("unit_id,x\na,0\nb,1\n");
        let o = write_temp("unit_id,y,c2\na,1,0.5\nb,2,0.25\n");
        assert!(matches!(
            load_panel(m.path(), o.path()).unwrap_err(),
            PanelError::BadHeader { .. }
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let p = PanelData::new(vec![
            Unit {
                id: "a".into(),
                measurements: vec![0.1, 0.2, 0.30000000000000004],
                outcome: 1.5,
                cluster: Some("v1".into()),
                controls: vec![std::f64::consts::PI],
            },
            Unit {
                id: "b".into(),
                measurements: vec![-2.5e-13],
                outcome: -7.25,
                cluster: Some("v2".into()),
                controls: vec![1.0 / 3.0],
            },
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        let o = dir.path().join("o.csv");
        save_panel(&p, &m, &o).unwrap();
        let q = load_panel(&m, &o).unwrap();
        assert_eq!(p, q);
    }
}
