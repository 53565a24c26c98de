//! Long-format panel CSV: one row per `(unit, time)` with columns
//! `unit,time,y` followed by the regressors.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::panel::PanelDataset;

const REQUIRED: [&str; 3] = ["unit", "time", "y"];

/// A parsed panel before regressors and instruments are separated.
#[derive(Debug, Clone)]
pub struct PanelFrame {
    /// Units in order of first appearance.
    pub units: Vec<String>,
    /// Time labels, sorted numerically when all are numbers.
    pub times: Vec<String>,
    pub y: Matrix,
    /// Non-required columns in file order.
    pub columns: Vec<(String, Matrix)>,
}

impl PanelFrame {
    pub fn column(&self, name: &str) -> Result<&Matrix> {
        self.columns
            .iter()
            .find(|(c, _)| c == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Validation(format!("column '{name}' not found in input")))
    }

    /// Dataset with every column not listed in `exclude` as a regressor.
    pub fn dataset(&self, exclude: &[String], low_rank: &[String]) -> Result<PanelDataset> {
        for name in exclude.iter().chain(low_rank) {
            self.column(name)?;
        }
        let kept: Vec<&(String, Matrix)> = self.columns.iter().filter(|(c, _)| !exclude.contains(c)).collect();
        PanelDataset::with_metadata(
            self.y.clone(),
            kept.iter().map(|(_, m)| m.clone()).collect(),
            kept.iter().map(|(c, _)| c.clone()).collect(),
            kept.iter().map(|(c, _)| low_rank.contains(c)).collect(),
        )
    }
}

pub fn read_panel<R: Read>(r: R) -> Result<PanelFrame> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let pos = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing required column '{name}'")))
    };
    let (iu, it, iy) = (pos(REQUIRED[0])?, pos(REQUIRED[1])?, pos(REQUIRED[2])?);
    let extra: Vec<usize> = (0..header.len()).filter(|i| ![iu, it, iy].contains(i)).collect();
    let mut seen = std::collections::HashSet::new();
    for h in &header {
        if !seen.insert(h) {
            return Err(Error::Validation(format!("duplicate column '{h}'")));
        }
    }

    let mut units: Vec<String> = Vec::new();
    let mut unit_idx: HashMap<String, usize> = HashMap::new();
    let mut time_set: HashMap<String, ()> = HashMap::new();
    let mut records: Vec<(usize, String, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let unit = rec[iu].to_string();
        let time = rec[it].to_string();
        let next = units.len();
        let u = *unit_idx.entry(unit.clone()).or_insert_with(|| {
            units.push(unit);
            next
        });
        time_set.insert(time.clone(), ());
        let mut values = Vec::with_capacity(1 + extra.len());
        for &c in std::iter::once(&iy).chain(&extra) {
            let v: f64 = rec[c].parse().map_err(|_| {
                Error::Validation(format!("row {row}, column '{}': '{}' is not a number", header[c], &rec[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!("row {row}, column '{}': non-finite value", header[c])));
            }
            values.push(v);
        }
        records.push((u, time, values));
    }
    if records.is_empty() {
        return Err(Error::Validation("input has no data rows".into()));
    }

    let mut times: Vec<String> = time_set.into_keys().collect();
    let numeric: Option<Vec<f64>> = times.iter().map(|t| t.parse().ok()).collect();
    match numeric {
        Some(_) => times.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap())),
        None => times.sort(),
    }
    let time_idx: HashMap<&str, usize> = times.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let (n, t) = (units.len(), times.len());
    if records.len() != n * t {
        return Err(Error::Validation(format!(
            "unbalanced panel: {} rows for {n} units x {t} periods",
            records.len()
        )));
    }
    let mut mats = vec![Matrix::from_element(n, t, f64::NAN); 1 + extra.len()];
    for (u, time, values) in records {
        let s = time_idx[time.as_str()];
        if !mats[0][(u, s)].is_nan() {
            return Err(Error::Validation(format!(
                "duplicate observation for unit '{}', time '{time}'",
                units[u]
            )));
        }
        for (m, v) in mats.iter_mut().zip(values) {
            m[(u, s)] = v;
        }
    }
    let y = mats.remove(0);
    let columns = extra.iter().map(|&c| header[c].clone()).zip(mats).collect();
    Ok(PanelFrame { units, times, y, columns })
}

pub fn read_panel_file(path: &std::path::Path) -> Result<PanelFrame> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Validation(format!("cannot open input '{}': {e}", path.display())))?;
    read_panel(std::io::BufReader::new(file))
}

/// Writes a dataset (plus optional extra columns) in the long format read by [`read_panel`].
pub fn write_panel<W: Write>(w: W, d: &PanelDataset, extra: &[(String, Matrix)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    header.extend(d.regressor_names.iter().cloned());
    header.extend(extra.iter().map(|(c, _)| c.clone()));
    wr.write_record(&header)?;
    for i in 0..d.n() {
        for s in 0..d.t() {
            let mut row = vec![(i + 1).to_string(), (s + 1).to_string(), d.y[(i, s)].to_string()];
            row.extend(d.x.iter().chain(extra.iter().map(|(_, m)| m)).map(|m| m[(i, s)].to_string()));
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}
