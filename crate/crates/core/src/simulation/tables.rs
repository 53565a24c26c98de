//! Presets for the published Monte Carlo tables and their output formats.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::TestVariant;
use crate::simulation::dgp::DgpConfig;
use crate::simulation::montecarlo::{
    bias_fraction, rep_seed, run_mc, BiasFractionCell, EstimatorKind, McConfig, McSummary,
};

/// Replications behind every published cell; `--scale` multiplies this.
pub const PAPER_REPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TablePreset {
    #[serde(rename = "1")]
    T1,
    #[serde(rename = "2")]
    T2,
    #[serde(rename = "3")]
    T3,
    #[serde(rename = "6")]
    T6,
    #[serde(rename = "7")]
    T7,
    #[serde(rename = "8")]
    T8,
    S1,
    S2,
    S3,
}

impl TablePreset {
    pub const ALL: [TablePreset; 9] = [
        Self::T1,
        Self::T2,
        Self::T3,
        Self::T6,
        Self::T7,
        Self::T8,
        Self::S1,
        Self::S2,
        Self::S3,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::T1 => "1",
            Self::T2 => "2",
            Self::T3 => "3",
            Self::T6 => "6",
            Self::T7 => "7",
            Self::T8 => "8",
            Self::S1 => "S1",
            Self::S2 => "S2",
            Self::S3 => "S3",
        }
    }

    fn is_test_table(self) -> bool {
        matches!(self, Self::T6 | Self::T7 | Self::T8)
    }
}

impl FromStr for TablePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Validation(format!("unknown table '{s}'; expected one of 1, 2, 3, 6, 7, 8, S1, S2, S3"))
            })
    }
}

pub fn scaled_reps(scale: f64) -> Result<usize> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(Error::Validation(format!("scale must be a non-negative number, got {scale}")));
    }
    Ok(((PAPER_REPS as f64 * scale).round() as usize).max(1))
}

/// Master seed of the `cell`-th configuration of a table.
pub fn cell_seed(master: u64, cell: usize) -> u64 {
    rep_seed(master ^ 0x7AB1_E5EE_D000_0000, cell as u64)
}

const T3_BANDWIDTHS: [usize; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
const TEST_DESIGNS: [(usize, usize, usize); 4] = [(100, 20, 4), (400, 80, 6), (400, 20, 4), (1600, 80, 6)];

/// Monte Carlo configurations of a preset, in output order, with seeds set.
pub fn preset_configs(preset: TablePreset, scale: f64, seed: u64) -> Result<Vec<McConfig>> {
    let reps = scaled_reps(scale)?;
    let mut out = Vec::new();
    let mut push = |mut dgp: DgpConfig, edit: &dyn Fn(&mut McConfig)| {
        dgp.seed = cell_seed(seed, out.len());
        let mut cfg = McConfig::new(dgp, reps);
        edit(&mut cfg);
        out.push(cfg);
    };
    match preset {
        TablePreset::T3 => {
            for rho in [0.0, 0.3, 0.6, 0.9] {
                push(DgpConfig::new(100, 20, rho), &|c| c.estimators = vec![EstimatorKind::Fls]);
            }
        }
        p if p.is_test_table() => {
            for rho in [0.0, 0.6] {
                for (n, t, m) in TEST_DESIGNS {
                    push(DgpConfig::new(n, t, rho), &|c| {
                        c.estimators = vec![EstimatorKind::Fls, EstimatorKind::BcFls];
                        c.bandwidth = crate::simulation::BandwidthChoice::Fixed(m);
                        c.tests = TestVariant::ALL.to_vec();
                        c.alternatives = true;
                    });
                }
            }
        }
        p => {
            let (r_true, r_fit) = match p {
                TablePreset::T2 | TablePreset::S2 => (1, 2),
                TablePreset::S3 => (2, 2),
                _ => (1, 1),
            };
            let cce = matches!(p, TablePreset::S1 | TablePreset::S2 | TablePreset::S3);
            for t in [5, 10, 20, 40, 80] {
                for rho in [0.3, 0.9] {
                    let mut dgp = DgpConfig::new(100, t, rho);
                    dgp.r_true = r_true;
                    push(dgp, &|c| {
                        c.r_fit = r_fit;
                        if cce {
                            c.estimators.push(EstimatorKind::Cce);
                        }
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Everything a `simulate` run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOutput {
    /// Preset label, or `"custom"` for a single configured cell.
    pub table: String,
    pub seed: u64,
    pub reps: usize,
    pub cells: Vec<McSummary>,
    pub fractions: Vec<BiasFractionCell>,
}

pub fn run_table(preset: TablePreset, scale: f64, seed: u64) -> Result<TableOutput> {
    run_preset(preset, &preset_configs(preset, scale, seed)?, seed)
}

/// Runs (possibly edited) preset configurations.
pub fn run_preset(preset: TablePreset, configs: &[McConfig], seed: u64) -> Result<TableOutput> {
    let reps = configs.first().map_or(0, |c| c.reps);
    let mut out = TableOutput {
        table: preset.label().to_string(),
        seed,
        reps,
        cells: Vec::new(),
        fractions: Vec::new(),
    };
    for (i, cfg) in configs.iter().enumerate() {
        log::info!(
            "table {} cell {}/{}: N={} T={} rho0={}",
            preset.label(),
            i + 1,
            configs.len(),
            cfg.dgp.n,
            cfg.dgp.t,
            cfg.dgp.rho0
        );
        if preset == TablePreset::T3 {
            out.fractions.extend(bias_fraction(cfg, &T3_BANDWIDTHS)?);
        } else {
            out.cells.push(run_mc(cfg, &format!("cell{i}"))?);
        }
    }
    Ok(out)
}

/// A single user-configured cell in the same output shape as a preset.
pub fn run_custom(cfg: &McConfig) -> Result<TableOutput> {
    Ok(TableOutput {
        table: "custom".into(),
        seed: cfg.dgp.seed,
        reps: cfg.reps,
        cells: vec![run_mc(cfg, "cell0")?],
        fractions: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Estimator,
    Test,
    Fraction,
}

/// One line of the flat CSV: a cell/estimator, cell/test or cell/bandwidth pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatRow {
    pub table: String,
    pub cell: usize,
    pub n: usize,
    pub t: usize,
    pub rho0: f64,
    pub r_true: usize,
    pub r_fit: usize,
    pub bandwidth: usize,
    pub reps: usize,
    pub rep_failures: usize,
    pub kind: RowKind,
    pub name: String,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub std: Option<f64>,
    pub rmse: Option<f64>,
    pub size: Option<f64>,
    pub power_left: Option<f64>,
    pub power_right: Option<f64>,
    pub sc_power_left: Option<f64>,
    pub sc_power_right: Option<f64>,
    pub fraction: Option<f64>,
}

impl FlatRow {
    fn blank(table: &str, cell: usize, s: &McSummary, kind: RowKind, name: &str) -> Self {
        Self {
            table: table.to_string(),
            cell,
            n: s.n,
            t: s.t,
            rho0: s.rho0,
            r_true: s.r_true,
            r_fit: s.r_fit,
            bandwidth: s.bandwidth,
            reps: s.reps,
            rep_failures: s.rep_failures,
            kind,
            name: name.to_string(),
            mean: None,
            bias: None,
            std: None,
            rmse: None,
            size: None,
            power_left: None,
            power_right: None,
            sc_power_left: None,
            sc_power_right: None,
            fraction: None,
        }
    }
}

impl TableOutput {
    pub fn rows(&self) -> Vec<FlatRow> {
        let mut rows = Vec::new();
        for (i, s) in self.cells.iter().enumerate() {
            for e in &s.estimators {
                let mut r = FlatRow::blank(&self.table, i, s, RowKind::Estimator, e.estimator.label());
                r.mean = Some(e.mean);
                r.bias = Some(e.bias);
                r.std = Some(e.std);
                r.rmse = Some(e.rmse);
                rows.push(r);
            }
            for ts in &s.tests {
                let mut r = FlatRow::blank(&self.table, i, s, RowKind::Test, ts.variant.label());
                r.size = Some(ts.size);
                r.power_left = ts.power_left;
                r.power_right = ts.power_right;
                r.sc_power_left = ts.size_corrected_power_left;
                r.sc_power_right = ts.size_corrected_power_right;
                rows.push(r);
            }
        }
        for (i, f) in self.fractions.iter().enumerate() {
            rows.push(FlatRow {
                table: self.table.clone(),
                cell: i,
                n: 100,
                t: 20,
                rho0: f.rho0,
                r_true: 1,
                r_fit: 1,
                bandwidth: f.bandwidth,
                reps: f.reps,
                rep_failures: f.rep_failures,
                kind: RowKind::Fraction,
                name: format!("M={}", f.bandwidth),
                mean: Some(f.estimated),
                bias: Some(f.realised.mean),
                std: Some(f.realised.se),
                rmse: None,
                size: None,
                power_left: None,
                power_right: None,
                sc_power_left: None,
                sc_power_right: None,
                fraction: f.fraction,
            });
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in self.rows() {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.into()))
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Validation(format!("summary record: {e}")))
    }

    /// Fixed-width table in the paper's layout.
    pub fn to_human(&self) -> String {
        let mut s = String::new();
        let preset = TablePreset::from_str(&self.table).ok();
        let _ = writeln!(s, "Table {} ({} replications per cell, seed {})", self.table, self.reps, self.seed);
        match preset {
            Some(TablePreset::T3) => self.human_fractions(&mut s),
            Some(p @ (TablePreset::T6 | TablePreset::T7 | TablePreset::T8)) => self.human_tests(&mut s, p),
            _ => {
                self.human_estimators(&mut s);
                if self.cells.iter().any(|c| !c.tests.is_empty()) {
                    self.human_tests(&mut s, TablePreset::T6);
                    self.human_tests(&mut s, TablePreset::T7);
                }
            }
        }
        s
    }

    fn human_estimators(&self, s: &mut String) {
        for c in &self.cells {
            let _ = writeln!(
                s,
                "\nN={} T={} (M={}) rho0={} R_true={} R_fit={} failures={}",
                c.n, c.t, c.bandwidth, c.rho0, c.r_true, c.r_fit, c.rep_failures
            );
            let _ = write!(s, "{:>6}", "");
            for e in &c.estimators {
                let _ = write!(s, "{:>10}", e.estimator.label());
            }
            s.push('\n');
            for (name, get) in [
                ("bias", (|e| e.bias) as fn(&crate::simulation::montecarlo::EstimatorSummary) -> f64),
                ("std", |e| e.std),
                ("rmse", |e| e.rmse),
            ] {
                let _ = write!(s, "{name:>6}");
                for e in &c.estimators {
                    let _ = write!(s, "{:>10.4}", get(e));
                }
                s.push('\n');
            }
        }
    }

    fn human_fractions(&self, s: &mut String) {
        let _ = write!(s, "\n{:>10}", "");
        for m in T3_BANDWIDTHS {
            let _ = write!(s, "{:>8}", format!("M={m}"));
        }
        s.push('\n');
        for chunk in self.fractions.chunks(T3_BANDWIDTHS.len()) {
            let _ = write!(s, "{:>10}", format!("rho0={}", chunk[0].rho0));
            for f in chunk {
                match f.fraction {
                    Some(v) => {
                        let _ = write!(s, "{v:>8.3}");
                    }
                    None => {
                        let _ = write!(s, "{:>8}", "NA");
                    }
                }
            }
            s.push('\n');
        }
    }

    fn human_tests(&self, s: &mut String, which: TablePreset) {
        let title = match which {
            TablePreset::T6 => "size",
            TablePreset::T7 => "power (left / right)",
            _ => "size-corrected power (left / right)",
        };
        let _ = writeln!(s, "\n{title}");
        for c in &self.cells {
            let _ = writeln!(s, "rho0={} N={} T={} M={}", c.rho0, c.n, c.t, c.bandwidth);
            for ts in &c.tests {
                let pct = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{:.1}%", 100.0 * v));
                let cell = match which {
                    TablePreset::T6 => pct(Some(ts.size)),
                    TablePreset::T7 => format!("{} / {}", pct(ts.power_left), pct(ts.power_right)),
                    _ => format!(
                        "{} / {}",
                        pct(ts.size_corrected_power_left),
                        pct(ts.size_corrected_power_right)
                    ),
                };
                let _ = writeln!(s, "  {:>4}  {cell}", ts.variant.label());
            }
        }
    }
}

pub fn read_rows<R: Read>(r: R) -> Result<Vec<FlatRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<FlatRow>, _>>()
        .map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_output() -> TableOutput {
        let mut dgp = DgpConfig::new(20, 6, 0.3);
        dgp.burn_in = 200;
        dgp.seed = 11;
        let mut cfg = McConfig::new(dgp, 100);
        cfg.tests = vec![TestVariant::Wd, TestVariant::WdStar];
        cfg.alternatives = true;
        let mut out = run_custom(&cfg).unwrap();
        let mut fcfg = cfg.clone();
        fcfg.tests.clear();
        fcfg.reps = 20;
        out.fractions = bias_fraction(&fcfg, &[1, 2]).unwrap();
        out
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("s2".parse::<TablePreset>().unwrap(), TablePreset::S2);
        assert_eq!("7".parse::<TablePreset>().unwrap(), TablePreset::T7);
        assert!("4".parse::<TablePreset>().is_err());
        for p in TablePreset::ALL {
            assert_eq!(p.label().parse::<TablePreset>().unwrap(), p);
        }
    }

    #[test]
    fn scale_maps_to_reps() {
        assert_eq!(scaled_reps(0.1).unwrap(), 1000);
        assert_eq!(scaled_reps(0.0).unwrap(), 1);
        assert!(scaled_reps(-1.0).is_err());
        assert!(scaled_reps(f64::NAN).is_err());
    }

    #[test]
    fn preset_grids() {
        let t1 = preset_configs(TablePreset::T1, 0.01, 7).unwrap();
        assert_eq!(t1.len(), 10);
        assert!(t1.iter().all(|c| c.reps == 100 && c.r_fit == 1 && c.dgp.n == 100));
        let t = |c: &McConfig| c.bandwidth.resolve(c.dgp.t);
        assert_eq!(t1.iter().map(t).collect::<Vec<_>>(), vec![2, 2, 3, 3, 4, 4, 5, 5, 6, 6]);
        let seeds: std::collections::HashSet<u64> = t1.iter().map(|c| c.dgp.seed).collect();
        assert_eq!(seeds.len(), 10);

        let t2 = preset_configs(TablePreset::T2, 0.01, 7).unwrap();
        assert!(t2.iter().all(|c| c.r_fit == 2 && c.dgp.r_true == 1));
        let s3 = preset_configs(TablePreset::S3, 0.01, 7).unwrap();
        assert!(s3.iter().all(|c| c.r_fit == 2 && c.dgp.r_true == 2 && c.estimators.contains(&EstimatorKind::Cce)));

        let t3 = preset_configs(TablePreset::T3, 0.01, 7).unwrap();
        assert_eq!(t3.iter().map(|c| c.dgp.rho0).collect::<Vec<_>>(), vec![0.0, 0.3, 0.6, 0.9]);

        let t6 = preset_configs(TablePreset::T6, 0.01, 7).unwrap();
        assert_eq!(t6.len(), 8);
        assert!(t6.iter().all(|c| c.alternatives && c.tests.len() == 6));
        assert_eq!(preset_configs(TablePreset::T7, 0.01, 7).unwrap(), t6);
    }

    #[test]
    fn csv_round_trip() {
        let out = small_output();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let rows = read_rows(buf.as_slice()).unwrap();
        assert_eq!(rows, out.rows());
        assert_eq!(rows.len(), 3 + 2 + 2);
    }

    #[test]
    fn json_round_trip() {
        let out = small_output();
        let mut buf = Vec::new();
        out.write_json(&mut buf).unwrap();
        assert_eq!(TableOutput::read_json(buf.as_slice()).unwrap(), out);
    }

    #[test]
    fn human_layout_lists_estimators_as_columns() {
        let out = small_output();
        let text = out.to_human();
        let header = text.lines().find(|l| l.contains("FLS")).unwrap();
        assert!(header.contains("OLS") && header.contains("BC-FLS"));
        for key in ["bias", "std", "rmse", "size", "WD*"] {
            assert!(text.contains(key), "{key} missing:\n{text}");
        }
    }
}
