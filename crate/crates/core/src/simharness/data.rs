//! Unit-level CSV ingestion.
//!
//! One row per unit with a `cluster_id` column. Optional columns: `size`
//! (checked against the row count), `y` (observed outcome, empty when
//! missing), `z` (0/1, constant within a cluster) and `y0`, `y1` (potential
//! outcomes, for simulation on a fixed population). Every other column is
//! a numeric unit covariate. Cluster covariates are `(n, x~)`, named `n` and
//! after the unit covariates.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::design::Assignment;
use crate::error::{Error, Result};
use crate::estimate::fit_ols;
use crate::fpstats::ClusterExperiment;

struct Unit {
    x: Vec<f64>,
    y: f64,
    z: Option<u8>,
    y0: f64,
    y1: f64,
}

/// Parsed data set.
#[derive(Debug, Clone)]
pub struct UnitData {
    pub experiment: ClusterExperiment,
    /// Observed outcomes in cluster order; `NaN` where missing.
    pub y: Option<Vec<f64>>,
    /// Cluster-level assignment.
    pub z: Option<Assignment>,
}

impl UnitData {
    /// Observed outcomes, failing if the column is absent or has gaps.
    pub fn outcomes(&self) -> Result<&[f64]> {
        let y = self.y.as_deref().ok_or_else(|| Error::MissingData("no 'y' column".into()))?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingData(format!("outcome missing for unit {}", i + 1)));
        }
        Ok(y)
    }

    pub fn assignment(&self) -> Result<&Assignment> {
        self.z.as_ref().ok_or_else(|| Error::MissingData("no 'z' column".into()))
    }
}

pub fn read_units_path(path: &Path) -> Result<UnitData> {
    let f = std::fs::File::open(path)?;
    read_units(f)
}

fn parse_num(s: &str, what: &str, row: usize) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("row {row}: column '{what}' has non-numeric value '{t}'")))
}

pub fn read_units<R: Read>(input: R) -> Result<UnitData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let id_col = find("cluster_id").ok_or_else(|| Error::MissingData("no 'cluster_id' column".into()))?;
    let size_col = find("size");
    let y_col = find("y");
    let z_col = find("z");
    let pot_cols = (find("y0"), find("y1"));
    let reserved = [Some(id_col), size_col, y_col, z_col, pot_cols.0, pot_cols.1];
    let x_cols: Vec<usize> = (0..header.len()).filter(|j| !reserved.contains(&Some(*j))).collect();
    let x_names: Vec<String> = x_cols.iter().map(|&j| header[j].clone()).collect();

    // rows grouped by cluster in order of first appearance
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<Unit>> = Vec::new();
    let mut sizes_declared: Vec<Option<usize>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::MissingData(format!("row {row}: empty cluster_id")));
        }
        let g = *index.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            groups.push(Vec::new());
            sizes_declared.push(None);
            groups.len() - 1
        });
        let mut x = Vec::with_capacity(x_cols.len());
        for (&j, name) in x_cols.iter().zip(&x_names) {
            let v = parse_num(rec.get(j).unwrap_or(""), name, row)?
                .ok_or_else(|| Error::MissingData(format!("row {row}: covariate '{name}' is missing")))?;
            x.push(v);
        }
        let y = match y_col {
            Some(j) => parse_num(rec.get(j).unwrap_or(""), "y", row)?.unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        let z = match z_col {
            Some(j) => match rec.get(j).unwrap_or("").trim() {
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(Error::InvalidArgument(format!("row {row}: z must be 0 or 1, got '{other}'")));
                }
            },
            None => None,
        };
        if let Some(j) = size_col {
            let s = parse_num(rec.get(j).unwrap_or(""), "size", row)?
                .ok_or_else(|| Error::MissingData(format!("row {row}: size is missing")))?;
            let s = s as usize;
            match sizes_declared[g] {
                Some(prev) if prev != s => {
                    return Err(Error::InvalidArgument(format!("cluster '{id}' declares sizes {prev} and {s}")));
                }
                _ => sizes_declared[g] = Some(s),
            }
        }
        let pot = |col: Option<usize>, name: &str| -> Result<f64> {
            match col {
                Some(j) => parse_num(rec.get(j).unwrap_or(""), name, row)?
                    .ok_or_else(|| Error::MissingData(format!("row {row}: {name} is missing"))),
                None => Ok(f64::NAN),
            }
        };
        let (y0, y1) = (pot(pot_cols.0, "y0")?, pot(pot_cols.1, "y1")?);
        groups[g].push(Unit { x, y, z, y0, y1 });
    }
    if groups.is_empty() {
        return Err(Error::DegeneratePopulation(0));
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    for (g, d) in sizes_declared.iter().enumerate() {
        if let Some(d) = d {
            if *d != sizes[g] {
                return Err(Error::InvalidArgument(format!(
                    "cluster '{}' declares size {d} but has {} rows",
                    order[g], sizes[g]
                )));
            }
        }
    }
    let n: usize = sizes.iter().sum();
    let k = x_cols.len();
    let mut x = DMatrix::zeros(n, k);
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(groups.len());
    let (mut y0, mut y1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut row = 0;
    for (g, units) in groups.iter().enumerate() {
        let zg = units[0].z;
        for u in units {
            for j in 0..k {
                x[(row, j)] = u.x[j];
            }
            y.push(u.y);
            y0.push(u.y0);
            y1.push(u.y1);
            if u.z != zg {
                return Err(Error::InvalidArgument(format!("cluster '{}' has mixed treatment", order[g])));
            }
            row += 1;
        }
        z.push(zg);
    }
    let mut exp = ClusterExperiment::new(sizes, x, DMatrix::zeros(groups.len(), 0))?
        .with_x_names(x_names.clone())?
        .with_cluster_ids(order)?;
    let c = exp.size_and_totals()?;
    let mut c_names = vec!["n".to_string()];
    c_names.extend(x_names);
    exp.set_cluster_covariates(c, c_names)?;
    match pot_cols {
        (Some(_), Some(_)) => exp = exp.with_potential_outcomes(y0, y1)?,
        (None, None) => {}
        _ => return Err(Error::MissingData("potential outcomes need both 'y0' and 'y1'".into())),
    }
    let z = match z_col {
        Some(_) => Some(Assignment::new(z.into_iter().map(|v| v.expect("z column present")).collect())?),
        None => None,
    };
    Ok(UnitData { experiment: exp, y: y_col.map(|_| y), z })
}

/// Write a population as unit rows `cluster_id, size, covariates, y0, y1`.
/// Covariates are written centered.
pub fn write_population_csv<W: std::io::Write>(exp: &ClusterExperiment, out: W) -> Result<()> {
    let (y0, y1) =
        exp.potential_outcomes().ok_or_else(|| Error::MissingData("population has no potential outcomes".into()))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cluster_id".to_string(), "size".to_string()];
    header.extend(exp.x_names().iter().cloned());
    header.extend(["y0".to_string(), "y1".to_string()]);
    w.write_record(&header)?;
    for (i, win) in exp.offsets().windows(2).enumerate() {
        for r in win[0]..win[1] {
            let mut rec = vec![exp.cluster_ids()[i].clone(), exp.sizes()[i].to_string()];
            rec.extend(exp.x().row(r).iter().map(|v| v.to_string()));
            rec.push(y0[r].to_string());
            rec.push(y1[r].to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fill both potential outcomes from observed data: each arm's outcomes are
/// regressed on `(1, x)` within that arm, and the fit predicts the outcome
/// under that arm for the units assigned to the other one.
pub fn impute_potential_outcomes(exp: &ClusterExperiment, y: &[f64], z: &Assignment) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = exp.n_units();
    if y.len() != n || z.m() != exp.m() {
        return Err(Error::Shape("outcomes and assignment do not match the population".into()));
    }
    let unit_z = crate::estimate::unit_treatment(exp, z);
    let k = exp.x().ncols();
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { exp.x()[(i, j - 1)] });
    let mut names = vec!["(Intercept)".to_string()];
    names.extend(exp.x_names().iter().cloned());
    let mut out = [y.to_vec(), y.to_vec()];
    for arm in 0..2u8 {
        let rows: Vec<usize> = (0..n).filter(|&i| unit_z[i] == arm && y[i].is_finite()).collect();
        let fit = fit_ols(design.select_rows(&rows), &rows.iter().map(|&i| y[i]).collect::<Vec<_>>(), names.clone())?;
        let pred = &design * &fit.coefficients;
        for i in 0..n {
            if unit_z[i] != arm || !y[i].is_finite() {
                out[arm as usize][i] = pred[i];
            }
        }
    }
    let [y0, y1] = out;
    Ok((y0, y1))
}
