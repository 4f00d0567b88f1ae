//! Finite populations of clusters and the moments defined on them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Finite-population covariance with divisor `M - 1`.
///
/// Rows are the population members, columns the variables.
pub fn finite_pop_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    if b.nrows() != m {
        return Err(Error::Shape(format!("cov_f: {} rows vs {} rows", m, b.nrows())));
    }
    if m < 2 {
        return Err(Error::DegeneratePopulation(m));
    }
    let ac = center_columns(a);
    let bc = center_columns(b);
    Ok(ac.transpose() * bc / (m as f64 - 1.0))
}

/// Finite-population variance of a single column.
pub fn var_f(a: &[f64]) -> Result<f64> {
    cov_f(a, a)
}

/// Finite-population covariance of two columns.
pub fn cov_f(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cov_f: length {} vs {}", a.len(), b.len())));
    }
    let m = a.len();
    if m < 2 {
        return Err(Error::DegeneratePopulation(m));
    }
    let ma = a.iter().sum::<f64>() / m as f64;
    let mb = b.iter().sum::<f64>() / m as f64;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Ok(s / (m as f64 - 1.0))
}

/// Subtract column means.
pub fn center_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    if a.nrows() == 0 {
        return out;
    }
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// A cluster-randomized experiment on a fixed finite population.
///
/// Units are stored cluster by cluster; `offsets[i]..offsets[i + 1]` indexes
/// the units of cluster `i`. Individual covariates are centered over all units
/// and cluster covariates over clusters at construction time.
#[derive(Debug, Clone)]
pub struct ClusterExperiment {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    cluster_ids: Vec<String>,
    x: DMatrix<f64>,
    x_names: Vec<String>,
    c: DMatrix<f64>,
    c_names: Vec<String>,
    y_obs: Option<Vec<f64>>,
    y_pot: Option<(Vec<f64>, Vec<f64>)>,
    z: Option<Vec<u8>>,
}

impl ClusterExperiment {
    /// Build from cluster sizes, unit-level covariates (`N x K_x`) and
    /// cluster-level covariates (`M x K_c`).
    pub fn new(sizes: Vec<usize>, x: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let m = sizes.len();
        if m < 2 {
            return Err(Error::DegeneratePopulation(m));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("cluster {i} has size 0")));
        }
        let mut offsets = Vec::with_capacity(m + 1);
        offsets.push(0);
        for s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let n = offsets[m];
        if x.nrows() != n {
            return Err(Error::Shape(format!("x has {} rows, cluster sizes sum to {n}", x.nrows())));
        }
        if c.nrows() != m {
            return Err(Error::Shape(format!("c has {} rows, expected {m} clusters", c.nrows())));
        }
        if x.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariates must be finite".into()));
        }
        let x_names = (1..=x.ncols()).map(|k| format!("x{k}")).collect();
        let c_names = (1..=c.ncols()).map(|k| format!("c{k}")).collect();
        Ok(Self {
            cluster_ids: (0..m).map(|i| i.to_string()).collect(),
            sizes,
            offsets,
            x: center_columns(&x),
            x_names,
            c: center_columns(&c),
            c_names,
            y_obs: None,
            y_pot: None,
            z: None,
        })
    }

    pub fn with_cluster_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.m() {
            return Err(Error::Shape(format!("{} cluster ids for {} clusters", ids.len(), self.m())));
        }
        self.cluster_ids = ids;
        Ok(self)
    }

    pub fn with_x_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.ncols() {
            return Err(Error::Shape(format!("{} names for {} x columns", names.len(), self.x.ncols())));
        }
        self.x_names = names;
        Ok(self)
    }

    pub fn with_c_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.c.ncols() {
            return Err(Error::Shape(format!("{} names for {} c columns", names.len(), self.c.ncols())));
        }
        self.c_names = names;
        Ok(self)
    }

    /// Attach both potential outcomes (simulation mode).
    pub fn with_potential_outcomes(mut self, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        let n = self.n_units();
        if y0.len() != n || y1.len() != n {
            return Err(Error::Shape(format!("potential outcomes need {n} entries")));
        }
        self.y_pot = Some((y0, y1));
        Ok(self)
    }

    /// Attach observed outcomes.
    pub fn with_observed(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_units() {
            return Err(Error::Shape(format!("observed outcomes need {} entries", self.n_units())));
        }
        self.y_obs = Some(y);
        Ok(self)
    }

    /// Attach a realized cluster-level assignment.
    pub fn with_assignment(mut self, z: Vec<u8>) -> Result<Self> {
        if z.len() != self.m() {
            return Err(Error::Shape(format!("assignment needs {} entries", self.m())));
        }
        self.z = Some(z);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_units(&self) -> usize {
        self.offsets[self.m()]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    /// Centered unit-level covariates.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Centered cluster-level covariates.
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn c_names(&self) -> &[String] {
        &self.c_names
    }

    pub fn observed(&self) -> Option<&[f64]> {
        self.y_obs.as_deref()
    }

    pub fn potential_outcomes(&self) -> Option<(&[f64], &[f64])> {
        self.y_pot.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    pub fn assignment(&self) -> Option<&[u8]> {
        self.z.as_deref()
    }

    /// Cluster index of every unit.
    pub fn unit_clusters(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_units());
        for (i, &s) in self.sizes.iter().enumerate() {
            out.extend(std::iter::repeat_n(i, s));
        }
        out
    }

    /// `(sum_j v_ij) * M / N` for every cluster.
    pub fn scaled_cluster_totals(&self, unit_values: &[f64]) -> Result<DVector<f64>> {
        if unit_values.len() != self.n_units() {
            return Err(Error::Shape(format!("{} unit values for {} units", unit_values.len(), self.n_units())));
        }
        let scale = self.m() as f64 / self.n_units() as f64;
        Ok(DVector::from_iterator(
            self.m(),
            self.offsets.windows(2).map(|w| unit_values[w[0]..w[1]].iter().sum::<f64>() * scale),
        ))
    }

    /// Column-wise scaled cluster totals of a unit-level matrix.
    pub fn scaled_cluster_totals_matrix(&self, unit_values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if unit_values.nrows() != self.n_units() {
            return Err(Error::Shape(format!("{} unit rows for {} units", unit_values.nrows(), self.n_units())));
        }
        let scale = self.m() as f64 / self.n_units() as f64;
        let mut out = DMatrix::zeros(self.m(), unit_values.ncols());
        for (i, w) in self.offsets.windows(2).enumerate() {
            for k in 0..unit_values.ncols() {
                let mut s = 0.0;
                for r in w[0]..w[1] {
                    s += unit_values[(r, k)];
                }
                out[(i, k)] = s * scale;
            }
        }
        Ok(out)
    }

    /// Relative cluster sizes `n_i M / N`, mean one.
    pub fn omega_tilde(&self) -> DVector<f64> {
        let scale = self.m() as f64 / self.n_units() as f64;
        DVector::from_iterator(self.m(), self.sizes.iter().map(|&s| s as f64 * scale))
    }

    /// Scaled cluster totals of the selected unit-level covariates.
    pub fn x_tilde(&self, cols: &[usize]) -> Result<DMatrix<f64>> {
        let sub = select_columns(&self.x, cols, "x")?;
        self.scaled_cluster_totals_matrix(&sub)
    }

    /// Selected cluster-level covariate columns.
    pub fn c_cols(&self, cols: &[usize]) -> Result<DMatrix<f64>> {
        select_columns(&self.c, cols, "c")
    }

    /// Cluster covariates `(n_i, x~_i)` built from sizes and all unit covariates, centered.
    pub fn size_and_totals(&self) -> Result<DMatrix<f64>> {
        let kx = self.x.ncols();
        let xt = self.x_tilde(&(0..kx).collect::<Vec<_>>())?;
        let mut out = DMatrix::zeros(self.m(), kx + 1);
        for i in 0..self.m() {
            out[(i, 0)] = self.sizes[i] as f64;
        }
        out.view_mut((0, 1), (self.m(), kx)).copy_from(&xt);
        Ok(center_columns(&out))
    }

    /// Replace the cluster covariates, centering them.
    pub fn set_cluster_covariates(&mut self, c: DMatrix<f64>, names: Vec<String>) -> Result<()> {
        if c.nrows() != self.m() || names.len() != c.ncols() {
            return Err(Error::Shape("cluster covariates do not match the population".into()));
        }
        self.c = center_columns(&c);
        self.c_names = names;
        Ok(())
    }

    /// Observed outcomes implied by assignment `z` and the potential outcomes.
    pub fn reveal(&self, z: &[u8]) -> Result<Vec<f64>> {
        let (y0, y1) = self.potential_outcomes().ok_or_else(|| Error::MissingData("potential outcomes".into()))?;
        if z.len() != self.m() {
            return Err(Error::Shape(format!("assignment needs {} entries", self.m())));
        }
        let mut y = Vec::with_capacity(self.n_units());
        for (i, w) in self.offsets.windows(2).enumerate() {
            let src = if z[i] == 1 { y1 } else { y0 };
            y.extend_from_slice(&src[w[0]..w[1]]);
        }
        Ok(y)
    }

    /// Average treatment effect over units.
    pub fn tau(&self) -> Result<f64> {
        let (y0, y1) = self.potential_outcomes().ok_or_else(|| Error::MissingData("potential outcomes".into()))?;
        let n = self.n_units() as f64;
        Ok(y1.iter().zip(y0).map(|(a, b)| a - b).sum::<f64>() / n)
    }
}

/// Copy the listed columns of `m`.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize], what: &str) -> Result<DMatrix<f64>> {
    if let Some(&bad) = cols.iter().find(|&&k| k >= m.ncols()) {
        return Err(Error::Shape(format!("{what} column {bad} out of range ({} columns)", m.ncols())));
    }
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (dst, &src) in cols.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn cov_f_hand_values() {
        assert_relative_eq!(finite_pop_cov(&col(&[1., 2., 3.]), &col(&[1., 2., 3.])).unwrap()[(0, 0)], 1.0);
        assert_relative_eq!(finite_pop_cov(&col(&[1., 2., 3.]), &col(&[3., 2., 1.])).unwrap()[(0, 0)], -1.0);
        assert_eq!(finite_pop_cov(&col(&[5., 5.]), &col(&[5., 5.])).unwrap()[(0, 0)], 0.0);
        assert!(matches!(var_f(&[1.0]), Err(Error::DegeneratePopulation(1))));
    }

    #[test]
    fn scaled_totals() {
        let e = ClusterExperiment::new(vec![2, 2], DMatrix::zeros(4, 0), DMatrix::zeros(2, 0)).unwrap();
        assert_eq!(e.scaled_cluster_totals(&[1., 1., 3., 3.]).unwrap().as_slice(), &[1.0, 3.0]);
        assert_eq!(e.scaled_cluster_totals(&[0.; 4]).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(e.scaled_cluster_totals(&[0.; 3]).is_err());

        let s = ClusterExperiment::new(vec![1, 1, 1], DMatrix::zeros(3, 0), DMatrix::zeros(3, 0)).unwrap();
        assert_eq!(s.scaled_cluster_totals(&[4., -1., 2.]).unwrap().as_slice(), &[4.0, -1.0, 2.0]);
    }

    #[test]
    fn centering_gives_zero_means() {
        let x = DMatrix::from_row_slice(5, 2, &[1., 2., 3., 5., 4., 4., 7., 1., 9., 0.]);
        let c = DMatrix::from_row_slice(2, 1, &[10., 14.]);
        let e = ClusterExperiment::new(vec![2, 3], x, c).unwrap();
        let xt = e.x_tilde(&[0, 1]).unwrap();
        for k in 0..2 {
            assert!(xt.column(k).sum().abs() < 1e-12);
            assert!(e.x().column(k).sum().abs() < 1e-12);
        }
        assert!(e.c().sum().abs() < 1e-12);
        assert_relative_eq!(e.omega_tilde().mean(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn reveal_and_tau() {
        let e = ClusterExperiment::new(vec![1, 2], DMatrix::zeros(3, 0), DMatrix::zeros(2, 0))
            .unwrap()
            .with_potential_outcomes(vec![0., 1., 2.], vec![3., 4., 5.])
            .unwrap();
        assert_eq!(e.reveal(&[1, 0]).unwrap(), vec![3., 1., 2.]);
        assert_relative_eq!(e.tau().unwrap(), 3.0);
    }
}
