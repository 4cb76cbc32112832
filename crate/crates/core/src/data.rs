//! Seeded generators for the data geometries the linear-expert theory
//! reasons about, plus labeled cluster data for the attack experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Regression data: `N` feature rows and one scalar target per row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl RegressionDataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows vs targets",
                expected: format!("{}", x.rows()),
                got: format!("{}", y.len()),
            });
        }
        Ok(Self { x, y })
    }

    pub fn num_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// CSV with header `x0,...,x{D-1},y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim() {
            out.push_str(&format!("x{j},"));
        }
        out.push_str("y\n");
        for i in 0..self.num_rows() {
            for v in self.x.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", self.y[i]));
        }
        out
    }
}

/// Assignment of every dataset row to an expert index in `[0, num_experts)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertPartition {
    pub assignment: Vec<usize>,
    pub num_experts: usize,
}

impl ExpertPartition {
    pub fn new(assignment: Vec<usize>, num_experts: usize) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&e| e >= num_experts) {
            return Err(Error::Contract(format!(
                "assignment references expert {bad} but only {num_experts} exist"
            )));
        }
        Ok(Self {
            assignment,
            num_experts,
        })
    }

    /// Row indices routed to `expert`.
    pub fn rows_for(&self, expert: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == expert)
            .map(|(i, _)| i)
            .collect()
    }

    /// Experts that receive no rows.
    pub fn empty_experts(&self) -> Vec<usize> {
        (0..self.num_experts)
            .filter(|&e| !self.assignment.contains(&e))
            .collect()
    }

    /// The (X_i, y_i) subset routed to `expert`.
    pub fn subset(&self, ds: &RegressionDataset, expert: usize) -> (Matrix, Vec<f64>) {
        let rows = self.rows_for(expert);
        let x = ds.x.select_rows(&rows);
        let y = rows.iter().map(|&r| ds.y[r]).collect();
        (x, y)
    }
}

/// Classification data with multi-hot labels over `C` classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub labels: Matrix,
}

impl LabeledDataset {
    pub fn new(x: Matrix, labels: Matrix) -> Result<Self> {
        if x.rows() != labels.rows() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows vs label rows",
                expected: format!("{}", x.rows()),
                got: format!("{}", labels.rows()),
            });
        }
        for i in 0..labels.rows() {
            if !labels.row(i).iter().any(|&v| v > 0.0) {
                return Err(Error::Contract(format!(
                    "label row {i} has no positive entry"
                )));
            }
        }
        Ok(Self { x, labels })
    }

    pub fn num_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    /// CSV with header `x0,...,x{D-1},label0,...,label{C-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim() {
            out.push_str(&format!("x{j},"));
        }
        let c = self.num_classes();
        for j in 0..c {
            out.push_str(&format!("label{j}"));
            out.push(if j + 1 == c { '\n' } else { ',' });
        }
        for i in 0..self.num_rows() {
            for v in self.x.row(i) {
                out.push_str(&format!("{v},"));
            }
            let row = self.labels.row(i);
            for (j, v) in row.iter().enumerate() {
                out.push_str(&format!("{v}"));
                out.push(if j + 1 == row.len() { '\n' } else { ',' });
            }
        }
        out
    }
}

/// Coordinate blocks for `num_experts` experts over `dim` coordinates:
/// `dim / num_experts` each, remainder handed to the lowest-index experts.
pub fn coordinate_blocks(num_experts: usize, dim: usize) -> Vec<std::ops::Range<usize>> {
    let base = dim / num_experts;
    let extra = dim % num_experts;
    let mut blocks = Vec::with_capacity(num_experts);
    let mut start = 0;
    for i in 0..num_experts {
        let len = base + usize::from(i < extra);
        blocks.push(start..start + len);
        start += len;
    }
    blocks
}

/// Regression data living in disjoint coordinate blocks, one block per
/// expert, with targets from a per-expert weight vector supported on the
/// same block. Cross-block Gram entries are exactly zero.
pub fn gen_orthogonal_regression(
    num_experts: usize,
    rows_per_expert: usize,
    dim: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<(RegressionDataset, ExpertPartition, Vec<Vec<f64>>)> {
    if dim < num_experts {
        return Err(Error::Contract(format!(
            "need dim >= num_experts, got dim {dim} < {num_experts}"
        )));
    }
    if num_experts == 0 {
        return Err(Error::Contract("num_experts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = coordinate_blocks(num_experts, dim);
    let n = num_experts * rows_per_expert;
    let mut x = Matrix::zeros(n, dim);
    let mut y = vec![0.0; n];
    let mut assignment = vec![0usize; n];
    let mut true_weights = Vec::with_capacity(num_experts);
    let noise = Normal::new(0.0, noise_scale.max(f64::MIN_POSITIVE)).expect("valid scale");
    let mut row = 0;
    for (expert, block) in blocks.iter().enumerate() {
        let mut beta = vec![0.0; dim];
        for c in block.clone() {
            beta[c] = rng.gen_range(-2.0..2.0);
        }
        for _ in 0..rows_per_expert {
            for c in block.clone() {
                x.set(row, c, rng.gen_range(-1.0..1.0));
            }
            let mut target = crate::numeric::dot(x.row(row), &beta);
            if noise_scale > 0.0 {
                target += noise.sample(&mut rng);
            }
            y[row] = target;
            assignment[row] = expert;
            row += 1;
        }
        true_weights.push(beta);
    }
    let ds = RegressionDataset::new(x, y)?;
    let part = ExpertPartition::new(assignment, num_experts)?;
    Ok((ds, part, true_weights))
}

/// Two-expert dataset where the second block of rows is the exact negation
/// of the first and the targets are equal, so `Xᵀy` cancels identically.
///
/// Features and generative weights are drawn on a dyadic grid (multiples of
/// 1/1024), which keeps every product and partial sum exactly representable:
/// the cancellation holds bit-for-bit, not just up to rounding.
pub fn gen_antialigned_pair(
    rows: usize,
    dim: usize,
    seed: u64,
) -> Result<(RegressionDataset, ExpertPartition)> {
    if rows > 4096 {
        return Err(Error::Contract(
            "more than 4096 rows per block would overflow the exact-sum budget".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = |rng: &mut ChaCha8Rng| f64::from(rng.gen_range(-1024i32..=1024)) / 1024.0;
    let mut x = Matrix::zeros(2 * rows, dim);
    let mut y = vec![0.0; 2 * rows];
    // Resample the weight vector until it is well away from zero so the
    // per-expert solutions have nontrivial norm.
    let beta: Vec<f64> = loop {
        let b: Vec<f64> = (0..dim).map(|_| grid(&mut rng)).collect();
        if crate::numeric::norm2(&b) >= 0.5 {
            break b;
        }
    };
    for i in 0..rows {
        for j in 0..dim {
            let v = grid(&mut rng);
            x.set(i, j, v);
            x.set(rows + i, j, -v);
        }
        let t = crate::numeric::dot(x.row(i), &beta);
        y[i] = t;
        y[rows + i] = t;
    }
    let assignment = (0..2 * rows).map(|i| usize::from(i >= rows)).collect();
    Ok((
        RegressionDataset::new(x, y)?,
        ExpertPartition::new(assignment, 2)?,
    ))
}

/// Gaussian clusters centered at `±separation` hypercube corners, one class
/// per cluster, single-label multi-hot rows.
pub fn gen_cluster_classification(
    num_clusters: usize,
    rows_per_cluster: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_clusters == 0 || dim == 0 {
        return Err(Error::Contract("need at least one cluster and one dim".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = num_clusters * rows_per_cluster;
    let mut x = Matrix::zeros(n, dim);
    let mut labels = Matrix::zeros(n, num_clusters);
    let mut row = 0;
    for cluster in 0..num_clusters {
        // Corner sign pattern from the bits of the cluster index.
        let center: Vec<f64> = (0..dim)
            .map(|j| {
                let bit = (cluster >> (j % usize::BITS as usize)) & 1;
                if bit == 1 {
                    -separation
                } else {
                    separation
                }
            })
            .collect();
        for _ in 0..rows_per_cluster {
            for j in 0..dim {
                x.set(row, j, center[j] + unit.sample(&mut rng));
            }
            labels.set(row, cluster, 1.0);
            row += 1;
        }
    }
    LabeledDataset::new(x, labels)
}

/// Random orthogonal matrix of size `dim` via Gram-Schmidt on Gaussian
/// columns. Used to rotate block-aligned datasets into general position.
pub fn random_rotation(dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        for c in &cols {
            let proj = crate::numeric::dot(&v, c);
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= proj * ci;
            }
        }
        let norm = crate::numeric::norm2(&v);
        if norm < 1e-8 {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        cols.push(v);
    }
    let mut q = Matrix::zeros(dim, dim);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}

/// Rotate every feature row: X -> X R. Weight vectors transform as Rᵀ w, so
/// all norms in the theory pipeline are unchanged.
pub fn rotate_dataset(ds: &RegressionDataset, rotation: &Matrix) -> Result<RegressionDataset> {
    if rotation.rows() != ds.dim() || rotation.cols() != ds.dim() {
        return Err(Error::DimensionMismatch {
            context: "rotation size vs dataset dim",
            expected: format!("{0}x{0}", ds.dim()),
            got: format!("{}x{}", rotation.rows(), rotation.cols()),
        });
    }
    RegressionDataset::new(ds.x.matmul(rotation), ds.y.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{dot, least_squares, norm2, spectral_norm, DEFAULT_RTOL};

    #[test]
    fn orthogonal_blocks_have_disjoint_support() {
        let (ds, part, _) = gen_orthogonal_regression(2, 1, 2, 0.0, 42).unwrap();
        let (x1, _) = part.subset(&ds, 0);
        let (x2, _) = part.subset(&ds, 1);
        // Disjoint supports make the row spaces exactly orthogonal ...
        let row_products = x1.matmul(&x2.transpose());
        assert_eq!(spectral_norm(&row_products).unwrap(), 0.0);
        // ... and the cross-block entries of the Gram matrix exactly zero.
        let gram = ds.x.gram();
        let blocks = coordinate_blocks(2, 2);
        for r in blocks[0].clone() {
            for c in blocks[1].clone() {
                assert_eq!(gram.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn orthogonal_toy_reproduces_sum_of_expert_solutions() {
        // Hand-built instance of the generator's geometry: unit rows per block.
        let x = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ds = RegressionDataset::new(x, vec![1.0, 2.0]).unwrap();
        let w = least_squares(&ds.x, &ds.y, DEFAULT_RTOL).unwrap();
        assert!((w[0] - 1.0).abs() <= 1e-12 && (w[1] - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn generators_are_deterministic_in_seed() {
        let a = gen_orthogonal_regression(3, 4, 7, 0.1, 9).unwrap();
        let b = gen_orthogonal_regression(3, 4, 7, 0.1, 9).unwrap();
        assert_eq!(a.0.x, b.0.x);
        assert_eq!(a.0.y, b.0.y);
        assert_eq!(a.1.assignment, b.1.assignment);
        assert_eq!(a.2, b.2);

        let c = gen_antialigned_pair(3, 4, 5).unwrap();
        let d = gen_antialigned_pair(3, 4, 5).unwrap();
        assert_eq!(c.0.x, d.0.x);
        assert_eq!(c.0.y, d.0.y);

        let e = gen_cluster_classification(3, 5, 4, 10.0, 3).unwrap();
        let f = gen_cluster_classification(3, 5, 4, 10.0, 3).unwrap();
        assert_eq!(e.x, f.x);
        assert_eq!(e.labels, f.labels);
    }

    #[test]
    fn orthogonal_rejects_dim_below_experts() {
        assert!(gen_orthogonal_regression(4, 1, 3, 0.0, 0).is_err());
    }

    #[test]
    fn antialigned_negation_and_cancellation() {
        let (ds, part) = gen_antialigned_pair(3, 4, 11).unwrap();
        let (x1, y1) = part.subset(&ds, 0);
        let (x2, y2) = part.subset(&ds, 1);
        assert_eq!(x1.scale(-1.0), x2);
        assert_eq!(y1, y2);
        let xty = ds.x.transpose().matvec(&ds.y);
        assert_eq!(norm2(&xty), 0.0);
    }

    #[test]
    fn antialigned_dense_solution_is_zero() {
        let (ds, _) = gen_antialigned_pair(1, 2, 23).unwrap();
        let w = least_squares(&ds.x, &ds.y, DEFAULT_RTOL).unwrap();
        assert!(norm2(&w) <= 1e-14);
    }

    #[test]
    fn single_cluster_has_identical_labels() {
        let ds = gen_cluster_classification(1, 6, 3, 2.0, 1).unwrap();
        for i in 0..ds.num_rows() {
            assert_eq!(ds.labels.row(i), &[1.0]);
        }
    }

    // Well-separated clusters are linearly separable: a perceptron trained
    // in this test reaches zero training error.
    #[test]
    fn separated_clusters_are_linearly_separable() {
        let ds = gen_cluster_classification(4, 20, 5, 10.0, 77).unwrap();
        let d = ds.dim();
        let c = ds.num_classes();
        let mut w = vec![vec![0.0; d + 1]; c];
        let label_of = |row: &[f64]| row.iter().position(|&v| v > 0.0).unwrap();
        for _ in 0..200 {
            let mut mistakes = 0;
            for i in 0..ds.num_rows() {
                let mut feats = ds.x.row_vec(i);
                feats.push(1.0);
                let scores: Vec<f64> = w.iter().map(|wc| dot(wc, &feats)).collect();
                let pred = scores
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                let truth = label_of(ds.labels.row(i));
                if pred != truth {
                    mistakes += 1;
                    for (wt, f) in w[truth].iter_mut().zip(&feats) {
                        *wt += f;
                    }
                    for (wp, f) in w[pred].iter_mut().zip(&feats) {
                        *wp -= f;
                    }
                }
            }
            if mistakes == 0 {
                return;
            }
        }
        panic!("perceptron did not separate the clusters");
    }

    #[test]
    fn rotation_is_orthogonal() {
        let r = random_rotation(5, 19);
        let g = r.gram();
        assert!(g.sub(&Matrix::identity(5)).frobenius_norm() <= 1e-10);
    }

    #[test]
    fn csv_round_trip_shape() {
        let (ds, _, _) = gen_orthogonal_regression(2, 2, 4, 0.0, 1).unwrap();
        let csv = ds.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "x0,x1,x2,x3,y");
        assert_eq!(csv.lines().count(), 1 + ds.num_rows());

        let lds = gen_cluster_classification(2, 2, 3, 4.0, 2).unwrap();
        let csv = lds.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "x0,x1,x2,label0,label1");
    }
}
