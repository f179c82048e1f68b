//! PHATE embedding built from scratch.
//!
//! Pipeline: distances, adaptive alpha-decay affinities, a row-stochastic
//! diffusion operator, diffusion time picked at the knee of the von Neumann
//! entropy curve, log-potential distances, then classical MDS as the start
//! configuration for SMACOF stress majorization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numkit::{self, DenseMatrix, Metric};

pub const DEFAULT_POTENTIAL_FLOOR: f64 = 1e-12;
pub const DEFAULT_T_MAX: usize = 100;
/// Chord distances closer than this count as ties in knee detection.
const KNEE_TIE_TOLERANCE: f64 = 1e-12;

/// Symmetric alpha-decay affinities with a unit diagonal.
#[derive(Clone, Debug)]
pub struct AffinityMatrix {
    matrix: DenseMatrix,
    k: usize,
    alpha: f64,
    bandwidths: Vec<f64>,
}

impl AffinityMatrix {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// k-NN distance of each point.
    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }
}

/// Adaptive-bandwidth alpha-decay kernel.
///
/// `A[i][j] = exp(-(D[i][j]/eps_i)^alpha)/2 + exp(-(D[i][j]/eps_j)^alpha)/2`
/// where `eps_i` is the distance from `i` to its k-th nearest neighbour.
/// Entries far beyond the bandwidth underflow to exactly zero.
pub fn alpha_decay_kernel(d: &DenseMatrix, k: usize, alpha: f64) -> Result<AffinityMatrix> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("kernel k must be at least 1".into()));
    }
    let neighbors = numkit::knn(d, k)?;
    let n = d.rows();
    let bandwidths: Vec<f64> = (0..n).map(|i| neighbors.kth_distance(i)).collect();
    if let Some(point) = bandwidths.iter().position(|&e| e <= 0.0) {
        return Err(Error::ZeroBandwidth { point });
    }
    let decay = |dist: f64, eps: f64| (-(dist / eps).powf(alpha)).exp();
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        for j in 0..i {
            let dist = d[(i, j)];
            let v = 0.5 * decay(dist, bandwidths[i]) + 0.5 * decay(dist, bandwidths[j]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(AffinityMatrix {
        matrix: a,
        k,
        alpha,
        bandwidths,
    })
}

/// Row-stochastic Markov matrix plus the eigenvalue magnitudes of its
/// symmetric conjugate, sorted descending.
#[derive(Clone, Debug)]
pub struct DiffusionOperator {
    matrix: DenseMatrix,
    spectrum: Vec<f64>,
}

impl DiffusionOperator {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }
}

/// Symmetric conjugate `M = S^{1/2} P S^{-1/2}` with `S = diag(row sums)`,
/// i.e. `M[i][j] = A[i][j] / sqrt(s_i s_j)`. Same eigenvalues as `P`.
pub fn symmetric_conjugate(a: &AffinityMatrix) -> Result<DenseMatrix> {
    let a = a.matrix();
    let n = a.rows();
    let sums = row_sums(a)?;
    let roots: Vec<f64> = sums.iter().map(|s| s.sqrt()).collect();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = a[(i, j)] / (roots[i] * roots[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn row_sums(a: &DenseMatrix) -> Result<Vec<f64>> {
    let sums: Vec<f64> = a.row_iter().map(|r| r.iter().sum()).collect();
    if let Some(row) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroRowSum { row });
    }
    Ok(sums)
}

pub fn diffusion_operator(a: &AffinityMatrix) -> Result<DiffusionOperator> {
    let am = a.matrix();
    let n = am.rows();
    let sums = row_sums(am)?;
    let mut p = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for (dst, &v) in p.row_mut(i).iter_mut().zip(am.row(i)) {
            *dst = v / sums[i];
        }
    }
    let m = symmetric_conjugate(a)?;
    let eig = to_nalgebra(&m).symmetric_eigenvalues();
    let mut spectrum: Vec<f64> = eig.iter().map(|v| v.abs().min(1.0)).collect();
    spectrum.sort_by(|x, y| y.total_cmp(x));
    Ok(DiffusionOperator {
        matrix: p,
        spectrum,
    })
}

fn to_nalgebra(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Shannon entropy of the normalised t-th powers of the eigenvalue
/// magnitudes, with `0 log 0 = 0`.
pub fn von_neumann_entropy(spectrum: &[f64], t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("diffusion time must be >= 1".into()));
    }
    let powers: Vec<f64> = spectrum.iter().map(|l| l.abs().powi(t as i32)).collect();
    let total: f64 = powers.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroSpectrum);
    }
    Ok(powers
        .iter()
        .map(|&p| p / total)
        .filter(|&eta| eta > 0.0)
        .map(|eta| -eta * eta.ln())
        .sum())
}

/// Entropy curve `H(t)` for `t = 1..=t_max`.
pub fn entropy_curve(spectrum: &[f64], t_max: usize) -> Result<Vec<(usize, f64)>> {
    (1..=t_max)
        .map(|t| von_neumann_entropy(spectrum, t).map(|h| (t, h)))
        .collect()
}

/// Knee of a curve: the sample farthest from the chord joining the first and
/// last samples, after min-max scaling both axes to `[0, 1]`. Ties and flat
/// curves resolve to the earliest `t`.
pub fn knee_point(series: &[(usize, f64)]) -> Result<usize> {
    if series.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "knee detection needs at least 3 samples, got {}",
            series.len()
        )));
    }
    let scale = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        move |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }
    };
    let sx = scale(&mut series.iter().map(|p| p.0 as f64));
    let sy = scale(&mut series.iter().map(|p| p.1));
    let pts: Vec<(f64, f64)> = series.iter().map(|&(t, h)| (sx(t as f64), sy(h))).collect();
    let (x0, y0) = pts[0];
    let (x1, y1) = pts[pts.len() - 1];
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (series[0].0, 0.0);
    if len == 0.0 {
        return Ok(best.0);
    }
    for (&(t, _), &(x, y)) in series.iter().zip(&pts) {
        let dist = (dy * (x - x0) - dx * (y - y0)).abs() / len;
        if dist > best.1 + KNEE_TIE_TOLERANCE {
            best = (t, dist);
        }
    }
    Ok(best.0)
}

/// `P^t` by binary exponentiation.
pub fn matrix_power(p: &DenseMatrix, t: usize) -> Result<DenseMatrix> {
    let mut result = DenseMatrix::identity(p.rows());
    let mut base = p.clone();
    let mut e = t;
    let mut first = true;
    while e > 0 {
        if e & 1 == 1 {
            result = if first { base.clone() } else { result.matmul(&base)? };
            first = false;
        }
        e >>= 1;
        if e > 0 {
            base = base.matmul(&base)?;
        }
    }
    Ok(result)
}

/// Potential distances `ID[i][j] = || log Q[i,:] - log Q[j,:] ||_2` with
/// `Q = P^t`, entries of `Q` clamped from below at `floor`.
pub fn potential_distances(op: &DiffusionOperator, t: usize, floor: f64) -> Result<DenseMatrix> {
    if t == 0 {
        return Err(Error::InvalidArgument("diffusion time must be >= 1".into()));
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "potential floor must be positive, got {floor}"
        )));
    }
    let q = matrix_power(op.matrix(), t)?;
    potential_from_powered(&q, floor)
}

pub(crate) fn potential_from_powered(q: &DenseMatrix, floor: f64) -> Result<DenseMatrix> {
    let n = q.rows();
    let logs: Vec<f64> = q.as_slice().iter().map(|&v| v.max(floor).ln()).collect();
    let logs = DenseMatrix::from_vec(n, n, logs)?;
    let mut id = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = numkit::euclidean(logs.row(i), logs.row(j));
            id[(i, j)] = v;
            id[(j, i)] = v;
        }
    }
    Ok(id)
}

/// Classical (Torgerson) MDS: eigen-decomposition of the double-centred
/// squared distances. Negative eigenvalues are clamped to zero.
pub fn classical_mds(d: &DenseMatrix, dim: usize) -> Result<DenseMatrix> {
    let n = d.rows();
    if !d.is_square() {
        return Err(Error::Shape("MDS needs a square distance matrix".into()));
    }
    let mut b = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = -0.5 * d[(i, j)] * d[(i, j)];
        }
    }
    let row_means: Vec<f64> = b.row_iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            // b is symmetric, so column means equal row means
            b[(i, j)] = b[(i, j)] - row_means[i] - row_means[j] + grand;
        }
    }
    // symmetrise away rounding before the eigensolver
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    let eig = to_nalgebra(&b).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut coords = DenseMatrix::zeros(n, dim);
    for (c, &idx) in order.iter().take(dim).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx);
        // pin the sign: the largest-magnitude component is positive
        let pivot = (0..n)
            .max_by(|&x, &y| v[x].abs().total_cmp(&v[y].abs()).then(y.cmp(&x)))
            .unwrap_or(0);
        let sign = if n > 0 && v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[(i, c)] = sign * scale * v[i];
        }
    }
    Ok(coords)
}

/// Raw stress `sum_{i<j} (D[i][j] - |x_i - x_j|)^2`.
pub fn stress(d: &DenseMatrix, x: &DenseMatrix) -> f64 {
    let n = d.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..i {
            let r = d[(i, j)] - numkit::euclidean(x.row(i), x.row(j));
            s += r * r;
        }
    }
    s
}

#[derive(Clone, Debug)]
pub struct SmacofFit {
    pub coordinates: DenseMatrix,
    pub stress: f64,
    /// Stress of the start configuration followed by the stress after each
    /// Guttman transform.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Metric MDS by stress majorization with unit weights.
pub fn smacof_mds(
    d: &DenseMatrix,
    init: &DenseMatrix,
    max_iter: usize,
    rel_tol: f64,
) -> Result<SmacofFit> {
    let n = d.rows();
    let dim = init.cols();
    if init.rows() != n {
        return Err(Error::Shape(format!(
            "initial configuration has {} rows, distance matrix has {n}",
            init.rows()
        )));
    }
    let mut x = init.clone();
    let mut current = stress(d, &x);
    if !current.is_finite() {
        return Err(Error::NonFiniteStress { iteration: 0 });
    }
    let mut history = vec![current];
    let mut iterations = 0;
    let mut next = DenseMatrix::zeros(n, dim);
    while iterations < max_iter && current > 0.0 {
        iterations += 1;
        guttman_transform(d, &x, &mut next);
        let s = stress(d, &next);
        if !s.is_finite() {
            return Err(Error::NonFiniteStress { iteration: iterations });
        }
        if s > current {
            // rounding noise at the fixed point; keep the better iterate
            break;
        }
        std::mem::swap(&mut x, &mut next);
        let decrease = (current - s) / current;
        current = s;
        history.push(s);
        if decrease < rel_tol {
            break;
        }
    }
    Ok(SmacofFit {
        coordinates: x,
        stress: current,
        history,
        iterations,
    })
}

/// `X+ = B(X) X / n`.
fn guttman_transform(d: &DenseMatrix, x: &DenseMatrix, out: &mut DenseMatrix) {
    let n = d.rows();
    let dim = x.cols();
    out.as_mut_slice().fill(0.0);
    for i in 0..n {
        let xi = x.row(i);
        let mut diag = 0.0;
        let mut acc = vec![0.0; dim];
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = x.row(j);
            let dist = numkit::euclidean(xi, xj);
            if dist > 0.0 {
                let bij = -d[(i, j)] / dist;
                diag -= bij;
                for c in 0..dim {
                    acc[c] += bij * xj[c];
                }
            }
        }
        let row = out.row_mut(i);
        for c in 0..dim {
            row[c] = (acc[c] + diag * xi[c]) / n as f64;
        }
    }
}

/// Diffusion time: fixed, or chosen at the entropy knee.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffusionTime {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhateConfig {
    pub metric: Metric,
    pub k: usize,
    pub alpha: f64,
    pub dim: usize,
    pub t: DiffusionTime,
    pub t_max: usize,
    pub floor: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for PhateConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            k: 5,
            alpha: 2.0,
            dim: 2,
            t: DiffusionTime::Auto,
            t_max: DEFAULT_T_MAX,
            floor: DEFAULT_POTENTIAL_FLOOR,
            max_iter: 300,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub coordinates: DenseMatrix,
    pub stress: f64,
    pub t: usize,
    pub potential: DenseMatrix,
    pub entropy: Vec<(usize, f64)>,
    pub iterations: usize,
}

/// Potential distances at the configured (or knee-selected) diffusion time.
#[derive(Clone, Debug)]
pub struct Potential {
    pub distances: DenseMatrix,
    pub t: usize,
    pub entropy: Vec<(usize, f64)>,
}

/// Everything up to the potential distances; no embedding.
pub fn phate_potential(points: &DenseMatrix, cfg: &PhateConfig) -> Result<Potential> {
    if points.rows() < cfg.k + 2 {
        return Err(Error::InvalidArgument(format!(
            "PHATE with k = {} needs at least {} points, got {}",
            cfg.k,
            cfg.k + 2,
            points.rows()
        )));
    }
    let d = numkit::pairwise_distances(points, cfg.metric)?;
    let affinity = alpha_decay_kernel(&d, cfg.k, cfg.alpha)?;
    let op = diffusion_operator(&affinity)?;
    let (t, entropy) = match cfg.t {
        DiffusionTime::Fixed(t) => (t, Vec::new()),
        DiffusionTime::Auto => {
            let curve = entropy_curve(op.spectrum(), cfg.t_max.max(3))?;
            (knee_point(&curve)?, curve)
        }
    };
    Ok(Potential {
        distances: potential_distances(&op, t, cfg.floor)?,
        t,
        entropy,
    })
}

pub fn phate_embed(points: &DenseMatrix, cfg: &PhateConfig) -> Result<Embedding> {
    if !(2..=3).contains(&cfg.dim) {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must be 2 or 3, got {}",
            cfg.dim
        )));
    }
    let Potential {
        distances: potential,
        t,
        entropy,
    } = phate_potential(points, cfg)?;
    let init = classical_mds(&potential, cfg.dim)?;
    let fit = smacof_mds(&potential, &init, cfg.max_iter, cfg.rel_tol)?;
    Ok(Embedding {
        coordinates: fit.coordinates,
        stress: fit.stress,
        t,
        potential,
        entropy,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::SeededRng;

    fn random_points(n: usize, dim: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededRng::new(seed, 1);
        DenseMatrix::from_vec(n, dim, (0..n * dim).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Cyclic Jacobi eigenvalue iteration; test-only oracle independent of
    /// the production eigensolver.
    fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
        let n = m.rows();
        let mut a: Vec<Vec<f64>> = m.row_iter().map(|r| r.to_vec()).collect();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i].abs()).collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        ev
    }

    #[test]
    fn kernel_is_one_at_zero_distance() {
        let p = DenseMatrix::from_rows(&[[0.0], [0.0], [1.0], [2.0], [4.0]]).unwrap();
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let a = alpha_decay_kernel(&d, 2, 2.0).unwrap();
        assert_eq!(a.matrix()[(0, 1)], 1.0);
        assert_eq!(a.matrix()[(3, 3)], 1.0);
    }

    #[test]
    fn kernel_at_bandwidth_is_inverse_e() {
        // symmetric layout: both endpoints have 1-NN distance 1
        let p = DenseMatrix::from_rows(&[[0.0], [1.0], [5.0], [6.0]]).unwrap();
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let a = alpha_decay_kernel(&d, 1, 2.0).unwrap();
        assert!((a.matrix()[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((a.matrix()[(0, 1)] - 0.36787944117144233).abs() < 1e-12);
    }

    #[test]
    fn kernel_matches_scalar_formula() {
        let p = random_points(15, 3, 4);
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let a = alpha_decay_kernel(&d, 3, 2.0).unwrap();
        for i in 0..15 {
            let mut ri: Vec<f64> = (0..15).filter(|&j| j != i).map(|j| d[(i, j)]).collect();
            ri.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for j in 0..15 {
                let mut rj: Vec<f64> = (0..15).filter(|&l| l != j).map(|l| d[(j, l)]).collect();
                rj.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let (ei, ej) = (ri[2], rj[2]);
                let expect = 0.5 * (-(d[(i, j)] / ei).powi(2)).exp()
                    + 0.5 * (-(d[(i, j)] / ej).powi(2)).exp();
                assert!((a.matrix()[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_rejects_coincident_points() {
        let p = DenseMatrix::from_rows(&[[0.0], [0.0], [0.0], [3.0]]).unwrap();
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        assert!(matches!(
            alpha_decay_kernel(&d, 2, 2.0),
            Err(Error::ZeroBandwidth { point: 0 })
        ));
    }

    #[test]
    fn two_by_two_operator() {
        let a = 0.3;
        let aff = AffinityMatrix {
            matrix: DenseMatrix::from_rows(&[[1.0, a], [a, 1.0]]).unwrap(),
            k: 1,
            alpha: 2.0,
            bandwidths: vec![1.0, 1.0],
        };
        let op = diffusion_operator(&aff).unwrap();
        let p = op.matrix();
        assert!((p[(0, 0)] - 1.0 / 1.3).abs() < 1e-15);
        assert!((p[(0, 1)] - 0.3 / 1.3).abs() < 1e-15);
        assert!((p[(1, 0)] - 0.3 / 1.3).abs() < 1e-15);
        assert!((op.spectrum()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_matches_jacobi_oracle() {
        let p = random_points(6, 2, 9);
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let a = alpha_decay_kernel(&d, 2, 2.0).unwrap();
        let op = diffusion_operator(&a).unwrap();
        let m = symmetric_conjugate(&a).unwrap();
        let oracle = jacobi_eigenvalues(&m);
        for (x, y) in op.spectrum().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        assert!((op.spectrum()[0] - 1.0).abs() < 1e-9);
        for r in op.matrix().row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_examples() {
        let h = von_neumann_entropy(&[0.5; 7], 3).unwrap();
        assert!((h - 7f64.ln()).abs() < 1e-12);
        assert_eq!(von_neumann_entropy(&[1.0, 0.0, 0.0], 4).unwrap(), 0.0);
        let h = von_neumann_entropy(&[1.0, 0.5], 2).unwrap();
        let expect = -0.8 * 0.8f64.ln() - 0.2 * 0.2f64.ln();
        assert!((h - expect).abs() < 1e-12);
        assert!((h - 0.5004024235381879).abs() < 1e-12);
        assert!(matches!(von_neumann_entropy(&[0.0, 0.0], 1), Err(Error::ZeroSpectrum)));
    }

    /// Direct evaluation of the max-distance-to-chord rule.
    fn knee_oracle(ts: &[f64], hs: &[f64]) -> f64 {
        let (tmin, tmax) = (ts[0], ts[ts.len() - 1]);
        let hmin = hs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hmax = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x: Vec<f64> = ts.iter().map(|t| (t - tmin) / (tmax - tmin)).collect();
        let y: Vec<f64> = hs.iter().map(|h| (h - hmin) / (hmax - hmin)).collect();
        let n = x.len();
        let mut best = (ts[0], -1.0);
        for i in 0..n {
            // area-of-triangle form of the point-line distance
            let num = ((x[n - 1] - x[0]) * (y[0] - y[i]) - (x[0] - x[i]) * (y[n - 1] - y[0])).abs();
            let den = ((x[n - 1] - x[0]).powi(2) + (y[n - 1] - y[0]).powi(2)).sqrt();
            if num / den > best.1 + 1e-15 {
                best = (ts[i], num / den);
            }
        }
        best.0
    }

    #[test]
    fn knee_of_clipped_line() {
        let series: Vec<(usize, f64)> = (1..=20).map(|t| (t, (10.0 - t as f64).max(1.0))).collect();
        let ts: Vec<f64> = series.iter().map(|s| s.0 as f64).collect();
        let hs: Vec<f64> = series.iter().map(|s| s.1).collect();
        assert_eq!(knee_oracle(&ts, &hs), 9.0);
        assert_eq!(knee_point(&series).unwrap(), 9);
    }

    #[test]
    fn knee_of_line_and_constant_is_first() {
        let line: Vec<(usize, f64)> = (1..=10).map(|t| (t, 3.0 - 0.2 * t as f64)).collect();
        assert_eq!(knee_point(&line).unwrap(), 1);
        let flat: Vec<(usize, f64)> = (1..=10).map(|t| (t, 2.0)).collect();
        assert_eq!(knee_point(&flat).unwrap(), 1);
        assert!(knee_point(&flat[..2]).is_err());
    }

    #[test]
    fn knee_of_convex_curve_is_interior() {
        let c: Vec<(usize, f64)> = (1..=30).map(|t| (t, 1.0 / t as f64)).collect();
        let k = knee_point(&c).unwrap();
        assert!(k > 1 && k < 30);
    }

    #[test]
    fn potential_distance_hand_example() {
        let q = DenseMatrix::from_rows(&[[0.5, 0.5], [0.25, 0.75]]).unwrap();
        let id = potential_from_powered(&q, DEFAULT_POTENTIAL_FLOOR).unwrap();
        let expect = ((2f64.ln() - 4f64.ln()).powi(2) + (2f64.ln() - (4.0f64 / 3.0).ln()).powi(2)).sqrt();
        assert!((id[(0, 1)] - expect).abs() < 1e-15);
        assert!((id[(0, 1)] - 0.8031).abs() < 1e-4);
    }

    #[test]
    fn repeated_squaring_matches_naive_power() {
        let p = random_points(12, 2, 3);
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let op = diffusion_operator(&alpha_decay_kernel(&d, 3, 2.0).unwrap()).unwrap();
        for t in 1..=8 {
            let mut naive = op.matrix().clone();
            for _ in 1..t {
                naive = naive.matmul(op.matrix()).unwrap();
            }
            let fast = matrix_power(op.matrix(), t).unwrap();
            assert!(fast.max_abs_diff(&naive) < 1e-12, "t = {t}");
        }
    }

    fn reconstruction_error(d: &DenseMatrix, x: &DenseMatrix) -> f64 {
        let e = numkit::pairwise_distances(x, Metric::Euclidean).unwrap();
        d.max_abs_diff(&e)
    }

    #[test]
    fn classical_mds_recovers_right_triangle() {
        let d = DenseMatrix::from_rows(&[[0.0, 3.0, 4.0], [3.0, 0.0, 5.0], [4.0, 5.0, 0.0]]).unwrap();
        let x = classical_mds(&d, 2).unwrap();
        assert!(reconstruction_error(&d, &x) < 1e-9);
    }

    #[test]
    fn classical_mds_of_zero_matrix() {
        let x = classical_mds(&DenseMatrix::zeros(4, 4), 2).unwrap();
        assert!(x.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classical_mds_recovers_planar_points() {
        let p = random_points(10, 2, 21);
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let x = classical_mds(&d, 2).unwrap();
        assert!(reconstruction_error(&d, &x) < 1e-9);
    }

    #[test]
    fn smacof_at_fixed_point() {
        let p = random_points(8, 2, 5);
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let fit = smacof_mds(&d, &p, 300, 1e-6).unwrap();
        assert!(fit.stress < 1e-20);
        assert!(fit.iterations <= 1);
    }

    #[test]
    fn smacof_stress_never_increases() {
        for seed in 0..5 {
            let p = random_points(12, 5, 100 + seed);
            let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
            let init = classical_mds(&d, 2).unwrap();
            let fit = smacof_mds(&d, &init, 300, 1e-6).unwrap();
            assert!(fit.stress <= stress(&d, &init));
            for w in fit.history.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn phate_separates_blobs() {
        let mut rng = SeededRng::new(42, 0);
        let mut rows = Vec::new();
        for centre in [0.0, 10.0] {
            for _ in 0..30 {
                rows.push(vec![centre + rng.normal() * 0.5, centre + rng.normal() * 0.5]);
            }
        }
        let p = DenseMatrix::from_rows(&rows).unwrap();
        let e = phate_embed(&p, &PhateConfig::default()).unwrap();
        let x = &e.coordinates;
        let mut intra: f64 = 0.0;
        let mut inter = f64::INFINITY;
        for i in 0..60 {
            for j in 0..i {
                let dist = numkit::euclidean(x.row(i), x.row(j));
                if (i < 30) == (j < 30) {
                    intra = intra.max(dist);
                } else {
                    inter = inter.min(dist);
                }
            }
        }
        assert!(intra < inter, "intra {intra} inter {inter}");
    }

    #[test]
    fn phate_orders_an_arc() {
        let n = 50;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let s = std::f64::consts::PI * i as f64 / (n - 1) as f64;
                vec![s.cos(), s.sin()]
            })
            .collect();
        let p = DenseMatrix::from_rows(&rows).unwrap();
        let e = phate_embed(&p, &PhateConfig::default()).unwrap();
        // project onto the principal axis of the embedding
        let x = &e.coordinates;
        let mean: Vec<f64> = (0..2).map(|c| (0..n).map(|i| x[(i, c)]).sum::<f64>() / n as f64).collect();
        let mut cov = [[0.0; 2]; 2];
        for i in 0..n {
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
                }
            }
        }
        let theta = 0.5 * (2.0 * cov[0][1]).atan2(cov[0][0] - cov[1][1]);
        let proj: Vec<f64> = (0..n)
            .map(|i| (x[(i, 0)] - mean[0]) * theta.cos() + (x[(i, 1)] - mean[1]) * theta.sin())
            .collect();
        // the walk cannot tell apart the last few points of an open end, so
        // the ends fold back by a couple of samples; the interior is ordered
        let k = PhateConfig::default().k;
        let interior = &proj[k..n - k];
        let inc = interior.windows(2).all(|w| w[1] > w[0]);
        let dec = interior.windows(2).all(|w| w[1] < w[0]);
        assert!(inc || dec, "{proj:?}");
        let out_of_order = proj
            .windows(2)
            .filter(|w| (w[1] > w[0]) != inc)
            .count();
        assert!(out_of_order <= 4, "{proj:?}");
    }

    #[test]
    fn fixed_and_auto_time_both_run() {
        let p = random_points(20, 3, 8);
        let auto = phate_embed(&p, &PhateConfig::default()).unwrap();
        let fixed = phate_embed(
            &p,
            &PhateConfig {
                t: DiffusionTime::Fixed(1),
                ..PhateConfig::default()
            },
        )
        .unwrap();
        assert_eq!(fixed.t, 1);
        assert!(auto.t >= 1);
        assert_eq!(auto.entropy.len(), DEFAULT_T_MAX);
    }

    #[test]
    fn embedding_is_deterministic() {
        let p = random_points(25, 4, 12);
        let cfg = PhateConfig {
            metric: Metric::Cosine,
            ..PhateConfig::default()
        };
        let a = phate_embed(&p, &cfg).unwrap();
        let b = phate_embed(&p, &cfg).unwrap();
        assert_eq!(a.coordinates.as_slice(), b.coordinates.as_slice());
        assert_eq!(a.potential.as_slice(), b.potential.as_slice());
    }
}
