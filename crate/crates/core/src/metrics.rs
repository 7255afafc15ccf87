//! Sample-quality metrics on raw 2D coordinates.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Diagonal jitter added to a degenerate covariance before the matrix root.
pub const COV_JITTER: f64 = 1e-12;
/// Eigenvalues of the covariance product below this are an error; those
/// between it and zero are clamped.
pub const NEG_EIGEN_TOL: f64 = -1e-10;

/// Sample mean and unbiased covariance of a 2D point set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentSummary {
    pub mean: [f64; 2],
    /// Row-major `[[c00, c01], [c10, c11]]`.
    pub cov: [[f64; 2]; 2],
    pub count: usize,
}

fn check_points(t: &Tensor, what: &str) -> Result<()> {
    if t.instance_shape() != [2] {
        return Err(Error::Usage(format!(
            "{what} points must have shape [n, 2], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl MomentSummary {
    pub fn fit(points: &Tensor) -> Result<MomentSummary> {
        check_points(points, "moment")?;
        let n = points.batch();
        if n < 2 {
            return Err(Error::Usage(format!("moment fit needs at least 2 points, got {n}")));
        }
        let mut mean = [0.0; 2];
        for p in points.data().chunks_exact(2) {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        let (mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0);
        for p in points.data().chunks_exact(2) {
            let (a, b) = (p[0] - mean[0], p[1] - mean[1]);
            c00 += a * a;
            c01 += a * b;
            c11 += b * b;
        }
        let k = 1.0 / (n - 1) as f64;
        Ok(MomentSummary {
            mean,
            cov: [[c00 * k, c01 * k], [c01 * k, c11 * k]],
            count: n,
        })
    }
}

/// Eigenvalues (descending) and unit eigenvectors (columns) of a symmetric 2×2 matrix.
fn sym_eigen(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l = [mid + rad, mid - rad];
    if b == 0.0 {
        return if a >= c {
            (l, [[1.0, 0.0], [0.0, 1.0]])
        } else {
            (l, [[0.0, 1.0], [1.0, 0.0]])
        };
    }
    let (x, y) = (l[0] - c, b);
    let norm = x.hypot(y);
    let (u0, u1) = (x / norm, y / norm);
    (l, [[u0, -u1], [u1, u0]])
}

fn sym_sqrt(m: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let (l, v) = sym_eigen(m);
    let mut r = [[0.0; 2]; 2];
    for k in 0..2 {
        let s = clamp_eigen(l[k])?.sqrt();
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] += s * v[i][k] * v[j][k];
            }
        }
    }
    Ok(r)
}

fn clamp_eigen(l: f64) -> Result<f64> {
    if l < NEG_EIGEN_TOL {
        Err(Error::Numerical(format!("matrix is not positive semidefinite: eigenvalue {l:e}")))
    } else {
        Ok(l.max(0.0))
    }
}

fn matmul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    r
}

fn is_degenerate(c: [[f64; 2]; 2]) -> bool {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let scale = (c[0][0] + c[1][1]).abs().max(f64::MIN_POSITIVE);
    det <= 1e-15 * scale * scale
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrechetReport {
    /// `|μ_r - μ_g|² + tr(C_r + C_g - 2 (C_r C_g)^{1/2})`.
    pub value: f64,
    /// The same with the unsquared mean distance.
    pub value_unsquared_mean: f64,
    /// Whether a degenerate covariance received diagonal jitter.
    pub jitter_applied: bool,
}

/// Fréchet distance between the Gaussian fits of two moment summaries.
pub fn frechet_from_moments(r: &MomentSummary, g: &MomentSummary) -> Result<FrechetReport> {
    let mut cr = r.cov;
    let mut cg = g.cov;
    let mut jitter_applied = false;
    for c in [&mut cr, &mut cg] {
        if is_degenerate(*c) {
            c[0][0] += COV_JITTER;
            c[1][1] += COV_JITTER;
            jitter_applied = true;
        }
    }
    let sr = sym_sqrt(cr)?;
    let inner = matmul(matmul(sr, cg), sr);
    let (l, _) = sym_eigen(inner);
    let tr_sqrt = clamp_eigen(l[0])?.sqrt() + clamp_eigen(l[1])?.sqrt();
    let trace = cr[0][0] + cr[1][1] + cg[0][0] + cg[1][1] - 2.0 * tr_sqrt;
    let dx = r.mean[0] - g.mean[0];
    let dy = r.mean[1] - g.mean[1];
    let d2 = dx * dx + dy * dy;
    // roundoff can push the trace slightly below zero for matching fits
    let trace = trace.max(0.0);
    Ok(FrechetReport {
        value: d2 + trace,
        value_unsquared_mean: d2.sqrt() + trace,
        jitter_applied,
    })
}

pub fn frechet_gaussian_2d_report(real: &Tensor, fake: &Tensor) -> Result<FrechetReport> {
    frechet_from_moments(&MomentSummary::fit(real)?, &MomentSummary::fit(fake)?)
}

/// Squared-mean Fréchet distance between Gaussian fits of two 2D point sets.
pub fn frechet_gaussian_2d(real: &Tensor, fake: &Tensor) -> Result<f64> {
    Ok(frechet_gaussian_2d_report(real, fake)?.value)
}

/// Polynomial kernel `(scale * x·y + offset)^degree`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub degree: i32,
    pub scale: f64,
    pub offset: f64,
}

impl KernelConfig {
    /// The cubic kernel with scale `1/d`.
    pub fn cubic(d: usize) -> KernelConfig {
        KernelConfig {
            degree: 3,
            scale: 1.0 / d as f64,
            offset: 1.0,
        }
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        (self.scale * dot + self.offset).powi(self.degree)
    }
}

fn mean_kernel(a: &Tensor, b: &Tensor, k: &KernelConfig) -> f64 {
    let mut total = 0.0;
    for i in 0..a.batch() {
        let x = a.instance(i);
        let mut row = 0.0;
        for j in 0..b.batch() {
            row += k.eval(x, b.instance(j));
        }
        total += row;
    }
    total / (a.batch() as f64 * b.batch() as f64)
}

/// All-pairs plug-in estimate of `E k(r, r') - 2 E k(r, g) + E k(g, g')`,
/// self pairs included.
pub fn kid_polynomial(real: &Tensor, fake: &Tensor, cfg: &KernelConfig) -> Result<f64> {
    if real.instance_shape() != fake.instance_shape() {
        return Err(Error::Usage(format!(
            "feature dimensions differ: {:?} vs {:?}",
            real.instance_shape(),
            fake.instance_shape()
        )));
    }
    if real.batch() == 0 || fake.batch() == 0 {
        return Err(Error::Usage("kernel distance needs non-empty sets".into()));
    }
    let rr = mean_kernel(real, real, cfg);
    let rg = mean_kernel(real, fake, cfg);
    let gg = mean_kernel(fake, fake, cfg);
    Ok(rr - 2.0 * rg + gg)
}

/// Fraction of fakes a mode needs within the threshold to count as covered.
pub const COVERAGE_MIN_SHARE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coverage {
    pub covered_modes: usize,
    pub hq_fraction: f64,
}

/// Counts modes receiving at least 1% of fakes within `threshold`, and the
/// fraction of fakes within `threshold` of any center.
pub fn mode_coverage(fake: &Tensor, centers: &[[f64; 2]], threshold: f64) -> Result<Coverage> {
    if centers.is_empty() {
        return Err(Error::Usage("mode coverage needs at least one center".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::Usage(format!("threshold must be positive, got {threshold}")));
    }
    check_points(fake, "fake")?;
    let n = fake.batch();
    let mut hits = vec![0usize; centers.len()];
    let t2 = threshold * threshold;
    let mut hq = 0usize;
    for p in fake.data().chunks_exact(2) {
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        if d2 <= t2 {
            hits[best] += 1;
            hq += 1;
        }
    }
    let need = COVERAGE_MIN_SHARE * n as f64;
    Ok(Coverage {
        covered_modes: hits.iter().filter(|&&h| h > 0 && h as f64 >= need).count(),
        hq_fraction: if n == 0 { 0.0 } else { hq as f64 / n as f64 },
    })
}

/// Parses whitespace- or comma-separated rows of numbers. Blank lines and
/// lines starting with `#` are skipped; a non-numeric first row is treated as
/// a header.
pub fn parse_points(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse()).collect();
        match parsed {
            Ok(v) => {
                if let Some(first) = rows.first() {
                    if first.len() != v.len() {
                        return Err(Error::Usage(format!(
                            "line {}: expected {} columns, found {}",
                            lineno + 1,
                            first.len(),
                            v.len()
                        )));
                    }
                }
                rows.push(v);
            }
            Err(_) if rows.is_empty() && lineno == first_content_line(text) => continue,
            Err(e) => {
                return Err(Error::Usage(format!("line {}: {e}", lineno + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Usage("no points found".into()));
    }
    Tensor::from_rows(&rows)
}

fn first_content_line(text: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .unwrap_or(0)
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_points(&text)
}

/// Writes points as comma-separated rows.
pub fn points_to_csv(points: &Tensor) -> String {
    let w = points.instance_len();
    let mut out = String::new();
    for row in points.data().chunks(w.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(mean: [f64; 2], cov: [[f64; 2]; 2]) -> MomentSummary {
        MomentSummary {
            mean,
            cov,
            count: 100,
        }
    }

    #[test]
    fn frechet_hand_cases() {
        let i = [[1.0, 0.0], [0.0, 1.0]];
        let f = frechet_from_moments(&moments([0.0, 0.0], i), &moments([1.0, 0.0], i)).unwrap();
        assert!((f.value - 1.0).abs() < 1e-12);
        let f4 = [[4.0, 0.0], [0.0, 4.0]];
        let f = frechet_from_moments(&moments([0.0, 0.0], i), &moments([0.0, 0.0], f4)).unwrap();
        assert!((f.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_covariance_is_jittered() {
        let z = [[0.0, 0.0], [0.0, 0.0]];
        let f = frechet_from_moments(&moments([0.0, 0.0], z), &moments([0.0, 0.0], z)).unwrap();
        assert!(f.jitter_applied);
        assert!(f.value.abs() < 1e-10);
    }

    #[test]
    fn kid_singletons() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let k = KernelConfig::cubic(2);
        assert!((kid_polynomial(&a, &b, &k).unwrap() - 4.75).abs() < 1e-12);
        assert_eq!(kid_polynomial(&a, &a, &k).unwrap(), 0.0);
        let c = Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(kid_polynomial(&a, &c, &k).is_err());
    }

    #[test]
    fn coverage_examples() {
        let centers: Vec<[f64; 2]> = crate::data::RingGeometry::default().centers();
        let rows: Vec<Vec<f64>> = centers.iter().map(|c| c.to_vec()).collect();
        let at_all = Tensor::from_rows(&rows).unwrap();
        assert_eq!(
            mode_coverage(&at_all, &centers, 0.06).unwrap(),
            Coverage {
                covered_modes: 8,
                hq_fraction: 1.0
            }
        );
        let one = Tensor::from_rows(&vec![rows[3].clone(); 10]).unwrap();
        let c = mode_coverage(&one, &centers, 0.06).unwrap();
        assert_eq!((c.covered_modes, c.hq_fraction), (1, 1.0));
        assert!(mode_coverage(&one, &[], 0.06).is_err());
    }

    #[test]
    fn point_files_parse() {
        let t = parse_points("x,y\n1,2\n# note\n\n3 4\n").unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(parse_points("1,2\n3\n").is_err());
        assert!(parse_points("1,2\nfoo,bar\n").is_err());
    }
}
