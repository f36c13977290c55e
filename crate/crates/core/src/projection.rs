//! 2-D PCA projection of features, exported as CSV and as a bare SVG scatter.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// N × dims coordinates.
    pub coords: DenseMatrix,
    /// dims × D principal axes, largest variance first.
    pub components: DenseMatrix,
    pub mean: Vec<f64>,
    /// Variance along each axis.
    pub variances: Vec<f64>,
}

/// Projects the rows of `x` onto their top `dims` principal axes.
///
/// Each axis is oriented so its largest-magnitude loading is positive, which
/// makes the output independent of the eigensolver's sign choice.
pub fn pca(x: &DenseMatrix, dims: usize) -> Result<Projection> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::argument(format!("PCA needs at least two rows, got {n}")));
    }
    if dims == 0 || dims > d {
        return Err(Error::argument(format!("cannot project {d} features onto {dims} axes")));
    }
    let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / n as f64).collect();
    let centered = DenseMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let cov = centered.t_matmul(&centered)?.scale(1.0 / (n - 1) as f64);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = DenseMatrix::zeros(dims, d);
    let mut variances = Vec::with_capacity(dims);
    for (r, &c) in order.iter().take(dims).enumerate() {
        let axis = eig.eigenvectors.column(c);
        let pivot = axis.iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (dst, v) in components.row_mut(r).iter_mut().zip(axis.iter()) {
            *dst = sign * v;
        }
        variances.push(eig.eigenvalues[c].max(0.0));
    }
    let coords = centered.matmul_t(&components)?;
    Ok(Projection {
        coords,
        components,
        mean,
        variances,
    })
}

/// `x,y,predicted[,label]` rows; the label column appears when `truth` is given.
pub fn projection_csv(coords: &DenseMatrix, predicted: &[usize], truth: Option<&[usize]>) -> Result<String> {
    if coords.cols() != 2 || coords.rows() != predicted.len() || truth.is_some_and(|t| t.len() != predicted.len()) {
        return Err(Error::shape("projection rows, predictions and labels must align with 2-D coordinates"));
    }
    let mut out = String::from(if truth.is_some() { "x,y,predicted,label\n" } else { "x,y,predicted\n" });
    for (i, row) in coords.row_iter().enumerate() {
        write!(out, "{},{},{}", row[0], row[1], predicted[i]).expect("write to String");
        if let Some(t) = truth {
            write!(out, ",{}", t[i]).expect("write to String");
        }
        out.push('\n');
    }
    Ok(out)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Scatter of 2-D points colored by `groups`, inside an axis box.
pub fn render_svg(coords: &DenseMatrix, groups: &[usize]) -> Result<String> {
    if coords.cols() != 2 || coords.rows() != groups.len() {
        return Err(Error::shape("SVG scatter needs 2-D coordinates and one group per point"));
    }
    const SIZE: f64 = 480.0;
    const PAD: f64 = 20.0;
    let range = |c: usize| {
        let (lo, hi) = coords.row_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[c]), hi.max(r[c])));
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, xs), (y0, ys)) = (range(0), range(1));
    let inner = SIZE - 2.0 * PAD;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{inner}\" height=\"{inner}\" fill=\"none\" stroke=\"black\"/>\n"
    );
    for (r, &g) in coords.row_iter().zip(groups) {
        let cx = PAD + (r[0] - x0) / xs * inner;
        let cy = SIZE - PAD - (r[1] - y0) / ys * inner;
        writeln!(out, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{}\"/>", PALETTE[g % PALETTE.len()]).expect("write to String");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{squared_distance, Rng};

    #[test]
    fn planar_data_keeps_pairwise_distances() {
        let mut rng = Rng::new(3);
        let (u, v) = (
            [0.6, 0.0, 0.8, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0],
        );
        let mut x = DenseMatrix::zeros(40, 5);
        for i in 0..40 {
            let (a, b) = (3.0 * rng.normal(), rng.normal());
            for j in 0..5 {
                x.set(i, j, 7.0 + a * u[j] + b * v[j]);
            }
        }
        let p = pca(&x, 2).unwrap();
        for i in 0..40 {
            for j in 0..i {
                let before = squared_distance(x.row(i), x.row(j));
                let after = squared_distance(p.coords.row(i), p.coords.row(j));
                assert!((before - after).abs() < 1e-9 * (1.0 + before), "{before} {after}");
            }
        }
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn axes_are_orthonormal_and_sign_fixed() {
        let mut rng = Rng::new(4);
        let x = DenseMatrix::from_fn(30, 4, |_, j| rng.normal() * (j + 1) as f64);
        let p = pca(&x, 3).unwrap();
        let gram = p.components.matmul_t(&p.components).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((gram.get(i, j) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
            let pivot = p.components.row(i).iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
        let flipped = DenseMatrix::from_fn(30, 4, |i, j| if j == 0 { -x.get(i, j) } else { x.get(i, j) });
        let q = pca(&flipped, 3).unwrap();
        assert!((p.variances[0] - q.variances[0]).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = DenseMatrix::zeros(1, 3);
        assert!(pca(&x, 2).is_err());
        assert!(pca(&DenseMatrix::zeros(4, 3), 4).is_err());
    }

    #[test]
    fn exports() {
        let coords = DenseMatrix::from_rows(&[[0.0, 1.0], [2.0, -1.5]]).unwrap();
        let csv = projection_csv(&coords, &[1, 0], Some(&[0, 0])).unwrap();
        assert_eq!(csv, "x,y,predicted,label\n0,1,1,0\n2,-1.5,0,0\n");
        assert_eq!(projection_csv(&coords, &[1, 0], None).unwrap().lines().count(), 3);
        assert!(projection_csv(&coords, &[1], None).is_err());
        let svg = render_svg(&coords, &[0, 1]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("<rect"));
    }
}
