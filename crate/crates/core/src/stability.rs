//! Linear stability of the blended one-step map on the harmonic and the
//! coupled harmonic oscillator.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::blended_step;
use crate::models::{StateVector, StiffSystem};

/// Matrix of a linear one-step map, obtained by applying the blended step
/// to the unit basis states.
pub fn flow_matrix(system: &StiffSystem, h: f64, alpha: f64) -> Result<DMatrix<f64>> {
    let n = system.n_dof();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..2 * n {
        let mut e = DVector::zeros(2 * n);
        e[j] = 1.0;
        let out = blended_step(system, &StateVector::from_flat(&e)?, h, alpha)?;
        m.set_column(j, &out.to_flat());
    }
    Ok(m)
}

fn check_params(k: f64, h: f64, alpha: f64) -> Result<()> {
    if !(k > 0.0 && h > 0.0 && (0.0..=1.0).contains(&alpha)) {
        return Err(Error::InvalidParameter(format!(
            "need K > 0, h > 0, alpha in [0, 1]; got K={k}, h={h}, alpha={alpha}"
        )));
    }
    Ok(())
}

/// Blended map of `H = ½Kq² + ½p²` in the variables `(q, p)`.
pub fn harmonic_flow_matrix(k: f64, h: f64, alpha: f64) -> Result<DMatrix<f64>> {
    check_params(k, h, alpha)?;
    flow_matrix(&StiffSystem::harmonic_oscillator(k)?, h, alpha)
}

/// Blended map of `H = ½|p|² + (K/2)(q₁ − q₂)² + ½q₂²` in the variables
/// `(q₁, q₂, p₁, p₂)`.
pub fn coupled_flow_matrix(k: f64, h: f64, alpha: f64) -> Result<DMatrix<f64>> {
    check_params(k, h, alpha)?;
    flow_matrix(&StiffSystem::coupled_oscillator(k)?, h, alpha)
}

/// `d = K²h⁴α² − 2Kh²α² − 2Kh²α + α² − 2α + 1`.
pub fn harmonic_discriminant(kh2: f64, alpha: f64) -> f64 {
    let a = alpha;
    kh2 * kh2 * a * a - 2.0 * kh2 * a * a - 2.0 * kh2 * a + a * a - 2.0 * a + 1.0
}

/// `Λ₁,₂ = (1 + α)/2 − Kh²α/2 ± ½√d`.
pub fn harmonic_eigenvalues(kh2: f64, alpha: f64) -> [Complex<f64>; 2] {
    let centre = 0.5 * (1.0 + alpha) - 0.5 * kh2 * alpha;
    let d = harmonic_discriminant(kh2, alpha);
    let root = if d >= 0.0 {
        Complex::new(0.5 * d.sqrt(), 0.0)
    } else {
        Complex::new(0.0, 0.5 * (-d).sqrt())
    };
    [Complex::new(centre, 0.0) + root, Complex::new(centre, 0.0) - root]
}

/// Weights where the discriminant changes sign, `(α₋, α₊)`.
pub fn alpha_pm(kh2: f64) -> Result<(f64, f64)> {
    if !(kh2 > 0.0 && kh2.is_finite()) {
        return Err(Error::InvalidParameter(format!("Kh² must be positive, got {kh2}")));
    }
    if kh2 == 1.0 {
        return Ok((0.25, 0.25));
    }
    let denom = (kh2 - 1.0).powi(2);
    let s = 2.0 * kh2.sqrt();
    Ok(((kh2 + 1.0 - s) / denom, (kh2 + 1.0 + s) / denom))
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 2 {
        let tr = m.trace();
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = tr * tr / 4.0 - det;
        let root = if disc >= 0.0 {
            Complex::new(disc.sqrt(), 0.0)
        } else {
            Complex::new(0.0, (-disc).sqrt())
        };
        let c = Complex::new(tr / 2.0, 0.0);
        return vec![c + root, c - root];
    }
    m.clone().complex_eigenvalues().iter().cloned().collect()
}

/// Spectral data of a linear one-step map.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFlowReport {
    pub matrix: DMatrix<f64>,
    /// Sorted by decreasing magnitude.
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    /// Trace discriminant `tr² − 4 det` of a 2×2 map.
    pub discriminant: Option<f64>,
}

pub fn eigen_report(matrix: &DMatrix<f64>) -> Result<LinearFlowReport> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            actual: matrix.ncols(),
            context: "flow matrix columns",
        });
    }
    let mut eig = eigenvalues(matrix);
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let discriminant = (matrix.nrows() == 2).then(|| {
        let tr = matrix.trace();
        tr * tr - 4.0 * matrix.determinant()
    });
    Ok(LinearFlowReport {
        matrix: matrix.clone(),
        spectral_radius: eig.first().map(|l| l.norm()).unwrap_or(0.0),
        eigenvalues: eig,
        discriminant,
    })
}

/// Reference closed form of the harmonic-oscillator flow matrix. Its
/// `(1,2)` entry carries `+Kαh³/4`, which the extracted map contradicts.
pub fn printed_harmonic_matrix(k: f64, h: f64, alpha: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[
            1.0 - k * alpha * h * h / 2.0,
            (1.0 + alpha) * h / 2.0 + k * alpha * h.powi(3) / 4.0,
            -k * h * alpha,
            alpha - k * alpha * h * h / 2.0,
        ],
    )
}

/// Reference closed form of the coupled-oscillator flow matrix, entry by
/// entry.
pub fn printed_coupled_matrix(k: f64, h: f64, a: f64) -> DMatrix<f64> {
    let h2 = h * h;
    let h3 = h2 * h;
    DMatrix::from_row_slice(
        4,
        4,
        &[
            // row 1
            k * a / 2.0 * h2 + 1.0,
            k * a / 2.0 * h2 + a * h2 / 4.0 - h2 / 4.0,
            -k * a / 4.0 * h3 + a * h / 4.0 + 3.0 * h / 4.0,
            k * a / 4.0 * h3 + a * h3 / 8.0 - a * h / 4.0 - h3 / 8.0 + h / 4.0,
            // row 2
            k * a / 2.0 * h2,
            -k * a / 2.0 * h2 - a * h2 / 4.0 - h2 / 4.0 + 1.0,
            k * a / 4.0 * h3 - a * h / 4.0 + h / 4.0,
            -k * a / 4.0 * h3 - a * h3 / 8.0 + a * h / 4.0 - h3 / 8.0 + 3.0 * h / 4.0,
            // row 3
            -k * a * h,
            k * a * h + a * h / 2.0 - h / 2.0,
            -k * a / 2.0 * h2 + a / 2.0 + 0.5,
            k * a / 2.0 * h2 + a * h2 / 4.0 - a / 2.0 - h2 / 4.0 + 0.5,
            // row 4
            k * a * h,
            -k * a * h - a * h / 2.0 - h / 2.0,
            k * a / 2.0 * h2 - a / 2.0 + 0.5,
            -k * a / 2.0 * h2 - a * h2 / 4.0 + a / 2.0 - h2 / 4.0 + 0.5,
        ],
    )
}

/// One entry of an extracted-versus-printed comparison (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntryDeviation {
    pub row: usize,
    pub col: usize,
    pub extracted: f64,
    pub printed: f64,
    pub abs_diff: f64,
}

pub fn compare_matrices(extracted: &DMatrix<f64>, printed: &DMatrix<f64>) -> Vec<EntryDeviation> {
    let mut out = Vec::with_capacity(extracted.len());
    for row in 0..extracted.nrows() {
        for col in 0..extracted.ncols() {
            let (e, p) = (extracted[(row, col)], printed[(row, col)]);
            out.push(EntryDeviation { row, col, extracted: e, printed: p, abs_diff: (e - p).abs() });
        }
    }
    out
}

/// `(x, y, p_x, p_y)` with `x = (q₁ − q₂)/2`, `y = (q₁ + q₂)/2` and the
/// conjugate momenta `p_x = p₁ − p₂`, `p_y = p₁ + p₂`.
pub fn fast_slow_transform(q: [f64; 2], p: [f64; 2]) -> [f64; 4] {
    [0.5 * (q[0] - q[1]), 0.5 * (q[0] + q[1]), p[0] - p[1], p[0] + p[1]]
}

/// Inverse of [`fast_slow_transform`], returning `(q, p)`.
pub fn fast_slow_inverse(v: [f64; 4]) -> ([f64; 2], [f64; 2]) {
    let [x, y, px, py] = v;
    ([x + y, y - x], [0.5 * (px + py), 0.5 * (py - px)])
}

/// Qualitative type of the harmonic blended map at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Complex pair (`d < 0`).
    Spiral,
    /// Real pair (`d > 0`).
    Node,
    /// `d = 0` to round-off.
    Degenerate,
}

impl Regime {
    pub fn classify(d: f64) -> Self {
        if d.abs() <= 1e-12 {
            Regime::Degenerate
        } else if d < 0.0 {
            Regime::Spiral
        } else {
            Regime::Node
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Spiral => "spiral",
            Regime::Node => "node",
            Regime::Degenerate => "degenerate",
        }
    }
}

/// One parameter point of a spectral scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub kh2: f64,
    pub alpha: f64,
    /// Eigenvalue magnitudes, decreasing.
    pub abs_lambda: Vec<f64>,
    /// Discriminant of the 2×2 harmonic map; absent for the coupled model.
    pub d: Option<f64>,
    pub regime: Option<Regime>,
}

/// Which linear test problem a scan uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearModel {
    Harmonic,
    Coupled,
}

/// Evaluates the extracted flow matrix at `h = √(Kh²/K)` for every `α`.
pub fn scan_alpha(model: LinearModel, k: f64, kh2: f64, alphas: &[f64]) -> Result<Vec<GridRow>> {
    if !(k > 0.0 && kh2 > 0.0) {
        return Err(Error::InvalidParameter(format!("need K > 0 and Kh² > 0, got K={k}, Kh²={kh2}")));
    }
    let h = (kh2 / k).sqrt();
    alphas
        .iter()
        .map(|&alpha| {
            let m = match model {
                LinearModel::Harmonic => harmonic_flow_matrix(k, h, alpha)?,
                LinearModel::Coupled => coupled_flow_matrix(k, h, alpha)?,
            };
            let report = eigen_report(&m)?;
            let d = match model {
                LinearModel::Harmonic => Some(harmonic_discriminant(kh2, alpha)),
                LinearModel::Coupled => None,
            };
            Ok(GridRow {
                kh2,
                alpha,
                abs_lambda: report.eigenvalues.iter().map(|l| l.norm()).collect(),
                d,
                regime: d.map(Regime::classify),
            })
        })
        .collect()
}

/// `n` equally spaced weights on `[0, 1]`, merged with the bifurcation
/// points that fall inside the interval, sorted.
pub fn alpha_grid(n: usize, kh2: Option<f64>) -> Result<Vec<f64>> {
    let mut alphas: Vec<f64> = match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    };
    if let Some(kh2) = kh2 {
        let (lo, hi) = alpha_pm(kh2)?;
        for a in [lo, hi] {
            if (0.0..=1.0).contains(&a) && !alphas.iter().any(|&b| (a - b).abs() < 1e-15) {
                alphas.push(a);
            }
        }
    }
    alphas.sort_by(f64::total_cmp);
    Ok(alphas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &DMatrix<f64>, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn harmonic_matrix_examples() {
        let h = 0.3;
        let m = harmonic_flow_matrix(2.0, h, 0.0).unwrap();
        // column-major: (1, 0, h/2, 0)
        assert!(close(&m, &[1.0, 0.0, h / 2.0, 0.0], 1e-15));
        let m = harmonic_flow_matrix(1.0, 1.0, 1.0).unwrap();
        assert!(close(&m, &[0.5, -1.0, 0.75, 0.5], 1e-15));
    }

    #[test]
    fn eigen_examples() {
        let r = eigen_report(&harmonic_flow_matrix(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!((r.discriminant.unwrap() + 3.0).abs() < 1e-14);
        assert!((harmonic_discriminant(1.0, 1.0) + 3.0).abs() < 1e-15);
        for l in &r.eigenvalues {
            assert!((l.re - 0.5).abs() < 1e-14);
            assert!((l.im.abs() - 3f64.sqrt() / 2.0).abs() < 1e-14);
            assert!((l.norm() - 1.0).abs() < 1e-14);
        }
        let r = eigen_report(&harmonic_flow_matrix(1.0, 0.5, 0.0).unwrap()).unwrap();
        assert!((r.eigenvalues[0].norm() - 1.0).abs() < 1e-15);
        assert!(r.eigenvalues[1].norm() < 1e-15);
    }

    #[test]
    fn alpha_pm_examples() {
        assert_eq!(alpha_pm(1.0).unwrap(), (0.25, 0.25));
        let (lo, hi) = alpha_pm(4.0).unwrap();
        assert!((lo - 1.0 / 9.0).abs() < 1e-15);
        assert!((hi - 1.0).abs() < 1e-15);
        assert!(alpha_pm(0.0).is_err());
    }

    #[test]
    fn printed_harmonic_matrix_differs_only_in_upper_right() {
        let (k, h, a) = (3.0, 0.2, 0.6);
        let dev = compare_matrices(&harmonic_flow_matrix(k, h, a).unwrap(), &printed_harmonic_matrix(k, h, a));
        for e in &dev {
            if (e.row, e.col) == (0, 1) {
                assert!((e.abs_diff - k * a * h.powi(3) / 2.0).abs() < 1e-14);
            } else {
                assert!(e.abs_diff < 1e-14);
            }
        }
    }

    #[test]
    fn coupled_verlet_branch() {
        let (k, h) = (10.0, 0.05);
        let m = coupled_flow_matrix(k, h, 1.0).unwrap();
        let sys = StiffSystem::coupled_oscillator(k).unwrap();
        let z = StateVector::from_slices(&[0.3, -0.2], &[1.0, 0.5]).unwrap();
        let sv = crate::integrators::stormer_verlet_step(&sys, &z, h).unwrap();
        assert!((m * z.to_flat() - sv.to_flat()).norm() < 1e-14);
    }

    #[test]
    fn coupled_multiplier_matches_closed_form() {
        // the tangential step on g = q₁ − q₂ uses λ = hp₂/4 + q₂/2 + (p₁ − p₂)/(2h)
        let (h, q, p) = (0.1, [0.4, -0.3], [0.7, 0.2]);
        let sys = StiffSystem::coupled_oscillator(5.0).unwrap();
        let z = StateVector::from_slices(&q, &p).unwrap();
        let out = crate::integrators::tangential_momentum_step(&sys, &z, h, 1e-14, 20).unwrap();
        let lambda = h * p[1] / 4.0 + q[1] / 2.0 + (p[0] - p[1]) / (2.0 * h);
        let q2_half = q[1] + h / 2.0 * p[1];
        // p' = p − h∇V(q½) − hλ(1, −1)
        let expected = [p[0] - h * lambda, p[1] - h * q2_half + h * lambda];
        assert!((out.p[0] - expected[0]).abs() < 1e-12);
        assert!((out.p[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn printed_coupled_matrix_report_covers_every_entry() {
        let (k, h, a) = (100.0, 0.025, 0.5);
        let dev = compare_matrices(&coupled_flow_matrix(k, h, a).unwrap(), &printed_coupled_matrix(k, h, a));
        assert_eq!(dev.len(), 16);
        assert!(dev.iter().all(|e| e.abs_diff.is_finite()));
    }

    #[test]
    fn coupled_spectrum_keeps_a_unit_pair_for_large_stiffness() {
        let k: f64 = 1e8;
        let h = (0.5 / k).sqrt();
        for i in 0..=20 {
            let a = i as f64 / 20.0;
            let r = eigen_report(&coupled_flow_matrix(k, h, a).unwrap()).unwrap();
            let near_one = r.eigenvalues.iter().filter(|l| (l.norm() - 1.0).abs() < 1e-3).count();
            assert!(near_one >= 2, "alpha {a}: {:?}", r.eigenvalues);
        }
    }

    #[test]
    fn transform_examples() {
        assert_eq!(fast_slow_transform([0.7, 0.7], [0.0, 0.0])[0], 0.0);
        let v = fast_slow_transform([1.0, -1.0], [0.0, 0.0]);
        assert_eq!((v[0], v[1]), (1.0, 0.0));
        let (q, p) = fast_slow_inverse(fast_slow_transform([0.3, -1.7], [2.5, 0.1]));
        assert!((q[0] - 0.3).abs() < 1e-14 && (q[1] + 1.7).abs() < 1e-14);
        assert!((p[0] - 2.5).abs() < 1e-14 && (p[1] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn alpha_grid_includes_bifurcation_points() {
        let g = alpha_grid(5, Some(1.0)).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = alpha_grid(3, Some(4.0)).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.contains(&(1.0 / 9.0)) || g.iter().any(|a| (a - 1.0 / 9.0).abs() < 1e-15));
        let rows = scan_alpha(LinearModel::Harmonic, 1.0, 1.0, &g).unwrap();
        assert_eq!(rows.len(), 4);
        let rows = scan_alpha(LinearModel::Coupled, 1.0, 1.0, &[0.0, 1.0]).unwrap();
        assert_eq!(rows[0].abs_lambda.len(), 4);
        assert!(rows[0].d.is_none());
    }

    proptest! {
        #[test]
        fn discriminant_sign_matches_bifurcation_interval(kh2 in 0.01f64..4.0, alpha in 0.0f64..=1.0) {
            prop_assume!((kh2 - 1.0).abs() > 1e-6);
            let (lo, hi) = alpha_pm(kh2).unwrap();
            // roots far outside [0, 1] (Kh² near 1) are checked relative to α²
            for root in [lo, hi] {
                prop_assert!(harmonic_discriminant(kh2, root).abs() <= 1e-8 * root.powi(2).max(1.0));
            }
            let d = harmonic_discriminant(kh2, alpha);
            if alpha > lo + 1e-9 && alpha < hi - 1e-9 {
                prop_assert!(d < 0.0);
            } else if alpha < lo - 1e-9 || alpha > hi + 1e-9 {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn eigenvalue_magnitudes_multiply_to_determinant(k in 0.1f64..100.0, kh2 in 0.01f64..1.9, alpha in 0.0f64..=1.0) {
            let h = (kh2 / k).sqrt();
            for m in [harmonic_flow_matrix(k, h, alpha).unwrap(), coupled_flow_matrix(k, h, alpha).unwrap()] {
                let r = eigen_report(&m).unwrap();
                let prod: f64 = r.eigenvalues.iter().map(|l| l.norm()).product();
                prop_assert!((prod - m.determinant().abs()).abs() <= 1e-10);
            }
        }
    }
}
