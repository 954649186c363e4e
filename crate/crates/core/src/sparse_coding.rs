//! Dictionary and sparse-code updates.
//!
//! Layout conventions: feature vectors are columns of a `d × n` matrix,
//! codes are columns of an `m × n` matrix, and the dictionary is `d × m`.
//!
//! The ℓ1 penalty on a code is smoothed into the weighted quadratic
//! `sᵀ diag(u) s` with `u_j = 1 / max(|s_prev_j|, ε)`, which equals `‖s‖₁`
//! when evaluated at `s = s_prev` and no entry is below the floor.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

/// Dictionary elements with their norm cap and constraint multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// `d × m`, column `j` is element `d_j`.
    pub elements: DMatrix<f64>,
    /// Upper bound `c` on every `‖d_j‖²`.
    pub norm_cap: f64,
    /// One non-negative multiplier per element.
    pub multipliers: Vec<f64>,
}

impl Dictionary {
    pub fn new(elements: DMatrix<f64>, norm_cap: f64, multipliers: Vec<f64>) -> Result<Self> {
        if multipliers.len() != elements.ncols() {
            return Err(Error::Dimension(format!(
                "{} multipliers for {} dictionary elements",
                multipliers.len(),
                elements.ncols()
            )));
        }
        if !(norm_cap > 0.0) {
            return Err(Error::Config(format!("norm cap must be positive, got {norm_cap}")));
        }
        if multipliers.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("multipliers must be non-negative".into()));
        }
        Ok(Self { elements, norm_cap, multipliers })
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.elements.ncols()
    }

    /// `‖d_j‖²` for every element.
    pub fn column_sq_norms(&self) -> Vec<f64> {
        column_sq_norms(&self.elements)
    }
}

pub fn column_sq_norms(d: &DMatrix<f64>) -> Vec<f64> {
    d.column_iter().map(|c| c.norm_squared()).collect()
}

/// Codes for `n` points, `m × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes(pub DMatrix<f64>);

impl SparseCodes {
    pub fn atoms(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ncols() == 0
    }

    pub fn code(&self, i: usize) -> &[f64] {
        let m = self.0.nrows();
        &self.0.as_slice()[i * m..(i + 1) * m]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Diagonal weights of the smoothed ℓ1 penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingWeights {
    pub weights: Vec<f64>,
    pub eps: f64,
}

impl SmoothingWeights {
    /// `sᵀ diag(u) s`.
    pub fn quadratic(&self, s: &[f64]) -> f64 {
        self.weights.iter().zip(s).map(|(u, v)| u * v * v).sum()
    }
}

fn check_dims(dict: &DMatrix<f64>, x: &[f64], s: &[f64]) -> Result<()> {
    if dict.nrows() != x.len() || dict.ncols() != s.len() {
        return Err(Error::Dimension(format!(
            "dictionary is {}×{}, feature vector has {} entries, code has {}",
            dict.nrows(),
            dict.ncols(),
            x.len(),
            s.len()
        )));
    }
    Ok(())
}

fn residual(dict: &DMatrix<f64>, x: &[f64], s: &[f64]) -> DVector<f64> {
    DVectorView::from_slice(x, x.len()) - dict * DVectorView::from_slice(s, s.len())
}

/// `‖x − D s‖²`.
pub fn reconstruction_error(dict: &DMatrix<f64>, x: &[f64], s: &[f64]) -> Result<f64> {
    check_dims(dict, x, s)?;
    Ok(residual(dict, x, s).norm_squared())
}

pub fn smoothing_weights(s_prev: &[f64], eps: f64) -> SmoothingWeights {
    SmoothingWeights { weights: s_prev.iter().map(|v| 1.0 / v.abs().max(eps)).collect(), eps }
}

/// Gradient of `g(s) = ‖x − D s‖² + C1 sᵀ diag(u) s + loss_termᵀ s`.
pub fn code_gradient(
    dict: &DMatrix<f64>,
    x: &[f64],
    s: &[f64],
    u: &SmoothingWeights,
    c1: f64,
    loss_term: &[f64],
) -> Result<Vec<f64>> {
    check_dims(dict, x, s)?;
    if u.weights.len() != s.len() || loss_term.len() != s.len() {
        return Err(Error::Dimension(format!(
            "code has {} entries, weights {}, loss term {}",
            s.len(),
            u.weights.len(),
            loss_term.len()
        )));
    }
    let back = dict.tr_mul(&residual(dict, x, s));
    Ok((0..s.len())
        .map(|j| -2.0 * back[j] + 2.0 * c1 * u.weights[j] * s[j] + loss_term[j])
        .collect())
}

/// `s_prev − η·grad`.
pub fn code_step(s_prev: &[f64], grad: &[f64], eta: f64) -> Vec<f64> {
    s_prev.iter().zip(grad).map(|(s, g)| s - eta * g).collect()
}

/// Ridge codes `(DᵀD + λI)⁻¹ Dᵀ x` for every column of `x`.
///
/// A near-singular system (λ = 0 with dependent elements) is retried with
/// λ = 1e-10.
pub fn ridge_codes(dict: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if dict.nrows() != x.nrows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows, data has {} features",
            dict.nrows(),
            x.nrows()
        )));
    }
    let gram = dict.tr_mul(dict);
    let rhs = dict.tr_mul(x);
    for ridge in [lambda, lambda.max(1e-10)] {
        let mut a = gram.clone();
        for j in 0..a.nrows() {
            a[(j, j)] += ridge;
        }
        if let Some(chol) = a.cholesky() {
            return Ok(chol.solve(&rhs));
        }
    }
    Err(Error::Singular { alpha_floor: lambda })
}

/// Sufficient statistics of the dictionary subproblem for fixed codes.
#[derive(Debug, Clone)]
pub struct DictionarySystem {
    /// `Σ x_i s_iᵀ`, `d × m`.
    cross: DMatrix<f64>,
    /// `Σ s_i s_iᵀ`, `m × m`.
    gram: DMatrix<f64>,
    /// `Σ ‖x_i‖²`.
    data_energy: f64,
}

impl DictionarySystem {
    pub fn new(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() != s.ncols() {
            return Err(Error::Dimension(format!("{} feature columns vs {} code columns", x.ncols(), s.ncols())));
        }
        Ok(Self { cross: x * s.transpose(), gram: s * s.transpose(), data_energy: x.norm_squared() })
    }

    pub fn atoms(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.data_energy.is_finite() && self.cross.iter().chain(self.gram.iter()).all(|v| v.is_finite())
    }

    /// Minimizer of the Lagrangian in `D` for the given multipliers.
    pub fn solve(&self, alphas: &[f64]) -> Result<DMatrix<f64>> {
        if alphas.len() != self.atoms() {
            return Err(Error::Dimension(format!("{} multipliers for {} atoms", alphas.len(), self.atoms())));
        }
        let mut a = self.gram.clone();
        for (j, alpha) in alphas.iter().enumerate() {
            a[(j, j)] += alpha;
        }
        let floor = alphas.iter().copied().fold(f64::INFINITY, f64::min);
        // D A = B  ⇔  A Dᵀ = Bᵀ, A symmetric
        let bt = self.cross.transpose();
        let dt = match a.clone().cholesky() {
            Some(chol) => chol.solve(&bt),
            None if floor > 0.0 => {
                // ill-conditioned; null directions of G are null for B too
                let svd = a.svd(true, true);
                let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
                svd.solve(&bt, tol).map_err(|_| Error::Singular { alpha_floor: floor })?
            }
            None => return Err(Error::Singular { alpha_floor: floor }),
        };
        if dt.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { alpha_floor: floor });
        }
        Ok(dt.transpose())
    }

    /// Lagrangian value at `(D, α)` for norm cap `c`.
    pub fn lagrangian(&self, dict: &DMatrix<f64>, alphas: &[f64], cap: f64) -> f64 {
        // Σ‖x − D s‖² = Σ‖x‖² − 2 tr(Dᵀ B) + tr(D G Dᵀ)
        let fit = self.data_energy - 2.0 * dict.dot(&self.cross) + (dict * &self.gram).dot(dict);
        let penalty: f64 =
            column_sq_norms(dict).iter().zip(alphas).map(|(n, a)| a * (n - cap)).sum();
        fit + penalty
    }

    /// Dual function `min_D L(D, α)`.
    pub fn dual_value(&self, alphas: &[f64], cap: f64) -> Result<f64> {
        let d = self.solve(alphas)?;
        Ok(self.lagrangian(&d, alphas, cap))
    }

    /// `∇_D L = −2 Σ (x_i − D s_i) s_iᵀ + 2 D diag(α)`.
    pub fn lagrangian_gradient(&self, dict: &DMatrix<f64>, alphas: &[f64]) -> DMatrix<f64> {
        let mut g = (dict * &self.gram - &self.cross) * 2.0;
        for (j, alpha) in alphas.iter().enumerate() {
            let col = dict.column(j) * (2.0 * alpha);
            let mut gc = g.column_mut(j);
            gc += col;
        }
        g
    }
}

/// `D = (Σ x_i s_iᵀ)(Σ s_i s_iᵀ + diag(α))⁻¹`.
pub fn solve_dictionary(x: &DMatrix<f64>, s: &DMatrix<f64>, alphas: &[f64]) -> Result<DMatrix<f64>> {
    DictionarySystem::new(x, s)?.solve(alphas)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualAscentResult {
    pub alphas: Vec<f64>,
    /// Dictionary solved at `alphas`.
    pub elements: DMatrix<f64>,
    pub converged: bool,
    pub steps: usize,
    /// `max_j max(0, ‖d_j‖² − c)` at `alphas`.
    pub max_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualAscentOptions {
    pub rate: f64,
    pub steps: usize,
    /// Stop once the projected dual gradient is this small.
    pub tol: f64,
    /// Lower bound applied by the projection.
    pub floor: f64,
}

impl Default for DualAscentOptions {
    fn default() -> Self {
        Self { rate: 0.1, steps: 50, tol: 1e-6, floor: 0.0 }
    }
}

fn kkt_residual(alphas: &[f64], grad: &[f64], floor: f64) -> f64 {
    alphas
        .iter()
        .zip(grad)
        .map(|(&a, &g)| if a > floor { g.abs() } else { g.max(0.0) })
        .fold(0.0, f64::max)
}

/// Projected gradient ascent on the constraint multipliers.
///
/// The dual gradient in `α_j` is `‖d_j(α)‖² − c`. Iteration stops when the
/// projected gradient falls below `opts.tol`; otherwise the iterate with the
/// highest dual value is returned with `converged = false`.
pub fn dual_ascent_alphas(
    system: &DictionarySystem,
    cap: f64,
    alphas0: &[f64],
    opts: &DualAscentOptions,
) -> Result<DualAscentResult> {
    if !(opts.rate > 0.0) {
        return Err(Error::Config(format!("dual ascent rate must be positive, got {}", opts.rate)));
    }
    if alphas0.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::Config("initial multipliers must be non-negative".into()));
    }
    let mut alphas: Vec<f64> = alphas0.iter().map(|a| a.max(opts.floor)).collect();
    let mut best: Option<(f64, Vec<f64>, DMatrix<f64>)> = None;

    for step in 0..=opts.steps {
        let d = system.solve(&alphas)?;
        let grad: Vec<f64> = column_sq_norms(&d).iter().map(|n| n - cap).collect();
        if kkt_residual(&alphas, &grad, opts.floor) <= opts.tol {
            let max_violation = grad.iter().fold(0.0f64, |m, g| m.max(*g));
            return Ok(DualAscentResult { alphas, elements: d, converged: true, steps: step, max_violation });
        }
        let value = system.lagrangian(&d, &alphas, cap);
        if best.as_ref().map_or(true, |(v, _, _)| value > *v) {
            best = Some((value, alphas.clone(), d));
        }
        if step == opts.steps {
            break;
        }
        for (a, g) in alphas.iter_mut().zip(&grad) {
            *a = (*a + opts.rate * g).max(opts.floor);
        }
    }

    let (_, alphas, elements) = best.expect("at least one iterate is evaluated");
    let max_violation = column_sq_norms(&elements).iter().fold(0.0f64, |m, n| m.max(n - cap));
    Ok(DualAscentResult { alphas, elements, converged: false, steps: opts.steps, max_violation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn reconstruction_examples() {
        let d = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(reconstruction_error(&d, &[3.0, 4.0], &[0.0, 0.0]).unwrap(), 25.0);
        assert_eq!(reconstruction_error(&d, &[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(reconstruction_error(&m(1, 1, &[2.0]), &[3.0], &[1.0]).unwrap(), 1.0);
        assert!(matches!(reconstruction_error(&d, &[1.0], &[1.0, 1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smoothing_weights(&[1.0, -2.0], 1e-8).weights, vec![1.0, 0.5]);
        assert_eq!(smoothing_weights(&[0.0, 1.0], 1e-3).weights, vec![1000.0, 1.0]);
        let s = [1.0, -2.0];
        assert_eq!(smoothing_weights(&s, 1e-8).quadratic(&s), 3.0);
    }

    #[test]
    fn gradient_examples() {
        let d = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let u = smoothing_weights(&[1.0, 1.0], 1e-8);
        let g = code_gradient(&d, &[1.0, 2.0], &[1.0, 2.0], &u, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);

        let u = smoothing_weights(&[0.0], 1e-8);
        let g = code_gradient(&m(1, 1, &[1.0]), &[2.0], &[0.0], &u, 0.7, &[0.0]).unwrap();
        assert_eq!(g, vec![-4.0]);

        assert!(code_gradient(&d, &[1.0, 2.0], &[1.0, 2.0], &u, 0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn step_examples() {
        assert_eq!(code_step(&[1.0, 2.0], &[0.0, 0.0], 0.3), vec![1.0, 2.0]);
        assert_eq!(code_step(&[1.0, 0.0], &[1.0, -1.0], 0.5), vec![0.5, 0.5]);
    }

    #[test]
    fn steps_converge_on_quadratic() {
        // g(s) = ‖x − D s‖² with D = diag(1, 2); curvature bound 2·4 = 8.
        let d = m(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let x = [1.0, -4.0];
        let u = smoothing_weights(&[1.0, 1.0], 1e-8);
        let mut s = vec![0.0, 0.0];
        for _ in 0..500 {
            let g = code_gradient(&d, &x, &s, &u, 0.0, &[0.0, 0.0]).unwrap();
            s = code_step(&s, &g, 0.1);
        }
        assert!((s[0] - 1.0).abs() < 1e-10 && (s[1] + 2.0).abs() < 1e-10, "{s:?}");
    }

    #[test]
    fn dictionary_examples() {
        // identity Gram, zero multipliers → D = Σ x_i s_iᵀ
        let x = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = DMatrix::identity(2, 2);
        assert_eq!(solve_dictionary(&x, &s, &[0.0, 0.0]).unwrap(), x);

        let d = solve_dictionary(&m(1, 1, &[2.0]), &m(1, 1, &[1.0]), &[1.0]).unwrap();
        assert!((d[(0, 0)] - 1.0).abs() < 1e-15);

        let err = solve_dictionary(&m(1, 2, &[1.0, 1.0]), &DMatrix::zeros(1, 2), &[0.0]);
        assert!(matches!(err, Err(Error::Singular { .. })));
    }

    #[test]
    fn dual_ascent_examples() {
        // unconstrained D = 2 violates ‖D‖² ≤ 1; optimum D = 1, α = 1
        let sys = DictionarySystem::new(&m(1, 1, &[2.0]), &m(1, 1, &[1.0])).unwrap();
        let opts = DualAscentOptions { steps: 10_000, ..Default::default() };
        let r = dual_ascent_alphas(&sys, 1.0, &[1e-3], &opts).unwrap();
        assert!(r.converged);
        assert!((r.alphas[0] - 1.0).abs() < 1e-5, "{:?}", r.alphas);
        assert!((r.elements[(0, 0)] - 1.0).abs() < 1e-5);

        // inactive constraint → α stays at zero
        let r = dual_ascent_alphas(&sys, 10.0, &[0.0], &opts).unwrap();
        assert!(r.converged);
        assert_eq!(r.alphas, vec![0.0]);
        assert_eq!(r.steps, 0);

        // too few steps → best iterate, not converged
        let r = dual_ascent_alphas(&sys, 1.0, &[1e-3], &DualAscentOptions { steps: 2, ..Default::default() })
            .unwrap();
        assert!(!r.converged);

        assert!(dual_ascent_alphas(&sys, 1.0, &[-1.0], &opts).is_err());
    }

    #[test]
    fn ridge_recovers_dictionary_column() {
        let d = m(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let x = m(3, 1, &[0.0, 1.0, 1.0]);
        let s = ridge_codes(&d, &x, 0.0).unwrap();
        assert!((s[(0, 0)]).abs() < 1e-12 && (s[(1, 0)] - 1.0).abs() < 1e-12);
    }
}
