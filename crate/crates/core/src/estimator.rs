//! Two-stage semidefinite-relaxation estimator.
//!
//! The cone-angle equations are pseudo-linearized as `F h ≈ B n` with the
//! stacked unknown `h = [g, ρᵀ, r₁, …, r_N]ᵀ`, `r_i = ‖ρ − s_i g‖`. Lifting
//! `H = h hᵀ` and dropping the rank constraint gives an SDP whose feasible set
//! is tightened with second-order-cone rows that `h hᵀ` satisfies at the
//! truth. The estimate is read off the dominant eigenvector of the solution.
//!
//! Index layout of `h` (0-based): `0` is `g`, `1..=3` is `ρ`, `4 + i` is `r_i`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::conic::{ConicBackend, ConicProblem, Equality, InteriorPoint, LinearForm, SocRow, SolverReport, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::geometry::{direction_angles, SourceMpr};
use crate::measurement::{Measurements, Scenario, SensorArray};

/// Lower bound applied to `sin ψ` when building `B`.
pub const SIN_FLOOR: f64 = 1e-6;
/// Components of `ρ̂` smaller than this get no sign-tightening rows.
pub const SIGN_THRESHOLD: f64 = 0.05;
/// Condition number above which `(BQBᵀ)⁻¹` is rejected in favor of `Q⁻¹`.
pub const WEIGHT_CONDITION_LIMIT: f64 = 1e14;
/// Smallest sensor count accepted by [`Estimator::estimate`].
pub const MIN_SENSORS: usize = 4;

const RHO: usize = 1;
const RANGES: usize = 4;

/// The stacked unknown `[g, ρᵀ, r₁, …, r_N]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedUnknown(pub DVector<f64>);

impl StackedUnknown {
    /// Builds `h°` for a source at finite or infinite range.
    pub fn from_source(sensors: &[SensorArray], source: &SourceMpr) -> Self {
        let rho = source.bearing().into_vector();
        let g = source.inverse_range;
        let mut h = DVector::zeros(RANGES + sensors.len());
        h[0] = g;
        h.fixed_rows_mut::<3>(RHO).copy_from(&rho);
        for (i, s) in sensors.iter().enumerate() {
            h[RANGES + i] = (rho - s.position * g).norm();
        }
        Self(h)
    }

    pub fn g(&self) -> f64 {
        self.0[0]
    }

    pub fn rho(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(RHO).into_owned()
    }

    pub fn ranges(&self) -> &[f64] {
        &self.0.as_slice()[RANGES..]
    }

    pub fn n_sensors(&self) -> usize {
        self.0.len() - RANGES
    }

    /// Largest violation of `‖ρ‖ = 1` and `r_i = ‖ρ − s_i g‖`.
    pub fn constraint_residual(&self, sensors: &[SensorArray]) -> f64 {
        let rho = self.rho();
        let g = self.g();
        sensors
            .iter()
            .zip(self.ranges())
            .map(|(s, r)| (r - (rho - s.position * g).norm()).abs())
            .fold((rho.norm() - 1.0).abs(), f64::max)
    }
}

/// `F = [F₁, F₂]` with row `i` equal to `[a_iᵀs_i, −a_iᵀ, 0…, cos ψ_i, …0]`.
pub fn build_f(sensors: &[SensorArray], angles: &Measurements) -> Result<DMatrix<f64>> {
    let n = sensors.len();
    if angles.len() != n {
        return Err(Error::InvalidInput(format!("{} angles for {n} sensors", angles.len())));
    }
    let mut f = DMatrix::zeros(n, RANGES + n);
    for (i, (s, psi)) in sensors.iter().zip(angles.as_slice()).enumerate() {
        let a = s.attitude();
        f[(i, 0)] = a.dot(&s.position);
        for k in 0..3 {
            f[(i, RHO + k)] = -a[k];
        }
        f[(i, RANGES + i)] = psi.cos();
    }
    Ok(f)
}

/// `B = −diag(r_i sin ψ_i)`, with `sin ψ_i` floored at [`SIN_FLOOR`].
pub fn build_b(angles: &Measurements, ranges: &[f64]) -> Result<DMatrix<f64>> {
    if angles.len() != ranges.len() {
        return Err(Error::InvalidInput("angle and range counts differ".into()));
    }
    if ranges.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidInput("normalized ranges must be positive".into()));
    }
    let diag = DVector::from_iterator(
        ranges.len(),
        angles
            .as_slice()
            .iter()
            .zip(ranges)
            .map(|(psi, r)| -r * psi.sin().max(SIN_FLOOR)),
    );
    Ok(DMatrix::from_diagonal(&diag))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weighting {
    pub matrix: DMatrix<f64>,
    /// Set when `BQBᵀ` was too ill-conditioned and `Q⁻¹` was used instead.
    pub fell_back: bool,
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let eig = m.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(lo > 0.0) {
        return None;
    }
    let inv = m.clone().cholesky()?.inverse();
    Some(((&inv + inv.transpose()) * 0.5, hi / lo))
}

/// `W = (BQBᵀ)⁻¹`, falling back to `Q⁻¹` when the condition number exceeds
/// [`WEIGHT_CONDITION_LIMIT`].
pub fn weighting(b: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<Weighting> {
    let bqb = b * q * b.transpose();
    let bqb = (&bqb + bqb.transpose()) * 0.5;
    match spd_inverse(&bqb) {
        Some((w, cond)) if cond <= WEIGHT_CONDITION_LIMIT => Ok(Weighting {
            matrix: w,
            fell_back: false,
        }),
        _ => {
            let (w, _) = spd_inverse(q)
                .ok_or_else(|| Error::InvalidInput("noise covariance is not positive definite".into()))?;
            Ok(Weighting {
                matrix: w,
                fell_back: true,
            })
        }
    }
}

/// Sign of the source's coordinate along one axis, used to orient the
/// bilinear tightening rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignHint {
    Positive,
    Negative,
    Skip,
}

impl SignHint {
    pub fn from_component(v: f64, threshold: f64) -> Self {
        if v.abs() < threshold {
            Self::Skip
        } else if v > 0.0 {
            Self::Positive
        } else {
            Self::Negative
        }
    }

    fn factor(self) -> Option<f64> {
        match self {
            Self::Positive => Some(1.0),
            Self::Negative => Some(-1.0),
            Self::Skip => None,
        }
    }
}

/// `‖H[1:3, col] − s H[0, col]‖ ≤ sign · H[rhs_row, rhs_col]`.
fn tightening_row(s: &Vector3<f64>, col: usize, rhs: (usize, usize), sign: f64) -> SocRow {
    let selector = (0..3)
        .map(|k| {
            let mut f = LinearForm::new();
            f.add(RHO + k, col, 1.0).add(0, col, -s[k]);
            f
        })
        .collect();
    let mut r = LinearForm::new();
    r.add(rhs.0, rhs.1, sign);
    SocRow { rhs: r, selector }
}

/// Assembles the tightened relaxation over `H ⪰ 0` of size `N + 4`.
///
/// Rows, in order: `tr{H[1:3,1:3]} = 1`; `tr{C_iᵀC_i H} = H[4+i,4+i]`;
/// `‖H[1:3,0] − s_i H[0,0]‖ ≤ H[4+i,0]`; for all ordered pairs
/// `‖H[1:3,4+j] − s_i H[0,4+j]‖ ≤ H[4+j,4+i]`; and, per hinted axis `j`,
/// `‖H[1:3,1+j] − s_i H[0,1+j]‖ ≤ sign_j H[1+j,4+i]`.
pub fn assemble_sdp(
    f: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sensors: &[SensorArray],
    sign_hints: Option<[SignHint; 3]>,
) -> Result<ConicProblem> {
    let n = sensors.len();
    let m = RANGES + n;
    if f.nrows() != n || f.ncols() != m || w.nrows() != n || w.ncols() != n {
        return Err(Error::InvalidInput("design matrix dimensions disagree with sensor count".into()));
    }
    let obj = f.transpose() * w * f;
    let mut problem = ConicProblem::new((&obj + obj.transpose()) * 0.5);

    let mut unit_norm = DMatrix::zeros(m, m);
    for k in 0..3 {
        unit_norm[(RHO + k, RHO + k)] = 1.0;
    }
    problem.equalities.push(Equality { a: unit_norm, b: 1.0 });

    for (i, s) in sensors.iter().enumerate() {
        // C_iᵀC_i with C_i = [−s_i, I₃, 0], minus the r_i² selector.
        let p = s.position;
        let mut a = DMatrix::zeros(m, m);
        a[(0, 0)] = p.norm_squared();
        for k in 0..3 {
            a[(0, RHO + k)] = -p[k];
            a[(RHO + k, 0)] = -p[k];
            a[(RHO + k, RHO + k)] = 1.0;
        }
        a[(RANGES + i, RANGES + i)] = -1.0;
        problem.equalities.push(Equality { a, b: 0.0 });
    }

    for (i, s) in sensors.iter().enumerate() {
        problem.socs.push(tightening_row(&s.position, 0, (RANGES + i, 0), 1.0));
    }
    for (i, s) in sensors.iter().enumerate() {
        for j in 0..n {
            problem
                .socs
                .push(tightening_row(&s.position, RANGES + j, (RANGES + j, RANGES + i), 1.0));
        }
    }
    if let Some(hints) = sign_hints {
        for (i, s) in sensors.iter().enumerate() {
            for (j, hint) in hints.iter().enumerate() {
                if let Some(sign) = hint.factor() {
                    problem
                        .socs
                        .push(tightening_row(&s.position, RHO + j, (RHO + j, RANGES + i), sign));
                }
            }
        }
    }
    Ok(problem)
}

/// Rank-one readout `h = √λ₁ v₁` plus the ratio `λ₁/λ₂`.
///
/// The global sign makes the range entries sum positive; with no range
/// entries it makes `h[0] ≥ 0`.
pub fn recover_h(h_star: &DMatrix<f64>) -> Result<(StackedUnknown, f64)> {
    let m = h_star.nrows();
    if m < RANGES || !h_star.is_square() {
        return Err(Error::InvalidInput(format!("matrix of size {m} too small")));
    }
    let sym = (h_star + h_star.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]];
    if !(l1 > 0.0) {
        return Err(Error::Degenerate(format!("dominant eigenvalue {l1:e} is not positive")));
    }
    let l2 = if m > 1 { eig.eigenvalues[order[1]] } else { 0.0 };
    let ratio = l1 / l2.max(l1 * f64::EPSILON);

    let mut h = eig.eigenvectors.column(order[0]) * l1.sqrt();
    let range_sum: f64 = h.rows(RANGES, m - RANGES).sum();
    let flip = if range_sum != 0.0 { range_sum < 0.0 } else { h[0] < 0.0 };
    if flip {
        h.neg_mut();
    }
    Ok((StackedUnknown(h), ratio))
}

/// Reads azimuth, elevation and inverse range out of `h`.
pub fn recover_mpr(h: &StackedUnknown) -> Result<SourceMpr> {
    let rho = h.rho();
    let norm = rho.norm();
    if !(norm > 1e-12) {
        return Err(Error::Degenerate("bearing block of h is zero".into()));
    }
    let (azimuth, elevation) = direction_angles(&(rho / norm));
    SourceMpr::new(azimuth, elevation, h.g().max(0.0))
}

/// Which solve produced an [`EstimationResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// First pass, `W = Q⁻¹`, no sign rows.
    Initial,
    /// Second pass with `W = (BQBᵀ)⁻¹` and sign rows.
    Refined,
    /// The second pass failed; the first-pass result is returned.
    InitialFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub estimate: SourceMpr,
    /// Recovered `h` in physical units.
    pub h_star: StackedUnknown,
    pub eig_ratio: f64,
    pub constraint_residual: f64,
    pub stage: Stage,
    pub solver: SolverReport,
    /// The refined pass kept `W = Q⁻¹` because `BQBᵀ` was ill-conditioned.
    pub weighting_fell_back: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub tol: f64,
    pub sign_threshold: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            sign_threshold: SIGN_THRESHOLD,
        }
    }
}

pub struct Estimator {
    backend: Box<dyn ConicBackend>,
    pub config: EstimatorConfig,
}

impl Default for Estimator {
    fn default() -> Self {
        Self::new(Box::new(InteriorPoint::default()), EstimatorConfig::default())
    }
}

struct Pass {
    h: StackedUnknown,
    eig_ratio: f64,
    report: SolverReport,
}

impl Estimator {
    pub fn new(backend: Box<dyn ConicBackend>, config: EstimatorConfig) -> Self {
        Self { backend, config }
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    fn solve_pass(
        &self,
        sensors: &[SensorArray],
        f: &DMatrix<f64>,
        w: &DMatrix<f64>,
        hints: Option<[SignHint; 3]>,
    ) -> Result<Pass> {
        let problem = assemble_sdp(f, w, sensors, hints)?;
        let sol = self.backend.solve(&problem, self.config.tol)?;
        if !sol.report.status.is_usable() {
            return Err(Error::Solver {
                status: sol.report.status,
            });
        }
        let (h, eig_ratio) = recover_h(&sol.h)?;
        Ok(Pass {
            h,
            eig_ratio,
            report: sol.report,
        })
    }

    /// Runs both passes on `angles` measured by `scenario`'s sensors.
    pub fn estimate(&self, scenario: &Scenario, angles: &Measurements) -> Result<EstimationResult> {
        let n = scenario.n_sensors();
        if n < MIN_SENSORS {
            return Err(Error::InvalidInput(format!("need at least {MIN_SENSORS} sensors, got {n}")));
        }
        // Work in units where the farthest sensor sits at distance 1; g scales
        // by the same factor and every cone angle is unchanged.
        let scale = scenario
            .sensors
            .iter()
            .map(|s| s.position.norm())
            .fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let sensors: Vec<SensorArray> = scenario.sensors.iter().map(|s| s.scaled(1.0 / scale)).collect();

        let q = match scenario.covariance() {
            Some(c) => c.matrix().clone(),
            None => DMatrix::identity(n, n),
        };
        let f = build_f(&sensors, angles)?;

        let q_inv = weighting(&DMatrix::identity(n, n), &q)?.matrix;
        let first = self.solve_pass(&sensors, &f, &q_inv, None)?;
        let rho = first.h.rho() / first.h.rho().norm();
        let hints = [0, 1, 2].map(|k| SignHint::from_component(rho[k], self.config.sign_threshold));

        let first_est = recover_mpr(&first.h)?;
        let g_first = first_est.inverse_range;
        let ranges: Vec<f64> = sensors.iter().map(|s| (rho - s.position * g_first).norm()).collect();
        let refined = build_b(angles, &ranges)
            .and_then(|b| weighting(&b, &q))
            .and_then(|w| Ok((self.solve_pass(&sensors, &f, &w.matrix, Some(hints))?, w.fell_back)));

        let (pass, stage, fell_back) = match refined {
            Ok((p, fb)) => (p, Stage::Refined, fb),
            Err(_) => (first, Stage::InitialFallback, false),
        };

        let mut h = pass.h;
        h.0[0] /= scale;
        let estimate = recover_mpr(&h)?;
        Ok(EstimationResult {
            estimate,
            constraint_residual: h.constraint_residual(&scenario.sensors),
            h_star: h,
            eig_ratio: pass.eig_ratio,
            stage,
            solver: pass.report,
            weighting_fell_back: fell_back,
        })
    }
}

/// Two-stage estimate with the default backend and configuration.
pub fn estimate(scenario: &Scenario, angles: &Measurements) -> Result<EstimationResult> {
    Estimator::default().estimate(scenario, angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cartesian_to_mpr, CartesianPoint};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

    fn sensor(p: [f64; 3], a: [f64; 3]) -> SensorArray {
        SensorArray::new(Vector3::from(p), Vector3::from(a)).unwrap()
    }

    #[test]
    fn f_rows_by_substitution() {
        let f = build_f(&[sensor([2.0, 0.0, 0.0], [1.0, 0.0, 0.0])], &Measurements(vec![std::f64::consts::FRAC_PI_3])).unwrap();
        let expect = [2.0, -1.0, 0.0, 0.0, 0.5];
        for (k, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(f[(0, k)], *e, epsilon = 1e-15);
        }
        let f = build_f(&[sensor([0.0; 3], [0.0, 0.0, 1.0])], &Measurements(vec![FRAC_PI_2])).unwrap();
        let expect = [0.0, 0.0, 0.0, -1.0, 0.0];
        for (k, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(f[(0, k)], *e, epsilon = 1e-15);
        }
        assert!(build_f(&[sensor([0.0; 3], [0.0, 0.0, 1.0])], &Measurements(vec![])).is_err());
    }

    #[test]
    fn b_diagonal_and_floor() {
        let b = build_b(&Measurements(vec![FRAC_PI_2, FRAC_PI_2]), &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(b, -DMatrix::identity(2, 2), epsilon = 1e-15);
        let b = build_b(&Measurements(vec![FRAC_PI_6]), &[2.0]).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], -1.0, epsilon = 1e-15);
        let b = build_b(&Measurements(vec![1e-9]), &[3.0]).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], -3.0 * SIN_FLOOR, epsilon = 1e-20);
        assert!(build_b(&Measurements(vec![1.0]), &[0.0]).is_err());
    }

    #[test]
    fn weighting_cases() {
        let w = weighting(&-DMatrix::identity(3, 3), &DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(w.matrix, DMatrix::identity(3, 3), epsilon = 1e-15);
        let w = weighting(&DMatrix::from_element(1, 1, -2.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_abs_diff_eq!(w.matrix[(0, 0)], 1.0 / 16.0, epsilon = 1e-15);
        assert!(!w.fell_back);
    }

    #[test]
    fn weighting_inverse_check() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.3, 0.8, 0.0, -0.2, 0.5, 1.1]);
        let q = &l * l.transpose() * 1e-4;
        let b = DMatrix::from_diagonal(&DVector::from_column_slice(&[-0.7, -1.3, -0.4]));
        let w = weighting(&b, &q).unwrap();
        let prod = &w.matrix * (&b * &q * b.transpose());
        assert_abs_diff_eq!(prod, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn weighting_falls_back_when_ill_conditioned() {
        let b = DMatrix::from_diagonal(&DVector::from_column_slice(&[-1.0, -1e-8]));
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 4.0]));
        let w = weighting(&b, &q).unwrap();
        assert!(w.fell_back);
        assert_abs_diff_eq!(w.matrix[(1, 1)], 0.25, epsilon = 1e-15);
    }

    fn ring(n: usize) -> Vec<SensorArray> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 2.0 * std::f64::consts::PI / n as f64;
                sensor(
                    [200.0 * t.cos(), 200.0 * t.sin(), 40.0 * (3.0 * t).sin()],
                    [t.sin(), 0.4, (2.0 * t).cos()],
                )
            })
            .collect()
    }

    #[test]
    fn counts_rows() {
        let sensors = ring(2);
        let f = DMatrix::zeros(2, 6);
        let p = assemble_sdp(&f, &DMatrix::identity(2, 2), &sensors, None).unwrap();
        assert_eq!((p.dim, p.equalities.len(), p.socs.len()), (6, 3, 6));

        let sensors = ring(12);
        let f = DMatrix::zeros(12, 16);
        let hints = Some([SignHint::Positive, SignHint::Negative, SignHint::Positive]);
        let p = assemble_sdp(&f, &DMatrix::identity(12, 12), &sensors, hints).unwrap();
        assert_eq!((p.dim, p.equalities.len(), p.socs.len()), (16, 13, 12 + 144 + 36));
        let hints = Some([SignHint::Positive, SignHint::Skip, SignHint::Positive]);
        let p = assemble_sdp(&f, &DMatrix::identity(12, 12), &sensors, hints).unwrap();
        assert_eq!(p.socs.len(), 12 + 144 + 24);
    }

    #[test]
    fn truth_is_feasible_and_zero_cost() {
        let sensors = ring(6);
        let truth = cartesian_to_mpr(&CartesianPoint::new(-400.0, 700.0, 350.0)).unwrap();
        let sc = Scenario::noiseless(sensors.clone(), Some(truth)).unwrap();
        let angles = sc.true_angles().unwrap();
        let h = StackedUnknown::from_source(&sensors, &truth);
        let f = build_f(&sensors, &angles).unwrap();
        assert!((&f * &h.0).amax() < 1e-10);

        let rho = h.rho();
        let hints = [0, 1, 2].map(|k| SignHint::from_component(rho[k], 0.05));
        let p = assemble_sdp(&f, &DMatrix::identity(6, 6), &sensors, Some(hints)).unwrap();
        let hh = &h.0 * h.0.transpose();
        assert!(p.max_equality_residual(&hh) < 1e-9);
        assert!(p.max_soc_violation(&hh) < 1e-9);
        assert!(p.objective_value(&hh).abs() < 1e-12);
    }

    #[test]
    fn rank_one_readout() {
        let mut v = DVector::zeros(8);
        v[0] = 0.001;
        v[1] = 1.0;
        v[4] = 1.0;
        v[5] = 0.9;
        let (h, ratio) = recover_h(&(&v * v.transpose())).unwrap();
        assert_abs_diff_eq!(h.0, v, epsilon = 1e-12);
        assert!(ratio > 1e10);

        let (h, ratio) = recover_h(&DMatrix::identity(6, 6)).unwrap();
        assert_abs_diff_eq!(h.0.norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ratio, 1.0, epsilon = 1e-12);

        assert!(recover_h(&-DMatrix::identity(5, 5)).is_err());
    }

    #[test]
    fn mpr_readout() {
        let mut h = DVector::zeros(6);
        h[0] = 0.001;
        h[1] = 1.0;
        let u = recover_mpr(&StackedUnknown(h)).unwrap();
        assert_eq!((u.azimuth, u.elevation), (0.0, 0.0));
        assert_abs_diff_eq!(u.inverse_range, 0.001, epsilon = 1e-18);

        let mut h = DVector::zeros(6);
        h[3] = 1.0;
        let u = recover_mpr(&StackedUnknown(h)).unwrap();
        assert_eq!((u.azimuth, u.elevation, u.inverse_range), (0.0, FRAC_PI_2, 0.0));

        let sensors = ring(4);
        let p = CartesianPoint::new(300.0, -400.0, 1200.0);
        let truth = cartesian_to_mpr(&p).unwrap();
        let mut h = StackedUnknown::from_source(&sensors, &truth);
        // Readout is invariant to the overall scale of ρ.
        h.0.fixed_rows_mut::<3>(1).scale_mut(2.5);
        let u = recover_mpr(&h).unwrap();
        assert_abs_diff_eq!(u.azimuth, (-400.0f64).atan2(300.0), epsilon = 1e-14);
        assert_abs_diff_eq!(u.elevation, 1200.0f64.atan2(500.0), epsilon = 1e-14);
        assert_abs_diff_eq!(u.inverse_range, 1.0 / 1300.0, epsilon = 1e-18);

        assert!(recover_mpr(&StackedUnknown(DVector::zeros(6))).is_err());
    }

    #[test]
    fn too_few_sensors_rejected() {
        let sensors = ring(3);
        let sc = Scenario::noiseless(sensors, Some(SourceMpr::new(0.1, 0.2, 1e-3).unwrap())).unwrap();
        let angles = sc.true_angles().unwrap();
        assert!(matches!(estimate(&sc, &angles), Err(Error::InvalidInput(_))));
    }
}

#[cfg(test)]
mod pipeline_tests {
    use super::*;
    use crate::geometry::{angle_diff, cartesian_to_mpr, CartesianPoint};

    #[test]
    fn noiseless_recovery() {
        let sensors: Vec<SensorArray> = [
            ([120.0, -80.0, 30.0], [0.3, 0.9, 0.1]),
            ([-150.0, 60.0, -40.0], [0.8, -0.2, 0.5]),
            ([40.0, 200.0, 90.0], [-0.4, 0.1, 0.9]),
            ([-90.0, -170.0, 10.0], [0.6, 0.6, -0.5]),
            ([210.0, 100.0, -120.0], [-0.7, 0.2, 0.4]),
            ([0.0, 30.0, 220.0], [0.1, -0.9, 0.3]),
        ]
        .iter()
        .map(|(p, a)| SensorArray::new(Vector3::from(*p), Vector3::from(*a)).unwrap())
        .collect();
        let truth = cartesian_to_mpr(&CartesianPoint::new(800.0, 500.0, 300.0)).unwrap();
        let sc = Scenario::noiseless(sensors, Some(truth)).unwrap();
        let angles = sc.true_angles().unwrap();
        let r = estimate(&sc, &angles).unwrap();
        assert!(angle_diff(r.estimate.azimuth, truth.azimuth).abs() < 1e-4);
        assert!((r.estimate.elevation - truth.elevation).abs() < 1e-4);
        assert!((r.estimate.inverse_range - truth.inverse_range).abs() / truth.inverse_range < 1e-3);
        let h0 = StackedUnknown::from_source(&sc.sensors, &truth);
        assert!((&r.h_star.0 - &h0.0).norm() / h0.0.norm() < 1e-4);
        assert!(r.solver.objective_value <= 1e-8);
        assert!(r.eig_ratio >= 1.0);
        assert_eq!(r.stage, Stage::Refined);
    }
}
