//! Cramér-Rao lower bound on `(φ, θ, g)`.
//!
//! Derivatives are taken with respect to `ω = [ρᵀ, g]ᵀ`. Because every cone
//! angle is unchanged when `ρ` and `g` scale together, the Fisher information
//! in `ω` always has `[ρᵀ, g]ᵀ` in its null space. The bound is therefore
//! taken on the three directions that `(φ, θ, g)` actually move `ω`:
//! `cov_ω = P (PᵀFP)⁻¹ Pᵀ` with `P = ∂ω/∂ũ`, and `cov_ũ = D cov_ω Dᵀ`,
//! which reduces to `(PᵀFP)⁻¹` since `DP = I`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, Matrix4x3, Vector3};

use crate::error::{Error, Result};
use crate::measurement::{Scenario, SensorArray};

/// `|sin ψ|` below which the Jacobians are refused.
pub const MIN_SIN_ANGLE: f64 = 1e-6;
/// Largest accepted condition number of the reduced Fisher information.
pub const FIM_CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct CrlbResult {
    /// Bound on `(φ, θ, g)`.
    pub cov_mpr: Matrix3<f64>,
    /// Bound on `(ρ, g)`, rank three.
    pub cov_omega: Matrix4<f64>,
    /// Condition number of the 3×3 Fisher information that was inverted.
    pub condition: f64,
}

impl CrlbResult {
    /// `CRLB(φ) + CRLB(θ)`.
    pub fn angle(&self) -> f64 {
        self.cov_mpr[(0, 0)] + self.cov_mpr[(1, 1)]
    }

    pub fn inverse_range(&self) -> f64 {
        self.cov_mpr[(2, 2)]
    }
}

/// Rows `∂ψ_i/∂ρ` and entries `∂ψ_i/∂g` at an arbitrary `(ρ, g)`.
pub fn jacobians_at(sensors: &[SensorArray], rho: &Vector3<f64>, g: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = sensors.len();
    let mut jr = DMatrix::zeros(n, 3);
    let mut jg = DVector::zeros(n);
    for (i, s) in sensors.iter().enumerate() {
        let a = s.attitude();
        let d = rho - s.position * g;
        let nd = d.norm();
        if !(nd > 1e-12) {
            return Err(Error::Domain(format!("sensor {i} coincides with the source")));
        }
        let sin = a.cross(&d).norm() / nd;
        if sin < MIN_SIN_ANGLE {
            return Err(Error::DegenerateGeometry { sensor: i, sin_psi: sin });
        }
        let ad = a.dot(&d);
        let denom = nd.powi(3) * sin;
        // ∂ψ/∂d; ∂d/∂ρ = I and ∂d/∂g = −s.
        let grad = -(a * nd * nd - d * ad) / denom;
        jr.row_mut(i).copy_from(&grad.transpose());
        jg[i] = -grad.dot(&s.position);
    }
    Ok((jr, jg))
}

fn truth_parts(scenario: &Scenario) -> Result<(Vector3<f64>, f64)> {
    let u = scenario.truth()?;
    Ok((u.bearing().into_vector(), u.inverse_range))
}

/// `∂ψ/∂ρ` at the scenario's truth, `N × 3`.
pub fn jacobian_rho(scenario: &Scenario) -> Result<DMatrix<f64>> {
    let (rho, g) = truth_parts(scenario)?;
    Ok(jacobians_at(&scenario.sensors, &rho, g)?.0)
}

/// `∂ψ/∂g` at the scenario's truth.
pub fn jacobian_g(scenario: &Scenario) -> Result<DVector<f64>> {
    let (rho, g) = truth_parts(scenario)?;
    Ok(jacobians_at(&scenario.sensors, &rho, g)?.1)
}

fn check_pole(elevation: f64) -> Result<f64> {
    let c = elevation.cos();
    if c.abs() < 1e-12 {
        return Err(Error::Domain(format!("elevation {elevation} is at a pole")));
    }
    Ok(c)
}

/// `∂ũ/∂ω` restricted to the unit sphere.
pub fn d_matrix(azimuth: f64, elevation: f64) -> Result<Matrix3x4<f64>> {
    let ct = check_pole(elevation)?;
    let (sp, cp) = azimuth.sin_cos();
    let st = elevation.sin();
    #[rustfmt::skip]
    let d = Matrix3x4::new(
        -sp / ct,  cp / ct,  0.0, 0.0,
        -cp * st, -sp * st,  ct,  0.0,
         0.0,      0.0,      0.0, 1.0,
    );
    Ok(d)
}

/// `∂ω/∂ũ`.
pub fn tangent_matrix(azimuth: f64, elevation: f64) -> Matrix4x3<f64> {
    let (sp, cp) = azimuth.sin_cos();
    let (st, ct) = elevation.sin_cos();
    #[rustfmt::skip]
    let p = Matrix4x3::new(
        -ct * sp, -st * cp, 0.0,
         ct * cp, -st * sp, 0.0,
         0.0,      ct,      0.0,
         0.0,      0.0,     1.0,
    );
    p
}

/// Bound at the scenario's truth under its noise covariance.
pub fn crlb_mpr(scenario: &Scenario) -> Result<CrlbResult> {
    let u = *scenario.truth()?;
    let q = scenario
        .covariance()
        .ok_or_else(|| Error::InvalidInput("CRLB needs a noise covariance".into()))?;
    let d = d_matrix(u.azimuth, u.elevation)?;
    let (jr, jg) = jacobians_at(&scenario.sensors, &u.bearing().into_vector(), u.inverse_range)?;

    let mut j = DMatrix::zeros(jr.nrows(), 4);
    j.columns_mut(0, 3).copy_from(&jr);
    j.column_mut(3).copy_from(&jg);
    let p = tangent_matrix(u.azimuth, u.elevation);
    let p_dyn = DMatrix::from_column_slice(4, 3, p.as_slice());
    let jp = &j * p_dyn;
    let fim = jp.transpose() * q.inverse() * &jp;
    let fim = Matrix3::from_fn(|r, c| 0.5 * (fim[(r, c)] + fim[(c, r)]));

    let eig = fim.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > FIM_CONDITION_LIMIT {
        return Err(Error::SingularFim { condition });
    }
    let inv = fim
        .try_inverse()
        .ok_or(Error::SingularFim { condition })?;
    let inv = (inv + inv.transpose()) * 0.5;
    let cov_omega = p * inv * p.transpose();
    let cov_mpr = d * cov_omega * d.transpose();
    Ok(CrlbResult {
        cov_mpr: (cov_mpr + cov_mpr.transpose()) * 0.5,
        cov_omega,
        condition,
    })
}
