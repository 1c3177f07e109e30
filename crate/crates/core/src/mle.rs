//! Gauss-Newton maximum-likelihood reference in MPR coordinates.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::crlb::{jacobians_at, tangent_matrix};
use crate::error::{Error, Result};
use crate::geometry::SourceMpr;
use crate::measurement::{cone_angle_mpr, Measurements, Scenario, SensorArray};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnConfig {
    pub max_iters: usize,
    /// Stop once the largest component of a step is below this.
    pub step_tol: f64,
    /// Initial Levenberg parameter, relative to the diagonal of `JᵀQ⁻¹J`.
    pub damping: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step_tol: 1e-10,
            damping: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnReport {
    pub estimate: SourceMpr,
    pub iterations: usize,
    /// Cost before the first iteration followed by the cost after each one.
    pub costs: Vec<f64>,
}

const MAX_DAMPING: f64 = 1e12;

/// `∂ψ/∂(φ, θ, g)`, `N × 3`.
pub fn mpr_jacobian(sensors: &[SensorArray], u: &SourceMpr) -> Result<DMatrix<f64>> {
    let (jr, jg) = jacobians_at(sensors, &u.bearing().into_vector(), u.inverse_range)?;
    let p = tangent_matrix(u.azimuth, u.elevation);
    let dr = p.fixed_view::<3, 2>(0, 0);
    let mut j = DMatrix::zeros(sensors.len(), 3);
    j.columns_mut(0, 2).copy_from(&(jr * dr));
    j.column_mut(2).copy_from(&jg);
    Ok(j)
}

/// Folds an unconstrained step back into the MPR domain: elevation is
/// reflected through the pole, azimuth wrapped, `g` projected onto `g ≥ 0`.
fn fold(azimuth: f64, elevation: f64, g: f64) -> Result<SourceMpr> {
    let (mut az, mut el) = (azimuth, elevation);
    if el > FRAC_PI_2 {
        el = PI - el;
        az += PI;
    } else if el < -FRAC_PI_2 {
        el = -PI - el;
        az += PI;
    }
    SourceMpr::new(az, el.clamp(-FRAC_PI_2, FRAC_PI_2), g.max(0.0))
}

fn residual(angles: &Measurements, sensors: &[SensorArray], u: &SourceMpr) -> Result<DVector<f64>> {
    let mut r = DVector::zeros(sensors.len());
    for (i, s) in sensors.iter().enumerate() {
        r[i] = angles.as_slice()[i] - cone_angle_mpr(s, u)?;
    }
    Ok(r)
}

pub fn gauss_newton_report(
    angles: &Measurements,
    scenario: &Scenario,
    init: &SourceMpr,
    cfg: &GnConfig,
) -> Result<GnReport> {
    let sensors = &scenario.sensors;
    if angles.len() != sensors.len() {
        return Err(Error::InvalidInput(format!("{} angles for {} sensors", angles.len(), sensors.len())));
    }
    if !(cfg.step_tol > 0.0) || cfg.damping < 0.0 || cfg.max_iters == 0 {
        return Err(Error::InvalidInput("invalid Gauss-Newton configuration".into()));
    }
    let q_inv = match scenario.covariance() {
        Some(c) => c.inverse(),
        None => DMatrix::identity(sensors.len(), sensors.len()),
    };
    let cost_of = |r: &DVector<f64>| (r.transpose() * &q_inv * r)[(0, 0)];

    let mut u = *init;
    let mut r = residual(angles, sensors, &u)?;
    let mut cost = cost_of(&r);
    let mut costs = vec![cost];
    let mut lambda = cfg.damping;

    for iter in 1..=cfg.max_iters {
        let j = mpr_jacobian(sensors, &u)?;
        let jt_w = j.transpose() * &q_inv;
        let a = Matrix3::from_iterator((&jt_w * &j).iter().copied());
        let b = Vector3::from_iterator((&jt_w * &r).iter().copied());
        let diag = Matrix3::from_diagonal(&a.diagonal());

        loop {
            let step = (a + diag * lambda)
                .cholesky()
                .map(|c| c.solve(&b))
                .ok_or(Error::Degenerate("normal equations are singular".into()))?;
            let cand = fold(u.azimuth + step[0], u.elevation + step[1], u.inverse_range + step[2])?;
            let r_new = residual(angles, sensors, &cand)?;
            let c_new = cost_of(&r_new);
            if c_new <= cost {
                u = cand;
                r = r_new;
                cost = c_new;
                costs.push(cost);
                lambda *= 0.1;
                if step.amax() < cfg.step_tol {
                    return Ok(GnReport {
                        estimate: u,
                        iterations: iter,
                        costs,
                    });
                }
                break;
            }
            if step.amax() < cfg.step_tol {
                // No descent left at this resolution.
                costs.push(cost);
                return Ok(GnReport {
                    estimate: u,
                    iterations: iter,
                    costs,
                });
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
            if lambda > MAX_DAMPING {
                return Err(Error::Divergence { iterations: iter });
            }
        }
    }
    Ok(GnReport {
        estimate: u,
        iterations: cfg.max_iters,
        costs,
    })
}

/// Local minimizer of `(ψ − ψ(ũ))ᵀQ⁻¹(ψ − ψ(ũ))` started at `init`.
pub fn gauss_newton(angles: &Measurements, scenario: &Scenario, init: &SourceMpr, cfg: &GnConfig) -> Result<SourceMpr> {
    gauss_newton_report(angles, scenario, init, cfg).map(|r| r.estimate)
}
