//! Cone-angle measurement model and noisy measurement generation.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{CartesianPoint, SourceMpr};

/// Attempts per call before `simulate` gives up on drawing an in-range vector.
const MAX_NOISE_DRAWS: usize = 10_000;

/// A sensor carrying a 1-D linear array: its position and the array axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorArray {
    pub position: Vector3<f64>,
    attitude: Vector3<f64>,
}

impl SensorArray {
    /// The attitude is normalized; a zero attitude is rejected.
    pub fn new(position: Vector3<f64>, attitude: Vector3<f64>) -> Result<Self> {
        let n = attitude.norm();
        if !(n > 0.0) || !n.is_finite() || !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("sensor needs finite position and non-zero attitude".into()));
        }
        Ok(Self {
            position,
            attitude: attitude / n,
        })
    }

    pub fn attitude(&self) -> &Vector3<f64> {
        &self.attitude
    }

    /// Same sensor with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            position: self.position * factor,
            attitude: self.attitude,
        }
    }
}

/// Gaussian measurement noise with a factored covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
}

impl NoiseCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidInput("noise covariance must be square and non-empty".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput("noise covariance is not symmetric".into()));
        }
        let lower = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("noise covariance is not positive definite".into()))?
            .l();
        Ok(Self { matrix, lower })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular Cholesky factor `L` with `L Lᵀ = Q`.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.matrix.nrows();
        let mut inv = DMatrix::identity(n, n);
        // Q⁻¹ = L⁻ᵀ L⁻¹
        self.lower.solve_lower_triangular_mut(&mut inv);
        self.lower.tr_solve_lower_triangular_mut(&mut inv);
        (&inv + inv.transpose()) * 0.5
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    /// Exact measurements; estimators weight every sensor equally.
    Noiseless,
    Gaussian(NoiseCovariance),
}

/// A sensor layout with its noise model and, for simulation, the true source.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub sensors: Vec<SensorArray>,
    pub noise: Noise,
    pub truth: Option<SourceMpr>,
}

impl Scenario {
    pub fn new(sensors: Vec<SensorArray>, cov: NoiseCovariance, truth: Option<SourceMpr>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidInput("scenario has no sensors".into()));
        }
        if cov.dim() != sensors.len() {
            return Err(Error::InvalidInput(format!(
                "covariance is {0}x{0} but there are {1} sensors",
                cov.dim(),
                sensors.len()
            )));
        }
        Ok(Self {
            sensors,
            noise: Noise::Gaussian(cov),
            truth,
        })
    }

    pub fn noiseless(sensors: Vec<SensorArray>, truth: Option<SourceMpr>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidInput("scenario has no sensors".into()));
        }
        Ok(Self {
            sensors,
            noise: Noise::Noiseless,
            truth,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn covariance(&self) -> Option<&NoiseCovariance> {
        match &self.noise {
            Noise::Gaussian(c) => Some(c),
            Noise::Noiseless => None,
        }
    }

    pub fn truth(&self) -> Result<&SourceMpr> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("scenario has no true source".into()))
    }

    /// Noise-free angles for the true source.
    pub fn true_angles(&self) -> Result<Measurements> {
        let truth = *self.truth()?;
        self.sensors
            .iter()
            .map(|s| cone_angle_mpr(s, &truth))
            .collect::<Result<Vec<_>>>()
            .map(Measurements)
    }
}

/// Measured cone angles, one per sensor, in [0, π].
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements(pub Vec<f64>);

impl Measurements {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Angle between the array axis and the direction `d`, via atan2 for accuracy near 0 and π.
fn axis_angle(attitude: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    attitude.cross(d).norm().atan2(attitude.dot(d))
}

pub fn cone_angle_cartesian(sensor: &SensorArray, source: &CartesianPoint) -> Result<f64> {
    let d = source.0 - sensor.position;
    if d.norm() == 0.0 {
        return Err(Error::Domain("source coincides with sensor position".into()));
    }
    Ok(axis_angle(&sensor.attitude, &d))
}

/// Cone angle from the MPR form `ρ − s·g`; valid down to `g = 0`.
pub fn cone_angle_mpr(sensor: &SensorArray, source: &SourceMpr) -> Result<f64> {
    let rho = source.bearing().into_vector();
    cone_angle_rho_g(sensor, &rho, source.inverse_range)
}

/// Cone angle for an arbitrary (not necessarily unit) `ρ` and `g`.
pub fn cone_angle_rho_g(sensor: &SensorArray, rho: &Vector3<f64>, g: f64) -> Result<f64> {
    let d = rho - sensor.position * g;
    if d.norm() < 1e-12 {
        return Err(Error::Domain("source coincides with sensor position".into()));
    }
    Ok(axis_angle(&sensor.attitude, &d))
}

/// Draws `ψ = ψ° + L z`; vectors leaving [0, π] are redrawn whole.
pub fn simulate<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Measurements> {
    let clean = scenario.true_angles()?;
    let cov = match &scenario.noise {
        Noise::Noiseless => return Ok(clean),
        Noise::Gaussian(c) => c,
    };
    let n = clean.len();
    let l = cov.cholesky_lower();
    for _ in 0..MAX_NOISE_DRAWS {
        let z = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let noise = l * z;
        let angles: Vec<f64> = clean.0.iter().zip(noise.iter()).map(|(a, e)| a + e).collect();
        if angles.iter().all(|a| (0.0..=std::f64::consts::PI).contains(a)) {
            return Ok(Measurements(angles));
        }
    }
    Err(Error::RejectionOverflow {
        draws: MAX_NOISE_DRAWS,
    })
}
