//! Synthetic problem suites with analytically known minimizers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AreaError, Result};
use crate::math::{AbsoluteDeviation, Curvature, ModelVector, Objective, ProblemConstants, Quadratic};

/// Client objectives plus the constants the schedules and checks need.
#[derive(Clone, Debug)]
pub struct Suite {
    pub objectives: Vec<Objective>,
    pub constants: ProblemConstants,
}

impl Suite {
    pub fn client_count(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.objectives[0].dim()
    }

    /// Uniformly weighted global objective `(1/n) Σ f_i(x)`.
    pub fn global_value(&self, x: &ModelVector) -> Result<f64> {
        let mut total = 0.0;
        for obj in &self.objectives {
            total += obj.value(x)?;
        }
        Ok(total / self.objectives.len() as f64)
    }
}

/// Quadratic suite from explicit curvatures and centers; solves for `x*`.
pub fn quadratic_suite_from_parts(curvatures: Vec<Curvature>, centers: Vec<ModelVector>) -> Result<Suite> {
    if curvatures.is_empty() || curvatures.len() != centers.len() {
        return Err(AreaError::config("need one curvature per center and at least one client"));
    }
    let d = centers[0].dim();
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let (mut mu, mut l) = (f64::INFINITY, 0.0f64);
    for (q, c) in curvatures.iter().zip(&centers) {
        c.check_dim(d)?;
        if q.dim() != d {
            return Err(AreaError::DimensionMismatch { expected: d, found: q.dim() });
        }
        let dense = q.to_dense();
        rhs += &dense * DVector::from_column_slice(c.as_slice());
        h += dense;
        let (lo, hi) = q.eigen_range();
        mu = mu.min(lo);
        l = l.max(hi);
    }
    if mu <= 0.0 {
        return Err(AreaError::config("quadratic curvatures must be positive definite"));
    }
    let x_star = h
        .cholesky()
        .ok_or_else(|| AreaError::config("summed curvature is not positive definite"))?
        .solve(&rhs);
    let x_star = ModelVector::from_vec(x_star.as_slice().to_vec());
    let objectives: Vec<Objective> = curvatures
        .into_iter()
        .zip(centers.iter().cloned())
        .map(|(q, c)| Quadratic::new(q, c).map(Objective::Quadratic))
        .collect::<Result<_>>()?;
    let mut constants = ProblemConstants {
        mu,
        lipschitz_l: l,
        lipschitz_b: f64::INFINITY,
        sigma: 0.0,
        zeta: 0.0,
        x_star: Some(x_star),
        u_stars: Some(centers),
        f_star: None,
    };
    constants.zeta = constants.measured_zeta().expect("minimizers set");
    let mut suite = Suite { objectives, constants };
    let x_star = suite.constants.x_star.clone().expect("set above");
    suite.constants.f_star = Some(suite.global_value(&x_star)?);
    Ok(suite)
}

fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

/// `n` quadratics sharing a spectrum evenly spaced over `[mu, L]`, each in its
/// own random eigenbasis, with centers scaled so that `max_i ‖x* − c_i‖`
/// equals `zeta_target`.
pub fn synthetic_quadratic_suite<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    mu: f64,
    l: f64,
    zeta_target: f64,
    rng: &mut R,
) -> Result<Suite> {
    if !(mu > 0.0 && l >= mu) {
        return Err(AreaError::config(format!("need L >= mu > 0, got mu={mu}, L={l}")));
    }
    if n == 0 || d == 0 {
        return Err(AreaError::config("suite needs n >= 1 and d >= 1"));
    }
    if zeta_target < 0.0 {
        return Err(AreaError::config("zeta must be non-negative"));
    }
    let spectrum: Vec<f64> = if d == 1 {
        vec![mu]
    } else {
        (0..d).map(|j| mu + (l - mu) * j as f64 / (d - 1) as f64).collect()
    };
    let diag = DMatrix::from_diagonal(&DVector::from_vec(spectrum));
    let curvatures: Vec<Curvature> = (0..n)
        .map(|_| {
            let r = random_rotation(d, rng);
            let q = &r * &diag * r.transpose();
            Curvature::Dense((&q + q.transpose()) * 0.5)
        })
        .collect();
    let raw_centers: Vec<ModelVector> = (0..n)
        .map(|_| ModelVector::from_vec((0..d).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();
    let trial = quadratic_suite_from_parts(curvatures.clone(), raw_centers.clone())?;
    // x* is linear in the centers, so scaling every center scales ζ.
    let scale = if n == 1 || trial.constants.zeta == 0.0 {
        0.0
    } else {
        zeta_target / trial.constants.zeta
    };
    let centers = if n == 1 {
        raw_centers
    } else {
        raw_centers.iter().map(|c| c.scaled(scale)).collect()
    };
    let mut suite = quadratic_suite_from_parts(curvatures, centers)?;
    suite.constants.mu = mu;
    suite.constants.lipschitz_l = l;
    Ok(suite)
}

/// One-dimensional suite `f_i(x) = |x − c_i|`; `B = 1` and the global
/// minimizer is a median of the centers.
pub fn absdev_suite(centers: &[f64]) -> Result<Suite> {
    if centers.is_empty() || centers.iter().any(|c| !c.is_finite()) {
        return Err(AreaError::config("absdev suite needs finite centers"));
    }
    let mut sorted = centers.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let median = sorted[(sorted.len() - 1) / 2];
    let objectives: Vec<Objective> = centers
        .iter()
        .map(|&c| Objective::AbsoluteDeviation(AbsoluteDeviation::new(ModelVector::from_vec(vec![c]))))
        .collect();
    let x_star = ModelVector::from_vec(vec![median]);
    let f_star = centers.iter().map(|c| (median - c).abs()).sum::<f64>() / centers.len() as f64;
    let zeta = centers.iter().map(|c| (median - c).abs()).fold(0.0, f64::max);
    Ok(Suite {
        objectives,
        constants: ProblemConstants {
            mu: 0.0,
            lipschitz_l: f64::INFINITY,
            lipschitz_b: 1.0,
            sigma: 0.0,
            zeta,
            x_star: Some(x_star),
            u_stars: Some(centers.iter().map(|&c| ModelVector::from_vec(vec![c])).collect()),
            f_star: Some(f_star),
        },
    })
}
