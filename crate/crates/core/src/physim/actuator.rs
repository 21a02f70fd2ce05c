use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{RationalTf, Stability};

/// Coil supply: programming voltage (V) to field (G).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorModel {
    tf: RationalTf,
}

impl ActuatorModel {
    pub fn new(tf: RationalTf) -> Result<Self> {
        if !tf.is_proper() {
            return Err(Error::InvalidTf("actuator must be proper".into()));
        }
        if tf.stability() != Stability::Stable {
            return Err(Error::InvalidTf("actuator must be stable".into()));
        }
        Ok(ActuatorModel { tf })
    }

    pub fn tf(&self) -> &RationalTf {
        &self.tf
    }

    pub fn state_dim(&self) -> usize {
        self.tf.den_degree()
    }

    /// Zero-order-hold discretization at step `dt`.
    pub fn discretize(&self, dt: f64) -> Result<DiscreteActuator> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let n = self.state_dim();
        let den = self.tf.den();
        let mut num = self.tf.num().to_vec();
        num.resize(n + 1, 0.0);
        let d = num[n];
        // controllable canonical form of the strictly proper remainder
        let c: Vec<f64> = (0..n).map(|i| num[i] - d * den[i]).collect();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = -den[j];
        }
        let (phi, gam) = zoh(&a, n, dt);
        let (phi_h, gam_h) = zoh(&a, n, 0.5 * dt);
        Ok(DiscreteActuator {
            phi,
            gam,
            phi_h,
            gam_h,
            c: DVector::from_vec(c),
            d,
            x: DVector::zeros(n),
        })
    }
}

fn zoh(a: &DMatrix<f64>, n: usize, h: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    if n > 0 {
        m.view_mut((0, 0), (n, n)).copy_from(&(a * h));
        m[(n - 1, n)] = h;
    }
    let e = m.exp();
    let phi = e.view((0, 0), (n, n)).into_owned();
    let gam = e.view((0, n), (n, 1)).column(0).into_owned();
    (phi, gam)
}

/// Discretized actuator. The input is held constant over each step; `step`
/// returns the output at the middle of the step, which is the value seen by
/// a midpoint-sampled physics update.
#[derive(Clone, Debug)]
pub struct DiscreteActuator {
    phi: DMatrix<f64>,
    gam: DVector<f64>,
    phi_h: DMatrix<f64>,
    gam_h: DVector<f64>,
    c: DVector<f64>,
    d: f64,
    x: DVector<f64>,
}

impl DiscreteActuator {
    pub fn step(&mut self, u: f64) -> f64 {
        let mid = &self.phi_h * &self.x + &self.gam_h * u;
        let out = self.c.dot(&mid) + self.d * u;
        self.x = &self.phi * &self.x + &self.gam * u;
        out
    }

    /// Output at the current state boundary for input `u`.
    pub fn output(&self, u: f64) -> f64 {
        self.c.dot(&self.x) + self.d * u
    }

    pub fn reset(&mut self) {
        self.x.fill(0.0);
    }
}

/// One held step of the actuator.
pub fn actuator_step(act: &mut DiscreteActuator, u: f64) -> f64 {
    act.step(u)
}
