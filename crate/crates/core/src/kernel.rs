//! Smoothing kernels shared by the kNN, prevalence and quantile daters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum KernelShape {
    /// `exp{-(u/h)^2}`
    Gaussian,
    /// `(1 + u^2 / (nu h^2))^{-(nu+1)/2}`, a t density with `nu` degrees of freedom.
    StudentT { nu: f64 },
}

/// A kernel `K_h(u) = scale * shape(u / h)`.
///
/// `scale` is the proportionality constant. Estimators only ever use ratios of
/// kernel values, so they work from [`KernelSpec::log_shape`] and `scale` never
/// reaches a date estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub bandwidth: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        KernelSpec {
            shape: KernelShape::Gaussian,
            bandwidth,
            scale: 1.0,
        }
    }

    pub fn student_t(bandwidth: f64, nu: f64) -> Self {
        KernelSpec {
            shape: KernelShape::StudentT { nu },
            bandwidth,
            scale: 1.0,
        }
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Self {
        KernelSpec { bandwidth, ..self }
    }

    pub fn with_scale(self, scale: f64) -> Self {
        KernelSpec { scale, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::invalid(format!(
                "kernel bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!(
                "kernel scale must be positive, got {}",
                self.scale
            )));
        }
        if let KernelShape::StudentT { nu } = self.shape {
            if !(nu.is_finite() && nu > 0.0) {
                return Err(Error::invalid(format!(
                    "degrees of freedom must be positive, got {nu}"
                )));
            }
        }
        Ok(())
    }

    /// `ln(K_h(u) / scale)`; zero at `u = 0`.
    #[inline]
    pub fn log_shape(&self, u: f64) -> f64 {
        let z = u / self.bandwidth;
        match self.shape {
            KernelShape::Gaussian => -(z * z),
            KernelShape::StudentT { nu } => -0.5 * (nu + 1.0) * (z * z / nu).ln_1p(),
        }
    }

    /// `K_h(u) / scale`, in `(0, 1]`.
    #[inline]
    pub fn shape_value(&self, u: f64) -> f64 {
        self.log_shape(u).exp()
    }

    /// `K_h(u)` including the proportionality constant.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.scale * self.shape_value(u)
    }

    /// Short label such as `gauss(h=0.2)` or `t(h=12,nu=3)`.
    pub fn label(&self) -> String {
        match self.shape {
            KernelShape::Gaussian => format!("gauss(h={})", self.bandwidth),
            KernelShape::StudentT { nu } => format!("t(h={},nu={})", self.bandwidth, nu),
        }
    }
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}
