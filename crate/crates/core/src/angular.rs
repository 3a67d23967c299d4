//! Angular functions `ω : 𝕊 → ℝ` and angular laws on the circle.

use std::f64::consts::TAU;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::wrap_angle;

/// A periodic angular weight.
#[derive(Debug, Clone, PartialEq)]
pub enum AngularFn {
    One,
    Cos,
    Sin,
    /// `cos(m θ + φ)`
    Fourier {
        m: u32,
        phase: f64,
    },
    /// Piecewise-constant table on uniform bins of `[0, 2π)`.
    Table(Arc<[f64]>),
}

impl AngularFn {
    pub fn table(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("angular table must be non-empty and finite"));
        }
        Ok(AngularFn::Table(values.into()))
    }

    #[inline]
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            AngularFn::One => 1.0,
            AngularFn::Cos => theta.cos(),
            AngularFn::Sin => theta.sin(),
            AngularFn::Fourier { m, phase } => (*m as f64 * theta + phase).cos(),
            AngularFn::Table(t) => {
                let k = ((wrap_angle(theta) / TAU) * t.len() as f64) as usize;
                t[k.min(t.len() - 1)]
            }
        }
    }

    /// `ω''(θ)` for the analytic variants.
    pub fn second_derivative(&self, theta: f64) -> Option<f64> {
        match self {
            AngularFn::One => Some(0.0),
            AngularFn::Cos => Some(-theta.cos()),
            AngularFn::Sin => Some(-theta.sin()),
            AngularFn::Fourier { m, phase } => {
                let m = *m as f64;
                Some(-m * m * (m * theta + phase).cos())
            }
            AngularFn::Table(_) => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            AngularFn::One => true,
            AngularFn::Fourier { m, .. } => *m == 0,
            AngularFn::Table(t) => t.iter().all(|v| *v == t[0]),
            _ => false,
        }
    }

    /// `∫_a^b ω(θ) dθ`, exact for the analytic variants.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            AngularFn::One => b - a,
            AngularFn::Cos => b.sin() - a.sin(),
            AngularFn::Sin => a.cos() - b.cos(),
            AngularFn::Fourier { m, phase } => {
                if *m == 0 {
                    phase.cos() * (b - a)
                } else {
                    let m = *m as f64;
                    ((m * b + phase).sin() - (m * a + phase).sin()) / m
                }
            }
            AngularFn::Table(_) => simpson(|t| self.eval(t), a, b, 2048),
        }
    }

    /// `∫_a^b ω(θ)² dθ`.
    pub fn integral_sq(&self, a: f64, b: f64) -> f64 {
        match self {
            AngularFn::One => b - a,
            AngularFn::Cos => 0.5 * (b - a) + 0.25 * ((2.0 * b).sin() - (2.0 * a).sin()),
            AngularFn::Sin => 0.5 * (b - a) - 0.25 * ((2.0 * b).sin() - (2.0 * a).sin()),
            AngularFn::Fourier { m, phase } => {
                if *m == 0 {
                    phase.cos().powi(2) * (b - a)
                } else {
                    let m2 = 2.0 * *m as f64;
                    0.5 * (b - a)
                        + 0.25 * ((m2 * b + 2.0 * phase).sin() - (m2 * a + 2.0 * phase).sin())
                            / (m2 / 2.0)
                }
            }
            AngularFn::Table(_) => simpson(|t| self.eval(t).powi(2), a, b, 2048),
        }
    }

    pub fn name(&self) -> String {
        match self {
            AngularFn::One => "1".into(),
            AngularFn::Cos => "cos".into(),
            AngularFn::Sin => "sin".into(),
            AngularFn::Fourier { m, phase } => format!("cos({m}t+{phase})"),
            AngularFn::Table(t) => format!("table[{}]", t.len()),
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Probability law of a particle orientation.
#[derive(Debug, Clone, PartialEq)]
pub enum AngularLaw {
    Uniform,
    /// Weights on uniform bins of `[0, 2π)`; uniform inside each bin.
    Histogram(Vec<f64>),
}

impl AngularLaw {
    pub fn histogram(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || total <= 0.0
        {
            return Err(Error::invalid(
                "histogram weights must be non-negative with positive total",
            ));
        }
        Ok(AngularLaw::Histogram(
            weights.iter().map(|w| w / total).collect(),
        ))
    }

    /// `E[ω(θ)]`.
    pub fn mean(&self, omega: &AngularFn) -> f64 {
        match self {
            AngularLaw::Uniform => omega.integral(0.0, TAU) / TAU,
            AngularLaw::Histogram(w) => {
                let d = TAU / w.len() as f64;
                w.iter()
                    .enumerate()
                    .map(|(k, wk)| wk * omega.integral(k as f64 * d, (k + 1) as f64 * d) / d)
                    .sum()
            }
        }
    }

    /// `Var[ω(θ)]`.
    pub fn variance(&self, omega: &AngularFn) -> f64 {
        let m = self.mean(omega);
        let m2 = match self {
            AngularLaw::Uniform => omega.integral_sq(0.0, TAU) / TAU,
            AngularLaw::Histogram(w) => {
                let d = TAU / w.len() as f64;
                w.iter()
                    .enumerate()
                    .map(|(k, wk)| wk * omega.integral_sq(k as f64 * d, (k + 1) as f64 * d) / d)
                    .sum()
            }
        };
        (m2 - m * m).max(0.0)
    }

    /// Map a pair of uniforms to an angle.
    pub(crate) fn sample_from(&self, u_bin: f64, u_in: f64) -> f64 {
        match self {
            AngularLaw::Uniform => wrap_angle(u_in * TAU),
            AngularLaw::Histogram(w) => {
                let d = TAU / w.len() as f64;
                let mut acc = 0.0;
                let mut k = w.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    acc += wi;
                    if u_bin < acc {
                        k = i;
                        break;
                    }
                }
                wrap_angle((k as f64 + u_in) * d)
            }
        }
    }
}
