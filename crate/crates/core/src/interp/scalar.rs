//! Real and dual-number arithmetic, including the default values returned
//! for out-of-domain operator arguments.

use std::f64::consts::PI;
use std::fmt::Debug;

use smallvec::SmallVec;

/// Variance used when a normal distribution gets a non-positive variance.
pub const DEFAULT_VARIANCE: f64 = 1.0;
/// `sqrt` of a non-positive argument.
pub const DEFAULT_SQRT: f64 = 1.0;
/// `log` of a non-positive argument.
pub const DEFAULT_LOG: f64 = -745.0;
/// Division by zero.
pub const DEFAULT_DIV: f64 = 0.0;

pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let v = if variance > 0.0 { variance } else { DEFAULT_VARIANCE };
    let z = x - mean;
    (-z * z / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

pub fn normal_log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let v = if variance > 0.0 { variance } else { DEFAULT_VARIANCE };
    let z = x - mean;
    -z * z / (2.0 * v) - 0.5 * (2.0 * PI * v).ln()
}

pub fn xyratio(x: f64, y: f64) -> f64 {
    let d = x * x + y * y;
    if d == 0.0 {
        0.0
    } else {
        x * y / d
    }
}

/// Numbers the interpreter can run on.
pub trait Scalar: Clone + Debug + Send + Sync {
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn relu(&self) -> Self;
    fn normal_pdf(x: &Self, mean: &Self, variance: &Self) -> Self;

    fn floor(&self) -> Self {
        Self::constant(self.value().floor())
    }

    fn step(&self) -> Self {
        Self::constant(if self.value() > 0.0 { 1.0 } else { 0.0 })
    }

    /// Only defined on values; `xyratio` has no derivative at the origin and
    /// the analysis never treats it as smooth.
    fn xyratio(x: &Self, y: &Self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        if *o == 0.0 {
            DEFAULT_DIV
        } else {
            self / o
        }
    }
    fn neg(&self) -> Self {
        -self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        if *self > 0.0 {
            f64::ln(*self)
        } else {
            DEFAULT_LOG
        }
    }
    fn sqrt(&self) -> Self {
        if *self > 0.0 {
            f64::sqrt(*self)
        } else {
            DEFAULT_SQRT
        }
    }
    fn relu(&self) -> Self {
        self.max(0.0)
    }
    fn normal_pdf(x: &Self, mean: &Self, variance: &Self) -> Self {
        normal_pdf(*x, *mean, *variance)
    }
    fn xyratio(x: &Self, y: &Self) -> Self {
        xyratio(*x, *y)
    }
}

/// Forward-mode dual number carrying the gradient with respect to θ.
///
/// An empty `grad` stands for the zero vector, so constants cost nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub grad: SmallVec<[f64; 4]>,
}

impl Dual {
    pub fn new(value: f64, grad: impl IntoIterator<Item = f64>) -> Dual {
        Dual {
            value,
            grad: grad.into_iter().collect(),
        }
    }

    /// The `k`-th of `n` independent variables.
    pub fn variable(value: f64, k: usize, n: usize) -> Dual {
        let mut grad = SmallVec::from_elem(0.0, n);
        grad[k] = 1.0;
        Dual { value, grad }
    }

    pub fn grad_vec(&self, n: usize) -> Vec<f64> {
        if self.grad.is_empty() {
            vec![0.0; n]
        } else {
            self.grad.to_vec()
        }
    }

    fn scale(&self, value: f64, s: f64) -> Dual {
        Dual {
            value,
            grad: self.grad.iter().map(|g| g * s).collect(),
        }
    }

    /// `value` with gradient `a * self.grad + b * o.grad`.
    fn lin2(&self, o: &Dual, value: f64, a: f64, b: f64) -> Dual {
        let grad = match (self.grad.is_empty(), o.grad.is_empty()) {
            (true, true) => SmallVec::new(),
            (false, true) => self.grad.iter().map(|g| a * g).collect(),
            (true, false) => o.grad.iter().map(|g| b * g).collect(),
            (false, false) => {
                debug_assert_eq!(self.grad.len(), o.grad.len());
                self.grad
                    .iter()
                    .zip(&o.grad)
                    .map(|(g, h)| a * g + b * h)
                    .collect()
            }
        };
        Dual { value, grad }
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual {
            value: v,
            grad: SmallVec::new(),
        }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn add(&self, o: &Self) -> Self {
        self.lin2(o, self.value + o.value, 1.0, 1.0)
    }
    fn sub(&self, o: &Self) -> Self {
        self.lin2(o, self.value - o.value, 1.0, -1.0)
    }
    fn mul(&self, o: &Self) -> Self {
        self.lin2(o, self.value * o.value, o.value, self.value)
    }
    fn div(&self, o: &Self) -> Self {
        if o.value == 0.0 {
            return Dual::constant(DEFAULT_DIV);
        }
        let q = self.value / o.value;
        self.lin2(o, q, 1.0 / o.value, -q / o.value)
    }
    fn neg(&self) -> Self {
        self.scale(-self.value, -1.0)
    }
    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.scale(e, e)
    }
    fn ln(&self) -> Self {
        if self.value > 0.0 {
            self.scale(self.value.ln(), 1.0 / self.value)
        } else {
            Dual::constant(DEFAULT_LOG)
        }
    }
    fn sqrt(&self) -> Self {
        if self.value > 0.0 {
            let s = self.value.sqrt();
            self.scale(s, 0.5 / s)
        } else {
            Dual::constant(DEFAULT_SQRT)
        }
    }
    fn relu(&self) -> Self {
        if self.value > 0.0 {
            self.clone()
        } else {
            Dual::constant(0.0)
        }
    }
    fn normal_pdf(x: &Self, mean: &Self, variance: &Self) -> Self {
        let (v, dv_active) = if variance.value > 0.0 {
            (variance.value, true)
        } else {
            (DEFAULT_VARIANCE, false)
        };
        let z = x.value - mean.value;
        let p = normal_pdf(x.value, mean.value, v);
        // ∂/∂x = -p z / v, ∂/∂mean = p z / v, ∂/∂variance = p (z²/v - 1) / (2v)
        let dz = -p * z / v;
        let mut out = x.lin2(mean, p, dz, -dz);
        if dv_active && !variance.grad.is_empty() {
            let dvar = p * (z * z / v - 1.0) / (2.0 * v);
            out = out.lin2(variance, p, 1.0, dvar);
        }
        out
    }
    fn xyratio(x: &Self, y: &Self) -> Self {
        let d = x.value * x.value + y.value * y.value;
        if d == 0.0 {
            return Dual::constant(0.0);
        }
        let v = x.value * y.value / d;
        let dx = (y.value * (y.value * y.value - x.value * x.value)) / (d * d);
        let dy = (x.value * (x.value * x.value - y.value * y.value)) / (d * d);
        x.lin2(y, v, dx, dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        assert_eq!(Scalar::sqrt(&-4.0), 1.0);
        assert_eq!(Scalar::sqrt(&0.0), 1.0);
        assert_eq!(Scalar::ln(&0.0), -745.0);
        assert_eq!(Scalar::div(&1.0, &0.0), 0.0);
        assert_eq!(normal_pdf(0.0, 0.0, -2.0), normal_pdf(0.0, 0.0, 1.0));
    }

    #[test]
    fn pdf_value() {
        assert!((normal_pdf(0.0, 1.0, 1.0) - 0.24197072451914337).abs() < 1e-15);
        assert!((normal_log_pdf(0.3, 1.0, 2.0) - normal_pdf(0.3, 1.0, 2.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn dual_pdf_matches_finite_difference() {
        let (x, m, v) = (0.3, -0.4, 1.7);
        let d = Dual::normal_pdf(
            &Dual::variable(x, 0, 3),
            &Dual::variable(m, 1, 3),
            &Dual::variable(v, 2, 3),
        );
        let h = 1e-6;
        let fd = [
            (normal_pdf(x + h, m, v) - normal_pdf(x - h, m, v)) / (2.0 * h),
            (normal_pdf(x, m + h, v) - normal_pdf(x, m - h, v)) / (2.0 * h),
            (normal_pdf(x, m, v + h) - normal_pdf(x, m, v - h)) / (2.0 * h),
        ];
        for k in 0..3 {
            assert!((d.grad[k] - fd[k]).abs() < 1e-8, "{k}: {} vs {}", d.grad[k], fd[k]);
        }
    }
}
