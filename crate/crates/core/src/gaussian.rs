//! Gaussian representation of rotated boxes and the ProbIoU / KLD regression
//! losses, with hand-derived gradients with respect to the predicted box.
//!
//! Gradients follow the chain rule `dL/dp = dL/dmu * dmu/dp + <dL/dSigma, dSigma/dp>`
//! where `p` ranges over `(cx, cy, w, h, theta)` of the prediction. Matrix
//! derivatives are taken treating all four covariance entries as independent,
//! so the off-diagonal term contributes twice when contracted.

use crate::error::{Error, Result};
use crate::geometry::{Point, RotatedBox};

/// Box extents map to variances as `w^2 / COV_DIVISOR` (uniform-distribution variance).
pub const COV_DIVISOR: f64 = 12.0;

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn inverse(&self) -> Result<Sym2> {
        let det = self.det();
        if !(det > 0.0 && self.xx > 0.0) {
            return Err(Error::Validation(format!(
                "covariance is not positive definite: {self:?}"
            )));
        }
        Ok(Sym2::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }

    pub fn scale(&self, k: f64) -> Sym2 {
        Sym2::new(self.xx * k, self.xy * k, self.yy * k)
    }

    pub fn mul_vec(&self, v: Point) -> Point {
        Point::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    /// `v^T A v`
    pub fn quad_form(&self, v: Point) -> f64 {
        v.dot(self.mul_vec(v))
    }

    /// `v v^T`
    pub fn outer(v: Point) -> Sym2 {
        Sym2::new(v.x * v.x, v.x * v.y, v.y * v.y)
    }

    /// `tr(A B)` for symmetric `A`, `B`; equals the Frobenius inner product.
    pub fn frobenius(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
    }

    /// `A B A`, symmetric whenever both factors are.
    pub fn sandwich(&self, b: &Sym2) -> Sym2 {
        let a = self;
        // P = A B
        let p11 = a.xx * b.xx + a.xy * b.xy;
        let p12 = a.xx * b.xy + a.xy * b.yy;
        let p21 = a.xy * b.xx + a.yy * b.xy;
        let p22 = a.xy * b.xy + a.yy * b.yy;
        Sym2::new(
            p11 * a.xx + p12 * a.xy,
            p11 * a.xy + p12 * a.yy,
            p21 * a.xy + p22 * a.yy,
        )
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = self.trace() / 2.0;
        let r = (((self.xx - self.yy) / 2.0).powi(2) + self.xy * self.xy).sqrt();
        (m - r, m + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBox {
    pub mean: Point,
    pub cov: Sym2,
}

/// `cov = R(theta) diag(w^2/12, h^2/12) R(theta)^T`.
pub fn rbox_to_gaussian(b: &RotatedBox) -> GaussianBox {
    rbox_to_gaussian_with(b, COV_DIVISOR)
}

pub fn rbox_to_gaussian_with(b: &RotatedBox, divisor: f64) -> GaussianBox {
    let a = b.w * b.w / divisor;
    let d = b.h * b.h / divisor;
    let (s, c) = b.theta.sin_cos();
    GaussianBox {
        mean: b.center(),
        cov: Sym2::new(a * c * c + d * s * s, (a - d) * c * s, a * s * s + d * c * c),
    }
}

/// Partial derivatives of the covariance entries with respect to `(w, h, theta)`.
fn cov_jacobian(b: &RotatedBox, divisor: f64) -> [Sym2; 3] {
    let (s, c) = b.theta.sin_cos();
    let a = b.w * b.w / divisor;
    let d = b.h * b.h / divisor;
    let kw = 2.0 * b.w / divisor;
    let kh = 2.0 * b.h / divisor;
    [
        Sym2::new(kw * c * c, kw * c * s, kw * s * s),
        Sym2::new(kh * s * s, -kh * c * s, kh * c * c),
        Sym2::new(
            -(a - d) * 2.0 * s * c,
            (a - d) * (c * c - s * s),
            (a - d) * 2.0 * s * c,
        ),
    ]
}

/// Contracts mean/covariance gradients into a gradient over `(cx, cy, w, h, theta)`.
fn chain(b: &RotatedBox, divisor: f64, d_mean: Point, d_cov: &Sym2, outer: f64) -> [f64; 5] {
    let jac = cov_jacobian(b, divisor);
    [
        outer * d_mean.x,
        outer * d_mean.y,
        outer * d_cov.frobenius(&jac[0]),
        outer * d_cov.frobenius(&jac[1]),
        outer * d_cov.frobenius(&jac[2]),
    ]
}

/// Loss value and its gradient with respect to the predicted `(cx, cy, w, h, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad: [f64; 5],
}

/// Bhattacharyya distance between two Gaussians.
pub fn bhattacharyya_distance(p: &GaussianBox, q: &GaussianBox) -> Result<f64> {
    let avg = p.cov.add(&q.cov).scale(0.5);
    let inv = avg.inverse()?;
    let (dp, dq) = (p.cov.det(), q.cov.det());
    if !(dp > 0.0 && dq > 0.0) {
        return Err(Error::Validation("covariance is not positive definite".into()));
    }
    let d = p.mean - q.mean;
    Ok(inv.quad_form(d) / 8.0 + 0.5 * (avg.det() / (dp * dq).sqrt()).ln())
}

/// ProbIoU loss in its Hellinger form, `sqrt(1 - exp(-B_D))`.
pub fn probiou_loss(pred: &RotatedBox, gt: &RotatedBox) -> Result<LossValueAndGrad> {
    probiou_loss_with(pred, gt, COV_DIVISOR)
}

pub fn probiou_loss_with(
    pred: &RotatedBox,
    gt: &RotatedBox,
    divisor: f64,
) -> Result<LossValueAndGrad> {
    pred.validate()?;
    gt.validate()?;
    let p = rbox_to_gaussian_with(pred, divisor);
    let q = rbox_to_gaussian_with(gt, divisor);

    let avg = p.cov.add(&q.cov).scale(0.5);
    let m = avg.inverse()?;
    let p_inv = p.cov.inverse()?;
    let d = p.mean - q.mean;
    let dist = (m.quad_form(d) / 8.0
        + 0.5 * avg.det().ln()
        - 0.25 * p.cov.det().ln()
        - 0.25 * q.cov.det().ln())
    .max(0.0);

    let value = (1.0 - (-dist).exp()).max(0.0).sqrt();
    if value == 0.0 {
        return Ok(LossValueAndGrad { value, grad: [0.0; 5] });
    }
    let dl_dist = (-dist).exp() / (2.0 * value);

    let md = m.mul_vec(d);
    let d_mean = md * 0.25;
    let d_cov = Sym2::outer(md)
        .scale(-1.0 / 16.0)
        .add(&m.scale(0.25))
        .sub(&p_inv.scale(0.25));
    Ok(LossValueAndGrad {
        value,
        grad: chain(pred, divisor, d_mean, &d_cov, dl_dist),
    })
}

/// Which way round the KL divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(pred || gt)`
    #[default]
    PredToGt,
    /// `KL(gt || pred)`
    GtToPred,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KldConfig {
    pub tau: f64,
    pub direction: KlDirection,
    pub cov_divisor: f64,
}

impl Default for KldConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            direction: KlDirection::PredToGt,
            cov_divisor: COV_DIVISOR,
        }
    }
}

impl KldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            // below 1 the transform is negative (or singular) at D = 0
            return Err(Error::Validation(format!("tau must be >= 1, got {}", self.tau)));
        }
        if !(self.cov_divisor > 0.0 && self.cov_divisor.is_finite()) {
            return Err(Error::Validation(format!("covariance divisor must be positive, got {}", self.cov_divisor)));
        }
        Ok(())
    }
}

/// Closed-form `KL(p || q)` between two Gaussians.
pub fn kl_divergence(p: &GaussianBox, q: &GaussianBox) -> Result<f64> {
    let q_inv = q.cov.inverse()?;
    p.cov.inverse()?;
    let d = p.mean - q.mean;
    Ok(0.5 * (q_inv.frobenius(&p.cov) + q_inv.quad_form(d) - 2.0 + (q.cov.det() / p.cov.det()).ln()))
}

/// KLD loss `1 - 1 / (tau + ln(1 + D))`.
pub fn kld_loss(pred: &RotatedBox, gt: &RotatedBox) -> Result<LossValueAndGrad> {
    kld_loss_with(pred, gt, &KldConfig::default())
}

pub fn kld_loss_with(
    pred: &RotatedBox,
    gt: &RotatedBox,
    cfg: &KldConfig,
) -> Result<LossValueAndGrad> {
    pred.validate()?;
    gt.validate()?;
    cfg.validate()?;
    let p = rbox_to_gaussian_with(pred, cfg.cov_divisor);
    let q = rbox_to_gaussian_with(gt, cfg.cov_divisor);
    let p_inv = p.cov.inverse()?;
    let q_inv = q.cov.inverse()?;
    let d = p.mean - q.mean;

    let (div, d_mean, d_cov) = match cfg.direction {
        KlDirection::PredToGt => {
            let div = kl_divergence(&p, &q)?;
            (div, q_inv.mul_vec(d), q_inv.sub(&p_inv).scale(0.5))
        }
        KlDirection::GtToPred => {
            let div = kl_divergence(&q, &p)?;
            let pd = p_inv.mul_vec(d);
            let d_cov = p_inv
                .sub(&p_inv.sandwich(&q.cov))
                .sub(&Sym2::outer(pd))
                .scale(0.5);
            (div, pd, d_cov)
        }
    };
    let div = div.max(0.0);
    let denom = cfg.tau + div.ln_1p();
    let value = 1.0 - 1.0 / denom;
    let dl_ddiv = 1.0 / (denom * denom * (1.0 + div));
    Ok(LossValueAndGrad {
        value,
        grad: chain(pred, cfg.cov_divisor, d_mean, &d_cov, dl_ddiv),
    })
}
