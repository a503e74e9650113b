//! Gated RepVGG block arithmetic and its exact fusion into one 3x3 convolution.
//!
//! Training-time block: `y = f(x) + alpha1 * g(x) + alpha2 * x`, where `f` is a
//! 3x3 conv, `g` a 1x1 conv and the last term an (optional) identity shortcut,
//! each followed by an optional batch normalisation. Feature maps are
//! `(batch, channel, height, width)`; kernels are `(c_out, c_in, kh, kw)`.

use ndarray::{s, Array1, Array4};

use crate::error::{Error, Result};

/// Inference-mode batch-norm statistics, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

impl BatchNormStats {
    /// Statistics that leave their input unchanged.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: Array1::zeros(channels),
            var: Array1::ones(channels),
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            eps: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Per-channel `(scale, shift)` so that `bn(v) = scale * v + shift`.
    pub fn affine(&self) -> (Array1<f64>, Array1<f64>) {
        let scale = &self.gamma / &self.var.mapv(|v| (v + self.eps).sqrt());
        let shift = &self.beta - &(&self.mean * &scale);
        (scale, shift)
    }

    fn validate(&self, channels: usize) -> Result<()> {
        let lens = [self.mean.len(), self.var.len(), self.gamma.len(), self.beta.len()];
        if lens.iter().any(|&l| l != channels) {
            return Err(Error::Shape(format!(
                "batch-norm stats have lengths {lens:?}, expected {channels}"
            )));
        }
        if self.var.iter().any(|&v| !(v + self.eps > 0.0)) {
            return Err(Error::Validation("batch-norm variance + eps must be positive".into()));
        }
        Ok(())
    }

    fn apply(&self, y: &mut Array4<f64>) {
        let (scale, shift) = self.affine();
        for mut plane in y.outer_iter_mut() {
            for (c, mut ch) in plane.outer_iter_mut().enumerate() {
                ch.mapv_inplace(|v| v * scale[c] + shift[c]);
            }
        }
    }

    /// Folds the normalisation into a preceding conv's kernel and bias.
    fn fold(&self, kernel: &Array4<f64>, bias: &Array1<f64>) -> (Array4<f64>, Array1<f64>) {
        let (scale, shift) = self.affine();
        let mut k = kernel.clone();
        for (co, mut filt) in k.outer_iter_mut().enumerate() {
            filt *= scale[co];
        }
        let b = bias * &scale + &shift;
        (k, b)
    }
}

/// Weights of one gated re-parameterisable block.
#[derive(Debug, Clone, PartialEq)]
pub struct RepBranchWeights {
    pub k3: Array4<f64>,
    pub b3: Array1<f64>,
    pub bn3: Option<BatchNormStats>,
    pub k1: Array4<f64>,
    pub b1: Array1<f64>,
    pub bn1: Option<BatchNormStats>,
    /// Gate on the 1x1 branch.
    pub alpha1: f64,
    /// Gate on the identity branch; `None` when the block has no shortcut.
    pub alpha2: Option<f64>,
    pub bn_id: Option<BatchNormStats>,
}

impl RepBranchWeights {
    /// A block without a shortcut; the gate starts at 1.
    pub fn new(k3: Array4<f64>, b3: Array1<f64>, k1: Array4<f64>, b1: Array1<f64>) -> Self {
        Self {
            k3,
            b3,
            bn3: None,
            k1,
            b1,
            bn1: None,
            alpha1: 1.0,
            alpha2: None,
            bn_id: None,
        }
    }

    /// Adds an identity shortcut with its gate at 1.
    pub fn with_identity(mut self) -> Self {
        self.alpha2 = Some(1.0);
        self
    }

    pub fn in_channels(&self) -> usize {
        self.k3.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.k3.dim().0
    }

    pub fn validate(&self) -> Result<()> {
        let (co, ci, kh, kw) = self.k3.dim();
        if (kh, kw) != (3, 3) {
            return Err(Error::Shape(format!("3x3 branch kernel is {kh}x{kw}")));
        }
        if self.k1.dim() != (co, ci, 1, 1) {
            return Err(Error::Shape(format!(
                "1x1 branch kernel is {:?}, expected {:?}",
                self.k1.dim(),
                (co, ci, 1, 1)
            )));
        }
        if self.b3.len() != co || self.b1.len() != co {
            return Err(Error::Shape("bias length differs from output channels".into()));
        }
        for bn in [&self.bn3, &self.bn1, &self.bn_id].into_iter().flatten() {
            bn.validate(co)?;
        }
        if self.alpha2.is_some() && ci != co {
            return Err(Error::Shape(format!(
                "identity branch needs c_in == c_out, got {ci} and {co}"
            )));
        }
        if self.bn_id.is_some() && self.alpha2.is_none() {
            return Err(Error::Validation("identity stats given without an identity branch".into()));
        }
        let finite = self
            .k3
            .iter()
            .chain(self.k1.iter())
            .chain(self.b3.iter())
            .chain(self.b1.iter())
            .all(|v| v.is_finite())
            && self.alpha1.is_finite()
            && self.alpha2.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::Validation("non-finite block weight".into()));
        }
        Ok(())
    }
}

/// Single 3x3 convolution produced by [`fuse`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusedConv {
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
}

impl FusedConv {
    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        conv2d_direct(&self.kernel, &self.bias, x)
    }

    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d_direct(kernel: &Array4<f64>, bias: &Array1<f64>, x: &Array4<f64>) -> Result<Array4<f64>> {
    let (co, ci, kh, kw) = kernel.dim();
    if (kh, kw) != (3, 3) {
        return Err(Error::Shape(format!("expected a 3x3 kernel, got {kh}x{kw}")));
    }
    conv_same(kernel, bias, x, ci, co)
}

fn conv_same(
    kernel: &Array4<f64>,
    bias: &Array1<f64>,
    x: &Array4<f64>,
    ci: usize,
    co: usize,
) -> Result<Array4<f64>> {
    let (n, c, h, w) = x.dim();
    if c != ci {
        return Err(Error::Shape(format!("input has {c} channels, kernel expects {ci}")));
    }
    if bias.len() != co {
        return Err(Error::Shape(format!("bias has {} entries for {co} filters", bias.len())));
    }
    let (_, _, kh, kw) = kernel.dim();
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Array4::<f64>::zeros((n, co, h, w));
    for b in 0..n {
        for o in 0..co {
            let mut plane = out.slice_mut(s![b, o, .., ..]);
            plane.fill(bias[o]);
            for i in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let k = kernel[[o, i, ky, kx]];
                        if k == 0.0 {
                            continue;
                        }
                        // output rows/cols whose tap (ky, kx) lands inside the input
                        let y0 = ph.saturating_sub(ky);
                        let y1 = (h + ph).saturating_sub(ky).min(h);
                        let x0 = pw.saturating_sub(kx);
                        let x1 = (w + pw).saturating_sub(kx).min(w);
                        for y in y0..y1 {
                            let iy = y + ky - ph;
                            for xx in x0..x1 {
                                plane[[y, xx]] += k * x[[b, i, iy, xx + kx - pw]];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Multi-branch forward pass of the gated block.
pub fn branch_forward(w: &RepBranchWeights, x: &Array4<f64>) -> Result<Array4<f64>> {
    w.validate()?;
    let (co, ci) = (w.out_channels(), w.in_channels());
    let mut y = conv_same(&w.k3, &w.b3, x, ci, co)?;
    if let Some(bn) = &w.bn3 {
        bn.apply(&mut y);
    }
    let mut g = conv_same(&w.k1, &w.b1, x, ci, co)?;
    if let Some(bn) = &w.bn1 {
        bn.apply(&mut g);
    }
    y.scaled_add(w.alpha1, &g);
    if let Some(alpha2) = w.alpha2 {
        let mut id = x.clone();
        if let Some(bn) = &w.bn_id {
            bn.apply(&mut id);
        }
        y.scaled_add(alpha2, &id);
    }
    Ok(y)
}

/// Re-parameterises the block into one 3x3 convolution.
///
/// Each branch's normalisation is folded into its kernel; the 1x1 kernel is
/// embedded at the centre tap and the identity becomes a per-channel centre
/// tap, both scaled by their gates before the kernels and biases are summed.
pub fn fuse(w: &RepBranchWeights) -> Result<FusedConv> {
    w.validate()?;
    let (co, ci) = (w.out_channels(), w.in_channels());
    let (mut kernel, mut bias) = match &w.bn3 {
        Some(bn) => bn.fold(&w.k3, &w.b3),
        None => (w.k3.clone(), w.b3.clone()),
    };

    let (k1, b1) = match &w.bn1 {
        Some(bn) => bn.fold(&w.k1, &w.b1),
        None => (w.k1.clone(), w.b1.clone()),
    };
    {
        let mut centre = kernel.slice_mut(s![.., .., 1, 1]);
        centre.scaled_add(w.alpha1, &k1.slice(s![.., .., 0, 0]));
    }
    bias.scaled_add(w.alpha1, &b1);

    if let Some(alpha2) = w.alpha2 {
        let mut id_kernel = Array4::<f64>::zeros((co, ci, 3, 3));
        for c in 0..co {
            id_kernel[[c, c, 1, 1]] = 1.0;
        }
        let (id_kernel, id_bias) = match &w.bn_id {
            Some(bn) => bn.fold(&id_kernel, &Array1::zeros(co)),
            None => (id_kernel, Array1::zeros(co)),
        };
        kernel.scaled_add(alpha2, &id_kernel);
        bias.scaled_add(alpha2, &id_bias);
    }
    Ok(FusedConv { kernel, bias })
}
