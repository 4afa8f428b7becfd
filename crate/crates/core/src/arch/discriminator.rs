use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::params::{init_bn, init_conv, Binding, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{BatchNormConfig, ConvGeometry, Mode, Shape, Tape, Var};

/// One conv–BN–LeakyReLU stage of the PatchGAN ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscStage {
    pub channels: usize,
    pub stride: usize,
}

/// PatchGAN discriminator layout. Every conv is `kernel × kernel` with no
/// padding, so the output is a map of raw scores, one per receptive-field
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub stages: Vec<DiscStage>,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    /// The 70×70 ladder C64-C128-C256-C512 followed by a 1-channel conv.
    fn default() -> Self {
        let st = |channels, stride| DiscStage { channels, stride };
        DiscriminatorConfig {
            stages: vec![st(64, 2), st(128, 2), st(256, 2), st(512, 1)],
            kernel: 4,
            leaky_slope: 0.2,
            seed: 1,
        }
    }
}

impl DiscriminatorConfig {
    /// Default ladder with trailing stages dropped until the receptive field
    /// fits in a `patch × patch` input.
    pub fn for_patch(patch: usize) -> Self {
        let mut cfg = Self::default();
        while cfg.receptive_field() > patch && cfg.stages.len() > 1 {
            cfg.stages.pop();
        }
        cfg
    }

    /// Multiply every stage width by `num / den`.
    pub fn scaled_width(mut self, num: usize, den: usize) -> Self {
        for s in &mut self.stages {
            s.channels = (s.channels * num / den).max(1);
        }
        self
    }

    /// Side length of the input window seen by one output score.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for s in &self.stages {
            rf += (self.kernel - 1) * jump;
            jump *= s.stride;
        }
        rf + (self.kernel - 1) * jump
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.stages.is_empty() {
            bad.push("discriminator needs at least one stage".to_string());
        }
        if self.kernel == 0 {
            bad.push("discriminator kernel must be positive".to_string());
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.stride == 0) {
            bad.push("discriminator stage channels and stride must be positive".to_string());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            bad.push(format!("leaky_slope {} outside [0, 1)", self.leaky_slope));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub cfg: DiscriminatorConfig,
    pub params: ModelParams<T>,
    pub bn: BatchNormConfig,
}

pub struct DiscriminatorPass {
    pub scores: Var,
    pub binding: Binding,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let k = cfg.kernel;
        let mut p = ModelParams::new();
        let mut c_in = 3;
        for (i, s) in cfg.stages.iter().enumerate() {
            let pre = format!("stage{i}");
            init_conv(&mut p, &format!("{pre}.conv"), Shape::new(s.channels, c_in, k, k), c_in * k * k, false, false, &mut rng)?;
            init_bn(&mut p, &format!("{pre}.bn"), s.channels)?;
            c_in = s.channels;
        }
        init_conv(&mut p, "score.conv", Shape::new(1, c_in, k, k), c_in * k * k, true, false, &mut rng)?;
        Ok(Discriminator {
            cfg,
            params: p,
            bn: BatchNormConfig::default(),
        })
    }

    pub fn from_params(cfg: DiscriminatorConfig, params: ModelParams<T>) -> Result<Self> {
        let mut d = Self::new(cfg)?;
        d.params.check_layout(&params)?;
        d.params = params;
        Ok(d)
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Score a batch of residual images `(n, 3, h, w)`; returns raw
    /// (pre-sigmoid) scores `(n, 1, h', w')`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: Var,
        mode: Mode,
        requires_grad: bool,
    ) -> Result<DiscriminatorPass> {
        let s = tape.shape(input);
        let rf = self.cfg.receptive_field();
        if s.c != 3 {
            return Err(Error::shape(format!("discriminator expects 3 channels, got {s}")));
        }
        if s.h < rf || s.w < rf {
            return Err(Error::shape(format!(
                "discriminator input {s} is smaller than its {rf}x{rf} receptive field"
            )));
        }
        let binding = self.params.bind(tape, requires_grad);
        let mut x = input;
        for i in 0..self.cfg.stages.len() {
            let stride = self.cfg.stages[i].stride;
            let w = self.params.var(&binding, &format!("stage{i}.conv.w"))?;
            x = tape.conv2d(x, w, None, ConvGeometry::new(stride, 1, 0))?;
            let gamma = self.params.var(&binding, &format!("stage{i}.bn.gamma"))?;
            let beta = self.params.var(&binding, &format!("stage{i}.bn.beta"))?;
            let bn = self.bn;
            let (rm, rv) = self
                .params
                .pair_mut(&format!("stage{i}.bn.running_mean"), &format!("stage{i}.bn.running_var"))?;
            x = tape.batch_norm(x, gamma, beta, rm, rv, mode, bn)?;
            x = tape.leaky_relu(x, self.cfg.leaky_slope)?;
        }
        let w = self.params.var(&binding, "score.conv.w")?;
        let b = self.params.var(&binding, "score.conv.b")?;
        let scores = tape.conv2d(x, w, Some(b), ConvGeometry::new(1, 1, 0))?;
        Ok(DiscriminatorPass { scores, binding })
    }
}
