use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::params::{init_bn, init_conv, Binding, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{BatchNormConfig, ConvGeometry, Mode, Shape, Tape, Var};

/// Layer sizes of the restoration generator.
///
/// Input block `3 -> base` channels, one stride-2 downsample to `2·base`,
/// `n_res_blocks` dilated residual blocks with channel attention at width
/// `2·base`, one stride-2 transposed-conv upsample back to `base`, and an
/// output conv to 3 channels squashed into `(-1, 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_res_blocks: usize,
    pub dilations: Vec<usize>,
    pub attention_reduction: usize,
    pub kernel: usize,
    /// Start the output conv at zero so the untrained network emits an
    /// exactly-zero residual.
    pub zero_init_output: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 32,
            n_res_blocks: 7,
            dilations: vec![1, 2, 2, 4, 4, 2, 1],
            attention_reduction: 8,
            kernel: 3,
            zero_init_output: true,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Channels inside the residual trunk.
    pub fn width(&self) -> usize {
        2 * self.base_channels
    }

    /// Spatial dims of the input must be multiples of this.
    pub fn downsample_factor(&self) -> usize {
        2
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.base_channels == 0 {
            bad.push("base_channels must be positive".to_string());
        }
        if self.dilations.len() != self.n_res_blocks {
            bad.push(format!(
                "n_res_blocks is {} but {} dilations were given",
                self.n_res_blocks,
                self.dilations.len()
            ));
        }
        if self.dilations.contains(&0) {
            bad.push("dilations must be >= 1".to_string());
        }
        if self.attention_reduction == 0 || self.base_channels % self.attention_reduction != 0 {
            bad.push(format!(
                "base_channels {} must be divisible by attention_reduction {}",
                self.base_channels, self.attention_reduction
            ));
        }
        if self.kernel % 2 == 0 {
            bad.push(format!("kernel must be odd, got {}", self.kernel));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Handles produced by one recorded generator pass.
pub struct GeneratorPass {
    pub output: Var,
    pub binding: Binding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub params: ModelParams<T>,
    pub bn: BatchNormConfig,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (k, base, width) = (cfg.kernel, cfg.base_channels, cfg.width());
        let squeezed = width / cfg.attention_reduction;
        let mut p = ModelParams::new();
        init_conv(&mut p, "in.conv", Shape::new(base, 3, k, k), 3 * k * k, true, false, &mut rng)?;
        init_conv(&mut p, "down.conv", Shape::new(width, base, k, k), base * k * k, false, false, &mut rng)?;
        init_bn(&mut p, "down.bn", width)?;
        for i in 0..cfg.n_res_blocks {
            let pre = format!("res{i}");
            let fan = width * k * k;
            init_conv(&mut p, &format!("{pre}.conv1"), Shape::new(width, width, k, k), fan, false, false, &mut rng)?;
            init_bn(&mut p, &format!("{pre}.bn1"), width)?;
            init_conv(&mut p, &format!("{pre}.conv2"), Shape::new(width, width, k, k), fan, false, false, &mut rng)?;
            init_bn(&mut p, &format!("{pre}.bn2"), width)?;
            init_conv(&mut p, &format!("{pre}.att.fc1"), Shape::new(squeezed, width, 1, 1), width, true, false, &mut rng)?;
            init_conv(&mut p, &format!("{pre}.att.fc2"), Shape::new(width, squeezed, 1, 1), squeezed, true, false, &mut rng)?;
        }
        // transposed kernel layout: (c_in, c_out, k, k)
        init_conv(&mut p, "up.convt", Shape::new(width, base, k, k), width * k * k, false, false, &mut rng)?;
        init_bn(&mut p, "up.bn", base)?;
        init_conv(&mut p, "out.conv", Shape::new(3, base, k, k), base * k * k, true, cfg.zero_init_output, &mut rng)?;
        Ok(Generator {
            cfg,
            params: p,
            bn: BatchNormConfig::default(),
        })
    }

    /// Rebuild from a config and an already-populated parameter set.
    pub fn from_params(cfg: GeneratorConfig, params: ModelParams<T>) -> Result<Self> {
        let mut g = Self::new(cfg)?;
        g.params.check_layout(&params)?;
        g.params = params;
        Ok(g)
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != 3 {
            return Err(Error::shape(format!("generator expects 3 channels, got {s}")));
        }
        let f = self.cfg.downsample_factor();
        if s.h == 0 || s.w == 0 || s.h % f != 0 || s.w % f != 0 {
            return Err(Error::shape(format!(
                "generator input {s}: height and width must be positive multiples of {f}"
            )));
        }
        Ok(())
    }

    /// Record a forward pass of the scaled residual `input` (values nominally
    /// in `[-1, 1]`) and return the predicted residual in `(-1, 1)`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: Var,
        mode: Mode,
        requires_grad: bool,
    ) -> Result<GeneratorPass> {
        self.check_input(tape.shape(input))?;
        let binding = self.params.bind(tape, requires_grad);
        let k = self.cfg.kernel;
        let same = ConvGeometry::same(k, 1);

        let x = self.conv(tape, &binding, "in.conv", input, same, true)?;
        let x = tape.relu(x)?;

        let down = ConvGeometry::new(2, 1, k / 2);
        let x = self.conv(tape, &binding, "down.conv", x, down, false)?;
        let x = self.bn(tape, &binding, "down.bn", x, mode)?;
        let mut x = tape.relu(x)?;

        for i in 0..self.cfg.n_res_blocks {
            let d = self.cfg.dilations[i];
            x = self.residual_block(tape, &binding, &format!("res{i}"), x, d, mode)?;
        }

        let up = ConvGeometry::new(2, 1, k / 2).with_output_padding(1);
        let w = self.params.var(&binding, "up.convt.w")?;
        let x = tape.conv2d_transpose(x, w, None, up)?;
        let x = self.bn(tape, &binding, "up.bn", x, mode)?;
        let x = tape.relu(x)?;

        let x = self.conv(tape, &binding, "out.conv", x, same, true)?;
        let x = tape.sigmoid(x)?;
        let output = tape.affine(x, 2.0, -1.0)?;
        Ok(GeneratorPass { output, binding })
    }

    /// `x + gate ⊙ F(x)`, with `F = conv-BN-ReLU-dilated conv-BN` and `gate`
    /// the channel-attention squeeze of `F(x)`.
    pub fn residual_block(
        &mut self,
        tape: &mut Tape<T>,
        binding: &Binding,
        prefix: &str,
        x: Var,
        dilation: usize,
        mode: Mode,
    ) -> Result<Var> {
        let width = self.cfg.width();
        if tape.shape(x).c != width {
            return Err(Error::shape(format!(
                "{prefix}: expected {width} channels, got {}",
                tape.shape(x)
            )));
        }
        let k = self.cfg.kernel;
        let f = self.conv(tape, binding, &format!("{prefix}.conv1"), x, ConvGeometry::same(k, 1), false)?;
        let f = self.bn(tape, binding, &format!("{prefix}.bn1"), f, mode)?;
        let f = tape.relu(f)?;
        let f = self.conv(tape, binding, &format!("{prefix}.conv2"), f, ConvGeometry::same(k, dilation), false)?;
        let f = self.bn(tape, binding, &format!("{prefix}.bn2"), f, mode)?;
        let gate = self.attention_gate(tape, binding, prefix, f)?;
        let scaled = tape.channel_scale(f, gate)?;
        tape.add(x, scaled)
    }

    /// Per-channel gate in `(0, 1)` from pooled feature statistics.
    pub fn attention_gate(
        &self,
        tape: &mut Tape<T>,
        binding: &Binding,
        prefix: &str,
        f: Var,
    ) -> Result<Var> {
        let pointwise = ConvGeometry::new(1, 1, 0);
        let s = tape.global_avg_pool(f)?;
        let s = self.conv(tape, binding, &format!("{prefix}.att.fc1"), s, pointwise, true)?;
        let s = tape.relu(s)?;
        let s = self.conv(tape, binding, &format!("{prefix}.att.fc2"), s, pointwise, true)?;
        tape.sigmoid(s)
    }

    fn conv(
        &self,
        tape: &mut Tape<T>,
        binding: &Binding,
        prefix: &str,
        x: Var,
        g: ConvGeometry,
        bias: bool,
    ) -> Result<Var> {
        let w = self.params.var(binding, &format!("{prefix}.w"))?;
        let b = if bias {
            Some(self.params.var(binding, &format!("{prefix}.b"))?)
        } else {
            None
        };
        tape.conv2d(x, w, b, g)
    }

    fn bn(&mut self, tape: &mut Tape<T>, binding: &Binding, prefix: &str, x: Var, mode: Mode) -> Result<Var> {
        let gamma = self.params.var(binding, &format!("{prefix}.gamma"))?;
        let beta = self.params.var(binding, &format!("{prefix}.beta"))?;
        let cfg = self.bn;
        let (rm, rv) = self
            .params
            .pair_mut(&format!("{prefix}.running_mean"), &format!("{prefix}.running_var"))?;
        tape.batch_norm(x, gamma, beta, rm, rv, mode, cfg)
    }
}
