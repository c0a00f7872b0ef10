//! FCN, ResNet and TCN graphs over 15-channel, 22-step inputs.
//!
//! * FCN: three conv→BN→ReLU blocks (128, 256, 128 channels; kernels 8, 5, 3),
//!   global average pooling, dense head.
//! * ResNet: three residual blocks (64, 128, 128 channels), each three convs
//!   with kernels 8, 5, 3 and an identity or 1×1-projection shortcut, then
//!   global average pooling and a dense head.
//! * TCN: residual levels of two dilated causal convs (kernel 3, 64 channels,
//!   dilation doubling per level), features of the last time step, dense head.
//!
//! All widths are divided by [`ScaleConfig::divisor`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{bn_keys, Graph, Op, Padding};
use super::params::{ModelParams, Tensor};
use super::{Scalar, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::indicators::NUM_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Fcn,
    Resnet,
    Tcn,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Fcn, Arch::Resnet, Arch::Tcn];

    pub fn slug(self) -> &'static str {
        match self {
            Arch::Fcn => "fcn",
            Arch::Resnet => "resnet",
            Arch::Tcn => "tcn",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Fcn => "FCN",
            Arch::Resnet => "ResNet",
            Arch::Tcn => "TCN",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcn" => Ok(Arch::Fcn),
            "resnet" => Ok(Arch::Resnet),
            "tcn" => Ok(Arch::Tcn),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleConfig {
    /// Every channel width is divided by this.
    pub divisor: usize,
    pub tcn_levels: usize,
    pub tcn_kernel: usize,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            divisor: 1,
            tcn_levels: 4,
            tcn_kernel: 3,
        }
    }
}

impl ScaleConfig {
    pub fn with_divisor(divisor: usize) -> Self {
        Self {
            divisor,
            ..Self::default()
        }
    }

    fn width(&self, base: usize) -> Result<usize> {
        if self.divisor == 0 {
            return Err(Error::Config("scale divisor must be >= 1".into()));
        }
        match base / self.divisor {
            0 => Err(Error::Config(format!(
                "divisor {} leaves a {base}-channel layer with zero channels",
                self.divisor
            ))),
            w => Ok(w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    /// Uniform in `±sqrt(6/fan_in)`, variance-preserving under ReLU.
    He(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub key: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub trainable: bool,
}

#[derive(Default)]
struct Builder {
    ops: Vec<Op>,
    slots: usize,
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn new() -> Self {
        Self {
            slots: 1,
            ..Default::default()
        }
    }

    fn slot(&mut self) -> usize {
        self.slots += 1;
        self.slots - 1
    }

    fn spec(&mut self, key: String, shape: Vec<usize>, init: Init, trainable: bool) {
        self.specs.push(ParamSpec {
            key,
            shape,
            init,
            trainable,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        x: usize,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        dilation: usize,
        padding: Padding,
    ) -> usize {
        let (weight, bias) = (format!("{name}.weight"), format!("{name}.bias"));
        self.spec(
            weight.clone(),
            vec![c_out, c_in, k],
            Init::He(c_in * k),
            true,
        );
        self.spec(bias.clone(), vec![c_out], Init::Zeros, true);
        let y = self.slot();
        self.ops.push(Op::Conv {
            x,
            y,
            weight,
            bias,
            dilation,
            padding,
        });
        y
    }

    fn bn(&mut self, x: usize, name: &str, c: usize) -> usize {
        let [g, b, m, v] = bn_keys(name);
        self.spec(g, vec![c], Init::Ones, true);
        self.spec(b, vec![c], Init::Zeros, true);
        self.spec(m, vec![c], Init::Zeros, false);
        self.spec(v, vec![c], Init::Ones, false);
        let y = self.slot();
        self.ops.push(Op::BatchNorm {
            x,
            y,
            name: name.to_string(),
        });
        y
    }

    fn relu(&mut self, x: usize) -> usize {
        let y = self.slot();
        self.ops.push(Op::Relu { x, y });
        y
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        let y = self.slot();
        self.ops.push(Op::Add { a, b, y });
        y
    }

    fn gap(&mut self, x: usize) -> usize {
        let y = self.slot();
        self.ops.push(Op::GlobalAvgPool { x, y });
        y
    }

    fn last(&mut self, x: usize) -> usize {
        let y = self.slot();
        self.ops.push(Op::LastStep { x, y });
        y
    }

    fn dense(&mut self, x: usize, name: &str, c_in: usize, c_out: usize) -> usize {
        let (weight, bias) = (format!("{name}.weight"), format!("{name}.bias"));
        self.spec(weight.clone(), vec![c_out, c_in], Init::FanIn(c_in), true);
        self.spec(bias.clone(), vec![c_out], Init::Zeros, true);
        let y = self.slot();
        self.ops.push(Op::Dense { x, y, weight, bias });
        y
    }

    fn finish(self) -> (Graph, Vec<ParamSpec>) {
        (
            Graph {
                ops: self.ops,
                num_slots: self.slots,
            },
            self.specs,
        )
    }
}

fn fcn(scale: &ScaleConfig) -> Result<Builder> {
    let mut g = Builder::new();
    let mut x = 0;
    let mut c_in = NUM_FEATURES;
    for (i, (base, k)) in [(128, 8), (256, 5), (128, 3)].into_iter().enumerate() {
        let c = scale.width(base)?;
        let name = format!("block{}", i + 1);
        x = g.conv(x, &format!("{name}.conv"), c_in, c, k, 1, Padding::Same);
        x = g.bn(x, &format!("{name}.bn"), c);
        x = g.relu(x);
        c_in = c;
    }
    let x = g.gap(x);
    g.dense(x, "head", c_in, NUM_CLASSES);
    Ok(g)
}

fn resnet(scale: &ScaleConfig) -> Result<Builder> {
    let mut g = Builder::new();
    let mut x = 0;
    let mut c_in = NUM_FEATURES;
    for (i, base) in [64, 128, 128].into_iter().enumerate() {
        let c = scale.width(base)?;
        let name = format!("res{}", i + 1);
        let mut h = x;
        let mut ch = c_in;
        for (j, k) in [8, 5, 3].into_iter().enumerate() {
            h = g.conv(
                h,
                &format!("{name}.conv{}", j + 1),
                ch,
                c,
                k,
                1,
                Padding::Same,
            );
            h = g.bn(h, &format!("{name}.bn{}", j + 1), c);
            if j < 2 {
                h = g.relu(h);
            }
            ch = c;
        }
        let shortcut = if c_in != c {
            let s = g.conv(x, &format!("{name}.proj"), c_in, c, 1, 1, Padding::Same);
            g.bn(s, &format!("{name}.proj_bn"), c)
        } else {
            x
        };
        let sum = g.add(h, shortcut);
        x = g.relu(sum);
        c_in = c;
    }
    let x = g.gap(x);
    g.dense(x, "head", c_in, NUM_CLASSES);
    Ok(g)
}

fn tcn(scale: &ScaleConfig) -> Result<Builder> {
    if scale.tcn_levels == 0 || scale.tcn_kernel < 2 {
        return Err(Error::Config("TCN needs >= 1 level and kernel >= 2".into()));
    }
    let mut g = Builder::new();
    let mut x = 0;
    let mut c_in = NUM_FEATURES;
    let c = scale.width(64)?;
    let k = scale.tcn_kernel;
    for level in 0..scale.tcn_levels {
        let dilation = 1 << level;
        let name = format!("level{}", level + 1);
        let mut h = g.conv(
            x,
            &format!("{name}.conv1"),
            c_in,
            c,
            k,
            dilation,
            Padding::Causal,
        );
        h = g.relu(h);
        h = g.conv(
            h,
            &format!("{name}.conv2"),
            c,
            c,
            k,
            dilation,
            Padding::Causal,
        );
        h = g.relu(h);
        let res = if c_in != c {
            g.conv(
                x,
                &format!("{name}.downsample"),
                c_in,
                c,
                1,
                1,
                Padding::Causal,
            )
        } else {
            x
        };
        let sum = g.add(h, res);
        x = g.relu(sum);
        c_in = c;
    }
    let x = g.last(x);
    g.dense(x, "head", c_in, NUM_CLASSES);
    Ok(g)
}

fn build(arch: Arch, scale: &ScaleConfig) -> Result<(Graph, Vec<ParamSpec>)> {
    Ok(match arch {
        Arch::Fcn => fcn(scale)?,
        Arch::Resnet => resnet(scale)?,
        Arch::Tcn => tcn(scale)?,
    }
    .finish())
}

pub fn graph_for(arch: Arch, scale: &ScaleConfig) -> Result<Graph> {
    build(arch, scale).map(|(g, _)| g)
}

pub fn param_specs(arch: Arch, scale: &ScaleConfig) -> Result<Vec<ParamSpec>> {
    build(arch, scale).map(|(_, s)| s)
}

/// Deterministic initialization: convolution weights He-uniform, dense
/// weights uniform in `±1/sqrt(fan_in)`, biases and shifts zero, scales one, running variance one.
pub fn build_model<S: Scalar>(
    arch: Arch,
    scale: &ScaleConfig,
    seed: u64,
) -> Result<ModelParams<S>> {
    let specs = param_specs(arch, scale)?;
    let mut rng = crate::rng::stream(seed, &[crate::rng::tag("init")]);
    let mut params = std::collections::BTreeMap::new();
    let mut buffers = std::collections::BTreeMap::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<S> = match spec.init {
            Init::FanIn(fan) => {
                let bound = 1.0 / (fan as f64).sqrt();
                (0..n)
                    .map(|_| S::of(rng.random_range(-bound..bound)))
                    .collect()
            }
            Init::He(fan) => {
                let bound = (6.0 / fan as f64).sqrt();
                (0..n)
                    .map(|_| S::of(rng.random_range(-bound..bound)))
                    .collect()
            }
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
        };
        let t = Tensor {
            shape: spec.shape,
            data,
        };
        if spec.trainable {
            params.insert(spec.key, t);
        } else {
            buffers.insert(spec.key, t);
        }
    }
    Ok(ModelParams {
        arch,
        scale: *scale,
        seed,
        params,
        buffers,
    })
}

/// Longest input span that can influence one output position, propagated
/// through the graph.
pub fn receptive_field(arch: Arch, scale: &ScaleConfig) -> Result<usize> {
    let (graph, specs) = build(arch, scale)?;
    let kernel_of = |key: &str| {
        specs
            .iter()
            .find(|s| s.key == key)
            .map(|s| s.shape[2])
            .unwrap_or(1)
    };
    let mut rf = vec![1usize; graph.num_slots];
    for op in &graph.ops {
        match op {
            Op::Conv {
                x,
                y,
                weight,
                dilation,
                ..
            } => rf[*y] = rf[*x] + (kernel_of(weight) - 1) * dilation,
            Op::Add { a, b, y } => rf[*y] = rf[*a].max(rf[*b]),
            Op::BatchNorm { x, y, .. }
            | Op::Relu { x, y }
            | Op::LastStep { x, y }
            | Op::Dense { x, y, .. } => rf[*y] = rf[*x],
            // pooled features see every step
            Op::GlobalAvgPool { y, .. } => rf[*y] = usize::MAX,
        }
    }
    Ok(rf[graph.num_slots - 1])
}
