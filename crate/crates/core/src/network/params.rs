use std::collections::BTreeMap;

use ndarray::{Array, Array1, Array4, Dimension};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{FusionMode, SfcnConfig, OUTPUT_CLASSES};
use crate::error::{Error, Result};
use crate::ops::ConvGeometry;

/// Whether a tensor is updated by the optimizer or by batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Trainable,
    RunningStat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: Array4<f64>,
    pub bias: Option<Array1<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BnState {
    fn identity(channels: usize) -> Self {
        Self {
            scale: Array1::ones(channels),
            shift: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionLevel {
    /// 1×1 conv applied to the channel concatenation.
    pub squeeze: Conv,
    /// Transposed conv carrying this level's fused map to the next finer
    /// level (or straight to full resolution in concat-only mode).
    pub up: Option<Conv>,
}

/// All network tensors. The encoder convolutions exist once and are read
/// by both sibling branches; each branch owns its own BN state.
///
/// The same type doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct SfcnParams {
    pub shared_convs: Vec<Array4<f64>>,
    pub bn_origin: Vec<BnState>,
    pub bn_reflect: Vec<BnState>,
    pub fusion: Vec<FusionLevel>,
    pub head: Conv,
}

pub type Gradients = SfcnParams;

/// Upsampling factor and geometry of `fusion[level].up`.
pub(crate) fn up_geometry(config: &SfcnConfig, level: usize) -> ConvGeometry {
    match config.fusion {
        FusionMode::Hierarchical => ConvGeometry::upsampler(2),
        FusionMode::ConcatOnly => {
            debug_assert_eq!(level, 0);
            ConvGeometry::upsampler(1 << (config.levels - 1))
        }
    }
}

struct HeInit {
    rng: ChaCha8Rng,
}

impl HeInit {
    fn tensor(&mut self, shape: (usize, usize, usize, usize), fan_in: usize) -> Array4<f64> {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut out = Array4::zeros(shape);
        for v in out.iter_mut() {
            *v = normal.sample(&mut self.rng);
        }
        out
    }
}

fn emit<'a, D: Dimension>(
    f: &mut dyn FnMut(&str, Role, &[usize], &[f64]),
    name: &str,
    role: Role,
    a: &'a Array<f64, D>,
) {
    f(name, role, a.shape(), a.as_slice().expect("params are contiguous"));
}

fn emit_mut<D: Dimension>(
    f: &mut dyn FnMut(&str, Role, &[usize], &mut [f64]),
    name: &str,
    role: Role,
    a: &mut Array<f64, D>,
) {
    let shape = a.shape().to_vec();
    f(name, role, &shape, a.as_slice_mut().expect("params are contiguous"));
}

impl SfcnParams {
    /// He ("msra") normal initialization for every kernel; zero biases;
    /// identity BN for both branches.
    pub fn init(config: &SfcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut he = HeInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let ch = &config.channels_per_level;
        let mut shared_convs = Vec::new();
        let mut bn_channels = Vec::new();
        let mut in_c = 3;
        for level in config.layer_levels() {
            let out_c = ch[level];
            shared_convs.push(he.tensor((out_c, in_c, 3, 3), in_c * 9));
            bn_channels.push(out_c);
            in_c = out_c;
        }
        let top = config.levels - 1;
        let mut fusion = Vec::new();
        match config.fusion {
            FusionMode::Hierarchical => {
                for level in 0..config.levels {
                    let cat = if level == top {
                        2 * ch[top]
                    } else {
                        2 * ch[level] + ch[level + 1]
                    };
                    let squeeze = Conv {
                        weight: he.tensor((ch[level], cat, 1, 1), cat),
                        bias: Some(Array1::zeros(ch[level])),
                    };
                    let up = (level > 0).then(|| {
                        let g = ConvGeometry::upsampler(2);
                        Conv {
                            weight: he.tensor((ch[level], ch[level], g.kernel, g.kernel), transposed_fan_in(ch[level], g)),
                            bias: Some(Array1::zeros(ch[level])),
                        }
                    });
                    fusion.push(FusionLevel { squeeze, up });
                }
            }
            FusionMode::ConcatOnly => {
                let cat = 2 * ch[top];
                let g = up_geometry(config, 0);
                fusion.push(FusionLevel {
                    squeeze: Conv {
                        weight: he.tensor((ch[top], cat, 1, 1), cat),
                        bias: Some(Array1::zeros(ch[top])),
                    },
                    up: Some(Conv {
                        weight: he.tensor((ch[top], ch[0], g.kernel, g.kernel), transposed_fan_in(ch[top], g)),
                        bias: Some(Array1::zeros(ch[0])),
                    }),
                });
            }
        }
        let head = Conv {
            weight: he.tensor((OUTPUT_CLASSES, ch[0], 3, 3), ch[0] * 9),
            bias: Some(Array1::zeros(OUTPUT_CLASSES)),
        };
        let bn: Vec<BnState> = bn_channels.iter().map(|&c| BnState::identity(c)).collect();
        Ok(Self {
            shared_convs,
            bn_origin: bn.clone(),
            bn_reflect: bn,
            fusion,
            head,
        })
    }

    /// Same structure, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, _, _, data| data.fill(0.0));
        z
    }

    /// Visits every tensor under its canonical name, in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, Role, &[usize], &[f64])) {
        use Role::*;
        for (i, w) in self.shared_convs.iter().enumerate() {
            emit(f, &format!("branch.conv.{i}.weight"), Trainable, w);
        }
        for (branch, bns) in [("origin", &self.bn_origin), ("reflect", &self.bn_reflect)] {
            for (i, bn) in bns.iter().enumerate() {
                emit(f, &format!("bn.{branch}.{i}.scale"), Trainable, &bn.scale);
                emit(f, &format!("bn.{branch}.{i}.shift"), Trainable, &bn.shift);
                emit(f, &format!("bn.{branch}.{i}.mean"), RunningStat, &bn.running_mean);
                emit(f, &format!("bn.{branch}.{i}.var"), RunningStat, &bn.running_var);
            }
        }
        for (l, level) in self.fusion.iter().enumerate() {
            emit(f, &format!("fusion.{l}.squeeze.weight"), Trainable, &level.squeeze.weight);
            if let Some(b) = &level.squeeze.bias {
                emit(f, &format!("fusion.{l}.squeeze.bias"), Trainable, b);
            }
            if let Some(up) = &level.up {
                emit(f, &format!("fusion.{l}.up.weight"), Trainable, &up.weight);
                if let Some(b) = &up.bias {
                    emit(f, &format!("fusion.{l}.up.bias"), Trainable, b);
                }
            }
        }
        emit(f, "head.weight", Trainable, &self.head.weight);
        if let Some(b) = &self.head.bias {
            emit(f, "head.bias", Trainable, b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Role, &[usize], &mut [f64])) {
        use Role::*;
        for (i, w) in self.shared_convs.iter_mut().enumerate() {
            emit_mut(f, &format!("branch.conv.{i}.weight"), Trainable, w);
        }
        for (branch, bns) in [("origin", &mut self.bn_origin), ("reflect", &mut self.bn_reflect)] {
            for (i, bn) in bns.iter_mut().enumerate() {
                emit_mut(f, &format!("bn.{branch}.{i}.scale"), Trainable, &mut bn.scale);
                emit_mut(f, &format!("bn.{branch}.{i}.shift"), Trainable, &mut bn.shift);
                emit_mut(f, &format!("bn.{branch}.{i}.mean"), RunningStat, &mut bn.running_mean);
                emit_mut(f, &format!("bn.{branch}.{i}.var"), RunningStat, &mut bn.running_var);
            }
        }
        for (l, level) in self.fusion.iter_mut().enumerate() {
            emit_mut(f, &format!("fusion.{l}.squeeze.weight"), Trainable, &mut level.squeeze.weight);
            if let Some(b) = &mut level.squeeze.bias {
                emit_mut(f, &format!("fusion.{l}.squeeze.bias"), Trainable, b);
            }
            if let Some(up) = &mut level.up {
                emit_mut(f, &format!("fusion.{l}.up.weight"), Trainable, &mut up.weight);
                if let Some(b) = &mut up.bias {
                    emit_mut(f, &format!("fusion.{l}.up.bias"), Trainable, b);
                }
            }
        }
        emit_mut(f, "head.weight", Trainable, &mut self.head.weight);
        if let Some(b) = &mut self.head.bias {
            emit_mut(f, "head.bias", Trainable, b);
        }
    }

    /// Canonical names, shapes and roles of every tensor.
    pub fn layout(&self) -> Vec<(String, Role, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, role, shape, _| out.push((name.to_string(), role, shape.to_vec())));
        out
    }

    pub fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, role, _, data| {
            if role == Role::Trainable {
                n += data.len();
            }
        });
        n
    }

    /// All trainable entries concatenated in visiting order.
    pub fn trainable_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_trainable());
        self.visit(&mut |_, role, _, data| {
            if role == Role::Trainable {
                out.extend_from_slice(data);
            }
        });
        out
    }

    pub fn set_trainable_vector(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.num_trainable();
        if values.len() != expected {
            return Err(Error::shape(expected, values.len()));
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, role, _, data| {
            if role == Role::Trainable {
                data.copy_from_slice(&values[offset..offset + data.len()]);
                offset += data.len();
            }
        });
        Ok(())
    }

    /// Snapshot of every tensor keyed by canonical name.
    pub fn to_tensor_map(&self) -> BTreeMap<String, (Vec<usize>, Vec<f64>)> {
        let mut out = BTreeMap::new();
        self.visit(&mut |name, _, shape, data| {
            out.insert(name.to_string(), (shape.to_vec(), data.to_vec()));
        });
        out
    }

    /// Overwrites every tensor from `tensors`. Every tensor must be present
    /// with the exact shape this parameter set expects.
    pub fn load_tensor_map(&mut self, tensors: &BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
        for (name, _, shape) in self.layout() {
            match tensors.get(&name) {
                None => return Err(Error::Checkpoint(format!("missing tensor `{name}`"))),
                Some((found, _)) if *found != shape => {
                    return Err(Error::IncompatibleLayer {
                        name,
                        expected: shape,
                        found: found.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        self.visit_mut(&mut |name, _, _, data| {
            data.copy_from_slice(&tensors[name].1);
        });
        Ok(())
    }
}

fn transposed_fan_in(in_channels: usize, g: ConvGeometry) -> usize {
    // inputs contributing to one output pixel
    let taps = (g.kernel / g.stride).max(1);
    in_channels * taps * taps
}
