//! Model zoo: three compact CNNs with named probe points at every
//! convolution output (pre-activation), plus binary checkpointing.
//!
//! Architectures are fixed; only the class count varies. Probe points are
//! where the estimators attach: activations are read there and probe
//! gradients are seeded there.

use crate::autodiff::{GradStore, Graph, VarId};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use std::io::Read;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CnnMnist,
    Lenet,
    AlexnetScaled,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<ModelKind> {
        match name {
            "cnn_mnist" => Ok(ModelKind::CnnMnist),
            "lenet" => Ok(ModelKind::Lenet),
            "alexnet_scaled" => Ok(ModelKind::AlexnetScaled),
            other => Err(Error::config(format!(
                "unknown model '{}'; expected cnn_mnist, lenet, or alexnet_scaled",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CnnMnist => "cnn_mnist",
            ModelKind::Lenet => "lenet",
            ModelKind::AlexnetScaled => "alexnet_scaled",
        }
    }

    /// Expected input shape as (channels, height, width).
    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            ModelKind::CnnMnist => (1, 28, 28),
            ModelKind::Lenet | ModelKind::AlexnetScaled => (3, 32, 32),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ModelKind::CnnMnist => 0,
            ModelKind::Lenet => 1,
            ModelKind::AlexnetScaled => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<ModelKind> {
        match tag {
            0 => Ok(ModelKind::CnnMnist),
            1 => Ok(ModelKind::Lenet),
            2 => Ok(ModelKind::AlexnetScaled),
            other => Err(Error::format(format!("unknown model tag {}", other))),
        }
    }
}

enum LayerDef {
    Conv {
        pad: usize,
        weight: usize,
        bias: usize,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense { weight: usize, bias: usize },
}

pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// A named probe point: the pre-activation output of one convolution.
#[derive(Debug, Clone)]
pub struct ProbePoint {
    pub name: String,
    /// Flattened activation dimension per sample (c * h * w).
    pub dim: usize,
    /// Trainable parameters of the convolution feeding this point.
    pub param_count: usize,
}

/// Result of taping one forward pass.
pub struct ForwardPass {
    pub input: VarId,
    pub logits: VarId,
    /// Probe activations in network order, aligned with `Model::probe_points`.
    pub probes: Vec<VarId>,
    /// Graph ids of the parameter leaves, aligned with `Model::params`.
    pub param_vars: Vec<VarId>,
}

pub struct Model {
    pub kind: ModelKind,
    pub num_classes: usize,
    layers: Vec<LayerDef>,
    pub params: Vec<Param>,
    probe_points: Vec<ProbePoint>,
}

struct Builder {
    layers: Vec<LayerDef>,
    params: Vec<Param>,
    probe_points: Vec<ProbePoint>,
    shape: (usize, usize, usize),
    conv_index: usize,
    seed: u64,
}

impl Builder {
    fn new(shape: (usize, usize, usize), seed: u64) -> Builder {
        Builder {
            layers: Vec::new(),
            params: Vec::new(),
            probe_points: Vec::new(),
            shape,
            conv_index: 0,
            seed,
        }
    }

    fn init_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let mut rng = SeededRng::new(self.seed, "init", self.params.len() as u64);
        Tensor {
            shape: shape.to_vec(),
            data: rng.sample_uniform(n, bound),
        }
    }

    fn conv(&mut self, out_ch: usize, k: usize, pad: usize) {
        let (c, h, w) = self.shape;
        self.conv_index += 1;
        let probe_name = format!("Conv2d_{}", self.conv_index);
        let fan_in = c * k * k;
        let weight = self.init_uniform(&[out_ch, c, k, k], fan_in);
        let w_idx = self.params.len();
        self.params.push(Param {
            name: format!("{}.weight", probe_name),
            value: weight,
        });
        let b_idx = self.params.len();
        self.params.push(Param {
            name: format!("{}.bias", probe_name),
            value: Tensor::zeros(&[out_ch]),
        });
        let oh = h + 2 * pad - k + 1;
        let ow = w + 2 * pad - k + 1;
        self.probe_points.push(ProbePoint {
            name: probe_name.clone(),
            dim: out_ch * oh * ow,
            param_count: out_ch * c * k * k + out_ch,
        });
        self.layers.push(LayerDef::Conv {
            pad,
            weight: w_idx,
            bias: b_idx,
        });
        self.shape = (out_ch, oh, ow);
    }

    fn relu(&mut self) {
        self.layers.push(LayerDef::Relu);
    }

    fn pool(&mut self) {
        let (c, h, w) = self.shape;
        self.layers.push(LayerDef::MaxPool2);
        self.shape = (c, h / 2, w / 2);
    }

    fn dense(&mut self, out_dim: usize) {
        let (c, h, w) = self.shape;
        let in_dim = c * h * w;
        self.layers.push(LayerDef::Flatten);
        let weight = self.init_uniform(&[in_dim, out_dim], in_dim);
        let w_idx = self.params.len();
        self.params.push(Param {
            name: "fc.weight".to_string(),
            value: weight,
        });
        let b_idx = self.params.len();
        self.params.push(Param {
            name: "fc.bias".to_string(),
            value: Tensor::zeros(&[out_dim]),
        });
        self.layers.push(LayerDef::Dense {
            weight: w_idx,
            bias: b_idx,
        });
    }
}

impl Model {
    /// Construct a freshly initialized model. `num_classes` must be 10 or
    /// 100; weights are seeded per parameter.
    pub fn build(kind: ModelKind, num_classes: usize, seed: u64) -> Result<Model> {
        if num_classes != 10 && num_classes != 100 {
            return Err(Error::config(format!(
                "num_classes must be 10 or 100, got {}",
                num_classes
            )));
        }
        let mut b = Builder::new(kind.input_shape(), seed);
        match kind {
            ModelKind::CnnMnist => {
                b.conv(12, 5, 0);
                b.relu();
                b.pool();
            }
            ModelKind::Lenet => {
                for _ in 0..3 {
                    b.conv(12, 5, 2);
                    b.relu();
                    b.pool();
                }
            }
            ModelKind::AlexnetScaled => {
                // AlexNet channel widths divided by 4: 16, 48, 96, 64, 64.
                b.conv(16, 11, 5);
                b.relu();
                b.pool();
                b.conv(48, 5, 2);
                b.relu();
                b.pool();
                b.conv(96, 3, 1);
                b.relu();
                b.conv(64, 3, 1);
                b.relu();
                b.conv(64, 3, 1);
                b.relu();
                b.pool();
            }
        }
        b.dense(num_classes);
        Ok(Model {
            kind,
            num_classes,
            layers: b.layers,
            params: b.params,
            probe_points: b.probe_points,
        })
    }

    pub fn probe_points(&self) -> &[ProbePoint] {
        &self.probe_points
    }

    pub fn probe_point(&self, name: &str) -> Option<(usize, &ProbePoint)> {
        self.probe_points
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Tape a forward pass over `input` of shape `[m, c, h, w]`.
    pub fn forward(&self, graph: &mut Graph, input: &Tensor) -> Result<ForwardPass> {
        let (c, h, w) = self.kind.input_shape();
        if input.ndim() != 4 || input.shape[1] != c || input.shape[2] != h || input.shape[3] != w {
            return Err(Error::contract(format!(
                "{} expects input [m, {}, {}, {}], got {:?}",
                self.kind.name(),
                c,
                h,
                w,
                input.shape
            )));
        }
        let m = input.shape[0];
        if m == 0 {
            return Err(Error::contract("forward expects a non-empty batch".to_string()));
        }

        let input_id = graph.leaf(input.clone());
        let param_vars: Vec<VarId> = self
            .params
            .iter()
            .map(|p| graph.leaf(p.value.clone()))
            .collect();

        let mut cur = input_id;
        let mut probes = Vec::new();
        for layer in &self.layers {
            cur = match layer {
                LayerDef::Conv { pad, weight, bias } => {
                    let conv = graph.conv2d(cur, param_vars[*weight], param_vars[*bias], *pad)?;
                    probes.push(conv);
                    conv
                }
                LayerDef::Relu => graph.relu(cur),
                LayerDef::MaxPool2 => graph.maxpool2(cur)?,
                LayerDef::Flatten => {
                    let n: usize = graph.value(cur).shape[1..].iter().product();
                    graph.reshape_node(cur, &[m, n])?
                }
                LayerDef::Dense { weight, bias } => {
                    let lin = graph.matmul_node(cur, param_vars[*weight])?;
                    graph.bias_add_row(lin, param_vars[*bias])?
                }
            };
        }

        Ok(ForwardPass {
            input: input_id,
            logits: cur,
            probes,
            param_vars,
        })
    }

    /// Forward pass plus mean cross-entropy loss.
    pub fn forward_loss(
        &self,
        graph: &mut Graph,
        input: &Tensor,
        labels: &[usize],
    ) -> Result<(ForwardPass, VarId)> {
        let pass = self.forward(graph, input)?;
        let loss = graph.softmax_cross_entropy(pass.logits, labels)?;
        Ok((pass, loss))
    }

    /// Pull per-parameter gradients out of a `GradStore`, in `params` order.
    /// Every parameter must have received a gradient.
    pub fn extract_param_grads(
        &self,
        pass: &ForwardPass,
        grads: &mut GradStore,
    ) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.params.len());
        for (i, var) in pass.param_vars.iter().enumerate() {
            match grads.take(*var) {
                Some(g) => out.push(g),
                None => {
                    return Err(Error::contract(format!(
                        "missing gradient for parameter '{}'",
                        self.params[i].name
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Argmax class predictions from logits `[m, n]`.
    pub fn predictions(logits: &Tensor) -> Vec<usize> {
        let (m, n) = (logits.rows(), logits.cols());
        (0..m)
            .map(|i| {
                let row = &logits.data[i * n..(i + 1) * n];
                let mut best = 0;
                for j in 1..n {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Serialize params to a little-endian binary checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.push(self.kind.tag());
        buf.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
            for d in &p.value.shape {
                buf.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &p.value.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::write_atomic(path, &buf)
    }

    /// Load a checkpoint written by `save`. The architecture is rebuilt from
    /// the header and every parameter is validated against it.
    pub fn load(path: &Path) -> Result<Model> {
        let mut file = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut r = Cursor {
            bytes: &bytes,
            pos: 0,
            path,
        };

        let magic = r.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(format!(
                "{}: bad checkpoint magic at offset 0",
                path.display()
            )));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::format(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                version
            )));
        }
        let kind = ModelKind::from_tag(r.u8()?)?;
        let num_classes = r.u32()? as usize;
        let n_params = r.u32()? as usize;

        let mut model = Model::build(kind, num_classes, 0)?;
        if n_params != model.params.len() {
            return Err(Error::format(format!(
                "{}: checkpoint has {} params, {} expects {}",
                path.display(),
                n_params,
                kind.name(),
                model.params.len()
            )));
        }
        for i in 0..n_params {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format(format!("{}: non-utf8 param name", path.display())))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let expected = &model.params[i];
            if name != expected.name || shape != expected.value.shape {
                return Err(Error::format(format!(
                    "{}: param {} is '{}' {:?}, expected '{}' {:?}",
                    path.display(),
                    i,
                    name,
                    shape,
                    expected.name,
                    expected.value.shape
                )));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            model.params[i].value = Tensor { shape, data };
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DFRKCKP1";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "{}: truncated checkpoint at offset {}",
                self.path.display(),
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
