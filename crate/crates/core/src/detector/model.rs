use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DetectorError;
use crate::diffmath::Tensor;

pub const RELATIONS: usize = 2;
/// Output column holding the human-class logit.
pub const HUMAN_CLASS: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Widths of the desc, tweet, numeric and categorical inputs.
    pub input_dims: [usize; 4],
    pub hidden: usize,
    pub relations: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl Architecture {
    pub fn new(input_dims: [usize; 4], hidden: usize) -> Self {
        Self {
            input_dims,
            hidden,
            relations: RELATIONS,
            leaky_slope: 0.01,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform in `±1/sqrt(fan_in)` for weights and bias alike.
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        Self {
            weight: Tensor::from_vec(fan_in, fan_out, draw(fan_in * fan_out)).expect("sized"),
            bias: Tensor::row_vector(draw(fan_out)),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    fn check(&self, name: &str, fan_in: usize, fan_out: usize) -> Result<(), DetectorError> {
        let ok = self.weight.shape() == (fan_in, fan_out) && self.bias.shape() == (1, fan_out);
        if ok {
            Ok(())
        } else {
            Err(DetectorError::Checkpoint(format!(
                "{name}: expected {fan_in}x{fan_out}, found weight {:?} bias {:?}",
                self.weight.shape(),
                self.bias.shape()
            )))
        }
    }
}

/// One relational graph-convolution layer: a self-loop transform, one
/// transform per relation and a shared bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelLayer {
    pub self_loop: Tensor,
    pub relation: Vec<Tensor>,
    pub bias: Tensor,
}

impl RelLayer {
    fn init<R: Rng>(rng: &mut R, hidden: usize, relations: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut mat = || {
            Tensor::from_vec(hidden, hidden, (0..hidden * hidden).map(|_| rng.random_range(-bound..bound)).collect())
                .expect("sized")
        };
        let self_loop = mat();
        let relation = (0..relations).map(|_| mat()).collect();
        Self {
            self_loop,
            relation,
            bias: Tensor::zeros(1, hidden),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgcnClassifier {
    pub arch: Architecture,
    /// desc, tweet, numeric, categorical encoders.
    pub inputs: [Linear; 4],
    pub fusion: Linear,
    pub layers: [RelLayer; 2],
    pub head: Linear,
    pub out: Linear,
}

const CHECKPOINT_FORMAT: &str = "coevo-rgcn";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: RgcnClassifier,
}

impl RgcnClassifier {
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = arch.hidden;
        let inputs = arch.input_dims.map(|d| Linear::init(&mut rng, d, h));
        let fusion = Linear::init(&mut rng, 4 * h, h);
        let layers = [RelLayer::init(&mut rng, h, arch.relations), RelLayer::init(&mut rng, h, arch.relations)];
        let head = Linear::init(&mut rng, h, h);
        let out = Linear::init(&mut rng, h, 2);
        Self { arch, inputs, fusion, layers, head, out }
    }

    /// Every weight zero: both logits vanish, so every probability is 1/2.
    pub fn zeros(arch: Architecture) -> Self {
        let h = arch.hidden;
        let layer = || RelLayer {
            self_loop: Tensor::zeros(h, h),
            relation: vec![Tensor::zeros(h, h); arch.relations],
            bias: Tensor::zeros(1, h),
        };
        Self {
            inputs: arch.input_dims.map(|d| Linear::zeros(d, h)),
            fusion: Linear::zeros(4 * h, h),
            layers: [layer(), layer()],
            head: Linear::zeros(h, h),
            out: Linear::zeros(h, 2),
            arch,
        }
    }

    /// All parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for l in self.inputs.iter().chain([&self.fusion]) {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        for layer in &self.layers {
            v.push(&layer.self_loop);
            v.extend(layer.relation.iter());
            v.push(&layer.bias);
        }
        for l in [&self.head, &self.out] {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for l in self.inputs.iter_mut().chain([&mut self.fusion]) {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        for layer in self.layers.iter_mut() {
            v.push(&mut layer.self_loop);
            v.extend(layer.relation.iter_mut());
            v.push(&mut layer.bias);
        }
        for l in [&mut self.head, &mut self.out] {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }

    /// Rebuilds a classifier from tensors in [`RgcnClassifier::tensors`] order.
    pub fn with_tensors(&self, tensors: &[Tensor]) -> Self {
        let mut out = self.clone();
        for (dst, src) in out.tensors_mut().into_iter().zip(tensors) {
            *dst = src.clone();
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks every tensor shape against the architecture.
    pub fn validate(&self) -> Result<(), DetectorError> {
        let a = &self.arch;
        let h = a.hidden;
        if a.relations != RELATIONS {
            return Err(DetectorError::Checkpoint(format!("expected {RELATIONS} relations, found {}", a.relations)));
        }
        for (i, (l, &d)) in self.inputs.iter().zip(&a.input_dims).enumerate() {
            l.check(&format!("input {i}"), d, h)?;
        }
        self.fusion.check("fusion", 4 * h, h)?;
        for (i, layer) in self.layers.iter().enumerate() {
            let square = |t: &Tensor| t.shape() == (h, h);
            if !square(&layer.self_loop)
                || layer.relation.len() != a.relations
                || !layer.relation.iter().all(square)
                || layer.bias.shape() != (1, h)
            {
                return Err(DetectorError::Checkpoint(format!("relational layer {i} does not match hidden size {h}")));
            }
        }
        self.head.check("head", h, h)?;
        self.out.check("out", h, 2)?;
        if self.tensors().iter().any(|t| !t.is_finite()) {
            return Err(DetectorError::Checkpoint("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DetectorError> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&ck).map_err(|e| DetectorError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, DetectorError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| DetectorError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(DetectorError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.model.validate()?;
        Ok(ck.model)
    }

    /// Loads a checkpoint and insists on the given input widths.
    pub fn from_json_expecting(text: &str, input_dims: [usize; 4]) -> Result<Self, DetectorError> {
        let m = Self::from_json(text)?;
        if m.arch.input_dims != input_dims {
            return Err(DetectorError::DimMismatch {
                expected: input_dims,
                found: m.arch.input_dims,
            });
        }
        Ok(m)
    }
}
