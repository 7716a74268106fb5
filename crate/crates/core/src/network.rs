//! Dense ReLU classifier with logits output.
//!
//! Class labels are 1-based: logit `i` belongs to class `i + 1`, and class `0`
//! is reserved for inputs whose top logit is tied.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{invalid, Error, Result};

/// One affine layer. `w` is row-major with shape `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.b.len()
    }

    pub fn in_dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    classes: usize,
    layers: Vec<Layer>,
}

/// Feedforward network: ReLU after every layer except the last, whose output
/// are the logits `Z(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct MlpModel {
    input_dim: usize,
    classes: usize,
    layers: Vec<Layer>,
}

impl TryFrom<ModelFile> for MlpModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let model = MlpModel::new(file.layers)?;
        if model.input_dim != file.input_dim || model.classes != file.classes {
            return Err(invalid(format!(
                "header says {}→{}, layers say {}→{}",
                file.input_dim, file.classes, model.input_dim, model.classes
            )));
        }
        Ok(model)
    }
}

impl From<MlpModel> for ModelFile {
    fn from(m: MlpModel) -> Self {
        ModelFile {
            input_dim: m.input_dim,
            classes: m.classes,
            layers: m.layers,
        }
    }
}

impl MlpModel {
    /// Builds a model from its layers, checking that shapes chain, that all
    /// parameters are finite and that there are at least two classes.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| invalid("model has no layers"))?;
        let input_dim = first.in_dim();
        if input_dim == 0 {
            return Err(invalid("input dimension must be at least 1"));
        }
        let mut prev = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.w.len() != layer.b.len() {
                return Err(invalid(format!(
                    "layer {k}: {} weight rows but {} biases",
                    layer.w.len(),
                    layer.b.len()
                )));
            }
            if layer.w.iter().any(|row| row.len() != prev) {
                return Err(invalid(format!("layer {k}: rows must have length {prev}")));
            }
            let finite = layer.w.iter().flatten().chain(&layer.b).all(|v| v.is_finite());
            if !finite {
                return Err(invalid(format!("layer {k}: non-finite parameter")));
            }
            prev = layer.out_dim();
        }
        if prev < 2 {
            return Err(invalid("a classifier needs at least two classes"));
        }
        Ok(MlpModel {
            input_dim,
            classes: prev,
            layers,
        })
    }

    /// Random initialisation for the layer widths `dims` (input first, classes
    /// last). Weights are Gaussian with variance `2 / fan_in`; hidden biases
    /// place each neuron's zero set through a uniformly drawn point of the unit
    /// box so that kinks start inside the input domain.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(invalid("need at least input and output widths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt())
                .map_err(|e| invalid(e.to_string()))?;
            let w: Vec<Vec<f64>> = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| normal.sample(&mut rng)).collect())
                .collect();
            let hidden = k + 2 < dims.len();
            let b = w
                .iter()
                .map(|row| {
                    if hidden && k == 0 {
                        -row.iter().map(|w| w * rng.gen::<f64>()).sum::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect();
            layers.push(Layer { w, b });
        }
        MlpModel::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("input has non-finite entries"));
        }
        Ok(())
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class == 0 || class > self.classes {
            return Err(Error::InvalidClass {
                class,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Logits `Z(x)`.
    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits_unchecked(x))
    }

    pub(crate) fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if k < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h
    }

    /// Pre-activations of every hidden layer at `x`.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.to_vec();
        for layer in &self.layers[..self.layers.len() - 1] {
            let z = layer.apply(&h);
            h = z.iter().map(|v| v.max(0.0)).collect();
            out.push(z);
        }
        Ok(out)
    }

    /// Predicted class in `1..=c`, or `0` on an exact tie of the top logit.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(classify_logits(&self.forward_logits(x)?))
    }

    /// Gradient of `seedᵀ Z` with respect to the input, by backpropagation.
    ///
    /// At a ReLU kink the derivative is taken as 0, which selects one element
    /// of the Clarke generalized gradient.
    pub fn input_gradient(&self, x: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if seed.len() != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                got: seed.len(),
            });
        }
        Ok(self.input_gradient_unchecked(x, seed))
    }

    pub(crate) fn input_gradient_unchecked(&self, x: &[f64], seed: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_vec();
        for layer in &self.layers[..last] {
            let z = layer.apply(&h);
            h = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
        }
        let mut delta = seed.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let mut back = vec![0.0; layer.in_dim()];
            for (row, d) in layer.w.iter().zip(&delta) {
                if *d != 0.0 {
                    for (acc, w) in back.iter_mut().zip(row) {
                        *acc += d * w;
                    }
                }
            }
            if k > 0 {
                for (v, z) in back.iter_mut().zip(&pre[k - 1]) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = back;
        }
        delta
    }
}

/// Index rule on computed logits: class `i + 1` when logit `i` strictly
/// exceeds every other one, `0` otherwise.
pub fn classify_logits(z: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    if z.iter().enumerate().any(|(j, v)| j != best && *v >= z[best]) {
        0
    } else {
        best + 1
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Mini-batch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Trains with softmax cross-entropy and momentum SGD. Zero epochs return the
/// model unchanged.
pub fn train(model: &MlpModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: data.dim(),
        });
    }
    for &label in data.labels() {
        model.check_class(label)?;
    }

    let mut model = model.clone();
    let mut velocity: Vec<Layer> = model
        .layers
        .iter()
        .map(|l| Layer {
            w: vec![vec![0.0; l.in_dim()]; l.out_dim()],
            b: vec![0.0; l.out_dim()],
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad: Vec<Layer> = velocity
                .iter()
                .map(|l| Layer {
                    w: vec![vec![0.0; l.in_dim()]; l.out_dim()],
                    b: vec![0.0; l.out_dim()],
                })
                .collect();
            for &i in batch {
                accumulate_ce_gradient(&model, &data.points()[i], data.labels()[i], &mut grad);
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for ((layer, vel), g) in model.layers.iter_mut().zip(&mut velocity).zip(&grad) {
                for ((wr, vr), gr) in layer.w.iter_mut().zip(&mut vel.w).zip(&g.w) {
                    for ((w, v), g) in wr.iter_mut().zip(vr.iter_mut()).zip(gr) {
                        *v = cfg.momentum * *v - scale * g;
                        *w += *v;
                    }
                }
                for ((b, v), g) in layer.b.iter_mut().zip(&mut vel.b).zip(&g.b) {
                    *v = cfg.momentum * *v - scale * g;
                    *b += *v;
                }
            }
        }
    }
    Ok(model)
}

fn accumulate_ce_gradient(model: &MlpModel, x: &[f64], label: usize, grad: &mut [Layer]) {
    let last = model.layers.len() - 1;
    // activations[k] is the input of layer k
    let mut activations = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(last);
    for layer in &model.layers[..last] {
        let z = layer.apply(activations.last().unwrap());
        activations.push(z.iter().map(|v| v.max(0.0)).collect());
        pre.push(z);
    }
    let logits = model.layers[last].apply(activations.last().unwrap());
    let mut delta = softmax(&logits);
    delta[label - 1] -= 1.0;

    for k in (0..model.layers.len()).rev() {
        let input = &activations[k];
        for (o, d) in delta.iter().enumerate() {
            grad[k].b[o] += d;
            for (g, a) in grad[k].w[o].iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if k > 0 {
            let layer = &model.layers[k];
            let mut back = vec![0.0; layer.in_dim()];
            for (row, d) in layer.w.iter().zip(&delta) {
                for (acc, w) in back.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            for (v, z) in back.iter_mut().zip(&pre[k - 1]) {
                if *z <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = back;
        }
    }
}

/// Fraction of samples whose predicted class equals the label; ties count as
/// errors. Returns 0 for an empty dataset.
pub fn accuracy(model: &MlpModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, &label) in data.points().iter().zip(data.labels()) {
        if model.classify(x)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn linear(w: Vec<Vec<f64>>, b: Vec<f64>) -> MlpModel {
        MlpModel::new(vec![Layer { w, b }]).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_logits_and_gradient() {
        let m = MlpModel::new(vec![
            Layer { w: vec![vec![0.0; 3]; 4], b: vec![0.0; 4] },
            Layer { w: vec![vec![0.0; 4]; 2], b: vec![0.0; 2] },
        ])
        .unwrap();
        assert_eq!(m.forward_logits(&[0.3, 0.1, 0.9]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.input_gradient(&[0.3, 0.1, 0.9], &[1.0, -1.0]).unwrap(), vec![0.0; 3]);
        // all logits tie
        assert_eq!(m.classify(&[0.3, 0.1, 0.9]).unwrap(), 0);
    }

    #[test]
    fn single_linear_layer() {
        let m = linear(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![0.0, 0.0]);
        assert_eq!(m.forward_logits(&[0.5, 0.5]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(m.input_gradient(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(m.input_gradient(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn dimension_errors() {
        let m = linear(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![0.0, 0.0]);
        assert!(matches!(m.forward_logits(&[0.5]), Err(Error::DimensionMismatch { .. })));
        assert!(m.input_gradient(&[0.5, 0.5], &[1.0]).is_err());
        assert!(m.forward_logits(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(MlpModel::new(vec![]).is_err());
        assert!(MlpModel::new(vec![Layer { w: vec![vec![1.0]], b: vec![0.0] }]).is_err());
        assert!(MlpModel::new(vec![
            Layer { w: vec![vec![1.0, 2.0]; 3], b: vec![0.0; 3] },
            Layer { w: vec![vec![1.0; 2]; 2], b: vec![0.0; 2] },
        ])
        .is_err());
        assert!(MlpModel::new(vec![Layer { w: vec![vec![f64::INFINITY], vec![0.0]], b: vec![0.0; 2] }]).is_err());
    }

    #[test]
    fn classify_rule() {
        assert_eq!(classify_logits(&[2.0, 1.0]), 1);
        assert_eq!(classify_logits(&[1.0, 2.0]), 2);
        assert_eq!(classify_logits(&[1.0, 1.0]), 0);
        assert_eq!(classify_logits(&[0.0, 3.0, 3.0]), 0);
        assert_eq!(classify_logits(&[3.0, 0.0, 2.9]), 1);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert!(p[1] < 1e-300);
        // Frozen from an extended-precision evaluation of e^z / Σ e^z (mpmath, 40 digits).
        let p = softmax(&[1.0, 2.0, 3.0]);
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (a, b) in p.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let m = MlpModel::init(&[2, 8, 2], 7).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.starts_with("{\"input_dim\":2,\"classes\":2,\"layers\":"));
        let back: MlpModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        let bad = json.replace("\"classes\":2", "\"classes\":3");
        assert!(serde_json::from_str::<MlpModel>(&bad).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = crate::datagen::two_moons(20, 0.1, 1).unwrap();
        let m = MlpModel::init(&[2, 8, 2], 3).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert_eq!(train(&m, &data, &cfg).unwrap(), m);
    }

    #[test]
    fn train_rejects_bad_input() {
        let m = MlpModel::init(&[2, 4, 2], 3).unwrap();
        let empty = LabeledDataset::new(vec![], vec![], 2, 2).unwrap();
        assert!(matches!(train(&m, &empty, &TrainConfig::default()), Err(Error::EmptyDataset)));
        let data = crate::datagen::two_moons(10, 0.0, 1).unwrap();
        let cfg = TrainConfig { momentum: 1.0, ..TrainConfig::default() };
        assert!(train(&m, &data, &cfg).is_err());
    }

    #[test]
    fn accuracy_counts() {
        let m = linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let pts = vec![vec![0.9, 0.1], vec![0.1, 0.9], vec![0.5, 0.5]];
        let right = LabeledDataset::new(pts.clone(), vec![1, 2, 1], 2, 2).unwrap();
        // third point is a tie, counted as an error
        assert_abs_diff_eq!(accuracy(&m, &right).unwrap(), 2.0 / 3.0);
        let wrong = LabeledDataset::new(pts[..2].to_vec(), vec![2, 1], 2, 2).unwrap();
        assert_eq!(accuracy(&m, &wrong).unwrap(), 0.0);
        let ok = LabeledDataset::new(pts[..2].to_vec(), vec![1, 2], 2, 2).unwrap();
        assert_eq!(accuracy(&m, &ok).unwrap(), 1.0);
    }
}
