use rand::Rng;

use super::layer::{self, as3, Conv2d, Layer, Linear, MaxPool2d};
use crate::error::{Error, Result};
use crate::rng::{self, Stage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Feed-forward network over `C × H × W` inputs ending in a linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<T> {
    input_shape: [usize; 3],
    layers: Vec<Layer<T>>,
    output_shapes: Vec<Vec<usize>>,
    votable: Vec<usize>,
    num_classes: usize,
}

/// Pre-activation responses of every votable layer plus the classifier output
/// for a single input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrace<T> {
    pub preactivations: Vec<Tensor<T>>,
    pub logits: Vec<T>,
    pub softmax: Vec<T>,
}

/// Architecture description used to build freshly initialized models; input
/// extents are inferred from the preceding layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPlan {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        out_dim: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
}

/// Parameter gradients, one entry per layer (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &NetworkModel<T>) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| l.params().map(|(w, b)| (vec![T::zero(); w.len()], vec![T::zero(); b.len()])))
                .collect(),
        }
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Softmax cross-entropy of `logits` against `label`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    lse - logits[label]
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> NetworkModel<T> {
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        if input_shape.contains(&0) {
            return Err(Error::invalid(format!("input shape {input_shape:?} has a zero extent")));
        }
        let mut shape = input_shape.to_vec();
        let mut output_shapes = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            layer.validate().map_err(|e| Error::shape(i, e.to_string()))?;
            shape = layer.output_shape(&shape).ok_or_else(|| {
                Error::shape(i, format!("{:?} layer does not accept input of shape {shape:?}", layer.kind()))
            })?;
            output_shapes.push(shape.clone());
        }
        let num_classes = match layers.last() {
            Some(Layer::Linear(l)) => l.out_dim,
            _ => return Err(Error::shape(layers.len() - 1, "last layer must be linear")),
        };
        let votable = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parametric())
            .map(|(i, _)| i)
            .collect();
        Ok(NetworkModel {
            input_shape,
            layers,
            output_shapes,
            votable,
            num_classes,
        })
    }

    /// Builds a model from `plan` with He-uniform weights and zero biases.
    pub fn initialized(input_shape: [usize; 3], plan: &[LayerPlan], seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Stage::Init, 0);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(plan.len());
        for (i, p) in plan.iter().enumerate() {
            let layer = match *p {
                LayerPlan::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, _, _] = as3(&shape)
                        .ok_or_else(|| Error::shape(i, format!("conv2d needs a 3-d input, got {shape:?}")))?;
                    let mut conv = Conv2d::zeros(c, out_channels, (kernel, kernel), stride, padding);
                    let fan_in = conv.fan_in();
                    he_uniform(&mut conv.weight, fan_in, &mut rng);
                    Layer::Conv2d(conv)
                }
                LayerPlan::Linear { out_dim } => {
                    let in_dim = match shape[..] {
                        [d] => d,
                        _ => return Err(Error::shape(i, format!("linear needs a flat input, got {shape:?}"))),
                    };
                    let mut lin = Linear::zeros(in_dim, out_dim);
                    he_uniform(&mut lin.weight, in_dim, &mut rng);
                    Layer::Linear(lin)
                }
                LayerPlan::Relu => Layer::Relu,
                LayerPlan::MaxPool2d { window, stride } => Layer::MaxPool2d(MaxPool2d { window, stride }),
                LayerPlan::Flatten => Layer::Flatten,
            };
            shape = layer
                .output_shape(&shape)
                .ok_or_else(|| Error::shape(i, format!("layer does not accept input of shape {shape:?}")))?;
            layers.push(layer);
        }
        NetworkModel::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Positions (in `layers()`) of the conv2d and linear layers, ascending.
    pub fn votable_layers(&self) -> &[usize] {
        &self.votable
    }

    /// Output shape of every layer.
    pub fn output_shapes(&self) -> &[Vec<usize>] {
        &self.output_shapes
    }

    pub fn cast<U: Scalar>(&self) -> NetworkModel<U> {
        let cast = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                    weight: cast(&c.weight),
                    bias: cast(&c.bias),
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel_h: c.kernel_h,
                    kernel_w: c.kernel_w,
                    stride: c.stride,
                    padding: c.padding,
                }),
                Layer::Linear(lin) => Layer::Linear(Linear {
                    weight: cast(&lin.weight),
                    bias: cast(&lin.bias),
                    in_dim: lin.in_dim,
                    out_dim: lin.out_dim,
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2d(p) => Layer::MaxPool2d(*p),
                Layer::Flatten => Layer::Flatten,
            })
            .collect();
        NetworkModel::new(self.input_shape, layers).expect("casting preserves shapes")
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::shape(
                0,
                format!("input shape {:?} does not match model input {:?}", input.shape(), self.input_shape),
            ));
        }
        Ok(())
    }

    fn in_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.output_shapes[i - 1]
        }
    }

    fn apply(&self, i: usize, x: &[T]) -> Vec<T> {
        match &self.layers[i] {
            Layer::Conv2d(c) => layer::conv2d_forward(
                c,
                x,
                as3(self.in_shape(i)).expect("validated"),
                as3(&self.output_shapes[i]).expect("validated"),
            ),
            Layer::Linear(l) => layer::linear_forward(l, x),
            Layer::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            Layer::MaxPool2d(p) => layer::maxpool_forward(
                p,
                x,
                as3(self.in_shape(i)).expect("validated"),
                as3(&self.output_shapes[i]).expect("validated"),
            ),
            Layer::Flatten => x.to_vec(),
        }
    }

    /// Runs the network, keeping every layer's output. `acts[0]` is the input.
    fn forward_all(&self, input: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.data().to_vec());
        for i in 0..self.layers.len() {
            let out = self.apply(i, &acts[i]);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn logits(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut x = input.data().to_vec();
        for i in 0..self.layers.len() {
            x = self.apply(i, &x);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok(x)
    }

    pub fn predict_proba(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(input)?))
    }

    pub fn forward_with_trace(&self, input: &Tensor<T>) -> Result<FeatureTrace<T>> {
        let acts = self.forward_all(input)?;
        let logits = acts.last().expect("at least one layer").clone();
        let preactivations = self
            .votable
            .iter()
            .map(|&i| Tensor::new(self.output_shapes[i].clone(), acts[i + 1].clone()).expect("validated"))
            .collect();
        let softmax = softmax(&logits);
        Ok(FeatureTrace {
            preactivations,
            logits,
            softmax,
        })
    }

    /// Backpropagates `grad_logits` through the cached activations.
    fn backward(
        &self,
        acts: &[Vec<T>],
        grad_logits: Vec<T>,
        mut grads: Option<&mut Gradients<T>>,
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        let mut g = grad_logits;
        for i in (0..self.layers.len()).rev() {
            let x = &acts[i];
            let want_input = i > 0 || need_input_grad;
            let mut gi = vec![T::zero(); x.len()];
            match &self.layers[i] {
                Layer::Conv2d(c) => {
                    let gw = grads
                        .as_deref_mut()
                        .and_then(|gr| gr.layers[i].as_mut())
                        .map(|(w, b)| (w.as_mut_slice(), b.as_mut_slice()));
                    layer::conv2d_backward(
                        c,
                        x,
                        as3(self.in_shape(i)).expect("validated"),
                        &g,
                        as3(&self.output_shapes[i]).expect("validated"),
                        gw,
                        want_input.then_some(gi.as_mut_slice()),
                    );
                }
                Layer::Linear(l) => {
                    let gw = grads
                        .as_deref_mut()
                        .and_then(|gr| gr.layers[i].as_mut())
                        .map(|(w, b)| (w.as_mut_slice(), b.as_mut_slice()));
                    layer::linear_backward(l, x, &g, gw, want_input.then_some(gi.as_mut_slice()));
                }
                Layer::Relu => {
                    for ((d, &gv), &pre) in gi.iter_mut().zip(&g).zip(x) {
                        if pre > T::zero() {
                            *d = gv;
                        }
                    }
                }
                Layer::MaxPool2d(p) => layer::maxpool_backward(
                    p,
                    x,
                    as3(self.in_shape(i)).expect("validated"),
                    &g,
                    as3(&self.output_shapes[i]).expect("validated"),
                    &mut gi,
                ),
                Layer::Flatten => gi = g,
            }
            if !want_input {
                return None;
            }
            g = gi;
        }
        Some(g)
    }

    /// Gradient of the softmax cross-entropy loss against `label` with
    /// respect to the input.
    pub fn input_gradient(&self, input: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
        Ok(self.loss_and_input_gradient(input, label)?.1)
    }

    /// Cross-entropy loss against `label` together with its input gradient.
    pub fn loss_and_input_gradient(&self, input: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
        let (logits, grad) = self.logits_and_input_gradient(input, label)?;
        Ok((cross_entropy(&logits, label), grad))
    }

    /// Logits at `input` and the cross-entropy input gradient, from one
    /// forward and one backward pass.
    pub fn logits_and_input_gradient(&self, input: &Tensor<T>, label: usize) -> Result<(Vec<T>, Tensor<T>)> {
        self.check_label(label)?;
        let acts = self.forward_all(input)?;
        let logits = acts.last().expect("at least one layer").clone();
        let mut g = softmax(&logits);
        g[label] -= T::one();
        let grad = self.backward(&acts, g, None, true).expect("input gradient requested");
        Ok((logits, Tensor::new(self.input_shape.to_vec(), grad)?))
    }

    /// Adds this sample's parameter gradients into `grads` and returns its loss
    /// and logits.
    pub fn accumulate_gradients(
        &self,
        input: &Tensor<T>,
        label: usize,
        grads: &mut Gradients<T>,
    ) -> Result<(T, Vec<T>)> {
        self.check_label(label)?;
        let acts = self.forward_all(input)?;
        let logits = acts.last().expect("at least one layer").clone();
        let loss = cross_entropy(&logits, label);
        let mut g = softmax(&logits);
        g[label] -= T::one();
        self.backward(&acts, g, Some(grads), false);
        Ok((loss, logits))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }
}

fn he_uniform<T: Scalar>(weights: &mut [T], fan_in: usize, rng: &mut impl Rng) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for w in weights {
        *w = T::lit(rng.gen_range(-bound..bound));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_linear(w: Vec<f64>, b: Vec<f64>, in_dim: usize) -> NetworkModel<f64> {
        let out = b.len();
        NetworkModel::new(
            [1, 1, in_dim],
            vec![Layer::Flatten, Layer::Linear(Linear::new(in_dim, out, w, b).unwrap())],
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_non_linear_tail() {
        assert!(NetworkModel::<f64>::new([1, 2, 2], vec![]).is_err());
        let err = NetworkModel::<f64>::new([1, 2, 2], vec![Layer::Relu]).unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 0, .. }));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let err = NetworkModel::<f64>::new(
            [1, 4, 4],
            vec![Layer::Flatten, Layer::Relu, Layer::Linear(Linear::zeros(15, 2))],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 2, .. }), "{err}");
    }

    #[test]
    fn single_linear_trace_equals_logits() {
        let m = single_linear(vec![1.0, -2.0, 0.5, 0.25, 3.0, -1.0], vec![0.1, -0.2], 3);
        let x = Tensor::new(vec![1, 1, 3], vec![0.3, 0.6, 0.9]).unwrap();
        let tr = m.forward_with_trace(&x).unwrap();
        assert_eq!(tr.preactivations.len(), 1);
        assert_eq!(tr.preactivations[0].data(), &tr.logits[..]);
        assert!((tr.softmax.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn single_linear_gradient_closed_form() {
        let w = vec![1.0, -2.0, 0.5, 0.25, 3.0, -1.0];
        let m = single_linear(w.clone(), vec![0.1, -0.2], 3);
        let x = Tensor::new(vec![1, 1, 3], vec![0.3, 0.6, 0.9]).unwrap();
        let p = m.predict_proba(&x).unwrap();
        let label = 1;
        let r: Vec<f64> = (0..2).map(|k| p[k] - if k == label { 1.0 } else { 0.0 }).collect();
        let expect: Vec<f64> = (0..3).map(|i| w[i] * r[0] + w[3 + i] * r[1]).collect();
        let g = m.input_gradient(&x, label).unwrap();
        for (a, b) in g.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_model_has_zero_gradient() {
        let m = single_linear(vec![0.0; 6], vec![0.0; 2], 3);
        let x = Tensor::new(vec![1, 1, 3], vec![0.3, 0.6, 0.9]).unwrap();
        assert!(m.input_gradient(&x, 0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [1.5, -3.0, 700.0, 2.0];
        let shifted: Vec<f64> = z.iter().map(|v| v - 123.25).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
        assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let m = single_linear(vec![f64::MAX, f64::MAX], vec![0.0], 2);
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(m.logits(&x), Err(Error::NonFinite { layer: 1 })));
    }

    #[test]
    fn bad_label_rejected() {
        let m = single_linear(vec![0.0; 6], vec![0.0; 2], 3);
        let x = Tensor::new(vec![1, 1, 3], vec![0.3, 0.6, 0.9]).unwrap();
        assert!(m.input_gradient(&x, 2).is_err());
    }
}
