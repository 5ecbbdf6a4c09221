use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerKind, LayerSpec};
use super::loss::{hierarchical_loss, mean_softmax_ce};
use crate::data::AggregationMatrix;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSpace {
    Subclass,
    Class,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossMode {
    /// Cross-entropy on the head's own label space.
    Plain,
    /// Subclass cross-entropy plus `alpha` times class cross-entropy on `W . p`.
    Hierarchical { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Target {
    pub class: usize,
    pub subclass: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub subclass_ce: Option<f64>,
    pub class_ce: Option<f64>,
    pub decay: f64,
}

/// Gradients in the same layout as the model's tensors. Frozen tensors get
/// empty vectors.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub head: (Vec<f64>, Vec<f64>),
    pub aggregation: Option<Vec<f64>>,
}

/// Convolutional patch classifier: a backbone of [`Layer`]s followed by a
/// dense head, optionally topped by an aggregation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub(crate) input_size: usize,
    pub(crate) layers: Vec<Layer>,
    pub(crate) head: Layer,
    pub(crate) label_space: LabelSpace,
    pub(crate) aggregation: Option<AggregationMatrix>,
    pub(crate) steps: u64,
    pub(crate) hierarchy_id: Option<String>,
}

/// conv 5x5x16 /2, relu, pool 2, conv 3x3x32, relu, pool 2, fc 64, relu.
pub fn default_architecture() -> Vec<LayerSpec> {
    use LayerKind::*;
    [
        Conv { kernel: 5, channels: 16, stride: 2 },
        Relu,
        MaxPool { window: 2 },
        Conv { kernel: 3, channels: 32, stride: 1 },
        Relu,
        MaxPool { window: 2 },
        Dense { out_dim: 64 },
        Relu,
    ]
    .into_iter()
    .map(LayerSpec::new)
    .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn head_layer(in_dim: usize, n_out: usize, index: usize, seed: u64) -> Result<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "head", n_out as u64));
    Layer::new(LayerSpec::new(LayerKind::Dense { out_dim: n_out }), (in_dim, 1, 1), index, &mut rng)
}

impl Model {
    /// Backbone from `specs` on `3 x input_size x input_size` patches and a
    /// dense head with `n_out` outputs.
    pub fn new(input_size: usize, specs: &[LayerSpec], n_out: usize, label_space: LabelSpace, seed: u64) -> Result<Self> {
        if n_out < 2 {
            return Err(Error::InvalidArgument(format!("a head needs at least 2 outputs, got {n_out}")));
        }
        let mut shape = (3, input_size, input_size);
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "layer", i as u64));
            let layer = Layer::new(*spec, shape, i, &mut rng)?;
            shape = layer.out_shape;
            layers.push(layer);
        }
        let head = head_layer(shape.0 * shape.1 * shape.2, n_out, specs.len(), seed)?;
        Ok(Self {
            input_size,
            layers,
            head,
            label_space,
            aggregation: None,
            steps: 0,
            hierarchy_id: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> &Layer {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Layer {
        &mut self.head
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn num_outputs(&self) -> usize {
        self.head.out_shape.0
    }

    pub fn aggregation(&self) -> Option<&AggregationMatrix> {
        self.aggregation.as_ref()
    }

    /// Optimizer steps taken so far; zero means untrained.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn hierarchy_id(&self) -> Option<&str> {
        self.hierarchy_id.as_deref()
    }

    pub fn set_hierarchy_id(&mut self, id: Option<String>) {
        self.hierarchy_id = id;
    }

    /// Number of entries in a freeze mask: every backbone layer plus the head.
    pub fn mask_len(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn set_trainable(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.mask_len() {
            return Err(Error::InvalidArgument(format!(
                "freeze mask has {} entries, model has {}",
                mask.len(),
                self.mask_len()
            )));
        }
        for (layer, &t) in self.layers.iter_mut().zip(mask) {
            layer.trainable = t;
        }
        self.head.trainable = mask[self.layers.len()];
        Ok(())
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.trainable).chain([self.head.trainable]).collect()
    }

    pub fn set_w_trainable(&mut self, trainable: bool) -> Result<()> {
        let w = self
            .aggregation
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("model has no aggregation layer".into()))?;
        w.trainable = trainable;
        Ok(())
    }

    /// Fresh Glorot-uniform head with `n_out` outputs; drops any aggregation layer.
    pub fn replace_head(&mut self, n_out: usize, label_space: LabelSpace, seed: u64) -> Result<()> {
        if n_out < 2 {
            return Err(Error::InvalidArgument(format!("a head needs at least 2 outputs, got {n_out}")));
        }
        let trainable = self.head.trainable;
        self.head = head_layer(self.head.in_shape.0, n_out, self.layers.len(), seed)?;
        self.head.trainable = trainable;
        self.label_space = label_space;
        self.aggregation = None;
        Ok(())
    }

    /// Tops a subclass head with `W`, exposing class scores `W . p`.
    pub fn add_hierarchy_head(&mut self, w: AggregationMatrix) -> Result<()> {
        if self.label_space != LabelSpace::Subclass || w.cols() != self.num_outputs() {
            return Err(Error::Shape {
                layer: "aggregation".into(),
                detail: format!(
                    "aggregation matrix is {}x{} but the head is a {:?} head with {} outputs",
                    w.rows(),
                    w.cols(),
                    self.label_space,
                    self.num_outputs()
                ),
            });
        }
        self.aggregation = Some(w);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        let want = 3 * self.input_size * self.input_size;
        if x.len() != want {
            return Err(Error::Shape {
                layer: "input".into(),
                detail: format!("input has {} values, expected {want}", x.len()),
            });
        }
        Ok(())
    }

    /// Head logits for one `3 x S x S` input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a).0;
        }
        Ok(self.head.forward(&a).0)
    }

    /// Class scores: the logits of a class head, or `W . p` for a subclass
    /// head with an aggregation layer.
    pub fn class_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.forward(x)?;
        match (self.label_space, &self.aggregation) {
            (LabelSpace::Class, _) => Ok(p),
            (LabelSpace::Subclass, Some(w)) => Ok(w.apply(&p)),
            (LabelSpace::Subclass, None) => Err(Error::InvalidArgument(
                "a subclass head without an aggregation layer cannot score classes".into(),
            )),
        }
    }

    pub fn num_class_outputs(&self) -> Option<usize> {
        match (self.label_space, &self.aggregation) {
            (LabelSpace::Class, _) => Some(self.num_outputs()),
            (LabelSpace::Subclass, Some(w)) => Some(w.rows()),
            _ => None,
        }
    }

    /// Highest class score, lowest index on ties.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.class_scores(x)?))
    }

    /// Squared norm of every tensor that is currently trainable.
    pub fn trainable_sq_norm(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let mut total = 0.0;
        for l in self.layers.iter().chain([&self.head]) {
            if l.trainable && l.has_params() {
                total += sq(&l.weights) + sq(&l.bias);
            }
        }
        if let Some(w) = self.aggregation.as_ref().filter(|w| w.trainable) {
            total += sq(w.weights());
        }
        total
    }

    fn head_labels(&self, targets: &[Target]) -> Result<Vec<usize>> {
        match self.label_space {
            LabelSpace::Class => Ok(targets.iter().map(|t| t.class).collect()),
            LabelSpace::Subclass => targets
                .iter()
                .map(|t| t.subclass.ok_or_else(|| Error::InvalidArgument("sample has no subclass label".into())))
                .collect(),
        }
    }

    /// Loss and gradients over a batch, including decay on trainable tensors.
    pub fn compute_gradients(&self, inputs: &[Vec<f64>], targets: &[Target], mode: LossMode, beta: f64) -> Result<(StepLoss, Gradients)> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(format!("{} inputs for {} targets", inputs.len(), targets.len())));
        }
        let mut caches = Vec::with_capacity(inputs.len());
        let mut logits = Vec::with_capacity(inputs.len());
        for x in inputs {
            self.check_input(x)?;
            let mut a = x.clone();
            let mut cache = Vec::with_capacity(self.layers.len() + 1);
            for layer in &self.layers {
                let (y, c) = layer.forward(&a);
                cache.push(c);
                a = y;
            }
            let (p, c) = self.head.forward(&a);
            cache.push(c);
            caches.push(cache);
            logits.push(p);
        }

        let theta_sq = self.trainable_sq_norm();
        let (loss, grad_p, grad_w) = match mode {
            LossMode::Plain => {
                let labels = self.head_labels(targets)?;
                let (ce, g) = mean_softmax_ce(&logits, &labels)?;
                let decay = 0.5 * beta * theta_sq;
                let (sub, cls) = match self.label_space {
                    LabelSpace::Subclass => (Some(ce), None),
                    LabelSpace::Class => (None, Some(ce)),
                };
                let loss = StepLoss {
                    total: ce + decay,
                    subclass_ce: sub,
                    class_ce: cls,
                    decay,
                };
                (loss, g, None)
            }
            LossMode::Hierarchical { alpha } => {
                let w = match (&self.aggregation, self.label_space) {
                    (Some(w), LabelSpace::Subclass) => w,
                    _ => return Err(Error::InvalidArgument("hierarchical loss needs a subclass head with W".into())),
                };
                let subs = self.head_labels(targets)?;
                let classes: Vec<usize> = targets.iter().map(|t| t.class).collect();
                let h = hierarchical_loss(&logits, &subs, &classes, w, alpha, beta, theta_sq)?;
                let loss = StepLoss {
                    total: h.output.total,
                    subclass_ce: Some(h.output.subclass_ce),
                    class_ce: Some(h.output.class_ce),
                    decay: h.output.decay,
                };
                (loss, h.grad_p, w.trainable.then_some(h.grad_w))
            }
        };

        let mut grads = Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    if l.trainable && l.has_params() {
                        (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])
                    } else {
                        (Vec::new(), Vec::new())
                    }
                })
                .collect(),
            head: if self.head.trainable {
                (vec![0.0; self.head.weights.len()], vec![0.0; self.head.bias.len()])
            } else {
                (Vec::new(), Vec::new())
            },
            aggregation: grad_w,
        };

        // Nothing below the lowest trainable layer needs a gradient.
        let lowest = self.layers.iter().position(|l| l.trainable && l.has_params());
        let n = self.layers.len();
        for (cache, gp) in caches.iter().zip(&grad_p) {
            let head_grads = self.head.trainable.then(|| (&mut grads.head.0[..], &mut grads.head.1[..]));
            let Some(mut g) = self.head.backward(&cache[n], gp, lowest.is_some(), head_grads) else {
                continue;
            };
            let lowest = lowest.expect("input gradient only requested when a layer is trainable");
            for i in (lowest..n).rev() {
                let (dw, db) = &mut grads.layers[i];
                let layer_grads = (!dw.is_empty()).then(|| (&mut dw[..], &mut db[..]));
                match self.layers[i].backward(&cache[i], &g, i > lowest, layer_grads) {
                    Some(next) => g = next,
                    None => break,
                }
            }
        }

        if beta != 0.0 {
            for (l, (dw, db)) in self.layers.iter().zip(grads.layers.iter_mut()).chain([(&self.head, &mut grads.head)]) {
                if l.trainable && l.has_params() {
                    dw.iter_mut().zip(&l.weights).for_each(|(g, w)| *g += beta * w);
                    db.iter_mut().zip(&l.bias).for_each(|(g, b)| *g += beta * b);
                }
            }
            if let (Some(gw), Some(w)) = (grads.aggregation.as_mut(), &self.aggregation) {
                gw.iter_mut().zip(w.weights()).for_each(|(g, v)| *g += beta * v);
            }
        }
        Ok((loss, grads))
    }

    /// One SGD step at learning rate `lr`. Frozen tensors are not touched.
    /// Fails before updating anything if the loss or a gradient is not finite.
    pub fn train_step(&mut self, inputs: &[Vec<f64>], targets: &[Target], mode: LossMode, beta: f64, lr: f64) -> Result<StepLoss> {
        let (loss, grads) = self.compute_gradients(inputs, targets, mode, beta)?;
        let finite = loss.total.is_finite()
            && grads
                .layers
                .iter()
                .chain([&grads.head])
                .all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()))
            && grads.aggregation.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NumericalAbort {
                stage: None,
                iteration: self.steps,
            });
        }
        let update = |params: &mut [f64], g: &[f64]| params.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        for (l, (dw, db)) in self.layers.iter_mut().zip(&grads.layers) {
            update(&mut l.weights, dw);
            update(&mut l.bias, db);
        }
        update(&mut self.head.weights, &grads.head.0);
        update(&mut self.head.bias, &grads.head.1);
        if let (Some(g), Some(w)) = (&grads.aggregation, self.aggregation.as_mut()) {
            update(&mut w.weights, g);
        }
        self.steps += 1;
        Ok(loss)
    }

    /// Named views of every parameter tensor, for diffing.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate().filter(|(_, l)| l.has_params()) {
            out.push((format!("layer{i}.weight"), &l.weights[..]));
            out.push((format!("layer{i}.bias"), &l.bias[..]));
        }
        out.push(("head.weight".into(), &self.head.weights[..]));
        out.push(("head.bias".into(), &self.head.bias[..]));
        if let Some(w) = &self.aggregation {
            out.push(("aggregation".into(), w.weights()));
        }
        out
    }

    /// All parameters flattened in [`Model::tensors`] order.
    pub fn param_vector(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.to_vec()).collect()
    }

    pub fn set_param_vector(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().expect("parameter vector too short"));
        for l in self.layers.iter_mut().filter(|l| l.has_params()) {
            fill(&mut l.weights);
            fill(&mut l.bias);
        }
        fill(&mut self.head.weights);
        fill(&mut self.head.bias);
        if let Some(w) = self.aggregation.as_mut() {
            fill(&mut w.weights);
        }
    }
}

impl Gradients {
    /// Flattened like [`Model::param_vector`], with zeros for frozen tensors.
    pub fn to_vector(&self, model: &Model) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push = |g: &[f64], n: usize| {
            if g.is_empty() {
                out.extend(std::iter::repeat(0.0).take(n));
            } else {
                out.extend_from_slice(g);
            }
        };
        for (l, (dw, db)) in model.layers.iter().zip(&self.layers).filter(|(l, _)| l.has_params()) {
            push(dw, l.weights.len());
            push(db, l.bias.len());
        }
        push(&self.head.0, model.head.weights.len());
        push(&self.head.1, model.head.bias.len());
        if let Some(w) = &model.aggregation {
            push(self.aggregation.as_deref().unwrap_or(&[]), w.weights().len());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelHierarchy;
    use crate::hierarchy::build_aggregation_matrix;
    use rand::Rng;

    fn tiny(n_out: usize, space: LabelSpace) -> Model {
        let specs = [
            LayerSpec::new(LayerKind::Conv { kernel: 3, channels: 4, stride: 1 }),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::new(LayerKind::MaxPool { window: 2 }),
            LayerSpec::new(LayerKind::Dense { out_dim: 8 }),
            LayerSpec::new(LayerKind::Relu),
        ];
        Model::new(8, &specs, n_out, space, 3).unwrap()
    }

    fn input(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3 * 64).map(|_| rng.gen()).collect()
    }

    #[test]
    fn default_architecture_fits_64_and_32() {
        for s in [64, 32, 227] {
            assert!(Model::new(s, &default_architecture(), 4, LabelSpace::Class, 0).is_ok());
        }
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut m = tiny(3, LabelSpace::Class);
        m.head_mut().weights.iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(m.forward(&input(1)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn doubling_head_doubles_logits_when_bias_free() {
        let mut m = tiny(3, LabelSpace::Class);
        let a = m.forward(&input(2)).unwrap();
        m.head_mut().weights.iter_mut().for_each(|w| *w *= 2.0);
        let b = m.forward(&input(2)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_size_names_layer() {
        let m = tiny(3, LabelSpace::Class);
        assert!(matches!(m.forward(&[0.0; 10]), Err(Error::Shape { layer, .. }) if layer == "input"));
    }

    #[test]
    fn replace_head_is_local_and_seeded() {
        let mut a = tiny(3, LabelSpace::Class);
        let before = a.clone();
        a.replace_head(5, LabelSpace::Subclass, 9).unwrap();
        assert_eq!(a.layers(), before.layers());
        let mut b = before.clone();
        b.replace_head(5, LabelSpace::Subclass, 9).unwrap();
        assert_eq!(a.head(), b.head());
        assert_eq!(a.num_outputs(), 5);
        assert!(a.replace_head(1, LabelSpace::Class, 0).is_err());
    }

    #[test]
    fn hierarchy_head_checks_shape() {
        let mut m = tiny(3, LabelSpace::Class);
        let w = build_aggregation_matrix(&LabelHierarchy::identity(3));
        assert!(m.add_hierarchy_head(w.clone()).is_err());
        m.replace_head(3, LabelSpace::Subclass, 1).unwrap();
        m.add_hierarchy_head(w).unwrap();
        let x = input(4);
        assert_eq!(m.class_scores(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn frozen_tensors_never_move() {
        let mut m = tiny(2, LabelSpace::Class);
        let mut mask = vec![false; m.mask_len()];
        mask[3] = true;
        m.set_trainable(&mask).unwrap();
        let before = m.clone();
        let xs: Vec<Vec<f64>> = (0..4).map(input).collect();
        let ts: Vec<Target> = (0..4).map(|i| Target { class: i % 2, subclass: None }).collect();
        for _ in 0..5 {
            m.train_step(&xs, &ts, LossMode::Plain, 0.01, 0.1).unwrap();
        }
        assert_eq!(m.layers()[0], before.layers()[0]);
        assert_eq!(m.head(), before.head());
        assert_ne!(m.layers()[3], before.layers()[3]);
        assert_eq!(m.steps(), 5);
    }

    #[test]
    fn overfits_a_single_batch() {
        let mut m = tiny(3, LabelSpace::Class);
        let xs: Vec<Vec<f64>> = (0..6).map(input).collect();
        let ts: Vec<Target> = (0..6).map(|i| Target { class: i % 3, subclass: None }).collect();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            last = m.train_step(&xs, &ts, LossMode::Plain, 0.0, 0.1).unwrap().total;
        }
        assert!(last < 0.1, "loss stuck at {last}");
    }

    #[test]
    fn non_finite_input_aborts_without_update() {
        let mut m = tiny(2, LabelSpace::Class);
        let mut x = input(1);
        x[0] = f64::NAN;
        let before = m.clone();
        let err = m.train_step(&[x], &[Target { class: 0, subclass: None }], LossMode::Plain, 0.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::NumericalAbort { iteration: 0, .. }));
        assert_eq!(m, before);
    }
}
