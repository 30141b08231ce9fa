//! Multilayer perceptrons, mini-batch iteration and the SGD training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerKind};
use crate::loss::LossFunction;
use crate::matrix::Matrix;
use crate::optimize::{OptimizerKind, Scheduler, WeightInit};

/// Rows per forward pass when computing metrics over a whole dataset.
pub const EVAL_CHUNK: usize = 1000;

/// An ordered stack of layers whose widths chain.
#[derive(Debug, Default)]
pub struct Mlp {
    layers: Vec<Box<dyn Layer>>,
}

impl Mlp {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::Config(format!(
                    "layer {} ({}) produces {} features but layer {} ({}) expects {}",
                    i,
                    pair[0].kind(),
                    pair[0].output_width(),
                    i + 1,
                    pair[1].kind(),
                    pair[1].input_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Builds one layer per kind, feeding each the previous output width.
    pub fn build(
        input_width: usize,
        kinds: &[LayerKind],
        init: WeightInit,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut width = input_width;
        let mut layers = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            let layer = kind.build(width, init, rng).map_err(|e| e.context(format!("layer {i}")))?;
            width = layer.output_width();
            layers.push(layer);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind()).collect()
    }

    pub fn input_width(&self) -> Option<usize> {
        self.layers.first().map(|l| l.input_width())
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output_width())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.parameters()).map(|p| p.value.len()).sum()
    }

    pub fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            y = layer
                .feedforward(&y)
                .map_err(|e| e.context(format!("feedforward of layer {i} ({})", layer.kind())))?;
        }
        Ok(y)
    }

    /// Walks the layers in reverse. Layer `i` receives `(Y, DY)` from the
    /// caller if it is the last layer, else the `(X, DX)` of layer `i + 1`.
    pub fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        for i in (0..self.layers.len()).rev() {
            let (head, tail) = self.layers.split_at_mut(i + 1);
            let layer = &mut head[i];
            let result = match tail.first() {
                None => layer.backpropagate(y, dy),
                Some(next) => match (next.input(), next.input_gradient()) {
                    (Some(x), Some(dx)) => layer.backpropagate(x, dx),
                    _ => Err(Error::State(format!("layer {} has no cached gradient", i + 1))),
                },
            };
            result.map_err(|e| e.context(format!("backpropagate of layer {i} ({})", layer.kind())))?;
        }
        Ok(())
    }

    pub fn optimize(&mut self, eta: f64) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.optimize(eta).map_err(|e| e.context(format!("optimize of layer {i}")))?;
        }
        Ok(())
    }

    pub fn set_optimizer(&mut self, layer: usize, kind: OptimizerKind) -> Result<()> {
        let count = self.layers.len();
        self.layers
            .get_mut(layer)
            .ok_or_else(|| Error::Config(format!("no layer {layer} in a network of {count} layers")))?
            .set_optimizer(kind);
        Ok(())
    }

    pub fn set_training(&mut self, training: bool) {
        for layer in &mut self.layers {
            layer.set_training(training);
        }
    }

    pub fn resample(&mut self, rng: &mut dyn RngCore) -> Result<()> {
        for layer in &mut self.layers {
            layer.resample(rng)?;
        }
        Ok(())
    }
}

/// Class-labelled examples, one per row of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::Data(format!("{} labels for {} examples", labels.len(), x.rows())));
        }
        if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= classes) {
            return Err(Error::Data(format!("label {c} at index {i} is not below {classes}")));
        }
        Ok(Self { x, labels, classes })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    /// Examples at `indices` with one-hot targets.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Batch {
            x: self.x.select_rows(indices),
            t: one_hot(&labels, self.classes).expect("labels validated at construction"),
            labels,
        }
    }
}

/// A mini-batch: inputs `X`, one-hot targets `T` and the raw labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub t: Matrix,
    pub labels: Vec<usize>,
}

/// Splits a dataset into mini-batches, optionally reshuffling every epoch.
/// The final batch keeps the remainder rows.
#[derive(Debug)]
pub struct DataLoader<'a> {
    data: &'a Dataset,
    batch_size: usize,
    shuffle: bool,
    order: Vec<usize>,
}

impl<'a> DataLoader<'a> {
    pub fn new(data: &'a Dataset, batch_size: usize, shuffle: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self { data, batch_size, shuffle, order: (0..data.len()).collect() })
    }

    pub fn batch_count(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }

    /// Row order for the next epoch, drawing a new permutation if shuffling.
    pub fn start_epoch<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.shuffle {
            self.order.shuffle(rng);
        }
    }

    pub fn batches(&self) -> impl Iterator<Item = Batch> + '_ {
        self.order.chunks(self.batch_size).map(|rows| self.data.batch(rows))
    }
}

/// `N x K` matrix with a single 1 per row at the label's column.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut t = Matrix::zeros(labels.len(), classes);
    for (i, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::Data(format!("label {c} at index {i} is not below {classes}")));
        }
        t.set(i, c, 1.0);
    }
    Ok(t)
}

/// Row-wise argmax, ties going to the lowest column.
pub fn predictions(y: &Matrix) -> Vec<usize> {
    (0..y.rows())
        .map(|i| {
            let row = y.row_slice(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Number of rows whose prediction equals the label.
pub fn correct_count(y: &Matrix, labels: &[usize]) -> usize {
    predictions(y).iter().zip(labels).filter(|(p, l)| p == l).count()
}

/// Fraction of rows whose prediction equals the label.
pub fn accuracy(y: &Matrix, labels: &[usize]) -> f64 {
    correct_count(y, labels) as f64 / labels.len() as f64
}

/// Mean loss and accuracy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Evaluation-mode pass over `data` in chunks of [`EVAL_CHUNK`] rows. A
/// trailing chunk of a single row is merged into the previous one so batch
/// normalization always sees at least two rows.
pub fn evaluate(mlp: &mut Mlp, data: &Dataset, loss: LossFunction) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    mlp.set_training(false);
    let mut bounds: Vec<usize> = (0..data.len()).step_by(EVAL_CHUNK).collect();
    bounds.push(data.len());
    if bounds.len() > 2 && data.len() - bounds[bounds.len() - 2] < 2 {
        bounds.remove(bounds.len() - 2);
    }
    let (mut total, mut correct) = (0.0, 0);
    for range in bounds.windows(2) {
        let rows: Vec<usize> = (range[0]..range[1]).collect();
        let batch = data.batch(&rows);
        let y = mlp.feedforward(&batch.x)?;
        total += loss.value(&y, &batch.t)?;
        correct += correct_count(&y, &batch.labels);
    }
    let n = data.len() as f64;
    Ok(Evaluation { loss: total / n, accuracy: correct as f64 / n })
}

/// Settings for [`sgd_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossFunction,
    pub scheduler: Scheduler,
    pub shuffle: bool,
}

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// Zero-based epoch index, also the scheduler step.
    pub epoch: usize,
    pub lr: f64,
    pub train: Evaluation,
    pub test: Option<Evaluation>,
    /// Wall-clock seconds spent in the training batches of this epoch.
    pub seconds: f64,
}

/// One SGD step on a batch with `DY = ∇L(Y, T) / N`; returns the batch loss
/// before the update.
pub fn train_step(mlp: &mut Mlp, batch: &Batch, loss: LossFunction, eta: f64) -> Result<f64> {
    let y = mlp.feedforward(&batch.x)?;
    let n = batch.x.rows() as f64;
    let value = loss.value(&y, &batch.t)?;
    let dy = loss.gradient(&y, &batch.t)?.scale(1.0 / n);
    mlp.backpropagate(&y, &dy)?;
    mlp.optimize(eta)?;
    Ok(value / n)
}

/// Mini-batch stochastic gradient descent. Each epoch draws new dropout
/// masks and a new row order from `rng`, trains on every batch, then
/// evaluates on the training and optional test set. `on_epoch` sees each
/// record as soon as it is complete.
pub fn sgd_train(
    mlp: &mut Mlp,
    train: &Dataset,
    test: Option<&Dataset>,
    options: &TrainOptions,
    rng: &mut dyn RngCore,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    options.scheduler.validate()?;
    if mlp.output_width().is_some_and(|k| k != train.classes()) {
        return Err(Error::Config(format!(
            "network produces {} outputs but the data has {} classes",
            mlp.output_width().unwrap_or(0),
            train.classes()
        )));
    }
    let mut loader = DataLoader::new(train, options.batch_size, options.shuffle)?;
    let mut history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let lr = options.scheduler.rate(epoch);
        let started = Instant::now();
        mlp.set_training(true);
        mlp.resample(rng)?;
        loader.start_epoch(rng);
        for (b, batch) in loader.batches().enumerate() {
            train_step(mlp, &batch, options.loss, lr)
                .map_err(|e| e.context(format!("epoch {epoch}, batch {b}")))?;
        }
        let seconds = started.elapsed().as_secs_f64();
        let metrics = EpochMetrics {
            epoch,
            lr,
            train: evaluate(mlp, train, options.loss)?,
            test: test.map(|t| evaluate(mlp, t, options.loss)).transpose()?,
            seconds,
        };
        on_epoch(&metrics)?;
        history.push(metrics);
    }
    mlp.set_training(true);
    Ok(history)
}

/// Two Gaussian blobs in the plane, centred at `(-c, -c)` and `(c, c)` with
/// unit spread; label 0 for the first blob and 1 for the second.
pub fn two_blobs<R: Rng + ?Sized>(per_class: usize, centre: f64, rng: &mut R) -> Dataset {
    use rand_distr::{Distribution, StandardNormal};
    let mut data = Vec::with_capacity(4 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let label = i % 2;
        let c = if label == 0 { -centre } else { centre };
        for _ in 0..2 {
            let noise: f64 = StandardNormal.sample(rng);
            data.push(c + noise);
        }
        labels.push(label);
    }
    let x = Matrix::from_vec(2 * per_class, 2, data).expect("sized above");
    Dataset::new(x, labels, 2).expect("labels are 0 or 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::Activation;
    use crate::layers::{ActivationLayer, LinearLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn empty_network_is_identity() {
        let mut mlp = Mlp::new(Vec::new()).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(mlp.feedforward(&x).unwrap(), x);
        mlp.backpropagate(&x, &x).unwrap();
    }

    #[test]
    fn identity_layer_network() {
        let layer = LinearLayer::new(Matrix::identity(3), Matrix::zeros(1, 3)).unwrap();
        let mut mlp = Mlp::new(vec![Box::new(layer)]).unwrap();
        let x = random(4, 3, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(mlp.feedforward(&x).unwrap(), x);
    }

    #[test]
    fn composition_matches_manual_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w1, b1) = (random(4, 3, &mut rng), random(1, 4, &mut rng));
        let (w2, b2) = (random(2, 4, &mut rng), random(1, 2, &mut rng));
        let relu = Activation::Relu;
        let mut a1 = ActivationLayer::new(w1.clone(), b1.clone(), relu).unwrap();
        let mut a2 = ActivationLayer::new(w2.clone(), b2.clone(), relu).unwrap();
        let mut mlp = Mlp::new(vec![
            Box::new(ActivationLayer::new(w1, b1, relu).unwrap()),
            Box::new(ActivationLayer::new(w2, b2, relu).unwrap()),
        ])
        .unwrap();

        let x = random(2, 3, &mut rng);
        let dy = random(2, 2, &mut rng);
        let y = mlp.feedforward(&x).unwrap();
        let h = a1.feedforward(&x).unwrap();
        assert_eq!(a2.feedforward(&h).unwrap(), y);

        mlp.backpropagate(&y, &dy).unwrap();
        a2.backpropagate(&y, &dy).unwrap();
        a1.backpropagate(&h, a2.input_gradient().unwrap()).unwrap();
        assert_eq!(mlp.layers()[0].input_gradient(), a1.input_gradient());
        assert_eq!(mlp.layers()[0].parameters()[0].grad, a1.parameters()[0].grad);
    }

    #[test]
    fn chain_and_state_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bad = Mlp::new(vec![
            Box::new(LinearLayer::init(3, 4, WeightInit::Xavier, &mut rng).unwrap()),
            Box::new(LinearLayer::init(5, 2, WeightInit::Xavier, &mut rng).unwrap()),
        ]);
        let message = bad.unwrap_err().to_string();
        assert!(message.contains("layer 1"), "{message}");

        let mut mlp = Mlp::build(
            3,
            &["ReLU(4)".parse().unwrap(), "Linear(2)".parse().unwrap()],
            WeightInit::Xavier,
            &mut rng,
        )
        .unwrap();
        let err = mlp.backpropagate(&Matrix::zeros(1, 2), &Matrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, Error::Context { .. }));
        assert!(err.to_string().contains("before feedforward"), "{err}");
        let err = mlp.feedforward(&Matrix::zeros(1, 5)).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn one_hot_encoding() {
        assert_eq!(
            one_hot(&[0, 2], 3).unwrap(),
            Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap()
        );
        assert_eq!(one_hot(&[0, 0, 0], 1).unwrap(), Matrix::ones(3, 1));
        let t = one_hot(&[1, 0, 3, 2, 1], 4).unwrap();
        assert!(t.rows_sum().as_slice().iter().all(|&s| s == 1.0));
        let err = one_hot(&[0, 5], 3).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("index 1")));
    }

    #[test]
    fn accuracy_breaks_ties_low() {
        let y = Matrix::from_rows(&[[0.5, 0.5, 0.0], [0.1, 0.2, 0.7], [1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(predictions(&y), vec![0, 2, 0]);
        assert_eq!(accuracy(&y, &[0, 2, 1]), 2.0 / 3.0);
    }

    #[test]
    fn loader_keeps_partial_batch_and_shuffles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = two_blobs(5, 2.0, &mut rng);
        let mut loader = DataLoader::new(&data, 4, true).unwrap();
        assert_eq!(loader.batch_count(), 3);
        loader.start_epoch(&mut rng);
        let sizes: Vec<usize> = loader.batches().map(|b| b.x.rows()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut seen: Vec<usize> = loader.order.clone();
        assert_ne!(seen, (0..10).collect::<Vec<_>>());
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        for batch in loader.batches() {
            assert_eq!(one_hot(&batch.labels, 2).unwrap(), batch.t);
        }

        let mut fixed = DataLoader::new(&data, 3, false).unwrap();
        fixed.start_epoch(&mut rng);
        assert_eq!(fixed.batches().next().unwrap().x, data.x().select_rows(&[0, 1, 2]));
        assert!(DataLoader::new(&data, 0, false).is_err());
    }

    fn blob_network(rng: &mut ChaCha8Rng) -> Mlp {
        Mlp::build(2, &["ReLU(8)".parse().unwrap(), "Linear(2)".parse().unwrap()], WeightInit::Xavier, rng)
            .unwrap()
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = two_blobs(20, 2.0, &mut rng);
        let mut mlp = blob_network(&mut rng);
        let before: Vec<Vec<f64>> =
            mlp.layers().iter().flat_map(|l| l.parameters()).map(|p| p.value.to_vec()).collect();
        let options = TrainOptions {
            epochs: 0,
            batch_size: 10,
            loss: LossFunction::SoftmaxCrossEntropy,
            scheduler: Scheduler::Constant { eta0: 0.1 },
            shuffle: true,
        };
        let history = sgd_train(&mut mlp, &data, None, &options, &mut rng, |_| Ok(())).unwrap();
        assert!(history.is_empty());
        let after: Vec<Vec<f64>> =
            mlp.layers().iter().flat_map(|l| l.parameters()).map(|p| p.value.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn blobs_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = two_blobs(100, 2.0, &mut rng);
        let mut mlp = blob_network(&mut rng);
        let options = TrainOptions {
            epochs: 50,
            batch_size: 10,
            loss: LossFunction::SoftmaxCrossEntropy,
            scheduler: Scheduler::Constant { eta0: 0.05 },
            shuffle: true,
        };
        let history = sgd_train(&mut mlp, &data, None, &options, &mut rng, |_| Ok(())).unwrap();
        assert_eq!(history.len(), 50);
        assert!(history.last().unwrap().train.accuracy >= 0.95);
    }

    #[test]
    fn one_step_reduces_batch_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = two_blobs(10, 2.0, &mut rng);
        let mut mlp = blob_network(&mut rng);
        let batch = data.batch(&(0..10).collect::<Vec<_>>());
        let loss = LossFunction::SoftmaxCrossEntropy;
        let before = train_step(&mut mlp, &batch, loss, 0.01).unwrap();
        let y = mlp.feedforward(&batch.x).unwrap();
        let after = loss.mean_value(&y, &batch.t).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let data = two_blobs(30, 1.0, &mut rng);
            let mut mlp = Mlp::build(
                2,
                &[
                    "LinearDropout(6,0.3)".parse().unwrap(),
                    "BatchNorm".parse().unwrap(),
                    "Tanh(4)".parse().unwrap(),
                    "Linear(2)".parse().unwrap(),
                ],
                WeightInit::He,
                &mut rng,
            )
            .unwrap();
            let options = TrainOptions {
                epochs: 3,
                batch_size: 7,
                loss: LossFunction::SoftmaxCrossEntropy,
                scheduler: Scheduler::Exponential { eta0: 0.1, decay: 0.1 },
                shuffle: true,
            };
            let history = sgd_train(&mut mlp, &data, Some(&data), &options, &mut rng, |_| Ok(())).unwrap();
            let params: Vec<Vec<f64>> =
                mlp.layers().iter().flat_map(|l| l.parameters()).map(|p| p.value.to_vec()).collect();
            let losses: Vec<f64> = history.iter().map(|m| m.train.loss).collect();
            (params, losses)
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
    }

    #[test]
    fn evaluation_merges_single_row_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = two_blobs(EVAL_CHUNK / 2, 2.0, &mut rng);
        let mut values = data.x().as_slice().to_vec();
        values.extend([0.0, 0.0]);
        let extra = Dataset::new(
            Matrix::from_vec(data.len() + 1, 2, values).unwrap(),
            data.labels().iter().copied().chain([0]).collect(),
            2,
        )
        .unwrap();
        let mut mlp = Mlp::build(
            2,
            &["BatchNorm".parse().unwrap(), "Linear(2)".parse().unwrap()],
            WeightInit::Xavier,
            &mut rng,
        )
        .unwrap();
        evaluate(&mut mlp, &extra, LossFunction::SoftmaxCrossEntropy).unwrap();
    }
}
