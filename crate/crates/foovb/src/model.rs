//! Minimal fully connected network with ReLU hidden activations, softmax
//! cross-entropy loss, and exact hand-written gradients.
//!
//! The network is deliberately tiny and dependency-free: the optimizer needs
//! nothing but deterministic forward passes and exact gradients for arbitrary
//! weight samples, evaluated in f64.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How per-example losses are reduced over a mini-batch.
///
/// Mean keeps the expectation-term magnitudes independent of batch size and
/// is the default; the reduction is recorded in run summaries because it
/// rescales the likelihood term against the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Mean,
    Sum,
}

/// Layer widths, e.g. `[1024, 200, 200, 10]`: inputs, hidden..., classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(ModelError::ShapeMismatch(
                "architecture needs at least input and output sizes".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(ModelError::ShapeMismatch(
                "layer sizes must be positive".into(),
            ));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Per-layer `(n_in, n_out)` pairs.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// Per-layer weight matrices (out x in) and bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl NetworkParams {
    pub fn new(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        if weights.len() != biases.len() {
            return Err(ModelError::ShapeMismatch(
                "weights and biases differ in layer count".into(),
            ));
        }
        for (l, (w, b)) in weights.iter().zip(biases.iter()).enumerate() {
            if w.nrows() != b.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "layer {l}: weight rows {} vs bias len {}",
                    w.nrows(),
                    b.len()
                )));
            }
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (n_in, n_out) in arch.layer_shapes() {
            weights.push(DMatrix::zeros(n_out, n_in));
            biases.push(DVector::zeros(n_out));
        }
        Self { weights, biases }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &DMatrix<f64> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &DVector<f64> {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut DMatrix<f64> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut DVector<f64> {
        &mut self.biases[layer]
    }

    /// Flattens layer by layer: weights row-major, then the bias.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    out.push(w[(i, j)]);
                }
            }
            out.extend(b.iter().cloned());
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`flatten`](Self::flatten) for the given architecture.
    pub fn unflatten(arch: &Architecture, theta: &DVector<f64>) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(ModelError::ShapeMismatch(format!(
                "theta has {} entries, architecture needs {}",
                theta.len(),
                arch.param_count()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut pos = 0;
        for (n_in, n_out) in arch.layer_shapes() {
            let mut w = DMatrix::zeros(n_out, n_in);
            for i in 0..n_out {
                for j in 0..n_in {
                    w[(i, j)] = theta[pos];
                    pos += 1;
                }
            }
            let b = DVector::from_fn(n_out, |i, _| theta[pos + i]);
            pos += n_out;
            weights.push(w);
            biases.push(b);
        }
        Ok(Self { weights, biases })
    }
}

/// Mini-batch: inputs are `b x d_in` with entries in [0,1], labels are class
/// indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(ModelError::EmptyDataset);
        }
        if inputs.nrows() != labels.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} input rows vs {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_batch(params: &NetworkParams, batch: &Batch) -> Result<()> {
    let d_in = params.weights[0].ncols();
    if batch.inputs.ncols() != d_in {
        return Err(ModelError::ShapeMismatch(format!(
            "batch has {} features, network expects {}",
            batch.inputs.ncols(),
            d_in
        )));
    }
    let classes = params.weights.last().unwrap().nrows();
    for &l in &batch.labels {
        if l >= classes {
            return Err(ModelError::LabelOutOfRange { label: l, classes });
        }
    }
    Ok(())
}

/// Activations of every layer; `acts[0]` is the input, `acts.last()` the
/// logits (identity output activation).
fn forward_pass(params: &NetworkParams, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let layers = params.num_layers();
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(inputs.clone());
    for l in 0..layers {
        let prev = &acts[l];
        let mut z = prev * params.weights[l].transpose();
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                z[(i, j)] += params.biases[l][j];
            }
        }
        if l + 1 < layers {
            z.apply(|x| *x = x.max(0.0));
        }
        acts.push(z);
    }
    acts
}

/// Logits for a batch (`b x classes`).
pub fn forward(params: &NetworkParams, batch: &Batch) -> Result<DMatrix<f64>> {
    check_batch(params, batch)?;
    Ok(forward_pass(params, &batch.inputs).pop().unwrap())
}

/// Softmax cross-entropy loss and its exact gradient.
///
/// The per-example negative log-likelihood is computed through a max-shifted
/// log-sum-exp, so the loss stays finite for logits up to ~1e300.
pub fn loss_and_grad(
    params: &NetworkParams,
    batch: &Batch,
    reduction: LossReduction,
) -> Result<(f64, NetworkParams)> {
    check_batch(params, batch)?;
    let acts = forward_pass(params, &batch.inputs);
    let logits = acts.last().unwrap();
    let b = batch.len();
    let classes = logits.ncols();
    let scale = match reduction {
        LossReduction::Mean => 1.0 / b as f64,
        LossReduction::Sum => 1.0,
    };

    let mut loss = 0.0;
    // dz at the output: scale * (softmax - onehot)
    let mut delta = DMatrix::zeros(b, classes);
    for e in 0..b {
        let row = logits.row(e);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..classes {
            denom += (row[j] - max).exp();
        }
        let lse = max + denom.ln();
        loss += scale * (lse - row[batch.labels[e]]);
        for j in 0..classes {
            let p = (row[j] - max).exp() / denom;
            delta[(e, j)] = scale * (p - if j == batch.labels[e] { 1.0 } else { 0.0 });
        }
    }

    let layers = params.num_layers();
    let mut grad = NetworkParams::zeros(&Architecture {
        layer_sizes: std::iter::once(params.weights[0].ncols())
            .chain(params.weights.iter().map(|w| w.nrows()))
            .collect(),
    });
    let mut dz = delta;
    for l in (0..layers).rev() {
        grad.weights[l] = dz.transpose() * &acts[l];
        for j in 0..dz.ncols() {
            grad.biases[l][j] = dz.column(j).sum();
        }
        if l > 0 {
            let mut da = &dz * &params.weights[l];
            // ReLU subgradient at exactly 0 is 0
            let z = &acts[l];
            for i in 0..da.nrows() {
                for j in 0..da.ncols() {
                    if z[(i, j)] <= 0.0 {
                        da[(i, j)] = 0.0;
                    }
                }
            }
            dz = da;
        }
    }
    Ok((loss, grad))
}

/// Fraction of argmax-correct predictions; argmax ties break toward the
/// lowest class index.
pub fn accuracy(params: &NetworkParams, inputs: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let batch = Batch::new(inputs.clone(), labels.to_vec())?;
    let logits = forward(params, &batch)?;
    let mut correct = 0usize;
    for e in 0..labels.len() {
        let row = logits.row(e);
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == labels[e] {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{sample_noise_mat, sample_noise_vec, seeded_rng};

    fn random_params(arch: &Architecture, seed: u64) -> NetworkParams {
        let mut rng = seeded_rng(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (n_in, n_out) in arch.layer_shapes() {
            weights.push(sample_noise_mat(n_out, n_in, &mut rng) * 0.5);
            biases.push(sample_noise_vec(n_out, &mut rng) * 0.1);
        }
        NetworkParams::new(weights, biases).unwrap()
    }

    #[test]
    fn forward_zero_params_and_identity_layer() {
        let arch = Architecture::new(vec![3, 4, 2]).unwrap();
        let params = NetworkParams::zeros(&arch);
        let batch = Batch::new(DMatrix::from_element(2, 3, 0.7), vec![0, 1]).unwrap();
        let logits = forward(&params, &batch).unwrap();
        assert!(logits.iter().all(|&x| x == 0.0));

        let arch = Architecture::new(vec![3, 3]).unwrap();
        let mut params = NetworkParams::zeros(&arch);
        *params.weight_mut(0) = DMatrix::identity(3, 3);
        let inputs = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let batch = Batch::new(inputs.clone(), vec![0, 2]).unwrap();
        let logits = forward(&params, &batch).unwrap();
        assert_eq!(logits, inputs);
    }

    #[test]
    fn forward_matches_manual_arithmetic() {
        let arch = Architecture::new(vec![2, 3, 2]).unwrap();
        let params = random_params(&arch, 3);
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.4]);
        let batch = Batch::new(x.clone(), vec![1]).unwrap();
        let logits = forward(&params, &batch).unwrap();

        let mut hidden = [0.0; 3];
        for i in 0..3 {
            let mut z = params.bias(0)[i];
            for j in 0..2 {
                z += params.weight(0)[(i, j)] * x[(0, j)];
            }
            hidden[i] = z.max(0.0);
        }
        for i in 0..2 {
            let mut z = params.bias(1)[i];
            for j in 0..3 {
                z += params.weight(1)[(i, j)] * hidden[j];
            }
            assert!((logits[(0, i)] - z).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_same_bytes_for_same_input() {
        let arch = Architecture::new(vec![4, 5, 3]).unwrap();
        let params = random_params(&arch, 8);
        let batch = Batch::new(DMatrix::from_element(3, 4, 0.25), vec![0, 1, 2]).unwrap();
        let a = forward(&params, &batch).unwrap();
        let b = forward(&params, &batch).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    #[allow(clippy::approx_constant)] // 2.302585 is the frozen expected value
    fn uniform_logits_loss_is_log_classes() {
        let arch = Architecture::new(vec![5, 10]).unwrap();
        let params = NetworkParams::zeros(&arch);
        let batch = Batch::new(DMatrix::from_element(4, 5, 0.3), vec![1, 3, 5, 9]).unwrap();
        let (loss, _) = loss_and_grad(&params, &batch, LossReduction::Mean).unwrap();
        assert!((loss - 10.0_f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn loss_finite_for_large_logits() {
        let arch = Architecture::new(vec![2, 3]).unwrap();
        let mut params = NetworkParams::zeros(&arch);
        *params.weight_mut(0) = DMatrix::from_row_slice(3, 2, &[1e3, 0.0, -1e3, 0.0, 0.0, 1e3]);
        let batch = Batch::new(DMatrix::from_element(1, 2, 1.0), vec![1]).unwrap();
        let (loss, grad) = loss_and_grad(&params, &batch, LossReduction::Mean).unwrap();
        assert!(loss.is_finite());
        assert!(grad.flatten().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = Architecture::new(vec![6, 4, 3]).unwrap();
        let params = random_params(&arch, 17);
        let mut rng = seeded_rng(18);
        let inputs = sample_noise_mat(5, 6, &mut rng).map(|x| (x.abs() % 1.0).min(1.0));
        let batch = Batch::new(inputs, vec![0, 2, 1, 1, 0]).unwrap();
        let (_, grad) = loss_and_grad(&params, &batch, LossReduction::Mean).unwrap();
        let g = grad.flatten();

        let theta = params.flatten();
        let h = 1e-5;
        let mut max_rel = 0.0_f64;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let lp = loss_and_grad(
                &NetworkParams::unflatten(&arch, &plus).unwrap(),
                &batch,
                LossReduction::Mean,
            )
            .unwrap()
            .0;
            let lm = loss_and_grad(
                &NetworkParams::unflatten(&arch, &minus).unwrap(),
                &batch,
                LossReduction::Mean,
            )
            .unwrap()
            .0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (g[i] - fd).abs() / (g[i].abs() + fd.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel:.3e}");
    }

    #[test]
    fn mean_reduction_invariant_to_duplication() {
        let arch = Architecture::new(vec![3, 4, 2]).unwrap();
        let params = random_params(&arch, 5);
        let inputs = DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.4, 0.8, 0.2, 0.6]);
        let batch = Batch::new(inputs.clone(), vec![0, 1]).unwrap();
        let (loss1, grad1) = loss_and_grad(&params, &batch, LossReduction::Mean).unwrap();

        let mut doubled = DMatrix::zeros(4, 3);
        doubled.view_mut((0, 0), (2, 3)).copy_from(&inputs);
        doubled.view_mut((2, 0), (2, 3)).copy_from(&inputs);
        let batch2 = Batch::new(doubled, vec![0, 1, 0, 1]).unwrap();
        let (loss2, grad2) = loss_and_grad(&params, &batch2, LossReduction::Mean).unwrap();
        assert!((loss1 - loss2).abs() < 1e-13);
        assert!((grad1.flatten() - grad2.flatten()).norm() < 1e-13);

        // sum reduction doubles instead
        let (loss_sum1, _) = loss_and_grad(&params, &batch, LossReduction::Sum).unwrap();
        let (loss_sum2, _) = loss_and_grad(&params, &batch2, LossReduction::Sum).unwrap();
        assert!((loss_sum2 - 2.0 * loss_sum1).abs() < 1e-12);
    }

    #[test]
    fn flatten_unflatten_roundtrip_bitexact() {
        let arch = Architecture::new(vec![4, 3, 2]).unwrap();
        let params = random_params(&arch, 99);
        let theta = params.flatten();
        let back = NetworkParams::unflatten(&arch, &theta).unwrap();
        assert_eq!(params, back);
        let theta2 = back.flatten();
        assert!(theta
            .iter()
            .zip(theta2.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn accuracy_cases() {
        let arch = Architecture::new(vec![2, 2]).unwrap();
        let mut params = NetworkParams::zeros(&arch);
        *params.weight_mut(0) = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let inputs = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        assert_eq!(accuracy(&params, &inputs, &[0, 1]).unwrap(), 1.0);

        // constant logits: ties break to class 0
        let zeros = NetworkParams::zeros(&arch);
        let acc = accuracy(&zeros, &inputs, &[0, 1]).unwrap();
        assert_eq!(acc, 0.5);

        let single = DMatrix::from_row_slice(1, 2, &[0.9, 0.1]);
        assert_eq!(accuracy(&params, &single, &[0]).unwrap(), 1.0);

        assert!(matches!(
            accuracy(&params, &DMatrix::zeros(0, 2), &[]),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn batch_label_validation() {
        let arch = Architecture::new(vec![2, 3]).unwrap();
        let params = NetworkParams::zeros(&arch);
        let batch = Batch::new(DMatrix::from_element(1, 2, 0.5), vec![3]).unwrap();
        assert!(matches!(
            forward(&params, &batch),
            Err(ModelError::LabelOutOfRange { .. })
        ));
    }
}
