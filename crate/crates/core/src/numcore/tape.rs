//! Reverse-mode differentiation over a linear record of primitive calls.
//!
//! Every `Tape` method evaluates its primitive eagerly, appends a record
//! holding the output and whatever the adjoint needs, and returns a [`Var`]
//! handle. Records are only ever appended, so inputs always precede their
//! consumers and [`Tape::backward`] is a single reverse sweep.

use super::ops::{self, ConvGeometry, QNorm};
use super::{NumError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    MeanPool {
        x: Var,
        kh: usize,
        kw: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        var: Vec<f64>,
        batch_stats: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Poly {
        x: Var,
        coeffs: Vec<f64>,
    },
    Relu(Var),
    Gelu(Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    /// `routes[l]` lists `(flat index, d loss / d x)` for input `l`.
    RangeLoss {
        inputs: Vec<Var>,
        routes: Vec<Vec<(usize, f64)>>,
    },
}

struct Record {
    value: Tensor,
    op: Op,
}

/// Per-record gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var, NumError> {
        value.check_finite(what)?;
        self.records.push(Record { value, op });
        Ok(Var(self.records.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.records.push(Record { value, op: Op::Leaf });
        Var(self.records.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumError> {
        let out = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        self.push(out, Op::Linear { x, w, b }, "linear")
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var, NumError> {
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        self.push(out, Op::Conv2d { x, w, b, geom }, "conv2d")
    }

    pub fn mean_pool2d(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var, NumError> {
        let out = ops::mean_pool2d(self.value(x), kh, kw)?;
        self.push(out, Op::MeanPool { x, kh, kw }, "mean_pool2d")
    }

    /// Training-mode batch norm. Returns the output and the batch statistics
    /// `(mean, biased variance)` so callers can update running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<f64>, Vec<f64>), NumError> {
        let (mean, var) = ops::channel_stats(self.value(x))?;
        let out = ops::batch_norm_with_stats(self.value(x), self.value(gamma), self.value(beta), &mean, &var)?;
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: mean.clone(),
                var: var.clone(),
                batch_stats: true,
            },
            "batch_norm",
        )?;
        Ok((v, mean, var))
    }

    /// Evaluation-mode batch norm with frozen statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var, NumError> {
        let out = ops::batch_norm_with_stats(self.value(x), self.value(gamma), self.value(beta), mean, var)?;
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                var: var.to_vec(),
                batch_stats: false,
            },
            "batch_norm",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Result<Var, NumError> {
        let out = self.value(x).map(|v| a * v);
        self.push(out, Op::Scale(x, a), "scale")
    }

    /// Elementwise polynomial with ascending monomial coefficients.
    pub fn poly(&mut self, x: Var, coeffs: &[f64]) -> Result<Var, NumError> {
        let out = self.value(x).map(|v| ops::horner(coeffs, v));
        self.push(
            out,
            Op::Poly {
                x,
                coeffs: coeffs.to_vec(),
            },
            "elementwise_poly",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumError> {
        let out = self.value(x).map(ops::relu);
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, NumError> {
        let out = self.value(x).map(ops::gelu);
        self.push(out, Op::Gelu(x), "gelu")
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var, NumError> {
        let out = self.value(x).reshape(dims)?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Mean softmax cross-entropy of `logits [n, k]` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumError> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Batch mean of the per-sample range loss: for each sample, the q-norm
    /// over layers of that sample's `max |x|` in each layer. Each input has
    /// the batch on its leading axis.
    pub fn range_loss(&mut self, inputs: &[Var], q: QNorm) -> Result<Var, NumError> {
        if inputs.is_empty() {
            return Err(NumError::Domain("range loss over zero layers".into()));
        }
        let n = self.value(inputs[0]).dims()[0];
        let per_layer: Vec<Vec<(f64, usize)>> = inputs
            .iter()
            .map(|&v| {
                let t = self.value(v);
                if t.dims()[0] != n {
                    return Err(NumError::Shape(format!(
                        "range loss: batch sizes differ ({} vs {n})",
                        t.dims()[0]
                    )));
                }
                Ok(ops::per_sample_max_abs(t))
            })
            .collect::<Result<_, _>>()?;
        let mut routes = vec![Vec::with_capacity(n); inputs.len()];
        let mut total = 0.0;
        for s in 0..n {
            let norms: Vec<f64> = per_layer.iter().map(|l| l[s].0).collect();
            let (value, grad) = ops::q_norm_with_grad(&norms, q);
            total += value;
            for (l, layer) in per_layer.iter().enumerate() {
                let (_, idx) = layer[s];
                let sign = self.value(inputs[l]).data()[idx].signum();
                let coeff = if norms[l] > 0.0 { grad[l] * sign / n as f64 } else { 0.0 };
                if coeff != 0.0 {
                    routes[l].push((idx, coeff));
                }
            }
        }
        self.push(
            Tensor::scalar(total / n as f64),
            Op::RangeLoss {
                inputs: inputs.to_vec(),
                routes,
            },
            "range_loss",
        )
    }

    /// Reverse sweep seeded with d loss / d loss = 1. `loss` must be scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        if loss.0 >= self.records.len() {
            return Err(NumError::NotOnTape(loss.0));
        }
        if self.value(loss).len() != 1 {
            return Err(NumError::Shape(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.records.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `loss` with respect to each of `params`. Parameters that
    /// do not influence the loss get a zero tensor.
    pub fn grad(&self, loss: Var, params: &[Var]) -> Result<Vec<Tensor>, NumError> {
        if let Some(p) = params.iter().find(|p| p.0 >= self.records.len()) {
            return Err(NumError::NotOnTape(p.0));
        }
        let grads = self.backward(loss)?;
        Ok(params
            .iter()
            .map(|&p| {
                grads
                    .get(p)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(p).dims()))
            })
            .collect())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NumError> {
        let mut send = |v: Var, t: Tensor| -> Result<(), NumError> {
            match &mut grads[v.0] {
                Some(acc) => acc.accumulate(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &self.records[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (da, db) = ops::matmul_backward(self.value(*a), self.value(*b), g)?;
                send(*a, da)?;
                send(*b, db)?;
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = ops::linear_backward(self.value(*x), self.value(*w), g)?;
                send(*x, dx)?;
                send(*w, dw)?;
                if let Some(b) = b {
                    send(*b, db)?;
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = ops::conv2d_backward(self.value(*x), self.value(*w), g, *geom)?;
                send(*x, dx)?;
                send(*w, dw)?;
                if let Some(b) = b {
                    send(*b, db)?;
                }
            }
            Op::MeanPool { x, kh, kw } => {
                send(*x, ops::mean_pool2d_backward(self.value(*x).dims(), *kh, *kw, g)?)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                batch_stats,
            } => {
                let (dx, dgamma, dbeta) = if *batch_stats {
                    ops::batch_norm_train_backward(self.value(*x), self.value(*gamma), mean, var, g)?
                } else {
                    ops::batch_norm_eval_backward(self.value(*x), self.value(*gamma), mean, var, g)?
                };
                send(*x, dx)?;
                send(*gamma, dgamma)?;
                send(*beta, dbeta)?;
            }
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv)?)?;
                send(*b, g.zip_map(self.value(*a), |gv, av| gv * av)?)?;
            }
            Op::Scale(x, a) => send(*x, g.map(|v| v * a))?,
            Op::Poly { x, coeffs } => {
                send(*x, g.zip_map(self.value(*x), |gv, xv| gv * ops::horner_derivative(coeffs, xv))?)?;
            }
            Op::Relu(x) => send(*x, g.zip_map(self.value(*x), |gv, xv| gv * ops::relu_grad(xv))?)?,
            Op::Gelu(x) => send(*x, g.zip_map(self.value(*x), |gv, xv| gv * ops::gelu_grad(xv))?)?,
            Op::Reshape(x) => send(*x, g.reshape(self.value(*x).dims())?)?,
            Op::CrossEntropy { logits, labels, probs } => {
                let scale = g.item();
                send(*logits, ops::softmax_cross_entropy_backward(probs, labels).map(|v| v * scale))?;
            }
            Op::RangeLoss { inputs, routes } => {
                let scale = g.item();
                for (v, route) in inputs.iter().zip(routes) {
                    let mut t = Tensor::zeros(self.value(*v).dims());
                    for &(k, c) in route {
                        t.data_mut()[k] += c * scale;
                    }
                    send(*v, t)?;
                }
            }
        }
        Ok(())
    }
}
