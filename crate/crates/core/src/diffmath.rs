//! Dense f64 kernel: the handful of forward ops the network needs, their
//! analytic backward rules, and a central-difference gradient checker.
//!
//! Vectors are plain `[f64]` slices; anything with parameters lives in a
//! row-major [`Matrix`]. Backward functions accumulate into caller-owned
//! gradient buffers so a batch can sum gradients in place.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Column vector (n x 1), the storage used for biases.
    pub fn column(values: Vec<f64>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Entries drawn from U[-radius, radius].
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, radius: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| if radius > 0.0 { rng.gen_range(-radius..=radius) } else { 0.0 })
            .collect();
        Matrix { rows, cols, data }
    }

    /// Glorot/Xavier uniform initialisation with fan_in = cols, fan_out = rows.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let radius = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::uniform(rows, cols, radius, rng)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim("Matrix::add_assign", shape_str(self), shape_str(other)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn shape_str(m: &Matrix) -> String {
    format!("{}x{}", m.rows, m.cols)
}

/// `y = W x + b`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(Error::dim(
            "affine",
            format!("W {}", shape_str(w)),
            format!("x[{}], b[{}]", x.len(), b.len()),
        ));
    }
    Ok(w
        .data
        .chunks_exact(w.cols.max(1))
        .take(w.rows)
        .zip(b)
        .map(|(row, bi)| dot(row, x) + bi)
        .collect())
}

/// Accumulates `dW += dy xᵀ`, `db += dy` and `dx += Wᵀ dy`.
pub fn affine_backward(
    w: &Matrix,
    x: &[f64],
    dy: &[f64],
    dw: &mut Matrix,
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    debug_assert_eq!(w.shape(), dw.shape());
    debug_assert_eq!(dy.len(), w.rows);
    debug_assert_eq!(x.len(), w.cols);
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[i] += g;
        for (d, xj) in dw.row_mut(i).iter_mut().zip(x) {
            *d += g * xj;
        }
    }
    if let Some(dx) = dx {
        for (i, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, wij) in dx.iter_mut().zip(w.row(i)) {
                *d += g * wij;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

/// Logistic function, evaluated on the branch that never exponentiates a
/// positive argument.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn activation(kind: Activation, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| kind.apply(v)).collect()
}

/// Gradient w.r.t. the pre-activation given the forward output `y`.
pub fn activation_backward(kind: Activation, y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(dy)
        .map(|(&y, &g)| g * kind.derivative_from_output(y))
        .collect()
}

pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty { op: "softmax" });
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Softmax restricted to positions where `mask` is true; masked positions
/// come out as exactly 0.
pub fn masked_softmax(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if x.len() != mask.len() {
        return Err(Error::dim("masked_softmax", x.len(), mask.len()));
    }
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Empty { op: "masked_softmax" });
    }
    let exps: Vec<f64> = x
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Vector-Jacobian product of softmax: `dx = y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner = dot(y, dy);
    y.iter().zip(dy).map(|(&yi, &gi)| yi * (gi - inner)).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::dim("hadamard", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// A named collection of trainable tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)>;
}

/// Holds the trace of one forward pass until backward consumes it.
#[derive(Debug)]
pub struct GradTape<T> {
    trace: Option<T>,
}

impl<T> Default for GradTape<T> {
    fn default() -> Self {
        GradTape { trace: None }
    }
}

impl<T> GradTape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, trace: T) {
        self.trace = Some(trace);
    }

    pub fn is_recorded(&self) -> bool {
        self.trace.is_some()
    }

    pub fn peek(&self) -> Option<&T> {
        self.trace.as_ref()
    }

    /// Hands out the recorded trace exactly once.
    pub fn take(&mut self) -> Result<T> {
        self.trace.take().ok_or(Error::TapeConsumed)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index where the maximum occurred.
    pub worst: Option<(&'static str, usize)>,
    pub per_tensor: Vec<(&'static str, f64)>,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` (one gradient per tensor, in `params.tensors()`
/// order) with central differences of `loss`, perturbing every entry of
/// every tensor by ±`eps`. Parameters are restored afterwards.
pub fn gradient_check<P, F>(
    params: &mut P,
    analytic: &[Matrix],
    eps: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    P: Parameters,
    F: FnMut(&P) -> Result<f64>,
{
    let shapes: Vec<(&'static str, (usize, usize))> =
        params.tensors().iter().map(|(n, m)| (*n, m.shape())).collect();
    if shapes.len() != analytic.len() {
        return Err(Error::dim("gradient_check", shapes.len(), analytic.len()));
    }
    for ((name, shape), g) in shapes.iter().zip(analytic) {
        if *shape != g.shape() {
            return Err(Error::dim("gradient_check", *name, shape_str(g)));
        }
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::GradCheck(format!("loss is {base}")));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        per_tensor: Vec::with_capacity(shapes.len()),
        entries_checked: 0,
    };
    for (t, (name, _)) in shapes.iter().enumerate() {
        let mut tensor_max = 0.0f64;
        for k in 0..analytic[t].len() {
            let original = tensor_entry(params, t, k);
            set_tensor_entry(params, t, k, original + eps);
            let plus = loss(params);
            set_tensor_entry(params, t, k, original - eps);
            let minus = loss(params);
            set_tensor_entry(params, t, k, original);
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::GradCheck(format!("non-finite loss perturbing {name}[{k}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[t].data()[k], numeric);
            tensor_max = tensor_max.max(err);
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((name, k));
            }
            report.entries_checked += 1;
        }
        report.per_tensor.push((name, tensor_max));
    }
    Ok(report)
}

fn tensor_entry<P: Parameters>(params: &P, t: usize, k: usize) -> f64 {
    params.tensors()[t].1.data()[k]
}

fn set_tensor_entry<P: Parameters>(params: &mut P, t: usize, k: usize, v: f64) {
    params.tensors_mut()[t].1.data_mut()[k] = v;
}
