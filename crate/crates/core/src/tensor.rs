//! Dense multiway arrays and the handful of tensor-algebra primitives the
//! regression needs.
//!
//! Storage is first-index-fastest: the entry at multi-index `(i_0, .., i_{D-1})`
//! lives at offset `i_0 + I_0 * (i_1 + I_1 * (i_2 + ...))`. Every other
//! convention in this module follows from that choice:
//!
//! * the mode-`d` unfolding has `I_d` rows and its columns enumerate the
//!   remaining indices in increasing mode order, earliest mode fastest;
//! * [`Tensor::vectorize`] returns the storage order, which is also the
//!   column-stacked vectorization of the mode-0 unfolding;
//! * a tensor of shape `I_1 x .. x I_K x P_1 x .. x P_L` read as a
//!   column-major matrix has rows indexed by `(i_1..i_K)` and columns by
//!   `(p_1..p_L)`, which is what [`contracted_product`] relies on.
//!
//! Modes are zero-based throughout.

use nalgebra::DMatrix;

use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} entries but {} were supplied",
                shape,
                len,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Self { shape, data: vec![0.0; len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Ok(Self { shape, data })
    }

    /// Column-major copy of a matrix as an order-2 tensor.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            shape: vec![m.nrows().max(1), m.ncols().max(1)],
            data: if m.is_empty() { vec![0.0] } else { m.as_slice().to_vec() },
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &n) in index.iter().zip(&self.shape) {
            debug_assert!(i < n);
            off += i * stride;
            stride *= n;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Interprets an order-2 tensor as a matrix.
    pub fn as_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order() != 2 {
            return Err(shape_err!("expected a matrix, got order {}", self.order()));
        }
        Ok(DMatrix::from_column_slice(self.shape[0], self.shape[1], &self.data))
    }

    /// Mode-`mode` unfolding as an order-2 tensor of shape `I_mode x (prod of the rest)`.
    pub fn matricize(&self, mode: usize) -> Result<Tensor> {
        if mode >= self.order() {
            return Err(invalid!("mode {} out of range for an order-{} tensor", mode, self.order()));
        }
        let rows = self.shape[mode];
        let cols = self.len() / rows;
        let mut out = vec![0.0; self.len()];
        // Stride of `mode` in storage, and the block size below it.
        let inner: usize = self.shape[..mode].iter().product();
        let outer = self.len() / (inner * rows);
        for o in 0..outer {
            for r in 0..rows {
                for i in 0..inner {
                    let src = i + inner * (r + rows * o);
                    let col = i + inner * o;
                    out[r + rows * col] = self.data[src];
                }
            }
        }
        Tensor::new(vec![rows, cols], out)
    }

    /// Inverse of [`Tensor::matricize`].
    pub fn fold(unfolded: &Tensor, mode: usize, shape: &[usize]) -> Result<Tensor> {
        validate_shape(shape)?;
        if mode >= shape.len() {
            return Err(invalid!("mode {} out of range for shape {:?}", mode, shape));
        }
        let rows = shape[mode];
        let len: usize = shape.iter().product();
        if unfolded.shape() != [rows, len / rows] {
            return Err(shape_err!(
                "unfolding of shape {:?} does not fold into {:?} along mode {}",
                unfolded.shape(),
                shape,
                mode
            ));
        }
        let inner: usize = shape[..mode].iter().product();
        let outer = len / (inner * rows);
        let mut out = vec![0.0; len];
        for o in 0..outer {
            for r in 0..rows {
                for i in 0..inner {
                    out[i + inner * (r + rows * o)] = unfolded.data[r + rows * (i + inner * o)];
                }
            }
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// Vectorization: the storage order, i.e. the column stack of the mode-0 unfolding.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| alpha * v).collect() }
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(shape_err!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(shape_err!("tensor order must be at least 1"));
    }
    if shape.contains(&0) {
        return Err(shape_err!("every extent must be positive, got {:?}", shape));
    }
    Ok(())
}

/// Advances a multi-index in storage order (first index fastest).
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Contracted product along `modes` modes: the trailing `modes` extents of `d`
/// are summed against the leading `modes` extents of `f`.
pub fn contracted_product(d: &Tensor, f: &Tensor, modes: usize) -> Result<Tensor> {
    if modes > d.order() || modes > f.order() {
        return Err(shape_err!(
            "cannot contract {} modes of tensors with orders {} and {}",
            modes,
            d.order(),
            f.order()
        ));
    }
    let keep_d = d.order() - modes;
    if d.shape[keep_d..] != f.shape[..modes] {
        return Err(shape_err!(
            "contracted extents differ: {:?} vs {:?}",
            &d.shape[keep_d..],
            &f.shape[..modes]
        ));
    }
    let rows: usize = d.shape[..keep_d].iter().product();
    let inner: usize = d.shape[keep_d..].iter().product();
    let cols: usize = f.shape[modes..].iter().product();

    let dm = nalgebra::DMatrixView::from_slice(&d.data, rows, inner);
    let fm = nalgebra::DMatrixView::from_slice(&f.data, inner, cols);
    let prod = dm * fm;

    let mut shape: Vec<usize> = d.shape[..keep_d].iter().chain(&f.shape[modes..]).copied().collect();
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::new(shape, prod.as_slice().to_vec())
}

/// CP factor matrices of a coefficient tensor of shape `P_1 x .. x P_L x Q_1 x .. x Q_M`.
///
/// Component weights are carried by the column magnitudes; there is no
/// separate weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    input: Vec<DMatrix<f64>>,
    output: Vec<DMatrix<f64>>,
}

impl CpFactors {
    pub fn new(input: Vec<DMatrix<f64>>, output: Vec<DMatrix<f64>>) -> Result<Self> {
        if input.is_empty() || output.is_empty() {
            return Err(shape_err!(
                "need at least one input and one output factor, got {} and {}",
                input.len(),
                output.len()
            ));
        }
        let rank = input[0].ncols();
        if rank == 0 {
            return Err(shape_err!("CP rank must be at least 1"));
        }
        for (k, m) in input.iter().chain(&output).enumerate() {
            if m.ncols() != rank {
                return Err(shape_err!("factor {} has {} columns, expected rank {}", k, m.ncols(), rank));
            }
            if m.nrows() == 0 {
                return Err(shape_err!("factor {} has no rows", k));
            }
        }
        Ok(Self { input, output })
    }

    pub fn rank(&self) -> usize {
        self.input[0].ncols()
    }

    pub fn input(&self) -> &[DMatrix<f64>] {
        &self.input
    }

    pub fn output(&self) -> &[DMatrix<f64>] {
        &self.output
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.input.iter().map(|m| m.nrows()).collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.output.iter().map(|m| m.nrows()).collect()
    }

    /// Shape of the reconstructed coefficient tensor.
    pub fn shape(&self) -> Vec<usize> {
        self.all().map(|m| m.nrows()).collect()
    }

    /// All factors, inputs first.
    pub fn all(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.input.iter().chain(&self.output)
    }

    pub(crate) fn factor_mut(&mut self, k: usize) -> &mut DMatrix<f64> {
        let l = self.input.len();
        if k < l {
            &mut self.input[k]
        } else {
            &mut self.output[k - l]
        }
    }

    pub fn factor(&self, k: usize) -> &DMatrix<f64> {
        let l = self.input.len();
        if k < l {
            &self.input[k]
        } else {
            &self.output[k - l]
        }
    }

    pub fn factor_count(&self) -> usize {
        self.input.len() + self.output.len()
    }

    /// Sum over components of the outer product of the component columns.
    pub fn reconstruct(&self) -> Tensor {
        let shape = self.shape();
        let len: usize = shape.iter().product();
        let mut data = vec![0.0; len];
        let mut column = Vec::with_capacity(len);
        let mut next = Vec::with_capacity(len);
        for r in 0..self.rank() {
            column.clear();
            column.push(1.0);
            for m in self.all() {
                next.clear();
                for j in 0..m.nrows() {
                    let a = m[(j, r)];
                    next.extend(column.iter().map(|&c| c * a));
                }
                std::mem::swap(&mut column, &mut next);
            }
            for (d, c) in data.iter_mut().zip(&column) {
                *d += c;
            }
        }
        Tensor { shape, data }
    }
}

/// Alias kept for call sites that read better as a free function.
pub fn cp_reconstruct(factors: &CpFactors) -> Tensor {
    factors.reconstruct()
}

/// Column-wise Khatri-Rao product of `mats`, first matrix varying fastest in
/// the row index. Row `i_0 + I_0 * (i_1 + ...)` of column `r` is
/// `prod_k mats[k][(i_k, r)]`.
pub(crate) fn khatri_rao<'a>(mats: impl IntoIterator<Item = &'a DMatrix<f64>>, rank: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::from_element(1, rank, 1.0);
    for m in mats {
        let rows = acc.nrows();
        let mut next = DMatrix::zeros(rows * m.nrows(), rank);
        for r in 0..rank {
            for j in 0..m.nrows() {
                let a = m[(j, r)];
                for i in 0..rows {
                    next[(i + rows * j, r)] = acc[(i, r)] * a;
                }
            }
        }
        acc = next;
    }
    acc
}
