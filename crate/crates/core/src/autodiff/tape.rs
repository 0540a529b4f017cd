use super::matrix::Matrix;
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise op is broadcast against the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

impl Broadcast {
    fn resolve(lhs: (usize, usize), rhs: (usize, usize)) -> Option<Self> {
        if lhs == rhs {
            Some(Self::Same)
        } else if rhs == (1, 1) {
            Some(Self::Scalar)
        } else if rhs.0 == 1 && rhs.1 == lhs.1 {
            Some(Self::Row)
        } else if rhs.1 == 1 && rhs.0 == lhs.0 {
            Some(Self::Col)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, i: usize, j: usize, cols: usize) -> usize {
        match self {
            Self::Same => i * cols + j,
            Self::Row => j,
            Self::Col => i,
            Self::Scalar => 0,
        }
    }

    /// Sums an adjoint of the broadcast shape back onto the operand shape.
    fn reduce(self, g: &Matrix, target: (usize, usize)) -> Matrix {
        match self {
            Self::Same => g.clone(),
            _ => {
                let mut out = Matrix::zeros(target.0, target.1);
                let cols = g.cols();
                for i in 0..g.rows() {
                    for j in 0..cols {
                        let k = self.index(i, j, cols);
                        out.as_mut_slice()[k] += g.get(i, j);
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Neg(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    ClampMin(Var, f64),
    LinearScan(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records one forward evaluation. Nodes are appended in evaluation order,
/// so every node's parents precede it and reverse index order is a valid
/// reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reachable from the root of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of `shape` when `v` does not influence the root.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(Var, Var, Broadcast) -> Op,
    ) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bc = Broadcast::resolve(sa, sb).ok_or(AutodiffError::ShapeMismatch {
            op: name,
            left: sa,
            right: sb,
        })?;
        let va = self.value(a);
        let vb = self.value(b);
        let cols = sa.1;
        let out = Matrix::from_fn(sa.0, sa.1, |i, j| {
            f(va.get(i, j), vb.as_slice()[bc.index(i, j, cols)])
        });
        let rg = self.grad(a) || self.grad(b);
        Ok(self.push(out, make(a, b, bc), rg))
    }

    /// `a + b`; `b` may be a row vector, a column vector or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, "div", |x, y| x / y, Op::Div)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        let rg = self.grad(a);
        self.push(out, Op::Neg(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.grad(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let out = self.value(a).matmul(self.value(b));
        let rg = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.grad(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.grad(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Horizontal concatenation of blocks with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::EmptyConcat);
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: s,
                });
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            for i in 0..rows {
                for j in 0..v.cols() {
                    out.set(i, offset + j, v.get(i, j));
                }
            }
            offset += v.cols();
        }
        let rg = parts.iter().any(|&p| self.grad(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::cos);
        let rg = self.grad(a);
        self.push(out, Op::Cos(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.grad(a);
        self.push(out, Op::Exp(a), rg)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(&bad) = self.value(a).as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain { op: "log", value: bad });
        }
        let out = self.value(a).map(f64::ln);
        let rg = self.grad(a);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.grad(a);
        self.push(out, Op::Softplus(a), rg)
    }

    /// `max(a, threshold)`; subgradient is 1 at and above the threshold.
    pub fn clamp_min(&mut self, a: Var, threshold: f64) -> Var {
        let out = self.value(a).map(|x| x.max(threshold));
        let rg = self.grad(a);
        self.push(out, Op::ClampMin(a, threshold), rg)
    }

    /// First-order linear recurrence over column vectors:
    /// `y[0] = b[0]`, `y[i] = a[i] * y[i-1] + b[i]`.
    pub fn linear_scan(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa.1 != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear_scan",
                left: sa,
                right: sb,
            });
        }
        let (va, vb) = (self.value(a).as_slice(), self.value(b).as_slice());
        let mut y = Vec::with_capacity(va.len());
        let mut prev = 0.0;
        for (&ai, &bi) in va.iter().zip(vb) {
            prev = ai * prev + bi;
            y.push(prev);
        }
        let out = Matrix::from_vec(sa.0, 1, y);
        let rg = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::LinearScan(a, b), rg))
    }

    /// Reverse sweep from a scalar `root`. The tape is not mutated, so calling
    /// this repeatedly yields identical adjoints.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarRoot { shape });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut adj);
            }
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], v: Var, contribution: Matrix) {
        if !self.grad(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, adj: &mut [Option<Matrix>]) {
        match *op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b, bc) => {
                self.accumulate(adj, a, g.clone());
                if self.grad(b) {
                    self.accumulate(adj, b, bc.reduce(g, self.shape(b)));
                }
            }
            Op::Sub(a, b, bc) => {
                self.accumulate(adj, a, g.clone());
                if self.grad(b) {
                    let mut r = bc.reduce(g, self.shape(b));
                    r.scale_in_place(-1.0);
                    self.accumulate(adj, b, r);
                }
            }
            Op::Mul(a, b, bc) => {
                let (va, vb) = (self.value(a), self.value(b));
                let cols = g.cols();
                if self.grad(a) {
                    let da = Matrix::from_fn(g.rows(), cols, |i, j| {
                        g.get(i, j) * vb.as_slice()[bc.index(i, j, cols)]
                    });
                    self.accumulate(adj, a, da);
                }
                if self.grad(b) {
                    let gb = g.zip_map(va, |x, y| x * y);
                    self.accumulate(adj, b, bc.reduce(&gb, vb.shape()));
                }
            }
            Op::Div(a, b, bc) => {
                let (va, vb) = (self.value(a), self.value(b));
                let cols = g.cols();
                if self.grad(a) {
                    let da = Matrix::from_fn(g.rows(), cols, |i, j| {
                        g.get(i, j) / vb.as_slice()[bc.index(i, j, cols)]
                    });
                    self.accumulate(adj, a, da);
                }
                if self.grad(b) {
                    let gb = Matrix::from_fn(g.rows(), cols, |i, j| {
                        let d = vb.as_slice()[bc.index(i, j, cols)];
                        -g.get(i, j) * va.get(i, j) / (d * d)
                    });
                    self.accumulate(adj, b, bc.reduce(&gb, vb.shape()));
                }
            }
            Op::Neg(a) => self.accumulate(adj, a, g.map(|x| -x)),
            Op::Scale(a, c) => self.accumulate(adj, a, g.map(|x| c * x)),
            Op::MatMul(a, b) => {
                if self.grad(a) {
                    self.accumulate(adj, a, g.matmul_nt(self.value(b)));
                }
                if self.grad(b) {
                    self.accumulate(adj, b, self.value(a).matmul_tn(g));
                }
            }
            Op::Transpose(a) => self.accumulate(adj, a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(adj, a, Matrix::filled(r, c, g.item()));
            }
            Op::ConcatCols(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.grad(p) {
                        let gp = Matrix::from_fn(r, c, |i, j| g.get(i, offset + j));
                        self.accumulate(adj, p, gp);
                    }
                    offset += c;
                }
            }
            Op::Cos(a) => {
                let d = g.zip_map(self.value(a), |gi, x| -gi * x.sin());
                self.accumulate(adj, a, d);
            }
            Op::Exp(a) => self.accumulate(adj, a, g.zip_map(out, |gi, y| gi * y)),
            Op::Log(a) => {
                let d = g.zip_map(self.value(a), |gi, x| gi / x);
                self.accumulate(adj, a, d);
            }
            Op::Softplus(a) => {
                let d = g.zip_map(self.value(a), |gi, x| gi * sigmoid(x));
                self.accumulate(adj, a, d);
            }
            Op::ClampMin(a, th) => {
                let d = g.zip_map(self.value(a), |gi, x| if x >= th { gi } else { 0.0 });
                self.accumulate(adj, a, d);
            }
            Op::LinearScan(a, b) => {
                let va = self.value(a).as_slice();
                let y = out.as_slice();
                let n = va.len();
                let mut carry = vec![0.0; n];
                let mut next = 0.0;
                for i in (0..n).rev() {
                    let ci = g.as_slice()[i] + next;
                    carry[i] = ci;
                    next = va[i] * ci;
                }
                if self.grad(a) {
                    let da: Vec<f64> = (0..n)
                        .map(|i| if i == 0 { 0.0 } else { carry[i] * y[i - 1] })
                        .collect();
                    self.accumulate(adj, a, Matrix::from_vec(n, 1, da));
                }
                self.accumulate(adj, b, Matrix::from_vec(n, 1, carry));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(2.0));
        let y = t.leaf(Matrix::scalar(3.0));
        let z = t.mul(x, y).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 3.0);
        assert_eq!(g.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn softplus_values_and_slope() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-30.0) < 1e-12);
        assert_eq!(softplus(800.0), 800.0);
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let s = t.softplus(x);
        assert!((t.value(s).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.5);
        assert!((softplus_inverse(softplus(1.7)) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn cos_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let c = t.cos(x);
        assert_eq!(t.value(c).item(), 1.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        assert!(matches!(t.log(x), Err(AutodiffError::Domain { .. })));
        let y = t.leaf(Matrix::scalar(-1.0));
        assert!(t.log(y).is_err());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(
            t.backward(x),
            Err(AutodiffError::NonScalarRoot { shape: (2, 2) })
        ));
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(3, 2));
        assert!(matches!(t.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(t.matmul(a, a).is_err());
        assert!(t.matmul(a, b).is_ok());
    }

    #[test]
    fn clamp_subgradient_at_threshold_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[0.5, 1.0, 2.0]));
        let c = t.clamp_min(x, 1.0);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().as_slice(), &[0.0, 1.0, 1.0]);
        assert_eq!(t.value(c).as_slice(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(1.5));
        let c = t.scalar_constant(4.0);
        let z = t.mul(x, c).unwrap();
        let g = t.backward(z).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(c, (1, 1)).item(), 0.0);
        assert_eq!(g.get(x).unwrap().item(), 4.0);
    }

    #[test]
    fn broadcast_reductions() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_fn(2, 3, |i, j| (i + j) as f64 + 1.0));
        let row = t.leaf(Matrix::row_vector(&[1.0, 2.0, 3.0]));
        let col = t.leaf(Matrix::column(&[2.0, 4.0]));
        let s1 = t.add(a, row).unwrap();
        let s2 = t.div(s1, col).unwrap();
        let s = t.sum(s2);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(row).unwrap().as_slice(), &[0.75, 0.75, 0.75]);
        let ga = g.get(a).unwrap();
        assert_eq!(ga.get(0, 0), 0.5);
        assert_eq!(ga.get(1, 2), 0.25);
    }
}
