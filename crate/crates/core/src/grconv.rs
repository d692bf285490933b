//! Gated recursive convolutional encoder.
//!
//! A length-`T` source is projected to `T` hidden vectors and then merged
//! pairwise, level by level, until one vector remains. Every merge node mixes
//! a fresh rectified activation of its two children with copies of either
//! child through a three-way softmax gate:
//!
//! ```text
//! h~ = relu(W^l left + W^r right + b)
//! [ω_c, ω_l, ω_r] = softmax(G^l left + G^r right + g)
//! out = ω_c h~ + ω_l left + ω_r right
//! ```
//!
//! The gate triples of all `T(T−1)/2` nodes form a [`GateRecord`], from which
//! [`crate::structure`] recovers a tree over the source.

use crate::corpus::TokenId;
use crate::error::{check_dim, Error, Result};
use crate::gru::{EmbeddingTable, INIT_SIGMA};
use crate::numerics::{orthogonal_init, relu, relu_grad, softmax, Matrix, Rng};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Spectral radius of the square merge matrices at initialization.
pub const GRCONV_RADIUS: f64 = 0.4;

/// Index of each gate component inside a triple.
pub const OMEGA_C: usize = 0;
pub const OMEGA_L: usize = 1;
pub const OMEGA_R: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct GrConvParams<T> {
    pub w_l: Matrix<T>,
    pub w_r: Matrix<T>,
    pub g_l: Matrix<T>,
    pub g_r: Matrix<T>,
    pub u: Matrix<T>,
    pub b: Matrix<T>,
    pub g: Matrix<T>,
}

impl<T: Scalar> GrConvParams<T> {
    pub fn zeros(d_emb: usize, d: usize) -> Self {
        Self {
            w_l: Matrix::zeros(d, d),
            w_r: Matrix::zeros(d, d),
            g_l: Matrix::zeros(3, d),
            g_r: Matrix::zeros(3, d),
            u: Matrix::zeros(d, d_emb),
            b: Matrix::column(d),
            g: Matrix::column(3),
        }
    }

    pub fn init(d_emb: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        Self::init_with_sigma(d_emb, d, INIT_SIGMA, rng)
    }

    pub fn init_with_sigma(d_emb: usize, d: usize, sigma: f64, rng: &mut Rng) -> Result<Self> {
        let sigma = T::lit(sigma);
        let radius = T::lit(GRCONV_RADIUS);
        Ok(Self {
            w_l: orthogonal_init(d, radius, rng)?,
            w_r: orthogonal_init(d, radius, rng)?,
            g_l: Matrix::gaussian(3, d, sigma, rng),
            g_r: Matrix::gaussian(3, d, sigma, rng),
            u: Matrix::gaussian(d, d_emb, sigma, rng),
            b: Matrix::column(d),
            g: Matrix::column(3),
        })
    }

    pub fn dim(&self) -> usize {
        self.w_l.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    /// `(ω_c, ω_l, ω_r)` for a pair of children.
    pub fn gate_coefficients(&self, left: &[T], right: &[T]) -> Result<[T; 3]> {
        let d = self.dim();
        check_dim("gate_coefficients left", d, left.len())?;
        check_dim("gate_coefficients right", d, right.len())?;
        let mut s = self.g.as_slice().to_vec();
        self.g_l.gemv_acc(left, &mut s);
        self.g_r.gemv_acc(right, &mut s);
        let p = softmax(&s)?;
        Ok([p[0], p[1], p[2]])
    }

    fn merge(&self, left: &[T], right: &[T]) -> Result<NodeCache<T>> {
        let omega = self.gate_coefficients(left, right)?;
        let mut pre = self.b.as_slice().to_vec();
        self.w_l.gemv_acc(left, &mut pre);
        self.w_r.gemv_acc(right, &mut pre);
        let cand: Vec<T> = pre.iter().map(|&a| relu(a)).collect();
        let out = (0..self.dim())
            .map(|i| omega[OMEGA_C] * cand[i] + omega[OMEGA_L] * left[i] + omega[OMEGA_R] * right[i])
            .collect();
        Ok(NodeCache { pre, cand, omega, out })
    }

    /// One recursion level: `n` vectors in, `n − 1` out, plus each node's gates.
    pub fn level(&self, nodes: &[Vec<T>]) -> Result<(Vec<Vec<T>>, Vec<[T; 3]>)> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "grconv level needs at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        let mut outs = Vec::with_capacity(nodes.len() - 1);
        let mut gates = Vec::with_capacity(nodes.len() - 1);
        for pair in nodes.windows(2) {
            let c = self.merge(&pair[0], &pair[1])?;
            gates.push(c.omega);
            outs.push(c.out);
        }
        Ok((outs, gates))
    }
}

impl<T: Scalar> ParamSet<T> for GrConvParams<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        out.push((format!("{p}W_l"), &self.w_l));
        out.push((format!("{p}W_r"), &self.w_r));
        out.push((format!("{p}G_l"), &self.g_l));
        out.push((format!("{p}G_r"), &self.g_r));
        out.push((format!("{p}U"), &self.u));
        out.push((format!("{p}b"), &self.b));
        out.push((format!("{p}g"), &self.g));
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        out.push((format!("{p}W_l"), &mut self.w_l));
        out.push((format!("{p}W_r"), &mut self.w_r));
        out.push((format!("{p}G_l"), &mut self.g_l));
        out.push((format!("{p}G_r"), &mut self.g_r));
        out.push((format!("{p}U"), &mut self.u));
        out.push((format!("{p}b"), &mut self.b));
        out.push((format!("{p}g"), &mut self.g));
    }
}

/// Gate triples of every merge node. `level(t)` for `t` in `1..T` holds the
/// `T − t` nodes of recursion level `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateRecord<T> {
    source_len: usize,
    levels: Vec<Vec<[T; 3]>>,
}

impl<T: Scalar> GateRecord<T> {
    /// Validate shape and simplex constraints.
    pub fn new(source_len: usize, levels: Vec<Vec<[T; 3]>>) -> Result<Self> {
        if source_len == 0 {
            return Err(Error::Empty("gate record source"));
        }
        if levels.len() != source_len - 1 {
            return Err(Error::InvalidArgument(format!(
                "gate record for length {source_len} needs {} levels, got {}",
                source_len - 1,
                levels.len()
            )));
        }
        for (k, lvl) in levels.iter().enumerate() {
            let t = k + 1;
            if lvl.len() != source_len - t {
                return Err(Error::InvalidArgument(format!(
                    "gate record level {t} needs {} nodes, got {}",
                    source_len - t,
                    lvl.len()
                )));
            }
            for w in lvl {
                if w.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!("gate record level {t}: invalid triple {w:?}")));
                }
            }
        }
        Ok(Self { source_len, levels })
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Number of recursion levels (`T − 1`).
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Gates of level `t` (1-based, `1 ≤ t ≤ T − 1`).
    pub fn level(&self, t: usize) -> &[[T; 3]] {
        &self.levels[t - 1]
    }

    /// Gate triple of node `j` (0-based) at level `t` (1-based).
    pub fn node(&self, t: usize, j: usize) -> [T; 3] {
        self.levels[t - 1][j]
    }

    pub fn num_nodes(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, [T; 3])> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(k, lvl)| lvl.iter().enumerate().map(move |(j, &w)| (k + 1, j, w)))
    }
}

#[derive(Clone, Debug)]
struct NodeCache<T> {
    pre: Vec<T>,
    cand: Vec<T>,
    omega: [T; 3],
    out: Vec<T>,
}

/// Everything the backward pass needs from one encode.
#[derive(Clone, Debug)]
pub struct GrConvTrace<T> {
    ids: Vec<TokenId>,
    leaves: Vec<Vec<T>>,
    /// `nodes[t - 1][j]` for levels `t ≥ 1`.
    nodes: Vec<Vec<NodeCache<T>>>,
}

impl<T: Scalar> GrConvTrace<T> {
    pub fn context(&self) -> &[T] {
        match self.nodes.last() {
            Some(top) => &top[0].out,
            None => &self.leaves[0],
        }
    }

    /// Sizes of every level, starting with the `T` projected leaves.
    pub fn level_sizes(&self) -> Vec<usize> {
        std::iter::once(self.leaves.len())
            .chain(self.nodes.iter().map(Vec::len))
            .collect()
    }

    pub fn gate_record(&self) -> GateRecord<T> {
        GateRecord {
            source_len: self.ids.len(),
            levels: self
                .nodes
                .iter()
                .map(|lvl| lvl.iter().map(|n| n.omega).collect())
                .collect(),
        }
    }

    fn level_output(&self, t: usize, j: usize) -> &[T] {
        if t == 0 {
            &self.leaves[j]
        } else {
            &self.nodes[t - 1][j].out
        }
    }
}

/// Source embeddings plus the recursive convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct GrConvEncoder<T> {
    pub params: GrConvParams<T>,
    pub embedding: EmbeddingTable<T>,
}

impl<T: Scalar> GrConvEncoder<T> {
    pub fn init(vocab: usize, d_emb: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        Self::init_with_sigma(vocab, d_emb, d, INIT_SIGMA, rng)
    }

    pub fn init_with_sigma(vocab: usize, d_emb: usize, d: usize, sigma: f64, rng: &mut Rng) -> Result<Self> {
        let embedding = EmbeddingTable::init_with_sigma(vocab, d_emb, sigma, rng);
        let params = GrConvParams::init_with_sigma(d_emb, d, sigma, rng)?;
        Ok(Self { params, embedding })
    }

    pub fn zeros(vocab: usize, d_emb: usize, d: usize) -> Self {
        Self {
            params: GrConvParams::zeros(d_emb, d),
            embedding: EmbeddingTable::zeros(vocab, d_emb),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.params.dim()
    }

    /// Context vector and the gate record of every merge.
    pub fn encode(&self, source: &[TokenId]) -> Result<(Vec<T>, GateRecord<T>)> {
        let trace = self.forward(source)?;
        Ok((trace.context().to_vec(), trace.gate_record()))
    }

    pub fn forward(&self, source: &[TokenId]) -> Result<GrConvTrace<T>> {
        if source.is_empty() {
            return Err(Error::Empty("source sequence"));
        }
        let p = &self.params;
        let leaves = source
            .iter()
            .map(|&id| Ok(p.u.matvec(self.embedding.lookup(id)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut nodes: Vec<Vec<NodeCache<T>>> = Vec::with_capacity(source.len().saturating_sub(1));
        for _ in 1..source.len() {
            let below: Vec<&[T]> = match nodes.last() {
                Some(lvl) => lvl.iter().map(|n| &n.out[..]).collect(),
                None => leaves.iter().map(|v| &v[..]).collect(),
            };
            let lvl = below
                .windows(2)
                .map(|w| p.merge(w[0], w[1]))
                .collect::<Result<Vec<_>>>()?;
            nodes.push(lvl);
        }
        Ok(GrConvTrace {
            ids: source.to_vec(),
            leaves,
            nodes,
        })
    }

    pub fn backward_into(&self, trace: &GrConvTrace<T>, d_context: &[T], grads: &mut GrConvEncoder<T>) -> Result<()> {
        let p = &self.params;
        let d = p.dim();
        check_dim("grconv backward context gradient", d, d_context.len())?;
        let big_t = trace.ids.len();
        // gradient w.r.t. the outputs of the current level
        let mut d_level: Vec<Vec<T>> = vec![d_context.to_vec()];
        for t in (1..big_t).rev() {
            let mut d_below = vec![vec![T::zero(); d]; big_t - t + 1];
            for (j, node) in trace.nodes[t - 1].iter().enumerate() {
                let dout = &d_level[j];
                let left = trace.level_output(t - 1, j);
                let right = trace.level_output(t - 1, j + 1);
                let w = node.omega;
                let dot = |v: &[T]| v.iter().zip(dout).map(|(&a, &b)| a * b).sum::<T>();
                let dw = [dot(&node.cand), dot(left), dot(right)];
                let mean = w[0] * dw[0] + w[1] * dw[1] + w[2] * dw[2];
                let ds: Vec<T> = (0..3).map(|k| w[k] * (dw[k] - mean)).collect();
                let da: Vec<T> = (0..d)
                    .map(|i| w[OMEGA_C] * dout[i] * relu_grad(node.pre[i]))
                    .collect();

                grads.params.w_l.add_outer(&da, left);
                grads.params.w_r.add_outer(&da, right);
                grads.params.b.add_to_column(&da);
                grads.params.g_l.add_outer(&ds, left);
                grads.params.g_r.add_outer(&ds, right);
                grads.params.g.add_to_column(&ds);

                let (lo, hi) = d_below.split_at_mut(j + 1);
                let dl = &mut lo[j];
                let dr = &mut hi[0];
                for i in 0..d {
                    dl[i] += w[OMEGA_L] * dout[i];
                    dr[i] += w[OMEGA_R] * dout[i];
                }
                p.w_l.gemv_t_acc(&da, dl);
                p.g_l.gemv_t_acc(&ds, dl);
                p.w_r.gemv_t_acc(&da, dr);
                p.g_r.gemv_t_acc(&ds, dr);
            }
            d_level = d_below;
        }
        for (&id, dh) in trace.ids.iter().zip(&d_level) {
            let emb = self.embedding.lookup(id)?;
            grads.params.u.add_outer(dh, emb);
            let mut de = vec![T::zero(); p.input_dim()];
            p.u.gemv_t_acc(dh, &mut de);
            grads.embedding.accumulate(id, &de);
        }
        Ok(())
    }
}

impl<T: Scalar> ParamSet<T> for GrConvEncoder<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.embedding.collect(p, out);
        self.params.collect(&format!("{p}grconv."), out);
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        self.embedding.collect_mut(p, out);
        self.params.collect_mut(&format!("{p}grconv."), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_gradient;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn random_params(d_emb: usize, d: usize, scale: f64, rng: &mut Rng) -> GrConvParams<f64> {
        let mut p = GrConvParams::zeros(d_emb, d);
        for (_, m) in p.tensors_mut() {
            *m = Matrix::gaussian(m.rows(), m.cols(), scale, rng);
        }
        p
    }

    fn randv(n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn zero_gates_are_uniform() {
        let p = GrConvParams::<f64>::zeros(2, 4);
        let w = p.gate_coefficients(&[1.0; 4], &[-1.0; 4]).unwrap();
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_bias_selects_merge() {
        let mut p = GrConvParams::<f64>::zeros(2, 4);
        p.g[(OMEGA_C, 0)] = 30.0;
        let w = p.gate_coefficients(&[0.5; 4], &[0.2; 4]).unwrap();
        assert!(w[OMEGA_C] > 1.0 - 1e-12);
    }

    #[test]
    fn gates_match_direct_evaluation() {
        let mut rng = Rng::new(1);
        let p = random_params(3, 4, 0.8, &mut rng);
        let (l, r) = (randv(4, &mut rng), randv(4, &mut rng));
        let w = p.gate_coefficients(&l, &r).unwrap();
        let s: Vec<f64> = (0..3)
            .map(|k| p.g[(k, 0)] + (0..4).map(|i| p.g_l[(k, i)] * l[i] + p.g_r[(k, i)] * r[i]).sum::<f64>())
            .collect();
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        for k in 0..3 {
            assert!((w[k] - s[k].exp() / z).abs() < 1e-12);
        }
        assert!(p.gate_coefficients(&l[..3], &r).is_err());
    }

    #[test]
    fn degenerate_gates_copy_children() {
        let mut rng = Rng::new(2);
        let mut p = random_params(3, 4, 0.5, &mut rng);
        p.g_l.fill(0.0);
        p.g_r.fill(0.0);
        let nodes = vec![randv(4, &mut rng), randv(4, &mut rng), randv(4, &mut rng)];
        // softmax([-inf, 0, -inf]) == [0, 1, 0] exactly
        p.g.as_mut_slice().copy_from_slice(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
        let (out, _) = p.level(&nodes).unwrap();
        assert_eq!(out[0], nodes[0]);
        assert_eq!(out[1], nodes[1]);
        p.g.as_mut_slice().copy_from_slice(&[f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]);
        let (out, _) = p.level(&nodes).unwrap();
        assert_eq!(out[0], nodes[1]);
        assert_eq!(out[1], nodes[2]);
    }

    #[test]
    fn level_matches_scalar_evaluation() {
        let mut rng = Rng::new(3);
        let d = 4;
        let p = random_params(3, d, 0.7, &mut rng);
        let nodes = vec![randv(d, &mut rng), randv(d, &mut rng), randv(d, &mut rng)];
        let (out, gates) = p.level(&nodes).unwrap();
        assert_eq!(out.len(), 2);
        for j in 0..2 {
            let (l, r) = (&nodes[j], &nodes[j + 1]);
            let s: Vec<f64> = (0..3)
                .map(|k| p.g[(k, 0)] + (0..d).map(|i| p.g_l[(k, i)] * l[i] + p.g_r[(k, i)] * r[i]).sum::<f64>())
                .collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            let w: Vec<f64> = s.iter().map(|x| x.exp() / z).collect();
            for i in 0..d {
                let a = p.b[(i, 0)] + (0..d).map(|k| p.w_l[(i, k)] * l[k] + p.w_r[(i, k)] * r[k]).sum::<f64>();
                let want = w[0] * a.max(0.0) + w[1] * l[i] + w[2] * r[i];
                assert!((out[j][i] - want).abs() < 1e-12);
            }
            for k in 0..3 {
                assert!((gates[j][k] - w[k]).abs() < 1e-12);
            }
        }
        assert!(p.level(&nodes[..1]).is_err());
    }

    #[test]
    fn single_token_has_no_recursion() {
        let mut rng = Rng::new(4);
        let enc = GrConvEncoder::<f64>::init(8, 3, 5, &mut rng).unwrap();
        let (ctx, rec) = enc.encode(&[5]).unwrap();
        assert_eq!(ctx, enc.params.u.matvec(enc.embedding.lookup(5).unwrap()));
        assert_eq!(rec.num_nodes(), 0);
        assert!(enc.encode(&[]).is_err());
    }

    #[test]
    fn pyramid_shape_for_four_tokens() {
        let mut rng = Rng::new(5);
        let enc = GrConvEncoder::<f64>::init(8, 3, 5, &mut rng).unwrap();
        let trace = enc.forward(&[3, 4, 5, 6]).unwrap();
        assert_eq!(trace.level_sizes(), vec![4, 3, 2, 1]);
        assert_eq!(trace.gate_record().num_nodes(), 6);
        assert_eq!(trace.context().len(), 5);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = Rng::new(6);
        let (vocab, d_emb, d) = (7, 3, 6);
        let mut enc = GrConvEncoder::<f64>::zeros(vocab, d_emb, d);
        for (_, m) in enc.tensors_mut() {
            *m = Matrix::gaussian(m.rows(), m.cols(), 0.6, &mut rng);
        }
        let src = [3, 5, 4, 6, 3];
        let proj = randv(d, &mut rng);
        let obj = |e: &GrConvEncoder<f64>| -> f64 {
            let (c, _) = e.encode(&src).unwrap();
            c.iter().zip(&proj).map(|(a, b)| a * b).sum()
        };
        let trace = enc.forward(&src).unwrap();
        let mut grads = enc.zeros_like();
        enc.backward_into(&trace, &proj, &mut grads).unwrap();
        let fd = finite_diff_gradient(
            |t: &[f64]| {
                let mut e = enc.clone();
                e.assign_flat(t).unwrap();
                obj(&e)
            },
            &enc.flatten(),
            1e-5,
        )
        .unwrap();
        for (i, (a, b)) in grads.flatten().iter().zip(&fd).enumerate() {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: analytic {a} vs numeric {b}");
        }
    }

    #[test]
    fn gate_record_rejects_bad_shapes() {
        let good = vec![vec![[0.2, 0.3, 0.5]; 2], vec![[1.0, 0.0, 0.0]]];
        assert!(GateRecord::new(3, good.clone()).is_ok());
        assert!(GateRecord::new(4, good.clone()).is_err());
        assert!(GateRecord::<f64>::new(3, vec![vec![[0.2, 0.3, 0.5]; 2], vec![]]).is_err());
        assert!(GateRecord::new(2, vec![vec![[-0.1, 0.6, 0.5]]]).is_err());
    }

    proptest! {
        #[test]
        fn outputs_lie_in_convex_hull(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let d = 4;
            let p = random_params(2, d, 1.0, &mut rng);
            let nodes = vec![randv(d, &mut rng), randv(d, &mut rng)];
            let (out, _) = p.level(&nodes).unwrap();
            let mut pre = p.b.as_slice().to_vec();
            p.w_l.gemv_acc(&nodes[0], &mut pre);
            p.w_r.gemv_acc(&nodes[1], &mut pre);
            for i in 0..d {
                let cand = pre[i].max(0.0);
                let lo = cand.min(nodes[0][i]).min(nodes[1][i]);
                let hi = cand.max(nodes[0][i]).max(nodes[1][i]);
                prop_assert!(out[0][i] >= lo - 1e-12 && out[0][i] <= hi + 1e-12);
            }
        }

        #[test]
        fn context_dim_is_independent_of_length(len in 1usize..10, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let enc = GrConvEncoder::<f64>::init(9, 3, 5, &mut rng).unwrap();
            let src: Vec<TokenId> = (0..len).map(|_| rng.below(3, 9) as TokenId).collect();
            let (ctx, rec) = enc.encode(&src).unwrap();
            prop_assert_eq!(ctx.len(), 5);
            prop_assert_eq!(rec.num_nodes(), len * (len - 1) / 2);
        }
    }
}
