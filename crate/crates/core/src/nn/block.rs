use super::layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use super::{dot, Mat, ParamSet, Scalar, Tensor};

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    /// `heads x n x n` softmax weights.
    probs: Vec<T>,
    ctx: Mat<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            o: Linear::zeros(dim, dim),
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> (Mat<T>, AttentionCache<T>) {
        let n = x.rows;
        let dim = x.cols;
        let hd = dim / self.heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let mut probs = vec![T::zero(); self.heads * n * n];
        let mut ctx = Mat::zeros(n, dim);
        for h in 0..self.heads {
            let cols = h * hd..(h + 1) * hd;
            for i in 0..n {
                let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q.row(i)[cols.clone()];
                let mut max = T::neg_infinity();
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = dot(qi, &k.row(j)[cols.clone()]) * scale;
                    max = max.max(*pj);
                }
                let mut sum = T::zero();
                for pj in p.iter_mut() {
                    *pj = (*pj - max).exp();
                    sum += *pj;
                }
                let inv = T::one() / sum;
                for pj in p.iter_mut() {
                    *pj *= inv;
                }
                let ci = &mut ctx.row_mut(i)[cols.clone()];
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &v.row(j)[cols.clone()];
                    for (c, &vv) in ci.iter_mut().zip(vj) {
                        *c += pj * vv;
                    }
                }
            }
        }
        let out = self.o.forward(&ctx);
        (out, AttentionCache { q, k, v, probs, ctx })
    }

    pub fn backward(
        &self,
        x: &Mat<T>,
        cache: &AttentionCache<T>,
        dout: &Mat<T>,
        grad: &mut Attention<T>,
    ) -> Mat<T> {
        let n = x.rows;
        let dim = x.cols;
        let hd = dim / self.heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let dctx = self
            .o
            .backward(&cache.ctx, dout, &mut grad.o, true)
            .expect("input grad requested");
        let mut dq = Mat::zeros(n, dim);
        let mut dk = Mat::zeros(n, dim);
        let mut dv = Mat::zeros(n, dim);
        let mut dp = vec![T::zero(); n];
        for h in 0..self.heads {
            let cols = h * hd..(h + 1) * hd;
            for i in 0..n {
                let p = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &dctx.row(i)[cols.clone()];
                let mut weighted = T::zero();
                for j in 0..n {
                    dp[j] = dot(dci, &cache.v.row(j)[cols.clone()]);
                    weighted += p[j] * dp[j];
                    let dvj = &mut dv.row_mut(j)[cols.clone()];
                    for (d, &g) in dvj.iter_mut().zip(dci) {
                        *d += p[j] * g;
                    }
                }
                let qi = &cache.q.row(i)[cols.clone()];
                for j in 0..n {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let kj = &cache.k.row(j)[cols.clone()];
                    for (d, &kv) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *d += ds * kv;
                    }
                    for (d, &qv) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *d += ds * qv;
                    }
                }
            }
        }
        let mut dx = self.q.backward(x, &dq, &mut grad.q, true).expect("requested");
        dx.add_assign(&self.k.backward(x, &dk, &mut grad.k, true).expect("requested"));
        dx.add_assign(&self.v.backward(x, &dv, &mut grad.v, true).expect("requested"));
        dx
    }
}

impl<T: Scalar> ParamSet<T> for Attention<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.q.visit(&format!("{prefix}.q"), out);
        self.k.visit(&format!("{prefix}.k"), out);
        self.v.visit(&format!("{prefix}.v"), out);
        self.o.visit(&format!("{prefix}.o"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.q.visit_mut(&format!("{prefix}.q"), out);
        self.k.visit_mut(&format!("{prefix}.k"), out);
        self.v.visit_mut(&format!("{prefix}.v"), out);
        self.o.visit_mut(&format!("{prefix}.o"), out);
    }
}

/// Pre-norm transformer block:
/// `h = x + attn(ln1(x))`, `y = h + fc2(gelu(fc1(ln2(h))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub norm1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    a: Mat<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    b: Mat<T>,
    pre: Mat<T>,
    act: Mat<T>,
}

impl<T: Scalar> Block<T> {
    pub fn zeros(dim: usize, heads: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNorm::zeros(dim),
            attn: Attention::zeros(dim, heads),
            norm2: LayerNorm::zeros(dim),
            fc1: Linear::zeros(hidden, dim),
            fc2: Linear::zeros(dim, hidden),
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> (Mat<T>, BlockCache<T>) {
        let (a, ln1) = self.norm1.forward(x);
        let (attn_out, attn) = self.attn.forward(&a);
        let mut h = x.clone();
        h.add_assign(&attn_out);
        let (b, ln2) = self.norm2.forward(&h);
        let pre = self.fc1.forward(&b);
        let act = Mat {
            rows: pre.rows,
            cols: pre.cols,
            data: pre.data.iter().map(|&v| gelu(v)).collect(),
        };
        let mut y = h;
        y.add_assign(&self.fc2.forward(&act));
        (
            y,
            BlockCache {
                ln1,
                a,
                attn,
                ln2,
                b,
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &BlockCache<T>, dy: &Mat<T>, grad: &mut Block<T>) -> Mat<T> {
        let mut dpre = self
            .fc2
            .backward(&cache.act, dy, &mut grad.fc2, true)
            .expect("requested");
        for (d, &u) in dpre.data.iter_mut().zip(&cache.pre.data) {
            *d *= gelu_grad(u);
        }
        let db = self
            .fc1
            .backward(&cache.b, &dpre, &mut grad.fc1, true)
            .expect("requested");
        let mut dh = dy.clone();
        dh.add_assign(&self.norm2.backward(&cache.ln2, &db, &mut grad.norm2));
        let da = self.attn.backward(&cache.a, &cache.attn, &dh, &mut grad.attn);
        let mut dx = dh;
        dx.add_assign(&self.norm1.backward(&cache.ln1, &da, &mut grad.norm1));
        dx
    }
}

impl<T: Scalar> ParamSet<T> for Block<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.norm1.visit(&format!("{prefix}.norm1"), out);
        self.attn.visit(&format!("{prefix}.attn"), out);
        self.norm2.visit(&format!("{prefix}.norm2"), out);
        self.fc1.visit(&format!("{prefix}.mlp.fc1"), out);
        self.fc2.visit(&format!("{prefix}.mlp.fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), out);
        self.attn.visit_mut(&format!("{prefix}.attn"), out);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), out);
        self.fc1.visit_mut(&format!("{prefix}.mlp.fc1"), out);
        self.fc2.visit_mut(&format!("{prefix}.mlp.fc2"), out);
    }
}
