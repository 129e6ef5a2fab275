//! Learned building blocks expressed on the tape: linear maps, MLPs, a
//! Cho-style GRU cell, scaled dot-product attention and the diagonal
//! Gaussian KL divergence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{BoundParams, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Affine map over the last axis: `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            name: name.into(),
            fan_in,
            fan_out,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        ps.init_linear(&self.name, self.fan_in, self.fan_out, rng)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    /// Accepts any rank whose last axis is `fan_in`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.fan_in) {
            return Err(Error::dim(format!(
                "{}: input {:?} does not end in width {}",
                self.name, shape, self.fan_in
            )));
        }
        let rows = shape.iter().product::<usize>() / self.fan_in.max(1);
        let flat = if shape.len() == 2 {
            x
        } else {
            g.reshape(x, &[rows, self.fan_in])?
        };
        let w = p.get(&self.weight_name())?;
        let b = p.get(&self.bias_name())?;
        let y = g.matmul(flat, w)?;
        let y = g.add_row(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape;
            *out.last_mut().unwrap() = self.fan_out;
            g.reshape(y, &out)
        }
    }
}

/// Stack of affine layers with an activation between them; the last layer
/// is affine only.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(name: &str, dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config(format!(
                "{name}: MLP needs at least two widths"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(ps, rng))
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    /// Check that a parameter set chains correctly through the layers.
    pub fn check(&self, ps: &ParamSet) -> Result<()> {
        for l in &self.layers {
            let w = ps.get(&l.weight_name())?;
            let b = ps.get(&l.bias_name())?;
            if w.shape() != [l.fan_in, l.fan_out] || b.shape() != [l.fan_out] {
                return Err(Error::dim(format!(
                    "{}: weight {:?} / bias {:?} break the width chain",
                    l.name,
                    w.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Gated recurrent unit, standard Cho formulation:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// h~ = tanh(x Wh + (r * h) Uh + bh)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub name: String,
    pub width: usize,
}

const GRU_GATES: [&str; 3] = ["z", "r", "h"];

impl GruCell {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        GruCell {
            name: name.into(),
            width,
        }
    }

    pub fn param_name(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}{gate}", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        let c = self.width;
        let bound = 1.0 / (c as f64).sqrt();
        for gate in GRU_GATES {
            ps.insert(
                self.param_name("w", gate),
                Tensor::uniform(&[c, c], bound, rng),
            )?;
            ps.insert(
                self.param_name("u", gate),
                Tensor::uniform(&[c, c], bound, rng),
            )?;
            ps.insert(
                self.param_name("b", gate),
                Tensor::uniform(&[c], bound, rng),
            )?;
        }
        Ok(())
    }

    /// One recurrence step. `x` and `h` are `[C]` vectors or `[rows, C]`
    /// batches of independent vectors.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (g.shape(x).to_vec(), g.shape(h).to_vec());
        if xs != hs || xs.last() != Some(&self.width) || xs.len() > 2 {
            return Err(Error::dim(format!(
                "{}: x {:?} / h {:?} vs width {}",
                self.name, xs, hs, self.width
            )));
        }
        let rows = if xs.len() == 2 { xs[0] } else { 1 };
        let x2 = g.reshape(x, &[rows, self.width])?;
        let h2 = g.reshape(h, &[rows, self.width])?;
        let affine = |g: &mut Graph, gate: &str, hin: Var| -> Result<Var> {
            let w = p.get(&self.param_name("w", gate))?;
            let u = p.get(&self.param_name("u", gate))?;
            let b = p.get(&self.param_name("b", gate))?;
            let xw = g.matmul(x2, w)?;
            let hu = g.matmul(hin, u)?;
            let s = g.add(xw, hu)?;
            g.add_row(s, b)
        };
        let z = affine(g, "z", h2)?;
        let z = g.sigmoid(z);
        let r = affine(g, "r", h2)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h2)?;
        let cand = affine(g, "h", rh)?;
        let cand = g.tanh(cand);
        let keep = g.one_minus(z);
        let keep = g.mul(keep, h2)?;
        let upd = g.mul(z, cand)?;
        let out = g.add(keep, upd)?;
        g.reshape(out, &xs)
    }
}

/// Scaled dot-product attention, softmax over keys, scale `1/sqrt(C)`.
///
/// Rank-2 inputs are `[T, C]`; rank-3 inputs are batches `[B, T, C]`.
/// Returns `(output, weights)`.
pub fn attention_with_weights(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (
        g.shape(q).to_vec(),
        g.shape(k).to_vec(),
        g.shape(v).to_vec(),
    );
    if qs.len() != ks.len() || ks.len() != vs.len() || !(2..=3).contains(&qs.len()) {
        return Err(Error::dim(format!(
            "attention ranks {:?} {:?} {:?}",
            qs, ks, vs
        )));
    }
    let r = qs.len();
    let c = qs[r - 1];
    if ks[r - 1] != c
        || vs[r - 1] != c
        || ks[r - 2] != vs[r - 2]
        || (r == 3 && (qs[0] != ks[0] || ks[0] != vs[0]))
    {
        return Err(Error::dim(format!(
            "attention shapes {:?} {:?} {:?}",
            qs, ks, vs
        )));
    }
    if ks[r - 2] == 0 {
        return Err(Error::invalid("attention over an empty key set"));
    }
    let kt = g.transpose(k)?;
    let scores = if r == 2 {
        g.matmul(q, kt)?
    } else {
        g.bmm(q, kt)?
    };
    let scores = g.scale(scores, 1.0 / (c as f64).sqrt());
    let w = g.softmax_rows(scores);
    let out = if r == 2 {
        g.matmul(w, v)?
    } else {
        g.bmm(w, v)?
    };
    Ok((out, w))
}

pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    attention_with_weights(g, q, k, v).map(|(o, _)| o)
}

/// Single-head attention with learned query/key/value projections and an
/// optional residual connection on the query stream.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub residual: bool,
}

impl AttentionBlock {
    pub fn new(name: &str, width: usize, residual: bool) -> Self {
        AttentionBlock {
            q: Linear::new(format!("{name}.q"), width, width),
            k: Linear::new(format!("{name}.k"), width, width),
            v: Linear::new(format!("{name}.v"), width, width),
            residual,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.q.init(ps, rng)?;
        self.k.init(ps, rng)?;
        self.v.init(ps, rng)
    }

    /// Overwrite this block's projections with identities and zero biases.
    pub fn set_identity(&self, ps: &mut ParamSet) {
        for l in [&self.q, &self.k, &self.v] {
            ps.set(l.weight_name(), Tensor::eye(l.fan_in));
            ps.set(l.bias_name(), Tensor::zeros(&[l.fan_out]));
        }
    }

    /// `query` attends over `context`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, query: Var, context: Var) -> Result<Var> {
        let q = self.q.forward(g, p, query)?;
        let k = self.k.forward(g, p, context)?;
        let v = self.v.forward(g, p, context)?;
        let out = attention(g, q, k, v)?;
        if self.residual {
            g.add(out, query)
        } else {
            Ok(out)
        }
    }
}

/// `KL(p || q)` between diagonal Gaussians, mean-reduced over elements:
/// `log(sq/sp) + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2`.
pub fn kl_diag_gaussian(
    g: &mut Graph,
    mu_p: Var,
    sigma_p: Var,
    mu_q: Var,
    sigma_q: Var,
) -> Result<Var> {
    let s = g.shape(mu_p).to_vec();
    for v in [sigma_p, mu_q, sigma_q] {
        if g.shape(v) != s.as_slice() {
            return Err(Error::dim(format!(
                "KL operand {:?} vs {:?}",
                g.shape(v),
                s
            )));
        }
    }
    for v in [sigma_p, sigma_q] {
        if g.value(v).data().iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain(
                "KL with a nonpositive standard deviation".into(),
            ));
        }
    }
    let log_sq = g.log(sigma_q)?;
    let log_sp = g.log(sigma_p)?;
    let log_ratio = g.sub(log_sq, log_sp)?;
    let var_p = g.square(sigma_p);
    let dmu = g.sub(mu_p, mu_q)?;
    let dmu2 = g.square(dmu);
    let num = g.add(var_p, dmu2)?;
    let var_q = g.square(sigma_q);
    let den = g.scale(var_q, 2.0);
    let frac = g.div(num, den)?;
    let terms = g.add(log_ratio, frac)?;
    let terms = g.add_scalar(terms, -0.5);
    Ok(g.mean(terms))
}

/// Closed-form KL on plain tensors (no tape), same reduction.
pub fn kl_diag_gaussian_value(
    mu_p: &Tensor,
    sigma_p: &Tensor,
    mu_q: &Tensor,
    sigma_q: &Tensor,
) -> Result<f64> {
    let mut g = Graph::new();
    let vs = [mu_p, sigma_p, mu_q, sigma_q].map(|t| g.constant(t.clone()));
    let kl = kl_diag_gaussian(&mut g, vs[0], vs[1], vs[2], vs[3])?;
    g.value(kl).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop GRU written independently of the tape.
    fn reference_gru(ps: &ParamSet, cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let c = cell.width;
        let get = |kind: &str, gate: &str| {
            ps.get(&cell.param_name(kind, gate))
                .unwrap()
                .data()
                .to_vec()
        };
        let vecmat = |v: &[f64], m: &[f64]| -> Vec<f64> {
            (0..c)
                .map(|j| (0..c).map(|i| v[i] * m[i * c + j]).sum())
                .collect()
        };
        let gate = |g: &str, hin: &[f64]| -> Vec<f64> {
            let xw = vecmat(x, &get("w", g));
            let hu = vecmat(hin, &get("u", g));
            let b = get("b", g);
            (0..c).map(|j| xw[j] + hu[j] + b[j]).collect()
        };
        let z: Vec<f64> = gate("z", h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate("r", h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate("h", &rh).into_iter().map(f64::tanh).collect();
        (0..c)
            .map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j])
            .collect()
    }

    #[test]
    fn gru_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cell = GruCell::new("gru", 5);
        let mut ps = ParamSet::new();
        cell.init(&mut ps, &mut rng).unwrap();
        let x = Tensor::uniform(&[5], 1.0, &mut rng);
        let h = Tensor::uniform(&[5], 1.0, &mut rng);
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
        let out = cell.forward(&mut g, &p, xv, hv).unwrap();
        let oracle = reference_gru(&ps, &cell, x.data(), h.data());
        for (a, b) in g.value(out).data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_closed_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cell = GruCell::new("gru", 4);
        let mut ps = ParamSet::new();
        cell.init(&mut ps, &mut rng).unwrap();
        ps.set(cell.param_name("b", "z"), Tensor::full(&[4], -60.0));
        let x = Tensor::uniform(&[4], 1.0, &mut rng);
        let h = Tensor::uniform(&[4], 1.0, &mut rng);
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let (xv, hv) = (g.constant(x), g.constant(h.clone()));
        let out = cell.forward(&mut g, &p, xv, hv).unwrap();
        assert!(g.value(out).max_abs_diff(&h) < 1e-20);
    }

    #[test]
    fn gru_width_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cell = GruCell::new("gru", 4);
        let mut ps = ParamSet::new();
        cell.init(&mut ps, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[4]));
        let h = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(
            cell.forward(&mut g, &p, x, h),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gru_gradient_wrt_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cell = GruCell::new("gru", 4);
        let mut ps = ParamSet::new();
        cell.init(&mut ps, &mut rng).unwrap();
        let x = Tensor::uniform(&[4], 1.0, &mut rng);
        let h = Tensor::uniform(&[4], 1.0, &mut rng);
        let report = finite_diff_grad(
            |g, v| {
                let p = ps.bind_frozen(g);
                let hv = g.constant(h.clone());
                let out = cell.forward(g, &p, v[0], hv)?;
                Ok(g.sum(out))
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{}", report.max_rel_err);
    }

    fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<f64> {
        let (tq, c) = (q.shape()[0], q.shape()[1]);
        let tk = k.shape()[0];
        let mut out = vec![0.0; tq * c];
        for i in 0..tq {
            let scores: Vec<f64> = (0..tk)
                .map(|j| {
                    (0..c)
                        .map(|d| q.data()[i * c + d] * k.data()[j * c + d])
                        .sum::<f64>()
                        / (c as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..tk {
                for d in 0..c {
                    out[i * c + d] += e[j] / z * v.data()[j * c + d];
                }
            }
        }
        out
    }

    #[test]
    fn attention_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = Tensor::uniform(&[3, 4], 2.0, &mut rng);
        let k = Tensor::uniform(&[5, 4], 2.0, &mut rng);
        let v = Tensor::uniform(&[5, 4], 2.0, &mut rng);
        let mut g = Graph::new();
        let (qv, kv, vv) = (
            g.constant(q.clone()),
            g.constant(k.clone()),
            g.constant(v.clone()),
        );
        let (out, w) = attention_with_weights(&mut g, qv, kv, vv).unwrap();
        for (a, b) in g.value(out).data().iter().zip(naive_attention(&q, &k, &v)) {
            assert!((a - b).abs() < 1e-10);
        }
        for row in g.value(w).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_single_key_returns_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut g = Graph::new();
        let q = g.constant(Tensor::uniform(&[3, 4], 1.0, &mut rng));
        let k = g.constant(Tensor::uniform(&[1, 4], 1.0, &mut rng));
        let vt = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let v = g.constant(vt.clone());
        let out = attention(&mut g, q, k, v).unwrap();
        for row in g.value(out).data().chunks(4) {
            assert_eq!(row, vt.data());
        }
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut g = Graph::new();
        let q = g.constant(Tensor::uniform(&[2, 3], 1.0, &mut rng));
        let k = g.constant(Tensor::full(&[4, 3], 0.7));
        let vt = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let v = g.constant(vt.clone());
        let out = attention(&mut g, q, k, v).unwrap();
        let mean: Vec<f64> = (0..3)
            .map(|d| (0..4).map(|j| vt.data()[j * 3 + d]).sum::<f64>() / 4.0)
            .collect();
        for row in g.value(out).data().chunks(3) {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_empty_keys_rejected() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(&[2, 3]));
        let k = g.constant(Tensor::zeros(&[0, 3]));
        let v = g.constant(Tensor::zeros(&[0, 3]));
        assert!(matches!(
            attention(&mut g, q, k, v),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn mlp_zero_and_identity() {
        let mlp = Mlp::new("m", &[3, 4, 2], Activation::Tanh).unwrap();
        let mut ps = ParamSet::new();
        for l in &mlp.layers {
            ps.set(l.weight_name(), Tensor::zeros(&[l.fan_in, l.fan_out]));
            ps.set(l.bias_name(), Tensor::zeros(&[l.fan_out]));
        }
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let x = g.constant(Tensor::full(&[5, 3], 1.3));
        let y = mlp.forward(&mut g, &p, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let one = Mlp::new("id", &[3, 3], Activation::Tanh).unwrap();
        let mut ps = ParamSet::new();
        ps.set("id.0.w", Tensor::eye(3));
        ps.set("id.0.b", Tensor::zeros(&[3]));
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let xt = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let x = g.constant(xt.clone());
        let y = one.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn mlp_width_chain_break() {
        let mlp = Mlp::new("m", &[3, 4, 2], Activation::Tanh).unwrap();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        mlp.init(&mut ps, &mut rng).unwrap();
        assert!(mlp.check(&ps).is_ok());
        ps.set("m.1.w", Tensor::zeros(&[5, 2]));
        assert!(matches!(mlp.check(&ps), Err(Error::Dimension(_))));
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            mlp.forward(&mut g, &p, x),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn kl_identical_is_zero_and_hand_value() {
        let mu = Tensor::new(&[3], vec![0.1, -0.4, 2.0]).unwrap();
        let sig = Tensor::new(&[3], vec![0.5, 1.0, 3.0]).unwrap();
        assert_eq!(kl_diag_gaussian_value(&mu, &sig, &mu, &sig).unwrap(), 0.0);
        // mu_p=0, s_p=1, mu_q=1, s_q=1: 0 + (1 + 1)/2 - 1/2 = 0.5
        let v = kl_diag_gaussian_value(
            &Tensor::new(&[1], vec![0.0]).unwrap(),
            &Tensor::new(&[1], vec![1.0]).unwrap(),
            &Tensor::new(&[1], vec![1.0]).unwrap(),
            &Tensor::new(&[1], vec![1.0]).unwrap(),
        )
        .unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_nonpositive_sigma_is_domain_error() {
        let one = Tensor::full(&[2], 1.0);
        let bad = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            kl_diag_gaussian_value(&one, &bad, &one, &one),
            Err(Error::Domain(_))
        ));
    }
}
