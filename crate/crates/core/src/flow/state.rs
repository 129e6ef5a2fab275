use rand::Rng;

use crate::error::{Error, Result};
use crate::rig::UnitVars;
use crate::tensor::nn::{kl_diag_gaussian, Linear};
use crate::tensor::{BoundParams, Graph, ParamSet, Tensor, Var};

/// Diagonal Gaussian latent state; `sigma` is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian<T = Tensor> {
    pub mu: T,
    pub sigma: T,
}

/// Maps `[.., C]` tokens to a latent Gaussian with `C'` channels:
/// tanh hidden layer, then separate mean and log-std projections.
#[derive(Debug, Clone)]
pub struct StateHead {
    pub hidden: Linear,
    pub mu: Linear,
    pub log_sigma: Linear,
}

impl StateHead {
    pub fn new(name: &str, channels: usize, latent: usize) -> Self {
        StateHead {
            hidden: Linear::new(format!("{name}.hidden"), channels, channels),
            mu: Linear::new(format!("{name}.mu"), channels, latent),
            log_sigma: Linear::new(format!("{name}.log_sigma"), channels, latent),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.hidden.init(ps, rng)?;
        self.mu.init(ps, rng)?;
        self.log_sigma.init(ps, rng)
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<LatentGaussian<Var>> {
        let h = self.hidden.forward(g, p, x)?;
        let h = g.tanh(h);
        let mu = self.mu.forward(g, p, h)?;
        let ls = self.log_sigma.forward(g, p, h)?;
        Ok(LatentGaussian {
            mu,
            sigma: g.exp(ls),
        })
    }
}

/// Predicted-branch and GT-branch state heads. With `shared`, both
/// branches use the predicted-branch weights.
///
/// `balance` splits the KL gradient: that fraction trains the predicted
/// branch against a frozen GT state, the rest trains the GT head against a
/// frozen prediction. The loss value does not depend on it, and GT units
/// never receive gradient.
#[derive(Debug, Clone)]
pub struct StateMlps {
    pub pred: StateHead,
    pub gt: StateHead,
    pub shared: bool,
    pub balance: f64,
}

impl StateMlps {
    pub fn new(
        prefix: &str,
        channels: usize,
        latent: usize,
        shared: bool,
        balance: f64,
    ) -> Result<Self> {
        if latent == 0 {
            return Err(Error::config("latent state needs at least one channel"));
        }
        if !(0.0..=1.0).contains(&balance) {
            return Err(Error::config(format!(
                "KL balance must lie in [0, 1], got {balance}"
            )));
        }
        let pred = StateHead::new(&format!("{prefix}.pred"), channels, latent);
        let gt = if shared {
            pred.clone()
        } else {
            StateHead::new(&format!("{prefix}.gt"), channels, latent)
        };
        Ok(StateMlps {
            pred,
            gt,
            shared,
            balance,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.pred.init(ps, rng)?;
        if !self.shared {
            self.gt.init(ps, rng)?;
        }
        Ok(())
    }
}

/// All units stacked into one `[units * H * P, C]` token matrix.
fn stack_tokens(g: &mut Graph, units: &UnitVars) -> Result<Var> {
    let ring: Vec<Var> = units.ring_order().into_iter().copied().collect();
    if ring.is_empty() {
        return Err(Error::invalid("state loss over an empty unit set"));
    }
    let c = *g.shape(ring[0]).last().unwrap_or(&0);
    let flat = ring
        .iter()
        .map(|&u| {
            let n = g.value(u).numel() / c.max(1);
            g.reshape(u, &[n, c])
        })
        .collect::<Result<Vec<_>>>()?;
    g.concat_rows(&flat)
}

/// KL between the predicted-branch state of `pred` and the GT-branch state
/// of `gt`, averaged over units. No gradient reaches `gt` or the GT head.
pub fn spatial_loss(
    g: &mut Graph,
    p: &BoundParams,
    heads: &StateMlps,
    pred: &UnitVars,
    gt: &UnitVars,
) -> Result<Var> {
    if pred.left.len() != gt.left.len() || pred.right.len() != gt.right.len() {
        return Err(Error::dim(format!(
            "state loss: {}+{} predicted units vs {}+{} targets",
            pred.left.len(),
            pred.right.len(),
            gt.left.len(),
            gt.right.len()
        )));
    }
    let xp = stack_tokens(g, pred)?;
    let xg = stack_tokens(g, gt)?;
    if g.shape(xp) != g.shape(xg) {
        return Err(Error::dim(format!(
            "state loss: {:?} vs {:?}",
            g.shape(xp),
            g.shape(xg)
        )));
    }
    let xg = g.detach(xg);
    let sp = heads.pred.forward(g, p, xp)?;
    let sg = heads.gt.forward(g, p, xg)?;
    // equal unit sizes make the element mean equal the mean of unit means
    let a = heads.balance;
    let (tm, ts) = (g.detach(sg.mu), g.detach(sg.sigma));
    let to_pred = kl_diag_gaussian(g, sp.mu, sp.sigma, tm, ts)?;
    if a == 1.0 {
        return Ok(to_pred);
    }
    let (pm, ps) = (g.detach(sp.mu), g.detach(sp.sigma));
    let to_gt = kl_diag_gaussian(g, pm, ps, sg.mu, sg.sigma)?;
    let (l, r) = (g.scale(to_pred, a), g.scale(to_gt, 1.0 - a));
    g.add(l, r)
}

/// [`spatial_loss`] averaged over the prediction steps `t = 2..T`.
pub fn temporal_loss(
    g: &mut Graph,
    p: &BoundParams,
    heads: &StateMlps,
    preds: &[UnitVars],
    gts: &[UnitVars],
) -> Result<Var> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::dim(format!(
            "temporal loss: {} predictions vs {} targets",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (pr, gt) in preds.iter().zip(gts) {
        let l = spatial_loss(g, p, heads, pr, gt)?;
        acc = Some(match acc {
            None => l,
            Some(a) => g.add(a, l)?,
        });
    }
    Ok(g.scale(acc.unwrap(), 1.0 / preds.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{FlowUnitSet, FlowUnits};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn units(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> FlowUnitSet {
        FlowUnits::new(
            (0..n)
                .map(|_| Tensor::uniform(&[2, 2, 4], scale, rng))
                .collect(),
            (0..n)
                .map(|_| Tensor::uniform(&[2, 2, 4], scale, rng))
                .collect(),
        )
    }

    fn heads(shared: bool, rng: &mut ChaCha8Rng) -> (StateMlps, ParamSet) {
        balanced_heads(shared, 0.8, rng)
    }

    fn balanced_heads(shared: bool, balance: f64, rng: &mut ChaCha8Rng) -> (StateMlps, ParamSet) {
        let h = StateMlps::new("state", 4, 2, shared, balance).unwrap();
        let mut ps = ParamSet::new();
        h.init(&mut ps, rng).unwrap();
        (h, ps)
    }

    fn loss_value(h: &StateMlps, ps: &ParamSet, a: &FlowUnitSet, b: &FlowUnitSet) -> f64 {
        let mut g = Graph::new();
        let p = ps.bind_frozen(&mut g);
        let (va, vb) = (a.record(&mut g, false), b.record(&mut g, false));
        let l = spatial_loss(&mut g, &p, h, &va, &vb).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn identical_inputs_with_shared_heads_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, ps) = heads(true, &mut rng);
        let u = units(&mut rng, 3, 1.0);
        assert_eq!(loss_value(&h, &ps, &u, &u), 0.0);
    }

    #[test]
    fn separate_heads_have_distinct_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, shared) = heads(true, &mut rng);
        let (_, split) = heads(false, &mut rng);
        assert_eq!(split.len(), 2 * shared.len());
    }

    fn branch_grads(balance: f64) -> (bool, bool, bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, ps) = balanced_heads(false, balance, &mut rng);
        let (a, b) = (units(&mut rng, 2, 1.0), units(&mut rng, 2, 1.0));
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let (va, vb) = (a.record(&mut g, true), b.record(&mut g, true));
        let l = spatial_loss(&mut g, &p, &h, &va, &vb).unwrap();
        let grads = g.backward(l).unwrap();
        let gt_units_zero = vb
            .ring_order()
            .iter()
            .all(|&&v| grads.get(v).data().iter().all(|&x| x == 0.0));
        let pred_units_live = va
            .ring_order()
            .iter()
            .any(|&&v| grads.get(v).data().iter().any(|&x| x != 0.0));
        let gt_head_live = p
            .grads(&grads)
            .iter()
            .any(|(name, t)| name.starts_with("state.gt") && t.data().iter().any(|&x| x != 0.0));
        (gt_units_zero, pred_units_live, gt_head_live)
    }

    #[test]
    fn gt_units_get_exactly_zero_gradient() {
        assert_eq!(branch_grads(0.8), (true, true, true));
        assert_eq!(branch_grads(1.0), (true, true, false));
    }

    #[test]
    fn balance_leaves_the_loss_value_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b) = (units(&mut rng, 2, 1.0), units(&mut rng, 2, 1.0));
        let vals: Vec<f64> = [0.0, 0.5, 0.8, 1.0]
            .iter()
            .map(|&bal| {
                let mut r = ChaCha8Rng::seed_from_u64(7);
                let (h, ps) = balanced_heads(false, bal, &mut r);
                loss_value(&h, &ps, &a, &b)
            })
            .collect();
        for v in &vals {
            approx::assert_relative_eq!(*v, vals[3], max_relative = 1e-12);
        }
        assert!(StateMlps::new("s", 4, 2, false, 1.5).is_err());
    }

    #[test]
    fn temporal_loss_zero_on_identity_and_monotone_in_mean_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, ps) = heads(true, &mut rng);
        let u = units(&mut rng, 2, 1.0);
        let mut g = Graph::new();
        let p = ps.bind_frozen(&mut g);
        let v = u.record(&mut g, false);
        let l = temporal_loss(&mut g, &p, &h, &[v.clone(), v.clone()], &[v.clone(), v]).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);

        // fixed sigma: doubling the mean gap increases the loss
        let mut g = Graph::new();
        let sigma = g.constant(Tensor::full(&[6], 0.7));
        let mu = g.constant(Tensor::uniform(&[6], 1.0, &mut rng));
        let gap = Tensor::uniform(&[6], 1.0, &mut rng);
        let near = g.constant(g.value(mu).zip_map(&gap, |m, d| m + d).unwrap());
        let far = g.constant(g.value(mu).zip_map(&gap, |m, d| m + 2.0 * d).unwrap());
        let a = kl_diag_gaussian(&mut g, near, sigma, mu, sigma).unwrap();
        let b = kl_diag_gaussian(&mut g, far, sigma, mu, sigma).unwrap();
        assert!(g.value(b).item().unwrap() > g.value(a).item().unwrap());
    }

    #[test]
    fn mismatched_unit_counts_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, ps) = heads(true, &mut rng);
        let (a, b) = (units(&mut rng, 2, 1.0), units(&mut rng, 3, 1.0));
        let mut g = Graph::new();
        let p = ps.bind_frozen(&mut g);
        let (va, vb) = (a.record(&mut g, false), b.record(&mut g, false));
        assert!(matches!(
            spatial_loss(&mut g, &p, &h, &va, &vb),
            Err(Error::Dimension(_))
        ));
        assert!(temporal_loss(&mut g, &p, &h, &[], &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn losses_are_nonnegative(seed in any::<u64>(), shared in any::<bool>(), scale in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, ps) = heads(shared, &mut rng);
            let (a, b) = (units(&mut rng, 2, scale), units(&mut rng, 2, scale));
            prop_assert!(loss_value(&h, &ps, &a, &b) >= 0.0);
            let mut g = Graph::new();
            let p = ps.bind_frozen(&mut g);
            let (va, vb) = (a.record(&mut g, false), b.record(&mut g, false));
            let l = temporal_loss(&mut g, &p, &h, &[va.clone(), vb.clone()], &[vb, va]).unwrap();
            prop_assert!(g.value(l).item().unwrap() >= 0.0);
        }
    }
}
