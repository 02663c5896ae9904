use std::rc::Rc;

use rand::Rng;

use super::{standard_normal, FlowError, Restorer};
use crate::diffcore::{ParamStore, SegmentReduce, Tape, Tensor, Var};
use crate::gnn::{complete_graph_edges, pair_sq_distances, time_columns, GcnLayer, Linear, Mlp, TimeEncoding};

/// Linear variance schedule with `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DdpmSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DdpmSchedule {
    pub const STEPS: usize = 50;
    pub const BETA_START: f64 = 1e-4;
    pub const BETA_END: f64 = 0.02;

    pub fn linear(steps: usize, start: f64, end: f64) -> Self {
        assert!(steps >= 2, "a schedule needs at least two steps");
        let betas: Vec<f64> = (0..steps)
            .map(|k| {
                let f = k as f64 / (steps - 1) as f64;
                start * (1.0 - f) + end * f
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().expect("non-empty");
            alpha_bars.push(prev * (1.0 - b));
        }
        Self { betas, alpha_bars }
    }

    pub fn standard() -> Self {
        Self::linear(Self::STEPS, Self::BETA_START, Self::BETA_END)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<(), FlowError> {
        if t == 0 || t > self.steps() {
            return Err(FlowError::StepOutOfRange { t, total: self.steps() });
        }
        Ok(())
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `σ_t² = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`; zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), FlowError> {
    if a.shape() != b.shape() {
        return Err(FlowError::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `x_t = √ᾱ_t x_0 + √(1 − ᾱ_t) ε`.
pub fn ddpm_degrade(sched: &DdpmSchedule, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor, FlowError> {
    sched.check(t)?;
    same_shape(x0, eps)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + b * e)?)
}

fn time_column(n: usize, t: usize, total: usize) -> Result<Tensor, FlowError> {
    Ok(time_columns(n, t as f64, total as f64, TimeEncoding::Normalized)?)
}

/// Predicted noise: the latent-width slice of `d_t − s_t`.
fn predicted_noise(tape: &mut Tape, model: &impl Restorer, x: Var, t: usize, total: usize) -> Result<Var, FlowError> {
    let shape = tape.shape(x).to_vec();
    let (n, w) = (shape[0], shape[1]);
    let h = tape.leaf(time_column(n, t, total)?);
    let s = tape.concat_cols(&[x, h])?;
    let d = model.restore(tape, s)?;
    let diff = tape.sub(d, s)?;
    Ok(tape.slice_cols(diff, 0, w)?)
}

/// Noise-prediction MSE at a given step and noise draw.
pub fn ddpm_loss_at(
    tape: &mut Tape,
    model: &impl Restorer,
    sched: &DdpmSchedule,
    x0: Var,
    t: usize,
    eps: &Tensor,
) -> Result<Var, FlowError> {
    sched.check(t)?;
    if tape.shape(x0) != eps.shape() {
        return Err(FlowError::ShapeMismatch {
            left: tape.shape(x0).to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    let ab = sched.alpha_bar(t);
    let signal = tape.scale(x0, ab.sqrt());
    let noise = tape.leaf(eps.map(|e| (1.0 - ab).sqrt() * e));
    let xt = tape.add(signal, noise)?;
    let z = predicted_noise(tape, model, xt, t, sched.steps())?;
    let target = tape.leaf(eps.clone());
    Ok(tape.mse(z, target)?)
}

/// [`ddpm_loss_at`] with `t ~ U{1..T}` and `ε ~ N(0, I)`.
pub fn ddpm_loss(tape: &mut Tape, model: &impl Restorer, sched: &DdpmSchedule, x0: Var, rng: &mut impl Rng) -> Result<Var, FlowError> {
    let t = rng.random_range(1..=sched.steps());
    let eps = standard_normal(tape.shape(x0), rng);
    ddpm_loss_at(tape, model, sched, x0, t, &eps)
}

/// One reverse step `x_{t−1} = μ_t + σ_t ε`. `eps` is ignored at `t = 1`.
pub fn ddpm_step(model: &impl Restorer, sched: &DdpmSchedule, x: &Tensor, t: usize, eps: Option<&Tensor>) -> Result<Tensor, FlowError> {
    sched.check(t)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let z = predicted_noise(&mut tape, model, xv, t, sched.steps())?;
    let z = tape.value(z);
    let (beta, alpha, ab) = (sched.beta(t), sched.alpha(t), sched.alpha_bar(t));
    let coef = beta / (1.0 - ab).sqrt();
    let mut mu = x.zip_map(z, |x, z| (x - coef * z) / alpha.sqrt())?;
    if t > 1 {
        if let Some(e) = eps {
            same_shape(x, e)?;
            mu.add_scaled(e, sched.posterior_variance(t).sqrt());
        }
    }
    Ok(mu)
}

/// Samples an `n × width` cloud from `N(0, I)` and runs the reverse chain
/// from `T` down to 1.
pub fn ddpm_generate(model: &impl Restorer, sched: &DdpmSchedule, n: usize, width: usize, rng: &mut impl Rng) -> Result<Tensor, FlowError> {
    if n == 0 || width == 0 {
        return Err(FlowError::EmptyInput);
    }
    let mut x = standard_normal(&[n, width], rng);
    for t in (1..=sched.steps()).rev() {
        let eps = (t > 1).then(|| standard_normal(&[n, width], rng));
        x = ddpm_step(model, sched, &x, t, eps.as_ref())?;
    }
    Ok(x)
}

/// [`ddpm_step`] for the distance-based restorer, which needs two points.
pub fn egnn_restore_step(model: &EgnnRestorer, sched: &DdpmSchedule, x: &Tensor, t: usize, eps: Option<&Tensor>) -> Result<Tensor, FlowError> {
    if x.rows() < 2 {
        return Err(FlowError::TooFewPoints(x.rows()));
    }
    ddpm_step(model, sched, x, t, eps)
}

pub const RESTORER_WIDTH: usize = 64;
const GCN_LAYERS: usize = 7;

/// Seven root-weighted graph convolutions over the complete graph with
/// self-loops; `d_t = s_t + f(s_t)`.
#[derive(Clone, Debug)]
pub struct GcnRestorer {
    pub store: ParamStore,
    layers: Vec<GcnLayer>,
}

impl GcnRestorer {
    /// `width` is the cloud width; one time column is appended.
    pub fn new(width: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let mut dims = vec![width + 1];
        dims.extend(std::iter::repeat_n(RESTORER_WIDTH, GCN_LAYERS - 1));
        dims.push(width + 1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| GcnLayer::with_root(&mut store, &format!("flow.gcn{k}"), w[0], w[1], rng))
            .collect();
        Self { store, layers }
    }
}

impl Restorer for GcnRestorer {
    fn restore(&self, tape: &mut Tape, s: Var) -> Result<Var, FlowError> {
        let e = complete_graph_edges(tape.shape(s)[0], true)?;
        let mut h = s;
        for (k, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, &self.store, h, &e)?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(tape.add(s, h)?)
    }
}

const EGNN_ROUNDS: usize = 3;

#[derive(Clone, Debug)]
struct EgnnRound {
    edge: Mlp,
    node: Mlp,
}

/// Distance-based noise predictor. Node states start from the time column and
/// exchange messages `m_ij = φ([h_i ‖ h_j ‖ |x_i − x_j|²])`; the noise estimate
/// is `z_i = a(h_i) x_i + mean_j (x_i − x_j) w(m_ij)`, which rotates with the
/// cloud.
#[derive(Clone, Debug)]
pub struct EgnnRestorer {
    pub store: ParamStore,
    embed: Linear,
    rounds: Vec<EgnnRound>,
    coord: Mlp,
    scale: Mlp,
}

impl EgnnRestorer {
    pub fn new(rng: &mut impl Rng) -> Self {
        let h = RESTORER_WIDTH;
        let mut store = ParamStore::new();
        let embed = Linear::new(&mut store, "flow.egnn.embed", 1, h, rng);
        let rounds = (0..EGNN_ROUNDS)
            .map(|k| EgnnRound {
                edge: Mlp::new(&mut store, &format!("flow.egnn.edge{k}"), &[2 * h + 1, h, h], rng),
                node: Mlp::new(&mut store, &format!("flow.egnn.node{k}"), &[2 * h, h, h], rng),
            })
            .collect();
        let coord = Mlp::new(&mut store, "flow.egnn.coord", &[h, h, 1], rng);
        let scale = Mlp::new(&mut store, "flow.egnn.scale", &[h, h, 1], rng);
        Self {
            store,
            embed,
            rounds,
            coord,
            scale,
        }
    }
}

impl Restorer for EgnnRestorer {
    fn restore(&self, tape: &mut Tape, s: Var) -> Result<Var, FlowError> {
        let (n, cols) = (tape.shape(s)[0], tape.shape(s)[1]);
        if n < 2 {
            return Err(FlowError::TooFewPoints(n));
        }
        let w = cols - 1;
        let x = tape.slice_cols(s, 0, w)?;
        let time = tape.slice_cols(s, w, cols)?;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        let src: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let dst: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
        let d2 = pair_sq_distances(tape, x, &pairs)?;

        let mut h = self.embed.forward(tape, &self.store, time)?;
        let mut msg = None;
        for r in &self.rounds {
            let hi = tape.gather_rows(h, src.clone())?;
            let hj = tape.gather_rows(h, dst.clone())?;
            let input = tape.concat_cols(&[hi, hj, d2])?;
            let m = r.edge.forward(tape, &self.store, input)?;
            let m = tape.relu(m);
            let agg = tape.segment(m, src.clone(), n, SegmentReduce::Mean)?;
            let hin = tape.concat_cols(&[h, agg])?;
            let dh = r.node.forward(tape, &self.store, hin)?;
            h = tape.add(h, dh)?;
            msg = Some(m);
        }
        let m = msg.expect("at least one round");
        let weights = self.coord.forward(tape, &self.store, m)?;
        let xi = tape.gather_rows(x, src.clone())?;
        let xj = tape.gather_rows(x, dst)?;
        let rel = tape.sub(xi, xj)?;
        let rel = tape.mul_col(rel, weights)?;
        let pull = tape.segment(rel, src, n, SegmentReduce::Mean)?;
        let a = self.scale.forward(tape, &self.store, h)?;
        let own = tape.mul_col(x, a)?;
        let z = tape.add(own, pull)?;
        let pad = tape.leaf(Tensor::zeros(&[n, 1]));
        let dz = tape.concat_cols(&[z, pad])?;
        Ok(tape.add(s, dz)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `d_t = s_t + [c·ε ‖ 0]`, or `s_t` itself when no noise is fixed.
    struct Oracle {
        eps: Option<Tensor>,
    }

    impl Restorer for Oracle {
        fn restore(&self, tape: &mut Tape, s: Var) -> Result<Var, FlowError> {
            let Some(eps) = &self.eps else { return Ok(s) };
            let n = eps.rows();
            let pad = Tensor::zeros(&[n, 1]);
            let e = tape.leaf(eps.clone());
            let p = tape.leaf(pad);
            let add = tape.concat_cols(&[e, p])?;
            Ok(tape.add(s, add)?)
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn schedule_endpoints_and_products() {
        let s = DdpmSchedule::standard();
        assert_eq!(s.steps(), 50);
        assert_eq!(s.beta(1), 0.0001);
        assert_eq!(s.beta(50), 0.02);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        let mut prod = 1.0;
        for t in 1..=50 {
            let beta = 0.0001 + (0.02 - 0.0001) * (t - 1) as f64 / 49.0;
            prod *= 1.0 - beta;
            assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
            assert!(t == 1 || s.beta(t) > s.beta(t - 1));
        }
        assert_eq!(s.posterior_variance(1), 0.0);
        assert!(s.posterior_variance(2) > 0.0);
    }

    #[test]
    fn degrade_closed_form() {
        let s = DdpmSchedule::standard();
        let x0 = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let zero = Tensor::zeros(&[2, 2]);
        let x = ddpm_degrade(&s, &x0, 10, &zero).unwrap();
        assert!(x.max_abs_diff(&x0.map(|v| v * s.alpha_bar(10).sqrt())) < 1e-15);
        assert_eq!(ddpm_degrade(&s, &x0, 0, &zero), Err(FlowError::StepOutOfRange { t: 0, total: 50 }));
        assert_eq!(ddpm_degrade(&s, &x0, 51, &zero), Err(FlowError::StepOutOfRange { t: 51, total: 50 }));
        assert!(matches!(ddpm_degrade(&s, &x0, 5, &Tensor::zeros(&[3, 2])), Err(FlowError::ShapeMismatch { .. })));
    }

    #[test]
    fn marginal_moments_match_monte_carlo() {
        let s = DdpmSchedule::standard();
        let mut r = rng(1);
        let x0 = Tensor::from_rows(&[vec![1.5]]);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| ddpm_degrade(&s, &x0, 50, &standard_normal(&[1, 1], &mut r)).unwrap().item())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let ab = s.alpha_bar(50);
        assert!((mean / (1.5 * ab.sqrt()) - 1.0).abs() < 0.02);
        assert!((sd / (1.0 - ab).sqrt() - 1.0).abs() < 0.02);
    }

    #[test]
    fn sequential_transitions_match_marginal() {
        let s = DdpmSchedule::standard();
        let mut r = rng(2);
        let k = 20;
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let mut x = 2.0;
                for t in 1..=k {
                    let e: f64 = standard_normal(&[1], &mut r).item();
                    x = s.alpha(t).sqrt() * x + s.beta(t).sqrt() * e;
                }
                x
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean / (2.0 * s.alpha_bar(k).sqrt()) - 1.0).abs() < 0.02);
        assert!((sd / (1.0 - s.alpha_bar(k)).sqrt() - 1.0).abs() < 0.02);
    }

    #[test]
    fn loss_with_oracle_models() {
        let s = DdpmSchedule::standard();
        let mut r = rng(3);
        let x0 = standard_normal(&[4, 3], &mut r);
        let eps = standard_normal(&[4, 3], &mut r);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let exact = Oracle { eps: Some(eps.clone()) };
        let l = ddpm_loss_at(&mut tape, &exact, &s, x, 17, &eps).unwrap();
        assert!(tape.value(l).item() < 1e-28);

        let lazy = Oracle { eps: None };
        let mut total = 0.0;
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let l = ddpm_loss(&mut tape, &lazy, &s, x, &mut r).unwrap();
            total += tape.value(l).item();
        }
        assert!((total / 2000.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn reverse_step_arithmetic() {
        let s = DdpmSchedule::standard();
        let lazy = Oracle { eps: None };
        let zero = Tensor::zeros(&[1, 1]);
        assert_eq!(ddpm_step(&lazy, &s, &zero, 1, None).unwrap().item(), 0.0);
        let x = Tensor::from_rows(&[vec![0.7]]);
        let out = ddpm_step(&lazy, &s, &x, 30, None).unwrap().item();
        assert!((out - 0.7 / s.alpha(30).sqrt()).abs() < 1e-15);

        // z = 0.25: hand-computed update with noise 0.5
        let t = 40;
        let fixed = Oracle {
            eps: Some(Tensor::from_rows(&[vec![0.25]])),
        };
        let e = Tensor::from_rows(&[vec![0.5]]);
        let got = ddpm_step(&fixed, &s, &x, t, Some(&e)).unwrap().item();
        let beta = 0.0001 + (0.02 - 0.0001) * 39.0 / 49.0;
        let mut ab = 1.0;
        for k in 1..=t {
            ab *= 1.0 - (0.0001 + (0.02 - 0.0001) * (k - 1) as f64 / 49.0);
        }
        let ab_prev = ab / (1.0 - beta);
        let mu = (0.7 - beta * 0.25 / (1.0 - ab).sqrt()) / (1.0 - beta).sqrt();
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        assert!((got - (mu + var.sqrt() * 0.5)).abs() < 1e-12);
        // noise is dropped at the last step
        assert_eq!(ddpm_step(&fixed, &s, &x, 1, Some(&e)).unwrap(), ddpm_step(&fixed, &s, &x, 1, None).unwrap());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = DdpmSchedule::standard();
        let model = GcnRestorer::new(4, &mut rng(4));
        let a = ddpm_generate(&model, &s, 5, 4, &mut rng(5)).unwrap();
        let b = ddpm_generate(&model, &s, 5, 4, &mut rng(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[5, 4]);
        assert!(a.all_finite());
        let egnn = EgnnRestorer::new(&mut rng(6));
        let a = ddpm_generate(&egnn, &s, 3, 4, &mut rng(7)).unwrap();
        assert_eq!(a, ddpm_generate(&egnn, &s, 3, 4, &mut rng(7)).unwrap());
    }

    #[test]
    fn egnn_step_rotates_with_the_cloud() {
        let s = DdpmSchedule::standard();
        let model = EgnnRestorer::new(&mut rng(8));
        let mut r = rng(9);
        let x = standard_normal(&[5, 4], &mut r);
        let q = crate::gnn::tests::random_orthogonal(4, &mut r);
        let q = Tensor::from_rows(&q);
        let a = egnn_restore_step(&model, &s, &x, 20, None).unwrap();
        let b = egnn_restore_step(&model, &s, &x.matmul(&q).unwrap(), 20, None).unwrap();
        assert!(a.matmul(&q).unwrap().max_abs_diff(&b) < 1e-10);
        assert_eq!(
            egnn_restore_step(&model, &s, &Tensor::zeros(&[1, 4]), 3, None),
            Err(FlowError::TooFewPoints(1))
        );
        // with z ≡ 0 the step reduces to x / √α_t
        let lazy = Oracle { eps: None };
        let plain = ddpm_step(&lazy, &s, &x, 20, None).unwrap();
        assert!(plain.max_abs_diff(&x.map(|v| v / s.alpha(20).sqrt())) < 1e-15);
    }

    fn param_gradcheck(store: &ParamStore, loss: impl Fn(&mut Tape) -> Result<Var, FlowError>) -> f64 {
        let inputs: Vec<Tensor> = store.values().to_vec();
        let ids: Vec<_> = store.ids().collect();
        check_gradients(
            |tape, vars| {
                for (id, v) in ids.iter().zip(vars) {
                    tape.bind(store, *id, *v);
                }
                loss(tape).map_err(|e| crate::diffcore::DiffError::Io(e.to_string()))
            },
            &inputs,
            1e-6,
        )
        .unwrap()
        .relative_error
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let s = DdpmSchedule::standard();
        let mut r = rng(10);
        let x0 = standard_normal(&[2, 3], &mut r);
        let eps = standard_normal(&[2, 3], &mut r);
        let gcn = GcnRestorer::new(3, &mut r);
        let err = param_gradcheck(&gcn.store, |tape| {
            let x = tape.leaf(x0.clone());
            ddpm_loss_at(tape, &gcn, &s, x, 12, &eps)
        });
        assert!(err < 1e-4, "gcn {err}");
        let egnn = EgnnRestorer::new(&mut r);
        let err = param_gradcheck(&egnn.store, |tape| {
            let x = tape.leaf(x0.clone());
            ddpm_loss_at(tape, &egnn, &s, x, 12, &eps)
        });
        assert!(err < 1e-4, "egnn {err}");
    }

    #[test]
    fn egnn_gradient_reaches_the_cloud() {
        let s = DdpmSchedule::standard();
        let mut r = rng(11);
        let x0 = standard_normal(&[4, 3], &mut r);
        let eps = standard_normal(&[4, 3], &mut r);
        let egnn = EgnnRestorer::new(&mut r);
        let check = check_gradients(
            |tape, v| ddpm_loss_at(tape, &egnn, &s, v[0], 30, &eps).map_err(|e| crate::diffcore::DiffError::Io(e.to_string())),
            &[x0],
            1e-6,
        )
        .unwrap();
        assert!(check.relative_error < 1e-6, "{}", check.relative_error);
    }
}
