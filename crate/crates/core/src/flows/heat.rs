use std::f64::consts::PI;

use rand::Rng;

use super::{gaussian_kl, standard_normal, Deblurrer, FlowError};
use crate::diffcore::{dct_orthonormal, idct_orthonormal, ParamStore, Tape, Tensor, Var};
use crate::gnn::{complete_graph_edges, GcnLayer};

/// Target moments of the embedding regularizer.
pub const KL_MEAN: f64 = 20.0;
pub const KL_VAR: f64 = 4.0;
/// Smallest value passed to the logarithm when leaving the positive space.
const LOG_FLOOR: f64 = 1e-6;

/// Blur levels `σ_0 = 0 < σ_1 < … < σ_T`, log-spaced from `σ_1` to `σ_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatSchedule {
    sigmas: Vec<f64>,
    /// Std of the Gaussian noise added to blurred training inputs.
    pub noise: f64,
    /// Scale of the noise injected at every generation step.
    pub eta: f64,
}

impl HeatSchedule {
    pub const STEPS: usize = 50;

    pub fn log_spaced(steps: usize, first: f64, last: f64, noise: f64, eta: f64) -> Self {
        assert!(steps >= 2 && first > 0.0 && last > first, "invalid blur schedule");
        let ratio = (last / first).ln();
        let mut sigmas = vec![0.0];
        sigmas.extend((0..steps).map(|k| first * (ratio * k as f64 / (steps - 1) as f64).exp()));
        sigmas[steps] = last;
        Self { sigmas, noise, eta }
    }

    pub fn standard() -> Self {
        Self::log_spaced(Self::STEPS, 0.5, 20.0, 0.01, 0.01)
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// `σ_t` for `0 ≤ t ≤ T`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }
}

fn attenuation(len: usize, sigma: f64) -> Vec<f64> {
    (0..len)
        .map(|k| {
            let f = PI / len as f64 * k as f64;
            (-f * f * sigma * sigma / 2.0).exp()
        })
        .collect()
}

/// DCT, damp frequency `k` by `exp(−(πk/L)² σ²/2)`, inverse DCT. The tensor
/// is treated as one flattened vector of length `L`; its shape is kept.
pub fn heat_blur(x: &Tensor, sigma: f64) -> Result<Tensor, FlowError> {
    if x.is_empty() {
        return Err(FlowError::EmptyInput);
    }
    let mut c = dct_orthonormal(x.data())?;
    for (v, a) in c.iter_mut().zip(attenuation(x.len(), sigma)) {
        *v *= a;
    }
    Ok(Tensor::new(x.shape().to_vec(), idct_orthonormal(&c)?)?)
}

/// Differentiable [`heat_blur`].
pub fn heat_blur_var(tape: &mut Tape, x: Var, sigma: f64) -> Result<Var, FlowError> {
    let shape = tape.shape(x).to_vec();
    let len: usize = shape.iter().product();
    if len == 0 {
        return Err(FlowError::EmptyInput);
    }
    let c = tape.dct(x)?;
    let a = tape.leaf(Tensor::new(shape, attenuation(len, sigma))?);
    let c = tape.mul(c, a)?;
    Ok(tape.idct(c)?)
}

pub const DEBLUR_WIDTH: usize = 64;

/// Four root-weighted graph convolutions over the complete graph with
/// self-loops, applied to scalar-normalized input plus a blur-level column;
/// the output residual is mapped back to the input scale.
#[derive(Clone, Debug)]
pub struct HeatDeblurrer {
    pub store: ParamStore,
    layers: Vec<GcnLayer>,
    shift: f64,
    scale: f64,
}

impl HeatDeblurrer {
    pub fn new(width: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let dims = [width + 1, DEBLUR_WIDTH, DEBLUR_WIDTH, DEBLUR_WIDTH, width];
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| GcnLayer::with_root(&mut store, &format!("flow.heat{k}"), w[0], w[1], rng))
            .collect();
        Self {
            store,
            layers,
            shift: 0.0,
            scale: 1.0,
        }
    }

    pub fn normalization(&self) -> (f64, f64) {
        (self.shift, self.scale)
    }

    pub fn set_normalization(&mut self, shift: f64, scale: f64) {
        assert!(scale > 0.0 && shift.is_finite(), "scale must be positive");
        self.shift = shift;
        self.scale = scale;
    }
}

impl Deblurrer for HeatDeblurrer {
    fn delta(&self, tape: &mut Tape, x: Var, s: f64) -> Result<Var, FlowError> {
        let n = tape.shape(x)[0];
        let e = complete_graph_edges(n, true)?;
        let h = tape.offset(x, -self.shift);
        let h = tape.scale(h, 1.0 / self.scale);
        let time = tape.leaf(Tensor::matrix(n, 1, vec![s; n]));
        let mut h = tape.concat_cols(&[h, time])?;
        for (k, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, &self.store, h, &e)?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(tape.scale(h, self.scale))
    }
}

fn check_step(sched: &HeatSchedule, t: usize) -> Result<(), FlowError> {
    if t == 0 || t > sched.steps() {
        return Err(FlowError::StepOutOfRange { t, total: sched.steps() });
    }
    Ok(())
}

/// `MSE(x_noisy + Δx, blur(u0, σ_{t−1})) + KL(u0 ‖ N(20, 4))` with
/// `x_noisy = blur(u0, σ_t) + noise·ε`. `u0` lives in the positive
/// (exponentiated) space.
pub fn heat_loss_at(
    tape: &mut Tape,
    model: &impl Deblurrer,
    sched: &HeatSchedule,
    u0: Var,
    t: usize,
    eps: &Tensor,
) -> Result<Var, FlowError> {
    check_step(sched, t)?;
    if tape.shape(u0) != eps.shape() {
        return Err(FlowError::ShapeMismatch {
            left: tape.shape(u0).to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    let blurred = heat_blur_var(tape, u0, sched.sigma(t))?;
    let noise = tape.leaf(eps.map(|e| e * sched.noise));
    let noisy = tape.add(blurred, noise)?;
    let delta = model.delta(tape, noisy, t as f64 / sched.steps() as f64)?;
    let restored = tape.add(noisy, delta)?;
    let target = heat_blur_var(tape, u0, sched.sigma(t - 1))?;
    let mse = tape.mse(restored, target)?;
    let kl = gaussian_kl(tape, u0, KL_MEAN, KL_VAR);
    Ok(tape.add(mse, kl)?)
}

/// [`heat_loss_at`] with `t ~ U{1..T}` and `ε ~ N(0, I)`.
pub fn heat_loss(tape: &mut Tape, model: &impl Deblurrer, sched: &HeatSchedule, u0: Var, rng: &mut impl Rng) -> Result<Var, FlowError> {
    let t = rng.random_range(1..=sched.steps());
    let eps = standard_normal(tape.shape(u0), rng);
    heat_loss_at(tape, model, sched, u0, t, &eps)
}

/// Exponentiates the seed cloud, blurs it to `σ_T`, then applies the
/// deblurring model for `t = T, …, 1` with `η`-scaled noise and returns to the
/// original space with a logarithm.
pub fn heat_generate(model: &impl Deblurrer, sched: &HeatSchedule, seed: &Tensor, rng: &mut impl Rng) -> Result<Tensor, FlowError> {
    if seed.is_empty() {
        return Err(FlowError::EmptyInput);
    }
    let mut u = heat_blur(&seed.map(f64::exp), sched.sigma(sched.steps()))?;
    for t in (1..=sched.steps()).rev() {
        let mut tape = Tape::new();
        let x = tape.leaf(u.clone());
        let d = model.delta(&mut tape, x, t as f64 / sched.steps() as f64)?;
        let mut next = u.zip_map(tape.value(d), |a, b| a + b)?;
        if sched.eta != 0.0 {
            next.add_scaled(&standard_normal(u.shape(), rng), sched.eta);
        }
        u = next;
    }
    Ok(u.map(|v| v.max(LOG_FLOOR).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Still;

    impl Deblurrer for Still {
        fn delta(&self, tape: &mut Tape, x: Var, _: f64) -> Result<Var, FlowError> {
            Ok(tape.scale(x, 0.0))
        }
    }

    /// Returns exactly the residual to a known target.
    struct Exact(Tensor);

    impl Deblurrer for Exact {
        fn delta(&self, tape: &mut Tape, x: Var, _: f64) -> Result<Var, FlowError> {
            let t = tape.leaf(self.0.clone());
            Ok(tape.sub(t, x)?)
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent reference: explicit cosine sums, no shared helpers.
    fn reference_blur(x: &[f64], sigma: f64) -> Vec<f64> {
        let n = x.len() as f64;
        let s = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        let coeffs: Vec<f64> = (0..x.len())
            .map(|k| {
                let c: f64 = x.iter().enumerate().map(|(i, v)| v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()).sum();
                let f = PI * k as f64 / n;
                s(k) * c * (-f * f * sigma * sigma / 2.0).exp()
            })
            .collect();
        (0..x.len())
            .map(|i| coeffs.iter().enumerate().map(|(k, c)| s(k) * c * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()).sum())
            .collect()
    }

    #[test]
    fn schedule_shape() {
        let s = HeatSchedule::standard();
        assert_eq!(s.steps(), 50);
        assert_eq!(s.sigma(0), 0.0);
        assert!((s.sigma(1) - 0.5).abs() < 1e-15);
        assert_eq!(s.sigma(50), 20.0);
        assert!((1..=50).all(|t| s.sigma(t) > s.sigma(t - 1)));
        let r = s.sigma(2) / s.sigma(1);
        assert!((2..50).all(|t| (s.sigma(t + 1) / s.sigma(t) - r).abs() < 1e-12));
    }

    #[test]
    fn blur_examples() {
        let mut r = rng(1);
        let x = standard_normal(&[4, 3], &mut r);
        assert!(heat_blur(&x, 0.0).unwrap().max_abs_diff(&x) < 1e-12);
        let c = Tensor::full(&[5, 3], 2.5);
        assert!(heat_blur(&c, 7.0).unwrap().max_abs_diff(&c) < 1e-12);
        let unit = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]);
        let got = heat_blur(&unit, 1.0).unwrap();
        let want = reference_blur(&[1.0, 0.0, 0.0, 0.0], 1.0);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((got.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(heat_blur(&Tensor::zeros(&[0]), 1.0), Err(FlowError::EmptyInput));
    }

    #[test]
    fn blur_semigroup_and_contraction() {
        let mut r = rng(2);
        for _ in 0..20 {
            let len = r.random_range(1..40);
            let x = standard_normal(&[len], &mut r);
            let (a, b) = (r.random_range(0.0..5.0), r.random_range(0.0..5.0));
            let twice = heat_blur(&heat_blur(&x, a).unwrap(), b).unwrap();
            let once = heat_blur(&x, (a * a + b * b).sqrt()).unwrap();
            assert!(twice.max_abs_diff(&once) < 1e-9);
            let mean = x.data().iter().sum::<f64>() / len as f64;
            let centred = |t: &Tensor| t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            assert!(centred(&heat_blur(&x, a).unwrap()) <= centred(&x) + 1e-12);
        }
    }

    #[test]
    fn blur_var_matches_tensor_blur() {
        let mut r = rng(3);
        let x = standard_normal(&[3, 4], &mut r);
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let b = heat_blur_var(&mut tape, v, 1.7).unwrap();
        assert!(tape.value(b).max_abs_diff(&heat_blur(&x, 1.7).unwrap()) < 1e-12);
    }

    #[test]
    fn loss_vanishes_for_exact_restoration() {
        let s = HeatSchedule::standard();
        // entries 18 and 22 in equal numbers: mean 20, variance 4
        let u0 = Tensor::from_rows(&[vec![18.0, 22.0, 18.0], vec![22.0, 18.0, 22.0]]);
        let eps = standard_normal(&[2, 3], &mut rng(4));
        let t = 9;
        let target = heat_blur(&u0, s.sigma(t - 1)).unwrap();
        let mut tape = Tape::new();
        let u = tape.leaf(u0);
        let l = heat_loss_at(&mut tape, &Exact(target), &s, u, t, &eps).unwrap();
        assert!(tape.value(l).item().abs() < 1e-10);
    }

    #[test]
    fn generation_without_noise_returns_the_blurred_seed() {
        let s = HeatSchedule::log_spaced(10, 0.5, 20.0, 0.01, 0.0);
        let seed = Tensor::from_rows(&[vec![0.1, 1.2, -0.3], vec![0.8, -0.5, 0.0]]);
        let out = heat_generate(&Still, &s, &seed, &mut rng(5)).unwrap();
        let want = heat_blur(&seed.map(f64::exp), 20.0).unwrap().map(f64::ln);
        assert!(out.max_abs_diff(&want) < 1e-12);
        let back = seed.map(f64::exp).map(f64::ln);
        assert!(back.max_abs_diff(&seed) < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = HeatSchedule::standard();
        let model = HeatDeblurrer::new(3, &mut rng(6));
        let seed = Tensor::from_rows(&[vec![3.0, 2.9, 3.1], vec![3.2, 3.0, 2.8]]);
        let a = heat_generate(&model, &s, &seed, &mut rng(7)).unwrap();
        assert_eq!(a, heat_generate(&model, &s, &seed, &mut rng(7)).unwrap());
        assert!(a.all_finite());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let s = HeatSchedule::standard();
        let mut r = rng(8);
        let mut model = HeatDeblurrer::new(3, &mut r);
        model.set_normalization(20.0, 2.0);
        let u0 = standard_normal(&[2, 3], &mut r).map(|v| 20.0 + 2.0 * v);
        let eps = standard_normal(&[2, 3], &mut r);
        let ids: Vec<_> = model.store.ids().collect();
        let mut inputs: Vec<Tensor> = model.store.values().to_vec();
        inputs.push(u0);
        let check = check_gradients(
            |tape, vars| {
                for (id, v) in ids.iter().zip(vars) {
                    tape.bind(&model.store, *id, *v);
                }
                heat_loss_at(tape, &model, &s, *vars.last().unwrap(), 6, &eps).map_err(|e| crate::diffcore::DiffError::Io(e.to_string()))
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(check.relative_error < 1e-4, "{}", check.relative_error);
    }
}
