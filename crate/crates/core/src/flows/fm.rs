use rand::Rng;

use super::{standard_normal, FlowError, VelocityField};
use crate::diffcore::{ode_integrate, ParamStore, Tape, Tensor, Var};
use crate::gnn::{complete_graph_edges, time_columns, GcnLayer, Linear, TimeEncoding};

pub const SIGMA_MIN: f64 = 1e-4;
pub const FIELD_WIDTH: usize = 64;
const HIDDEN_LAYERS: usize = 10;
const TIME_PAIRS: usize = 4;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), FlowError> {
    if a.shape() != b.shape() {
        return Err(FlowError::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `ψ_t = (1 − (1 − σ_min) t) x0 + t x1`.
pub fn fm_interpolate(x0: &Tensor, x1: &Tensor, t: f64, sigma_min: f64) -> Result<Tensor, FlowError> {
    same_shape(x0, x1)?;
    let a = 1.0 - (1.0 - sigma_min) * t;
    Ok(x0.zip_map(x1, |p, q| a * p + t * q)?)
}

/// `d_ψ = x1 − (1 − σ_min) x0`.
pub fn fm_target_velocity(x0: &Tensor, x1: &Tensor, sigma_min: f64) -> Result<Tensor, FlowError> {
    same_shape(x0, x1)?;
    Ok(x0.zip_map(x1, |p, q| q - (1.0 - sigma_min) * p)?)
}

/// Squared velocity error at a fixed source sample and time. The target
/// cloud `x1` may carry gradients.
pub fn fm_loss_at(
    tape: &mut Tape,
    field: &impl VelocityField,
    x1: Var,
    x0: &Tensor,
    t: f64,
    sigma_min: f64,
) -> Result<Var, FlowError> {
    if tape.shape(x1) != x0.shape() {
        return Err(FlowError::ShapeMismatch {
            left: tape.shape(x1).to_vec(),
            right: x0.shape().to_vec(),
        });
    }
    let a = 1.0 - (1.0 - sigma_min) * t;
    let src = tape.leaf(x0.map(|v| a * v));
    let dst = tape.scale(x1, t);
    let psi = tape.add(src, dst)?;
    let v = field.velocity(tape, t, psi)?;
    let back = tape.leaf(x0.map(|v| (1.0 - sigma_min) * v));
    let target = tape.sub(x1, back)?;
    Ok(tape.mse(v, target)?)
}

/// [`fm_loss_at`] with `x0 ~ N(0, I)` and `t ~ U[0, 1]`.
pub fn fm_loss(tape: &mut Tape, field: &impl VelocityField, x1: Var, sigma_min: f64, rng: &mut impl Rng) -> Result<Var, FlowError> {
    let x0 = standard_normal(tape.shape(x1), rng);
    let t = rng.random_range(0.0..=1.0);
    fm_loss_at(tape, field, x1, &x0, t, sigma_min)
}

/// Integrates the field from `x0 ~ N(0, I)` at `t = 0` to `t = 1` with
/// fixed-step RK4.
pub fn fm_generate(field: &impl VelocityField, n: usize, width: usize, steps: usize, rng: &mut impl Rng) -> Result<Tensor, FlowError> {
    if n == 0 || width == 0 {
        return Err(FlowError::EmptyInput);
    }
    let x0 = standard_normal(&[n, width], rng);
    integrate(field, &x0, 0.0, 1.0, steps)
}

/// RK4 between arbitrary times; `t1 < t0` runs the flow backward.
pub fn integrate(field: &impl VelocityField, x: &Tensor, t0: f64, t1: f64, steps: usize) -> Result<Tensor, FlowError> {
    let mut failure = None;
    let out = ode_integrate(
        |t, x| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            match field.velocity(&mut tape, t, xv) {
                Ok(v) => Ok(tape.value(v).clone()),
                Err(e) => {
                    failure = Some(e.clone());
                    Err(crate::diffcore::DiffError::Io(e.to_string()))
                }
            }
        },
        x,
        t0,
        t1,
        steps,
    );
    match (out, failure) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}

/// `v(t, x)`: a root-weighted graph convolution over `[x ‖ enc(t)]` on the
/// complete graph with self-loops, ten ReLU hidden layers and a linear
/// output of the cloud's width.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub store: ParamStore,
    input: GcnLayer,
    hidden: Vec<Linear>,
    output: Linear,
}

impl FlowField {
    pub fn new(width: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let enc = TimeEncoding::Sinusoidal { pairs: TIME_PAIRS }.width();
        let input = GcnLayer::with_root(&mut store, "flow.fm.in", width + enc, FIELD_WIDTH, rng);
        let hidden = (0..HIDDEN_LAYERS)
            .map(|k| Linear::new(&mut store, &format!("flow.fm.h{k}"), FIELD_WIDTH, FIELD_WIDTH, rng))
            .collect();
        let output = Linear::new(&mut store, "flow.fm.out", FIELD_WIDTH, width, rng);
        Self {
            store,
            input,
            hidden,
            output,
        }
    }
}

impl VelocityField for FlowField {
    fn velocity(&self, tape: &mut Tape, t: f64, x: Var) -> Result<Var, FlowError> {
        let n = tape.shape(x)[0];
        let enc = tape.leaf(time_columns(n, t, 1.0, TimeEncoding::Sinusoidal { pairs: TIME_PAIRS })?);
        let input = tape.concat_cols(&[x, enc])?;
        let e = complete_graph_edges(n, true)?;
        let mut h = self.input.forward(tape, &self.store, input, &e)?;
        h = tape.relu(h);
        for l in &self.hidden {
            h = l.forward(tape, &self.store, h)?;
            h = tape.relu(h);
        }
        Ok(self.output.forward(tape, &self.store, h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Constant(f64);

    impl VelocityField for Constant {
        fn velocity(&self, tape: &mut Tape, _t: f64, x: Var) -> Result<Var, FlowError> {
            let z = tape.scale(x, 0.0);
            Ok(tape.offset(z, self.0))
        }
    }

    struct Linear1;

    impl VelocityField for Linear1 {
        fn velocity(&self, _tape: &mut Tape, _t: f64, x: Var) -> Result<Var, FlowError> {
            Ok(x)
        }
    }

    /// Returns the conditional target for a known pair.
    struct Target(Tensor);

    impl VelocityField for Target {
        fn velocity(&self, tape: &mut Tape, _t: f64, _x: Var) -> Result<Var, FlowError> {
            Ok(tape.leaf(self.0.clone()))
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn interpolation_identities() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let x0 = standard_normal(&[3, 2], &mut r);
            let x1 = standard_normal(&[3, 2], &mut r);
            let s: f64 = r.random_range(0.0..0.1);
            let t: f64 = r.random_range(0.0..=1.0);
            assert!(fm_interpolate(&x0, &x1, 0.0, s).unwrap().max_abs_diff(&x0) < 1e-12);
            let end = x0.zip_map(&x1, |a, b| s * a + b).unwrap();
            assert!(fm_interpolate(&x0, &x1, 1.0, s).unwrap().max_abs_diff(&end) < 1e-12);
            let diff = x1.zip_map(&x0, |a, b| a - b).unwrap();
            assert!(fm_target_velocity(&x0, &x1, 0.0).unwrap().max_abs_diff(&diff) < 1e-12);
            let mid = x0.zip_map(&x1, |a, b| (a + b) / 2.0).unwrap();
            assert!(fm_interpolate(&x0, &x1, 0.5, 0.0).unwrap().max_abs_diff(&mid) < 1e-12);
            // ψ_t moves with constant velocity d_ψ
            let v = fm_target_velocity(&x0, &x1, s).unwrap();
            let psi = fm_interpolate(&x0, &x1, t, s).unwrap();
            let from_start = x0.zip_map(&v, |a, b| a + t * b).unwrap();
            assert!(psi.max_abs_diff(&from_start) < 1e-12);
        }
        assert!(fm_target_velocity(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 2]), 0.0).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            fm_interpolate(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 3]), 0.5, 0.0),
            Err(FlowError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn loss_with_mock_fields() {
        let mut r = rng(2);
        let x0 = standard_normal(&[4, 3], &mut r);
        let x1 = standard_normal(&[4, 3], &mut r);
        let v = fm_target_velocity(&x0, &x1, SIGMA_MIN).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(x1.clone());
        let l = fm_loss_at(&mut tape, &Target(v), x, &x0, 0.3, SIGMA_MIN).unwrap();
        assert!(tape.value(l).item().abs() < 1e-24);

        let mut tape = Tape::new();
        let x = tape.leaf(x1.clone());
        let l = fm_loss_at(&mut tape, &Constant(0.0), x, &x0, 0.8, 0.0).unwrap();
        let want = x1.zip_map(&x0, |a, b| (a - b) * (a - b)).unwrap().data().iter().sum::<f64>() / 12.0;
        assert!((tape.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn generation_with_mock_fields() {
        let x0 = standard_normal(&[3, 2], &mut rng(3));
        let out = fm_generate(&Constant(0.7), 3, 2, 100, &mut rng(3)).unwrap();
        assert!(out.max_abs_diff(&x0.map(|v| v + 0.7)) < 1e-12);
        let out = fm_generate(&Linear1, 3, 2, 100, &mut rng(3)).unwrap();
        let e = std::f64::consts::E;
        assert!(out.max_abs_diff(&x0.map(|v| v * e)) < 1e-5 * x0.norm().max(1.0));
        let back = integrate(&Linear1, &out, 1.0, 0.0, 100).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-4);
    }

    #[test]
    fn generation_is_deterministic() {
        let field = FlowField::new(4, &mut rng(4));
        let a = fm_generate(&field, 5, 4, 20, &mut rng(5)).unwrap();
        assert_eq!(a, fm_generate(&field, 5, 4, 20, &mut rng(5)).unwrap());
        assert_eq!(a.shape(), &[5, 4]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng(6);
        let field = FlowField::new(3, &mut r);
        let x0 = standard_normal(&[3, 3], &mut r);
        let x1 = standard_normal(&[3, 3], &mut r);
        let ids: Vec<_> = field.store.ids().collect();
        let mut inputs: Vec<Tensor> = field.store.values().to_vec();
        inputs.push(x1);
        let check = check_gradients(
            |tape, vars| {
                for (id, v) in ids.iter().zip(vars) {
                    tape.bind(&field.store, *id, *v);
                }
                fm_loss_at(tape, &field, *vars.last().unwrap(), &x0, 0.37, SIGMA_MIN)
                    .map_err(|e| crate::diffcore::DiffError::Io(e.to_string()))
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(check.relative_error < 1e-4, "{}", check.relative_error);
    }
}
