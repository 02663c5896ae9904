use super::{DiffError, Tensor};

/// Classical fourth-order Runge–Kutta with `steps` uniform steps from `t0` to
/// `t1`. `t1 < t0` integrates backward.
pub fn ode_integrate<F>(mut field: F, x0: &Tensor, t0: f64, t1: f64, steps: usize) -> Result<Tensor, DiffError>
where
    F: FnMut(f64, &Tensor) -> Result<Tensor, DiffError>,
{
    if steps == 0 {
        return Err(DiffError::EmptyInput("ode_integrate steps"));
    }
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.clone();
    let mut eval = |t: f64, x: &Tensor| -> Result<Tensor, DiffError> {
        let v = field(t, x)?;
        if v.shape() != x.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "ode_integrate",
                left: x.shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        if !v.all_finite() {
            return Err(DiffError::NonFiniteField { t });
        }
        Ok(v)
    };
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let k1 = eval(t, &x)?;
        let mut probe = x.clone();
        probe.add_scaled(&k1, h / 2.0);
        let k2 = eval(t + h / 2.0, &probe)?;
        let mut probe = x.clone();
        probe.add_scaled(&k2, h / 2.0);
        let k3 = eval(t + h / 2.0, &probe)?;
        let mut probe = x.clone();
        probe.add_scaled(&k3, h);
        let k4 = eval(t + h, &probe)?;
        x.add_scaled(&k1, h / 6.0);
        x.add_scaled(&k2, h / 3.0);
        x.add_scaled(&k3, h / 3.0);
        x.add_scaled(&k4, h / 6.0);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(sign: f64) -> impl FnMut(f64, &Tensor) -> Result<Tensor, DiffError> {
        move |_, x| Ok(x.map(|v| sign * v))
    }

    #[test]
    fn zero_field_is_identity() {
        let x0 = Tensor::vector(vec![1.5, -2.0]);
        let x = ode_integrate(|_, x| Ok(Tensor::zeros(x.shape())), &x0, 0.0, 1.0, 10).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn exponential_growth() {
        let x0 = Tensor::vector(vec![2.0]);
        let x = ode_integrate(linear(1.0), &x0, 0.0, 1.0, 100).unwrap();
        let exact = 2.0 * std::f64::consts::E;
        assert!(((x.item() - exact) / exact).abs() < 1e-5);
    }

    #[test]
    fn backward_decay_recovers_start() {
        let x0 = Tensor::vector(vec![0.7]);
        let x1 = ode_integrate(linear(-1.0), &x0, 0.0, 1.0, 100).unwrap();
        let back = ode_integrate(linear(-1.0), &x1, 1.0, 0.0, 100).unwrap();
        assert!(((back.item() - 0.7) / 0.7).abs() < 1e-5);
    }

    #[test]
    fn fourth_order_convergence() {
        let x0 = Tensor::vector(vec![1.0]);
        let err = |steps| {
            let x = ode_integrate(linear(1.0), &x0, 0.0, 1.0, steps).unwrap();
            (x.item() - std::f64::consts::E).abs()
        };
        let ratio = err(10) / err(20);
        assert!(ratio >= 8.0 * 0.8, "ratio {ratio}");
    }

    #[test]
    fn non_finite_field_is_reported() {
        let x0 = Tensor::vector(vec![1.0]);
        let r = ode_integrate(|_, x| Ok(x.map(|_| f64::NAN)), &x0, 0.0, 1.0, 4);
        assert!(matches!(r, Err(DiffError::NonFiniteField { .. })));
    }
}
