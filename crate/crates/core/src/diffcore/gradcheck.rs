//! Central finite-difference gradient checking.
//!
//! The oracle only ever runs the forward pass; it shares no code with
//! [`Tape::backward`].

use super::{DiffError, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all inputs.
    pub relative_error: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences of step `h`.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheck, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |vals: &[Tensor]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        numeric.push(g);
    }

    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.iter().zip(&numeric) {
        for (x, y) in a.data().iter().zip(n.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    let denom = na.sqrt().max(nn.sqrt()).max(1e-8);
    Ok(GradCheck {
        relative_error: diff.sqrt() / denom,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::SegmentReduce;

    const TOL: f64 = 1e-4;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect())
    }

    /// Runs `f` at 10 random points drawn by `gen` and asserts the check passes.
    fn ten_points<F, G>(name: &str, gen: G, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
        G: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31 + 7);
        for _ in 0..10 {
            let inputs = gen(&mut rng);
            let r = check_gradients(&f, &inputs, 1e-5).unwrap();
            assert!(r.relative_error < TOL, "{name}: {}", r.relative_error);
        }
    }

    /// Weighted sum so every output entry gets a distinct upstream gradient.
    fn weigh(t: &mut Tape, v: Var) -> Result<Var, DiffError> {
        let shape = t.shape(v).to_vec();
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
        let w = t.leaf(w);
        let p = t.mul(v, w)?;
        Ok(t.sum(p))
    }

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn relu_dead_unit() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(-2.0));
        let y = t.relu(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 0.0);
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_matrix(&mut rng, 4, 3);
        let b = rand_matrix(&mut rng, 3, 2);
        let r = check_gradients(
            |t, v| {
                let m = t.matmul(v[0], v[1])?;
                weigh(t, m)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(r.relative_error < 1e-6, "{}", r.relative_error);
    }

    #[test]
    fn loss_must_be_scalar_and_attached() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(DiffError::LossNotScalar(_))));
        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(t.backward(y), Err(DiffError::DetachedLoss)));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let a = t.scale(x, 3.0);
        let b = t.square(x);
        let s = t.add(a, b).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).item(), 7.0);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_matrix(&mut rng, 5, 4);
        let run = |a: &Tensor| {
            let mut t = Tape::new();
            let x = t.leaf(a.clone());
            let y = t.sigmoid(x);
            let s = t.segment(y, Rc::from(vec![0, 1, 0, 2, 1]), 3, SegmentReduce::Std).unwrap();
            let l = t.sum(s);
            t.backward(l).unwrap().wrt(x)
        };
        let (g1, g2) = (run(&a), run(&a));
        assert!(g1.data().iter().zip(g2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn elementwise_primitives() {
        let two = |rng: &mut ChaCha8Rng| vec![rand_matrix(rng, 3, 4), rand_matrix(rng, 3, 4)];
        ten_points("add", two, |t, v| {
            let y = t.add(v[0], v[1])?;
            weigh(t, y)
        });
        ten_points("mul", two, |t, v| {
            let y = t.mul(v[0], v[1])?;
            weigh(t, y)
        });
        ten_points("sub", two, |t, v| {
            let y = t.sub(v[0], v[1])?;
            weigh(t, y)
        });
        let one = |rng: &mut ChaCha8Rng| vec![rand_matrix(rng, 3, 4)];
        ten_points("sigmoid", one, |t, v| {
            let y = t.sigmoid(v[0]);
            weigh(t, y)
        });
        ten_points("exp", one, |t, v| {
            let y = t.exp(v[0]);
            weigh(t, y)
        });
        ten_points("square", one, |t, v| {
            let y = t.square(v[0]);
            weigh(t, y)
        });
        let positive = |rng: &mut ChaCha8Rng| vec![rand_matrix(rng, 3, 4).map(|x| x.abs() + 0.2)];
        ten_points("log", positive, |t, v| {
            let y = t.log(v[0]);
            weigh(t, y)
        });
        ten_points("sqrt", positive, |t, v| {
            let y = t.sqrt(v[0]);
            weigh(t, y)
        });
        // keep inputs away from the kink
        let away = |rng: &mut ChaCha8Rng| vec![rand_matrix(rng, 3, 4).map(|x| if x.abs() < 0.05 { 0.3 } else { x })];
        ten_points("relu", away, |t, v| {
            let y = t.relu(v[0]);
            weigh(t, y)
        });
    }

    #[test]
    fn structural_primitives() {
        ten_points(
            "matmul",
            |rng| vec![rand_matrix(rng, 4, 3), rand_matrix(rng, 3, 2)],
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weigh(t, y)
            },
        );
        ten_points(
            "add_row",
            |rng| vec![rand_matrix(rng, 4, 3), rand_matrix(rng, 1, 3).reshape(&[3]).unwrap()],
            |t, v| {
                let y = t.add_row(v[0], v[1])?;
                weigh(t, y)
            },
        );
        ten_points(
            "mul_col",
            |rng| vec![rand_matrix(rng, 4, 3), rand_matrix(rng, 4, 1)],
            |t, v| {
                let y = t.mul_col(v[0], v[1])?;
                weigh(t, y)
            },
        );
        ten_points(
            "concat",
            |rng| vec![rand_matrix(rng, 3, 2), rand_matrix(rng, 3, 4)],
            |t, v| {
                let y = t.concat_cols(&[v[0], v[1]])?;
                let z = t.concat_rows(&[y, y])?;
                weigh(t, z)
            },
        );
        ten_points(
            "slice_gather",
            |rng| vec![rand_matrix(rng, 4, 5)],
            |t, v| {
                let s = t.slice_cols(v[0], 1, 4)?;
                let g = t.gather_rows(s, Rc::from(vec![3, 0, 0, 2]))?;
                weigh(t, g)
            },
        );
        ten_points(
            "row_sum_mean_broadcast",
            |rng| vec![rand_matrix(rng, 4, 3)],
            |t, v| {
                let a = t.row_sum(v[0]);
                let b = t.mean_rows_broadcast(v[0]);
                let (wa, wb) = (weigh(t, a)?, weigh(t, b)?);
                t.add(wa, wb)
            },
        );
        ten_points(
            "scale_offset_reshape",
            |rng| vec![rand_matrix(rng, 2, 3)],
            |t, v| {
                let a = t.scale(v[0], -1.7);
                let b = t.offset(a, 0.4);
                let c = t.reshape(b, &[6])?;
                let d = t.mean(c);
                let e = weigh(t, c)?;
                let f = t.add(d, e)?;
                Ok(f)
            },
        );
    }

    #[test]
    fn segment_reductions() {
        let segs: Rc<[usize]> = Rc::from(vec![0, 2, 0, 1, 2, 0]);
        for reduce in [
            SegmentReduce::Sum,
            SegmentReduce::Mean,
            SegmentReduce::Min,
            SegmentReduce::Max,
            SegmentReduce::Std,
        ] {
            let segs = segs.clone();
            ten_points(
                &format!("{reduce:?}"),
                // distinct well-separated values keep min/max away from ties
                |rng| {
                    let mut vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.37).collect();
                    for i in (1..vals.len()).rev() {
                        let j = rng.random_range(0..=i);
                        vals.swap(i, j);
                    }
                    vec![Tensor::matrix(6, 2, vals)]
                },
                move |t, v| {
                    // 4 segments so the last one is empty
                    let s = t.segment(v[0], segs.clone(), 4, reduce)?;
                    weigh(t, s)
                },
            );
        }
    }

    #[test]
    fn losses_and_softmax() {
        ten_points(
            "mse",
            |rng| vec![rand_matrix(rng, 3, 3), rand_matrix(rng, 3, 3)],
            |t, v| t.mse(v[0], v[1]),
        );
        ten_points(
            "softmax",
            |rng| vec![rand_matrix(rng, 3, 4)],
            |t, v| {
                let s = t.softmax_rows(v[0]);
                weigh(t, s)
            },
        );
        ten_points(
            "cross_entropy",
            |rng| vec![rand_matrix(rng, 5, 4)],
            |t, v| t.softmax_cross_entropy(v[0], Rc::from(vec![0, 3, 1, 1, 2])),
        );
        ten_points(
            "dct",
            |rng| vec![rand_matrix(rng, 1, 7).reshape(&[7]).unwrap()],
            |t, v| {
                let d = t.dct(v[0])?;
                let i = t.idct(d)?;
                let s = t.square(i);
                let (a, b) = (weigh(t, d)?, weigh(t, s)?);
                t.add(a, b)
            },
        );
    }

    #[test]
    fn std_zero_variance_gradient_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 1, vec![4.0, 4.0]));
        let s = t.segment(x, Rc::from(vec![0, 0]), 1, SegmentReduce::Std).unwrap();
        let l = t.sum(s);
        let g = t.backward(l).unwrap().wrt(x);
        assert_eq!(t.value(s).item(), 0.0);
        assert_eq!(g.data(), &[0.0, 0.0]);
    }
}
