//! Central finite-difference checks of tape gradients in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Activation, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Builds a scalar graph on `tape` from parameters registered as `vars`.
pub type Graph = dyn for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var> + Sync;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate(params: &[Tensor<f64>], graph: &Graph, want_grads: bool) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
    let root = graph(&mut tape, &vars)?;
    let grads = if want_grads { tape.backward(root)?.params } else { Vec::new() };
    Ok((tape.value(root).data[0], grads))
}

/// Largest relative error over every entry of every parameter.
pub fn max_gradient_error(params: &[Tensor<f64>], graph: &Graph, h: f64) -> Result<f64> {
    let (_, analytic) = evaluate(params, graph, true)?;
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (k, p) in params.iter().enumerate() {
        let zeros = vec![0.0; p.len()];
        let a = analytic.get(k).and_then(|g| g.as_ref()).unwrap_or(&zeros);
        for i in 0..p.len() {
            let x = p.data[i];
            work[k].data[i] = x + h;
            let up = evaluate(&work, graph, false)?.0;
            work[k].data[i] = x - h;
            let down = evaluate(&work, graph, false)?.0;
            work[k].data[i] = x;
            worst = worst.max(relative_error(a[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        grad: None,
    }
}

/// Values with magnitude in `[0.05, 2)` and alternating sign, so no entry
/// sits within a step of the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let mut t = random(rng, &[n], 0.05, 2.0);
    t.data.iter_mut().step_by(2).for_each(|v| *v = -*v);
    t
}

/// One named check: parameters and the graph over them.
pub struct Case {
    pub name: &'static str,
    pub params: Vec<Tensor<f64>>,
    pub graph: Box<Graph>,
}

/// One case per layer type and loss, plus a conv → ReLU → linear →
/// sigmoid → BCE toy network.
pub fn layer_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();

    cases.push(Case {
        name: "conv2d",
        params: vec![
            random(&mut rng, &[2, 6, 6], -1.0, 1.0),
            random(&mut rng, &[3, 2, 4, 4], -0.5, 0.5),
            random(&mut rng, &[3], -0.5, 0.5),
        ],
        graph: Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
            Ok(t.sum_squares(y))
        }),
    });
    cases.push(Case {
        name: "linear",
        params: vec![
            random(&mut rng, &[2, 3, 2], -1.0, 1.0),
            random(&mut rng, &[5, 12], -0.5, 0.5),
            random(&mut rng, &[5], -0.5, 0.5),
        ],
        graph: Box::new(|t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            Ok(t.sum_squares(y))
        }),
    });
    cases.push(Case {
        name: "conv_transpose3d",
        params: vec![
            random(&mut rng, &[2, 2, 2, 2], -1.0, 1.0),
            random(&mut rng, &[2, 3, 4, 4, 4], -0.5, 0.5),
            random(&mut rng, &[3], -0.5, 0.5),
        ],
        graph: Box::new(|t, v| {
            let y = t.conv_transpose3d(v[0], v[1], v[2], 2, 1)?;
            Ok(t.sum_squares(y))
        }),
    });
    cases.push(Case {
        name: "pointwise3d",
        params: vec![
            random(&mut rng, &[3, 2, 2, 2], -1.0, 1.0),
            random(&mut rng, &[2, 3], -0.5, 0.5),
            random(&mut rng, &[2], -0.5, 0.5),
        ],
        graph: Box::new(|t, v| {
            let y = t.pointwise3d(v[0], v[1], v[2])?;
            Ok(t.sum_squares(y))
        }),
    });
    for (name, kind) in [("sigmoid", Activation::Sigmoid), ("relu", Activation::Relu)] {
        cases.push(Case {
            name,
            params: vec![off_kink(&mut rng, 20)],
            graph: Box::new(move |t, v| {
                let y = t.activation(v[0], kind);
                Ok(t.sum_squares(y))
            }),
        });
    }
    // Binary targets keep every gradient entry well away from zero.
    let pred = random(&mut rng, &[4, 4, 4], 0.2, 0.8);
    let truth = Tensor {
        shape: vec![4, 4, 4],
        data: (0..64).map(|_| rng.random_range(0..2) as f64).collect(),
        grad: None,
    };
    for (name, bce) in [("loss_l2", false), ("loss_bce", true)] {
        let truth = truth.clone();
        cases.push(Case {
            name,
            params: vec![pred.clone()],
            graph: Box::new(move |t, v| {
                let y = t.constant(truth.clone());
                if bce {
                    t.loss_bce(v[0], y)
                } else {
                    t.loss_l2(v[0], y)
                }
            }),
        });
    }
    let image = random(&mut rng, &[1, 8, 8], 0.0, 1.0);
    let target = random(&mut rng, &[6], 0.0, 1.0);
    cases.push(Case {
        name: "toy_network",
        params: vec![
            random(&mut rng, &[2, 1, 4, 4], -0.5, 0.5),
            random(&mut rng, &[2], -0.1, 0.1),
            random(&mut rng, &[6, 32], -0.5, 0.5),
            random(&mut rng, &[6], -0.1, 0.1),
        ],
        graph: Box::new(move |t, v| {
            let x = t.constant(image.clone());
            let h = t.conv2d(x, v[0], v[1], 2, 1)?;
            let h = t.activation(h, Activation::Relu);
            let y = t.linear(h, v[2], v[3])?;
            let y = t.activation(y, Activation::Sigmoid);
            let truth = t.constant(target.clone());
            t.loss_bce(y, truth)
        }),
    });
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor {
            shape: vec![1],
            data: vec![1.5],
            grad: None,
        };
        let graph: Box<Graph> = Box::new(|t, v| Ok(t.sum_squares(v[0])));
        assert!(max_gradient_error(&[x], graph.as_ref(), 1e-3).unwrap() < 1e-8);
    }
}
