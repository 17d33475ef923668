//! Random small nets and the loss paths checked against finite differences.

use trire::ema::consistency_loss;
use trire::model::{task_logit_mask, Architecture, MlpNet, ParamVector};
use trire::numeric::gradcheck::FD_STEP;
use trire::numeric::{gradient_check, softmax_ce, Matrix, Rng};

pub const TOL: f64 = 1e-4;

pub struct Case {
    pub net: MlpNet,
    pub x: Matrix,
    pub y: Vec<usize>,
    pub target: Matrix,
    pub task_mask: Vec<bool>,
}

/// Random architecture under 5k parameters with inputs far from ReLU kinks.
pub fn case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    loop {
        let input = 3 + rng.below(8);
        let depth = 1 + rng.below(2);
        let hidden: Vec<usize> = (0..depth).map(|_| 3 + rng.below(10)).collect();
        let classes = 4 + rng.below(7);
        let arch = Architecture::new(input, hidden, classes);
        let net = MlpNet::new(arch, &mut rng);
        assert!(net.params().len() <= 5000);
        let batch = 4 + rng.below(4);
        let x = Matrix::from_vec(batch, input, (0..batch * input).map(|_| rng.uniform()).collect()).unwrap();
        if net.min_abs_preactivation(&x).unwrap() < 50.0 * FD_STEP {
            continue;
        }
        let y: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();
        let target = Matrix::from_vec(batch, classes, (0..batch * classes).map(|_| rng.normal()).collect()).unwrap();
        // Random class subset that still contains every label in the batch.
        let mut task: Vec<usize> = (0..classes).filter(|_| rng.bernoulli(0.5)).collect();
        task.extend(&y);
        let task_mask = task_logit_mask(&task, classes);
        return Case {
            net,
            x,
            y,
            target,
            task_mask,
        };
    }
}

fn with_params(net: &MlpNet, p: &[f64]) -> MlpNet {
    MlpNet::from_params(net.architecture().clone(), ParamVector(p.to_vec())).unwrap()
}

/// Objective evaluated by both paths: `a * CE(mask) + b * consistency`.
fn objective(c: &Case, p: &[f64], mask: Option<&[bool]>, a: f64, b: f64) -> f64 {
    let logits = with_params(&c.net, p).logits(&c.x).unwrap();
    let mut v = 0.0;
    if a != 0.0 {
        v += a * softmax_ce(&logits, &c.y, mask).unwrap().0;
    }
    if b != 0.0 {
        v += b * consistency_loss(&logits, &c.target).unwrap().unwrap().0;
    }
    v
}

fn analytic(c: &Case, mask: Option<&[bool]>, a: f64, b: f64) -> Vec<f64> {
    let (logits, trace) = c.net.forward(&c.x, None, None).unwrap();
    let mut g = Matrix::zeros(logits.rows(), logits.cols());
    if a != 0.0 {
        let (_, gc) = softmax_ce(&logits, &c.y, mask).unwrap();
        for (s, v) in g.as_mut_slice().iter_mut().zip(gc.as_slice()) {
            *s += a * v;
        }
    }
    if b != 0.0 {
        let (_, gk) = consistency_loss(&logits, &c.target).unwrap().unwrap();
        for (s, v) in g.as_mut_slice().iter_mut().zip(gk.as_slice()) {
            *s += b * v;
        }
    }
    c.net.backward(&trace, &g).unwrap().0
}

pub fn check(c: &Case, mask: Option<&[bool]>, a: f64, b: f64) -> f64 {
    let grad = analytic(c, mask, a, b);
    let report = gradient_check(c.net.params(), &grad, &c.net.layout().blocks(), FD_STEP, |p| {
        objective(c, p, mask, a, b)
    });
    report.max_rel_err()
}

/// Worst relative error of each loss path on one net: plain CE, task-masked
/// CE, consistency, and a weighted sum of CE and consistency.
pub fn all_paths(c: &Case) -> [f64; 4] {
    [
        check(c, None, 1.0, 0.0),
        check(c, Some(&c.task_mask), 1.0, 0.0),
        check(c, None, 0.0, 1.0),
        check(c, None, 0.7, 0.3),
    ]
}
