//! Analytic backpropagation against central finite differences, block by
//! block, for plain and task-masked cross-entropy.

use trire::model::{task_logit_mask, Architecture, MlpNet, ParamVector};
use trire::numeric::{gradcheck::FD_STEP, gradient_check, softmax_ce, Matrix, Rng};

fn main() -> trire::Result<()> {
    let mut rng = Rng::new(11);
    let net = MlpNet::new(Architecture::new(6, vec![8, 5], 4), &mut rng);
    let x = Matrix::from_vec(5, 6, (0..30).map(|_| rng.uniform()).collect())?;
    let y = vec![0, 1, 1, 0, 1];
    let classes = task_logit_mask(&[0, 1], 4);

    for (name, mask) in [("full softmax", None), ("task-masked", Some(classes.as_slice()))] {
        let (logits, trace) = net.forward(&x, None, None)?;
        let (_, g) = softmax_ce(&logits, &y, mask)?;
        let analytic = net.backward(&trace, &g)?;
        let report = gradient_check(net.params(), &analytic.0, &net.layout().blocks(), FD_STEP, |p| {
            let probe = MlpNet::from_params(net.architecture().clone(), ParamVector(p.to_vec())).unwrap();
            softmax_ce(&probe.logits(&x).unwrap(), &y, mask).unwrap().0
        });
        println!("{name}: worst relative error {:.2e}", report.max_rel_err());
        for b in &report.blocks {
            println!("  {:<10} {:.2e}", b.name, b.max_rel_err);
        }
    }
    Ok(())
}
