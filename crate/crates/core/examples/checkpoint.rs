//! Saves a trained model (working and EMA parameters, cumulative mask,
//! rehearsal buffer) to the binary checkpoint format, reads it back and
//! checks that the restored EMA model predicts identically.

use trire::data::synthetic_blobs;
use trire::eval::{evaluate, Protocol};
use trire::model::checkpoint::Checkpoint;
use trire::model::MlpNet;
use trire::trainer::{run_method, Method, TriREConfig};

fn main() -> trire::Result<()> {
    let stream = synthetic_blobs(2, 2, 8, 40, 3.0, 2)?;
    let config = TriREConfig {
        lr: 0.002,
        lr_revise: 0.0002,
        batch_size: 16,
        buffer_capacity: 20,
        ..Default::default()
    };
    let out = run_method(Method::Trire, &stream, &[16], &config)?;

    let ck = Checkpoint {
        ema: Some(out.ema.net().snapshot()),
        mask: Some(out.state.cumulative.clone()),
        buffer: Some(out.buffer.clone()),
        ..Checkpoint::of(&out.net)
    };
    let path = std::env::temp_dir().join("trire-example.ckpt");
    ck.save(&path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("wrote {} ({bytes} bytes)", path.display());

    let back = Checkpoint::load(&path)?;
    let ema = MlpNet::from_params(back.arch.clone(), back.ema.expect("EMA section"))?;
    let before = evaluate(out.ema.net(), &stream, Protocol::ClassIl)?;
    let after = evaluate(&ema, &stream, Protocol::ClassIl)?;
    println!("class-il before {before:.3?} after {after:.3?}");
    assert_eq!(before, after);
    let buffer = back.buffer.expect("buffer section");
    println!("buffer: {} of {} slots, mask density {:.3}", buffer.len(), buffer.capacity(), back.mask.unwrap().density());
    Ok(())
}
