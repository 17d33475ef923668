//! Masked update routing, rewind exactness and phase bookkeeping,
//! observed through the trainer's step hook.

mod common;

use std::cell::RefCell;
use std::rc::Rc;

use common::audit::{audit_routing, rewind_mismatches};
use common::{blobs, small_config};
use trire::model::Architecture;
use trire::trainer::{Method, Phase, Trainer};

#[test]
fn masked_steps_leave_everything_else_bitwise_unchanged() {
    let tally = audit_routing(1000);
    assert!(tally.retain_iterations >= 1000 && tally.steps > 2000);
    assert_eq!(tally.violations, 0);
    assert_eq!(tally.overlap_outside_head, 0);
    assert_eq!(tally.head_excluded, 0);
}

#[test]
fn rewind_restores_exactly_the_free_extractor() {
    for seed in 0..20 {
        assert_eq!(rewind_mismatches(seed), 0, "seed {seed}");
    }
}

#[test]
fn rewind_point_is_captured_once_at_the_configured_epoch() {
    let s = blobs(2, 40, 5);
    let config = small_config(5);
    let k = config.rewind_epoch();
    let arch = Architecture::new(s.feature_len(), vec![8], s.classes);
    let batches = s.tasks[1].train.len().div_ceil(config.batch_size);
    let snaps = Rc::new(RefCell::new(Vec::new()));
    let mut t = Trainer::new(arch, Method::Trire, config).unwrap();
    t.train_task(&s.tasks[0]).unwrap();
    let sn = Rc::clone(&snaps);
    t.observe(move |e| {
        if e.phase == Phase::Retain {
            sn.borrow_mut().push(e.after.to_vec());
        }
    });
    t.retain_phase(&s.tasks[1]).unwrap();
    // Two steps per iteration once the buffer holds task 0.
    let steps = snaps.borrow();
    assert_eq!(steps.len(), 2 * batches * t.config().epochs.retain);
    let at_k = &steps[2 * batches * k - 1];
    assert_eq!(&t.state().checkpoint.as_ref().unwrap().0, at_k);
}

#[test]
fn every_phase_uses_its_rate() {
    let s = blobs(3, 30, 2);
    let config = small_config(2);
    let (lr, lr_rev) = (config.lr, config.lr_revise);
    let arch = Architecture::new(s.feature_len(), vec![8], s.classes);
    let seen = Rc::new(RefCell::new(Vec::new()));
    let sn = Rc::clone(&seen);
    let mut t = Trainer::new(arch, Method::Trire, config).unwrap();
    t.observe(move |e| sn.borrow_mut().push((e.phase, e.lr)));
    for task in &s.tasks {
        t.train_task(task).unwrap();
    }
    let seen = seen.borrow();
    for phase in [Phase::Retain, Phase::Revise, Phase::Rewind] {
        assert!(seen.iter().any(|(p, _)| *p == phase), "{phase:?} never stepped");
    }
    for &(p, r) in seen.iter() {
        let want = if p == Phase::Revise { lr_rev } else { lr };
        assert_eq!(r, want, "{p:?}");
    }
}

#[test]
fn full_runs_are_deterministic() {
    let s = blobs(3, 40, 8);
    let run = || {
        let mut out = trire::trainer::run_method(Method::Trire, &s, &[10], &small_config(8)).unwrap();
        out.record.wall_clock_secs = 0.0;
        (out.record, out.net.snapshot(), out.ema.net().snapshot())
    };
    assert_eq!(run(), run());
}
