//! Step-hook audits shared by the routing tests and the acceptance suite.

use std::cell::RefCell;
use std::rc::Rc;

use super::{blobs, random_mask, small_config};
use trire::model::Architecture;
use trire::numeric::Rng;
use trire::trainer::{Method, Phase, Route, Trainer, TriREConfig};

#[derive(Default, Debug)]
pub struct RoutingTally {
    pub retain_iterations: usize,
    pub steps: usize,
    /// Parameters that changed although the step's update set excluded them.
    pub violations: usize,
    /// Extractor parameters eligible in both steps of one iteration.
    pub overlap_outside_head: usize,
    /// Head parameters missing from either step's update set.
    pub head_excluded: usize,
    last_current: Option<Vec<bool>>,
}

/// Runs Retain and Revise on a second blob task under random cumulative
/// masks until at least `min_retain` two-step Retain iterations were seen.
pub fn audit_routing(min_retain: usize) -> RoutingTally {
    let tally = Rc::new(RefCell::new(RoutingTally::default()));
    let mut seed = 0;
    while tally.borrow().retain_iterations < min_retain {
        let s = blobs(2, 80, seed);
        let arch = Architecture::new(s.feature_len(), vec![12, 10], s.classes);
        let mut t = Trainer::new(arch, Method::Trire, small_config(seed)).unwrap();
        t.train_task(&s.tasks[0]).unwrap();
        // Replace the learned mask by a random one so routing is exercised
        // on arbitrary subsets.
        let mut rng = Rng::new(1000 + seed);
        let layout = t.net().layout().clone();
        let feature_len = layout.feature_len();
        t.state_mut().cumulative = random_mask(&layout, 0.6, 0.5, &mut rng);
        let tl = Rc::clone(&tally);
        t.observe(move |e| {
            let mut tl = tl.borrow_mut();
            tl.steps += 1;
            let mask = e.update_mask.expect("TriRE steps are masked");
            tl.head_excluded += mask[feature_len..].iter().filter(|&&b| !b).count();
            tl.violations += (0..e.before.len())
                .filter(|&i| !mask[i] && e.before[i].to_bits() != e.after[i].to_bits())
                .count();
            match e.route {
                Route::Current => tl.last_current = Some(mask.to_vec()),
                Route::Buffer => {
                    if e.phase == Phase::Retain {
                        tl.retain_iterations += 1;
                    }
                    let cur = tl.last_current.take().expect("buffer step follows a current step");
                    tl.overlap_outside_head += (0..feature_len).filter(|&i| cur[i] && mask[i]).count();
                }
                Route::Combined => panic!("TriRE never takes combined steps"),
            }
        });
        let task = &s.tasks[1];
        t.retain_phase(task).unwrap();
        t.extract(task).unwrap();
        t.revise_phase(task).unwrap();
        seed += 1;
    }
    Rc::try_unwrap(tally).unwrap().into_inner()
}

/// Restores after Retain on task 1 under random `S` and `S_t`; returns the
/// number of parameters whose post-restore value is not the expected one
/// (the rewind point outside `S ∪ S_t`, the pre-restore value elsewhere).
pub fn rewind_mismatches(seed: u64) -> usize {
    let s = blobs(2, 40, seed);
    let arch = Architecture::new(s.feature_len(), vec![9, 7], s.classes);
    // Rewind to the end of Retain epoch 1 of 3.
    let config = TriREConfig {
        rewind_percentile: 0.3,
        ..small_config(seed)
    };
    let mut t = Trainer::new(arch, Method::Trire, config).unwrap();
    t.train_task(&s.tasks[0]).unwrap();
    t.retain_phase(&s.tasks[1]).unwrap();
    let mut rng = Rng::new(seed);
    let layout = t.net().layout().clone();
    t.state_mut().cumulative = random_mask(&layout, 0.5, 0.5, &mut rng);
    t.state_mut().current = Some(random_mask(&layout, 0.5, 0.5, &mut rng));
    let merged = t.state().cumulative.union(t.state().current.as_ref().unwrap()).unwrap();
    let theta_k = t.state().checkpoint.clone().unwrap();
    let pre = t.net().params().to_vec();
    assert!(pre != theta_k.0, "training must have moved past the rewind point");
    t.merge_and_rewind(true).unwrap();
    assert_eq!(&t.state().cumulative, &merged);
    let post = t.net().params();
    (0..post.len())
        .filter(|&i| {
            let expect = if i < layout.feature_len() && !merged.weights()[i] {
                theta_k.0[i]
            } else {
                pre[i]
            };
            post[i].to_bits() != expect.to_bits()
        })
        .count()
}
