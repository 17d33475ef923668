//! Subnetwork masks are a neuron mask plus a per-parameter mask over the
//! feature extractor. This builds two by hand and shows how they combine
//! and how they turn into optimizer update sets.

use trire::masks::{NeuronMask, SubnetworkMask};
use trire::model::{Architecture, Layout};

/// Keeps `neurons` of each hidden layer with every incoming weight and bias.
fn keep(layout: &Layout, neurons: &[&[usize]]) -> SubnetworkMask {
    let layers: Vec<Vec<bool>> = layout
        .hidden_layers()
        .iter()
        .zip(neurons)
        .map(|(l, keep)| (0..l.fan_out).map(|j| keep.contains(&j)).collect())
        .collect();
    let mut weights = vec![false; layout.feature_len()];
    for (li, l) in layout.hidden_layers().iter().enumerate() {
        for p in l.range() {
            weights[p] = layers[li][l.output_neuron(p)];
        }
    }
    SubnetworkMask::from_parts(NeuronMask { layers }, weights)
}

fn main() -> trire::Result<()> {
    let layout = Layout::new(&Architecture::new(4, vec![3, 3], 2));
    let a = keep(&layout, &[&[0], &[0, 1]]);
    let b = keep(&layout, &[&[0, 2], &[2]]);

    let show = |name: &str, m: &SubnetworkMask| {
        println!(
            "{name:<8} neurons {:?}  params {:>2}/{}  density {:.3}",
            m.neurons().layers,
            m.retained_count(),
            layout.feature_len(),
            m.density()
        );
    };
    show("a", &a);
    show("b", &b);
    show("a | b", &a.union(&b)?);
    show("a & b", &a.intersect(&b)?);
    show("!a", &a.complement());

    // Update sets cover the whole parameter vector; the classifier head is
    // never masked, so it is always eligible.
    let set = a.update_set(layout.total(), true);
    let head = layout.head().range();
    println!(
        "update set: {} of {} params, head {} of {}",
        set.iter().filter(|&&b| b).count(),
        layout.total(),
        set[head.clone()].iter().filter(|&&b| b).count(),
        head.len()
    );
    Ok(())
}
