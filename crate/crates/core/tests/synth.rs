use c2a_core::synth::{generate_world, split_indices, DomainDataset, WorldSpec};
use c2a_core::IGNORE;
use proptest::prelude::*;

fn add_counts(counts: &mut [u64], data: &DomainDataset) {
    for &l in data.labels.data() {
        if l != IGNORE {
            counts[l as usize] += 1;
        }
    }
}

#[test]
fn class_pixel_frequencies_are_near_uniform_over_ten_seeds() {
    let spec = WorldSpec::default();
    assert_eq!((spec.source_classes.len(), spec.target_classes.len()), (4, 3));
    let mut source = vec![0u64; 4];
    let mut target = vec![0u64; 3];
    for seed in 0..10 {
        let w = generate_world(&spec, seed).unwrap();
        add_counts(&mut source, &w.source);
        add_counts(&mut source, &w.bridge);
        for d in [
            w.target_labeled.as_ref(),
            w.target_unlabeled.as_ref(),
            Some(&w.target_val),
        ]
        .into_iter()
        .flatten()
        {
            add_counts(&mut target, d);
        }
    }
    for counts in [&source, &target] {
        let total: u64 = counts.iter().sum();
        let uniform = total as f64 / counts.len() as f64;
        for (c, &n) in counts.iter().enumerate() {
            let rel = (n as f64 - uniform).abs() / uniform;
            assert!(
                rel < 0.2,
                "class {c}: {n} pixels vs uniform {uniform:.0} ({:.1}% off)",
                100.0 * rel
            );
        }
    }
}

#[test]
fn default_split_gives_four_labeled_target_images() {
    let w = generate_world(&WorldSpec::default(), 0).unwrap();
    assert_eq!(w.target_labeled.as_ref().unwrap().len(), 4);
    assert_eq!(w.target_unlabeled.as_ref().unwrap().len(), 96);
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 0usize..300, sigma in 0.0f64..=1.0, seed in any::<u64>()) {
        let (l, u) = split_indices(n, sigma, seed).unwrap();
        prop_assert_eq!(l.len(), (sigma * n as f64).round() as usize);
        let mut all: Vec<usize> = l.iter().chain(&u).cloned().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
