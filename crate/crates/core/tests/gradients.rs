use c2a_core::gradsuite::run_gradient_suite;

#[test]
fn every_component_and_loss_matches_finite_differences_over_20_seeds() {
    let mut worst = (String::new(), 0.0f64);
    for seed in 0..20 {
        for e in run_gradient_suite(seed, None).unwrap() {
            assert!(
                e.max_rel_error < 1e-4,
                "seed {seed}: {} at {:.3e}",
                e.name,
                e.max_rel_error
            );
            if e.max_rel_error > worst.1 {
                worst = (e.name, e.max_rel_error);
            }
        }
    }
    eprintln!("worst: {} {:.3e}", worst.0, worst.1);
}
