use mocse_core::selftest::*;
use mocse_corrupt::Manifest;
use ndgrad::Primitive;

#[test]
fn injected_backward_fault_fails_the_gradient_check_by_name() {
    for p in [Primitive::Conv2d, Primitive::Sign, Primitive::GatherRows] {
        let c = gradients(Some(p));
        assert!(!c.passed);
        assert!(c.detail.contains(&format!("primitive {p}")), "{}", c.detail);
    }
}

#[test]
fn metric_oracles_pass() {
    let c = metric_oracles(200);
    assert!(c.passed, "{c}");
}

#[test]
fn attack_feasibility_passes_a_short_run() {
    let c = attack_feasibility(100);
    assert!(c.passed, "{c}");
}

#[test]
fn corruption_suite_passes_a_short_run() {
    let c = corruption_suite(3, Manifest::builtin());
    assert!(c.passed, "{c}");
}

#[test]
fn corrupted_manifest_is_caught() {
    // Reversed severity order breaks the monotone-deviation property.
    let text = Manifest::builtin_text().replace("s1 = 0.04", "s1 = 0.50");
    let m = Manifest::parse(&text).unwrap();
    let c = corruption_suite(2, &m);
    assert!(!c.passed);
    assert!(c.detail.starts_with("gaussian_noise"), "{}", c.detail);
}

#[test]
fn scenes_are_seeded() {
    assert_eq!(random_scene(4), random_scene(4));
    assert_ne!(random_scene(4), random_scene(5));
}
