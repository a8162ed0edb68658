mod common;

use common::{cnn5_case, layer_cases, GRAD_TOL};
use msinet::grad_check;

#[test]
fn every_layer_type_passes_in_isolation() {
    let mut failures = Vec::new();
    for mut c in layer_cases() {
        let r = grad_check(&mut c.model, &c.input, &c.loss, GRAD_TOL, usize::MAX, 1).unwrap();
        assert!(r.entries.iter().all(|e| e.checked > 0), "{}", c.name);
        if !r.passed {
            failures.push(format!("{}: {:?}", c.name, r.failures().collect::<Vec<_>>()));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn cnn5_end_to_end() {
    for (width, seed) in [(0.25, 7), (0.25, 1), (1.0, 0)] {
        let mut c = cnn5_case(width, seed);
        let r = grad_check(&mut c.model, &c.input, &c.loss, GRAD_TOL, msinet::autograd::GRAD_CHECK_SAMPLE, seed).unwrap();
        assert!(r.passed, "width {width} seed {seed}: {:?}", r.failures().collect::<Vec<_>>());
    }
}

#[test]
fn check_leaves_model_untouched() {
    let mut c = cnn5_case(0.25, 3);
    let params: Vec<_> = c.model.params().iter().map(|p| p.value.clone()).collect();
    let buffers: Vec<_> = c.model.buffers().into_iter().map(|(_, t)| t.clone()).collect();
    grad_check(&mut c.model, &c.input, &c.loss, GRAD_TOL, 20, 3).unwrap();
    let after: Vec<_> = c.model.params().iter().map(|p| p.value.clone()).collect();
    let after_buf: Vec<_> = c.model.buffers().into_iter().map(|(_, t)| t.clone()).collect();
    assert_eq!(params, after);
    assert_eq!(buffers, after_buf);
}
