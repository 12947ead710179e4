use reid_degrade::degrade::PIPELINE_SIDE;
use reid_degrade_web::{negative_curve, preview, render_identity, sample_kernel, to_rgba};

#[test]
fn kernel_sampling_honours_overrides() {
    let (label, k) = sample_kernel("gaussian", 3, "side=9, sigma_x=1.2").unwrap();
    assert_eq!(k.side(), 9);
    assert!(label.starts_with("gaussian side=9 sigma_x=1.2"), "{label}");
    assert!((k.sum() - 1.0).abs() < 1e-9);
    assert!(sample_kernel("gaussian", 3, "side=nine").is_err());
    assert!(sample_kernel("plaid", 3, "").is_err());
}

#[test]
fn preview_is_deterministic_and_rgba_sized() {
    let (clean, out, trace) = preview("diverse-plus", 4, 11).unwrap();
    assert_eq!((clean.height(), out.height()), (PIPELINE_SIDE, PIPELINE_SIDE));
    assert_eq!(to_rgba(&out).len(), PIPELINE_SIDE * PIPELINE_SIDE * 4);
    let (_, again, trace2) = preview("diverse-plus", 4, 11).unwrap();
    assert_eq!(out, again);
    assert_eq!(trace, trace2);
    assert_eq!(trace.replay(&clean).unwrap(), out);
    assert_ne!(render_identity(4, 1), render_identity(5, 1));
    assert!(preview("sepia", 4, 11).is_err());
}

#[test]
fn curve_keeps_easy_negatives_and_modulates_hard_ones() {
    let (target, xs, ys) = negative_curve(0.5, 0.5, 0.3, 101);
    assert_eq!(xs.len(), 101);
    assert_eq!((xs[0], xs[100]), (-1.0, 1.0));
    let want = 0.5 * 0.5f64.cos() - 0.75f64.sqrt() * 0.5f64.sin();
    assert!((target - want).abs() < 1e-12);
    for (x, y) in xs.iter().zip(&ys) {
        let expected = if *x <= target { *x } else { x * (0.3 + x) };
        assert!((y - expected).abs() < 1e-12, "{x}: {y} vs {expected}");
    }
}
