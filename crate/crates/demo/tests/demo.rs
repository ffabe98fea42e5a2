use modhealth_demo::{gaussian_mi, module_curves, sinc_fit};

#[test]
fn module_curves_carry_labels_and_two_ic_peaks() {
    let r = module_curves(&[0.992, 0.806, 0.785], 0.5).unwrap();
    assert!((r.labels.m_soh - 0.861).abs() < 1e-12);
    assert_eq!(r.ic.x.len(), r.ic.y.len());
    assert!(r.features.contains_key("IC PL 1") && r.features.contains_key("IC PL 2"));
    assert!(serde_json::to_string(&r).unwrap().contains("\"dv\""));
}

#[test]
fn bad_soh_is_an_error() {
    assert!(module_curves(&[1.2, 0.9], 0.5).is_err());
}

#[test]
fn gaussian_mi_tracks_the_closed_form() {
    let r = gaussian_mi(0.6, 1000, 3).unwrap();
    assert!(
        (r.estimate - r.analytic).abs() < 0.06,
        "{} vs {}",
        r.estimate,
        r.analytic
    );
    assert!((0.0..=1.0).contains(&r.normalized));
}

#[test]
fn sinc_fit_is_sparse_and_accurate() {
    let r = sinc_fit(100, 0.1, 0.5, 1).unwrap();
    assert!(r.rmse < 0.15 && r.relevance_x.len() <= 20);
    assert!(r.lower.iter().zip(&r.upper).all(|(l, u)| l < u));
}
