mod common;

use common::*;
use splatpack_core::distill::*;
use splatpack_core::model::sh_truncate;
use splatpack_core::Error;

fn cams() -> Vec<splatpack_core::Camera> {
    (0..4).map(|i| orbit_camera(90.0 * i as f64, 25.0, 3.0, 24)).collect()
}

#[test]
fn zero_iterations_is_plain_truncation() {
    let teacher = random_cloud(40, 3, 1, 0.7);
    let (student, trace) = distill(&teacher, 1, &cams(), &PseudoViewConfig::default(), 0).unwrap();
    assert_eq!(student, sh_truncate(&teacher, 1).unwrap());
    assert!(trace.losses.is_empty());
}

#[test]
fn truncation_keeps_leading_coefficients() {
    let teacher = random_cloud(10, 3, 2, 0.7);
    let student = sh_truncate(&teacher, 2).unwrap();
    assert_eq!(student.sh_degree(), 2);
    assert_eq!(student.sh_dc, teacher.sh_dc);
    for i in 0..10 {
        assert_eq!(student.rest(i), &teacher.rest(i)[..24]);
    }
}

#[test]
fn fitting_lowers_teacher_loss_and_freezes_geometry() {
    let mut teacher = random_cloud(60, 3, 3, 0.7);
    teacher.sh_rest.iter_mut().for_each(|v| *v *= 4.0);
    let cameras = cams();
    let cfg = PseudoViewConfig {
        seed: 5,
        ..Default::default()
    };
    let truncated = sh_truncate(&teacher, 1).unwrap();
    let (student, trace) = distill(&teacher, 1, &cameras, &cfg, 40).unwrap();
    assert!(trace.losses.windows(2).all(|w| w[1] <= w[0]));
    let before = distill_loss(&teacher, &truncated, &cameras).unwrap();
    let after = distill_loss(&teacher, &student, &cameras).unwrap();
    assert!(after < before, "{before} -> {after}");
    assert_eq!(student.positions, teacher.positions);
    assert_eq!(student.raw_scale, teacher.raw_scale);
    assert_eq!(student.rotation, teacher.rotation);
    assert_eq!(student.sh_degree(), 1);
}

#[test]
fn pseudo_views_are_seeded() {
    let cfg = PseudoViewConfig {
        sigma: 0.1,
        count_per_view: 3,
        seed: 7,
    };
    let a = sample_pseudo_views(&cams(), &cfg).unwrap();
    let b = sample_pseudo_views(&cams(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 12);
    for (p, c) in a.iter().zip(cams().iter().flat_map(|c| std::iter::repeat_n(c, 3))) {
        assert_eq!(p.rotation, c.rotation);
        assert_eq!(p.fx, c.fx);
        assert!((p.translation - c.translation).norm() < 1.0);
    }
}

#[test]
fn rejects_bad_degree_and_missing_views() {
    let teacher = random_cloud(5, 2, 1, 0.5);
    assert!(matches!(
        distill(&teacher, 2, &cams(), &PseudoViewConfig::default(), 5),
        Err(Error::InvalidTruncation { from: 2, to: 2 })
    ));
    assert!(matches!(distill(&teacher, 1, &[], &PseudoViewConfig::default(), 5), Err(Error::NoViews)));
}
