use std::sync::Arc;

use geotomo::domain::DomainSpec;
use geotomo::geodesic::Flow;
use geotomo::metric::{ConstantCurvature, Euclidean};
use geotomo::simplicity::{check_simple, SimplicityOptions};

#[test]
fn euclidean_disk_is_simple() {
    let flow = Flow::new(Arc::new(Euclidean { n: 2 }), DomainSpec::disk(1.0));
    let r = check_simple(&flow, &SimplicityOptions::default()).unwrap();
    assert_eq!(r.verdict, "simple");
    assert!((r.min_convexity - 1.0).abs() < 1e-6);
}

#[test]
fn hyperbolic_disk_is_simple() {
    let flow = Flow::new(
        Arc::new(ConstantCurvature::poincare(2)),
        DomainSpec::disk(0.5),
    );
    let r = check_simple(&flow, &SimplicityOptions::default()).unwrap();
    assert_eq!(r.verdict, "simple", "{r:?}");
    assert!(r.min_convexity > 0.0);
    assert!(!r.conjugate_found && !r.fold_detected);
}

#[test]
fn large_spherical_cap_is_not_simple() {
    // g-radius 2 about the pole in stereographic coordinates
    let flow = Flow::new(
        Arc::new(ConstantCurvature::sphere(2)),
        DomainSpec::disk(1.0f64.tan()),
    );
    let r = check_simple(&flow, &SimplicityOptions::default()).unwrap();
    assert_eq!(r.verdict, "non-simple");
    assert!(r.conjugate_found);
    let t = r.first_conjugate.unwrap();
    assert!((t - std::f64::consts::PI).abs() < 1e-3, "{t}");
}
