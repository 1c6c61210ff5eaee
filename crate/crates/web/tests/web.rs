use volseg_web::{run_segmentation, run_transport};

#[test]
fn circle_with_volume_segments_well() {
    let s = run_segmentation("circle", 64, 0.01, 1, 65.0, 0.05, 0.05).unwrap();
    assert_eq!((s.width(), s.height()), (64, 64));
    for buf in [s.image_rgba(), s.labels_rgba(), s.soft_rgba()] {
        assert_eq!(buf.len(), 64 * 64 * 4);
        assert!(buf.chunks(4).all(|px| px[3] == 255));
    }
    assert!(s.dice() > 0.95, "{}", s.dice());
    assert!((s.foreground_fraction() - 0.65).abs() < 0.01);
}

#[test]
fn volume_off_and_smoothness() {
    let sharp = run_segmentation("blob", 48, 0.01, 2, 0.0, 0.01, 0.05).unwrap();
    let smooth = run_segmentation("blob", 48, 0.01, 2, 0.0, 0.2, 0.05).unwrap();
    assert!(sharp.mean_max_probability() > smooth.mean_max_probability());
}

#[test]
fn bad_inputs_are_reported() {
    assert!(run_segmentation("three-level", 32, 0.0, 0, 50.0, 0.1, 0.1).is_err());
    assert!(run_segmentation("square", 32, 0.0, 0, 50.0, 0.1, 0.1).is_err());
    assert!(run_segmentation("circle", 32, 0.0, 0, 100.0, 0.1, 0.1).is_err());
    assert!(run_segmentation("circle", 32, 0.0, 0, 50.0, 0.0, 0.1).is_err());
    assert!(run_transport(-1.0).is_err());
}

#[test]
fn transport_spreads_with_eps() {
    let lo = run_transport(1.0).unwrap();
    let hi = run_transport(10.0).unwrap();
    assert_eq!(lo.coupling().len(), 30);
    assert!(lo.residual() <= 1e-6);
    assert!(hi.entropy() > lo.entropy());
    assert!(lo.cost() >= lo.exact_cost() - 1e-9);
    let rows: Vec<f64> = lo.coupling().chunks(10).map(|r| r.iter().sum()).collect();
    for (r, a) in rows.iter().zip([2.0, 5.0, 3.0]) {
        assert!((r - a).abs() < 1e-5);
    }
}
