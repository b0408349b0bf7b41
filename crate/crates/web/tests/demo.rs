use frt_reach_web::{compare_1d, di_tube, pendulum_run, PROFILE_COLUMNS, TRAJECTORY_COLUMNS};

#[test]
fn profiles_are_finite_and_ordered_by_x() {
    let rows = compare_1d(5.0, 201).unwrap();
    let xs: Vec<f64> = rows.chunks(PROFILE_COLUMNS).map(|r| r[0]).collect();
    assert!(xs.windows(2).all(|w| w[0] < w[1]));
    assert!(rows.iter().all(|v| v.is_finite()));
}

#[test]
fn sa_tube_grows_past_the_disk() {
    let t = di_tube("Sa", 2.0, 161, 121).unwrap();
    let inside = |f: &[f64]| f.iter().filter(|v| **v > 0.0).count();
    assert!(inside(&t.value()) > inside(&t.target()));
    assert_eq!(t.verdict(), "strict_superset");
}

#[test]
fn filter_changes_the_control_and_rejects_bad_horizons() {
    let reference = pendulum_run(4.0, 0.4, 16.0, false).unwrap();
    let filtered = pendulum_run(4.0, 0.4, 16.0, true).unwrap();
    assert_eq!(reference.len() % TRAJECTORY_COLUMNS, 0);
    assert_ne!(reference, filtered);
    assert!(pendulum_run(4.0, 0.4, 0.0, true).is_err());
    assert!(pendulum_run(4.0, 0.4, f64::NAN, true).is_err());
}
