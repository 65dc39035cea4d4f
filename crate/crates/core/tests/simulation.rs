use polnav_core::frames::{EarthModel, EulerAngles, GeodeticPosition, Vec3};
use polnav_core::polarimetry::axis_angle;
use polnav_core::sim::{
    gen_truth, matched_measurement_noise, median, nav_error, run_batch, run_scenario, simulate_imu,
    simulate_psns, ImuSpec, Motion, PsnsPath, Scenario, TrajectoryProfile,
};
use polnav_core::sins::{mechanize, NavSolution};

fn turn_profile(duration: f64) -> TrajectoryProfile {
    TrajectoryProfile {
        motion: Motion::CoordinatedTurn {
            speed: 20.0,
            turn_rate: 3f64.to_radians(),
        },
        start: GeodeticPosition::from_degrees(32.0, 118.8, 20.0),
        attitude: EulerAngles::from_degrees(30.0, 0.0, 0.0),
        duration,
    }
}

fn mechanize_ideal(
    profile: &TrajectoryProfile,
    dt: f64,
    earth: &EarthModel,
) -> (NavSolution, NavSolution) {
    let truth = gen_truth(profile, dt, earth);
    let imu = simulate_imu(&truth, &ImuSpec::ideal(), 0);
    let mut nav = truth.nav[0];
    for s in &imu.samples[1..] {
        nav = mechanize(&nav, s, dt, earth);
    }
    (nav, *truth.nav.last().unwrap())
}

#[test]
fn mechanization_converges_under_step_refinement() {
    let earth = EarthModel::WGS84;
    let profile = turn_profile(60.0);
    let (coarse, _) = mechanize_ideal(&profile, 0.01, &earth);
    let (half, _) = mechanize_ideal(&profile, 0.005, &earth);
    let (fine, truth) = mechanize_ideal(&profile, 1e-4, &earth);
    let d_coarse = nav_error(&coarse, &fine, &earth);
    let d_half = nav_error(&half, &fine, &earth);
    assert!(
        d_coarse.position.norm() < 0.1,
        "coarse vs fine {:?}",
        d_coarse.position
    );
    assert!(d_half.position.norm() <= d_coarse.position.norm() * 0.75);
    assert!(nav_error(&fine, &truth, &earth).position.norm() < 0.1);
    assert!(fine.attitude.orthonormality_error() < 1e-12);
}

#[test]
fn constant_gyro_bias_drives_linear_yaw_drift() {
    let earth = EarthModel::WGS84;
    let profile = TrajectoryProfile::stationary(
        GeodeticPosition::from_degrees(32.0, 118.8, 20.0),
        EulerAngles::from_degrees(30.0, 2.0, -1.0),
        60.0,
    );
    let dt = 0.005;
    let truth = gen_truth(&profile, dt, &earth);
    let imu = simulate_imu(&truth, &ImuSpec::ideal(), 0);
    let bias = Vec3::new(3e-5, -2e-5, 1e-4);
    let up_rate = truth.nav[0].attitude.rotate(&bias).z;
    let mut nav = truth.nav[0];
    for (k, s) in imu.samples.iter().enumerate().skip(1) {
        let mut biased = *s;
        biased.gyro += bias;
        nav = mechanize(&nav, &biased, dt, &earth);
        if k % 2000 == 0 {
            let t = k as f64 * dt;
            // clockwise yaw falls as the body turns counter-clockwise about up
            let yaw = nav_error(&nav, &truth.nav[k], &earth).yaw;
            let expected = -up_rate * t;
            assert!(
                (yaw - expected).abs() < 0.02 * expected.abs(),
                "t {t}: yaw error {yaw} expected {expected}"
            );
        }
    }
}

fn scaled(sc: &Scenario, k: f64) -> Scenario {
    let mut s = sc.clone();
    s.imu = sc.imu.scaled(k);
    s.gnss = sc.gnss.scaled(k);
    s.psns.angular_sigma *= k;
    s.process_noise = s.imu.process_noise();
    s.measurement_noise = matched_measurement_noise(&s.gnss, &s.psns);
    s
}

#[test]
fn doubling_noise_does_not_help() {
    let base = Scenario::default_stationary();
    let a = run_batch(&base, 0, 30).unwrap();
    let b = run_batch(&scaled(&base, 2.0), 0, 30).unwrap();
    let med = |rows: &[polnav_core::sim::BatchRow], f: fn(&polnav_core::sim::BatchRow) -> f64| {
        median(&rows.iter().map(f).collect::<Vec<_>>())
    };
    assert!(med(&b, |r| r.fused_horizontal_m) >= med(&a, |r| r.fused_horizontal_m));
    assert!(med(&b, |r| r.fused_yaw_deg.abs()) >= med(&a, |r| r.fused_yaw_deg.abs()));
    assert!(med(&b, |r| r.sins_horizontal_m) >= med(&a, |r| r.sins_horizontal_m));
}

#[test]
fn fused_beats_open_loop_on_default_scenarios() {
    let stationary = Scenario::default_stationary();
    let mut turning = stationary.clone();
    turning.profile = turn_profile(300.0);
    let mut cruising = stationary.clone();
    cruising.profile.motion = Motion::ConstantVelocity { speed: 15.0 };
    for (name, sc) in [
        ("stationary", stationary),
        ("turn", turning),
        ("cruise", cruising),
    ] {
        let rows = run_batch(&sc, 0, 10).unwrap();
        let fused = median(
            &rows
                .iter()
                .map(|r| r.fused_horizontal_m)
                .collect::<Vec<_>>(),
        );
        let sins = median(&rows.iter().map(|r| r.sins_horizontal_m).collect::<Vec<_>>());
        assert!(fused < sins, "{name}: fused {fused} m, SINS {sins} m");
        assert!(
            fused < sc.gnss.horizontal_position,
            "{name}: fused {fused} m above GNSS 1σ"
        );
        assert!(sins > sc.gnss.horizontal_position, "{name}: SINS {sins} m");
    }
}

#[test]
fn disabling_a_sensor_leaves_other_streams_alone() {
    let sc = Scenario::default_stationary();
    let mut no_gnss = sc.clone();
    no_gnss.gnss.enabled = false;
    let mut no_psns = sc.clone();
    no_psns.psns.enabled = false;
    let full = run_scenario(&sc, 9).unwrap();
    for other in [
        run_scenario(&no_gnss, 9).unwrap(),
        run_scenario(&no_psns, 9).unwrap(),
    ] {
        assert_eq!(full.gyro_bias, other.gyro_bias);
        assert_eq!(full.accel_bias, other.accel_bias);
        assert!(full
            .epochs
            .iter()
            .zip(&other.epochs)
            .all(|(a, b)| a.sins == b.sins && a.truth == b.truth));
    }
}

#[test]
fn image_and_direct_paths_agree() {
    let mut sc = Scenario::default_stationary();
    sc.profile = turn_profile(120.0);
    let earth = sc.earth;
    let truth = gen_truth(&sc.profile, 1.0 / sc.imu.rate_hz, &earth);
    let direct = simulate_psns(&truth, &sc.psns, &sc.start_time, 3).unwrap();
    let mut image_spec = sc.psns;
    image_spec.path = PsnsPath::Image;
    let image = simulate_psns(&truth, &image_spec, &sc.start_time, 3).unwrap();
    assert_eq!(direct.len(), image.len());

    let (mut err_direct, mut err_image) = (Vec::new(), Vec::new());
    for (d, i) in direct.iter().zip(&image) {
        let body = truth.nav[truth.index(d.time)]
            .attitude
            .transpose()
            .rotate(&d.sun_enu);
        let (d, i) = (
            d.measurement.as_ref().unwrap(),
            i.measurement.as_ref().unwrap(),
        );
        assert!(axis_angle(&d.vector, &i.vector).to_degrees() < 0.5);
        err_direct.push(axis_angle(&d.vector, &body).to_degrees());
        err_image.push(axis_angle(&i.vector, &body).to_degrees());
    }
    let (md, mi) = (median(&err_direct), median(&err_image));
    assert!(err_image.iter().all(|e| *e < 0.5));
    assert!(
        mi / md > 0.5 && mi / md < 2.0,
        "direct median {md}° image median {mi}°"
    );

    sc.psns = image_spec;
    let run = run_scenario(&sc, 3).unwrap();
    assert_eq!(run.psns_dropped, 0);
    assert!(run.terminal_fused().yaw.to_degrees().abs() < 1.0);
}
