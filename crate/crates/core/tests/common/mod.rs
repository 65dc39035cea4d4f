#![allow(dead_code)]

pub mod oracles;

use polnav_core::frames::{dcm_from_euler, EulerAngles, GeodeticPosition, Vec3};
use polnav_core::sins::NavSolution;

/// Moving, rotating states spread over latitude, height and attitude, with body rate and specific force.
pub fn operating_points() -> Vec<(NavSolution, Vec3, Vec3)> {
    let pts = [
        (
            32.0,
            118.8,
            50.0,
            45.0,
            2.0,
            -1.0,
            [10.0, -5.0, 0.3],
            [0.01, -0.02, 0.005],
            [0.5, -0.3, 9.8],
        ),
        (
            -20.0,
            -60.0,
            400.0,
            190.0,
            -8.0,
            4.0,
            [-15.0, 22.0, -1.0],
            [0.0, 0.05, -0.03],
            [-1.0, 2.0, 9.6],
        ),
        (
            60.0,
            10.0,
            1500.0,
            300.0,
            15.0,
            10.0,
            [30.0, 30.0, 2.0],
            [-0.1, 0.0, 0.2],
            [0.2, 1.5, 9.7],
        ),
        (
            0.5,
            170.0,
            0.0,
            90.0,
            0.0,
            -20.0,
            [50.0, -2.0, 0.0],
            [0.02, 0.02, -0.2],
            [3.0, -2.0, 9.0],
        ),
        (
            75.0,
            -150.0,
            3000.0,
            10.0,
            -30.0,
            5.0,
            [-5.0, 80.0, -3.0],
            [0.3, -0.1, 0.1],
            [-2.5, 0.5, 9.5],
        ),
    ];
    pts.iter()
        .map(|(lat, lon, h, yaw, pitch, roll, v, w, f)| {
            (
                NavSolution {
                    time: 0.0,
                    position: GeodeticPosition::from_degrees(*lat, *lon, *h),
                    velocity: Vec3::from(*v),
                    attitude: dcm_from_euler(&EulerAngles::from_degrees(*yaw, *pitch, *roll)),
                },
                Vec3::from(*w),
                Vec3::from(*f),
            )
        })
        .collect()
}
