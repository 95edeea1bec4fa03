//! Block matching and field metrics.

use proptest::prelude::*;
use tgp_core::dmw::{dmw_field, parabolic_offset, ssd_search, subpixel_refine, DmwConfig, ImageFrame};
use tgp_core::matrix::Matrix;
use tgp_core::scenes::{rms, rmse};
use tgp_core::velocity::{VelocityField, VelocitySample};

/// Deterministic non-periodic texture.
fn texture(r: i64, c: i64) -> f64 {
    let (r, c) = (r as f64, c as f64);
    (0.37 * r).sin() * (0.23 * c + 1.0).cos() + (0.11 * r * c).sin() * 0.5 + 0.05 * r
}

fn shifted(rows: usize, cols: usize, shift: (i64, i64), k: i64, dt: f64) -> ImageFrame {
    let grid = Matrix::from_fn(rows, cols, |r, c| texture(r as i64 - shift.0 * k, c as i64 - shift.1 * k));
    ImageFrame::new(grid, 1.0, k as f64 * dt).unwrap()
}

fn ssd_brute(later: &ImageFrame, earlier: &ImageFrame, x: [usize; 2], half: i64, d: [i64; 2]) -> f64 {
    let mut s = 0.0;
    for a in -half..=half {
        for b in -half..=half {
            let y = [x[0] as i64 + a, x[1] as i64 + b];
            let z = later.grid[(y[0] as usize, y[1] as usize)];
            let w = earlier.grid[((y[0] - d[0]) as usize, (y[1] - d[1]) as usize)];
            s += (z - w).powi(2);
        }
    }
    s
}

#[test]
fn parabola_through_the_example_triple() {
    assert_eq!(parabolic_offset(4.0, 1.0, 2.0), 0.25);
    let surface = Matrix::from_rows(&[&[9.0, 4.0, 9.0], &[9.0, 1.0, 9.0], &[9.0, 2.0, 9.0]]).unwrap();
    let r = subpixel_refine(&surface, [1, 1]);
    assert_eq!(r.displacement, [0.25, 0.0]);
    assert!(!r.saturated);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn search_minimum_is_global(dr in -3i64..=3, dc in -3i64..=3, row in 8usize..14, col in 8usize..14) {
        let earlier = shifted(24, 24, (dr, dc), 0, 1.0);
        let later = shifted(24, 24, (dr, dc), 1, 1.0);
        let res = ssd_search(&later, &earlier, [row, col], 3, 4).unwrap();
        prop_assert_eq!(res.displacement, [dr, dc]);
        prop_assert_eq!(res.ssd, 0.0);
        for a in -4..=4i64 {
            for b in -4..=4i64 {
                let s = ssd_brute(&later, &earlier, [row, col], 3, [a, b]);
                let stored = res.surface[((a + 4) as usize, (b + 4) as usize)];
                prop_assert!((s - stored).abs() < 1e-9);
                prop_assert!(s >= res.ssd);
            }
        }
    }

    #[test]
    fn uniform_shift_is_recovered_everywhere(dr in -2i64..=2, dc in -2i64..=2, px in 0.5f64..3.0, dt in 0.2f64..2.0) {
        let frames: Vec<ImageFrame> = (0..3)
            .map(|k| {
                let mut f = shifted(22, 22, (dr, dc), k, dt);
                f.pixel_size = px;
                f
            })
            .collect();
        let cfg = DmwConfig { window_half: 3, search_radius: 3, pixel_size: px, ..DmwConfig::default() };
        let out = dmw_field(&frames, &cfg).unwrap();
        prop_assert!(!out.field.is_empty());
        for s in &out.field.samples {
            prop_assert_eq!(s.v, [dr as f64 * px / dt, dc as f64 * px / dt]);
        }
    }

    #[test]
    fn parabolic_offset_is_bounded_and_antisymmetric(a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0) {
        let o = parabolic_offset(a, b, c);
        prop_assert!((-0.5..=0.5).contains(&o));
        prop_assert_eq!(parabolic_offset(c, b, a), -o);
    }
}

fn field(entries: &[(f64, [f64; 2])]) -> VelocityField {
    VelocityField::new(
        entries
            .iter()
            .enumerate()
            .map(|(i, &(t, v))| VelocitySample { t, x: [i as f64, 0.0], v })
            .collect(),
    )
}

fn vectors() -> impl Strategy<Value = Vec<(f64, [f64; 2])>> {
    prop::collection::vec((0usize..3, -5.0f64..5.0, -5.0f64..5.0), 1..20).prop_map(|mut v| {
        v.sort_by_key(|e| e.0);
        v.into_iter().map(|(t, a, b)| (t as f64, [a, b])).collect()
    })
}

proptest! {
    #[test]
    fn rmse_is_a_metric(base in vectors(), seed in 0u64..1000) {
        let n = base.len();
        let perturb = |k: u64| -> VelocityField {
            field(&base.iter().enumerate().map(|(i, &(t, v))| {
                let f = ((i as u64 * 31 + seed * 7 + k) % 11) as f64 - 5.0;
                (t, [v[0] + 0.3 * f, v[1] - 0.2 * f])
            }).collect::<Vec<_>>())
        };
        let a = field(&base);
        let b = perturb(1);
        let c = perturb(2);
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        prop_assert!((rmse(&a, &b).unwrap() - rmse(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(rmse(&a, &c).unwrap() <= rmse(&a, &b).unwrap() + rmse(&b, &c).unwrap() + 1e-12);
        let zero = field(&base.iter().map(|&(t, _)| (t, [0.0, 0.0])).collect::<Vec<_>>());
        prop_assert!((rmse(&a, &zero).unwrap() - rms(&a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rms_scales_linearly(base in vectors(), k in 0.0f64..10.0) {
        let a = field(&base);
        let scaled = field(&base.iter().map(|&(t, v)| (t, [k * v[0], k * v[1]])).collect::<Vec<_>>());
        prop_assert!((rms(&scaled).unwrap() - k * rms(&a).unwrap()).abs() < 1e-9 * (1.0 + k));
    }
}
