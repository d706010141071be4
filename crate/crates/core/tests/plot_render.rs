mod common;

use common::*;
use plotleak::nn::{LossCurve, Matrix};
use plotleak::render::{
    downsample, luma, marker_centers, render_loss, render_scatter, to_binary, to_grayscale, ColorMode,
    LossPlotConfig, PlotRaster, RenderConfig, DEFAULT_BINARY_THRESHOLD, PALETTE, WHITE,
};
use plotleak::tsne::TsneLayout;
use proptest::prelude::*;
use rand::Rng;

fn layout(points: &[(f64, f64)], labels: &[usize]) -> TsneLayout {
    let rows: Vec<Vec<f64>> = points.iter().map(|&(x, y)| vec![x, y]).collect();
    TsneLayout::new(Matrix::from_rows(&rows).unwrap(), labels.to_vec()).unwrap()
}

fn random_layout(n: usize, seed: u64) -> TsneLayout {
    let mut r = rng(seed);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (r.random_range(-30.0..30.0), r.random_range(-30.0..30.0)))
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    layout(&pts, &labels)
}

fn curve(train: &[f64], test: &[f64]) -> LossCurve {
    LossCurve {
        train: train.iter().enumerate().map(|(i, &l)| ((i + 1) as f64 * 0.2, l)).collect(),
        test: test.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect(),
    }
}

fn ink_support(r: &PlotRaster) -> Vec<bool> {
    to_binary(r, DEFAULT_BINARY_THRESHOLD).pixels().iter().map(|&v| v == 0).collect()
}

#[test]
fn luma_uses_fixed_weights() {
    assert_eq!(luma([255, 0, 0]), 76);
    assert_eq!(luma(WHITE), 255);
    for c in PALETTE {
        let exact = 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64;
        assert_eq!(luma(c) as f64, (exact + 0.5).floor());
        assert!(luma(c) < DEFAULT_BINARY_THRESHOLD);
    }
}

#[test]
fn single_point_sits_at_canvas_center() {
    let cfg = RenderConfig::default();
    let l = layout(&[(3.0, -7.0)], &[0]);
    assert_eq!(marker_centers(&l, &cfg), vec![(149, 150)]);
    let r = render_scatter(&l, &cfg).unwrap();
    assert!(r.pixel(149, 150)[0] < 255);
}

#[test]
fn coincident_points_draw_one_disc() {
    let cfg = RenderConfig {
        color_mode: ColorMode::Binary,
        ..RenderConfig::default()
    };
    let one = render_scatter(&layout(&[(1.0, 1.0)], &[0]), &cfg).unwrap();
    let many = render_scatter(&layout(&[(1.0, 1.0); 5], &[0, 1, 2, 0, 1]), &cfg).unwrap();
    assert_eq!(one, many);
    // radius-2 disc: 13 pixels with x² + y² ≤ 4
    assert_eq!(ink_support(&one).iter().filter(|&&b| b).count(), 13);
}

#[test]
fn scatter_is_deterministic_and_sized() {
    let l = random_layout(120, 1);
    for mode in [ColorMode::Color, ColorMode::Grayscale, ColorMode::Binary] {
        let cfg = RenderConfig {
            color_mode: mode,
            ..RenderConfig::default()
        };
        let a = render_scatter(&l, &cfg).unwrap();
        let b = render_scatter(&l, &cfg).unwrap();
        assert_eq!(a, b);
        let ch = if mode == ColorMode::Color { 3 } else { 1 };
        assert_eq!(a.pixels().len(), 300 * 300 * ch);
        let mut x = Vec::new();
        let mut y = Vec::new();
        a.encode_png(&mut x).unwrap();
        b.encode_png(&mut y).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn later_points_paint_over_earlier_ones() {
    let cfg = RenderConfig {
        color_mode: ColorMode::Color,
        ..RenderConfig::default()
    };
    let r = render_scatter(&layout(&[(0.0, 0.0), (0.0, 0.0)], &[0, 3]), &cfg).unwrap();
    assert_eq!(r.pixel(149, 149), &PALETTE[3]);
}

#[test]
fn render_config_is_validated() {
    let l = random_layout(3, 0);
    let bad_radius = RenderConfig {
        marker_radius: 0,
        ..RenderConfig::default()
    };
    let bad_margin = RenderConfig {
        margin: 0.5,
        ..RenderConfig::default()
    };
    assert!(render_scatter(&l, &bad_radius).is_err());
    assert!(render_scatter(&l, &bad_margin).is_err());
}

#[test]
fn downsample_matches_box_filter_oracle() {
    let mut r = rng(4);
    for (w, h, ow, oh) in [(300, 300, 32, 32), (300, 300, 64, 48), (17, 13, 5, 4), (10, 10, 10, 3)] {
        let gray: Vec<u8> = (0..w * h).map(|_| r.random()).collect();
        let raster = PlotRaster::from_pixels(w, h, 1, gray.clone()).unwrap();
        let out = downsample(&raster, ow, oh).unwrap();
        assert_eq!(out.pixels(), naive_downsample(&gray, w, h, ow, oh).as_slice(), "{w}x{h}->{ow}x{oh}");
    }
}

#[test]
fn downsample_examples() {
    let block = PlotRaster::from_pixels(2, 2, 1, vec![0, 0, 255, 255]).unwrap();
    assert_eq!(downsample(&block, 1, 1).unwrap().pixels(), &[128]);
    let uniform = PlotRaster::filled(30, 20, 3, [7, 99, 200]).unwrap();
    assert_eq!(downsample(&uniform, 7, 3).unwrap(), PlotRaster::filled(7, 3, 3, [7, 99, 200]).unwrap());
    assert_eq!(downsample(&uniform, 30, 20).unwrap(), uniform);
    assert!(downsample(&uniform, 31, 20).is_err());
}

#[test]
fn constant_loss_curves_are_horizontal_lines() {
    let cfg = LossPlotConfig {
        with_axes: false,
        thickness: 1,
        ..LossPlotConfig::default()
    };
    let r = render_loss(&curve(&[1.0; 10], &[0.5; 2]), &cfg).unwrap();
    let rows_with = |color: [u8; 3]| {
        let mut rows: Vec<usize> = (0..r.height())
            .filter(|&y| (0..r.width()).any(|x| r.pixel(x, y) == color))
            .collect();
        rows.dedup();
        rows
    };
    assert_eq!(rows_with(cfg.train_color).len(), 1);
    assert_eq!(rows_with(cfg.test_color).len(), 1);
    assert!(rows_with(cfg.train_color)[0] < rows_with(cfg.test_color)[0]);
}

#[test]
fn loss_plot_without_axes_has_only_curves() {
    let c = curve(&[2.0, 1.5, 1.2, 1.1, 0.9, 0.8, 0.7, 0.65, 0.6, 0.6], &[1.4, 0.9]);
    let cfg = LossPlotConfig {
        with_axes: false,
        ..LossPlotConfig::default()
    };
    let r = render_loss(&c, &cfg).unwrap();
    for p in r.pixels().chunks(3) {
        assert!(p == WHITE || p == cfg.train_color || p == cfg.test_color, "{p:?}");
    }
    assert_eq!(r, render_loss(&c, &cfg).unwrap());

    let with = render_loss(&c, &LossPlotConfig::default()).unwrap();
    assert!(with.pixels().chunks(3).any(|p| p == [0, 0, 0]));
}

#[test]
fn loss_plot_needs_two_points_and_distinct_colors() {
    assert!(render_loss(&curve(&[1.0], &[1.0, 0.5]), &LossPlotConfig::default()).is_err());
    let same = LossPlotConfig {
        test_color: LossPlotConfig::default().train_color,
        ..LossPlotConfig::default()
    };
    assert!(render_loss(&curve(&[1.0, 0.5], &[1.0, 0.5]), &same).is_err());
}

#[test]
fn png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RenderConfig {
        color_mode: ColorMode::Color,
        ..RenderConfig::default()
    };
    for (i, r) in [
        render_scatter(&random_layout(50, 2), &cfg).unwrap(),
        to_grayscale(&render_scatter(&random_layout(50, 3), &cfg).unwrap()),
    ]
    .into_iter()
    .enumerate()
    {
        let path = dir.path().join(format!("{i}.png"));
        r.write_png(&path).unwrap();
        assert_eq!(PlotRaster::read_png(&path).unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn marker_centers_carry_ink(seed in any::<u64>(), n in 1usize..60, radius in 1usize..4) {
        let l = random_layout(n, seed);
        let cfg = RenderConfig { marker_radius: radius, color_mode: ColorMode::Color, ..RenderConfig::default() };
        let r = render_scatter(&l, &cfg).unwrap();
        for (x, y) in marker_centers(&l, &cfg) {
            prop_assert!(x >= 0 && y >= 0 && (x as usize) < r.width() && (y as usize) < r.height());
            prop_assert_ne!(r.pixel(x as usize, y as usize), &WHITE[..]);
        }
    }

    #[test]
    fn color_mode_keeps_marker_support(seed in any::<u64>(), n in 1usize..80) {
        let l = random_layout(n, seed);
        let render = |mode| render_scatter(&l, &RenderConfig { color_mode: mode, ..RenderConfig::default() }).unwrap();
        let color = ink_support(&render(ColorMode::Color));
        prop_assert_eq!(&color, &ink_support(&render(ColorMode::Grayscale)));
        prop_assert_eq!(&color, &ink_support(&render(ColorMode::Binary)));
    }

    #[test]
    fn binary_is_idempotent(pixels in proptest::collection::vec(any::<u8>(), 48), t in any::<u8>()) {
        let r = PlotRaster::from_pixels(4, 4, 3, pixels).unwrap();
        let b = to_binary(&r, t);
        prop_assert_eq!(to_binary(&b, t), b);
    }
}
