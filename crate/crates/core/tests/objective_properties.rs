use proptest::prelude::*;
use smoothstroke::engine::{Evaluator, OptimJob};
use smoothstroke::objectives::{
    alignment_cost, bbox_loss, multiscale_mse, overlap_cost, repulsion_loss, BoxPenalty, CurveSamples, LossWeights,
    RepulsionParams, Term,
};
use smoothstroke::palette::{balance_reg, Palette};
use smoothstroke::raster::{render, Canvas, Drawable, RasterConfig};
use smoothstroke::scene::{Scene, SceneItem};
use smoothstroke::spline::{KeyPointPath, Point};

fn wave(width: f64) -> Drawable {
    let pts: Vec<[f64; 2]> = (0..40).map(|i| [2.0 + i as f64 * 0.7, 16.0 + 6.0 * (i as f64 * 0.3).sin()]).collect();
    let n = pts.len();
    Drawable::stroke(pts, vec![width; n], vec![0.0])
}

fn blob(cx: f64, cy: f64, r: f64) -> Vec<[f64; 2]> {
    (0..24)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 24.0;
            [cx + r * a.cos(), cy + r * (1.0 + 0.3 * (3.0 * a).sin()) * a.sin()]
        })
        .collect()
}

#[test]
fn rendering_is_deterministic() {
    let cfg = RasterConfig::default();
    let d = vec![wave(1.5), Drawable::fill(blob(16.0, 16.0, 8.0), vec![0.4])];
    let (a, _) = render(&d, 32, 32, &[1.0], &cfg).unwrap();
    for _ in 0..3 {
        let (b, _) = render(&d, 32, 32, &[1.0], &cfg).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Black ink on white: a wider stroke darkens every pixel at least as much.
    #[test]
    fn coverage_grows_with_width(w in 0.2..3.0f64, dw in 0.05..2.0f64) {
        let cfg = RasterConfig::default();
        let (thin, _) = render(&[wave(w)], 32, 32, &[1.0], &cfg).unwrap();
        let (wide, _) = render(&[wave(w + dw)], 32, 32, &[1.0], &cfg).unwrap();
        for (a, b) in thin.data.iter().zip(&wide.data) {
            prop_assert!(*b <= *a + 1e-12);
        }
        let ink = |c: &Canvas| c.data.iter().map(|v| 1.0 - v).sum::<f64>();
        prop_assert!(ink(&wide) > ink(&thin));
    }

    /// Every pixel stays inside the convex hull of background and ink colors.
    #[test]
    fn pixels_stay_in_range(w in 0.0..4.0f64, gray in 0.0..1.0f64, opacity in 0.0..1.0f64) {
        let mut fill = Drawable::fill(blob(12.0, 14.0, 7.0), vec![gray]);
        fill.opacity = opacity;
        let (c, _) = render(&[wave(w), fill], 32, 32, &[1.0], &RasterConfig::default()).unwrap();
        prop_assert!(c.data.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn losses_are_non_negative(
        seed in prop::collection::vec(-1.0..2.0f64, 16 * 16),
        pts in prop::collection::vec(prop::array::uniform2(-20.0..40.0f64), 3..20),
        logits in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 1..8),
    ) {
        let img = Canvas::from_data(16, 16, 1, seed.iter().map(|v| v.clamp(0.0, 1.0)).collect()).unwrap();
        let target = Canvas::from_data(16, 16, 1, seed.iter().map(|v| (v * 0.5).abs().min(1.0)).collect()).unwrap();
        prop_assert!(multiscale_mse(&img, &target, 3).unwrap().0 >= 0.0);
        prop_assert!(overlap_cost(&img).0 >= 0.0);
        for phi in [BoxPenalty::Relu, BoxPenalty::Softplus] {
            prop_assert!(bbox_loss(&pts, [0.0, 0.0], [16.0, 16.0], phi).unwrap().0 >= 0.0);
        }
        prop_assert!(alignment_cost(&pts).unwrap().0 >= 0.0);
        let n = pts.len();
        let tangents: Vec<[f64; 2]> = (0..n).map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            [b[0] - a[0], b[1] - a[1]]
        }).collect();
        let curve = CurveSamples { points: pts.clone(), tangents, spacing: 0.125, closed: true };
        prop_assert!(repulsion_loss(&[curve], &RepulsionParams::default()).unwrap().0 >= 0.0);
        let rows: Vec<Vec<f64>> = logits.iter().map(|l| { let s: f64 = l.iter().sum::<f64>() + 1e-9; l.iter().map(|v| v / s).collect() }).collect();
        prop_assert!(balance_reg(&rows, 1.0).0 >= 0.0);
    }
}

fn ring(cx: f64, cy: f64, r: f64, n: usize, width: f64) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [cx + r * a.cos(), cy + r * a.sin(), width]
        })
        .collect()
}

/// Three items touching every term: an open stroke, a palette-colored fill
/// and a closed stroke.
fn busy_job() -> OptimJob {
    let mut scene = Scene::new(32, 32, vec![1.0, 1.0, 1.0]);
    let open: Vec<Point> = (0..8).map(|i| [3.0 + 3.5 * i as f64, 8.0 + (i % 3) as f64 * 2.0, 1.2]).collect();
    scene.items.push(SceneItem::stroke(KeyPointPath::new(open, false, 5), vec![0.1, 0.1, 0.1]));
    let mut fill = SceneItem::fill(KeyPointPath::new(ring(18.0, 20.0, 7.0, 7, 0.0), true, 3), vec![0.0; 3]);
    fill.logits = Some(vec![0.3, -0.2]);
    fill.opacity = 0.8;
    scene.items.push(fill);
    scene.items.push(SceneItem::stroke(KeyPointPath::new(ring(8.0, 24.0, 4.0, 6, 0.9), true, 3), vec![0.7, 0.2, 0.1]));
    scene.palette = Some(Palette::new(vec![[0.9, 0.1, 0.1], [0.1, 0.2, 0.9]]).unwrap());
    let target = Canvas::from_data(
        32,
        32,
        3,
        (0..32 * 32 * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
    )
    .unwrap();
    let mut job = OptimJob::new(scene);
    job.target = Some(target);
    job.terms = Term::ALL.iter().copied().filter(|t| *t != Term::External).collect();
    job.steps = 10;
    job
}

#[test]
fn zero_weight_matches_omitting_the_term() {
    let base = busy_job();
    for &term in &base.terms {
        let mut zero = base.clone();
        zero.weights.set(term, 0.0);
        let mut omit = base.clone();
        omit.terms.retain(|t| *t != term);
        let a = Evaluator::new(&zero).unwrap().evaluate(&zero.scene, 3, None).unwrap();
        let b = Evaluator::new(&omit).unwrap().evaluate(&omit.scene, 3, None).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits(), "{term}");
        for (x, y) in a.grads.iter().zip(&b.grads) {
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            let flat = |v: &[Point]| v.iter().flatten().copied().collect::<Vec<_>>();
            assert_eq!(bits(&flat(&x.keypoints)), bits(&flat(&y.keypoints)), "{term}");
            assert_eq!(bits(&x.color), bits(&y.color), "{term}");
            assert_eq!(bits(&x.logits), bits(&y.logits), "{term}");
        }
    }
}

#[test]
fn weights_scale_gradients_linearly() {
    for term in [Term::Smooth, Term::Repulsion, Term::Coverage] {
        let mut one = busy_job();
        one.terms = vec![term];
        let mut three = one.clone();
        three.weights = LossWeights::uniform(3.0);
        let a = Evaluator::new(&one).unwrap().evaluate(&one.scene, 0, None).unwrap();
        let b = Evaluator::new(&three).unwrap().evaluate(&three.scene, 0, None).unwrap();
        assert!((b.total - 3.0 * a.total).abs() <= 1e-12 * b.total.abs(), "{term}");
        for (x, y) in a.grads.iter().zip(&b.grads) {
            for (p, q) in x.keypoints.iter().zip(&y.keypoints) {
                for d in 0..3 {
                    assert!((q[d] - 3.0 * p[d]).abs() <= 1e-12 * (1.0 + q[d].abs()), "{term}");
                }
            }
        }
    }
}
