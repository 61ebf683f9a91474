use dotflow_core::estimator::*;
use dotflow_core::flow::*;
use dotflow_core::geometry::RigModel;
use dotflow_core::pattern::generate_pattern;
use dotflow_core::preprocess::{lcn, LCN_EPS, LCN_WINDOW};
use dotflow_core::simulator::*;

fn stats(flow: &FlowMap) -> (usize, f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    let mut within = 0usize;
    for (u, v) in flow.u.data().iter().zip(flow.valid.data()) {
        if *v {
            n += 1;
            sum += *u as f64;
            if (u - 1.0).abs() < 0.5 { within += 1; }
        }
    }
    (n, sum / n as f64, within as f64 / n as f64)
}

fn main() {
    // Flow accuracy on the unit-rate plane.
    let r = RigModel::new(600.0, 0.218, 320, 240, 40.0, 200.0, 8).unwrap();
    let p = generate_pattern(1, 320, 32, 0.2, 1.5, 11).unwrap();
    let scene = SceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Plane { half_extent: None },
            center: [0.0, 0.0, r.fb() / 100.0],
            albedo: 1.0,
            motion: Motion { disparity_rate_px: Some(1.0), ..Motion::default() },
        }],
        background_depth_m: 2.0,
        n_frames: 2,
    };
    let noise = NoiseModel::noiseless();
    let (f0, _) = render_frame(&scene, 0, &r, &p, &noise).unwrap();
    let (f1, _) = render_frame(&scene, 1, &r, &p, &noise).unwrap();
    let l0 = lcn(&f0.intensity, LCN_WINDOW, LCN_EPS).unwrap();
    let l1 = lcn(&f1.intensity, LCN_WINDOW, LCN_EPS).unwrap();
    let flow = compute_pattern_flow(&l1, &l0, &FlowParams::default()).unwrap();
    let (n, mean, frac) = stats(&flow);
    println!("flow: n={n} mean={mean:.4} frac(|u-1|<0.5)={frac:.3}");

    // Fusion pull: refine with +2 offset prior at conf 0.9 for several fuse weights.
    let r2 = RigModel::new(300.0, 0.1, 160, 120, 10.0, 60.0, 8).unwrap();
    let p2 = generate_pattern(2, 160, 24, 0.2, 1.4, 11).unwrap();
    let scene2 = SceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Plane { half_extent: None },
            center: [0.0, 0.0, 30.0 / 35.0],
            albedo: 1.0,
            motion: Motion::default(),
        }],
        background_depth_m: 1.5,
        n_frames: 1,
    };
    let (frame, gt) = render_frame(&scene2, 0, &r2, &p2, &noise).unwrap();
    let fl = lcn(&frame.intensity, LCN_WINDOW, LCN_EPS).unwrap();
    let mut prior = gt.clone();
    for v in prior.d.data_mut() { *v += 2.0; }
    for c in prior.confidence.data_mut() { if *c > 0.0 { *c = 0.9; } }
    for fw in [0.05f32, 0.08, 0.1, 0.15, 0.2, 0.4] {
        let params = RefineParams { fuse_weight: fw, ..RefineParams::default() };
        let refined = refine(&fl, &p2, &prior, &r2, &params).unwrap();
        let mut sum = 0.0f64; let mut n = 0usize; let mut max: f32 = 0.0;
        for (i, (&v, &ok)) in refined.d.data().iter().zip(refined.valid.data()).enumerate() {
            if ok && gt.valid.data()[i] {
                let e = (v - gt.d.data()[i]).abs();
                sum += e as f64; n += 1; max = max.max(e);
            }
        }
        println!("fw={fw}: offset-prior mae={:.3} max={max:.3} n={n}", sum / n as f64);
    }
    // Perfect prior, pattern-rich accuracy.
    let params = RefineParams::default();
    let refined = refine(&fl, &p2, &gt, &r2, &params).unwrap();
    let mut max: f32 = 0.0; let mut n_hi = 0usize; let mut n = 0usize;
    for (i, (&v, &ok)) in refined.d.data().iter().zip(refined.valid.data()).enumerate() {
        if ok && gt.valid.data()[i] {
            n += 1;
            if refined.confidence.data()[i] > 0.9 {
                n_hi += 1;
                max = max.max((v - gt.d.data()[i]).abs());
            }
        }
    }
    println!("perfect prior: high-conf max err={max:.3} ({n_hi}/{n} high-conf)");
    let mut worst = Vec::new();
    for y in 0..r2.height { for x in 0..r2.width {
        let i = y * r2.width + x;
        if y >= 4 && y < r2.height - 4 && refined.valid.data()[i] && gt.valid.data()[i] && refined.confidence.data()[i] > 0.9 {
            let e = (refined.d.data()[i] - gt.d.data()[i]).abs();
            if e > 0.1 { worst.push((x, y, e, refined.confidence.data()[i])); }
        }
    }}
    worst.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    println!("{} high-conf pixels over 0.1", worst.len());
    for w in worst.iter().take(20) { println!("x={} y={} err={:.3} conf={:.3}", w.0, w.1, w.2, w.3); }
}
// (appended) locate worst high-conf pixels
