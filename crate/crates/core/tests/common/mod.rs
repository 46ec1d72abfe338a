#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roi_auction::alloc::{make_power_ramp, make_table};
use roi_auction::{AllocationRule, RoiTarget, Segment, Shape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn m(x: f64) -> RoiTarget {
    RoiTarget::new(x).unwrap()
}

pub fn data(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn sorted_uniforms(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    xs.sort_by(f64::total_cmp);
    xs
}

/// A monotone rule on `[0, 1]` with one to four segments of mixed shapes
/// and possible jumps at the joins.
pub fn random_monotone_rule(rng: &mut ChaCha8Rng) -> AllocationRule {
    let k = rng.gen_range(1..=4);
    let mut edges = vec![0.0];
    for b in sorted_uniforms(rng, k - 1) {
        // Keep segments from collapsing.
        let b = 0.05 + 0.9 * b;
        if b > *edges.last().unwrap() + 0.02 {
            edges.push(b);
        }
    }
    edges.push(1.0);
    let levels = sorted_uniforms(rng, 2 * (edges.len() - 1));
    let mut segments = Vec::new();
    for (i, w) in edges.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let (s, e) = (levels[2 * i], levels[2 * i + 1]);
        let shape = match rng.gen_range(0..3) {
            0 => Shape::Constant { level: s },
            1 => {
                let slope = (e - s) / (hi - lo);
                Shape::Linear { slope, intercept: s - slope * lo }
            }
            _ => {
                let n = rng.gen_range(1..=4);
                let mut pts = vec![(lo, s)];
                let xs = sorted_uniforms(rng, n);
                let ys = sorted_uniforms(rng, n);
                for (x, y) in xs.into_iter().zip(ys) {
                    let x = lo + (hi - lo) * (0.05 + 0.9 * x);
                    if x > pts.last().unwrap().0 + 1e-3 {
                        pts.push((x, s + (e - s) * y));
                    }
                }
                pts.push((hi, e));
                Shape::Table { points: pts }
            }
        };
        segments.push(Segment { lo, hi, shape });
    }
    AllocationRule::new(1.0, segments).unwrap()
}

/// A rule with a strict decrease somewhere: a monotone rule with one
/// table point pushed down by at least 0.05.
pub fn random_non_monotone_rule(rng: &mut ChaCha8Rng) -> AllocationRule {
    let n = rng.gen_range(5..12);
    let mut pts: Vec<(f64, f64)> = (0..n).map(|i| (i as f64 / (n - 1) as f64, 0.0)).collect();
    let ys = sorted_uniforms(rng, n);
    for (p, y) in pts.iter_mut().zip(ys) {
        p.1 = 0.2 + 0.8 * y;
    }
    let j = rng.gen_range(1..n);
    let drop = rng.gen_range(0.05..0.2);
    pts[j].1 = (pts[j - 1].1 - drop).max(0.0);
    AllocationRule::new(1.0, vec![Segment { lo: 0.0, hi: 1.0, shape: Shape::Table { points: pts } }]).unwrap()
}

/// A monotone perturbation of `base` sampled as a table on `n` points.
pub fn perturb(rng: &mut ChaCha8Rng, base: &AllocationRule, n: usize) -> AllocationRule {
    let vmax = base.vmax();
    let table = base.to_table(n).unwrap();
    let Shape::Table { points } = &table.segments()[0].shape else { unreachable!() };
    let mut pts = points.clone();
    let eps = 10f64.powf(rng.gen_range(-3.0..-1.0));
    match rng.gen_range(0..3) {
        // Smooth bump.
        0 => {
            let c = rng.gen_range(0.0..vmax);
            let w = rng.gen_range(0.02..0.3) * vmax;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for p in &mut pts {
                p.1 += sign * eps * (-((p.0 - c) / w).powi(2)).exp();
            }
        }
        // Independent noise at every point.
        1 => {
            for p in &mut pts {
                p.1 += eps * rng.gen_range(-1.0..1.0);
            }
        }
        // Threshold moved.
        _ => {
            let shift = eps * rng.gen_range(-1.0..1.0) * vmax;
            let src = pts.clone();
            for p in &mut pts {
                let v = (p.0 - shift).clamp(0.0, vmax);
                let k = src.partition_point(|q| q.0 <= v).clamp(1, src.len() - 1);
                let (x0, y0) = src[k - 1];
                let (x1, y1) = src[k];
                p.1 = y0 + (y1 - y0) * (v - x0) / (x1 - x0);
            }
        }
    }
    let mut running: f64 = 0.0;
    for p in &mut pts {
        running = running.max(p.1.clamp(0.0, 1.0));
        p.1 = running;
    }
    make_table(vmax, pts).unwrap()
}

/// The optimal ramp with a flat start: `max(level, x(v))`. The flat part
/// runs from 0 to where the ramp reaches `level`.
pub fn flat_start(vmax: f64, threshold: f64, mm: RoiTarget, level: f64) -> AllocationRule {
    let e = 1.0 / (mm.get() - 1.0);
    let meet = threshold * level.powf(1.0 / e);
    let ramp = make_power_ramp(vmax, threshold, mm).unwrap();
    let mut segments = vec![Segment { lo: 0.0, hi: meet, shape: Shape::Constant { level } }];
    for s in ramp.segments() {
        if s.hi > meet {
            segments.push(Segment { lo: s.lo.max(meet), hi: s.hi, shape: s.shape.clone() });
        }
    }
    AllocationRule::new(vmax, segments).unwrap()
}
