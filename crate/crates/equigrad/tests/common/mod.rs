//! Shared drivers for the integration-test binaries. Every tape operation
//! gets a finite-difference driver that builds seeded random instances and
//! checks each differentiable input slot; the acceptance suite replays the
//! full set through `all_op_checks`.
#![allow(dead_code)] // several binaries share this module; none uses all of it

use equigrad::gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
use equigrad::{Graph, Result, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 50;

fn cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

fn tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("valid tensor")
}

/// Rank 1 to 3, every dim 1 to 4: small enough that probing every coordinate
/// stays fast, varied enough to cross stride boundaries.
fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=3);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

/// Sum of the output weighted by a fixed random tensor, so the gradient that
/// flows back is non-uniform and routing mistakes cannot cancel out.
fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.leaf(weights)?;
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

fn check<F>(op: &str, point: &Tensor, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_difference_check(op, point, &cfg(), build).expect("check runs")
}

pub fn check_add(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xadd);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        let a = tensor(&shape, -1.0, 1.0, &mut rng);
        let b = tensor(&shape, -1.0, 1.0, &mut rng);
        let w = tensor(&shape, 0.25, 1.25, &mut rng);
        reports.push(check("add lhs", &a, |g, x| {
            let o = g.leaf(&b)?;
            let y = g.add(x, o)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("add rhs", &b, |g, x| {
            let o = g.leaf(&a)?;
            let y = g.add(o, x)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_sub(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50b);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        let a = tensor(&shape, -1.0, 1.0, &mut rng);
        let b = tensor(&shape, -1.0, 1.0, &mut rng);
        let w = tensor(&shape, 0.25, 1.25, &mut rng);
        reports.push(check("sub lhs", &a, |g, x| {
            let o = g.leaf(&b)?;
            let y = g.sub(x, o)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("sub rhs", &b, |g, x| {
            let o = g.leaf(&a)?;
            let y = g.sub(o, x)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_mul(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x301);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        let a = tensor(&shape, -1.0, 1.0, &mut rng);
        let b = tensor(&shape, -1.0, 1.0, &mut rng);
        let w = tensor(&shape, 0.25, 1.25, &mut rng);
        reports.push(check("mul lhs", &a, |g, x| {
            let o = g.leaf(&b)?;
            let y = g.mul(x, o)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("mul rhs", &b, |g, x| {
            let o = g.leaf(&a)?;
            let y = g.mul(o, x)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_scalar_mul(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        let a = tensor(&shape, -1.0, 1.0, &mut rng);
        let w = tensor(&shape, 0.25, 1.25, &mut rng);
        // Keep the factor away from zero so the gradient stays informative.
        let factor = rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        reports.push(check("scalar_mul", &a, |g, x| {
            let y = g.scalar_mul(x, factor)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_matmul(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3a73);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let (m, k, n) = (
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let a = tensor(&[m, k], -1.0, 1.0, &mut rng);
        let w = tensor(&[m, n], 0.25, 1.25, &mut rng);

        let b = tensor(&[k, n], -1.0, 1.0, &mut rng);
        reports.push(check("matmul lhs", &a, |g, x| {
            let o = g.leaf(&b)?;
            let y = g.matmul(x, o, false)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("matmul rhs", &b, |g, x| {
            let o = g.leaf(&a)?;
            let y = g.matmul(o, x, false)?;
            weighted_sum(g, y, &w)
        }));

        let bt = tensor(&[n, k], -1.0, 1.0, &mut rng);
        reports.push(check("matmul transposed lhs", &a, |g, x| {
            let o = g.leaf(&bt)?;
            let y = g.matmul(x, o, true)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("matmul transposed rhs", &bt, |g, x| {
            let o = g.leaf(&a)?;
            let y = g.matmul(o, x, true)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_conv2d(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0f);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let (b, c, oc) = (
            rng.random_range(1..=2),
            rng.random_range(1..=2),
            rng.random_range(1..=2),
        );
        let k = rng.random_range(1..=3);
        let h = k + rng.random_range(0..=3);
        let wd = k + rng.random_range(0..=3);
        let x = tensor(&[b, c, h, wd], -1.0, 1.0, &mut rng);
        let kern = tensor(&[oc, c, k, k], -1.0, 1.0, &mut rng);
        let w = tensor(&[b, oc, h - k + 1, wd - k + 1], 0.25, 1.25, &mut rng);
        reports.push(check("conv2d input", &x, |g, xv| {
            let o = g.leaf(&kern)?;
            let y = g.conv2d(xv, o)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("conv2d kernel", &kern, |g, kv| {
            let o = g.leaf(&x)?;
            let y = g.conv2d(o, kv)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_bias_add(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb1a5);
    let mut reports = Vec::new();
    for i in 0..instances {
        // Alternate between the [batch, f] and [batch, c, h, w] layouts.
        let shape = if i % 2 == 0 {
            vec![rng.random_range(1..=4), rng.random_range(1..=4)]
        } else {
            vec![
                rng.random_range(1..=2),
                rng.random_range(1..=3),
                rng.random_range(1..=3),
                rng.random_range(1..=3),
            ]
        };
        let x = tensor(&shape, -1.0, 1.0, &mut rng);
        let bias = tensor(&[shape[1]], -1.0, 1.0, &mut rng);
        let w = tensor(&shape, 0.25, 1.25, &mut rng);
        reports.push(check("bias_add input", &x, |g, xv| {
            let o = g.leaf(&bias)?;
            let y = g.bias_add(xv, o)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("bias_add bias", &bias, |g, bv| {
            let o = g.leaf(&x)?;
            let y = g.bias_add(o, bv)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_maxpool2(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3a8);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let h = 2 * rng.random_range(1..=2);
        let wd = 2 * rng.random_range(1..=2);
        // Every pooling window gets four well-separated levels in a random
        // order, keeping the argmax stable under the probe step.
        let mut data = vec![0.0; b * c * h * wd];
        for img in 0..b * c {
            for wy in 0..h / 2 {
                for wx in 0..wd / 2 {
                    let mut levels = [0.0, 0.25, 0.5, 0.75];
                    levels.shuffle(&mut rng);
                    for (slot, level) in levels.iter().enumerate() {
                        let y = 2 * wy + slot / 2;
                        let x = 2 * wx + slot % 2;
                        data[img * h * wd + y * wd + x] = *level + rng.random_range(-0.1..0.1);
                    }
                }
            }
        }
        let x = Tensor::new(vec![b, c, h, wd], data).expect("valid tensor");
        let w = tensor(&[b, c, h / 2, wd / 2], 0.25, 1.25, &mut rng);
        reports.push(check("maxpool2", &x, |g, xv| {
            let y = g.maxpool2(xv)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_relu(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e1);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        // Keep every coordinate at least 0.05 from the kink; the probe step
        // is 1e-5, so the subgradient cannot flip during the check.
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| rng.random_range(0.05..1.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 })
            .collect();
        let x = Tensor::new(shape.clone(), data).expect("valid tensor");
        let w = tensor(&shape, 0.25, 1.25, &mut rng);
        reports.push(check("relu", &x, |g, xv| {
            let y = g.relu(xv)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_flatten(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1a7);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = vec![
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        ];
        let x = tensor(&shape, -1.0, 1.0, &mut rng);
        let flat = vec![shape[0], shape[1] * shape[2]];
        let w = tensor(&flat, 0.25, 1.25, &mut rng);
        reports.push(check("flatten", &x, |g, xv| {
            let y = g.flatten(xv)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_reshape(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e5a);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let (a, b, c) = (
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let x = tensor(&[a, b, c], -1.0, 1.0, &mut rng);
        let target = vec![c * b, a];
        let w = tensor(&target, 0.25, 1.25, &mut rng);
        reports.push(check("reshape", &x, |g, xv| {
            let y = g.reshape(xv, &target)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

pub fn check_mean(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3ea);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        let x = tensor(&shape, -1.0, 1.0, &mut rng);
        reports.push(check("mean", &x, |g, xv| g.mean(xv)));
    }
    reports
}

pub fn check_sum(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x503);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        let x = tensor(&shape, -1.0, 1.0, &mut rng);
        reports.push(check("sum", &x, |g, xv| g.sum(xv)));
    }
    reports
}

pub fn check_softmax_cross_entropy(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xce);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let batch = rng.random_range(1..=4);
        let classes = rng.random_range(2..=5);
        let logits = tensor(&[batch, classes], -2.0, 2.0, &mut rng);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        reports.push(check("softmax_cross_entropy", &logits, |g, lv| {
            let losses = g.softmax_cross_entropy(lv, &labels)?;
            g.mean(losses)
        }));
    }
    reports
}

pub fn check_l1(instances: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let shape = random_shape(&mut rng);
        let a = tensor(&shape, -1.0, 1.0, &mut rng);
        // Separate b from a by at least 1e-3 per coordinate so the absolute
        // value's kink stays out of reach of the probe step.
        let b_data: Vec<f64> = a
            .data()
            .iter()
            .map(|&v| {
                let gap = rng.random_range(1e-3..0.5);
                if rng.random_bool(0.5) {
                    v + gap
                } else {
                    v - gap
                }
            })
            .collect();
        let b = Tensor::new(shape.clone(), b_data).expect("valid tensor");
        let w = tensor(&shape, 0.25, 1.25, &mut rng);
        reports.push(check("l1 lhs", &a, |g, x| {
            let o = g.leaf(&b)?;
            let y = g.l1(x, o)?;
            weighted_sum(g, y, &w)
        }));
        reports.push(check("l1 rhs", &b, |g, x| {
            let o = g.leaf(&a)?;
            let y = g.l1(o, x)?;
            weighted_sum(g, y, &w)
        }));
    }
    reports
}

/// Every op driver at the given instance count, one report per checked slot.
pub fn all_op_checks(instances: usize) -> Vec<GradCheckReport> {
    let mut reports = Vec::new();
    reports.extend(check_add(instances));
    reports.extend(check_sub(instances));
    reports.extend(check_mul(instances));
    reports.extend(check_scalar_mul(instances));
    reports.extend(check_matmul(instances));
    reports.extend(check_conv2d(instances));
    reports.extend(check_bias_add(instances));
    reports.extend(check_maxpool2(instances));
    reports.extend(check_relu(instances));
    reports.extend(check_flatten(instances));
    reports.extend(check_reshape(instances));
    reports.extend(check_mean(instances));
    reports.extend(check_sum(instances));
    reports.extend(check_softmax_cross_entropy(instances));
    reports.extend(check_l1(instances));
    reports
}

pub fn assert_all_pass(reports: &[GradCheckReport]) {
    for report in reports {
        assert!(
            report.pass,
            "{}: max_rel_err {:.3e}, max_abs_err {:.3e}, failure {:?}",
            report.op_name, report.max_rel_err, report.max_abs_err, report.failure
        );
    }
}
