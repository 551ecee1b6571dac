//! Randomized oracle and gradient suites, shared by the test targets and
//! the `selftest` command.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{fd, oracle, random_tensor};
use crate::error::Result;
use crate::ops::{self, Op};
use crate::params::Activation;
use crate::tensor::Tensor;

/// Points closer than this to a ReLU zero or a max tie are resampled.
pub const KINK_MARGIN: f64 = 1e-3;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const ORACLE_TOLERANCE: f64 = 1e-5;
/// Ops that only move, compare or average values.
pub const REORDER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub instances: usize,
    pub required: usize,
    pub worst: f64,
    pub tolerance: f64,
    /// Candidate points discarded for lying near a kink.
    pub rejected: usize,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.instances >= self.required && self.worst <= self.tolerance
    }
}

impl fmt::Display for CheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} n={:<4} worst={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst,
            self.tolerance
        )?;
        if self.rejected > 0 {
            write!(f, " kink-rejected={}", self.rejected)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub rows: Vec<CheckRow>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn row(&self, name: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            writeln!(f, "{row}")?;
        }
        write!(
            f,
            "{} {} ({} checks, {:.1}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.rows.len(),
            self.elapsed.as_secs_f64()
        )
    }
}

struct RowBuilder {
    row: CheckRow,
}

impl RowBuilder {
    fn new(name: &str, required: usize, tolerance: f64) -> Self {
        RowBuilder {
            row: CheckRow {
                name: name.to_string(),
                instances: 0,
                required,
                worst: 0.0,
                tolerance,
                rejected: 0,
            },
        }
    }

    fn record(&mut self, err: f64) {
        self.row.instances += 1;
        // NaN must fail the row
        self.row.worst = if err.is_nan() {
            f64::INFINITY
        } else {
            self.row.worst.max(err)
        };
    }
}

fn extent(rng: &mut impl Rng) -> usize {
    rng.random_range(1..=8)
}

fn map3(rng: &mut impl Rng) -> [usize; 3] {
    [extent(rng), extent(rng), extent(rng)]
}

fn random_map<T: crate::tensor::Scalar>(rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor<T> {
    let shape = map3(rng);
    random_tensor(rng, &shape, lo, hi)
}

fn random_small(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let shape = [
        rng.random_range(1..=5),
        rng.random_range(1..=5),
        rng.random_range(1..=4),
    ];
    random_tensor(rng, &shape, lo, hi)
}

/// Random window geometry `(k, stride, padding)` that fits `h x w`.
fn window(rng: &mut impl Rng, h: usize, w: usize) -> (usize, usize, usize) {
    loop {
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..=k / 2);
        if h + 2 * padding >= k && w + 2 * padding >= k {
            return (k, stride, padding);
        }
    }
}

/// Every forward kernel against its loop oracle on `instances` random
/// problems with extents up to 8.
pub fn kernel_oracle_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    macro_rules! run {
        ($name:expr, $tol:expr, |$r:ident| $body:expr) => {{
            let mut b = RowBuilder::new($name, instances, $tol);
            for _ in 0..instances {
                let $r = &mut rng;
                let err: f64 = $body;
                b.record(err);
            }
            rows.push(b.row);
        }};
    }

    run!("conv2d", ORACLE_TOLERANCE, |r| {
        let [h, w, cin] = map3(r);
        let cout = extent(r);
        let (k, stride, padding) = window(r, h, w);
        let x: Tensor = random_tensor(r, &[h, w, cin], -1.0, 1.0);
        let kern: Tensor = random_tensor(r, &[k, k, cin, cout], -1.0, 1.0);
        let bias: Tensor = random_tensor(r, &[cout], -1.0, 1.0);
        let y = ops::forward(&Op::Conv2d { stride, padding }, &[&x, &kern, &bias])?;
        oracle::max_abs_err(&y, &oracle::conv2d(&x, &kern, &bias, stride, padding))
    });
    run!("bn_relu", ORACLE_TOLERANCE, |r| {
        let [h, w, c] = map3(r);
        let x: Tensor = random_tensor(r, &[h, w, c], -2.0, 2.0);
        let gamma: Tensor = random_tensor(r, &[c], 0.25, 2.0);
        let beta: Tensor = random_tensor(r, &[c], -1.0, 1.0);
        let mean: Tensor = random_tensor(r, &[c], -1.0, 1.0);
        let var: Tensor = random_tensor(r, &[c], 0.25, 2.0);
        let op = Op::BnRelu {
            running_mean: mean.clone(),
            running_var: var.clone(),
            epsilon: 1e-5,
        };
        let y = ops::forward(&op, &[&x, &gamma, &beta])?;
        oracle::max_abs_err(&y, &oracle::bn_relu(&x, &gamma, &beta, &mean, &var, 1e-5f32 as f64))
    });
    run!("dense", ORACLE_TOLERANCE, |r| {
        let (n, m) = (extent(r) * extent(r), extent(r));
        let act = [Activation::Relu, Activation::Sigmoid, Activation::None][r.random_range(0..3)];
        let x: Tensor = random_tensor(r, &[n], -1.0, 1.0);
        let wt: Tensor = random_tensor(r, &[n, m], -1.0, 1.0);
        let b: Tensor = random_tensor(r, &[m], -1.0, 1.0);
        let y = ops::forward(&Op::Dense { activation: act }, &[&x, &wt, &b])?;
        oracle::max_abs_err(&y, &oracle::dense(&x, &wt, &b, act))
    });
    run!("softmax", ORACLE_TOLERANCE, |r| {
        let x: Tensor = {
            let n = extent(r);
            random_tensor(r, &[n], -5.0, 5.0)
        };
        oracle::max_abs_err(&ops::forward(&Op::Softmax, &[&x])?, &oracle::softmax(&x))
    });
    run!("sigmoid", ORACLE_TOLERANCE, |r| {
        let x: Tensor = random_map(r, -6.0, 6.0);
        let expected: Vec<f64> = x.data().iter().map(|&v| oracle::sigmoid(v as f64)).collect();
        oracle::max_abs_err(&ops::forward(&Op::Sigmoid, &[&x])?, &expected)
    });
    run!("global_avg_pool", REORDER_TOLERANCE, |r| {
        let x: Tensor = random_map(r, -1.0, 1.0);
        oracle::max_abs_err(&ops::forward(&Op::GlobalAvgPool, &[&x])?, &oracle::global_avg_pool(&x))
    });
    run!("channel_mean", REORDER_TOLERANCE, |r| {
        let x: Tensor = random_map(r, -1.0, 1.0);
        oracle::max_abs_err(&ops::forward(&Op::ChannelMean, &[&x])?, &oracle::channel_mean(&x))
    });
    run!("channel_max", REORDER_TOLERANCE, |r| {
        let x: Tensor = random_map(r, -1.0, 1.0);
        oracle::max_abs_err(&ops::forward(&Op::ChannelMax, &[&x])?, &oracle::channel_max(&x))
    });
    run!("maxpool", REORDER_TOLERANCE, |r| {
        let [h, w, c] = map3(r);
        let (k, stride, padding) = window(r, h, w);
        let x: Tensor = random_tensor(r, &[h, w, c], -1.0, 1.0);
        let op = Op::MaxPool {
            kernel: k,
            stride,
            padding,
        };
        oracle::max_abs_err(&ops::forward(&op, &[&x])?, &oracle::maxpool(&x, k, stride, padding))
    });
    run!("upsample2_nearest", REORDER_TOLERANCE, |r| {
        let x: Tensor = random_map(r, -1.0, 1.0);
        oracle::max_abs_err(&ops::forward(&Op::Upsample2, &[&x])?, &oracle::upsample2(&x))
    });
    run!("concat_channels", REORDER_TOLERANCE, |r| {
        let [h, w, ca] = map3(r);
        let cb = extent(r);
        let a: Tensor = random_tensor(r, &[h, w, ca], -1.0, 1.0);
        let b: Tensor = random_tensor(r, &[h, w, cb], -1.0, 1.0);
        oracle::max_abs_err(&ops::forward(&Op::Concat, &[&a, &b])?, &oracle::concat(&a, &b))
    });
    run!("ewise_add", REORDER_TOLERANCE, |r| {
        let s = map3(r);
        let a: Tensor = random_tensor(r, &s, -1.0, 1.0);
        let b: Tensor = random_tensor(r, &s, -1.0, 1.0);
        oracle::max_abs_err(
            &ops::forward(&Op::Add, &[&a, &b])?,
            &oracle::ewise(&a, &b, |x, y| x + y),
        )
    });
    run!("ewise_mul", REORDER_TOLERANCE, |r| {
        let s = map3(r);
        let a: Tensor = random_tensor(r, &s, -1.0, 1.0);
        let b: Tensor = if r.random_bool(0.5) {
            random_tensor(r, &s, -1.0, 1.0)
        } else {
            random_tensor(r, &[s[2]], -1.0, 1.0)
        };
        oracle::max_abs_err(
            &ops::forward(&Op::Mul, &[&a, &b])?,
            &oracle::ewise(&a, &b, |x, y| x * y),
        )
    });
    run!("spatial_gate", REORDER_TOLERANCE, |r| {
        let [h, w, c] = map3(r);
        let a: Tensor = random_tensor(r, &[h, w, c], -1.0, 1.0);
        let s: Tensor = random_tensor(r, &[h, w, 1], 0.0, 1.0);
        oracle::max_abs_err(
            &ops::forward(&Op::SpatialGate, &[&a, &s])?,
            &oracle::spatial_gate(&a, &s),
        )
    });

    Ok(SuiteReport {
        name: "kernel oracles".into(),
        rows,
        elapsed: start.elapsed(),
    })
}

/// Maximum candidate draws per accepted point before a row gives up.
const MAX_DRAWS_PER_POINT: usize = 2_000;

/// Draws candidates until one lies at least [`KINK_MARGIN`] from every kink,
/// then records its gradient error.
fn sample_point<C>(
    b: &mut RowBuilder,
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Result<C>,
    kink: impl Fn(&C) -> f64,
    check: impl FnOnce(&C, &mut ChaCha8Rng) -> Result<f64>,
) -> Result<()> {
    for _ in 0..MAX_DRAWS_PER_POINT {
        let candidate = draw(rng)?;
        if kink(&candidate) < KINK_MARGIN {
            b.row.rejected += 1;
            continue;
        }
        let err = check(&candidate, rng)?;
        b.record(err);
        return Ok(());
    }
    Ok(())
}

fn op_kink(op: &Op<f64>, inputs: &[Tensor<f64>]) -> f64 {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    ops::kink_distance(op, &refs).unwrap_or(f64::INFINITY)
}

fn check_op_point(op: &Op<f64>, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> Result<f64> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = ops::forward(op, &refs)?;
    let upstream = random_tensor(rng, out.shape(), -1.0, 1.0);
    fd::check_op(op, inputs, &upstream)
}

type OpCase = (Op<f64>, Vec<Tensor<f64>>);
type OpCaseGen = fn(&mut ChaCha8Rng) -> OpCase;

fn op_cases() -> Vec<(&'static str, OpCaseGen)> {
    fn small(r: &mut ChaCha8Rng) -> [usize; 3] {
        [r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=4)]
    }
    vec![
        ("conv2d", |r| {
            let [h, w, cin] = small(r);
            let cout = r.random_range(1..=3);
            let (k, stride, padding) = window(r, h, w);
            (
                Op::Conv2d { stride, padding },
                vec![
                    random_tensor(r, &[h, w, cin], -1.0, 1.0),
                    random_tensor(r, &[k, k, cin, cout], -1.0, 1.0),
                    random_tensor(r, &[cout], -1.0, 1.0),
                ],
            )
        }),
        ("bn_relu", |r| {
            let [h, w, c] = small(r);
            (
                Op::BnRelu {
                    running_mean: random_tensor(r, &[c], -0.5, 0.5),
                    running_var: random_tensor(r, &[c], 0.5, 2.0),
                    epsilon: 1e-5,
                },
                vec![
                    random_tensor(r, &[h, w, c], -2.0, 2.0),
                    random_tensor(r, &[c], 0.5, 1.5),
                    random_tensor(r, &[c], -0.5, 0.5),
                ],
            )
        }),
        ("dense", |r| {
            let (n, m) = (r.random_range(1..=8), r.random_range(1..=6));
            let act = [Activation::Relu, Activation::Sigmoid, Activation::None][r.random_range(0..3)];
            (
                Op::Dense { activation: act },
                vec![
                    random_tensor(r, &[n], -1.0, 1.0),
                    random_tensor(r, &[n, m], -1.0, 1.0),
                    random_tensor(r, &[m], -1.0, 1.0),
                ],
            )
        }),
        ("global_avg_pool", |r| {
            (Op::GlobalAvgPool, vec![random_small(r, -1.0, 1.0)])
        }),
        ("ewise_add", |r| {
            let s = small(r);
            (
                Op::Add,
                vec![random_tensor(r, &s, -1.0, 1.0), random_tensor(r, &s, -1.0, 1.0)],
            )
        }),
        ("ewise_mul", |r| {
            let s = small(r);
            let b = if r.random_bool(0.5) {
                random_tensor(r, &s, -1.0, 1.0)
            } else {
                random_tensor(r, &[s[2]], -1.0, 1.0)
            };
            (Op::Mul, vec![random_tensor(r, &s, -1.0, 1.0), b])
        }),
        ("concat_channels", |r| {
            let [h, w, c] = small(r);
            let c2 = r.random_range(1..=4);
            (
                Op::Concat,
                vec![
                    random_tensor(r, &[h, w, c], -1.0, 1.0),
                    random_tensor(r, &[h, w, c2], -1.0, 1.0),
                ],
            )
        }),
        ("upsample2_nearest", |r| {
            (Op::Upsample2, vec![random_small(r, -1.0, 1.0)])
        }),
        ("maxpool", |r| {
            let [h, w, c] = small(r);
            let (kernel, stride, padding) = window(r, h, w);
            (
                Op::MaxPool {
                    kernel,
                    stride,
                    padding,
                },
                vec![random_tensor(r, &[h, w, c], -1.0, 1.0)],
            )
        }),
        ("softmax", |r| {
            (
                Op::Softmax,
                vec![{
                    let n = r.random_range(1..=6);
                    random_tensor(r, &[n], -3.0, 3.0)
                }],
            )
        }),
        ("sigmoid", |r| (Op::Sigmoid, vec![random_small(r, -4.0, 4.0)])),
        ("spatial_gate", |r| {
            let [h, w, c] = small(r);
            (
                Op::SpatialGate,
                vec![
                    random_tensor(r, &[h, w, c], -1.0, 1.0),
                    random_tensor(r, &[h, w, 1], 0.0, 1.0),
                ],
            )
        }),
        ("channel_mean", |r| (Op::ChannelMean, vec![random_small(r, -1.0, 1.0)])),
        ("channel_max", |r| (Op::ChannelMax, vec![random_small(r, -1.0, 1.0)])),
        ("slice_channels", |r| {
            let [h, w, c] = small(r);
            let start = r.random_range(0..c);
            let len = r.random_range(1..=c - start);
            (
                Op::SliceChannels { start, len },
                vec![random_tensor(r, &[h, w, c], -1.0, 1.0)],
            )
        }),
        ("cross_entropy", |r| {
            let n = r.random_range(2..=5);
            let label = r.random_range(0..n);
            (Op::CrossEntropy { label }, vec![random_tensor(r, &[n], -3.0, 3.0)])
        }),
        ("sum_squares", |r| (Op::SumSquares, vec![random_small(r, -1.0, 1.0)])),
    ]
}

/// Every VJP against central finite differences in `f64`, `points` accepted
/// points per operation, followed by the composite model paths.
pub fn gradient_suite(seed: u64, points: usize) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (name, make) in op_cases() {
        let mut b = RowBuilder::new(name, points, GRAD_TOLERANCE);
        for _ in 0..points {
            sample_point(
                &mut b,
                &mut rng,
                |r| Ok(make(r)),
                |(op, inputs)| op_kink(op, inputs),
                |(op, inputs), r| check_op_point(op, inputs, r),
            )?;
        }
        rows.push(b.row);
    }
    rows.extend(super::composite::composite_rows(&mut rng, points)?);
    Ok(SuiteReport {
        name: "gradient checks".into(),
        rows,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_kernel_suite_passes() {
        let report = kernel_oracle_suite(11, 20).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn small_gradient_suite_passes() {
        let report = gradient_suite(12, 5).unwrap();
        assert!(report.passed(), "{report}");
    }
}
