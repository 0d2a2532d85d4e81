//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use driftscope_core::rng::{seeded, Rng, RngExt};
use driftscope_core::density::PixelCnn;
use driftscope_core::{ImagePatch, Result, Tape, Tensor, Var};

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// A differentiable expression over some input tensors.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a small absolute floor so near-zero gradients compare sensibly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Values bounded away from zero, so ReLU kinks are never straddled.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    let t = random(shape, rng);
    t.map(|v| if v >= 0.0 { 0.05 + v } else { v - 0.05 })
}

/// Values with distinct magnitudes spaced well above the finite-difference step.
fn well_separated(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    driftscope_core::rng::shuffle(&mut order, rng);
    let data = order.iter().map(|&k| k as f64 * 0.01 - 0.3).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn loss_of(case: &GradCase, inputs: &[Tensor], weights: &Tensor) -> Result<(Tape, Var, Vec<Var>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod);
    Ok((tape, loss, vars))
}

/// Largest relative error between backward gradients and central differences,
/// with the output contracted against fixed random weights.
pub fn max_gradient_error(case: &GradCase, seed: u64) -> f64 {
    let mut probe = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| probe.leaf(t.clone(), true)).collect();
    let out = (case.build)(&mut probe, &vars).expect("forward");
    let weights = random(probe.value(out).shape(), &mut seeded(seed ^ 0xabcd)).map(|v| v + 1.5);
    let weights = if probe.value(out).rank() == 0 { Tensor::scalar(weights.data()[0]) } else { weights };

    let (tape, loss, vars) = loss_of(case, &case.inputs, &weights).expect("forward");
    let grads = tape.backward(loss).expect("backward");
    let mut worst = 0.0f64;
    for (i, input) in case.inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).expect("gradient present").clone();
        for j in 0..input.numel() {
            let eval = |delta: f64| {
                let mut inputs = case.inputs.clone();
                inputs[i].data_mut()[j] += delta;
                let (t, l, _) = loss_of(case, &inputs, &weights).unwrap();
                t.value(l).data()[0]
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

fn case(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> GradCase {
    GradCase { name: name.to_string(), inputs, build: Box::new(build) }
}

/// One instance of every differentiable primitive with shapes drawn from `seed`.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = seeded(seed);
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let c2 = rng.gen_range(1..=2);
    let h = 2 * rng.gen_range(1..=3);
    let w = 2 * rng.gen_range(1..=3);
    let (m, k, p) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let ks = if rng.gen_bool(0.5) { 1 } else { 3 };
    let pad = if ks == 3 { rng.gen_range(0..=1) } else { 0 };
    let (h, w) = if ks == 3 && pad == 0 { (h.max(4), w.max(4)) } else { (h, w) };
    let co = rng.gen_range(1..=3);
    let x = [n, c, h, w];
    let mask = Tensor::new(
        vec![co, c, ks, ks],
        (0..co * c * ks * ks).map(|_| f64::from(u8::from(rng.gen_bool(0.7)))).collect(),
    )
    .unwrap();
    let classes = rng.gen_range(2..=4);
    let groups = rng.gen_range(1..=2);
    let targets: Vec<u32> = (0..n * groups * h * w).map(|_| rng.gen_range(0..classes as u32)).collect();

    vec![
        case("add", vec![random(&x, &mut rng), random(&x, &mut rng)], |t, v| t.add(v[0], v[1])),
        case("sub", vec![random(&x, &mut rng), random(&x, &mut rng)], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![random(&x, &mut rng), random(&x, &mut rng)], |t, v| t.mul(v[0], v[1])),
        case("scale", vec![random(&x, &mut rng)], |t, v| Ok(t.scale(v[0], -1.7))),
        case("relu", vec![away_from_zero(&x, &mut rng)], |t, v| Ok(t.relu(v[0]))),
        case("tanh", vec![random(&x, &mut rng).map(|v| 2.0 * v)], |t, v| Ok(t.tanh(v[0]))),
        case("matmul", vec![random(&[m, k], &mut rng), random(&[k, p], &mut rng)], |t, v| t.matmul(v[0], v[1])),
        case("add_bias", vec![random(&x, &mut rng), random(&[c], &mut rng)], |t, v| t.add_bias(v[0], v[1])),
        case("conv2d", vec![random(&x, &mut rng), random(&[co, c, ks, ks], &mut rng)], move |t, v| {
            t.conv2d(v[0], v[1], None, pad)
        }),
        case("conv2d_masked", vec![random(&x, &mut rng), random(&[co, c, ks, ks], &mut rng)], move |t, v| {
            t.conv2d(v[0], v[1], Some(&mask), pad)
        }),
        case("max_pool2", vec![well_separated(&x, &mut rng)], |t, v| t.max_pool2(v[0])),
        case("upsample2", vec![random(&x, &mut rng)], |t, v| t.upsample2(v[0])),
        case("concat_channels", vec![random(&x, &mut rng), random(&[n, c2, h, w], &mut rng)], |t, v| {
            t.concat_channels(v[0], v[1])
        }),
        case("sum", vec![random(&x, &mut rng)], |t, v| Ok(t.sum(v[0]))),
        case("mean", vec![random(&x, &mut rng)], |t, v| Ok(t.mean(v[0]))),
        case("cross_entropy", vec![random(&[n, groups * classes, h, w], &mut rng).map(|v| 3.0 * v)], move |t, v| {
            t.cross_entropy(v[0], &targets, classes)
        }),
    ]
}

/// A three-layer tanh network `tanh(tanh(tanh(x W1) W2) W3)` with random sizes.
pub fn tanh_network_case(seed: u64) -> GradCase {
    let mut rng = seeded(seed);
    let dims: Vec<usize> = (0..4).map(|_| rng.gen_range(2..=5)).collect();
    let batch = rng.gen_range(1..=3);
    let inputs = vec![
        random(&[batch, dims[0]], &mut rng),
        random(&[dims[0], dims[1]], &mut rng),
        random(&[dims[1], dims[2]], &mut rng),
        random(&[dims[2], dims[3]], &mut rng),
    ];
    case("tanh_network", inputs, |t, v| {
        let mut h = v[0];
        for &wv in &v[1..] {
            let z = t.matmul(h, wv)?;
            h = t.tanh(z);
        }
        Ok(h)
    })
}

/// Direct nested-loop cross-correlation with zero padding.
pub fn conv_reference(input: &Tensor, kernel: &Tensor, mask: Option<&Tensor>, pad: usize) -> Tensor {
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (o, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for f in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let (iy, ix) = (y + dy, x + dx);
                                if iy < pad || ix < pad || iy - pad >= h || ix - pad >= w {
                                    continue;
                                }
                                let kidx = ((f * c + ch) * kh + dy) * kw + dx;
                                let m = mask.map_or(1.0, |m| m.data()[kidx]);
                                acc += kernel.data()[kidx] * m * input.data()[((b * c + ch) * h + iy - pad) * w + ix - pad];
                            }
                        }
                    }
                    out[((b * o + f) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

/// Minimum number of cells in the quantile grid.
pub const GRID_POINTS: u64 = 1_000_000;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// W1 by integrating |F_u^-1(t) - F_v^-1(t)| over t in (0,1) on a midpoint
/// grid whose cells refine both quantile step functions, so the rule is exact
/// up to summation error.
pub fn w1_quantile_oracle(u: &[f64], v: &[f64]) -> f64 {
    let mut su = u.to_vec();
    let mut sv = v.to_vec();
    su.sort_by(f64::total_cmp);
    sv.sort_by(f64::total_cmp);
    let (n, m) = (su.len() as u64, sv.len() as u64);
    let lcm = n / gcd(n, m) * m;
    let cells = lcm * GRID_POINTS.div_ceil(lcm);
    // cell k has midpoint (2k+1)/(2 cells); its quantile index is floor(midpoint * len)
    let (mut iu, mut iv) = (0usize, 0usize);
    let (mut nu, mut nv) = (n, m);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for _ in 0..cells {
        while nu >= (iu as u64 + 1) * 2 * cells {
            iu += 1;
        }
        while nv >= (iv as u64 + 1) * 2 * cells {
            iv += 1;
        }
        let term = (su[iu] - sv[iv]).abs();
        let t = sum + term;
        comp += if sum.abs() >= term { (sum - t) + term } else { (term - t) + sum };
        sum = t;
        nu += 2 * n;
        nv += 2 * m;
    }
    (sum + comp) / cells as f64
}

/// A sample of `len` values from one of several shapes, including heavy ties.
pub fn mixed_sample(len: usize, rng: &mut Rng) -> Vec<f64> {
    let family = rng.gen_range(0..4);
    let shift = rng.gen_range(-5.0..5.0);
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            shift
                + match family {
                    0 => u,
                    1 => (u * 6.0).floor(),
                    2 => -(1.0 - u).ln() * 2.0,
                    _ => (std::f64::consts::PI * (u - 0.5)).tan().clamp(-50.0, 50.0),
                }
        })
        .collect()
}

/// Outcome of perturbing one sub-pixel and comparing all conditionals.
#[derive(Debug, Default)]
pub struct CausalityProbe {
    pub pairs: usize,
    /// Earlier-or-equal conditionals whose logits changed at all.
    pub violations: Vec<(usize, usize)>,
    /// Later conditionals that did change (shows the probe is not vacuous).
    pub later_changed: usize,
}

/// Perturbs a random sub-pixel `j` of random `h x w` patches `pairs` times and
/// checks that the conditionals of sub-pixels `i <= j` stay bit-identical.
pub fn probe_causality(model: &PixelCnn, h: usize, w: usize, pairs: usize, seed: u64) -> CausalityProbe {
    let cfg = model.config();
    let (channels, levels) = (cfg.channels, cfg.levels);
    let q = levels as usize;
    let mut rng = seeded(seed);
    let dims = h * w * channels;
    let mut probe = CausalityProbe { pairs, ..Default::default() };
    for _ in 0..pairs {
        let data = (0..dims).map(|_| rng.gen_range(0..levels) as u8).collect();
        let patch = ImagePatch::new(h, w, channels, levels, data).unwrap();
        let j = rng.gen_range(0..dims);
        let (cj, yj, xj) = patch.raster_position(j);
        let old = patch.get(cj, yj, xj);
        let new = ((u16::from(old) + 1 + rng.gen_range(0..levels - 1)) % levels) as u8;
        let perturbed = patch.with_value(cj, yj, xj, new);
        let a = model.logits(&[patch]).unwrap();
        let b = model.logits(&[perturbed]).unwrap();
        for i in 0..dims {
            let pixel = i / channels;
            let (c, y, x) = (i % channels, pixel / w, pixel % w);
            let at = |t: &Tensor, k: usize| t.data()[(c * q + k) * h * w + y * w + x];
            let same = (0..q).all(|k| at(&a, k).to_bits() == at(&b, k).to_bits());
            if i <= j && !same {
                probe.violations.push((i, j));
            } else if i > j && !same {
                probe.later_changed += 1;
            }
        }
    }
    probe
}

/// Sum of `p(x)` over all `2^16` binary 4x4 patches.
pub fn binary_probability_mass(model: &PixelCnn) -> f64 {
    let all: Vec<ImagePatch> = (0..1u32 << 16)
        .map(|bits| ImagePatch::gray(4, 4, 2, (0..16).map(|k| ((bits >> k) & 1) as u8).collect()).unwrap())
        .collect();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for s in model.log_likelihoods(&all).unwrap() {
        let term = s.log_likelihood.exp();
        let t = sum + term;
        comp += if sum.abs() >= term { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Binary 4x4 training patches: a per-patch base bit with 20% flips.
pub fn binary_training_set(count: usize, seed: u64) -> Vec<ImagePatch> {
    let mut rng = seeded(seed);
    (0..count)
        .map(|_| {
            let base = rng.gen_range(0..2u8);
            let data = (0..16).map(|_| if rng.gen_bool(0.8) { base } else { 1 - base }).collect();
            ImagePatch::gray(4, 4, 2, data).unwrap()
        })
        .collect()
}
